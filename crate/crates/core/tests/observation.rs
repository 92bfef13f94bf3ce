use proptest::prelude::*;
use webstack_core::observation::{
    estimate_tokens, parse_elements, serialize_elements, truncate_to_budget, Observation, WebElement,
    TRUNCATION_MARKER,
};

fn element(id: u64) -> impl Strategy<Value = WebElement> {
    (
        "[a-z][a-z_]{0,7}",
        prop::collection::vec(("[a-z][a-z-]{0,6}", "\\PC{0,12}|[\"\\\\\n\r<>/= ]{0,6}"), 0..4),
        prop_oneof!["", "\\PC{1,20}", "[\n\r\\\\<>/\"]{1,6}"],
    )
        .prop_map(move |(tag, attrs, text)| {
            let mut el = WebElement::new(id, tag).text(text);
            for (k, v) in attrs {
                el = el.attr(k, v);
            }
            el
        })
}

fn observation() -> impl Strategy<Value = Observation> {
    prop::collection::vec(any::<u64>(), 0..12).prop_flat_map(|mut ids| {
        ids.sort_unstable();
        ids.dedup();
        let elements: Vec<_> = ids.into_iter().map(element).collect();
        elements.prop_map(|els| Observation::new("http://example.test/", els))
    })
}

/// Brute force: try every whole-line prefix, longest first.
fn truncate_oracle(text: &str, budget: usize) -> String {
    if text.chars().count().div_ceil(4) <= budget {
        return text.to_string();
    }
    let lines: Vec<&str> = text.split('\n').collect();
    for keep in (1..lines.len()).rev() {
        let candidate = format!("{}\n{TRUNCATION_MARKER}", lines[..keep].join("\n"));
        if candidate.chars().count().div_ceil(4) <= budget {
            return candidate;
        }
    }
    if TRUNCATION_MARKER.len().div_ceil(4) <= budget {
        TRUNCATION_MARKER.to_string()
    } else {
        String::new()
    }
}

#[test]
fn reference_forms() {
    let obs = Observation::new(
        "u",
        vec![
            WebElement::new(18, "button").attr("title", "Travelers").text("1 Adult"),
            WebElement::new(7, "input_text").attr("val", "flight-from"),
        ],
    );
    assert_eq!(
        serialize_elements(&obs),
        "<button id=18 title=\"Travelers\">1 Adult</button>\n<input_text id=7 val=flight-from />"
    );
    assert_eq!(serialize_elements(&Observation::default()), "");
}

#[test]
fn token_estimates() {
    assert_eq!(estimate_tokens(""), 0);
    assert_eq!(estimate_tokens("click [7]"), 3);
    assert_eq!(estimate_tokens(&"x".repeat(4000)), 1000);
}

#[test]
fn ten_lines_at_budget_55() {
    let text = vec!["y".repeat(40); 10].join("\n");
    let out = truncate_to_budget(&text, 55);
    let expected = format!("{}\n{TRUNCATION_MARKER}", vec!["y".repeat(40); 5].join("\n"));
    assert_eq!(out, expected);
    assert_eq!(out, truncate_oracle(&text, 55));
    assert_eq!(truncate_to_budget(&text, 0), "");
    assert_eq!(truncate_to_budget(&text, 1000), text);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// Parsing recovers the elements, so distinct pages serialize differently.
    #[test]
    fn serialization_is_injective(obs in observation()) {
        let text = serialize_elements(&obs);
        prop_assert_eq!(text.lines().count(), obs.elements.len());
        prop_assert_eq!(parse_elements(&text).unwrap(), obs.elements);
    }

    #[test]
    fn distinct_pages_distinct_text(a in observation(), b in observation()) {
        prop_assume!(a.elements != b.elements);
        prop_assert_ne!(serialize_elements(&a), serialize_elements(&b));
    }

    #[test]
    fn truncation_respects_budget(lines in prop::collection::vec("[ -~]{0,60}", 0..30), budget in 0usize..400) {
        let text = lines.join("\n");
        let out = truncate_to_budget(&text, budget);
        prop_assert!(estimate_tokens(&out) <= budget);
        prop_assert_eq!(truncate_to_budget(&out, budget), out.clone());
        prop_assert_eq!(out, truncate_oracle(&text, budget));
    }

    #[test]
    fn estimate_is_monotone(a in "\\PC{0,50}", b in "\\PC{0,50}") {
        let joined = a.clone() + &b;
        prop_assert!(estimate_tokens(&a) <= estimate_tokens(&joined));
    }
}
