//! Aggregate metrics over many episodes.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::episode::{EpisodeMetrics, TraceRecord};

/// Means over a group of episodes. Every field is independent of the order
/// the episodes are given in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub episodes: usize,
    pub suc: f64,
    pub prog: f64,
    pub num_actions: f64,
    pub prompt_tokens: f64,
    pub completion_tokens: f64,
    pub failures: usize,
}

impl MetricsRow {
    pub fn from_metrics<'a>(items: impl IntoIterator<Item = &'a EpisodeMetrics>) -> Self {
        let mut n = 0usize;
        let (mut suc, mut acts, mut prompt, mut completion, mut failures) = (0u64, 0u64, 0u64, 0u64, 0usize);
        let mut progs = Vec::new();
        for m in items {
            n += 1;
            suc += u64::from(m.suc);
            acts += m.num_actions as u64;
            prompt += m.prompt_tokens_total;
            completion += m.completion_tokens_total;
            failures += usize::from(m.failure.is_some());
            progs.push(m.prog);
        }
        // Floating-point sums depend on order; sort first.
        progs.sort_by(f64::total_cmp);
        let mean = |total: f64| if n == 0 { 0.0 } else { total / n as f64 };
        MetricsRow {
            episodes: n,
            suc: mean(suc as f64),
            prog: mean(progs.iter().sum()),
            num_actions: mean(acts as f64),
            prompt_tokens: mean(prompt as f64),
            completion_tokens: mean(completion as f64),
            failures,
        }
    }
}

/// One row per task kind plus the overall row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub by_kind: BTreeMap<String, MetricsRow>,
    pub overall: MetricsRow,
}

impl MetricsTable {
    pub fn from_episodes<'a>(items: impl IntoIterator<Item = (&'a str, &'a EpisodeMetrics)>) -> Self {
        let items: Vec<(&str, &EpisodeMetrics)> = items.into_iter().collect();
        let mut groups: BTreeMap<String, Vec<&EpisodeMetrics>> = BTreeMap::new();
        for (kind, m) in &items {
            groups.entry(kind.to_string()).or_default().push(m);
        }
        MetricsTable {
            by_kind: groups
                .into_iter()
                .map(|(k, ms)| (k, MetricsRow::from_metrics(ms)))
                .collect(),
            overall: MetricsRow::from_metrics(items.iter().map(|(_, m)| *m)),
        }
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from(
            "| task | episodes | suc | prog | #act | prompt tokens | completion tokens | failures |\n\
             |---|---:|---:|---:|---:|---:|---:|---:|\n",
        );
        let mut row = |name: &str, r: &MetricsRow| {
            let _ = writeln!(
                out,
                "| {name} | {} | {:.3} | {:.3} | {:.2} | {:.1} | {:.1} | {} |",
                r.episodes, r.suc, r.prog, r.num_actions, r.prompt_tokens, r.completion_tokens, r.failures
            );
        };
        for (k, r) in &self.by_kind {
            row(k, r);
        }
        row("all", &self.overall);
        out
    }
}

/// Counts of per-call prompt sizes in buckets of `width` estimated tokens,
/// keyed by bucket start.
pub fn prompt_histogram<'a>(traces: impl IntoIterator<Item = &'a [TraceRecord]>, width: usize) -> BTreeMap<usize, usize> {
    let width = width.max(1);
    let mut hist = BTreeMap::new();
    for trace in traces {
        for record in trace {
            if let TraceRecord::ModelCall {
                prompt_tokens_estimate, ..
            } = record
            {
                if *prompt_tokens_estimate > 0 {
                    *hist.entry(prompt_tokens_estimate / width * width).or_insert(0) += 1;
                }
            }
        }
    }
    hist
}

pub fn histogram_tsv(hist: &BTreeMap<usize, usize>, width: usize) -> String {
    let mut out = String::from("bucket_start\tbucket_end\tcalls\n");
    for (start, count) in hist {
        let _ = writeln!(out, "{start}\t{}\t{count}", start + width);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use webstack_core::stack::FailureKind;

    fn m(suc: u8, prog: f64, acts: usize, failure: Option<FailureKind>) -> EpisodeMetrics {
        EpisodeMetrics {
            suc,
            prog,
            num_actions: acts,
            prompt_tokens_total: 100 * acts as u64,
            completion_tokens_total: 10,
            failure,
        }
    }

    #[test]
    fn means_per_kind_and_overall() {
        let a = m(1, 1.0, 4, None);
        let b = m(0, 0.5, 2, Some(FailureKind::DepthExceeded));
        let c = m(0, 0.0, 0, None);
        let t = MetricsTable::from_episodes([("A", &a), ("A", &b), ("B", &c)]);
        assert_eq!(t.by_kind["A"].suc, 0.5);
        assert_eq!(t.by_kind["A"].prog, 0.75);
        assert_eq!(t.by_kind["A"].num_actions, 3.0);
        assert_eq!(t.by_kind["A"].failures, 1);
        assert_eq!(t.overall.episodes, 3);
        assert_eq!(t.overall.prog, 0.5);
        assert_eq!(t.overall.prompt_tokens, 200.0);
        assert!(t.to_markdown().contains("| all | 3 | 0.333 | 0.500 |"));
    }

    #[test]
    fn empty_group_is_zero() {
        let r = MetricsRow::from_metrics([]);
        assert_eq!((r.episodes, r.suc, r.prog), (0, 0.0, 0.0));
    }

    proptest! {
        #[test]
        fn order_does_not_matter(
            items in proptest::collection::vec((0u8..2, 0.0f64..=1.0, 0usize..40), 1..40),
            rotate in 0usize..40,
        ) {
            let ms: Vec<EpisodeMetrics> = items.iter().map(|(s, p, a)| m(*s, *p, *a, None)).collect();
            let mut shuffled = ms.clone();
            shuffled.reverse();
            let k = rotate % shuffled.len();
            shuffled.rotate_left(k);
            prop_assert_eq!(MetricsRow::from_metrics(&ms), MetricsRow::from_metrics(&shuffled));
        }
    }
}
