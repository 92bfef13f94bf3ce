//! Canonical minimal action sequences that complete each scenario.

use webstack_core::action::{Action, ElementId};

use crate::evaluate::subgoals;
use crate::scenario::{form_date, FlightDetails, Passenger, Payment, Scenario, ScenarioKind};
use crate::simulator::{ids, target_row, Leg};

fn click(id: ElementId) -> Action {
    Action::Click { id }
}

/// Typing without pressing Enter; submission is always an explicit click.
fn fill(id: ElementId, text: &str) -> Action {
    Action::Type {
        id,
        text: text.to_string(),
        press_enter: false,
    }
}

/// The gold actions grouped by the subgoal they complete, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldSegment {
    pub subgoal: &'static str,
    pub actions: Vec<Action>,
}

pub fn search_actions(f: &FlightDetails) -> Vec<Action> {
    vec![
        fill(ids::FLIGHT_FROM, &f.from),
        fill(ids::FLIGHT_TO, &f.to),
        fill(ids::DEPARTURE_DATE, &form_date(&f.departure)),
        fill(ids::RETURN_DATE, &form_date(&f.return_date)),
        click(ids::SEARCH),
    ]
}

pub fn select_actions(scenario_id: &str) -> Vec<Action> {
    vec![
        click(ids::OUTWARD_FIRST + target_row(scenario_id, Leg::Outward) as ElementId),
        click(ids::RETURN_FIRST + target_row(scenario_id, Leg::Return) as ElementId),
        click(ids::CONFIRM_FLIGHTS),
    ]
}

pub fn passenger_fields(p: &Passenger) -> [(ElementId, String); 5] {
    [
        (ids::TITLE, p.title.clone()),
        (ids::FIRST_NAME, p.first_name.clone()),
        (ids::LAST_NAME, p.last_name.clone()),
        (ids::GENDER, p.gender.clone()),
        (ids::DATE_OF_BIRTH, form_date(&p.date_of_birth)),
    ]
}

pub fn payment_fields(p: &Payment) -> [(ElementId, String); 3] {
    [
        (ids::CARD_NUMBER, p.card_number.clone()),
        (ids::EXPIRY, p.expiry.clone()),
        (ids::CVC, p.cvc.clone()),
    ]
}

fn find_booking_actions(reference: &str) -> Vec<Action> {
    vec![fill(ids::BOOKING_REFERENCE, reference), click(ids::FIND_SEARCH)]
}

pub fn gold_segments(scenario: &Scenario) -> Vec<GoldSegment> {
    let d = &scenario.details;
    let reference = d.booking.as_ref().map(|b| b.reference.clone()).unwrap_or_default();
    let parts: Vec<Vec<Action>> = match scenario.kind {
        ScenarioKind::FindFlight => vec![search_actions(d.flight.as_ref().unwrap())],
        ScenarioKind::BookFlight => {
            let mut passenger: Vec<Action> = passenger_fields(d.passenger.as_ref().unwrap())
                .iter()
                .map(|(id, v)| fill(*id, v))
                .collect();
            passenger.push(click(ids::SAVE_PASSENGER));
            let mut payment: Vec<Action> = payment_fields(d.payment.as_ref().unwrap())
                .iter()
                .map(|(id, v)| fill(*id, v))
                .collect();
            payment.push(click(ids::BOOK));
            vec![
                search_actions(d.flight.as_ref().unwrap()),
                select_actions(&scenario.id),
                passenger,
                payment,
            ]
        }
        ScenarioKind::FindBooking => vec![find_booking_actions(&reference)],
        ScenarioKind::CancelBooking => vec![
            find_booking_actions(&reference),
            vec![click(ids::CANCEL)],
            vec![fill(ids::CONFIRM_REFERENCE, &reference), click(ids::CONFIRM_CANCEL)],
        ],
        ScenarioKind::ModifyPassenger => {
            let old = passenger_fields(&d.booking.as_ref().unwrap().passenger);
            let new = passenger_fields(d.passenger.as_ref().unwrap());
            let mut save: Vec<Action> = old
                .iter()
                .zip(new.iter())
                .filter(|(o, n)| o.1 != n.1)
                .map(|(_, (id, v))| fill(*id, v))
                .collect();
            save.push(click(ids::SAVE_PASSENGER));
            vec![find_booking_actions(&reference), vec![click(ids::MODIFY_PASSENGER)], save]
        }
        ScenarioKind::ModifyFlights => vec![
            find_booking_actions(&reference),
            vec![click(ids::MODIFY_FLIGHTS)],
            search_actions(d.flight.as_ref().unwrap()),
            select_actions(&scenario.id),
        ],
    };
    subgoals(scenario.kind)
        .iter()
        .zip(parts)
        .map(|(subgoal, actions)| GoldSegment { subgoal, actions })
        .collect()
}

/// The full gold action sequence.
pub fn gold_trace(scenario: &Scenario) -> Vec<Action> {
    gold_segments(scenario).into_iter().flat_map(|s| s.actions).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::generate_scenario;
    use crate::simulator::Session;

    #[test]
    fn lengths() {
        let len = |k| gold_trace(&generate_scenario(k, 9)).len();
        assert_eq!(len(ScenarioKind::FindFlight), 5);
        assert_eq!(len(ScenarioKind::BookFlight), 18);
        assert_eq!(len(ScenarioKind::FindBooking), 2);
        assert_eq!(len(ScenarioKind::CancelBooking), 5);
        assert_eq!(len(ScenarioKind::ModifyFlights), 11);
        let mp = gold_trace(&generate_scenario(ScenarioKind::ModifyPassenger, 9)).len();
        assert!((5..=7).contains(&mp));
    }

    #[test]
    fn find_flight_shape() {
        let sc = generate_scenario(ScenarioKind::FindFlight, 2);
        let f = sc.details.flight.clone().unwrap();
        let trace = gold_trace(&sc);
        assert_eq!(trace[0], fill(ids::FLIGHT_FROM, &f.from));
        assert_eq!(trace[4], click(ids::SEARCH));
    }

    #[test]
    fn segments_line_up_with_subgoals() {
        for kind in ScenarioKind::ALL {
            let sc = generate_scenario(kind, 21);
            let mut s = Session::new(sc.clone());
            for (i, seg) in gold_segments(&sc).iter().enumerate() {
                for a in &seg.actions {
                    s.apply(a).unwrap();
                }
                let r = crate::evaluate::evaluate_session(&s);
                assert_eq!(r.subgoals_hit.len(), i + 1, "{kind} after {}", seg.subgoal);
            }
        }
    }
}
