//! Task progress and success of a session.

use webstack_core::env::EvalResult;

use crate::scenario::{same_date, FlightDetails, Passenger, Payment, Scenario, ScenarioKind};
use crate::simulator::{Milestone, Session};

/// Ordered subgoals of a task kind.
pub fn subgoals(kind: ScenarioKind) -> &'static [&'static str] {
    match kind {
        ScenarioKind::FindFlight => &["find_flight"],
        ScenarioKind::BookFlight => &["find_flight", "select_flights", "enter_passenger", "enter_payment"],
        ScenarioKind::FindBooking => &["find_booking"],
        ScenarioKind::CancelBooking => &["find_booking", "click_cancel", "confirm_cancel"],
        ScenarioKind::ModifyPassenger => &["find_booking", "click_modify", "save_passenger"],
        ScenarioKind::ModifyFlights => &["find_booking", "click_modify", "find_flight", "save_flights"],
    }
}

fn eq_text(a: &str, b: &str) -> bool {
    a.trim().eq_ignore_ascii_case(b.trim())
}

fn search_matches(from: &str, to: &str, dep: &str, ret: &str, f: &FlightDetails) -> bool {
    eq_text(from, &f.from) && eq_text(to, &f.to) && same_date(dep, &f.departure) && same_date(ret, &f.return_date)
}

pub fn flight_matches(got: &FlightDetails, want: &FlightDetails) -> bool {
    search_matches(&got.from, &got.to, &got.departure, &got.return_date, want)
        && eq_text(&got.outward_departure_time, &want.outward_departure_time)
        && eq_text(&got.outward_arrival_time, &want.outward_arrival_time)
        && eq_text(&got.return_departure_time, &want.return_departure_time)
        && eq_text(&got.return_arrival_time, &want.return_arrival_time)
}

pub fn passenger_matches(got: &Passenger, want: &Passenger) -> bool {
    eq_text(&got.title, &want.title)
        && eq_text(&got.first_name, &want.first_name)
        && eq_text(&got.last_name, &want.last_name)
        && eq_text(&got.gender, &want.gender)
        && same_date(&got.date_of_birth, &want.date_of_birth)
}

pub fn payment_matches(got: &Payment, want: &Payment) -> bool {
    let digits = |s: &str| s.chars().filter(char::is_ascii_digit).collect::<String>();
    digits(&got.card_number) == digits(&want.card_number)
        && eq_text(&got.expiry, &want.expiry)
        && eq_text(&got.cvc, &want.cvc)
}

/// Whether `m` accomplishes subgoal `name` of the scenario.
fn satisfies(scenario: &Scenario, name: &str, m: &Milestone) -> bool {
    let d = &scenario.details;
    let target = d.booking.as_ref().map(|b| b.reference.as_str());
    let is_target = |r: &str| Some(r) == target;
    match (name, m) {
        (
            "find_flight",
            Milestone::SearchSubmitted {
                from,
                to,
                departure,
                return_date,
            },
        ) => d
            .flight
            .as_ref()
            .is_some_and(|f| search_matches(from, to, departure, return_date, f)),
        ("select_flights", Milestone::FlightsChosen { flight, reference: None }) => {
            d.flight.as_ref().is_some_and(|f| flight_matches(flight, f))
        }
        ("enter_passenger", Milestone::PassengerEntered { passenger, reference: None }) => d
            .passenger
            .as_ref()
            .is_some_and(|p| passenger_matches(passenger, p)),
        ("enter_payment", Milestone::BookingCreated { payment, .. }) => {
            d.payment.as_ref().is_some_and(|p| payment_matches(payment, p))
        }
        ("find_booking", Milestone::BookingFound { reference }) => is_target(reference),
        ("click_cancel", Milestone::CancelRequested { reference }) => is_target(reference),
        ("confirm_cancel", Milestone::BookingCancelled { reference }) => is_target(reference),
        ("click_modify", Milestone::ModifyPassengerRequested { reference }) => {
            scenario.kind == ScenarioKind::ModifyPassenger && is_target(reference)
        }
        ("click_modify", Milestone::ModifyFlightsRequested { reference }) => {
            scenario.kind == ScenarioKind::ModifyFlights && is_target(reference)
        }
        (
            "save_passenger",
            Milestone::PassengerEntered {
                passenger,
                reference: Some(r),
            },
        ) => is_target(r) && d.passenger.as_ref().is_some_and(|p| passenger_matches(passenger, p)),
        (
            "save_flights",
            Milestone::FlightsChosen {
                flight,
                reference: Some(r),
            },
        ) => is_target(r) && d.flight.as_ref().is_some_and(|f| flight_matches(flight, f)),
        _ => false,
    }
}

/// Subgoals reached in order: each milestone can advance the match by one.
pub fn reached_subgoals(scenario: &Scenario, milestones: &[Milestone]) -> Vec<&'static str> {
    let goals = subgoals(scenario.kind);
    let mut hit = Vec::new();
    for m in milestones {
        if let Some(next) = goals.get(hit.len()) {
            if satisfies(scenario, next, m) {
                hit.push(*next);
            }
        }
    }
    hit
}

/// Whether the final bookings store (or last search) holds what the task asked for.
fn final_state_matches(session: &Session) -> bool {
    let scenario = session.scenario();
    let d = &scenario.details;
    let target = d.booking.as_ref().map(|b| b.reference.clone()).unwrap_or_default();
    let store = session.store();
    match scenario.kind {
        ScenarioKind::FindFlight => session
            .milestones()
            .iter()
            .rev()
            .find_map(|m| match m {
                Milestone::SearchSubmitted {
                    from,
                    to,
                    departure,
                    return_date,
                } => Some(search_matches(from, to, departure, return_date, d.flight.as_ref().unwrap())),
                _ => None,
            })
            .unwrap_or(false),
        ScenarioKind::BookFlight => session.milestones().iter().rev().find_map(|m| match m {
            Milestone::BookingCreated { reference, payment } => Some((reference, payment)),
            _ => None,
        })
        .is_some_and(|(reference, payment)| {
            store.get(reference).is_some_and(|b| {
                flight_matches(&b.flight, d.flight.as_ref().unwrap())
                    && passenger_matches(&b.passenger, d.passenger.as_ref().unwrap())
            }) && payment_matches(payment, d.payment.as_ref().unwrap())
        }),
        ScenarioKind::FindBooking => session.viewed() == Some(target.as_str()),
        ScenarioKind::CancelBooking => !store.contains_key(&target),
        ScenarioKind::ModifyPassenger => store
            .get(&target)
            .is_some_and(|b| passenger_matches(&b.passenger, d.passenger.as_ref().unwrap())),
        ScenarioKind::ModifyFlights => store
            .get(&target)
            .is_some_and(|b| flight_matches(&b.flight, d.flight.as_ref().unwrap())),
    }
}

/// Progress is the share of subgoals reached in order, each counting
/// equally. Success needs every subgoal and a matching final state.
pub fn evaluate_session(session: &Session) -> EvalResult {
    let scenario = session.scenario();
    let hit = reached_subgoals(scenario, session.milestones());
    let total = subgoals(scenario.kind).len();
    let complete = hit.len() == total;
    EvalResult {
        success: u8::from(complete && final_state_matches(session)),
        task_progress: hit.len() as f64 / total as f64,
        subgoals_hit: hit.into_iter().map(String::from).collect(),
    }
}
