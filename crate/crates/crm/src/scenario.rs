//! Randomized task instances for the airline CRM.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_BASE_URL: &str = "http://localhost:8080";

pub const AIRPORTS: [&str; 12] = [
    "JFK", "FLL", "BOS", "LAX", "SFO", "ORD", "SEA", "ATL", "DFW", "DEN", "MIA", "PHX",
];

const TITLES: [&str; 4] = ["Mr", "Ms", "Mrs", "Dr"];
const GENDERS: [&str; 2] = ["male", "female"];
const FIRST_NAMES: [&str; 16] = [
    "James", "Mary", "Robert", "Patricia", "John", "Jennifer", "Michael", "Linda", "David",
    "Elizabeth", "William", "Barbara", "Richard", "Susan", "Joseph", "Jessica",
];
const LAST_NAMES: [&str; 16] = [
    "Smith", "Johnson", "Williams", "Brown", "Jones", "Garcia", "Miller", "Davis", "Rodriguez",
    "Martinez", "Hernandez", "Lopez", "Gonzalez", "Wilson", "Anderson", "Thomas",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioKind {
    #[serde(rename = "TASK_FIND_FLIGHT")]
    FindFlight,
    #[serde(rename = "TASK_BOOK_FLIGHT")]
    BookFlight,
    #[serde(rename = "TASK_FIND_BOOKING")]
    FindBooking,
    #[serde(rename = "TASK_CANCEL_BOOKING")]
    CancelBooking,
    #[serde(rename = "TASK_MODIFY_PASSENGER")]
    ModifyPassenger,
    #[serde(rename = "TASK_MODIFY_FLIGHTS")]
    ModifyFlights,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::FindFlight,
        ScenarioKind::BookFlight,
        ScenarioKind::FindBooking,
        ScenarioKind::CancelBooking,
        ScenarioKind::ModifyPassenger,
        ScenarioKind::ModifyFlights,
    ];

    /// Short upper-case name, e.g. `FIND_FLIGHT`.
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::FindFlight => "FIND_FLIGHT",
            ScenarioKind::BookFlight => "BOOK_FLIGHT",
            ScenarioKind::FindBooking => "FIND_BOOKING",
            ScenarioKind::CancelBooking => "CANCEL_BOOKING",
            ScenarioKind::ModifyPassenger => "MODIFY_PASSENGER",
            ScenarioKind::ModifyFlights => "MODIFY_FLIGHTS",
        }
    }

    /// Whether the task starts on the flight search screen.
    pub fn starts_with_search(self) -> bool {
        matches!(self, ScenarioKind::FindFlight | ScenarioKind::BookFlight)
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown scenario kind `{0}`")]
pub struct UnknownKind(pub String);

impl FromStr for ScenarioKind {
    type Err = UnknownKind;

    /// Accepts `FIND_FLIGHT`, `TASK_FIND_FLIGHT`, `find_flight` or
    /// `find-flight`, and `CANCEL` for `CANCEL_BOOKING`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        let norm = norm.strip_prefix("TASK_").unwrap_or(&norm);
        let norm = if norm == "CANCEL" { "CANCEL_BOOKING" } else { norm };
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FlightDetails {
    pub from: String,
    pub to: String,
    /// `YYYY-MM-DD`.
    pub departure: String,
    /// `YYYY-MM-DD`.
    #[serde(rename = "return")]
    pub return_date: String,
    pub outward_departure_time: String,
    pub outward_arrival_time: String,
    pub return_departure_time: String,
    pub return_arrival_time: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Passenger {
    pub title: String,
    pub first_name: String,
    pub last_name: String,
    pub gender: String,
    /// `YYYY-MM-DD`.
    pub date_of_birth: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Payment {
    pub card_number: String,
    /// `MM/YY`.
    pub expiry: String,
    pub cvc: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Booking {
    pub reference: String,
    pub passenger: Passenger,
    pub flight: FlightDetails,
}

/// Task data. Which records are present depends on the kind:
/// flight searches carry `flight`; a new booking adds `passenger` and
/// `payment`; tasks on an existing booking carry `booking`, plus the new
/// `passenger` or `flight` when it is to be modified.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Details {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flight: Option<FlightDetails>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passenger: Option<Passenger>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payment: Option<Payment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub booking: Option<Booking>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(rename = "scenario")]
    pub kind: ScenarioKind,
    pub id: String,
    pub url: String,
    pub details: Details,
}

impl Scenario {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Checks that the records required by the kind are present.
    pub fn validate(&self) -> Result<(), String> {
        let d = &self.details;
        let missing = |what: &str| Err(format!("{} scenario needs `{what}`", self.kind));
        match self.kind {
            ScenarioKind::FindFlight if d.flight.is_none() => missing("flight"),
            ScenarioKind::BookFlight if d.flight.is_none() => missing("flight"),
            ScenarioKind::BookFlight if d.passenger.is_none() => missing("passenger"),
            ScenarioKind::BookFlight if d.payment.is_none() => missing("payment"),
            ScenarioKind::FindBooking
            | ScenarioKind::CancelBooking
            | ScenarioKind::ModifyPassenger
            | ScenarioKind::ModifyFlights
                if d.booking.is_none() =>
            {
                missing("booking")
            }
            ScenarioKind::ModifyPassenger if d.passenger.is_none() => missing("passenger"),
            ScenarioKind::ModifyFlights if d.flight.is_none() => missing("flight"),
            _ => Ok(()),
        }
    }

    pub fn flight(&self) -> Option<&FlightDetails> {
        self.details.flight.as_ref()
    }

    pub fn booking(&self) -> Option<&Booking> {
        self.details.booking.as_ref()
    }
}

/// The task description given to the agent.
pub fn objective(scenario: &Scenario) -> String {
    let d = &scenario.details;
    let route = |f: &FlightDetails| {
        format!(
            "from {} to {} departing {} and returning {}",
            f.from,
            f.to,
            form_date(&f.departure),
            form_date(&f.return_date)
        )
    };
    let times = |f: &FlightDetails| {
        format!(
            "Take the outward flight leaving at {} and arriving at {}, and the return flight leaving at {} and arriving at {}.",
            f.outward_departure_time, f.outward_arrival_time, f.return_departure_time, f.return_arrival_time
        )
    };
    let person = |p: &Passenger| {
        format!(
            "title {}, first name {}, last name {}, gender {}, date of birth {}",
            p.title,
            p.first_name,
            p.last_name,
            p.gender,
            form_date(&p.date_of_birth)
        )
    };
    let reference = || d.booking.as_ref().map(|b| b.reference.clone()).unwrap_or_default();
    match scenario.kind {
        ScenarioKind::FindFlight => {
            format!("Search for flights {}.", route(d.flight.as_ref().unwrap()))
        }
        ScenarioKind::BookFlight => {
            let f = d.flight.as_ref().unwrap();
            let pay = d.payment.as_ref().unwrap();
            format!(
                "Book a flight {}. {} Passenger: {}. Pay with card number {}, expiry {}, CVC {}.",
                route(f),
                times(f),
                person(d.passenger.as_ref().unwrap()),
                pay.card_number,
                pay.expiry,
                pay.cvc
            )
        }
        ScenarioKind::FindBooking => format!("Find the booking with reference {}.", reference()),
        ScenarioKind::CancelBooking => format!("Cancel the booking with reference {}.", reference()),
        ScenarioKind::ModifyPassenger => format!(
            "Change the passenger on booking {} to: {}.",
            reference(),
            person(d.passenger.as_ref().unwrap())
        ),
        ScenarioKind::ModifyFlights => {
            let f = d.flight.as_ref().unwrap();
            format!(
                "Change the flights on booking {} to flights {}. {}",
                reference(),
                route(f),
                times(f)
            )
        }
    }
}

/// `YYYY-MM-DD` to `MM/DD/YYYY`; other text is returned unchanged.
pub fn form_date(iso: &str) -> String {
    match NaiveDate::parse_from_str(iso, "%Y-%m-%d") {
        Ok(d) => d.format("%m/%d/%Y").to_string(),
        Err(_) => iso.to_string(),
    }
}

/// Parses either `MM/DD/YYYY` or `YYYY-MM-DD`.
pub fn parse_date(text: &str) -> Option<NaiveDate> {
    let t = text.trim();
    NaiveDate::parse_from_str(t, "%m/%d/%Y")
        .or_else(|_| NaiveDate::parse_from_str(t, "%Y-%m-%d"))
        .ok()
}

/// Dates compare equal when they denote the same day in either format.
pub fn same_date(a: &str, b: &str) -> bool {
    match (parse_date(a), parse_date(b)) {
        (Some(x), Some(y)) => x == y,
        _ => false,
    }
}

/// The instance shown as the example output of the scenario API.
pub fn reference_instance() -> Scenario {
    Scenario {
        kind: ScenarioKind::FindFlight,
        id: "ylmjd3iuqpdc3gdrvspq".into(),
        url: "https://<base-url>/?scenario=ylmjd3iuqpdc3gdrvspq".into(),
        details: Details {
            flight: Some(FlightDetails {
                from: "JFK".into(),
                to: "FLL".into(),
                departure: "2023-07-07".into(),
                return_date: "2023-09-13".into(),
                outward_departure_time: "7:01pm".into(),
                outward_arrival_time: "0:13pm".into(),
                return_departure_time: "6:00am".into(),
                return_arrival_time: "8:43am".into(),
            }),
            ..Details::default()
        },
    }
}

pub fn scenario_url(base: &str, id: &str) -> String {
    format!("{}/?scenario={id}", base.trim_end_matches('/'))
}

/// Kind, id and details all follow from the seed.
pub fn generate_random_scenario(seed: u64) -> Scenario {
    generate_with(seed, None, DEFAULT_BASE_URL)
}

/// Like [`generate_random_scenario`] with the kind fixed. The kind draw is
/// still consumed, so `generate_scenario(k, s)` equals
/// `generate_random_scenario(s)` whenever that draws `k`. Otherwise the rest
/// is drawn from a stream specific to `k`, so one seed never yields the same
/// id for two kinds.
pub fn generate_scenario(kind: ScenarioKind, seed: u64) -> Scenario {
    generate_with(seed, Some(kind), DEFAULT_BASE_URL)
}

pub fn generate_with(seed: u64, kind: Option<ScenarioKind>, base_url: &str) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drawn = ScenarioKind::ALL[rng.random_range(0..ScenarioKind::ALL.len())];
    let kind = kind.unwrap_or(drawn);
    if kind != drawn {
        let index = ScenarioKind::ALL.iter().position(|k| *k == kind).expect("kind is listed");
        rng.set_stream(1 + index as u64);
    }
    let id = random_id(&mut rng);
    let mut details = Details::default();
    match kind {
        ScenarioKind::FindFlight => details.flight = Some(random_flight(&mut rng)),
        ScenarioKind::BookFlight => {
            details.flight = Some(random_flight(&mut rng));
            details.passenger = Some(random_passenger(&mut rng));
            details.payment = Some(random_payment(&mut rng));
        }
        ScenarioKind::FindBooking | ScenarioKind::CancelBooking => {
            details.booking = Some(random_booking(&mut rng));
        }
        ScenarioKind::ModifyPassenger => {
            let booking = random_booking(&mut rng);
            details.passenger = Some(changed_passenger(&mut rng, &booking.passenger));
            details.booking = Some(booking);
        }
        ScenarioKind::ModifyFlights => {
            let booking = random_booking(&mut rng);
            let mut flight = random_flight(&mut rng);
            while flight == booking.flight {
                flight = random_flight(&mut rng);
            }
            details.flight = Some(flight);
            details.booking = Some(booking);
        }
    }
    Scenario {
        kind,
        url: scenario_url(base_url, &id),
        id,
        details,
    }
}

const ID_CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
const REF_CHARS: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

fn random_string(rng: &mut impl Rng, alphabet: &[u8], len: usize) -> String {
    (0..len)
        .map(|_| alphabet[rng.random_range(0..alphabet.len())] as char)
        .collect()
}

fn random_id(rng: &mut impl Rng) -> String {
    random_string(rng, ID_CHARS, 20)
}

/// Six upper-case letters or digits.
pub fn random_reference(rng: &mut impl Rng) -> String {
    random_string(rng, REF_CHARS, 6)
}

/// Clock time as written on the site, e.g. `7:01pm` or `0:13pm`.
pub fn random_time(rng: &mut impl Rng) -> String {
    let hour = rng.random_range(0..12);
    let minute = rng.random_range(0..60);
    let half = if rng.random_bool(0.5) { "am" } else { "pm" };
    format!("{hour}:{minute:02}{half}")
}

fn random_flight(rng: &mut impl Rng) -> FlightDetails {
    let from = *AIRPORTS.choose(rng).unwrap();
    let to = loop {
        let to = *AIRPORTS.choose(rng).unwrap();
        if to != from {
            break to;
        }
    };
    let first = NaiveDate::from_ymd_opt(2023, 1, 1).unwrap();
    let last = NaiveDate::from_ymd_opt(2024, 12, 31).unwrap();
    let max_stay = 90;
    let span = (last - first).num_days() - max_stay;
    let departure = first + Duration::days(rng.random_range(0..=span));
    let back = departure + Duration::days(rng.random_range(1..=max_stay));
    FlightDetails {
        from: from.into(),
        to: to.into(),
        departure: departure.format("%Y-%m-%d").to_string(),
        return_date: back.format("%Y-%m-%d").to_string(),
        outward_departure_time: random_time(rng),
        outward_arrival_time: random_time(rng),
        return_departure_time: random_time(rng),
        return_arrival_time: random_time(rng),
    }
}

fn random_birth_date(rng: &mut impl Rng) -> String {
    let first = NaiveDate::from_ymd_opt(1940, 1, 1).unwrap();
    let last = NaiveDate::from_ymd_opt(2005, 12, 31).unwrap();
    let d = first + Duration::days(rng.random_range(0..=(last - first).num_days()));
    debug_assert!((1940..=2005).contains(&d.year()));
    d.format("%Y-%m-%d").to_string()
}

fn random_passenger(rng: &mut impl Rng) -> Passenger {
    Passenger {
        title: TITLES.choose(rng).unwrap().to_string(),
        first_name: FIRST_NAMES.choose(rng).unwrap().to_string(),
        last_name: LAST_NAMES.choose(rng).unwrap().to_string(),
        gender: GENDERS.choose(rng).unwrap().to_string(),
        date_of_birth: random_birth_date(rng),
    }
}

/// A copy of `old` with between one and three fields changed.
fn changed_passenger(rng: &mut impl Rng, old: &Passenger) -> Passenger {
    let mut new = old.clone();
    let mut fields: Vec<usize> = (0..5).collect();
    let changes = rng.random_range(1..=3);
    for _ in 0..changes {
        let field = fields.remove(rng.random_range(0..fields.len()));
        loop {
            match field {
                0 => new.title = TITLES.choose(rng).unwrap().to_string(),
                1 => new.first_name = FIRST_NAMES.choose(rng).unwrap().to_string(),
                2 => new.last_name = LAST_NAMES.choose(rng).unwrap().to_string(),
                3 => new.gender = GENDERS.choose(rng).unwrap().to_string(),
                _ => new.date_of_birth = random_birth_date(rng),
            }
            let differs = match field {
                0 => new.title != old.title,
                1 => new.first_name != old.first_name,
                2 => new.last_name != old.last_name,
                3 => new.gender != old.gender,
                _ => new.date_of_birth != old.date_of_birth,
            };
            if differs {
                break;
            }
        }
    }
    new
}

fn random_payment(rng: &mut impl Rng) -> Payment {
    Payment {
        card_number: format!("4{}", random_string(rng, b"0123456789", 15)),
        expiry: format!("{:02}/{}", rng.random_range(1..=12), rng.random_range(25..=30)),
        cvc: random_string(rng, b"0123456789", 3),
    }
}

fn random_booking(rng: &mut impl Rng) -> Booking {
    Booking {
        reference: random_reference(rng),
        passenger: random_passenger(rng),
        flight: random_flight(rng),
    }
}
