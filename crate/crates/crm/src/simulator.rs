//! Screens, element layout and the page transition function.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use webstack_core::action::{Action, ElementId};
use webstack_core::env::{EnvError, Environment, EvalResult};
use webstack_core::observation::{Observation, WebElement};

use crate::evaluate::evaluate_session;
use crate::scenario::{
    form_date, generate_with, parse_date, random_reference, random_time, scenario_url, Booking,
    FlightDetails, Passenger, Payment, Scenario, ScenarioKind, DEFAULT_BASE_URL,
};

/// Element ids. Every screen uses its own id range, so an id never changes
/// meaning while a screen is shown.
pub mod ids {
    use webstack_core::action::ElementId;

    pub const SEARCH_HEADING: ElementId = 10;
    pub const FLIGHT_FROM: ElementId = 11;
    pub const FLIGHT_TO: ElementId = 12;
    pub const DEPARTURE_DATE: ElementId = 13;
    pub const RETURN_DATE: ElementId = 14;
    pub const SEARCH: ElementId = 15;
    pub const SEARCH_MESSAGE: ElementId = 16;

    pub const RESULTS_HEADING: ElementId = 40;
    pub const OUTWARD_LABEL: ElementId = 41;
    /// First of three outward options.
    pub const OUTWARD_FIRST: ElementId = 42;
    pub const RETURN_LABEL: ElementId = 45;
    /// First of three return options.
    pub const RETURN_FIRST: ElementId = 46;
    /// "Confirm" for a new booking, "Save" when changing a booking.
    pub const CONFIRM_FLIGHTS: ElementId = 49;
    pub const RESULTS_MESSAGE: ElementId = 50;

    pub const PASSENGER_HEADING: ElementId = 70;
    pub const TITLE: ElementId = 71;
    pub const FIRST_NAME: ElementId = 72;
    pub const LAST_NAME: ElementId = 73;
    pub const GENDER: ElementId = 74;
    pub const DATE_OF_BIRTH: ElementId = 75;
    pub const SAVE_PASSENGER: ElementId = 76;

    pub const PAYMENT_HEADING: ElementId = 90;
    pub const CARD_NUMBER: ElementId = 91;
    pub const EXPIRY: ElementId = 92;
    pub const CVC: ElementId = 93;
    pub const BOOK: ElementId = 94;

    pub const FIND_HEADING: ElementId = 110;
    pub const BOOKING_REFERENCE: ElementId = 111;
    pub const FIND_SEARCH: ElementId = 112;
    pub const FIND_MESSAGE: ElementId = 113;

    pub const BOOKING_HEADING: ElementId = 130;
    pub const BOOKING_PASSENGER: ElementId = 131;
    pub const BOOKING_FLIGHT: ElementId = 132;
    pub const CANCEL: ElementId = 133;
    pub const MODIFY_PASSENGER: ElementId = 134;
    pub const MODIFY_FLIGHTS: ElementId = 135;

    pub const CANCEL_HEADING: ElementId = 160;
    pub const CONFIRM_REFERENCE: ElementId = 161;
    pub const CONFIRM_CANCEL: ElementId = 162;
    pub const CANCEL_MESSAGE: ElementId = 163;

    pub const DONE_MESSAGE: ElementId = 180;
}

/// Number of result rows shown per leg.
pub const RESULT_ROWS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Screen {
    SearchFlight,
    Results,
    PassengerDetails,
    Payment,
    FindBooking,
    BookingView,
    CancelConfirm,
    Done,
}

impl Screen {
    pub fn slug(self) -> &'static str {
        match self {
            Screen::SearchFlight => "search-flight",
            Screen::Results => "results",
            Screen::PassengerDetails => "passenger-details",
            Screen::Payment => "payment",
            Screen::FindBooking => "find-booking",
            Screen::BookingView => "booking",
            Screen::CancelConfirm => "cancel-booking",
            Screen::Done => "done",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Leg {
    Outward,
    Return,
}

impl Leg {
    pub fn name(self) -> &'static str {
        match self {
            Leg::Outward => "outward",
            Leg::Return => "return",
        }
    }

    fn index(self) -> usize {
        match self {
            Leg::Outward => 0,
            Leg::Return => 1,
        }
    }

    pub fn first_option(self) -> ElementId {
        match self {
            Leg::Outward => ids::OUTWARD_FIRST,
            Leg::Return => ids::RETURN_FIRST,
        }
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Row holding the requested flight when the search matches the scenario.
pub fn target_row(scenario_id: &str, leg: Leg) -> usize {
    (fnv1a(format!("{scenario_id}/{}", leg.name()).as_bytes()) % RESULT_ROWS as u64) as usize
}

/// Something the user accomplished, recorded in order. Evaluation matches
/// these against the task's subgoals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Milestone {
    SearchSubmitted {
        from: String,
        to: String,
        departure: String,
        return_date: String,
    },
    /// `reference` is set when the flights of an existing booking were saved.
    FlightsChosen {
        flight: FlightDetails,
        reference: Option<String>,
    },
    /// `reference` is set when the passenger of an existing booking was saved.
    PassengerEntered {
        passenger: Passenger,
        reference: Option<String>,
    },
    BookingCreated {
        reference: String,
        payment: Payment,
    },
    BookingFound {
        reference: String,
    },
    CancelRequested {
        reference: String,
    },
    BookingCancelled {
        reference: String,
    },
    ModifyPassengerRequested {
        reference: String,
    },
    ModifyFlightsRequested {
        reference: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Flow {
    NewBooking,
    ChangeFlights(String),
    ChangePassenger(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Button {
    Search,
    ConfirmFlights,
    SavePassenger,
    Book,
    FindSearch,
    Cancel,
    ModifyPassenger,
    ModifyFlights,
    ConfirmCancel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Text,
    Input(&'static str),
    Button(Button),
    Option(Leg, usize),
}

const SEARCH_FIELDS: [(ElementId, &str); 4] = [
    (ids::FLIGHT_FROM, "flight-from"),
    (ids::FLIGHT_TO, "flight-to"),
    (ids::DEPARTURE_DATE, "departure-datepicker"),
    (ids::RETURN_DATE, "return-datepicker"),
];

const PASSENGER_FIELDS: [(ElementId, &str); 5] = [
    (ids::TITLE, "title"),
    (ids::FIRST_NAME, "first-name"),
    (ids::LAST_NAME, "last-name"),
    (ids::GENDER, "gender"),
    (ids::DATE_OF_BIRTH, "date-of-birth"),
];

const PAYMENT_FIELDS: [(ElementId, &str); 3] = [
    (ids::CARD_NUMBER, "card-number"),
    (ids::EXPIRY, "expiry"),
    (ids::CVC, "cvc"),
];

/// State of one scenario's browser session and its bookings store.
#[derive(Debug, Clone)]
pub struct Session {
    scenario: Scenario,
    screen: Screen,
    back: Vec<Screen>,
    form: BTreeMap<&'static str, String>,
    message: Option<String>,
    flow: Flow,
    rows: [Vec<(String, String)>; 2],
    selected: [Option<usize>; 2],
    search: Option<(String, String, String, String)>,
    pending_flight: Option<FlightDetails>,
    pending_passenger: Option<Passenger>,
    viewed: Option<String>,
    done_message: String,
    store: BTreeMap<String, Booking>,
    milestones: Vec<Milestone>,
    ignored: Vec<String>,
    rng: ChaCha8Rng,
}

impl Session {
    pub fn new(scenario: Scenario) -> Self {
        let mut store = BTreeMap::new();
        if let Some(b) = &scenario.details.booking {
            store.insert(b.reference.clone(), b.clone());
        }
        let screen = if scenario.kind.starts_with_search() {
            Screen::SearchFlight
        } else {
            Screen::FindBooking
        };
        let rng = ChaCha8Rng::seed_from_u64(fnv1a(scenario.id.as_bytes()));
        Session {
            scenario,
            screen,
            back: Vec::new(),
            form: BTreeMap::new(),
            message: None,
            flow: Flow::NewBooking,
            rows: [Vec::new(), Vec::new()],
            selected: [None, None],
            search: None,
            pending_flight: None,
            pending_passenger: None,
            viewed: None,
            done_message: String::new(),
            store,
            milestones: Vec::new(),
            ignored: Vec::new(),
            rng,
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn screen(&self) -> Screen {
        self.screen
    }

    pub fn milestones(&self) -> &[Milestone] {
        &self.milestones
    }

    /// Interactions that changed nothing, e.g. clicks on plain text.
    pub fn ignored(&self) -> &[String] {
        &self.ignored
    }

    pub fn store(&self) -> &BTreeMap<String, Booking> {
        &self.store
    }

    /// Booking currently shown on the booking screen.
    pub fn viewed(&self) -> Option<&str> {
        self.viewed.as_deref()
    }

    fn field(&self, name: &str) -> String {
        self.form.get(name).map(|s| s.trim().to_string()).unwrap_or_default()
    }

    fn goto(&mut self, screen: Screen) {
        self.back.push(self.screen);
        self.screen = screen;
        self.message = None;
    }

    fn slots(&self) -> Vec<(ElementId, Slot)> {
        let mut out = Vec::new();
        match self.screen {
            Screen::SearchFlight => {
                out.push((ids::SEARCH_HEADING, Slot::Text));
                out.extend(SEARCH_FIELDS.iter().map(|(id, f)| (*id, Slot::Input(f))));
                out.push((ids::SEARCH, Slot::Button(Button::Search)));
                if self.message.is_some() {
                    out.push((ids::SEARCH_MESSAGE, Slot::Text));
                }
            }
            Screen::Results => {
                out.push((ids::RESULTS_HEADING, Slot::Text));
                for leg in [Leg::Outward, Leg::Return] {
                    let label = match leg {
                        Leg::Outward => ids::OUTWARD_LABEL,
                        Leg::Return => ids::RETURN_LABEL,
                    };
                    out.push((label, Slot::Text));
                    for row in 0..RESULT_ROWS {
                        out.push((leg.first_option() + row as ElementId, Slot::Option(leg, row)));
                    }
                }
                out.push((ids::CONFIRM_FLIGHTS, Slot::Button(Button::ConfirmFlights)));
                if self.message.is_some() {
                    out.push((ids::RESULTS_MESSAGE, Slot::Text));
                }
            }
            Screen::PassengerDetails => {
                out.push((ids::PASSENGER_HEADING, Slot::Text));
                out.extend(PASSENGER_FIELDS.iter().map(|(id, f)| (*id, Slot::Input(f))));
                out.push((ids::SAVE_PASSENGER, Slot::Button(Button::SavePassenger)));
            }
            Screen::Payment => {
                out.push((ids::PAYMENT_HEADING, Slot::Text));
                out.extend(PAYMENT_FIELDS.iter().map(|(id, f)| (*id, Slot::Input(f))));
                out.push((ids::BOOK, Slot::Button(Button::Book)));
            }
            Screen::FindBooking => {
                out.push((ids::FIND_HEADING, Slot::Text));
                out.push((ids::BOOKING_REFERENCE, Slot::Input("booking-reference")));
                out.push((ids::FIND_SEARCH, Slot::Button(Button::FindSearch)));
                if self.message.is_some() {
                    out.push((ids::FIND_MESSAGE, Slot::Text));
                }
            }
            Screen::BookingView => {
                out.push((ids::BOOKING_HEADING, Slot::Text));
                out.push((ids::BOOKING_PASSENGER, Slot::Text));
                out.push((ids::BOOKING_FLIGHT, Slot::Text));
                out.push((ids::CANCEL, Slot::Button(Button::Cancel)));
                out.push((ids::MODIFY_PASSENGER, Slot::Button(Button::ModifyPassenger)));
                out.push((ids::MODIFY_FLIGHTS, Slot::Button(Button::ModifyFlights)));
            }
            Screen::CancelConfirm => {
                out.push((ids::CANCEL_HEADING, Slot::Text));
                out.push((ids::CONFIRM_REFERENCE, Slot::Input("confirm-reference")));
                out.push((ids::CONFIRM_CANCEL, Slot::Button(Button::ConfirmCancel)));
                if self.message.is_some() {
                    out.push((ids::CANCEL_MESSAGE, Slot::Text));
                }
            }
            Screen::Done => out.push((ids::DONE_MESSAGE, Slot::Text)),
        }
        out
    }

    fn text_of(&self, id: ElementId) -> String {
        let viewed = self.viewed.as_ref().and_then(|r| self.store.get(r));
        match id {
            ids::SEARCH_HEADING => match &self.flow {
                Flow::ChangeFlights(r) => format!("Change flights for booking {r}"),
                _ => "Search flights".into(),
            },
            ids::RESULTS_HEADING => match &self.search {
                Some((from, to, dep, ret)) => format!("Flights from {from} to {to}, {dep} - {ret}"),
                None => "Flights".into(),
            },
            ids::OUTWARD_LABEL => "Outward flights".into(),
            ids::RETURN_LABEL => "Return flights".into(),
            ids::PASSENGER_HEADING => "Passenger details".into(),
            ids::PAYMENT_HEADING => "Payment".into(),
            ids::FIND_HEADING => "Find booking".into(),
            ids::BOOKING_HEADING => match viewed {
                Some(b) => format!("Booking {}", b.reference),
                None => "Booking".into(),
            },
            ids::BOOKING_PASSENGER => viewed
                .map(|b| {
                    let p = &b.passenger;
                    format!(
                        "Passenger: {} {} {}, {}, born {}",
                        p.title,
                        p.first_name,
                        p.last_name,
                        p.gender,
                        form_date(&p.date_of_birth)
                    )
                })
                .unwrap_or_default(),
            ids::BOOKING_FLIGHT => viewed
                .map(|b| {
                    let f = &b.flight;
                    format!(
                        "Flights: {} to {} on {} ({} - {}), returning {} ({} - {})",
                        f.from,
                        f.to,
                        form_date(&f.departure),
                        f.outward_departure_time,
                        f.outward_arrival_time,
                        form_date(&f.return_date),
                        f.return_departure_time,
                        f.return_arrival_time
                    )
                })
                .unwrap_or_default(),
            ids::CANCEL_HEADING => "Enter the booking reference again to cancel".into(),
            ids::DONE_MESSAGE => self.done_message.clone(),
            ids::SEARCH_MESSAGE | ids::RESULTS_MESSAGE | ids::FIND_MESSAGE | ids::CANCEL_MESSAGE => {
                self.message.clone().unwrap_or_default()
            }
            _ => String::new(),
        }
    }

    fn button_label(&self, button: Button) -> &'static str {
        match button {
            Button::Search | Button::FindSearch => "Search",
            Button::ConfirmFlights => match self.flow {
                Flow::ChangeFlights(_) => "Save",
                _ => "Confirm",
            },
            Button::SavePassenger => "Save",
            Button::Book => "Book flight",
            Button::Cancel | Button::ConfirmCancel => "Cancel",
            Button::ModifyPassenger => "Modify passenger",
            Button::ModifyFlights => "Modify flights",
        }
    }

    pub fn observe(&self) -> Observation {
        let elements = self
            .slots()
            .into_iter()
            .map(|(id, slot)| match slot {
                Slot::Text => WebElement::new(id, "text").text(self.text_of(id)),
                Slot::Input(field) => WebElement::new(id, "input_text")
                    .attr("val", field)
                    .text(self.form.get(field).cloned().unwrap_or_default()),
                Slot::Button(b) => WebElement::new(id, "button").text(self.button_label(b)),
                Slot::Option(leg, row) => {
                    let (dep, arr) = &self.rows[leg.index()][row];
                    let mut el = WebElement::new(id, "option").attr("group", leg.name());
                    if self.selected[leg.index()] == Some(row) {
                        el = el.attr("selected", "true");
                    }
                    el.text(format!("departs {dep}, arrives {arr}"))
                }
            })
            .collect();
        Observation::new(format!("{}#{}", self.scenario.url, self.screen.slug()), elements)
    }

    fn slot(&self, id: ElementId) -> Result<Slot, EnvError> {
        self.slots()
            .into_iter()
            .find(|(i, _)| *i == id)
            .map(|(_, s)| s)
            .ok_or(EnvError::NoSuchElement(id))
    }

    fn ignore(&mut self, what: String) {
        self.ignored.push(what);
    }

    /// Performs a page operation on the current screen.
    pub fn apply(&mut self, action: &Action) -> Result<Observation, EnvError> {
        if self.screen == Screen::Done {
            return Err(EnvError::ScenarioFinished);
        }
        match action {
            Action::Click { id } => match self.slot(*id)? {
                Slot::Button(b) => self.press(b),
                Slot::Option(leg, row) => self.selected[leg.index()] = Some(row),
                _ => self.ignore(format!("click on non-actionable element {id}")),
            },
            Action::Type { id, text, .. } => match self.slot(*id)? {
                Slot::Input(field) => {
                    self.form.insert(field, text.clone());
                }
                _ => self.ignore(format!("typing into non-editable element {id}")),
            },
            Action::Hover { id } => {
                self.slot(*id)?;
                self.ignore(format!("hover over {id}"));
            }
            Action::GoBack => match self.back.pop() {
                Some(screen) => {
                    self.screen = screen;
                    self.message = None;
                }
                None => self.ignore("go_back with no history".into()),
            },
            Action::PolicyCall { .. } | Action::Stop { .. } => {
                return Err(EnvError::NotAPageAction(action.to_string()))
            }
            other => self.ignore(format!("`{other}` has no effect here")),
        }
        Ok(self.observe())
    }

    fn press(&mut self, button: Button) {
        match button {
            Button::Search => self.submit_search(),
            Button::ConfirmFlights => self.confirm_flights(),
            Button::SavePassenger => self.save_passenger(),
            Button::Book => self.book(),
            Button::FindSearch => self.find_booking(),
            Button::Cancel => {
                let reference = self.viewed.clone().unwrap_or_default();
                self.milestones.push(Milestone::CancelRequested { reference });
                self.form.remove("confirm-reference");
                self.goto(Screen::CancelConfirm);
            }
            Button::ConfirmCancel => self.confirm_cancel(),
            Button::ModifyPassenger => {
                let reference = self.viewed.clone().unwrap_or_default();
                if let Some(b) = self.store.get(&reference) {
                    let p = b.passenger.clone();
                    self.form.insert("title", p.title);
                    self.form.insert("first-name", p.first_name);
                    self.form.insert("last-name", p.last_name);
                    self.form.insert("gender", p.gender);
                    self.form.insert("date-of-birth", form_date(&p.date_of_birth));
                }
                self.flow = Flow::ChangePassenger(reference.clone());
                self.milestones.push(Milestone::ModifyPassengerRequested { reference });
                self.goto(Screen::PassengerDetails);
            }
            Button::ModifyFlights => {
                let reference = self.viewed.clone().unwrap_or_default();
                for (_, field) in SEARCH_FIELDS {
                    self.form.remove(field);
                }
                self.flow = Flow::ChangeFlights(reference.clone());
                self.milestones.push(Milestone::ModifyFlightsRequested { reference });
                self.goto(Screen::SearchFlight);
            }
        }
    }

    /// The flight the search screen is expected to find, if any.
    fn wanted_flight(&self) -> Option<&FlightDetails> {
        match self.scenario.kind {
            ScenarioKind::FindFlight | ScenarioKind::BookFlight | ScenarioKind::ModifyFlights => {
                self.scenario.details.flight.as_ref()
            }
            _ => None,
        }
    }

    fn submit_search(&mut self) {
        let values: Vec<String> = SEARCH_FIELDS.iter().map(|(_, f)| self.field(f)).collect();
        if values.iter().any(String::is_empty) {
            self.ignore("search with empty fields".into());
            self.message = Some("Enter origin, destination and both dates".into());
            return;
        }
        let (from, to, dep, ret) = (&values[0], &values[1], &values[2], &values[3]);
        self.milestones.push(Milestone::SearchSubmitted {
            from: from.clone(),
            to: to.clone(),
            departure: dep.clone(),
            return_date: ret.clone(),
        });
        let target = self
            .wanted_flight()
            .filter(|f| {
                f.from.eq_ignore_ascii_case(from)
                    && f.to.eq_ignore_ascii_case(to)
                    && crate::scenario::same_date(&f.departure, dep)
                    && crate::scenario::same_date(&f.return_date, ret)
            })
            .cloned();
        let key = values.join("|").to_ascii_uppercase();
        for leg in [Leg::Outward, Leg::Return] {
            let wanted = target.as_ref().map(|f| match leg {
                Leg::Outward => (f.outward_departure_time.clone(), f.outward_arrival_time.clone()),
                Leg::Return => (f.return_departure_time.clone(), f.return_arrival_time.clone()),
            });
            let position = target_row(&self.scenario.id, leg);
            let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(
                format!("{}/{}/{key}", self.scenario.id, leg.name()).as_bytes(),
            ));
            let mut rows: Vec<(String, String)> = Vec::with_capacity(RESULT_ROWS);
            for row in 0..RESULT_ROWS {
                if row == position {
                    if let Some(w) = &wanted {
                        rows.push(w.clone());
                        continue;
                    }
                }
                loop {
                    let candidate = (random_time(&mut rng), random_time(&mut rng));
                    if Some(&candidate) != wanted.as_ref() && !rows.contains(&candidate) {
                        rows.push(candidate);
                        break;
                    }
                }
            }
            self.rows[leg.index()] = rows;
        }
        self.selected = [None, None];
        self.search = Some((from.clone(), to.clone(), dep.clone(), ret.clone()));
        self.goto(Screen::Results);
    }

    fn confirm_flights(&mut self) {
        let (Some(out), Some(back), Some((from, to, dep, ret))) =
            (self.selected[0], self.selected[1], self.search.clone())
        else {
            self.ignore("confirm without an outward and a return flight".into());
            self.message = Some("Select an outward and a return flight".into());
            return;
        };
        let iso = |d: &str| parse_date(d).map(|d| d.format("%Y-%m-%d").to_string()).unwrap_or_else(|| d.to_string());
        let flight = FlightDetails {
            from: from.to_ascii_uppercase(),
            to: to.to_ascii_uppercase(),
            departure: iso(&dep),
            return_date: iso(&ret),
            outward_departure_time: self.rows[0][out].0.clone(),
            outward_arrival_time: self.rows[0][out].1.clone(),
            return_departure_time: self.rows[1][back].0.clone(),
            return_arrival_time: self.rows[1][back].1.clone(),
        };
        match self.flow.clone() {
            Flow::ChangeFlights(reference) => {
                if let Some(b) = self.store.get_mut(&reference) {
                    b.flight = flight.clone();
                }
                self.milestones.push(Milestone::FlightsChosen {
                    flight,
                    reference: Some(reference.clone()),
                });
                self.flow = Flow::NewBooking;
                self.viewed = Some(reference);
                self.goto(Screen::BookingView);
            }
            _ => {
                self.pending_flight = Some(flight.clone());
                self.milestones.push(Milestone::FlightsChosen {
                    flight,
                    reference: None,
                });
                for (_, field) in PASSENGER_FIELDS {
                    self.form.remove(field);
                }
                self.goto(Screen::PassengerDetails);
            }
        }
    }

    fn save_passenger(&mut self) {
        let dob = self.field("date-of-birth");
        let passenger = Passenger {
            title: self.field("title"),
            first_name: self.field("first-name"),
            last_name: self.field("last-name"),
            gender: self.field("gender"),
            date_of_birth: parse_date(&dob)
                .map(|d| d.format("%Y-%m-%d").to_string())
                .unwrap_or(dob),
        };
        match self.flow.clone() {
            Flow::ChangePassenger(reference) => {
                if let Some(b) = self.store.get_mut(&reference) {
                    b.passenger = passenger.clone();
                }
                self.milestones.push(Milestone::PassengerEntered {
                    passenger,
                    reference: Some(reference.clone()),
                });
                self.flow = Flow::NewBooking;
                self.viewed = Some(reference);
                self.goto(Screen::BookingView);
            }
            _ => {
                self.pending_passenger = Some(passenger.clone());
                self.milestones.push(Milestone::PassengerEntered {
                    passenger,
                    reference: None,
                });
                for (_, field) in PAYMENT_FIELDS {
                    self.form.remove(field);
                }
                self.goto(Screen::Payment);
            }
        }
    }

    fn book(&mut self) {
        let (Some(flight), Some(passenger)) = (self.pending_flight.clone(), self.pending_passenger.clone())
        else {
            self.ignore("book without flight and passenger".into());
            return;
        };
        let payment = Payment {
            card_number: self.field("card-number"),
            expiry: self.field("expiry"),
            cvc: self.field("cvc"),
        };
        let reference = loop {
            let r = random_reference(&mut self.rng);
            if !self.store.contains_key(&r) {
                break r;
            }
        };
        self.store.insert(
            reference.clone(),
            Booking {
                reference: reference.clone(),
                passenger,
                flight,
            },
        );
        self.milestones.push(Milestone::BookingCreated {
            reference: reference.clone(),
            payment,
        });
        self.done_message = format!("Booking confirmed. Your booking reference is {reference}");
        self.goto(Screen::Done);
    }

    fn find_booking(&mut self) {
        let reference = self.field("booking-reference").to_ascii_uppercase();
        if self.store.contains_key(&reference) {
            self.viewed = Some(reference.clone());
            self.milestones.push(Milestone::BookingFound { reference });
            self.goto(Screen::BookingView);
        } else {
            self.ignore(format!("no booking `{reference}`"));
            self.message = Some(format!("No booking found with reference {reference}"));
        }
    }

    fn confirm_cancel(&mut self) {
        let typed = self.field("confirm-reference").to_ascii_uppercase();
        match self.viewed.clone() {
            Some(reference) if reference == typed => {
                self.store.remove(&reference);
                self.milestones.push(Milestone::BookingCancelled {
                    reference: reference.clone(),
                });
                self.done_message = format!("Booking {reference} has been cancelled");
                self.goto(Screen::Done);
            }
            _ => {
                self.ignore("cancellation reference does not match".into());
                self.message = Some("The reference does not match this booking".into());
            }
        }
    }
}

/// All scenario sessions. Each scenario id owns an isolated session behind
/// its own lock.
#[derive(Debug)]
pub struct CrmSimulator {
    base_url: String,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
}

impl Default for CrmSimulator {
    fn default() -> Self {
        CrmSimulator::new()
    }
}

impl CrmSimulator {
    pub fn new() -> Self {
        CrmSimulator::with_base_url(DEFAULT_BASE_URL)
    }

    pub fn with_base_url(base_url: impl Into<String>) -> Self {
        CrmSimulator {
            base_url: base_url.into(),
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// Generates a scenario for this simulator's base URL and registers it.
    pub fn generate(&self, seed: u64, kind: Option<ScenarioKind>) -> Scenario {
        let scenario = generate_with(seed, kind, &self.base_url);
        self.register(scenario.clone()).expect("generated scenarios are valid");
        scenario
    }

    /// Adds (or replaces) a scenario and starts a fresh session for it.
    pub fn register(&self, mut scenario: Scenario) -> Result<Observation, EnvError> {
        scenario.validate().map_err(EnvError::Other)?;
        if scenario.url.is_empty() {
            scenario.url = scenario_url(&self.base_url, &scenario.id);
        }
        let session = Session::new(scenario);
        let obs = session.observe();
        let id = session.scenario.id.clone();
        self.sessions
            .lock()
            .unwrap()
            .insert(id, Arc::new(Mutex::new(session)));
        Ok(obs)
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, EnvError> {
        self.sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| EnvError::UnknownScenario(id.to_string()))
    }

    /// Runs `f` on the scenario's session while holding its lock.
    pub fn with_session<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> T) -> Result<T, EnvError> {
        let session = self.session(id)?;
        let mut guard = session.lock().unwrap();
        Ok(f(&mut guard))
    }

    /// Restores the scenario's initial page and bookings.
    pub fn reset(&self, id: &str) -> Result<Observation, EnvError> {
        self.with_session(id, |s| {
            *s = Session::new(s.scenario.clone());
            s.observe()
        })
    }

    pub fn observe(&self, id: &str) -> Result<Observation, EnvError> {
        self.with_session(id, |s| s.observe())
    }

    pub fn apply(&self, id: &str, action: &Action) -> Result<Observation, EnvError> {
        self.with_session(id, |s| s.apply(action))?
    }

    pub fn evaluate(&self, id: &str) -> Result<EvalResult, EnvError> {
        self.with_session(id, |s| evaluate_session(s))
    }

    pub fn scenario(&self, id: &str) -> Result<Scenario, EnvError> {
        self.with_session(id, |s| s.scenario.clone())
    }

    pub fn booking(&self, id: &str, reference: &str) -> Result<Option<Booking>, EnvError> {
        self.with_session(id, |s| s.store.get(reference).cloned())
    }

    /// Bookings created during the session, oldest first.
    pub fn created_bookings(&self, id: &str) -> Result<Vec<Booking>, EnvError> {
        self.with_session(id, |s| {
            s.milestones
                .iter()
                .filter_map(|m| match m {
                    Milestone::BookingCreated { reference, .. } => s.store.get(reference).cloned(),
                    _ => None,
                })
                .collect()
        })
    }

    pub fn episode(&self, id: &str) -> Result<CrmEpisode<'_>, EnvError> {
        self.session(id)?;
        Ok(CrmEpisode {
            sim: self,
            id: id.to_string(),
        })
    }
}

/// One scenario of a simulator seen through the agent's environment contract.
#[derive(Debug, Clone)]
pub struct CrmEpisode<'a> {
    sim: &'a CrmSimulator,
    id: String,
}

impl CrmEpisode<'_> {
    pub fn id(&self) -> &str {
        &self.id
    }
}

impl Environment for CrmEpisode<'_> {
    fn observe(&self) -> Result<Observation, EnvError> {
        self.sim.observe(&self.id)
    }

    fn apply(&mut self, action: &Action) -> Result<Observation, EnvError> {
        self.sim.apply(&self.id, action)
    }

    fn evaluate(&self) -> Result<EvalResult, EnvError> {
        self.sim.evaluate(&self.id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::generate_scenario;
    use webstack_core::observation::serialize_elements;

    fn click(id: ElementId) -> Action {
        Action::Click { id }
    }

    fn typ(id: ElementId, text: &str) -> Action {
        Action::Type {
            id,
            text: text.into(),
            press_enter: false,
        }
    }

    #[test]
    fn search_screen_layout() {
        let s = Session::new(generate_scenario(ScenarioKind::FindFlight, 1));
        let text = serialize_elements(&s.observe());
        assert!(text.contains("<input_text id=11 val=flight-from />"));
        assert!(text.contains("<input_text id=12 val=flight-to />"));
        assert!(text.contains("val=departure-datepicker"));
        assert!(text.contains("val=return-datepicker"));
        assert!(text.contains("<button id=15>Search</button>"));
    }

    #[test]
    fn typing_echoes_value() {
        let mut s = Session::new(generate_scenario(ScenarioKind::FindFlight, 1));
        let obs = s.apply(&typ(ids::FLIGHT_FROM, "JFK")).unwrap();
        assert_eq!(obs.element(ids::FLIGHT_FROM).unwrap().text, "JFK");
        assert!(serialize_elements(&obs).contains("<input_text id=11 val=\"flight-from\">JFK</input_text>"));
    }

    #[test]
    fn clicking_text_is_a_recorded_no_op() {
        let mut s = Session::new(generate_scenario(ScenarioKind::FindFlight, 1));
        let before = s.observe();
        let after = s.apply(&click(ids::SEARCH_HEADING)).unwrap();
        assert_eq!(before, after);
        assert_eq!(s.ignored().len(), 1);
    }

    #[test]
    fn unknown_element_and_non_page_actions() {
        let mut s = Session::new(generate_scenario(ScenarioKind::FindFlight, 1));
        assert_eq!(s.apply(&click(999)), Err(EnvError::NoSuchElement(999)));
        assert!(matches!(
            s.apply(&Action::Stop { answer: String::new() }),
            Err(EnvError::NotAPageAction(_))
        ));
    }

    #[test]
    fn booking_tasks_start_on_find_booking() {
        let s = Session::new(generate_scenario(ScenarioKind::CancelBooking, 4));
        let obs = s.observe();
        assert!(obs.element(ids::BOOKING_REFERENCE).is_some());
        assert_eq!(obs.element(ids::FIND_SEARCH).unwrap().text, "Search");
        assert_eq!(s.store().len(), 1);
    }

    #[test]
    fn results_hold_target_row() {
        let sc = generate_scenario(ScenarioKind::BookFlight, 3);
        let f = sc.details.flight.clone().unwrap();
        let mut s = Session::new(sc.clone());
        s.apply(&typ(ids::FLIGHT_FROM, &f.from)).unwrap();
        s.apply(&typ(ids::FLIGHT_TO, &f.to)).unwrap();
        s.apply(&typ(ids::DEPARTURE_DATE, &form_date(&f.departure))).unwrap();
        s.apply(&typ(ids::RETURN_DATE, &f.return_date)).unwrap();
        let obs = s.apply(&click(ids::SEARCH)).unwrap();
        let row = target_row(&sc.id, Leg::Outward) as ElementId;
        let el = obs.element(ids::OUTWARD_FIRST + row).unwrap();
        assert_eq!(
            el.text,
            format!("departs {}, arrives {}", f.outward_departure_time, f.outward_arrival_time)
        );
        let texts: std::collections::HashSet<_> =
            (0..3).map(|r| obs.element(ids::OUTWARD_FIRST + r).unwrap().text.clone()).collect();
        assert_eq!(texts.len(), 3);
    }

    #[test]
    fn done_screen_rejects_actions() {
        let sc = generate_scenario(ScenarioKind::CancelBooking, 2);
        let r = sc.details.booking.clone().unwrap().reference;
        let mut s = Session::new(sc);
        for a in [
            typ(ids::BOOKING_REFERENCE, &r),
            click(ids::FIND_SEARCH),
            click(ids::CANCEL),
            typ(ids::CONFIRM_REFERENCE, &r),
            click(ids::CONFIRM_CANCEL),
        ] {
            s.apply(&a).unwrap();
        }
        assert_eq!(s.screen(), Screen::Done);
        assert!(s.store().is_empty());
        assert_eq!(s.apply(&click(ids::DONE_MESSAGE)), Err(EnvError::ScenarioFinished));
    }

    #[test]
    fn simulator_isolates_scenarios() {
        let sim = CrmSimulator::new();
        let a = sim.generate(1, Some(ScenarioKind::FindFlight));
        let b = sim.generate(2, Some(ScenarioKind::FindFlight));
        sim.apply(&a.id, &typ(ids::FLIGHT_FROM, "JFK")).unwrap();
        assert_eq!(sim.observe(&b.id).unwrap().element(ids::FLIGHT_FROM).unwrap().text, "");
        assert_eq!(sim.observe("nope"), Err(EnvError::UnknownScenario("nope".into())));
        let fresh = sim.reset(&a.id).unwrap();
        assert_eq!(fresh.element(ids::FLIGHT_FROM).unwrap().text, "");
    }
}
