//! Event data model, canonical line format and triple view.
//!
//! The wire format is one JSON object per line with keys in the fixed order
//! `seq, id, etype, source, ts, attrs, geo`, attribute keys sorted, no
//! insignificant whitespace and absent optional fields omitted. Numbers use
//! the shortest decimal representation that round-trips.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::geo::GeoPoint;

pub mod etype {
    pub const RADIATION_MEASURE: &str = "RadiationMeasure";
    pub const WIND_SPEED_MEASURE: &str = "WindSpeedMeasure";
    pub const WIND_DIRECTION_MEASURE: &str = "WindDirectionMeasure";
    pub const ALERT_RSN: &str = "AlertRSN";
    pub const ALERT_MF: &str = "AlertMF";
    pub const REPORT: &str = "Report";
    pub const SUGGEST_CONFINEMENT: &str = "SuggestConfinement";
    pub const CONFINEMENT_DECISION: &str = "ConfinementDecision";
    pub const CONFINEMENT_PLAN_VALIDATED: &str = "ConfinementPlanValidated";
    pub const ALERT_POLICE_REPRESENTATIVE: &str = "AlertPoliceRepresentative";
    pub const ALERT_OFFICE_OF_INFRASTRUCTURE: &str = "AlertOfficeOfInfrastructure";
    pub const CIRCULATION_PLAN: &str = "CirculationPlan";
    pub const FIELD_ALERT: &str = "FieldAlert";
    pub const ACTIVITY_STATUS_CHANGE: &str = "ActivityStatusChange";
    pub const RESOURCE_REQUEST: &str = "ResourceRequest";
    pub const RESERVATION_CONFIRMED: &str = "ReservationConfirmed";
    pub const RESOURCES_AVAILABLE: &str = "ResourcesAvailable";
    pub const INVENTORY_UPDATE: &str = "InventoryUpdate";
    pub const TASK_ASSIGNMENT: &str = "TaskAssignment";
    pub const REPORT_REQUEST: &str = "ReportRequest";
    pub const ADAPTATION_PROPOSAL: &str = "AdaptationProposalEvent";
    pub const DECISION_CHOICE: &str = "DecisionChoice";
    pub const DECISION_POINT: &str = "DecisionPointIssued";

    /// Sensor measurement types, the ones counted by the event-rate metrics.
    pub const MEASURES: [&str; 3] = [RADIATION_MEASURE, WIND_SPEED_MEASURE, WIND_DIRECTION_MEASURE];
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EventError {
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("decode error at byte {offset}: {message}")]
    Decode { offset: usize, message: String },
}

/// Attribute value. Only scalars are allowed; structured payloads travel as
/// a string attribute holding a canonical JSON document.
#[derive(Debug, Clone, PartialEq)]
pub enum Scalar {
    Str(String),
    Num(f64),
    Bool(bool),
}

impl Scalar {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Scalar::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Scalar::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Scalar::Str(_) => "string",
            Scalar::Num(_) => "number",
            Scalar::Bool(_) => "boolean",
        }
    }

    /// Parses a loosely typed literal: number, then boolean, else string.
    pub fn parse_literal(text: &str) -> Scalar {
        if let Ok(v) = text.parse::<f64>() {
            if v.is_finite() {
                return Scalar::Num(v);
            }
        }
        match text {
            "true" => Scalar::Bool(true),
            "false" => Scalar::Bool(false),
            _ => Scalar::Str(text.trim_matches('"').to_string()),
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Str(s) => f.write_str(s),
            Scalar::Num(v) => write!(f, "{v}"),
            Scalar::Bool(b) => write!(f, "{b}"),
        }
    }
}

impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::Num(v)
    }
}
impl From<u64> for Scalar {
    fn from(v: u64) -> Self {
        Scalar::Num(v as f64)
    }
}
impl From<usize> for Scalar {
    fn from(v: usize) -> Self {
        Scalar::Num(v as f64)
    }
}
impl From<bool> for Scalar {
    fn from(v: bool) -> Self {
        Scalar::Bool(v)
    }
}
impl From<&str> for Scalar {
    fn from(v: &str) -> Self {
        Scalar::Str(v.to_string())
    }
}
impl From<String> for Scalar {
    fn from(v: String) -> Self {
        Scalar::Str(v)
    }
}

impl TryFrom<serde_json::Value> for Scalar {
    type Error = EventError;

    fn try_from(value: serde_json::Value) -> Result<Self, Self::Error> {
        use serde_json::Value;
        match value {
            Value::String(s) => Ok(Scalar::Str(s)),
            Value::Bool(b) => Ok(Scalar::Bool(b)),
            Value::Number(n) => n
                .as_f64()
                .map(Scalar::Num)
                .ok_or_else(|| EventError::InvalidEvent(format!("number {n} not representable"))),
            other => Err(EventError::InvalidEvent(format!(
                "attribute values must be scalar, got {other}"
            ))),
        }
    }
}

impl Serialize for Scalar {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Scalar::Str(s) => serializer.serialize_str(s),
            Scalar::Num(v) => serializer.serialize_f64(*v),
            Scalar::Bool(b) => serializer.serialize_bool(*b),
        }
    }
}

impl<'de> Deserialize<'de> for Scalar {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct Visitor;
        impl de::Visitor<'_> for Visitor {
            type Value = Scalar;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a string, number or boolean")
            }
            fn visit_bool<E: de::Error>(self, v: bool) -> Result<Scalar, E> {
                Ok(Scalar::Bool(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Scalar, E> {
                Ok(Scalar::Num(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Scalar, E> {
                Ok(Scalar::Num(v as f64))
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Scalar, E> {
                Ok(Scalar::Num(v))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Scalar, E> {
                Ok(Scalar::Str(v.to_string()))
            }
            fn visit_string<E: de::Error>(self, v: String) -> Result<Scalar, E> {
                Ok(Scalar::Str(v))
            }
        }
        deserializer.deserialize_any(Visitor)
    }
}

pub type Attrs = BTreeMap<String, Scalar>;

/// A typed, timestamped fact flowing through the platform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    /// Global publish sequence number; `None` until the broker accepts it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    pub id: String,
    pub etype: String,
    pub source: String,
    /// Simulated milliseconds since t0.
    pub ts: u64,
    #[serde(default)]
    pub attrs: Attrs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geo: Option<GeoPoint>,
}

static NEXT_EVENT_ID: AtomicU64 = AtomicU64::new(1);

/// Creates an event with a fresh process-unique id and no sequence number.
pub fn make_event(
    etype: &str,
    source: &str,
    ts: i64,
    attrs: Attrs,
    geo: Option<GeoPoint>,
) -> Result<Event, EventError> {
    let ts = u64::try_from(ts)
        .map_err(|_| EventError::InvalidEvent(format!("negative timestamp {ts}")))?;
    let event = Event {
        seq: None,
        id: format!("ev-{}", NEXT_EVENT_ID.fetch_add(1, Ordering::Relaxed)),
        etype: etype.to_string(),
        source: source.to_string(),
        ts,
        attrs,
        geo,
    };
    event.validate()?;
    Ok(event)
}

impl Event {
    /// Shorthand for components that build events from known-good parts.
    pub fn new(etype: &str, source: &str, ts: u64, attrs: Attrs) -> Event {
        Event {
            seq: None,
            id: format!("ev-{}", NEXT_EVENT_ID.fetch_add(1, Ordering::Relaxed)),
            etype: etype.to_string(),
            source: source.to_string(),
            ts,
            attrs,
            geo: None,
        }
    }

    pub fn with_geo(mut self, geo: GeoPoint) -> Event {
        self.geo = Some(geo);
        self
    }

    pub fn validate(&self) -> Result<(), EventError> {
        if self.etype.is_empty() {
            return Err(EventError::InvalidEvent("empty etype".into()));
        }
        if self.id.is_empty() {
            return Err(EventError::InvalidEvent("empty id".into()));
        }
        for (key, value) in &self.attrs {
            if let Scalar::Num(v) = value {
                if !v.is_finite() {
                    return Err(EventError::InvalidEvent(format!("attribute {key} is not finite")));
                }
            }
        }
        if let Some(geo) = &self.geo {
            if !geo.is_valid() {
                return Err(EventError::InvalidEvent(format!("geo out of range: {geo:?}")));
            }
        }
        Ok(())
    }

    pub fn attr(&self, name: &str) -> Option<&Scalar> {
        self.attrs.get(name)
    }

    pub fn num(&self, name: &str) -> Option<f64> {
        self.attrs.get(name).and_then(Scalar::as_f64)
    }

    pub fn text(&self, name: &str) -> Option<&str> {
        self.attrs.get(name).and_then(Scalar::as_str)
    }

    /// Delivery / history ordering key.
    pub fn order_key(&self) -> (u64, &str, u64) {
        (self.ts, &self.source, self.seq.unwrap_or(0))
    }
}

/// Serializes an event as one canonical line (without the trailing LF).
pub fn encode_event(event: &Event) -> Result<String, EventError> {
    event.validate()?;
    serde_json::to_string(event).map_err(|e| EventError::InvalidEvent(e.to_string()))
}

/// Parses one line of the canonical format. A single trailing LF is accepted.
pub fn decode_event(line: &str) -> Result<Event, EventError> {
    let body = line.strip_suffix('\n').unwrap_or(line);
    let event: Event = serde_json::from_str(body).map_err(|e| EventError::Decode {
        offset: byte_offset(body, e.line(), e.column()),
        message: e.to_string(),
    })?;
    event.validate()?;
    Ok(event)
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

/// One (subject, predicate, object) statement of the triple view.
#[derive(Debug, Clone, PartialEq)]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: Scalar,
}

/// Flattens an event into triples: `etype`, `source`, `ts`, then `geo` (as
/// `"lat,lon"`) when present, then one triple per attribute in key order.
pub fn as_triples(event: &Event) -> Vec<Triple> {
    let triple = |predicate: &str, object: Scalar| Triple {
        subject: event.id.clone(),
        predicate: predicate.to_string(),
        object,
    };
    let mut out = Vec::with_capacity(event.attrs.len() + 4);
    out.push(triple("etype", Scalar::Str(event.etype.clone())));
    out.push(triple("source", Scalar::Str(event.source.clone())));
    out.push(triple("ts", Scalar::Num(event.ts as f64)));
    if let Some(geo) = &event.geo {
        out.push(triple("geo", Scalar::Str(format!("{},{}", geo.lat, geo.lon))));
    }
    for (key, value) in &event.attrs {
        out.push(triple(key, value.clone()));
    }
    out
}

/// Deterministic id source for replayable runs.
#[derive(Debug, Clone)]
pub struct IdGen {
    seed: u64,
    next: u64,
}

impl IdGen {
    pub fn new(seed: u64) -> Self {
        IdGen { seed, next: 1 }
    }

    pub fn next_id(&mut self) -> String {
        let n = self.next;
        self.next += 1;
        format!("{:08x}-{n:06}", (splitmix64(self.seed) >> 32) as u32)
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Builds an [`Attrs`] map from `key => value` pairs.
#[macro_export]
macro_rules! attrs {
    () => { $crate::event::Attrs::new() };
    ($($key:expr => $value:expr),+ $(,)?) => {{
        let mut map = $crate::event::Attrs::new();
        $( map.insert(($key).to_string(), $crate::event::Scalar::from($value)); )+
        map
    }};
}
