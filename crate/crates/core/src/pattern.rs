//! Content-based subscription patterns.
//!
//! A [`Pattern`] is a conjunction of optional filters. Its JSON encoding is
//! used verbatim by the gateway (`/stream?pattern=...`):
//!
//! ```json
//! {"etype":["RadiationMeasure"],"where":[["value",">",2.0]],
//!  "geo":{"lat":44.1,"lon":0.84,"radius_km":5.0},"source":["rsn-001"]}
//! ```
//!
//! Every key is optional; `{}` matches every event.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{Event, Scalar};
use crate::geo::GeoPoint;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("cannot compare {attr}: {left} {op} {right}")]
    TypeMismatch {
        attr: String,
        op: Op,
        left: &'static str,
        right: &'static str,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("malformed predicate {0:?}")]
pub struct PredicateParseError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl Op {
    pub fn symbol(self) -> &'static str {
        match self {
            Op::Eq => "==",
            Op::Ne => "!=",
            Op::Lt => "<",
            Op::Le => "<=",
            Op::Gt => ">",
            Op::Ge => ">=",
        }
    }

    fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            Op::Eq => ord == Equal,
            Op::Ne => ord != Equal,
            Op::Lt => ord == Less,
            Op::Le => ord != Greater,
            Op::Gt => ord == Greater,
            Op::Ge => ord != Less,
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// `attr op value`, encoded on the wire as `[attr, op, value]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "(String, Op, Scalar)", into = "(String, Op, Scalar)")]
pub struct Predicate {
    pub attr: String,
    pub op: Op,
    pub value: Scalar,
}

impl From<(String, Op, Scalar)> for Predicate {
    fn from((attr, op, value): (String, Op, Scalar)) -> Self {
        Predicate { attr, op, value }
    }
}

impl From<Predicate> for (String, Op, Scalar) {
    fn from(p: Predicate) -> Self {
        (p.attr, p.op, p.value)
    }
}

impl Predicate {
    pub fn new(attr: &str, op: Op, value: impl Into<Scalar>) -> Self {
        Predicate { attr: attr.to_string(), op, value: value.into() }
    }

    /// Evaluates against one attribute value. Numbers and strings support
    /// every operator; booleans only `==` and `!=`.
    pub fn test(&self, actual: &Scalar) -> Result<bool, MatchError> {
        let mismatch = || MatchError::TypeMismatch {
            attr: self.attr.clone(),
            op: self.op,
            left: actual.kind(),
            right: self.value.kind(),
        };
        let ord = match (actual, &self.value) {
            (Scalar::Num(a), Scalar::Num(b)) => a.partial_cmp(b).ok_or_else(mismatch)?,
            (Scalar::Str(a), Scalar::Str(b)) => a.cmp(b),
            (Scalar::Bool(a), Scalar::Bool(b)) if matches!(self.op, Op::Eq | Op::Ne) => a.cmp(b),
            _ => return Err(mismatch()),
        };
        Ok(self.op.holds(ord))
    }
}

/// Text form used by the CLI and the history endpoint: `value>2.0`,
/// `kind==completion`, `flag!=true`.
impl FromStr for Predicate {
    type Err = PredicateParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        const OPS: [(&str, Op); 6] = [
            (">=", Op::Ge),
            ("<=", Op::Le),
            ("==", Op::Eq),
            ("!=", Op::Ne),
            (">", Op::Gt),
            ("<", Op::Lt),
        ];
        for (sym, op) in OPS {
            if let Some(idx) = s.find(sym) {
                let attr = s[..idx].trim();
                let value = s[idx + sym.len()..].trim();
                if attr.is_empty() || value.is_empty() {
                    break;
                }
                return Ok(Predicate { attr: attr.to_string(), op, value: Scalar::parse_literal(value) });
            }
        }
        Err(PredicateParseError(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoFilter {
    pub lat: f64,
    pub lon: f64,
    pub radius_km: f64,
}

impl GeoFilter {
    pub fn center(&self) -> GeoPoint {
        GeoPoint::new(self.lat, self.lon)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pattern {
    #[serde(default, rename = "etype", skip_serializing_if = "Option::is_none")]
    pub etype_filter: Option<BTreeSet<String>>,
    #[serde(default, rename = "where", skip_serializing_if = "Vec::is_empty")]
    pub predicates: Vec<Predicate>,
    #[serde(default, rename = "geo", skip_serializing_if = "Option::is_none")]
    pub geo_filter: Option<GeoFilter>,
    #[serde(default, rename = "source", skip_serializing_if = "Option::is_none")]
    pub source_filter: Option<BTreeSet<String>>,
}

impl Pattern {
    pub fn any() -> Self {
        Pattern::default()
    }

    pub fn etype(etype: &str) -> Self {
        Pattern::any().with_etypes([etype])
    }

    pub fn with_etypes<'a>(mut self, etypes: impl IntoIterator<Item = &'a str>) -> Self {
        self.etype_filter = Some(etypes.into_iter().map(str::to_string).collect());
        self
    }

    pub fn with_sources<'a>(mut self, sources: impl IntoIterator<Item = &'a str>) -> Self {
        self.source_filter = Some(sources.into_iter().map(str::to_string).collect());
        self
    }

    pub fn with_predicate(mut self, predicate: Predicate) -> Self {
        self.predicates.push(predicate);
        self
    }

    pub fn within(mut self, center: GeoPoint, radius_km: f64) -> Self {
        self.geo_filter = Some(GeoFilter { lat: center.lat, lon: center.lon, radius_km });
        self
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("pattern serializes")
    }

    /// Conjunction of every present filter. Filters are checked in the order
    /// etype, source, geo, predicates and evaluation stops at the first
    /// failing one. An event without the named attribute (or without a
    /// position, for the geo filter) does not match.
    pub fn matches(&self, event: &Event) -> Result<bool, MatchError> {
        if let Some(etypes) = &self.etype_filter {
            if !etypes.contains(&event.etype) {
                return Ok(false);
            }
        }
        if let Some(sources) = &self.source_filter {
            if !sources.contains(&event.source) {
                return Ok(false);
            }
        }
        if let Some(filter) = &self.geo_filter {
            match &event.geo {
                Some(pos) if filter.center().distance_km(pos) <= filter.radius_km => {}
                _ => return Ok(false),
            }
        }
        for predicate in &self.predicates {
            match event.attrs.get(&predicate.attr) {
                Some(actual) if predicate.test(actual)? => {}
                _ => return Ok(false),
            }
        }
        Ok(true)
    }
}
