use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::event::{etype, Attrs, Event};
use crate::time::SimTime;

use super::OrchestratorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    Strategic,
    Operational,
    Support,
}

pub const ROLES: [&str; 8] = [
    "RepresentativeNationalAuthority",
    "MF",
    "RSN",
    "PoliceRepresentative",
    "OfficeOfInfrastructureRepresentative",
    "OfficeOfInfrastructureFieldTeam",
    "IRSN",
    "PlaySystem",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivityDef {
    pub id: String,
    pub lane: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planned_duration: Option<SimTime>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub start: bool,
}

/// What fires a transition: an event (optionally constrained by attribute
/// equalities) or a choice on a decision point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum Trigger {
    Event {
        event: String,
        #[serde(default, rename = "where", skip_serializing_if = "BTreeMap::is_empty")]
        conditions: Attrs,
    },
    Decision { decision: String, option: String },
}

impl Trigger {
    pub fn etype(&self) -> &str {
        match self {
            Trigger::Event { event, .. } => event,
            Trigger::Decision { .. } => etype::DECISION_CHOICE,
        }
    }

    pub fn matches(&self, event: &Event) -> bool {
        match self {
            Trigger::Event { event: wanted, conditions } => {
                event.etype == *wanted && conditions.iter().all(|(k, v)| event.attr(k) == Some(v))
            }
            Trigger::Decision { decision, option } => {
                event.etype == etype::DECISION_CHOICE
                    && event.text("point") == Some(decision)
                    && event.text("option") == Some(option)
            }
        }
    }
}

/// An event a transition emits; `copy` names trigger attributes carried over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitTemplate {
    pub etype: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attrs: Attrs,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub copy: Vec<String>,
}

fn yes() -> bool {
    true
}

fn is_true(v: &bool) -> bool {
    *v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionDef {
    pub from: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<String>,
    pub on: Trigger,
    /// Whether `from` finishes when the transition fires.
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub finish: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub emit: Vec<EmitTemplate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessDefinition {
    pub id: String,
    pub level: Level,
    pub lanes: Vec<String>,
    /// Start a fresh instance whenever no instance has an ongoing activity.
    #[serde(default)]
    pub restart: bool,
    pub activities: Vec<ActivityDef>,
    #[serde(default)]
    pub transitions: Vec<TransitionDef>,
}

impl ProcessDefinition {
    pub fn from_toml(text: &str) -> Result<Self, OrchestratorError> {
        let def: ProcessDefinition = toml::from_str(text).map_err(|e| OrchestratorError::Parse(e.to_string()))?;
        def.validate()?;
        Ok(def)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("process definitions serialize")
    }

    pub fn activity(&self, id: &str) -> Option<&ActivityDef> {
        self.activities.iter().find(|a| a.id == id)
    }

    pub fn start_activity(&self) -> &ActivityDef {
        self.activities.iter().find(|a| a.start).expect("validated definition has a start")
    }

    /// Activities without outgoing transitions complete as soon as they start.
    pub fn is_terminal(&self, activity: &str) -> bool {
        !self.transitions.iter().any(|t| t.from == activity)
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let mut problems = Vec::new();
        if self.id.is_empty() {
            problems.push("empty process id".to_string());
        }
        for lane in &self.lanes {
            if !ROLES.contains(&lane.as_str()) {
                problems.push(format!("unknown role {lane:?}"));
            }
        }
        let mut ids = BTreeSet::new();
        for a in &self.activities {
            if !ids.insert(a.id.as_str()) {
                problems.push(format!("duplicate activity {:?}", a.id));
            }
            if !self.lanes.contains(&a.lane) {
                problems.push(format!("activity {:?} is in undeclared lane {:?}", a.id, a.lane));
            }
        }
        match self.activities.iter().filter(|a| a.start).count() {
            1 => {}
            n => problems.push(format!("expected exactly one start activity, found {n}")),
        }
        for (i, t) in self.transitions.iter().enumerate() {
            if !ids.contains(t.from.as_str()) {
                problems.push(format!("transition {i} starts at undeclared activity {:?}", t.from));
            }
            if let Some(to) = &t.to {
                if !ids.contains(to.as_str()) {
                    problems.push(format!("transition {i} leads to undeclared activity {to:?}"));
                }
                if *to == t.from {
                    problems.push(format!("transition {i} loops on {to:?}"));
                }
            } else if !t.finish {
                problems.push(format!("transition {i} neither finishes nor moves"));
            }
            if t.emit.iter().any(|e| e.etype.is_empty()) {
                problems.push(format!("transition {i} emits an event without etype"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(OrchestratorError::MalformedProcess(problems))
        }
    }
}
