use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dcep::{RuleConfig, Thresholds};
use crate::event::Attrs;
use crate::geo::GeoPoint;
use crate::orchestrator::{ProcessDefinition, Trigger};
use crate::sar::GapKind;
use crate::time::{SimTime, SECOND};

use super::ScenarioError;

fn default_tick() -> SimTime {
    SimTime(30 * SECOND)
}

fn default_cadence() -> SimTime {
    SimTime(30 * SECOND)
}

fn default_shards() -> usize {
    4
}

fn default_t0() -> String {
    "t0".into()
}

/// A complete scenario: sensors, scripted inputs, decision points and the
/// checks a run is expected to pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub name: String,
    /// Free-form label for the epoch all timestamps are relative to.
    #[serde(default = "default_t0")]
    pub t0: String,
    pub end: SimTime,
    #[serde(default = "default_tick")]
    pub tick: SimTime,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_shards")]
    pub shards: usize,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub rules: RuleConfig,
    #[serde(default)]
    pub inventory: BTreeMap<String, u32>,
    #[serde(default)]
    pub lead_time: Option<SimTime>,
    /// Process definition files, relative to the scenario file.
    #[serde(default)]
    pub processes: Vec<String>,
    #[serde(skip)]
    pub process_defs: Vec<ProcessDefinition>,
    #[serde(default)]
    pub sensor_groups: Vec<SensorGroupSpec>,
    #[serde(default)]
    pub injections: Vec<Injection>,
    #[serde(default)]
    pub decision_points: Vec<DecisionPointSpec>,
    #[serde(default)]
    pub proposal_policy: Vec<ProposalPolicy>,
    /// Named storyline periods.
    #[serde(default)]
    pub periods: Vec<PhaseSpec>,
    /// Windows over which event rates are reported.
    #[serde(default)]
    pub phases: Vec<PhaseSpec>,
    #[serde(default)]
    pub milestones: Vec<MilestoneSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SensorKind {
    Radiation,
    WeatherSpeed,
    WeatherDirection,
    /// A station reporting both speed and direction.
    Weather,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ring {
    pub center: GeoPoint,
    pub radius_km: f64,
    /// Bearing range in degrees, clockwise from north; whole circle if absent.
    #[serde(default)]
    pub sector: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ramp {
    pub v0: f64,
    /// Units per minute.
    pub slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Constant(f64),
    Ramp(Ramp),
}

impl Shape {
    /// Value `elapsed_ms` after the shape starts.
    pub fn at(&self, elapsed_ms: u64) -> f64 {
        match *self {
            Shape::Constant(v) => v,
            Shape::Ramp(r) => r.v0 + r.slope * elapsed_ms as f64 / crate::time::MINUTE as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Override {
    /// 1-based sensor numbers within the group.
    pub sensors: Vec<u32>,
    #[serde(default)]
    pub constant: Option<f64>,
    #[serde(default)]
    pub ramp: Option<Ramp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub from: SimTime,
    /// Holds the value reached at `until` if the next segment starts later.
    #[serde(default)]
    pub until: Option<SimTime>,
    #[serde(default)]
    pub constant: Option<f64>,
    #[serde(default)]
    pub ramp: Option<Ramp>,
    #[serde(default)]
    pub overrides: Vec<Override>,
}

fn shape_of(constant: Option<f64>, ramp: Option<Ramp>, path: &str) -> Result<Shape, ScenarioError> {
    match (constant, ramp) {
        (Some(v), None) => Ok(Shape::Constant(v)),
        (None, Some(r)) => Ok(Shape::Ramp(r)),
        _ => Err(ScenarioError::Semantic(format!("{path}: exactly one of constant or ramp is required"))),
    }
}

impl Segment {
    pub fn shape(&self) -> Shape {
        shape_of(self.constant, self.ramp, "").expect("validated segment")
    }

    pub fn shape_for(&self, sensor: u32) -> Shape {
        self.overrides
            .iter()
            .find(|o| o.sensors.contains(&sensor))
            .map(|o| shape_of(o.constant, o.ramp, "").expect("validated override"))
            .unwrap_or_else(|| self.shape())
    }
}

/// Piecewise value schedule for a sensor group.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueProgram<'a> {
    segments: &'a [Segment],
}

impl<'a> ValueProgram<'a> {
    pub fn new(segments: &'a [Segment]) -> Self {
        ValueProgram { segments }
    }

    pub fn validate(segments: &[Segment], path: &str) -> Result<(), ScenarioError> {
        let Some(first) = segments.first() else {
            return Err(ScenarioError::Semantic(format!("{path}: program is empty")));
        };
        if first.from.ms() != 0 {
            return Err(ScenarioError::Semantic(format!("{path}: program must start at t0")));
        }
        for (i, s) in segments.iter().enumerate() {
            let here = format!("{path}[{i}]");
            shape_of(s.constant, s.ramp, &here)?;
            for (j, o) in s.overrides.iter().enumerate() {
                shape_of(o.constant, o.ramp, &format!("{here}.overrides[{j}]"))?;
                if o.sensors.contains(&0) {
                    return Err(ScenarioError::Semantic(format!("{here}.overrides[{j}]: sensors are numbered from 1")));
                }
            }
            if let Some(until) = s.until {
                if until <= s.from {
                    return Err(ScenarioError::Semantic(format!("{here}: until must be after from")));
                }
            }
            if let Some(next) = segments.get(i + 1) {
                let end = s.until.unwrap_or(next.from);
                if next.from <= s.from || end > next.from {
                    return Err(ScenarioError::Semantic(format!("{here}: overlaps the next segment")));
                }
            }
        }
        Ok(())
    }

    /// Value for sensor number `sensor` at `now`, rounded to 3 decimals.
    pub fn value(&self, sensor: u32, now: u64) -> f64 {
        let seg = self.segments.iter().rev().find(|s| s.from.ms() <= now).unwrap_or(&self.segments[0]);
        let mut t = now.saturating_sub(seg.from.ms());
        if let Some(until) = seg.until {
            t = t.min(until.ms() - seg.from.ms());
        }
        (seg.shape_for(sensor).at(t) * 1000.0).round() / 1000.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorGroupSpec {
    pub id: String,
    pub kind: SensorKind,
    /// Sensors active from t0.
    #[serde(default)]
    pub count: u32,
    #[serde(default = "default_cadence")]
    pub cadence: SimTime,
    pub ring: Ring,
    /// Radiation value, wind speed, or wind direction for a direction-only group.
    pub program: Vec<Segment>,
    /// Direction program for combined weather stations.
    #[serde(default)]
    pub direction: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    Activate { group: String, count: u32 },
    Reserve { resource: String, quantity: u32, holder: String },
    FieldLoss { resource: String, quantity: u32 },
    Release { resource: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub etype: String,
    pub source: String,
    #[serde(default)]
    pub attrs: Attrs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Injection {
    pub at: SimTime,
    #[serde(default)]
    pub event: Option<EventSpec>,
    #[serde(default)]
    pub action: Option<Action>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionSpec {
    pub id: String,
    pub label: String,
    /// Copied onto the DecisionChoice event.
    #[serde(default)]
    pub attrs: Attrs,
    /// Structured plan, carried as a canonical JSON string attribute `plan`.
    #[serde(default)]
    pub plan: Option<serde_json::Value>,
    #[serde(default)]
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionPointSpec {
    pub id: String,
    pub role: String,
    pub prompt: String,
    pub trigger: Trigger,
    /// Time between the trigger and the point being put to the decider.
    #[serde(default)]
    pub delay: SimTime,
    /// Option taken in scripted mode.
    #[serde(default)]
    pub choice: Option<String>,
    pub options: Vec<OptionSpec>,
}

impl DecisionPointSpec {
    pub fn option(&self, id: &str) -> Option<&OptionSpec> {
        self.options.iter().find(|o| o.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalPolicy {
    pub gap: GapKind,
    pub choose: String,
    #[serde(default)]
    pub delay: SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub name: String,
    pub from: SimTime,
    pub to: SimTime,
}

/// The first event of `etype` matching `where` must carry ts == `at`, and
/// if `after` names another milestone, come after that milestone's event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MilestoneSpec {
    pub name: String,
    pub etype: String,
    pub at: SimTime,
    #[serde(default, rename = "where")]
    pub conditions: Attrs,
    #[serde(default)]
    pub after: Option<String>,
}

fn location(text: &str, err: &toml::de::Error) -> String {
    match err.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
            format!("line {line}, column {col}")
        }
        None => "document".into(),
    }
}

impl ScenarioScript {
    /// Parses and validates a scenario document. `resolve` maps each entry
    /// of `processes` to the text of that definition.
    pub fn load(
        text: &str,
        resolve: &dyn Fn(&str) -> Result<String, std::io::Error>,
    ) -> Result<ScenarioScript, ScenarioError> {
        let mut script: ScenarioScript = toml::from_str(text).map_err(|e| ScenarioError::Schema {
            location: location(text, &e),
            message: e.message().trim().to_string(),
        })?;
        for path in &script.processes {
            let body = resolve(path).map_err(|e| ScenarioError::Io(format!("{path}: {e}")))?;
            let def = ProcessDefinition::from_toml(&body)
                .map_err(|e| ScenarioError::Semantic(format!("{path}: {e}")))?;
            script.process_defs.push(def);
        }
        script.validate()?;
        Ok(script)
    }

    pub fn load_file(path: &std::path::Path) -> Result<ScenarioScript, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        let dir = path.parent().map(|p| p.to_path_buf()).unwrap_or_default();
        ScenarioScript::load(&text, &|rel| std::fs::read_to_string(dir.join(rel)))
    }

    pub fn group(&self, id: &str) -> Option<&SensorGroupSpec> {
        self.sensor_groups.iter().find(|g| g.id == id)
    }

    pub fn decision_point(&self, id: &str) -> Option<&DecisionPointSpec> {
        self.decision_points.iter().find(|d| d.id == id)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Semantic(m));
        if self.tick.ms() == 0 {
            return bad("tick must be positive".into());
        }
        if self.shards == 0 {
            return bad("shards must be at least 1".into());
        }
        self.thresholds.validate().map_err(|e| ScenarioError::Semantic(e.to_string()))?;
        self.rules.validate().map_err(|e| ScenarioError::Semantic(e.to_string()))?;
        let mut groups = BTreeSet::new();
        for g in &self.sensor_groups {
            let path = format!("sensor_groups.{}", g.id);
            if !groups.insert(g.id.as_str()) {
                return bad(format!("{path}: duplicate group"));
            }
            if g.cadence.ms() == 0 || g.cadence.ms() % self.tick.ms() != 0 {
                return bad(format!("{path}: cadence must be a positive multiple of the tick"));
            }
            if !g.ring.center.is_valid() || g.ring.radius_km.is_nan() || g.ring.radius_km < 0.0 {
                return bad(format!("{path}: invalid ring"));
            }
            ValueProgram::validate(&g.program, &format!("{path}.program"))?;
            if g.kind == SensorKind::Weather {
                ValueProgram::validate(&g.direction, &format!("{path}.direction"))?;
            } else if !g.direction.is_empty() {
                return bad(format!("{path}: direction program only applies to Weather groups"));
            }
        }
        let check_action = |a: &Action, path: &str| -> Result<(), ScenarioError> {
            match a {
                Action::Activate { group, count } => {
                    if !groups.contains(group.as_str()) {
                        return Err(ScenarioError::Semantic(format!("{path}: unknown group {group}")));
                    }
                    if *count == 0 {
                        return Err(ScenarioError::Semantic(format!("{path}: activation count must be at least 1")));
                    }
                }
                Action::Reserve { resource, .. } | Action::FieldLoss { resource, .. } | Action::Release { resource } => {
                    if !self.inventory.contains_key(resource) {
                        return Err(ScenarioError::Semantic(format!("{path}: unknown resource {resource}")));
                    }
                }
            }
            Ok(())
        };
        for (i, inj) in self.injections.iter().enumerate() {
            let path = format!("injections[{i}]");
            if inj.at > self.end {
                return bad(format!("{path}: after the end of the scenario"));
            }
            if inj.at.ms() % self.tick.ms() != 0 {
                return bad(format!("{path}: not on a tick boundary"));
            }
            match (&inj.event, &inj.action) {
                (Some(e), None) if !e.etype.is_empty() => {}
                (None, Some(a)) => check_action(a, &path)?,
                _ => return bad(format!("{path}: needs exactly one of event or action")),
            }
        }
        let mut points = BTreeSet::new();
        for d in &self.decision_points {
            let path = format!("decision_points.{}", d.id);
            if !points.insert(d.id.as_str()) {
                return bad(format!("{path}: duplicate decision point"));
            }
            if d.options.is_empty() {
                return bad(format!("{path}: no options"));
            }
            let mut ids = BTreeSet::new();
            for o in &d.options {
                if !ids.insert(o.id.as_str()) {
                    return bad(format!("{path}: duplicate option {}", o.id));
                }
                for a in &o.actions {
                    check_action(a, &format!("{path}.{}", o.id))?;
                }
            }
            if let Some(choice) = &d.choice {
                if !ids.contains(choice.as_str()) {
                    return bad(format!("{path}: scripted choice {choice} is not an option"));
                }
            }
        }
        for p in self.periods.iter().chain(&self.phases) {
            if p.from >= p.to || p.to > SimTime(self.end.ms() + self.tick.ms()) {
                return bad(format!("phase {}: bad range", p.name));
            }
        }
        let mut names = BTreeSet::new();
        for m in &self.milestones {
            if let Some(after) = &m.after {
                if !names.contains(after.as_str()) {
                    return bad(format!("milestone {}: after must name an earlier milestone", m.name));
                }
            }
            if !names.insert(m.name.as_str()) {
                return bad(format!("milestone {}: duplicate", m.name));
            }
        }
        Ok(())
    }
}
