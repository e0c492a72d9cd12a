//! Adaptation recommender: compares planned against observed state on its
//! ticks and proposes alternatives when they diverge.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attrs;
use crate::event::{etype, Event, Scalar};
use crate::orchestrator::{ActivityStatus, Orchestrator, OrchestratorError, OrchestratorSnapshot};

pub const SAR_SOURCE: &str = "sar";
pub const FIELD_TEAM: &str = "OfficeOfInfrastructureFieldTeam";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SarError {
    #[error("unknown proposal {0}")]
    UnknownProposal(String),
    #[error("proposal {0} is already closed")]
    ProposalClosed(String),
    #[error("alternative {alternative} is not offered by {proposal}")]
    UnknownAlternative { proposal: String, alternative: String },
    #[error("unknown gap kind {0:?}")]
    UnknownGapKind(String),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
}

/// What the plan says: requested quantities and intended statuses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalModel {
    pub reservations: BTreeMap<String, u32>,
    pub activities: BTreeMap<String, ActivityStatus>,
}

/// What the field shows: committed quantities and current statuses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SituationalModel {
    pub reservations: BTreeMap<String, u32>,
    pub activities: BTreeMap<String, ActivityStatus>,
}

/// Activity key used in the models: `instance/activity`.
pub fn activity_key(instance: &str, activity: &str) -> String {
    format!("{instance}/{activity}")
}

pub fn snapshot_models(snapshot: &OrchestratorSnapshot, now: u64) -> (TheoreticalModel, SituationalModel) {
    let mut theory = TheoreticalModel::default();
    let mut field = SituationalModel::default();
    for r in snapshot.reservations.iter().filter(|r| r.active) {
        theory.reservations.insert(r.id.clone(), r.requested);
        field.reservations.insert(r.id.clone(), r.committed);
    }
    for inst in &snapshot.instances {
        for a in &inst.activities {
            let key = activity_key(&inst.id, &a.id);
            let intended = match a.intended_finish_ts {
                Some(t) if now > t => ActivityStatus::Finished,
                _ => a.status,
            };
            theory.activities.insert(key.clone(), intended);
            field.activities.insert(key, a.status);
        }
    }
    (theory, field)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GapKind {
    ResourceGap,
    StatusGap,
}

impl GapKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GapKind::ResourceGap => "ResourceGap",
            GapKind::StatusGap => "StatusGap",
        }
    }
}

impl FromStr for GapKind {
    type Err = SarError;

    fn from_str(s: &str) -> Result<Self, SarError> {
        match s {
            "ResourceGap" => Ok(GapKind::ResourceGap),
            "StatusGap" => Ok(GapKind::StatusGap),
            other => Err(SarError::UnknownGapKind(other.into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GapValue {
    Quantity(u32),
    Status(ActivityStatus),
}

impl fmt::Display for GapValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GapValue::Quantity(q) => write!(f, "{q}"),
            GapValue::Status(s) => f.write_str(s.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gap {
    pub kind: GapKind,
    pub subject: String,
    pub expected: GapValue,
    pub actual: GapValue,
    pub detected_ts: u64,
}

/// One gap per divergent reservation or activity: reservations first, then
/// activities, each in id order.
pub fn detect_gaps(theory: &TheoreticalModel, field: &SituationalModel, now: u64) -> Vec<Gap> {
    let mut gaps = Vec::new();
    for (id, &expected) in &theory.reservations {
        if let Some(&actual) = field.reservations.get(id) {
            if expected != actual {
                gaps.push(Gap {
                    kind: GapKind::ResourceGap,
                    subject: id.clone(),
                    expected: GapValue::Quantity(expected),
                    actual: GapValue::Quantity(actual),
                    detected_ts: now,
                });
            }
        }
    }
    for (id, &expected) in &theory.activities {
        if let Some(&actual) = field.activities.get(id) {
            if expected != actual {
                gaps.push(Gap {
                    kind: GapKind::StatusGap,
                    subject: id.clone(),
                    expected: GapValue::Status(expected),
                    actual: GapValue::Status(actual),
                    detected_ts: now,
                });
            }
        }
    }
    gaps
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Effect {
    AskForNewResource,
    DispatchResidualTasksOnRemainingResources,
    RequireImmediateReporting,
    SendSomeoneOnTheField,
    Wait,
}

impl Effect {
    pub fn id(self) -> &'static str {
        match self {
            Effect::AskForNewResource => "AskForNewResource",
            Effect::DispatchResidualTasksOnRemainingResources => "DispatchResidualTasksOnRemainingResources",
            Effect::RequireImmediateReporting => "RequireImmediateReporting",
            Effect::SendSomeoneOnTheField => "SendSomeoneOnTheField",
            Effect::Wait => "Wait",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Effect::AskForNewResource => "Ask for a new resource",
            Effect::DispatchResidualTasksOnRemainingResources => "Dispatch residual tasks on remaining resources",
            Effect::RequireImmediateReporting => "Require immediate reporting",
            Effect::SendSomeoneOnTheField => "Send someone on the field",
            Effect::Wait => "Wait",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlternativeSpec {
    pub id: String,
    pub label: String,
    pub effect: Effect,
}

impl From<Effect> for AlternativeSpec {
    fn from(effect: Effect) -> Self {
        AlternativeSpec { id: effect.id().into(), label: effect.label().into(), effect }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "alternative")]
pub enum ProposalState {
    Open,
    Chosen(String),
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptationProposal {
    pub proposal_id: String,
    pub gap: Gap,
    pub alternatives: Vec<AlternativeSpec>,
    pub state: ProposalState,
}

pub fn alternatives_for(kind: GapKind) -> Vec<AlternativeSpec> {
    let effects: &[Effect] = match kind {
        GapKind::ResourceGap => &[Effect::AskForNewResource, Effect::DispatchResidualTasksOnRemainingResources],
        GapKind::StatusGap => &[Effect::RequireImmediateReporting, Effect::SendSomeoneOnTheField, Effect::Wait],
    };
    effects.iter().copied().map(AlternativeSpec::from).collect()
}

pub fn propose(proposal_id: &str, gap: Gap) -> AdaptationProposal {
    AdaptationProposal {
        proposal_id: proposal_id.into(),
        alternatives: alternatives_for(gap.kind),
        gap,
        state: ProposalState::Open,
    }
}

pub fn proposal_event(p: &AdaptationProposal) -> Event {
    let alternatives = p.alternatives.iter().map(|a| a.id.as_str()).collect::<Vec<_>>().join(",");
    Event::new(
        etype::ADAPTATION_PROPOSAL,
        SAR_SOURCE,
        p.gap.detected_ts,
        attrs! {
            "proposal" => p.proposal_id.as_str(),
            "gap_kind" => p.gap.kind.as_str(),
            "subject" => p.gap.subject.as_str(),
            "expected" => p.gap.expected.to_string(),
            "actual" => p.gap.actual.to_string(),
            "alternatives" => alternatives,
        },
    )
}

#[derive(Debug, Clone, Default)]
pub struct Sar {
    proposals: Vec<AdaptationProposal>,
}

impl Sar {
    pub fn new() -> Self {
        Sar::default()
    }

    pub fn proposals(&self) -> &[AdaptationProposal] {
        &self.proposals
    }

    pub fn proposal(&self, id: &str) -> Option<&AdaptationProposal> {
        self.proposals.iter().find(|p| p.proposal_id == id)
    }

    pub fn open(&self) -> impl Iterator<Item = &AdaptationProposal> {
        self.proposals.iter().filter(|p| p.state == ProposalState::Open)
    }

    /// Gap check on a recommender tick. A gap that already has an open
    /// proposal for the same subject is not proposed again.
    pub fn tick(&mut self, snapshot: &OrchestratorSnapshot, now: u64) -> Vec<(AdaptationProposal, Event)> {
        let (theory, field) = snapshot_models(snapshot, now);
        let mut out = Vec::new();
        for gap in detect_gaps(&theory, &field, now) {
            if self.open().any(|p| p.gap.kind == gap.kind && p.gap.subject == gap.subject) {
                continue;
            }
            let p = propose(&format!("prop-{}", self.proposals.len() + 1), gap);
            let event = proposal_event(&p);
            self.proposals.push(p.clone());
            out.push((p, event));
        }
        out
    }

    /// Checks a choice without applying it.
    pub fn check_choice(&self, proposal_id: &str, alternative: &str) -> Result<Effect, SarError> {
        let p = self.proposal(proposal_id).ok_or_else(|| SarError::UnknownProposal(proposal_id.into()))?;
        if p.state != ProposalState::Open {
            return Err(SarError::ProposalClosed(proposal_id.into()));
        }
        p.alternatives.iter().find(|a| a.id == alternative).map(|a| a.effect).ok_or_else(|| {
            SarError::UnknownAlternative { proposal: proposal_id.into(), alternative: alternative.into() }
        })
    }

    /// Applies a choice at most once and runs its effect against the
    /// orchestrator. The proposal stays open if the effect fails.
    pub fn apply_choice(
        &mut self,
        proposal_id: &str,
        alternative: &str,
        chooser: &str,
        now: u64,
        orchestrator: &mut Orchestrator,
    ) -> Result<Vec<Event>, SarError> {
        let effect = self.check_choice(proposal_id, alternative)?;
        let gap = self.proposal(proposal_id).expect("checked").gap.clone();
        let tag = |mut e: Event| {
            e.attrs.insert("proposal".into(), Scalar::from(proposal_id));
            e.attrs.insert("chooser".into(), Scalar::from(chooser));
            e
        };
        let events = match effect {
            Effect::DispatchResidualTasksOnRemainingResources => {
                let r = orchestrator
                    .inventory()
                    .reservation(&gap.subject)
                    .cloned()
                    .ok_or_else(|| OrchestratorError::UnknownReservation(gap.subject.clone()))?;
                let r = orchestrator.set_requested(&r.id, r.committed)?;
                vec![tag(Event::new(
                    etype::TASK_ASSIGNMENT,
                    SAR_SOURCE,
                    now,
                    attrs! {
                        "reservation" => r.id.as_str(),
                        "kind" => r.kind.as_str(),
                        "units" => u64::from(r.committed),
                        "to" => r.holder.as_str(),
                    },
                ))]
            }
            Effect::AskForNewResource => {
                let r = orchestrator
                    .inventory()
                    .reservation(&gap.subject)
                    .cloned()
                    .ok_or_else(|| OrchestratorError::UnknownReservation(gap.subject.clone()))?;
                let missing = r.requested.saturating_sub(r.committed).max(1);
                let (_, events) = orchestrator.request_resources(&r.kind, missing, &r.holder, now)?;
                events.into_iter().map(tag).collect()
            }
            Effect::RequireImmediateReporting => {
                let lane = lane_of(orchestrator, &gap.subject).unwrap_or(FIELD_TEAM.into());
                vec![tag(Event::new(
                    etype::REPORT_REQUEST,
                    SAR_SOURCE,
                    now,
                    attrs! {"activity" => gap.subject.as_str(), "to" => lane},
                ))]
            }
            Effect::SendSomeoneOnTheField => {
                let (_, events) = orchestrator.spawn_adhoc("field-verification", FIELD_TEAM, now);
                events.into_iter().map(tag).collect()
            }
            Effect::Wait => Vec::new(),
        };
        let p = self.proposals.iter_mut().find(|p| p.proposal_id == proposal_id).expect("checked");
        p.state = ProposalState::Chosen(alternative.into());
        Ok(events)
    }

    /// Marks every still-open proposal expired, e.g. at the end of a run.
    pub fn expire_open(&mut self) {
        for p in &mut self.proposals {
            if p.state == ProposalState::Open {
                p.state = ProposalState::Expired;
            }
        }
    }
}

fn lane_of(orchestrator: &Orchestrator, key: &str) -> Option<String> {
    let (instance, activity) = key.split_once('/')?;
    Some(orchestrator.instance(instance)?.activity(activity)?.lane.clone())
}
