//! Workflow orchestration: process instances driven by events, plus the
//! resource inventory.

mod inventory;
mod process;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attrs;
use crate::event::{etype, Event, Scalar};
use crate::time::MINUTE;

pub use inventory::{Inventory, Reservation, Stock};
pub use process::{ActivityDef, EmitTemplate, Level, ProcessDefinition, TransitionDef, Trigger, ROLES};

pub const ORCHESTRATOR_SOURCE: &str = "orchestrator";
pub const INVENTORY_SOURCE: &str = "inventory";
pub const DEFAULT_LEAD_TIME_MS: u64 = 5 * MINUTE;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrchestratorError {
    #[error("malformed process: {}", .0.join("; "))]
    MalformedProcess(Vec<String>),
    #[error("process definition: {0}")]
    Parse(String),
    #[error("unknown process {0}")]
    UnknownProcess(String),
    #[error("unknown instance {0}")]
    UnknownInstance(String),
    #[error("unknown activity {0}")]
    UnknownActivity(String),
    #[error("illegal status change {from:?} -> {to:?} for {activity}")]
    IllegalTransition { activity: String, from: ActivityStatus, to: ActivityStatus },
    #[error("not enough {kind}: {available} available")]
    InsufficientResources { kind: String, available: u32 },
    #[error("unknown resource kind {0}")]
    UnknownResource(String),
    #[error("quantity must be at least 1")]
    InvalidQuantity,
    #[error("cannot lose {lost} from reservation {reservation} holding {committed}")]
    InvalidLoss { reservation: String, committed: u32, lost: u32 },
    #[error("unknown or closed reservation {0}")]
    UnknownReservation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActivityStatus {
    Waiting,
    Ongoing,
    Finished,
}

impl ActivityStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ActivityStatus::Waiting => "Waiting",
            ActivityStatus::Ongoing => "Ongoing",
            ActivityStatus::Finished => "Finished",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Waiting" => Some(ActivityStatus::Waiting),
            "Ongoing" => Some(ActivityStatus::Ongoing),
            "Finished" => Some(ActivityStatus::Finished),
            _ => None,
        }
    }

    /// Only one step forward at a time.
    pub fn can_become(self, next: ActivityStatus) -> bool {
        matches!(
            (self, next),
            (ActivityStatus::Waiting, ActivityStatus::Ongoing) | (ActivityStatus::Ongoing, ActivityStatus::Finished)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Activity {
    pub id: String,
    pub lane: String,
    pub status: ActivityStatus,
    pub started_ts: Option<u64>,
    pub intended_finish_ts: Option<u64>,
    pub finished_ts: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessInstance {
    pub id: String,
    pub process_id: String,
    pub level: Level,
    pub started_ts: u64,
    pub activities: Vec<Activity>,
}

impl ProcessInstance {
    pub fn activity(&self, id: &str) -> Option<&Activity> {
        self.activities.iter().find(|a| a.id == id)
    }

    pub fn is_live(&self) -> bool {
        self.activities.iter().any(|a| a.status == ActivityStatus::Ongoing)
    }
}

/// Immutable view of orchestrator state at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrchestratorSnapshot {
    pub now: u64,
    pub instances: Vec<ProcessInstance>,
    pub inventory: BTreeMap<String, Stock>,
    pub reservations: Vec<Reservation>,
}

#[derive(Debug, Clone)]
pub struct Orchestrator {
    processes: BTreeMap<String, ProcessDefinition>,
    instances: Vec<ProcessInstance>,
    index: HashMap<String, usize>,
    counters: HashMap<String, u64>,
    inventory: Inventory,
    lead_time_ms: u64,
}

impl Orchestrator {
    pub fn new(inventory: Inventory) -> Self {
        Orchestrator {
            processes: BTreeMap::new(),
            instances: Vec::new(),
            index: HashMap::new(),
            counters: HashMap::new(),
            inventory,
            lead_time_ms: DEFAULT_LEAD_TIME_MS,
        }
    }

    pub fn with_lead_time(mut self, lead_time_ms: u64) -> Self {
        self.lead_time_ms = lead_time_ms;
        self
    }

    pub fn load_process(&mut self, def: ProcessDefinition) -> Result<String, OrchestratorError> {
        def.validate()?;
        let id = def.id.clone();
        self.processes.insert(id.clone(), def);
        Ok(id)
    }

    pub fn process(&self, id: &str) -> Option<&ProcessDefinition> {
        self.processes.get(id)
    }

    pub fn processes(&self) -> impl Iterator<Item = &ProcessDefinition> {
        self.processes.values()
    }

    pub fn instances(&self) -> &[ProcessInstance] {
        &self.instances
    }

    pub fn instance(&self, id: &str) -> Option<&ProcessInstance> {
        self.index.get(id).map(|&i| &self.instances[i])
    }

    pub fn inventory(&self) -> &Inventory {
        &self.inventory
    }

    /// Starts an instance: the start activity goes Ongoing, the rest wait.
    pub fn start_instance(&mut self, process_id: &str, now: u64) -> Result<(String, Vec<Event>), OrchestratorError> {
        let def = self.processes.get(process_id).ok_or_else(|| OrchestratorError::UnknownProcess(process_id.into()))?;
        let n = self.counters.entry(process_id.to_string()).or_insert(0);
        *n += 1;
        let id = format!("{process_id}#{n}");
        let instance = ProcessInstance {
            id: id.clone(),
            process_id: process_id.into(),
            level: def.level,
            started_ts: now,
            activities: def
                .activities
                .iter()
                .map(|a| Activity {
                    id: a.id.clone(),
                    lane: a.lane.clone(),
                    status: ActivityStatus::Waiting,
                    started_ts: None,
                    intended_finish_ts: None,
                    finished_ts: None,
                })
                .collect(),
        };
        let start = def.start_activity().id.clone();
        self.index.insert(id.clone(), self.instances.len());
        self.instances.push(instance);
        let events = self.enter(&id, &start, now)?;
        Ok((id, events))
    }

    /// A one-activity instance for work added at run time.
    pub fn spawn_adhoc(&mut self, activity: &str, lane: &str, now: u64) -> (String, Vec<Event>) {
        let n = self.counters.entry("adhoc".into()).or_insert(0);
        *n += 1;
        let id = format!("adhoc#{n}");
        self.index.insert(id.clone(), self.instances.len());
        self.instances.push(ProcessInstance {
            id: id.clone(),
            process_id: "adhoc".into(),
            level: Level::Operational,
            started_ts: now,
            activities: vec![Activity {
                id: activity.into(),
                lane: lane.into(),
                status: ActivityStatus::Waiting,
                started_ts: None,
                intended_finish_ts: None,
                finished_ts: None,
            }],
        });
        let event = self
            .set_activity_status(&id, activity, ActivityStatus::Ongoing, now)
            .expect("fresh activity is waiting");
        (id, vec![event])
    }

    pub fn set_activity_status(
        &mut self,
        instance_id: &str,
        activity_id: &str,
        status: ActivityStatus,
        now: u64,
    ) -> Result<Event, OrchestratorError> {
        let &i = self.index.get(instance_id).ok_or_else(|| OrchestratorError::UnknownInstance(instance_id.into()))?;
        let planned = self
            .processes
            .get(&self.instances[i].process_id)
            .and_then(|d| d.activity(activity_id))
            .and_then(|a| a.planned_duration);
        let instance = &mut self.instances[i];
        let activity = instance
            .activities
            .iter_mut()
            .find(|a| a.id == activity_id)
            .ok_or_else(|| OrchestratorError::UnknownActivity(activity_id.into()))?;
        let previous = activity.status;
        if !previous.can_become(status) {
            return Err(OrchestratorError::IllegalTransition { activity: activity_id.into(), from: previous, to: status });
        }
        activity.status = status;
        match status {
            ActivityStatus::Ongoing => {
                activity.started_ts = Some(now);
                activity.intended_finish_ts = planned.map(|d| now + d.ms());
            }
            ActivityStatus::Finished => activity.finished_ts = Some(now),
            ActivityStatus::Waiting => {}
        }
        let mut attrs = attrs! {
            "process" => instance.process_id.as_str(),
            "instance" => instance_id,
            "activity" => activity_id,
            "lane" => activity.lane.as_str(),
            "status" => status.as_str(),
            "previous" => previous.as_str(),
        };
        if let Some(t) = activity.intended_finish_ts {
            attrs.insert("intended_finish_ts".into(), Scalar::from(t));
        }
        Ok(Event::new(etype::ACTIVITY_STATUS_CHANGE, ORCHESTRATOR_SOURCE, now, attrs))
    }

    /// Starts an activity; terminal activities finish on entry.
    fn enter(&mut self, instance_id: &str, activity: &str, now: u64) -> Result<Vec<Event>, OrchestratorError> {
        let mut events = vec![self.set_activity_status(instance_id, activity, ActivityStatus::Ongoing, now)?];
        let process_id = &self.instances[self.index[instance_id]].process_id;
        if self.processes.get(process_id).is_some_and(|d| d.is_terminal(activity)) {
            events.push(self.set_activity_status(instance_id, activity, ActivityStatus::Finished, now)?);
        }
        Ok(events)
    }

    /// Fires every enabled transition of the instance whose trigger matches.
    /// A transition is enabled when its source is ongoing and its target
    /// (if any) is still waiting.
    pub fn advance(&mut self, instance_id: &str, trigger: &Event, now: u64) -> Result<Vec<Event>, OrchestratorError> {
        let &i = self.index.get(instance_id).ok_or_else(|| OrchestratorError::UnknownInstance(instance_id.into()))?;
        let Some(def) = self.processes.get(&self.instances[i].process_id) else { return Ok(Vec::new()) };
        let candidates: Vec<TransitionDef> =
            def.transitions.iter().filter(|t| t.on.matches(trigger)).cloned().collect();
        let mut out = Vec::new();
        for t in candidates {
            let instance = &self.instances[i];
            let status = |id: &str| instance.activity(id).map(|a| a.status);
            if status(&t.from) != Some(ActivityStatus::Ongoing) {
                continue;
            }
            if let Some(to) = &t.to {
                if status(to) != Some(ActivityStatus::Waiting) {
                    continue;
                }
            }
            let lane = instance.activity(&t.from).map(|a| a.lane.clone()).unwrap_or_default();
            let process_id = instance.process_id.clone();
            if t.finish {
                out.push(self.set_activity_status(instance_id, &t.from, ActivityStatus::Finished, now)?);
            }
            if let Some(to) = &t.to {
                out.extend(self.enter(instance_id, to, now)?);
            }
            for template in &t.emit {
                let mut attrs = template.attrs.clone();
                for key in &template.copy {
                    if let Some(v) = trigger.attr(key) {
                        attrs.insert(key.clone(), v.clone());
                    }
                }
                attrs.insert("process".into(), Scalar::Str(process_id.clone()));
                attrs.insert("instance".into(), Scalar::Str(instance_id.into()));
                out.push(Event::new(&template.etype, &lane, now, attrs));
            }
        }
        Ok(out)
    }

    /// Offers the trigger to every instance, then restarts processes that
    /// asked for it and have nothing ongoing.
    pub fn advance_all(&mut self, trigger: &Event, now: u64) -> Vec<Event> {
        let ids: Vec<String> = self.instances.iter().filter(|i| i.is_live()).map(|i| i.id.clone()).collect();
        let mut out = Vec::new();
        for id in ids {
            out.extend(self.advance(&id, trigger, now).expect("instance ids come from the index"));
        }
        if !out.is_empty() {
            out.extend(self.restart_idle(now));
        }
        out
    }

    fn restart_idle(&mut self, now: u64) -> Vec<Event> {
        let restartable: Vec<String> = self.processes.values().filter(|d| d.restart).map(|d| d.id.clone()).collect();
        let mut out = Vec::new();
        for pid in restartable {
            let mut ever = false;
            let mut live = false;
            for inst in self.instances.iter().filter(|i| i.process_id == pid) {
                ever = true;
                live |= inst.is_live();
            }
            if ever && !live {
                let (_, events) = self.start_instance(&pid, now).expect("process is loaded");
                out.extend(events);
            }
        }
        out
    }

    fn stock_attrs(&self, kind: &str, attrs: &mut crate::event::Attrs) {
        if let Some(s) = self.inventory.stock_of(kind) {
            attrs.insert("total".into(), Scalar::from(u64::from(s.total)));
            attrs.insert("available".into(), Scalar::from(u64::from(s.available)));
            attrs.insert("committed".into(), Scalar::from(u64::from(s.committed)));
        }
    }

    /// Reserves resources; returns the reservation with the request and
    /// confirmation events.
    pub fn request_resources(
        &mut self,
        kind: &str,
        quantity: u32,
        holder: &str,
        now: u64,
    ) -> Result<(Reservation, Vec<Event>), OrchestratorError> {
        let r = self.inventory.reserve(kind, quantity, holder, now, self.lead_time_ms)?;
        let request = Event::new(
            etype::RESOURCE_REQUEST,
            holder,
            now,
            attrs! {"reservation" => r.id.as_str(), "kind" => kind, "quantity" => u64::from(quantity)},
        );
        let mut attrs = attrs! {
            "reservation" => r.id.as_str(),
            "kind" => kind,
            "quantity" => u64::from(quantity),
            "holder" => holder,
            "confirmed_for_ts" => r.confirmed_for_ts,
        };
        self.stock_attrs(kind, &mut attrs);
        let confirmed = Event::new(etype::RESERVATION_CONFIRMED, INVENTORY_SOURCE, now, attrs);
        Ok((r, vec![request, confirmed]))
    }

    pub fn report_field_loss(&mut self, reservation_id: &str, quantity: u32, now: u64) -> Result<Event, OrchestratorError> {
        let r = self.inventory.lose(reservation_id, quantity)?;
        let mut attrs = attrs! {
            "reservation" => reservation_id,
            "kind" => r.kind.as_str(),
            "lost" => u64::from(quantity),
            "remaining" => u64::from(r.committed),
        };
        self.stock_attrs(&r.kind, &mut attrs);
        Ok(Event::new(etype::FIELD_ALERT, &r.holder, now, attrs))
    }

    pub fn release_resources(&mut self, reservation_id: &str, now: u64) -> Result<Event, OrchestratorError> {
        let (r, released) = self.inventory.release(reservation_id)?;
        let mut attrs = attrs! {
            "reservation" => reservation_id,
            "kind" => r.kind.as_str(),
            "released" => u64::from(released),
        };
        self.stock_attrs(&r.kind, &mut attrs);
        Ok(Event::new(etype::INVENTORY_UPDATE, INVENTORY_SOURCE, now, attrs))
    }

    /// Lowers (or raises) what a reservation is expected to hold.
    pub fn set_requested(&mut self, reservation_id: &str, requested: u32) -> Result<Reservation, OrchestratorError> {
        self.inventory.set_requested(reservation_id, requested)
    }

    /// Announces reservations whose confirmation time has arrived.
    pub fn on_tick(&mut self, now: u64) -> Vec<Event> {
        let due = self.inventory.due_announcements(now);
        due.into_iter()
            .map(|r| {
                let mut attrs = attrs! {
                    "reservation" => r.id.as_str(),
                    "kind" => r.kind.as_str(),
                    "quantity" => u64::from(r.committed),
                    "holder" => r.holder.as_str(),
                };
                self.stock_attrs(&r.kind, &mut attrs);
                Event::new(etype::RESOURCES_AVAILABLE, INVENTORY_SOURCE, now, attrs)
            })
            .collect()
    }

    pub fn snapshot(&self, now: u64) -> OrchestratorSnapshot {
        OrchestratorSnapshot {
            now,
            instances: self.instances.clone(),
            inventory: self.inventory.stock().clone(),
            reservations: self.inventory.reservations().cloned().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FLOW: &str = r#"
id = "flow"
level = "Operational"
lanes = ["RepresentativeNationalAuthority", "PlaySystem"]
restart = true

[[activities]]
id = "wait"
lane = "PlaySystem"
start = true

[[activities]]
id = "analyze"
lane = "RepresentativeNationalAuthority"
planned_duration = "30m"

[[activities]]
id = "ask"
lane = "RepresentativeNationalAuthority"

[[activities]]
id = "study"
lane = "RepresentativeNationalAuthority"

[[transitions]]
from = "wait"
to = "analyze"
on = { event = "AlertRSN" }

[[transitions]]
from = "analyze"
to = "ask"
on = { decision = "response", option = "ask-advice" }
emit = [{ etype = "AdviceRequest", attrs = { to = "IRSN" } }]

[[transitions]]
from = "ask"
to = "study"
on = { event = "Report", where = { kind = "irsn-advice" } }
"#;

    fn orch() -> (Orchestrator, String) {
        let mut o = Orchestrator::new(Inventory::new([("vehicle".to_string(), 4)]));
        o.load_process(ProcessDefinition::from_toml(FLOW).unwrap()).unwrap();
        let (id, events) = o.start_instance("flow", 0).unwrap();
        assert_eq!(events.len(), 1);
        (o, id)
    }

    fn status(o: &Orchestrator, inst: &str, act: &str) -> ActivityStatus {
        o.instance(inst).unwrap().activity(act).unwrap().status
    }

    #[test]
    fn start_state() {
        let (mut o, id) = orch();
        assert_eq!(status(&o, &id, "wait"), ActivityStatus::Ongoing);
        assert_eq!(status(&o, &id, "analyze"), ActivityStatus::Waiting);
        let (id2, _) = o.start_instance("flow", 0).unwrap();
        assert_ne!(id, id2);
        assert!(matches!(o.start_instance("nope", 0), Err(OrchestratorError::UnknownProcess(_))));
    }

    #[test]
    fn advice_path() {
        let (mut o, id) = orch();
        let alert = Event::new(etype::ALERT_RSN, "dcep", 420_000, attrs! {});
        o.advance(&id, &alert, 420_000).unwrap();
        assert_eq!(status(&o, &id, "analyze"), ActivityStatus::Ongoing);
        let a = o.instance(&id).unwrap().activity("analyze").unwrap();
        assert_eq!(a.intended_finish_ts, Some(420_000 + 30 * MINUTE));

        let unrelated = Event::new(etype::WIND_SPEED_MEASURE, "mf", 500_000, attrs! {"speed" => 3.0});
        let before = o.snapshot(0);
        assert!(o.advance(&id, &unrelated, 500_000).unwrap().is_empty());
        assert_eq!(o.snapshot(0), before);

        let choice = Event::new(
            etype::DECISION_CHOICE,
            "prefet",
            540_000,
            attrs! {"point" => "response", "option" => "ask-advice"},
        );
        let out = o.advance(&id, &choice, 540_000).unwrap();
        assert!(out.iter().any(|e| e.etype == "AdviceRequest" && e.source == "RepresentativeNationalAuthority"));
        let report = Event::new(etype::REPORT, "IRSN", 840_000, attrs! {"kind" => "irsn-advice"});
        let out = o.advance_all(&report, 840_000);
        assert_eq!(status(&o, &id, "study"), ActivityStatus::Finished, "terminal activities finish on entry");
        // restart: the first instance is done, a new one waits for alerts
        assert!(out.iter().any(|e| e.text("instance") == Some("flow#2")));
        assert_eq!(status(&o, "flow#2", "wait"), ActivityStatus::Ongoing);
    }

    #[test]
    fn illegal_status_changes() {
        let (mut o, id) = orch();
        assert!(matches!(
            o.set_activity_status(&id, "analyze", ActivityStatus::Finished, 0),
            Err(OrchestratorError::IllegalTransition { .. })
        ));
        o.set_activity_status(&id, "wait", ActivityStatus::Finished, 0).unwrap();
        assert!(matches!(
            o.set_activity_status(&id, "wait", ActivityStatus::Ongoing, 0),
            Err(OrchestratorError::IllegalTransition { .. })
        ));
        assert!(matches!(o.advance("flow#9", &Event::new("X", "s", 0, attrs! {}), 0), Err(OrchestratorError::UnknownInstance(_))));
    }

    #[test]
    fn implement_intended_finish() {
        let (mut o, id) = orch();
        o.set_activity_status(&id, "analyze", ActivityStatus::Ongoing, 40 * MINUTE).unwrap();
        assert_eq!(o.instance(&id).unwrap().activity("analyze").unwrap().intended_finish_ts, Some(70 * MINUTE));
    }

    #[test]
    fn resources() {
        let (mut o, _) = orch();
        let (r, events) = o.request_resources("vehicle", 3, "OfficeOfInfrastructureFieldTeam", 35 * MINUTE).unwrap();
        assert_eq!(events[1].num("confirmed_for_ts"), Some(2_400_000.0));
        assert!(o.on_tick(39 * MINUTE).is_empty());
        let avail = o.on_tick(40 * MINUTE);
        assert_eq!(avail.len(), 1);
        assert!(o.on_tick(41 * MINUTE).is_empty());
        let alert = o.report_field_loss(&r.id, 1, 52 * MINUTE).unwrap();
        assert_eq!(alert.etype, etype::FIELD_ALERT);
        assert_eq!(alert.num("remaining"), Some(2.0));
        let update = o.release_resources(&r.id, 105 * MINUTE).unwrap();
        assert_eq!(update.num("released"), Some(2.0));
        assert_eq!(update.num("available"), Some(3.0));
        assert!(o.inventory().balanced());
    }
}
