use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::attrs;
use crate::cloud::Broker;
use crate::dcep::Dcep;
use crate::event::{etype, Event, IdGen, Scalar};
use crate::orchestrator::{Inventory, Orchestrator, ORCHESTRATOR_SOURCE, DEFAULT_LEAD_TIME_MS};
use crate::sar::{AdaptationProposal, Sar, SarError};

use super::script::{Action, ScenarioScript};
use super::sensors::SensorGroup;
use super::ScenarioError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecisionMode {
    /// Every decision is taken from the scenario file.
    Scripted,
    /// Decisions come from an operator; the run pauses until they arrive.
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    /// A tick at the given time completed and its events were delivered.
    Ticked(u64),
    AwaitingDecision,
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointState {
    Idle,
    Scheduled,
    Open,
    Decided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionView {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionPointView {
    pub id: String,
    pub role: String,
    pub prompt: String,
    pub options: Vec<OptionView>,
    pub state: PointState,
    /// Id of the event that triggered the point.
    pub trigger_event: Option<String>,
    pub trigger_ts: Option<u64>,
    pub issued_ts: Option<u64>,
    pub chosen: Option<String>,
}

/// A decision submitted by an operator: exactly one of `point` or `proposal`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChoiceRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal: Option<String>,
    pub option: String,
    #[serde(default = "default_chooser")]
    pub chooser: String,
}

fn default_chooser() -> String {
    "operator".into()
}

impl ChoiceRequest {
    pub fn point(point: &str, option: &str) -> Self {
        ChoiceRequest { point: Some(point.into()), proposal: None, option: option.into(), chooser: default_chooser() }
    }

    pub fn proposal(proposal: &str, option: &str) -> Self {
        ChoiceRequest { point: None, proposal: Some(proposal.into()), option: option.into(), chooser: default_chooser() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal: Option<String>,
    pub option: String,
    pub chooser: String,
    pub ts: u64,
    /// Sequence number of the DecisionChoice event.
    pub seq: u64,
}

/// Everything a run produced, in publish order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub events: Vec<Event>,
    pub choices: Vec<ChoiceRecord>,
}

#[derive(Debug, Clone)]
struct PointRt {
    state: PointState,
    trigger_event: Option<String>,
    trigger_ts: Option<u64>,
    due: u64,
    issued_ts: Option<u64>,
    chosen: Option<String>,
}

/// Runs a scenario tick by tick against a broker, the rule engine, the
/// orchestrator and the adaptation recommender.
pub struct Driver {
    script: Arc<ScenarioScript>,
    mode: DecisionMode,
    broker: Arc<Broker>,
    dcep: Dcep,
    orchestrator: Orchestrator,
    sar: Sar,
    groups: Vec<SensorGroup>,
    ids: IdGen,
    now: u64,
    started: bool,
    paused: bool,
    finished: bool,
    injections: Vec<usize>,
    next_injection: usize,
    points: Vec<PointRt>,
    scheduled_proposals: Vec<(u64, String, String)>,
    choices: Vec<ChoiceRecord>,
    queue: VecDeque<Event>,
}

impl Driver {
    pub fn new(script: ScenarioScript, mode: DecisionMode) -> Result<Self, ScenarioError> {
        let broker = Arc::new(Broker::new(script.shards)?);
        Driver::with_broker(script, mode, broker)
    }

    /// Uses an existing (empty) broker, so subscribers can attach first.
    pub fn with_broker(script: ScenarioScript, mode: DecisionMode, broker: Arc<Broker>) -> Result<Self, ScenarioError> {
        script.validate()?;
        if mode == DecisionMode::Scripted {
            if let Some(d) = script.decision_points.iter().find(|d| d.choice.is_none()) {
                return Err(ScenarioError::MissingScriptedChoice(d.id.clone()));
            }
        }
        let dcep = Dcep::new(script.thresholds, script.rules)?;
        let inventory = Inventory::new(script.inventory.iter().map(|(k, v)| (k.clone(), *v)));
        let mut orchestrator =
            Orchestrator::new(inventory).with_lead_time(script.lead_time.map_or(DEFAULT_LEAD_TIME_MS, |t| t.ms()));
        for def in &script.process_defs {
            orchestrator.load_process(def.clone())?;
        }
        let groups = script.sensor_groups.iter().map(|g| SensorGroup::new(g.clone(), script.seed, 0)).collect();
        let mut injections: Vec<usize> = (0..script.injections.len()).collect();
        injections.sort_by_key(|&i| script.injections[i].at);
        let points = script
            .decision_points
            .iter()
            .map(|_| PointRt {
                state: PointState::Idle,
                trigger_event: None,
                trigger_ts: None,
                due: 0,
                issued_ts: None,
                chosen: None,
            })
            .collect();
        Ok(Driver {
            ids: IdGen::new(script.seed),
            script: Arc::new(script),
            mode,
            broker,
            dcep,
            orchestrator,
            sar: Sar::new(),
            groups,
            now: 0,
            started: false,
            paused: false,
            finished: false,
            injections,
            next_injection: 0,
            points,
            scheduled_proposals: Vec::new(),
            choices: Vec::new(),
            queue: VecDeque::new(),
        })
    }

    pub fn script(&self) -> &ScenarioScript {
        &self.script
    }

    pub fn mode(&self) -> DecisionMode {
        self.mode
    }

    pub fn broker(&self) -> &Arc<Broker> {
        &self.broker
    }

    pub fn orchestrator(&self) -> &Orchestrator {
        &self.orchestrator
    }

    pub fn sar(&self) -> &Sar {
        &self.sar
    }

    pub fn dcep(&self) -> &Dcep {
        &self.dcep
    }

    pub fn sensor_groups(&self) -> &[SensorGroup] {
        &self.groups
    }

    /// Time of the current (or next) tick.
    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn choices(&self) -> &[ChoiceRecord] {
        &self.choices
    }

    pub fn decision_points(&self) -> Vec<DecisionPointView> {
        self.script
            .decision_points
            .iter()
            .zip(&self.points)
            .map(|(spec, rt)| DecisionPointView {
                id: spec.id.clone(),
                role: spec.role.clone(),
                prompt: spec.prompt.clone(),
                options: spec.options.iter().map(|o| OptionView { id: o.id.clone(), label: o.label.clone() }).collect(),
                state: rt.state,
                trigger_event: rt.trigger_event.clone(),
                trigger_ts: rt.trigger_ts,
                issued_ts: rt.issued_ts,
                chosen: rt.chosen.clone(),
            })
            .collect()
    }

    pub fn open_proposals(&self) -> Vec<AdaptationProposal> {
        self.sar.open().cloned().collect()
    }

    fn awaiting(&self) -> bool {
        self.mode == DecisionMode::External
            && (self.points.iter().any(|p| p.state == PointState::Open) || self.sar.open().next().is_some())
    }

    /// Advances by one tick, or reports that a decision is outstanding.
    pub fn step(&mut self) -> Result<Step, ScenarioError> {
        if self.finished {
            return Ok(Step::Finished);
        }
        if !self.paused {
            if self.now > self.script.end.ms() {
                self.sar.expire_open();
                self.broker.flush();
                self.finished = true;
                return Ok(Step::Finished);
            }
            self.begin_tick()?;
        }
        self.resolve()?;
        if self.awaiting() {
            self.paused = true;
            return Ok(Step::AwaitingDecision);
        }
        self.paused = false;
        self.broker.flush();
        let done = self.now;
        self.now += self.script.tick.ms();
        Ok(Step::Ticked(done))
    }

    /// Runs to the end. Only possible in scripted mode.
    pub fn run(&mut self) -> Result<RunLog, ScenarioError> {
        self.run_with(|_| None)
    }

    /// Runs to the end, asking `decide` whenever the run is waiting. Returning
    /// `None` aborts the run.
    pub fn run_with(
        &mut self,
        mut decide: impl FnMut(&Driver) -> Option<ChoiceRequest>,
    ) -> Result<RunLog, ScenarioError> {
        loop {
            match self.step()? {
                Step::Ticked(_) => {}
                Step::Finished => return Ok(self.log()),
                Step::AwaitingDecision => {
                    let choice = decide(self).ok_or(ScenarioError::AbortedByOperator)?;
                    self.submit_choice(&choice)?;
                }
            }
        }
    }

    pub fn log(&self) -> RunLog {
        RunLog { events: self.broker.log(), choices: self.choices.clone() }
    }

    /// Applies an operator decision at the current time and returns the
    /// sequence number of the resulting DecisionChoice event.
    pub fn submit_choice(&mut self, choice: &ChoiceRequest) -> Result<u64, ScenarioError> {
        if self.finished {
            return Err(ScenarioError::Finished);
        }
        let seq = match (&choice.point, &choice.proposal) {
            (Some(point), None) => {
                let idx = self
                    .script
                    .decision_points
                    .iter()
                    .position(|d| d.id == *point)
                    .ok_or_else(|| ScenarioError::UnknownPoint(point.clone()))?;
                match self.points[idx].state {
                    PointState::Open => {}
                    PointState::Decided => return Err(ScenarioError::AlreadyDecided(point.clone())),
                    _ => return Err(ScenarioError::UnknownPoint(point.clone())),
                }
                if self.script.decision_points[idx].option(&choice.option).is_none() {
                    return Err(ScenarioError::UnknownPoint(format!("{point}/{}", choice.option)));
                }
                self.choose_point(idx, &choice.option, &choice.chooser)?
            }
            (None, Some(proposal)) => {
                match self.sar.check_choice(proposal, &choice.option) {
                    Ok(_) => {}
                    Err(SarError::ProposalClosed(p)) => return Err(ScenarioError::AlreadyDecided(p)),
                    Err(SarError::UnknownAlternative { proposal, alternative }) => {
                        return Err(ScenarioError::UnknownPoint(format!("{proposal}/{alternative}")))
                    }
                    Err(_) => return Err(ScenarioError::UnknownPoint(proposal.clone())),
                }
                self.choose_proposal(proposal, &choice.option, &choice.chooser)?
            }
            _ => return Err(ScenarioError::Semantic("a choice names exactly one of point or proposal".into())),
        };
        self.drain()?;
        Ok(seq)
    }

    fn begin_tick(&mut self) -> Result<(), ScenarioError> {
        let now = self.now;
        if !self.started {
            self.started = true;
            let ids: Vec<String> = self.script.process_defs.iter().map(|d| d.id.clone()).collect();
            for id in ids {
                let (_, events) = self.orchestrator.start_instance(&id, now)?;
                self.queue.extend(events);
            }
        }
        for g in &mut self.groups {
            self.queue.extend(g.tick(now));
        }
        while let Some(&i) = self.injections.get(self.next_injection) {
            let inj = &self.script.injections[i];
            if inj.at.ms() > now {
                break;
            }
            self.next_injection += 1;
            if let Some(e) = &inj.event {
                self.queue.push_back(Event::new(&e.etype, &e.source, now, e.attrs.clone()));
            }
            if let Some(a) = inj.action.clone() {
                self.run_action(&a)?;
            }
        }
        self.drain()?;
        let tick = self.dcep.on_tick(now, self.broker.as_ref())?;
        self.queue.extend(tick.events);
        self.drain()?;
        let due = self.orchestrator.on_tick(now);
        self.queue.extend(due);
        self.drain()?;
        if tick.sar_due {
            let snapshot = self.orchestrator.snapshot(now);
            for (p, event) in self.sar.tick(&snapshot, now) {
                self.queue.push_back(event);
                if self.mode == DecisionMode::Scripted {
                    if let Some(policy) = self.script.proposal_policy.iter().find(|x| x.gap == p.gap.kind) {
                        self.scheduled_proposals.push((now + policy.delay.ms(), p.proposal_id.clone(), policy.choose.clone()));
                    }
                }
            }
            self.drain()?;
        }
        Ok(())
    }

    /// Issues due decision points, applies due scripted decisions and lets
    /// newly activated sensors report, until nothing changes.
    fn resolve(&mut self) -> Result<(), ScenarioError> {
        let now = self.now;
        loop {
            let mut progressed = false;
            for idx in 0..self.points.len() {
                if self.points[idx].state != PointState::Scheduled || self.points[idx].due > now {
                    continue;
                }
                progressed = true;
                self.issue_point(idx)?;
                self.drain()?;
                if self.mode == DecisionMode::Scripted {
                    let spec = &self.script.decision_points[idx];
                    let option = spec.choice.clone().ok_or_else(|| ScenarioError::MissingScriptedChoice(spec.id.clone()))?;
                    self.choose_point(idx, &option, "script")?;
                    self.drain()?;
                }
            }
            let mut due = Vec::new();
            self.scheduled_proposals.retain(|(at, id, opt)| {
                if *at <= now {
                    due.push((id.clone(), opt.clone()));
                    false
                } else {
                    true
                }
            });
            for (id, opt) in due {
                progressed = true;
                self.choose_proposal(&id, &opt, "script")?;
                self.drain()?;
            }
            for g in &mut self.groups {
                let events = g.tick(now);
                progressed |= !events.is_empty();
                self.queue.extend(events);
            }
            self.drain()?;
            if !progressed {
                return Ok(());
            }
        }
    }

    fn issue_point(&mut self, idx: usize) -> Result<u64, ScenarioError> {
        let spec = &self.script.decision_points[idx];
        let rt = &mut self.points[idx];
        rt.state = PointState::Open;
        rt.issued_ts = Some(self.now);
        let options = spec.options.iter().map(|o| o.id.as_str()).collect::<Vec<_>>().join(",");
        let mut attrs = attrs! {
            "point" => spec.id.as_str(),
            "role" => spec.role.as_str(),
            "prompt" => spec.prompt.as_str(),
            "options" => options,
        };
        if let Some(t) = &rt.trigger_event {
            attrs.insert("trigger".into(), Scalar::from(t.as_str()));
        }
        let event = Event::new(etype::DECISION_POINT, ORCHESTRATOR_SOURCE, self.now, attrs);
        self.process(event)
    }

    fn choose_point(&mut self, idx: usize, option: &str, chooser: &str) -> Result<u64, ScenarioError> {
        let script = Arc::clone(&self.script);
        let spec = &script.decision_points[idx];
        let opt = spec.option(option).ok_or_else(|| ScenarioError::UnknownPoint(format!("{}/{option}", spec.id)))?;
        let mut attrs = opt.attrs.clone();
        attrs.insert("point".into(), Scalar::from(spec.id.as_str()));
        attrs.insert("option".into(), Scalar::from(option));
        attrs.insert("chooser".into(), Scalar::from(chooser));
        attrs.insert("role".into(), Scalar::from(spec.role.as_str()));
        if let Some(plan) = &opt.plan {
            attrs.insert("plan".into(), Scalar::from(serde_json::to_string(plan).expect("json values serialize")));
        }
        let rt = &mut self.points[idx];
        rt.state = PointState::Decided;
        rt.chosen = Some(option.into());
        let seq = self.process(Event::new(etype::DECISION_CHOICE, &spec.role, self.now, attrs))?;
        self.choices.push(ChoiceRecord {
            point: Some(spec.id.clone()),
            proposal: None,
            option: option.into(),
            chooser: chooser.into(),
            ts: self.now,
            seq,
        });
        for action in &opt.actions {
            self.run_action(action)?;
        }
        Ok(seq)
    }

    fn choose_proposal(&mut self, proposal: &str, option: &str, chooser: &str) -> Result<u64, ScenarioError> {
        self.sar.check_choice(proposal, option)?;
        let seq = self.process(Event::new(
            etype::DECISION_CHOICE,
            chooser,
            self.now,
            attrs! {"proposal" => proposal, "option" => option, "chooser" => chooser},
        ))?;
        let events = self.sar.apply_choice(proposal, option, chooser, self.now, &mut self.orchestrator)?;
        self.queue.extend(events);
        self.choices.push(ChoiceRecord {
            point: None,
            proposal: Some(proposal.into()),
            option: option.into(),
            chooser: chooser.into(),
            ts: self.now,
            seq,
        });
        Ok(seq)
    }

    fn run_action(&mut self, action: &Action) -> Result<(), ScenarioError> {
        let now = self.now;
        let first_active = |o: &Orchestrator, kind: &str| {
            o.inventory()
                .reservations()
                .find(|r| r.active && r.kind == kind)
                .map(|r| r.id.clone())
                .ok_or_else(|| crate::orchestrator::OrchestratorError::UnknownReservation(kind.into()))
        };
        match action {
            Action::Activate { group, count } => {
                let g = self.groups.iter_mut().find(|g| g.spec.id == *group).expect("validated group");
                g.activate(*count, now);
            }
            Action::Reserve { resource, quantity, holder } => {
                let (_, events) = self.orchestrator.request_resources(resource, *quantity, holder, now)?;
                self.queue.extend(events);
            }
            Action::FieldLoss { resource, quantity } => {
                let id = first_active(&self.orchestrator, resource)?;
                let event = self.orchestrator.report_field_loss(&id, *quantity, now)?;
                self.queue.push_back(event);
            }
            Action::Release { resource } => {
                let id = first_active(&self.orchestrator, resource)?;
                let event = self.orchestrator.release_resources(&id, now)?;
                self.queue.push_back(event);
            }
        }
        Ok(())
    }

    fn drain(&mut self) -> Result<(), ScenarioError> {
        while let Some(event) = self.queue.pop_front() {
            self.process(event)?;
        }
        Ok(())
    }

    /// Publishes one event and feeds it to every consumer; derived events
    /// join the back of the queue.
    fn process(&mut self, mut event: Event) -> Result<u64, ScenarioError> {
        let now = self.now;
        event.id = self.ids.next_id();
        let seq = self.broker.publish(event.clone())?;
        event.seq = Some(seq);
        let derived = self.dcep.on_event(&event, now)?;
        self.queue.extend(derived);
        let advanced = self.orchestrator.advance_all(&event, now);
        self.queue.extend(advanced);
        for (spec, rt) in self.script.decision_points.iter().zip(&mut self.points) {
            if rt.state == PointState::Idle && spec.trigger.matches(&event) {
                rt.state = PointState::Scheduled;
                rt.trigger_event = Some(event.id.clone());
                rt.trigger_ts = Some(now);
                rt.due = now + spec.delay.ms();
            }
        }
        Ok(seq)
    }
}
