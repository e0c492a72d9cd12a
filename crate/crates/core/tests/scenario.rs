use crisis_core::event::{etype, Event};
use crisis_core::scenario::script::SensorKind;
use crisis_core::scenario::{
    builtin, check_milestones, ChoiceRequest, DecisionMode, Driver, PointState, ScenarioError, ScenarioScript, Step,
};
use crisis_core::time::{SimTime, MINUTE};

fn scripted_choice(driver: &Driver) -> Option<ChoiceRequest> {
    let script = driver.script();
    if let Some(p) = driver.decision_points().into_iter().find(|p| p.state == PointState::Open) {
        let option = script.decision_point(&p.id)?.choice.clone()?;
        return Some(ChoiceRequest { chooser: "console".into(), ..ChoiceRequest::point(&p.id, &option) });
    }
    let prop = driver.open_proposals().into_iter().next()?;
    let policy = script.proposal_policy.iter().find(|x| x.gap == prop.gap.kind)?;
    Some(ChoiceRequest { chooser: "console".into(), ..ChoiceRequest::proposal(&prop.proposal_id, &policy.choose) })
}

#[test]
fn shipped_scenario_shape() {
    let s = builtin::nuclear();
    assert_eq!(s.periods.len(), 3);
    assert_eq!(s.end, SimTime(105 * MINUTE));
    assert_eq!(s.process_defs.len(), 6);
    let from_disk = ScenarioScript::load_file(std::path::Path::new(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../scenarios/nuclear.scenario"
    )))
    .unwrap();
    assert_eq!(from_disk, s);
}

#[test]
fn scripted_runs_are_deterministic() {
    let a = Driver::new(builtin::nuclear(), DecisionMode::Scripted).unwrap().run().unwrap();
    let b = Driver::new(builtin::nuclear(), DecisionMode::Scripted).unwrap().run().unwrap();
    assert_eq!(a, b);
    assert!(a.events.windows(2).all(|w| w[0].ts <= w[1].ts));
    assert!(a.events.windows(2).all(|w| w[0].seq < w[1].seq));
}

#[test]
fn empty_scenario_gives_empty_log() {
    let s = builtin::load("name = \"empty\"\nend = 0\n").unwrap();
    let log = Driver::new(s, DecisionMode::Scripted).unwrap().run().unwrap();
    assert!(log.events.is_empty() && log.choices.is_empty());
}

#[test]
fn first_period_only() {
    let mut s = builtin::nuclear();
    s.end = SimTime(20 * MINUTE);
    s.injections.retain(|i| i.at <= s.end);
    s.periods.truncate(1);
    s.milestones.clear();
    let log = Driver::new(s, DecisionMode::Scripted).unwrap().run().unwrap();
    let has = |t: &str| log.events.iter().any(|e| e.etype == t);
    assert!(has(etype::ALERT_RSN) && has(etype::ALERT_MF));
    assert!(!has(etype::ADAPTATION_PROPOSAL));
    assert_eq!(log.events.iter().map(|e| e.ts).max(), Some(20 * MINUTE));
}

#[test]
fn missing_scripted_choice() {
    let text = builtin::NUCLEAR.replacen("choice = \"extend-30km\"\n", "", 1);
    let s = builtin::load(&text).unwrap();
    assert!(matches!(
        Driver::new(s.clone(), DecisionMode::Scripted),
        Err(ScenarioError::MissingScriptedChoice(id)) if id == "perimeter-30km"
    ));
    assert!(Driver::new(s, DecisionMode::External).is_ok());
}

#[test]
fn rate_law_every_minute() {
    let script = builtin::nuclear();
    let mut d = Driver::new(script, DecisionMode::Scripted).unwrap();
    let mut expected = Vec::new();
    loop {
        let now = d.now();
        match d.step().unwrap() {
            Step::Finished => break,
            Step::Ticked(_) => {
                let (mut rad, mut stations) = (0u64, 0u64);
                for g in d.sensor_groups() {
                    let n = g.sensors().len() as u64;
                    match g.spec.kind {
                        SensorKind::Radiation => rad += n,
                        SensorKind::Weather => stations += n,
                        _ => {}
                    }
                }
                // Per-tick emission; two ticks per minute.
                expected.push((now, rad + 2 * stations));
            }
            Step::AwaitingDecision => unreachable!(),
        }
    }
    let log = d.log();
    for (now, want) in expected {
        let got = log
            .events
            .iter()
            .filter(|e| e.ts == now && etype::MEASURES.contains(&e.etype.as_str()))
            .count() as u64;
        assert_eq!(got, want, "tick {now}");
    }
    for minute in 0..20u64 {
        let (r, w) = match minute {
            0..=8 => (5, 5),
            9..=13 => (25, 5),
            _ => (320, 5),
        };
        let n = log
            .events
            .iter()
            .filter(|e| e.ts / MINUTE == minute && etype::MEASURES.contains(&e.etype.as_str()))
            .count() as u64;
        assert_eq!(n, 2 * r + 4 * w, "minute {minute}");
    }
}

#[test]
fn external_mode_matches_scripted_milestones() {
    let script = builtin::nuclear();
    let scripted = Driver::new(script.clone(), DecisionMode::Scripted).unwrap().run().unwrap();
    let mut d = Driver::new(script.clone(), DecisionMode::External).unwrap();
    let mut pauses = Vec::new();
    let log = d
        .run_with(|d| {
            pauses.push(d.now());
            scripted_choice(d)
        })
        .unwrap();
    let a = check_milestones(&scripted.events, &script.milestones);
    let b = check_milestones(&log.events, &script.milestones);
    assert!(b.iter().all(|r| r.pass), "{b:?}");
    assert_eq!(
        a.iter().map(|r| (&r.name, r.actual)).collect::<Vec<_>>(),
        b.iter().map(|r| (&r.name, r.actual)).collect::<Vec<_>>()
    );
    assert_eq!(log.choices.len(), scripted.choices.len());
    for c in &log.choices {
        let e: &Event = log.events.iter().find(|e| e.seq == Some(c.seq)).unwrap();
        assert_eq!(e.etype, etype::DECISION_CHOICE);
        assert_eq!(e.text("chooser"), Some("console"));
    }
    assert!(pauses.contains(&(9 * MINUTE)) && pauses.contains(&(60 * MINUTE)));
}

#[test]
fn pause_holds_the_clock() {
    let mut d = Driver::new(builtin::nuclear(), DecisionMode::External).unwrap();
    loop {
        if d.step().unwrap() == Step::AwaitingDecision {
            break;
        }
    }
    let paused_at = d.now();
    assert_eq!(paused_at, 9 * MINUTE);
    let seen = d.broker().len();
    assert_eq!(d.step().unwrap(), Step::AwaitingDecision);
    assert_eq!(d.broker().len(), seen, "nothing happens while waiting");
    d.submit_choice(&ChoiceRequest::point("perimeter-30km", "extend-30km")).unwrap();
    assert!(d.broker().log().iter().all(|e| e.ts <= paused_at));
}

#[test]
fn choice_errors() {
    let mut d = Driver::new(builtin::nuclear(), DecisionMode::External).unwrap();
    while d.step().unwrap() != Step::AwaitingDecision {}
    assert!(matches!(
        d.submit_choice(&ChoiceRequest::point("perimeter-30km", "nope")),
        Err(ScenarioError::UnknownPoint(_))
    ));
    assert!(matches!(d.submit_choice(&ChoiceRequest::point("no-such", "x")), Err(ScenarioError::UnknownPoint(_))));
    assert!(matches!(
        d.submit_choice(&ChoiceRequest::point("confinement", "confine-5km")),
        Err(ScenarioError::UnknownPoint(_))
    ));
    let seq = d.submit_choice(&ChoiceRequest::point("perimeter-30km", "extend-30km")).unwrap();
    let before = d.broker().log().iter().filter(|e| e.etype == etype::DECISION_CHOICE).count();
    assert!(matches!(
        d.submit_choice(&ChoiceRequest::point("perimeter-30km", "extend-30km")),
        Err(ScenarioError::AlreadyDecided(_))
    ));
    let after = d.broker().log().iter().filter(|e| e.etype == etype::DECISION_CHOICE).count();
    assert_eq!(before, after);
    assert_eq!(d.broker().log().last().map(|e| e.seq.is_some()), Some(true));
    assert!(seq > 0);
}

#[test]
fn proposal_choice_errors() {
    let mut d = Driver::new(builtin::nuclear(), DecisionMode::External).unwrap();
    loop {
        if d.step().unwrap() != Step::AwaitingDecision {
            continue;
        }
        if let Some(p) = d.open_proposals().into_iter().next() {
            assert_eq!(d.now(), 60 * MINUTE);
            assert!(matches!(
                d.submit_choice(&ChoiceRequest::proposal(&p.proposal_id, "Teleport")),
                Err(ScenarioError::UnknownPoint(_))
            ));
            d.submit_choice(&ChoiceRequest::proposal(&p.proposal_id, "DispatchResidualTasksOnRemainingResources"))
                .unwrap();
            assert!(matches!(
                d.submit_choice(&ChoiceRequest::proposal(&p.proposal_id, "AskForNewResource")),
                Err(ScenarioError::AlreadyDecided(_))
            ));
            let stock = d.orchestrator().inventory().stock_of("vehicle").unwrap();
            assert_eq!(stock.committed, 2);
            break;
        }
        let c = scripted_choice(&d).unwrap();
        d.submit_choice(&c).unwrap();
    }
}

#[test]
fn schema_errors() {
    assert!(matches!(builtin::load(""), Err(ScenarioError::Schema { .. })));
    let bad = builtin::NUCLEAR.replace("from = \"20m\"\nconstant = 1.8", "from = \"19m\"\nconstant = 1.8");
    assert!(matches!(builtin::load(&bad), Err(ScenarioError::Semantic(_))));
}
