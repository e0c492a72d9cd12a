use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::event::{etype, Event};
use crate::time::MINUTE;

use super::script::{MilestoneSpec, PhaseSpec, ScenarioScript};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRate {
    pub name: String,
    pub from: u64,
    pub to: u64,
    /// Sensor measures published in `[from, to)`.
    pub measures: u64,
    pub per_minute: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilestoneResult {
    pub name: String,
    pub etype: String,
    pub expected: u64,
    pub actual: Option<u64>,
    pub seq: Option<u64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub events: u64,
    pub last_ts: Option<u64>,
    pub by_etype: BTreeMap<String, u64>,
    pub rates: Vec<PhaseRate>,
    /// Distinct timestamps of rule-engine alerts, by etype.
    pub alerts: BTreeMap<String, Vec<u64>>,
    /// (ts, gap kind) of every adaptation proposal.
    pub proposals: Vec<(u64, String)>,
    pub milestones: Vec<MilestoneResult>,
}

pub fn measure_rate(events: &[Event], from: u64, to: u64) -> (u64, f64) {
    let n = events
        .iter()
        .filter(|e| e.ts >= from && e.ts < to && etype::MEASURES.contains(&e.etype.as_str()))
        .count() as u64;
    (n, n as f64 * MINUTE as f64 / (to - from) as f64)
}

pub fn phase_rates(events: &[Event], phases: &[PhaseSpec]) -> Vec<PhaseRate> {
    phases
        .iter()
        .map(|p| {
            let (measures, per_minute) = measure_rate(events, p.from.ms(), p.to.ms());
            PhaseRate { name: p.name.clone(), from: p.from.ms(), to: p.to.ms(), measures, per_minute }
        })
        .collect()
}

/// Checks each milestone against the first matching event. `events` must be
/// in publish order.
pub fn check_milestones(events: &[Event], specs: &[MilestoneSpec]) -> Vec<MilestoneResult> {
    let mut results: Vec<MilestoneResult> = Vec::new();
    for m in specs {
        let hit = events
            .iter()
            .find(|e| e.etype == m.etype && m.conditions.iter().all(|(k, v)| e.attr(k) == Some(v)));
        let mut pass = hit.is_some_and(|e| e.ts == m.at.ms());
        if let (Some(after), Some(e)) = (&m.after, hit) {
            let before = results.iter().find(|r| r.name == *after).and_then(|r| r.seq);
            pass &= matches!((before, e.seq), (Some(a), Some(b)) if a < b);
        }
        results.push(MilestoneResult {
            name: m.name.clone(),
            etype: m.etype.clone(),
            expected: m.at.ms(),
            actual: hit.map(|e| e.ts),
            seq: hit.and_then(|e| e.seq),
            pass,
        });
    }
    results
}

fn clock(ms: u64) -> String {
    format!("{}:{:02}", ms / MINUTE, ms % MINUTE / 1000)
}

pub fn milestone_table(results: &[MilestoneResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(4).max(9);
    let mut out = format!("{:<width$}  {:<28}  {:>8}  {:>8}  result\n", "milestone", "etype", "expected", "actual");
    for r in results {
        let actual = r.actual.map_or("-".to_string(), clock);
        let verdict = if r.pass { "ok" } else { "FAIL" };
        let _ = writeln!(out, "{:<width$}  {:<28}  {:>8}  {:>8}  {verdict}", r.name, r.etype, clock(r.expected), actual);
    }
    out
}

pub fn run_metrics(events: &[Event], script: &ScenarioScript) -> RunMetrics {
    let mut by_etype = BTreeMap::new();
    let mut alerts: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    let mut proposals = Vec::new();
    for e in events {
        *by_etype.entry(e.etype.clone()).or_insert(0) += 1;
        if [etype::ALERT_RSN, etype::ALERT_MF, etype::SUGGEST_CONFINEMENT].contains(&e.etype.as_str()) {
            let ts = alerts.entry(e.etype.clone()).or_default();
            if ts.last() != Some(&e.ts) {
                ts.push(e.ts);
            }
        }
        if e.etype == etype::ADAPTATION_PROPOSAL {
            proposals.push((e.ts, e.text("gap_kind").unwrap_or_default().to_string()));
        }
    }
    RunMetrics {
        events: events.len() as u64,
        last_ts: events.iter().map(|e| e.ts).max(),
        by_etype,
        rates: phase_rates(events, &script.phases),
        alerts,
        proposals,
        milestones: check_milestones(events, &script.milestones),
    }
}
