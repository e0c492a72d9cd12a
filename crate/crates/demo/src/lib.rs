//! Browser demo over the scenario engine. Every export takes and returns
//! JSON strings so the page needs no generated bindings beyond these three.

use crisis_core::dcep::{classify_barrier, eval_radiation_rule, radiation_rule, SensorWindow, Thresholds, ZoneClass};
use crisis_core::scenario::{builtin, run_metrics, DecisionMode, Driver, MilestoneResult, PhaseRate};
use crisis_core::time::{SimTime, MINUTE};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use wasm_bindgen::prelude::*;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overrides {
    /// Slope of the 5 km ramp, units per minute.
    pub ramp_slope: Option<f64>,
    /// Wind speed after the wind rises, km/h.
    pub wind_speed: Option<f64>,
    /// Run length in minutes.
    pub end_min: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Simulation {
    pub events: u64,
    pub by_etype: BTreeMap<String, u64>,
    pub rates: Vec<PhaseRate>,
    pub alerts: BTreeMap<String, Vec<u64>>,
    pub proposals: Vec<(u64, String)>,
    pub milestones: Vec<MilestoneResult>,
}

pub fn simulate(overrides: &Overrides) -> Result<Simulation, String> {
    let mut script = builtin::nuclear();
    if let Some(slope) = overrides.ramp_slope {
        let group = script.sensor_groups.iter_mut().find(|g| g.id == "rsn-5km").ok_or("no rsn-5km group")?;
        for seg in &mut group.program {
            if let Some(r) = &mut seg.ramp {
                r.slope = slope;
            }
        }
    }
    if let Some(speed) = overrides.wind_speed {
        let group = script.sensor_groups.iter_mut().find(|g| g.id == "mf").ok_or("no mf group")?;
        if let Some(last) = group.program.last_mut() {
            last.constant = Some(speed);
        }
    }
    if let Some(end) = overrides.end_min {
        let end = SimTime(end.clamp(1, 105) * MINUTE);
        script.end = end;
        script.injections.retain(|i| i.at <= end);
        script.periods.retain(|p| p.from < end);
        script.phases.retain(|p| p.to <= end);
    }
    script.validate().map_err(|e| e.to_string())?;
    let log = Driver::new(script.clone(), DecisionMode::Scripted)
        .and_then(|mut d| d.run())
        .map_err(|e| e.to_string())?;
    let m = run_metrics(&log.events, &script);
    Ok(Simulation {
        events: m.events,
        by_etype: m.by_etype,
        rates: m.rates,
        alerts: m.alerts,
        proposals: m.proposals,
        milestones: m.milestones,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleVerdict {
    pub alert: bool,
    pub zone: ZoneClass,
}

/// Radiation rule and legislative barrier with default thresholds. A
/// non-finite slope means the trend is still undefined.
pub fn explore_rule(value: f64, slope: f64, cumulative_dose: f64) -> RuleVerdict {
    let th = Thresholds::default();
    let slope = slope.is_finite().then_some(slope);
    RuleVerdict { alert: radiation_rule(value, slope, &th), zone: classify_barrier(value, cumulative_dose, &th) }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RampPoint {
    pub t_min: f64,
    pub value: f64,
    pub slope: Option<f64>,
    pub alert: bool,
}

/// Feeds one sensor's 30 s samples of `v0 + slope * t` (plus uniform noise
/// of the given amplitude) through the rule window.
pub fn explore_ramp(v0: f64, slope: f64, minutes: u32, noise: f64, seed: u64) -> Vec<RampPoint> {
    let th = Thresholds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut window = SensorWindow::new(4 * MINUTE);
    let mut out = Vec::new();
    for k in 0..=u64::from(minutes.min(240)) * 2 {
        let ts = k * 30_000;
        let t_min = ts as f64 / MINUTE as f64;
        let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        let value = ((v0 + slope * t_min + noise * (u - 0.5)) * 1000.0).round() / 1000.0;
        window.push(ts, value);
        let alert = eval_radiation_rule("rsn-5km-001", &window, &th, ts).is_some();
        out.push(RampPoint { t_min, value, slope: window.slope(), alert });
    }
    out
}

fn to_js<T: Serialize>(value: &T) -> Result<String, JsValue> {
    serde_json::to_string(value).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = simulate)]
pub fn simulate_js(overrides: &str) -> Result<String, JsValue> {
    let overrides: Overrides = serde_json::from_str(overrides).map_err(|e| JsValue::from_str(&e.to_string()))?;
    to_js(&simulate(&overrides).map_err(|e| JsValue::from_str(&e))?)
}

#[wasm_bindgen(js_name = exploreRule)]
pub fn explore_rule_js(value: f64, slope: f64, cumulative_dose: f64) -> Result<String, JsValue> {
    to_js(&explore_rule(value, slope, cumulative_dose))
}

#[wasm_bindgen(js_name = exploreRamp)]
pub fn explore_ramp_js(v0: f64, slope: f64, minutes: u32, noise: f64, seed: u32) -> Result<String, JsValue> {
    to_js(&explore_ramp(v0, slope, minutes, noise, u64::from(seed)))
}
