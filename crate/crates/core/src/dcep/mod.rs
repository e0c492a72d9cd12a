//! Complex-event processing: crisis business rules over the ordered stream.

mod report;
mod rules;
mod window;

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::cloud::{CloudError, EventHistory};
use crate::event::{etype, Event};
use crate::pattern::Pattern;
use crate::time::MINUTE;

pub use report::{build_report, report_series, REPORT_KIND};
pub use rules::{
    classify_barrier, eval_cascade, eval_confinement_trigger, eval_radiation_rule, eval_wind_rule,
    radiation_rule, wind_rule, RuleConfig, RuleKind, RuleSpec, Thresholds, ZoneClass, DCEP_SOURCE,
};
pub use window::{circular_span, estimate_slope, SensorWindow, SlopeError};

#[derive(Debug, Error)]
pub enum DcepError {
    #[error("event at ts {ts} is older than the stream position {last}")]
    OutOfOrder { ts: u64, last: u64 },
    #[error("invalid rule configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    History(#[from] CloudError),
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct TickOutput {
    pub events: Vec<Event>,
    /// True on adaptation-recommender boundaries.
    pub sar_due: bool,
}

/// The rule engine. One logical consumer feeds it events and ticks in
/// order; it keeps per-source windows and suppression state.
#[derive(Debug, Clone)]
pub struct Dcep {
    thresholds: Thresholds,
    config: RuleConfig,
    radiation: BTreeMap<String, SensorWindow>,
    speed: BTreeMap<String, SensorWindow>,
    direction: BTreeMap<String, SensorWindow>,
    last_fired: HashMap<(&'static str, String), u64>,
    position: u64,
}

impl Dcep {
    pub fn new(thresholds: Thresholds, config: RuleConfig) -> Result<Self, DcepError> {
        thresholds.validate()?;
        config.validate()?;
        Ok(Dcep {
            thresholds,
            config,
            radiation: BTreeMap::new(),
            speed: BTreeMap::new(),
            direction: BTreeMap::new(),
            last_fired: HashMap::new(),
            position: 0,
        })
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.thresholds
    }

    pub fn config(&self) -> &RuleConfig {
        &self.config
    }

    pub fn radiation_window(&self, sensor: &str) -> Option<&SensorWindow> {
        self.radiation.get(sensor)
    }

    /// Records a firing unless the same rule fired for `subject` within the
    /// suppression window; returns whether the firing goes out.
    fn admit(&mut self, rule: &'static str, subject: &str, now: u64) -> bool {
        let key = (rule, subject.to_string());
        if let Some(&last) = self.last_fired.get(&key) {
            if now.saturating_sub(last) < self.config.suppression.ms() {
                return false;
            }
        }
        self.last_fired.insert(key, now);
        true
    }

    pub fn on_event(&mut self, event: &Event, now: u64) -> Result<Vec<Event>, DcepError> {
        if event.ts + self.config.out_of_order_slack.ms() < self.position {
            return Err(DcepError::OutOfOrder { ts: event.ts, last: self.position });
        }
        self.position = self.position.max(event.ts);
        let mut out = Vec::new();
        match event.etype.as_str() {
            etype::RADIATION_MEASURE => {
                let Some(value) = event.num("value") else { return Ok(out) };
                let window_ms = self.config.radiation_window.ms();
                let window = self
                    .radiation
                    .entry(event.source.clone())
                    .or_insert_with(|| SensorWindow::new(window_ms));
                window.push(event.ts, value);
                if let Some(mut alert) = eval_radiation_rule(&event.source, window, &self.thresholds, now) {
                    if self.admit(etype::ALERT_RSN, &event.source, now) {
                        alert.geo = event.geo;
                        out.push(alert);
                    }
                }
            }
            etype::WIND_SPEED_MEASURE | etype::WIND_DIRECTION_MEASURE => {
                let (attr, is_speed) = if event.etype == etype::WIND_SPEED_MEASURE {
                    ("speed", true)
                } else {
                    ("direction", false)
                };
                let Some(value) = event.num(attr) else { return Ok(out) };
                let window_ms = self.config.wind_window.ms();
                let (mine, other) = if is_speed {
                    (&mut self.speed, &mut self.direction)
                } else {
                    (&mut self.direction, &mut self.speed)
                };
                mine.entry(event.source.clone()).or_insert_with(|| SensorWindow::new(window_ms)).push(event.ts, value);
                let other = other.entry(event.source.clone()).or_insert_with(|| SensorWindow::new(window_ms));
                other.evict(event.ts);
                let (speed, direction) = (&self.speed[&event.source], &self.direction[&event.source]);
                if let Some(mut alert) = eval_wind_rule(&event.source, speed, direction, &self.thresholds, now) {
                    if self.admit(etype::ALERT_MF, &event.source, now) {
                        alert.geo = event.geo;
                        out.push(alert);
                    }
                }
            }
            _ => out.extend(eval_cascade(event, now)),
        }
        Ok(out)
    }

    /// Minute-boundary processing: periodic report and confinement check on
    /// report-period multiples, and the recommender flag on its period.
    pub fn on_tick(&mut self, now: u64, history: &dyn EventHistory) -> Result<TickOutput, DcepError> {
        let mut out = TickOutput::default();
        if now == 0 || !now.is_multiple_of(MINUTE) {
            return Ok(out);
        }
        let period = self.config.report_period.ms();
        if now.is_multiple_of(period) {
            let from = now.saturating_sub(period);
            let measures = history.query_history(from, now, &Pattern::etype(etype::RADIATION_MEASURE))?;
            out.events.push(build_report(&measures, from, now));
            let cfrom = now.saturating_sub(self.config.confinement_window.ms());
            let window: Vec<&Event> = measures.iter().filter(|e| e.ts >= cfrom).collect();
            let suggestion = if cfrom < from {
                let wider = history.query_history(cfrom, now, &Pattern::etype(etype::RADIATION_MEASURE))?;
                eval_confinement_trigger(&wider, &self.thresholds, self.config.confinement_min_sensors, now)
            } else {
                eval_confinement_trigger(window, &self.thresholds, self.config.confinement_min_sensors, now)
            };
            if let Some(suggestion) = suggestion {
                if self.admit(etype::SUGGEST_CONFINEMENT, "", now) {
                    out.events.push(suggestion);
                }
            }
        }
        out.sar_due = now.is_multiple_of(self.config.sar_period.ms());
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attrs;
    use crate::cloud::HistoryStore;

    fn engine() -> Dcep {
        Dcep::new(Thresholds::default(), RuleConfig::default()).unwrap()
    }

    fn rad(source: &str, ts: u64, v: f64) -> Event {
        Event::new(etype::RADIATION_MEASURE, source, ts, attrs! {"value" => v})
    }

    #[test]
    fn high_value_alerts_at_once() {
        let mut d = engine();
        let out = d.on_event(&rad("rsn-1", 0, 2.5), 0).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].etype, etype::ALERT_RSN);
        assert_eq!(out[0].source, DCEP_SOURCE);
        assert_eq!(out[0].text("sensor"), Some("rsn-1"));
    }

    #[test]
    fn suppression_window() {
        let mut d = engine();
        let mut fired = vec![];
        for i in 0..30u64 {
            let ts = i * 30_000;
            if !d.on_event(&rad("rsn-1", ts, 2.5), ts).unwrap().is_empty() {
                fired.push(ts);
            }
        }
        assert_eq!(fired, [0, 300_000, 600_000]);
    }

    #[test]
    fn steady_wind_is_quiet() {
        let mut d = engine();
        for i in 0..10u64 {
            let ts = i * 30_000;
            let s = Event::new(etype::WIND_SPEED_MEASURE, "mf-1", ts, attrs! {"speed" => 10.0});
            let w = Event::new(etype::WIND_DIRECTION_MEASURE, "mf-1", ts, attrs! {"direction" => 135.0});
            assert!(d.on_event(&s, ts).unwrap().is_empty());
            assert!(d.on_event(&w, ts).unwrap().is_empty());
        }
    }

    #[test]
    fn wind_rise_and_swing() {
        let mut d = engine();
        let s0 = Event::new(etype::WIND_SPEED_MEASURE, "mf-1", 0, attrs! {"speed" => 0.0});
        let s1 = Event::new(etype::WIND_SPEED_MEASURE, "mf-1", 30_000, attrs! {"speed" => 40.0});
        d.on_event(&s0, 0).unwrap();
        assert_eq!(d.on_event(&s1, 30_000).unwrap()[0].etype, etype::ALERT_MF);

        let mut d = engine();
        let a = Event::new(etype::WIND_DIRECTION_MEASURE, "mf-2", 0, attrs! {"direction" => 350.0});
        let b = Event::new(etype::WIND_DIRECTION_MEASURE, "mf-2", 30_000, attrs! {"direction" => 80.0});
        d.on_event(&a, 0).unwrap();
        let out = d.on_event(&b, 30_000).unwrap();
        assert_eq!(out[0].num("direction_span"), Some(90.0));
    }

    #[test]
    fn out_of_order_rejected() {
        let mut d = engine();
        d.on_event(&rad("a", 60_000, 0.1), 60_000).unwrap();
        assert!(matches!(d.on_event(&rad("a", 30_000, 0.1), 60_000), Err(DcepError::OutOfOrder { .. })));
    }

    #[test]
    fn ancient_spike_has_no_effect() {
        let mut d = engine();
        let spike = Event::new(etype::WIND_SPEED_MEASURE, "mf-1", 0, attrs! {"speed" => 100.0});
        d.on_event(&spike, 0).unwrap();
        let later = Event::new(etype::WIND_SPEED_MEASURE, "mf-1", 10 * MINUTE, attrs! {"speed" => 10.0});
        assert!(d.on_event(&later, 10 * MINUTE).unwrap().is_empty());
    }

    #[test]
    fn ticks() {
        let mut d = engine();
        let mut store = HistoryStore::new(2).unwrap();
        for (i, ts) in (0..10u64).map(|i| i * 30_000).enumerate() {
            let mut e = rad("rsn-1", ts, 0.5);
            e.seq = Some(i as u64 + 1);
            store.append(e).unwrap();
        }
        assert!(d.on_tick(4 * MINUTE, &store).unwrap().events.is_empty());
        let five = d.on_tick(5 * MINUTE, &store).unwrap();
        assert_eq!(five.events.len(), 1);
        assert_eq!(five.events[0].num("sample_count"), Some(10.0));
        assert!(!five.sar_due);
        let ten = d.on_tick(10 * MINUTE, &store).unwrap();
        assert_eq!(ten.events.len(), 1);
        assert!(ten.sar_due);
        assert!(d.on_tick(10 * MINUTE + 30_000, &store).unwrap() == TickOutput::default());
    }
}
