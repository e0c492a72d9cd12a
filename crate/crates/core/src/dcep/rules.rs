use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::attrs;
use crate::event::{etype, Event, Scalar};
use crate::time::{SimTime, MINUTE};

use super::window::SensorWindow;
use super::DcepError;

pub const DCEP_SOURCE: &str = "dcep";

/// Rule thresholds. Dose rates in mSv/h, slope in mSv/h per minute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub v_plus: f64,
    pub v_minus: f64,
    pub s: f64,
    /// Wind speed change within the wind window, km/h.
    pub d_wi: f64,
    /// Wind direction span within the wind window, degrees.
    pub d_wd: f64,
    pub control_zone: f64,
    /// Cumulative dose, mSv.
    pub evac_cumulative: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            v_plus: 2.0,
            v_minus: 1.0,
            s: 0.2,
            d_wi: 30.0,
            d_wd: 45.0,
            control_zone: 0.025,
            evac_cumulative: 50.0,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), DcepError> {
        let all = [
            ("v_plus", self.v_plus),
            ("v_minus", self.v_minus),
            ("s", self.s),
            ("d_wi", self.d_wi),
            ("d_wd", self.d_wd),
            ("control_zone", self.control_zone),
            ("evac_cumulative", self.evac_cumulative),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v > 0.0) {
                return Err(DcepError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.v_plus <= self.v_minus {
            return Err(DcepError::InvalidConfig("v_plus must exceed v_minus".into()));
        }
        Ok(())
    }
}

/// Windows, periods and suppression for the rule set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleConfig {
    pub radiation_window: SimTime,
    pub wind_window: SimTime,
    pub report_period: SimTime,
    pub confinement_window: SimTime,
    pub confinement_min_sensors: usize,
    pub sar_period: SimTime,
    pub suppression: SimTime,
    pub out_of_order_slack: SimTime,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            radiation_window: SimTime(4 * MINUTE),
            wind_window: SimTime(2 * MINUTE),
            report_period: SimTime(5 * MINUTE),
            confinement_window: SimTime(5 * MINUTE),
            confinement_min_sensors: 3,
            sar_period: SimTime(10 * MINUTE),
            suppression: SimTime(5 * MINUTE),
            out_of_order_slack: SimTime(0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleKind {
    RadiationAlert,
    WindAlert,
    PeriodicReport,
    ConfinementTrigger,
    ConfinementCascade,
    PlanCascade,
    ResourceGapCheck,
    StatusGapCheck,
    BarrierClassification,
}

impl RuleKind {
    fn windowed(self) -> bool {
        matches!(self, RuleKind::RadiationAlert | RuleKind::WindAlert | RuleKind::ConfinementTrigger)
    }

    fn periodic(self) -> bool {
        matches!(
            self,
            RuleKind::PeriodicReport
                | RuleKind::ConfinementTrigger
                | RuleKind::ResourceGapCheck
                | RuleKind::StatusGapCheck
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub rule_id: String,
    pub kind: RuleKind,
    pub window_ms: u64,
    pub period_ms: u64,
    pub suppression_ms: u64,
}

impl RuleSpec {
    pub fn validate(&self) -> Result<(), DcepError> {
        if self.kind.windowed() && self.window_ms == 0 {
            return Err(DcepError::InvalidConfig(format!("{}: window must be positive", self.rule_id)));
        }
        if self.kind.periodic() && self.period_ms == 0 {
            return Err(DcepError::InvalidConfig(format!("{}: period must be positive", self.rule_id)));
        }
        Ok(())
    }
}

impl RuleConfig {
    /// The rule set this configuration describes.
    pub fn rule_specs(&self) -> Vec<RuleSpec> {
        let spec = |id: &str, kind, window: SimTime, period: SimTime, suppression: SimTime| RuleSpec {
            rule_id: id.to_string(),
            kind,
            window_ms: window.ms(),
            period_ms: period.ms(),
            suppression_ms: suppression.ms(),
        };
        let zero = SimTime(0);
        vec![
            spec("radiation-alert", RuleKind::RadiationAlert, self.radiation_window, zero, self.suppression),
            spec("wind-alert", RuleKind::WindAlert, self.wind_window, zero, self.suppression),
            spec("rsn-report", RuleKind::PeriodicReport, zero, self.report_period, zero),
            spec(
                "suggest-confinement",
                RuleKind::ConfinementTrigger,
                self.confinement_window,
                self.report_period,
                self.suppression,
            ),
            spec("confinement-cascade", RuleKind::ConfinementCascade, zero, zero, zero),
            spec("plan-cascade", RuleKind::PlanCascade, zero, zero, zero),
            spec("resource-gap", RuleKind::ResourceGapCheck, zero, self.sar_period, zero),
            spec("status-gap", RuleKind::StatusGapCheck, zero, self.sar_period, zero),
            spec("barrier", RuleKind::BarrierClassification, zero, zero, zero),
        ]
    }

    pub fn validate(&self) -> Result<(), DcepError> {
        if self.confinement_min_sensors == 0 {
            return Err(DcepError::InvalidConfig("confinement_min_sensors must be at least 1".into()));
        }
        self.rule_specs().iter().try_for_each(RuleSpec::validate)
    }
}

/// The radiation rule itself: above V+, or above V- and rising faster than s.
pub fn radiation_rule(value: f64, slope: Option<f64>, th: &Thresholds) -> bool {
    value > th.v_plus || (value > th.v_minus && slope.is_some_and(|s| s > th.s))
}

/// Evaluates the radiation rule on one sensor's window, without suppression.
pub fn eval_radiation_rule(sensor_id: &str, window: &SensorWindow, th: &Thresholds, now: u64) -> Option<Event> {
    let value = window.latest()?;
    let slope = window.slope();
    if !radiation_rule(value, slope, th) {
        return None;
    }
    let mut attrs = attrs! {"sensor" => sensor_id, "value" => value};
    if let Some(slope) = slope {
        attrs.insert("slope".into(), Scalar::Num(slope));
    }
    Some(Event::new(etype::ALERT_RSN, DCEP_SOURCE, now, attrs))
}

pub fn wind_rule(speed_change: f64, direction_span: f64, th: &Thresholds) -> bool {
    speed_change > th.d_wi || direction_span > th.d_wd
}

/// Evaluates the wind rule on one station's windows, without suppression.
pub fn eval_wind_rule(
    station_id: &str,
    speed: &SensorWindow,
    direction: &SensorWindow,
    th: &Thresholds,
    now: u64,
) -> Option<Event> {
    let speed_change = speed.range().map_or(0.0, |(lo, hi)| hi - lo);
    let direction_span = direction.circular_span();
    if !wind_rule(speed_change, direction_span, th) {
        return None;
    }
    Some(Event::new(
        etype::ALERT_MF,
        DCEP_SOURCE,
        now,
        attrs! {
            "station" => station_id,
            "speed_change" => speed_change,
            "direction_span" => direction_span,
            "speed" => speed.latest().unwrap_or(0.0),
        },
    ))
}

/// Confinement suggestion when enough distinct sensors exceeded V+ among
/// `measures`, which the caller restricts to the trigger window.
pub fn eval_confinement_trigger<'a>(
    measures: impl IntoIterator<Item = &'a Event>,
    th: &Thresholds,
    min_sensors: usize,
    now: u64,
) -> Option<Event> {
    let sensors: BTreeSet<&str> = measures
        .into_iter()
        .filter(|e| e.etype == etype::RADIATION_MEASURE && e.num("value").is_some_and(|v| v > th.v_plus))
        .map(|e| e.source.as_str())
        .collect();
    if sensors.len() < min_sensors {
        return None;
    }
    let list = sensors.iter().copied().collect::<Vec<_>>().join(",");
    Some(Event::new(
        etype::SUGGEST_CONFINEMENT,
        DCEP_SOURCE,
        now,
        attrs! {"sensors" => list, "sensor_count" => sensors.len()},
    ))
}

/// Decision-to-alert cascades. Depends only on the input's etype and attrs.
pub fn eval_cascade(event: &Event, now: u64) -> Option<Event> {
    let target = match event.etype.as_str() {
        etype::CONFINEMENT_DECISION => etype::ALERT_POLICE_REPRESENTATIVE,
        etype::CONFINEMENT_PLAN_VALIDATED => etype::ALERT_OFFICE_OF_INFRASTRUCTURE,
        _ => return None,
    };
    let mut attrs = event.attrs.clone();
    attrs.insert("cause".into(), Scalar::Str(event.etype.clone()));
    Some(Event::new(target, DCEP_SOURCE, now, attrs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ZoneClass {
    Normal,
    ControlZone,
    ConfineAndIodine,
    Evacuate,
}

/// Legislative dose barriers. Every barrier is "above", so a value equal to
/// a barrier stays in the lower class.
pub fn classify_barrier(dose_rate: f64, cumulative_dose: f64, th: &Thresholds) -> ZoneClass {
    if cumulative_dose > th.evac_cumulative {
        ZoneClass::Evacuate
    } else if dose_rate > th.v_plus {
        ZoneClass::ConfineAndIodine
    } else if dose_rate > th.control_zone {
        ZoneClass::ControlZone
    } else {
        ZoneClass::Normal
    }
}
