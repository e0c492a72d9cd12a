use crisis_demo::{explore_ramp, explore_rule, simulate, Overrides};
use crisis_core::dcep::ZoneClass;

#[test]
fn default_simulation_meets_every_milestone() {
    let sim = simulate(&Overrides::default()).unwrap();
    assert!(sim.milestones.iter().all(|m| m.pass));
    let rates: Vec<f64> = sim.rates.iter().map(|r| r.per_minute).collect();
    assert_eq!(rates, [30.0, 70.0, 660.0]);
}

#[test]
fn gentler_ramp_delays_the_first_alert() {
    let sim = simulate(&Overrides { ramp_slope: Some(0.1), end_min: Some(20), ..Default::default() }).unwrap();
    let first = sim.alerts.get("AlertRSN").and_then(|a| a.first().copied());
    assert_ne!(first, Some(7 * 60_000));
    assert!(sim.milestones.iter().any(|m| m.name == "radiation-alert" && !m.pass));
}

#[test]
fn calm_wind_means_no_wind_alert() {
    let sim = simulate(&Overrides { wind_speed: Some(10.0), end_min: Some(20), ..Default::default() }).unwrap();
    assert!(!sim.alerts.contains_key("AlertMF"));
}

#[test]
fn rule_explorer() {
    assert!(!explore_rule(1.5, f64::NAN, 0.0).alert);
    assert!(explore_rule(1.5, 0.3, 0.0).alert);
    assert!(explore_rule(2.1, f64::NAN, 0.0).alert);
    assert_eq!(explore_rule(0.02, f64::NAN, 0.0).zone, ZoneClass::Normal);
    assert_eq!(explore_rule(0.6, f64::NAN, 0.0).zone, ZoneClass::ControlZone);
    assert_eq!(explore_rule(2.1, f64::NAN, 0.0).zone, ZoneClass::ConfineAndIodine);
    assert_eq!(explore_rule(0.0, f64::NAN, 51.0).zone, ZoneClass::Evacuate);
}

#[test]
fn ramp_explorer_alerts_once_the_trend_is_defined() {
    let points = explore_ramp(0.6, 0.3, 10, 0.0, 1);
    assert_eq!(points.len(), 21);
    assert!(points.iter().take_while(|p| p.t_min < 4.0).all(|p| p.slope.is_none()));
    let first = points.iter().find(|p| p.alert).unwrap();
    assert_eq!(first.t_min, 4.0);
    assert!((first.slope.unwrap() - 0.3).abs() < 1e-9);
    assert_eq!(explore_ramp(0.6, 0.3, 10, 0.2, 9), explore_ramp(0.6, 0.3, 10, 0.2, 9));
}
