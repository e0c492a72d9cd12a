use std::collections::BTreeMap;

use crate::attrs;
use crate::event::{etype, Event, Scalar};

use super::rules::DCEP_SOURCE;

pub const REPORT_KIND: &str = "rsn-summary";

/// Builds the periodic radiation report from the measures of
/// `[from, to)`. Events outside the window or of other types are ignored.
///
/// The `series` attribute holds a canonical JSON object mapping each sensor
/// id to its `[ts, value]` pairs in time order.
pub fn build_report<'a>(measures: impl IntoIterator<Item = &'a Event>, from: u64, to: u64) -> Event {
    let mut series: BTreeMap<&str, Vec<(u64, f64)>> = BTreeMap::new();
    for e in measures {
        if e.etype != etype::RADIATION_MEASURE || e.ts < from || e.ts >= to {
            continue;
        }
        if let Some(v) = e.num("value") {
            series.entry(&e.source).or_default().push((e.ts, v));
        }
    }
    let mut sample_count = 0usize;
    let mut max_value: Option<f64> = None;
    for points in series.values_mut() {
        points.sort_by_key(|p| p.0);
        sample_count += points.len();
        for &(_, v) in points.iter() {
            max_value = Some(max_value.map_or(v, |m: f64| m.max(v)));
        }
    }
    let doc = serde_json::to_string(&series).expect("series is plain data");
    let mut attrs = attrs! {
        "kind" => REPORT_KIND,
        "from" => from,
        "to" => to,
        "sensor_count" => series.len(),
        "sample_count" => sample_count,
        "series" => doc,
    };
    if let Some(max) = max_value {
        attrs.insert("max_value".into(), Scalar::Num(max));
    }
    Event::new(etype::REPORT, DCEP_SOURCE, to, attrs)
}

/// Parses the `series` attribute of a report back into per-sensor points.
pub fn report_series(report: &Event) -> Option<BTreeMap<String, Vec<(u64, f64)>>> {
    serde_json::from_str(report.text("series")?).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_window() {
        let r = build_report([], 0, 300_000);
        assert_eq!(r.num("sensor_count"), Some(0.0));
        assert_eq!(r.num("sample_count"), Some(0.0));
        assert_eq!(r.num("max_value"), None);
        assert_eq!(report_series(&r).unwrap().len(), 0);
    }

    #[test]
    fn counts_only_window() {
        let events: Vec<Event> = (0..12u64)
            .flat_map(|i| {
                ["rsn-1", "rsn-2"].map(|s| Event::new(etype::RADIATION_MEASURE, s, i * 30_000, attrs! {"value" => i as f64}))
            })
            .collect();
        let r = build_report(&events, 0, 300_000);
        assert_eq!(r.num("sample_count"), Some(20.0));
        assert_eq!(r.num("max_value"), Some(9.0));
        let series = report_series(&r).unwrap();
        assert_eq!(series["rsn-2"].len(), 10);
        assert_eq!(series["rsn-2"][9], (270_000, 9.0));
    }
}
