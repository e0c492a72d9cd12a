use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attrs;
use crate::event::{etype, splitmix64, Event};
use crate::geo::GeoPoint;

use super::script::{SensorGroupSpec, SensorKind, ValueProgram};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sensor {
    pub id: String,
    /// 1-based number within the group.
    pub number: u32,
    pub geo: GeoPoint,
    pub activated_ts: u64,
    #[serde(skip)]
    last_emit: Option<u64>,
}

/// Runtime state of one sensor group: which sensors exist and where.
#[derive(Debug, Clone)]
pub struct SensorGroup {
    pub spec: SensorGroupSpec,
    sensors: Vec<Sensor>,
    rng: ChaCha8Rng,
}

fn group_seed(seed: u64, id: &str) -> u64 {
    let h = id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3));
    splitmix64(seed ^ h)
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

impl SensorGroup {
    /// Creates the group with its initial sensors active from `now`.
    pub fn new(spec: SensorGroupSpec, seed: u64, now: u64) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(group_seed(seed, &spec.id));
        let count = spec.count;
        let mut group = SensorGroup { spec, sensors: Vec::new(), rng };
        group.activate(count, now);
        group
    }

    pub fn sensors(&self) -> &[Sensor] {
        &self.sensors
    }

    /// Adds `count` sensors on the group's ring, placed uniformly within its
    /// sector with a small radial jitter.
    pub fn activate(&mut self, count: u32, now: u64) -> Vec<Sensor> {
        let ring = self.spec.ring;
        let [lo, hi] = ring.sector.unwrap_or([0.0, 360.0]);
        let span = (hi - lo).rem_euclid(360.0);
        let span = if span == 0.0 { 360.0 } else { span };
        let mut added = Vec::new();
        for _ in 0..count {
            let bearing = (lo + span * unit(&mut self.rng)).rem_euclid(360.0);
            let radius = ring.radius_km * (0.95 + 0.1 * unit(&mut self.rng));
            let number = self.sensors.len() as u32 + 1;
            let sensor = Sensor {
                id: format!("{}-{number:03}", self.spec.id),
                number,
                geo: ring.center.destination(bearing, radius),
                activated_ts: now,
                last_emit: None,
            };
            added.push(sensor.clone());
            self.sensors.push(sensor);
        }
        added
    }

    /// Measures due at `now`. Sensors emit on cadence boundaries once per
    /// boundary, so calling this again in the same tick only yields sensors
    /// activated since the previous call.
    pub fn tick(&mut self, now: u64) -> Vec<Event> {
        if !now.is_multiple_of(self.spec.cadence.ms()) {
            return Vec::new();
        }
        let program = ValueProgram::new(&self.spec.program);
        let direction = ValueProgram::new(&self.spec.direction);
        let mut out = Vec::new();
        for s in &mut self.sensors {
            if s.last_emit == Some(now) || s.activated_ts > now {
                continue;
            }
            s.last_emit = Some(now);
            let v = program.value(s.number, now);
            let mut push = |ty: &str, attr: &str, value: f64| {
                out.push(Event::new(ty, &s.id, now, attrs! {attr => value}).with_geo(s.geo));
            };
            match self.spec.kind {
                SensorKind::Radiation => push(etype::RADIATION_MEASURE, "value", v),
                SensorKind::WeatherSpeed => push(etype::WIND_SPEED_MEASURE, "speed", v),
                SensorKind::WeatherDirection => push(etype::WIND_DIRECTION_MEASURE, "direction", v.rem_euclid(360.0)),
                SensorKind::Weather => {
                    push(etype::WIND_SPEED_MEASURE, "speed", v);
                    push(etype::WIND_DIRECTION_MEASURE, "direction", direction.value(s.number, now).rem_euclid(360.0));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::script::{Ring, Segment};
    use crate::time::SimTime;

    fn spec(count: u32) -> SensorGroupSpec {
        SensorGroupSpec {
            id: "rsn-5km".into(),
            kind: SensorKind::Radiation,
            count,
            cadence: SimTime(30_000),
            ring: Ring { center: GeoPoint::new(44.1, 4.7), radius_km: 5.0, sector: Some([90.0, 180.0]) },
            program: vec![Segment { from: SimTime(0), until: None, constant: Some(0.6), ramp: None, overrides: vec![] }],
            direction: vec![],
        }
    }

    #[test]
    fn placement_is_seeded_and_on_ring() {
        let a = SensorGroup::new(spec(5), 7, 0);
        let b = SensorGroup::new(spec(5), 7, 0);
        assert_eq!(a.sensors(), b.sensors());
        assert_ne!(a.sensors(), SensorGroup::new(spec(5), 8, 0).sensors());
        for s in a.sensors() {
            let d = s.geo.distance_km(&GeoPoint::new(44.1, 4.7));
            assert!((4.7..=5.3).contains(&d), "{d}");
        }
        assert_eq!(a.sensors()[0].id, "rsn-5km-001");
    }

    #[test]
    fn catch_up_only_emits_new_sensors() {
        let mut g = SensorGroup::new(spec(2), 1, 0);
        assert_eq!(g.tick(60_000).len(), 2);
        assert_eq!(g.tick(60_000).len(), 0);
        g.activate(3, 60_000);
        assert_eq!(g.tick(60_000).len(), 3);
        assert_eq!(g.tick(75_000).len(), 0);
        assert_eq!(g.tick(90_000).len(), 5);
    }
}
