use std::collections::VecDeque;

use thiserror::Error;

use crate::time::MINUTE;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SlopeError {
    #[error("slope needs at least two samples with distinct timestamps")]
    InsufficientSamples,
}

/// Ordinary least-squares slope of value against time, in value units per
/// minute. `Ok(None)` means undefined: the samples span less than
/// `window_ms`, so the rule is still warming up.
pub fn estimate_slope(samples: &[(u64, f64)], window_ms: u64) -> Result<Option<f64>, SlopeError> {
    if samples.len() < 2 {
        return Err(SlopeError::InsufficientSamples);
    }
    let first = samples.iter().map(|s| s.0).min().unwrap_or(0);
    let last = samples.iter().map(|s| s.0).max().unwrap_or(0);
    if first == last {
        return Err(SlopeError::InsufficientSamples);
    }
    if last - first < window_ms {
        return Ok(None);
    }
    // Centre on the first sample so large timestamps do not eat precision.
    let n = samples.len() as f64;
    let xs = samples.iter().map(|&(ts, _)| (ts - first) as f64 / MINUTE as f64);
    let mean_x = xs.clone().sum::<f64>() / n;
    let mean_y = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, &(_, y)) in xs.zip(samples) {
        sxy += (x - mean_x) * (y - mean_y);
        sxx += (x - mean_x) * (x - mean_x);
    }
    Ok(Some(sxy / sxx))
}

/// Circular span of a set of angles in degrees: the length of the shortest
/// arc containing all of them.
pub fn circular_span(angles: &[f64]) -> f64 {
    if angles.len() < 2 {
        return 0.0;
    }
    let mut sorted: Vec<f64> = angles.iter().map(|a| a.rem_euclid(360.0)).collect();
    sorted.sort_by(f64::total_cmp);
    let mut largest_gap = 360.0 - sorted[sorted.len() - 1] + sorted[0];
    for pair in sorted.windows(2) {
        largest_gap = largest_gap.max(pair[1] - pair[0]);
    }
    360.0 - largest_gap
}

/// Trailing samples of one source for one rule.
///
/// Besides the window itself the ring remembers where the current strictly
/// rising run began; the trend only looks at samples from that run.
#[derive(Debug, Clone)]
pub struct SensorWindow {
    window_ms: u64,
    samples: VecDeque<(u64, f64)>,
    rise_start: u64,
}

impl SensorWindow {
    pub fn new(window_ms: u64) -> Self {
        SensorWindow { window_ms, samples: VecDeque::new(), rise_start: 0 }
    }

    pub fn window_ms(&self) -> u64 {
        self.window_ms
    }

    pub fn push(&mut self, ts: u64, value: f64) {
        match self.samples.back() {
            Some(&(_, prev)) if value > prev => {}
            _ => self.rise_start = ts,
        }
        self.samples.push_back((ts, value));
        self.evict(ts);
    }

    /// Drops samples older than `now - window_ms`.
    pub fn evict(&mut self, now: u64) {
        let oldest = now.saturating_sub(self.window_ms);
        while self.samples.front().is_some_and(|s| s.0 < oldest) {
            self.samples.pop_front();
        }
    }

    pub fn latest(&self) -> Option<f64> {
        self.samples.back().map(|s| s.1)
    }

    pub fn samples(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.samples.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples of the current rising run that fall inside the window.
    pub fn trend_samples(&self) -> Vec<(u64, f64)> {
        self.samples.iter().copied().filter(|s| s.0 >= self.rise_start).collect()
    }

    /// Trend of the current rising run, undefined until it covers the window.
    pub fn slope(&self) -> Option<f64> {
        estimate_slope(&self.trend_samples(), self.window_ms).ok().flatten()
    }

    pub fn range(&self) -> Option<(f64, f64)> {
        let mut it = self.samples.iter().map(|s| s.1);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }

    pub fn circular_span(&self) -> f64 {
        let angles: Vec<f64> = self.samples.iter().map(|s| s.1).collect();
        circular_span(&angles)
    }
}
