//! Travel time, stops, fuel, and paired-run comparison.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::trace::TraceRow;

/// Speeds below this count as standing still (m/s).
pub const STOP_SPEED: f64 = 0.1;
/// A stop must last longer than this (s).
pub const STOP_MIN_DURATION: f64 = 1.0;

/// Counts stop episodes: speed below [`STOP_SPEED`] for more than
/// [`STOP_MIN_DURATION`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StopCounter {
    low_for: f64,
    counted: bool,
    stops: u32,
}

impl StopCounter {
    pub fn observe(&mut self, v: f64, dt: f64) {
        if v < STOP_SPEED {
            self.low_for += dt;
            if !self.counted && self.low_for > STOP_MIN_DURATION + 1e-9 {
                self.stops += 1;
                self.counted = true;
            }
        } else {
            self.low_for = 0.0;
            self.counted = false;
        }
    }

    pub fn count(&self) -> u32 {
        self.stops
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleMetrics {
    pub id: u32,
    pub is_ego: bool,
    pub spawn_time: f64,
    pub exit_time: Option<f64>,
    /// `None` when the vehicle never left the network.
    pub travel_time: Option<f64>,
    pub stops: u32,
    pub fuel: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceMetrics {
    pub vehicles: Vec<VehicleMetrics>,
    /// Vehicles still present at `t_end`, excluded from `vehicles`.
    pub truncated: Vec<u32>,
}

/// Per-vehicle metrics recomputed from trace rows.
///
/// A vehicle spawns one tick before its first row and exits one tick after
/// its last; a vehicle with a row at `t_end` never exited and is flagged.
pub fn metrics(rows: &[TraceRow], dt: f64, t_end: f64) -> TraceMetrics {
    let mut by_vehicle: BTreeMap<u32, Vec<&TraceRow>> = BTreeMap::new();
    for r in rows {
        by_vehicle.entry(r.vehicle_id).or_default().push(r);
    }
    let mut out = TraceMetrics {
        vehicles: Vec::new(),
        truncated: Vec::new(),
    };
    for (id, rs) in by_vehicle {
        let first = rs[0].t;
        let last = rs[rs.len() - 1].t;
        if last >= t_end - 1e-9 {
            out.truncated.push(id);
            continue;
        }
        let mut stops = StopCounter::default();
        let mut fuel = 0.0;
        let mut distance = 0.0;
        let mut prev: Option<&TraceRow> = None;
        for r in &rs {
            stops.observe(r.v, dt);
            fuel += r.fuel_rate * dt;
            if let Some(p) = prev {
                distance += 0.5 * (p.v + r.v) * (r.t - p.t);
            }
            prev = Some(r);
        }
        let spawn = first - dt;
        let exit = last + dt;
        out.vehicles.push(VehicleMetrics {
            id,
            is_ego: false,
            spawn_time: spawn,
            exit_time: Some(exit),
            travel_time: Some(exit - spawn),
            stops: stops.count(),
            fuel,
            distance,
        });
    }
    out
}

/// Relative reduction `(base - treat) / base`.
pub fn reduction(base: f64, treat: f64) -> f64 {
    (base - treat) / base
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionStats {
    pub n: usize,
    pub mean: f64,
    /// 95% percentile-bootstrap interval of the mean; absent for one pair.
    pub ci95: Option<(f64, f64)>,
}

/// Mean paired reduction with a percentile bootstrap interval.
pub fn paired_reduction(base: &[f64], treat: &[f64], resamples: usize, seed: u64) -> ReductionStats {
    assert_eq!(base.len(), treat.len());
    let red: Vec<f64> = base.iter().zip(treat).map(|(&b, &t)| reduction(b, t)).collect();
    let n = red.len();
    let mean = red.iter().sum::<f64>() / n.max(1) as f64;
    let ci95 = (n > 1).then(|| bootstrap_mean_ci(&red, resamples, 0.95, seed));
    ReductionStats { n, mean, ci95 }
}

/// Percentile bootstrap interval for the mean of `xs`.
pub fn bootstrap_mean_ci(xs: &[f64], resamples: usize, level: f64, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = xs.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| xs[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let idx = (p * (resamples - 1) as f64).round() as usize;
        means[idx.min(resamples - 1)]
    };
    let tail = (1.0 - level) / 2.0;
    (q(tail), q(1.0 - tail))
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for one value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
