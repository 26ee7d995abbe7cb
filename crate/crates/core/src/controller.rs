//! Delayed feedback consensus control toward the leading reference slot.
//!
//! ```text
//! v_i(t+dt) = v_i(t) - alpha * k * [ (r_i - r_j(t-tau) + v_i * (t_h + tau))
//!                                    + gamma * (v_i - v_j(t-tau)) ] * dt
//! ```
//!
//! `r_j` is the leader's slot position projected onto the ego path, so a
//! leader ahead has `r_j > r_i`. Gains come from a trilinear lookup over the
//! initial ego speed, leader speed and gap, frozen when the reservation is
//! made.

use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::bus::Inbox;
use crate::error::{Result, SimError};
use crate::network::RoadNetwork;
use crate::planner::{ReservationRecord, SlotPool};
use crate::slot::{compute_slot, dead_reckon, ego_crossed, SlotGeometry};
use crate::vehicle::{CommandSource, DriveCommand, VehicleId, VehicleLimits, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub k: f64,
    pub gamma: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Self { k: 0.45, gamma: 1.0 }
    }
}

/// Inputs of one evaluation of the control law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerParams {
    /// Adjacency weight: 1 for the active leader link, 0 otherwise.
    pub alpha: f64,
    pub gains: Gains,
    pub t_h: f64,
    pub dt: f64,
}

/// Delayed leader information in the ego path frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderSample {
    pub r_slot: f64,
    pub v: f64,
    /// Age of the sample (s).
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetSpeed {
    pub raw: f64,
    pub clamped: f64,
}

/// Position error term of the control law.
pub fn position_error(r_i: f64, v_i: f64, r_slot: f64, t_h: f64, tau: f64) -> f64 {
    r_i - r_slot + v_i * (t_h + tau)
}

pub fn target_speed(r_i: f64, v_i: f64, leader: &LeaderSample, p: &ControllerParams, v_max: f64) -> TargetSpeed {
    let e_pos = position_error(r_i, v_i, leader.r_slot, p.t_h, leader.tau);
    let e_vel = v_i - leader.v;
    let raw = v_i + (-p.alpha * p.gains.k * (e_pos + p.gains.gamma * e_vel)) * p.dt;
    TargetSpeed {
        raw,
        clamped: raw.clamp(0.0, v_max),
    }
}

/// Gain lookup table over (initial ego speed, initial leader speed,
/// initial gap `r_i(0) - r_j(0)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainTable {
    pub schema_version: u32,
    pub v_ego: Vec<f64>,
    pub v_leader: Vec<f64>,
    pub gap: Vec<f64>,
    /// Indexed `[v_ego][v_leader][gap]`.
    pub k: Vec<Vec<Vec<f64>>>,
    pub gamma: Vec<Vec<Vec<f64>>>,
}

impl GainTable {
    pub fn is_empty(&self) -> bool {
        self.v_ego.is_empty() || self.v_leader.is_empty() || self.gap.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, axis) in [("v_ego", &self.v_ego), ("v_leader", &self.v_leader), ("gap", &self.gap)] {
            if axis.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(SimError::config(format!("gain_table.{name}"), "axis must be strictly increasing"));
            }
        }
        for (name, vals) in [("k", &self.k), ("gamma", &self.gamma)] {
            let shape_ok = vals.len() == self.v_ego.len()
                && vals.iter().all(|a| {
                    a.len() == self.v_leader.len() && a.iter().all(|b| b.len() == self.gap.len())
                });
            if !shape_ok {
                return Err(SimError::config(format!("gain_table.{name}"), "shape does not match axes"));
            }
            if vals.iter().flatten().flatten().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(SimError::config(format!("gain_table.{name}"), "values must be positive"));
            }
        }
        Ok(())
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let table: GainTable = toml::from_str(&text).map_err(|e| SimError::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        table.validate()?;
        Ok(table)
    }

    /// Coarse 3x3x3 table shipped with the simulator. Stiffness rises as the
    /// initial gap closes; damping rises with the initial closing speed.
    pub fn builtin() -> Self {
        let v = vec![0.0, 7.5, 15.0];
        let gap = vec![-60.0, -30.0, 0.0];
        let k_of_gap = [0.35, 0.45, 0.55];
        let mut k = Vec::new();
        let mut gamma = Vec::new();
        for &vi in &v {
            let mut k_j = Vec::new();
            let mut g_j = Vec::new();
            for &vj in &v {
                k_j.push(k_of_gap.to_vec());
                g_j.push(vec![1.0 + 0.015 * (vi - vj); 3]);
            }
            k.push(k_j);
            gamma.push(g_j);
        }
        Self {
            schema_version: 1,
            v_ego: v.clone(),
            v_leader: v,
            gap,
            k,
            gamma,
        }
    }
}

/// Bracketing index and weight of `x` on `axis`, clamped to the ends.
fn bracket(axis: &[f64], x: f64) -> (usize, usize, f64) {
    let n = axis.len();
    if n == 1 || x <= axis[0] {
        return (0, 0, 0.0);
    }
    if x >= axis[n - 1] {
        return (n - 1, n - 1, 0.0);
    }
    let hi = axis.partition_point(|&a| a <= x).min(n - 1);
    let lo = hi - 1;
    let w = (x - axis[lo]) / (axis[hi] - axis[lo]);
    (lo, hi, w)
}

fn trilinear(vals: &[Vec<Vec<f64>>], (i0, i1, wi): (usize, usize, f64), (j0, j1, wj): (usize, usize, f64), (g0, g1, wg): (usize, usize, f64)) -> f64 {
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let c = |i: usize, j: usize| lerp(vals[i][j][g0], vals[i][j][g1], wg);
    let c0 = lerp(c(i0, j0), c(i0, j1), wj);
    let c1 = lerp(c(i1, j0), c(i1, j1), wj);
    lerp(c0, c1, wi)
}

/// Trilinear gain lookup with inputs clamped to the grid. An empty (or
/// missing) table falls back to `fallback`.
pub fn lookup_gains(table: Option<&GainTable>, v_i0: f64, v_j0: f64, gap0: f64, fallback: Gains) -> Gains {
    let Some(t) = table.filter(|t| !t.is_empty()) else {
        log::warn!("gain table empty, using constant gains");
        return fallback;
    };
    let bi = bracket(&t.v_ego, v_i0);
    let bj = bracket(&t.v_leader, v_j0);
    let bg = bracket(&t.gap, gap0);
    Gains {
        k: trilinear(&t.k, bi, bj, bg),
        gamma: trilinear(&t.gamma, bi, bj, bg),
    }
}

/// Controller configuration from the scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// Constant gains used when no table is available and for same-lane following.
    pub fallback: Gains,
    /// Path to a gain table file; `None` uses the built-in table.
    pub gain_table: Option<String>,
    /// Use constant gains instead of any table.
    pub constant_gains: bool,
    /// Follow every uncrossed reference slot ahead rather than only the leader.
    pub follow_all_references: bool,
    /// Bumper-to-bumper standstill distance kept behind a same-lane vehicle (m).
    pub standstill_gap: f64,
    /// How far ahead a same-lane vehicle is looked for (m).
    pub lookahead: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            fallback: Gains::default(),
            gain_table: None,
            constant_gains: false,
            follow_all_references: true,
            standstill_gap: 2.0,
            lookahead: 120.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerFault {
    /// Leader holds a reservation but no sample of it has been delivered.
    MissingLeaderSample,
    /// Reference record holds a slot not below the ego's.
    InconsistentPool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub command: DriveCommand,
    pub raw_target: f64,
    pub target: f64,
    pub leader: Option<VehicleId>,
    pub leader_slot: Option<SlotGeometry>,
    pub fault: Option<ControllerFault>,
    pub stale_sample: bool,
}

/// Read-only view of the world used by the controller.
pub struct WorldView<'a> {
    pub net: &'a RoadNetwork,
    /// Ground truth, used for same-lane perception.
    pub vehicles: &'a [VehicleState],
    pub inbox: &'a Inbox,
    pub pool: &'a SlotPool,
    pub t_now: f64,
}

impl WorldView<'_> {
    /// Nearest vehicle ahead in the ego's lane (current approach or the link
    /// the ego path leads onto), with its position in the ego path frame.
    pub fn same_lane_predecessor(&self, ego: &VehicleState, lookahead: f64) -> Option<(VehicleState, f64)> {
        let ep = self.net.path(ego.path);
        let mut best: Option<(VehicleState, f64)> = None;
        for v in self.vehicles {
            if v.id == ego.id {
                continue;
            }
            let p = self.net.path(v.path);
            let r_in_ego = if p.from_link == ep.from_link {
                if v.r <= ego.r {
                    continue;
                }
                // once both are in the box they are on different connectors
                if p.id != ep.id && v.r > p.stop_line && ego.r > ep.stop_line {
                    continue;
                }
                v.r
            } else if p.from_link == ep.to_link {
                ep.total_length + v.r
            } else {
                continue;
            };
            if r_in_ego - ego.r > lookahead {
                continue;
            }
            if best.as_ref().is_none_or(|b| r_in_ego < b.1) {
                best = Some((*v, r_in_ego));
            }
        }
        best
    }
}

/// Same-lane following target (speed limit when the lane ahead is clear).
pub fn free_drive_target(ego: &VehicleState, view: &WorldView<'_>, cfg: &ControllerConfig, t_h: f64, dt: f64, v_max: f64) -> TargetSpeed {
    match view.same_lane_predecessor(ego, cfg.lookahead) {
        Some((pred, r_pred)) => {
            let standoff = (ego.length + pred.length) / 2.0 + cfg.standstill_gap;
            let leader = LeaderSample {
                r_slot: r_pred - standoff,
                v: pred.v,
                tau: 0.0,
            };
            let p = ControllerParams {
                alpha: 1.0,
                gains: cfg.fallback,
                t_h,
                dt,
            };
            let t = target_speed(ego.r, ego.v, &leader, &p, v_max);
            TargetSpeed {
                raw: t.raw.min(v_max),
                clamped: t.clamped,
            }
        }
        None => TargetSpeed {
            raw: v_max,
            clamped: v_max,
        },
    }
}

/// Uncrossed active references of `ego` at its current reservation, highest
/// slot first.
fn active_references<'a>(ego: &VehicleState, view: &'a WorldView<'_>) -> Vec<&'a ReservationRecord> {
    let Some(rec) = view.pool.record(ego.id) else {
        return Vec::new();
    };
    let mut refs: Vec<_> = rec
        .references
        .iter()
        .filter_map(|j| view.pool.record(*j))
        .filter(|jr| jr.intersection == rec.intersection)
        .filter(|jr| {
            view.net
                .conflict(ego.path, jr.path)
                .is_some_and(|cp| !ego_crossed(ego.r, cp))
        })
        .collect();
    refs.sort_by(|a, b| b.slot.cmp(&a.slot).then(a.vehicle.cmp(&b.vehicle)));
    refs
}

/// Slot of reference `j` as seen by `ego`, from the newest delivered sample.
/// Returns the slot, the sample's age and speed, and whether it was
/// dead-reckoned.
pub fn reference_slot(
    ego: &VehicleState,
    j: VehicleId,
    view: &WorldView<'_>,
    v_target: f64,
    t_h: f64,
) -> Option<(SlotGeometry, LeaderSample, bool)> {
    let jr = view.pool.record(j)?;
    let (sample, age) = view.inbox.latest_sample(j, view.t_now)?;
    if sample.path != jr.path {
        return None;
    }
    let (sample, stale) = dead_reckon(&sample, age);
    let cp = view.net.conflict(ego.path, jr.path)?;
    let slot = compute_slot(view.net, ego, &sample, Some(cp), v_target, t_h).ok()?;
    let leader = LeaderSample {
        r_slot: slot.r_s,
        v: sample.v,
        tau: age,
    };
    Some((slot, leader, stale))
}

/// Red slots of every uncrossed active reference.
pub fn reference_slots(ego: &VehicleState, view: &WorldView<'_>, v_target: f64, t_h: f64) -> Vec<SlotGeometry> {
    active_references(ego, view)
        .into_iter()
        .filter_map(|jr| reference_slot(ego, jr.vehicle, view, v_target, t_h).map(|s| s.0))
        .collect()
}

/// One control step for an automated vehicle: follow the leading reference
/// slot (highest uncrossed slot below the ego's), never faster than the
/// same-lane following target; free drive when there is no leader.
pub fn step_controller(
    ego: &VehicleState,
    view: &WorldView<'_>,
    gains: Gains,
    cfg: &ControllerConfig,
    t_h: f64,
    dt: f64,
    limits: &VehicleLimits,
) -> ControlOutput {
    let v_max = limits.v_max;
    let free = free_drive_target(ego, view, cfg, t_h, dt, v_max);
    let mut out = ControlOutput {
        command: DriveCommand::speed(free.clamped, CommandSource::Controller),
        raw_target: free.raw,
        target: free.clamped,
        leader: None,
        leader_slot: None,
        fault: None,
        stale_sample: false,
    };
    let Some(own) = view.pool.record(ego.id) else {
        return out;
    };
    let refs = active_references(ego, view);
    if refs.iter().any(|jr| jr.slot == own.slot) {
        out.fault = Some(ControllerFault::InconsistentPool);
    }
    let mut leaders = refs.into_iter().filter(|jr| jr.slot < own.slot);
    let followed: Vec<_> = if cfg.follow_all_references {
        leaders.collect()
    } else {
        leaders.next().into_iter().collect()
    };
    let params = ControllerParams {
        alpha: 1.0,
        gains,
        t_h,
        dt,
    };
    let mut best = free;
    for (k, jr) in followed.iter().enumerate() {
        let Some((_, leader, stale)) = reference_slot(ego, jr.vehicle, view, ego.v, t_h) else {
            if k == 0 {
                // cruise fallback: hold the current speed
                out.fault = Some(ControllerFault::MissingLeaderSample);
                out.leader = Some(jr.vehicle);
                best = TargetSpeed {
                    raw: best.raw.min(ego.v),
                    clamped: best.clamped.min(ego.v),
                };
            }
            continue;
        };
        let t = target_speed(ego.r, ego.v, &leader, &params, v_max);
        if k == 0 {
            out.leader = Some(jr.vehicle);
            out.stale_sample = stale;
            out.leader_slot = reference_slot(ego, jr.vehicle, view, t.clamped, t_h).map(|s| s.0);
        }
        if t.clamped < best.clamped || (t.clamped == best.clamped && t.raw < best.raw) {
            best = t;
        }
    }
    out.raw_target = best.raw;
    out.target = best.clamped;
    out.command = DriveCommand::speed(best.clamped, CommandSource::Controller);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(k: f64, gamma: f64) -> ControllerParams {
        ControllerParams {
            alpha: 1.0,
            gains: Gains { k, gamma },
            t_h: 1.2,
            dt: 0.1,
        }
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let v = 12.345;
        let tau = 0.04;
        let r_i = 100.0;
        let r_slot = r_i + v * (1.2 + tau);
        let t = target_speed(r_i, v, &LeaderSample { r_slot, v, tau }, &p(0.45, 1.0), 15.0);
        assert_eq!(t.raw, v);
    }

    #[test]
    fn position_term_substitution() {
        // position term +2 m: r_i - r_slot + v_i * t_h = 2
        let r_slot = 0.0 + 10.0 * 1.2 - 2.0;
        let t = target_speed(0.0, 10.0, &LeaderSample { r_slot, v: 10.0, tau: 0.0 }, &p(0.5, 3.0), 15.0);
        assert!((t.raw - 9.9).abs() < 1e-12);
    }

    #[test]
    fn speed_term_substitution() {
        let r_slot = 12.0 * 1.2;
        let t = target_speed(0.0, 12.0, &LeaderSample { r_slot, v: 10.0, tau: 0.0 }, &p(0.5, 1.0), 15.0);
        assert!((t.raw - 11.9).abs() < 1e-12);
    }

    #[test]
    fn output_clamped_raw_kept() {
        let t = target_speed(0.0, 1.0, &LeaderSample { r_slot: -100.0, v: 0.0, tau: 0.0 }, &p(0.5, 1.0), 15.0);
        assert!(t.raw < 0.0);
        assert_eq!(t.clamped, 0.0);
    }

    fn table() -> GainTable {
        let mut t = GainTable::builtin();
        // distinct values per node
        for i in 0..3 {
            for j in 0..3 {
                for g in 0..3 {
                    t.k[i][j][g] = 0.1 + 0.01 * (9 * i + 3 * j + g) as f64;
                    t.gamma[i][j][g] = 1.0 + 0.1 * (9 * i + 3 * j + g) as f64;
                }
            }
        }
        t
    }

    #[test]
    fn lookup_on_node_is_identity() {
        let t = table();
        let g = lookup_gains(Some(&t), 7.5, 15.0, -60.0, Gains::default());
        assert_eq!(g.k, t.k[1][2][0]);
        assert_eq!(g.gamma, t.gamma[1][2][0]);
    }

    #[test]
    fn lookup_midpoint_is_mean() {
        let t = table();
        let g = lookup_gains(Some(&t), 3.75, 0.0, -30.0, Gains::default());
        assert!((g.k - (t.k[0][0][1] + t.k[1][0][1]) / 2.0).abs() < 1e-12);
        assert!((g.gamma - (t.gamma[0][0][1] + t.gamma[1][0][1]) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn lookup_outside_clamps_to_boundary() {
        let t = table();
        let g = lookup_gains(Some(&t), 40.0, -3.0, 10.0, Gains::default());
        assert_eq!(g.k, t.k[2][0][2]);
    }

    #[test]
    fn empty_table_falls_back() {
        let mut t = table();
        t.gap.clear();
        let fb = Gains { k: 0.3, gamma: 0.7 };
        assert_eq!(lookup_gains(Some(&t), 1.0, 1.0, 1.0, fb), fb);
        assert_eq!(lookup_gains(None, 1.0, 1.0, 1.0, fb), fb);
    }

    #[test]
    fn table_validation() {
        assert!(GainTable::builtin().validate().is_ok());
        let mut t = GainTable::builtin();
        t.v_ego = vec![0.0, 0.0, 1.0];
        assert!(t.validate().is_err());
        let mut t = GainTable::builtin();
        t.k[0][0][0] = -1.0;
        assert!(t.validate().is_err());
    }

    proptest! {
        #[test]
        fn larger_position_error_lowers_target(
            v in 0.0f64..15.0, vj in 0.0f64..15.0, k in 0.05f64..2.0, gamma in 0.05f64..3.0,
            tau in 0.0f64..0.2, r_slot in -50.0f64..50.0, de in 0.001f64..20.0,
        ) {
            let params = p(k, gamma);
            let leader = LeaderSample { r_slot, v: vj, tau };
            let a = target_speed(0.0, v, &leader, &params, 15.0);
            // moving the slot back raises the position error by `de`
            let b = target_speed(0.0, v, &LeaderSample { r_slot: r_slot - de, ..leader }, &params, 15.0);
            prop_assert!(b.raw < a.raw);
        }
    }
}
