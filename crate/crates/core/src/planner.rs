//! Slot reservation at unsignalized intersections.
//!
//! Each tick every vehicle still approaching an intersection gets an ETA,
//! capped against its same-lane predecessor. A vehicle whose ETA drops to
//! `t_theta` or whose distance to the stop line drops to `d_theta` takes the
//! next slot number after every conflicting active reservation and links
//! those vehicles as its references. Records are released when the vehicle
//! leaves the intersection onto its exit link.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::network::{IntersectionId, PathId, RoadNetwork};
use crate::vehicle::{VehicleId, VehicleState};

/// How the same-lane predecessor caps a follower's ETA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredecessorRule {
    /// `min(t_i, t_j + t_h)`.
    #[default]
    Min,
    /// `max(t_i, t_j + t_h)`: a follower never arrives before its predecessor
    /// plus one headway.
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerParams {
    /// Car-following time headway (s).
    pub t_h: f64,
    /// ETA reservation trigger (s).
    pub t_theta: f64,
    /// Geo-fence reservation trigger (m).
    pub d_theta: f64,
    /// Speed floor used when the vehicle is (nearly) stationary (m/s).
    pub v_floor: f64,
    pub predecessor_rule: PredecessorRule,
    /// Disable the ETA trigger (geo-fence only, first-come-first-served).
    pub geofence_only: bool,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            t_h: 1.2,
            t_theta: 10.0,
            d_theta: 150.0,
            v_floor: 0.5,
            predecessor_rule: PredecessorRule::Min,
            geofence_only: false,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("planner.t_h", self.t_h),
            ("planner.t_theta", self.t_theta),
            ("planner.d_theta", self.d_theta),
            ("planner.v_floor", self.v_floor),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::config(name, format!("must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EtaEstimate {
    pub t_i: f64,
    pub d_i: f64,
    pub computed_at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReservationRecord {
    pub vehicle: VehicleId,
    pub intersection: IntersectionId,
    pub path: PathId,
    /// 0 means unassigned.
    pub slot: u32,
    pub references: BTreeSet<VehicleId>,
    pub assigned_at: f64,
}

const ACCEL_EPS: f64 = 1e-6;

/// Time to cover `d` metres from speed `v` under constant acceleration `a`,
/// with speed capped at `v_limit`.
///
/// * `a > 0`: accelerate to `v_limit`, then cruise.
/// * `a ≈ 0`: `d / max(v, v_floor)`.
/// * `a < 0`: braking kinematics; if the vehicle would stop short of the
///   stop line the estimate falls back to `d / v_floor`.
pub fn estimate_eta(v: f64, a: f64, d: f64, v_limit: f64, v_floor: f64) -> Result<f64> {
    if d < 0.0 || !d.is_finite() {
        return Err(SimError::Range {
            what: "distance to arrival",
            value: d,
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    if d == 0.0 {
        return Ok(0.0);
    }
    let v = v.max(0.0);
    if a > ACCEL_EPS {
        if v >= v_limit {
            return Ok(d / v);
        }
        let t_acc = (v_limit - v) / a;
        let d_acc = (v_limit * v_limit - v * v) / (2.0 * a);
        if d <= d_acc {
            // positive root of 0.5 a t^2 + v t - d = 0, in cancellation-free form
            Ok(2.0 * d / (v + (v * v + 2.0 * a * d).sqrt()))
        } else {
            Ok(t_acc + (d - d_acc) / v_limit)
        }
    } else if a < -ACCEL_EPS {
        let b = -a;
        let disc = v * v - 2.0 * b * d;
        if disc <= 0.0 {
            Ok(d / v_floor)
        } else {
            Ok(2.0 * d / (v + disc.sqrt()))
        }
    } else {
        Ok(d / v.max(v_floor))
    }
}

/// Caps a follower's ETA against its immediate same-lane predecessor.
pub fn eta_with_predecessor(t_i: f64, t_pred: Option<f64>, t_h: f64, rule: PredecessorRule) -> f64 {
    match (t_pred, rule) {
        (None, _) => t_i,
        (Some(tj), PredecessorRule::Min) => t_i.min(tj + t_h),
        (Some(tj), PredecessorRule::Max) => t_i.max(tj + t_h),
    }
}

/// Active reservations, scoped per intersection.
#[derive(Debug, Clone, Default)]
pub struct SlotPool {
    records: BTreeMap<IntersectionId, BTreeMap<VehicleId, ReservationRecord>>,
    by_vehicle: BTreeMap<VehicleId, IntersectionId>,
}

impl SlotPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, vehicle: VehicleId) -> Option<&ReservationRecord> {
        let ix = self.by_vehicle.get(&vehicle)?;
        self.records.get(ix)?.get(&vehicle)
    }

    pub fn slot_of(&self, vehicle: VehicleId) -> u32 {
        self.record(vehicle).map_or(0, |r| r.slot)
    }

    pub fn at(&self, ix: IntersectionId) -> impl Iterator<Item = &ReservationRecord> {
        self.records.get(&ix).into_iter().flat_map(|m| m.values())
    }

    pub fn len(&self) -> usize {
        self.by_vehicle.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_vehicle.is_empty()
    }

    /// Largest slot among active records of `ids` at `ix`; 0 if none.
    pub fn max_slot(&self, ix: IntersectionId, ids: impl IntoIterator<Item = VehicleId>) -> u32 {
        let Some(m) = self.records.get(&ix) else {
            return 0;
        };
        ids.into_iter()
            .filter_map(|id| m.get(&id).map(|r| r.slot))
            .max()
            .unwrap_or(0)
    }

    fn insert(&mut self, rec: ReservationRecord) {
        self.by_vehicle.insert(rec.vehicle, rec.intersection);
        self.records.entry(rec.intersection).or_default().insert(rec.vehicle, rec);
    }

    /// Clears the vehicle's record. Returns the released record, or `None`
    /// (with a warning) when nothing was held.
    pub fn release(&mut self, vehicle: VehicleId) -> Option<ReservationRecord> {
        let Some(ix) = self.by_vehicle.remove(&vehicle) else {
            log::warn!("release requested for vehicle {vehicle} without a reservation");
            return None;
        };
        let rec = self.records.get_mut(&ix).and_then(|m| m.remove(&vehicle));
        rec.map(|mut r| {
            r.slot = 0;
            r.references.clear();
            r
        })
    }

    /// Pairs of conflicting active reservations sharing a slot number.
    pub fn uniqueness_violations(&self, net: &RoadNetwork) -> Vec<(VehicleId, VehicleId)> {
        let mut out = Vec::new();
        for m in self.records.values() {
            let recs: Vec<_> = m.values().collect();
            for (k, a) in recs.iter().enumerate() {
                for b in &recs[k + 1..] {
                    if a.slot == b.slot && net.paths_conflict(a.path, b.path) {
                        out.push((a.vehicle, b.vehicle));
                    }
                }
            }
        }
        out
    }
}

/// Maximum slot held by any of `conflicting` at `ix`; 0 if none.
pub fn slot_pool_max(pool: &SlotPool, ix: IntersectionId, conflicting: &[VehicleId]) -> u32 {
    pool.max_slot(ix, conflicting.iter().copied())
}

/// Reservation step for one vehicle: fires when `t_i <= t_theta` or
/// `d_i <= d_theta`, returning the new record. Returns `Ok(None)` when
/// neither trigger fires or the vehicle already holds a reservation here.
pub fn maybe_reserve(
    vehicle: &VehicleState,
    eta: &EtaEstimate,
    params: &PlannerParams,
    pool: &mut SlotPool,
    net: &RoadNetwork,
) -> Result<Option<ReservationRecord>> {
    let path = net.path(vehicle.path);
    if vehicle.r > path.stop_line {
        return Err(SimError::NotOnApproach(vehicle.id.0));
    }
    let ix = path.intersection;
    if pool.record(vehicle.id).is_some_and(|r| r.intersection == ix) {
        return Ok(None);
    }
    let by_time = !params.geofence_only && eta.t_i <= params.t_theta;
    let by_distance = eta.d_i <= params.d_theta;
    if !(by_time || by_distance) {
        return Ok(None);
    }
    let references: BTreeSet<VehicleId> = pool
        .at(ix)
        .filter(|r| r.vehicle != vehicle.id && net.paths_conflict(vehicle.path, r.path))
        .map(|r| r.vehicle)
        .collect();
    let slot = pool.max_slot(ix, references.iter().copied()) + 1;
    let rec = ReservationRecord {
        vehicle: vehicle.id,
        intersection: ix,
        path: vehicle.path,
        slot,
        references,
        assigned_at: eta.computed_at,
    };
    pool.insert(rec.clone());
    Ok(Some(rec))
}

/// Releases the vehicle's reservation when it leaves its approach link.
pub fn release_on_exit(vehicle: VehicleId, pool: &mut SlotPool) -> Option<ReservationRecord> {
    pool.release(vehicle)
}

/// ETAs of every vehicle still upstream of its stop line, with the same-lane
/// predecessor cap applied front to back.
pub fn estimate_all(
    vehicles: &[VehicleState],
    net: &RoadNetwork,
    params: &PlannerParams,
    t_now: f64,
) -> BTreeMap<VehicleId, EtaEstimate> {
    // group by approach link, ordered front (largest r) to back
    let mut lanes: BTreeMap<usize, Vec<&VehicleState>> = BTreeMap::new();
    for v in vehicles {
        let p = net.path(v.path);
        if v.r <= p.stop_line {
            lanes.entry(p.from_link).or_default().push(v);
        }
    }
    let mut out = BTreeMap::new();
    for lane in lanes.values_mut() {
        lane.sort_by(|a, b| b.r.total_cmp(&a.r).then(a.id.cmp(&b.id)));
        let mut pred: Option<f64> = None;
        for v in lane.iter() {
            let p = net.path(v.path);
            let d = p.stop_line - v.r;
            let v_limit = net.link(p.from_link).speed_limit;
            let raw = estimate_eta(v.v, v.a, d, v_limit, params.v_floor).unwrap_or(0.0);
            let t = eta_with_predecessor(raw, pred, params.t_h, params.predecessor_rule);
            out.insert(
                v.id,
                EtaEstimate {
                    t_i: t,
                    d_i: d,
                    computed_at: t_now,
                },
            );
            pred = Some(t);
        }
    }
    out
}

/// One planner tick over vehicles sorted by id. Returns newly created records.
pub fn plan_tick(
    vehicles: &[VehicleState],
    net: &RoadNetwork,
    params: &PlannerParams,
    pool: &mut SlotPool,
    t_now: f64,
) -> Vec<ReservationRecord> {
    let etas = estimate_all(vehicles, net, params, t_now);
    let mut created = Vec::new();
    for v in vehicles {
        let Some(eta) = etas.get(&v.id) else { continue };
        if pool.record(v.id).is_some() {
            continue;
        }
        if let Ok(Some(rec)) = maybe_reserve(v, eta, params, pool, net) {
            created.push(rec);
        }
    }
    created
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_network, Movement, NetworkConfig};
    use crate::vehicle::VehicleKind;

    #[test]
    fn eta_uniform_motion() {
        assert_eq!(estimate_eta(10.0, 0.0, 100.0, 15.0, 0.5).unwrap(), 10.0);
    }

    #[test]
    fn eta_two_phase() {
        // 5 s to reach 15 m/s covering 62.5 m, then 37.5 m at 15 m/s
        let t = estimate_eta(10.0, 1.0, 100.0, 15.0, 0.5).unwrap();
        assert!((t - 7.5).abs() < 1e-12, "{t}");
    }

    #[test]
    fn eta_floor_fallback() {
        assert_eq!(estimate_eta(0.0, 0.0, 50.0, 15.0, 0.5).unwrap(), 100.0);
        // decelerating to a stop short of the line
        assert_eq!(estimate_eta(5.0, -2.0, 50.0, 15.0, 0.5).unwrap(), 100.0);
    }

    #[test]
    fn eta_past_stop_line_is_error() {
        assert!(estimate_eta(5.0, 0.0, -1.0, 15.0, 0.5).is_err());
    }

    #[test]
    fn predecessor_cap() {
        let m = PredecessorRule::Min;
        assert_eq!(eta_with_predecessor(8.0, Some(9.0), 1.2, m), 8.0);
        assert!((eta_with_predecessor(12.0, Some(9.0), 1.2, m) - 10.2).abs() < 1e-12);
        assert_eq!(eta_with_predecessor(12.0, None, 1.2, m), 12.0);
        assert!((eta_with_predecessor(8.0, Some(9.0), 1.2, PredecessorRule::Max) - 10.2).abs() < 1e-12);
    }

    fn fixture() -> (RoadNetwork, PathId, PathId, PathId) {
        let net = build_network(&NetworkConfig {
            intersections: 1,
            ..Default::default()
        })
        .unwrap();
        let ix = &net.intersections[0];
        let nb = net.path_for(ix.approach_links[0], Movement::Through).unwrap();
        let eb = net.path_for(ix.approach_links[1], Movement::Through).unwrap();
        let sb = net.path_for(ix.approach_links[2], Movement::Through).unwrap();
        (net, nb, eb, sb)
    }

    fn veh(id: u32, path: PathId, r: f64) -> VehicleState {
        VehicleState {
            id: VehicleId(id),
            path,
            r,
            x: 0.0,
            v: 10.0,
            a: 0.0,
            length: 4.5,
            width: 1.8,
            kind: VehicleKind::Cav,
        }
    }

    fn eta(t: f64, d: f64) -> EtaEstimate {
        EtaEstimate {
            t_i: t,
            d_i: d,
            computed_at: 0.0,
        }
    }

    #[test]
    fn first_reservation_gets_slot_one() {
        let (net, nb, _, _) = fixture();
        let mut pool = SlotPool::new();
        let rec = maybe_reserve(&veh(1, nb, 100.0), &eta(9.0, 100.0), &PlannerParams::default(), &mut pool, &net)
            .unwrap()
            .unwrap();
        assert_eq!(rec.slot, 1);
        assert!(rec.references.is_empty());
    }

    #[test]
    fn distance_trigger_links_conflicting_vehicle() {
        let (net, nb, eb, _) = fixture();
        let mut pool = SlotPool::new();
        let p = PlannerParams::default();
        maybe_reserve(&veh(1, eb, 150.0), &eta(5.0, 50.0), &p, &mut pool, &net).unwrap();
        maybe_reserve(&veh(2, eb, 130.0), &eta(7.0, 70.0), &p, &mut pool, &net).unwrap();
        assert_eq!(pool.slot_of(VehicleId(2)), 2);
        let rec = maybe_reserve(&veh(3, nb, 83.5), &eta(15.0, 120.0), &p, &mut pool, &net)
            .unwrap()
            .unwrap();
        assert_eq!(rec.slot, 3);
        assert_eq!(rec.references, [VehicleId(1), VehicleId(2)].into_iter().collect());
    }

    #[test]
    fn no_trigger_no_reservation() {
        let (net, nb, _, _) = fixture();
        let mut pool = SlotPool::new();
        let got = maybe_reserve(&veh(1, nb, 3.5), &eta(15.0, 200.0), &PlannerParams::default(), &mut pool, &net).unwrap();
        assert!(got.is_none());
        assert!(pool.is_empty());
    }

    #[test]
    fn idempotent_within_tick() {
        let (net, nb, _, _) = fixture();
        let mut pool = SlotPool::new();
        let p = PlannerParams::default();
        let v = veh(1, nb, 100.0);
        assert!(maybe_reserve(&v, &eta(9.0, 100.0), &p, &mut pool, &net).unwrap().is_some());
        assert!(maybe_reserve(&v, &eta(9.0, 100.0), &p, &mut pool, &net).unwrap().is_none());
        assert_eq!(pool.len(), 1);
    }

    #[test]
    fn vehicle_inside_box_cannot_reserve() {
        let (net, nb, _, _) = fixture();
        let mut pool = SlotPool::new();
        let r = net.path(nb).stop_line + 1.0;
        let err = maybe_reserve(&veh(4, nb, r), &eta(0.0, -1.0), &PlannerParams::default(), &mut pool, &net);
        assert!(matches!(err, Err(SimError::NotOnApproach(4))));
    }

    #[test]
    fn pool_max_cases() {
        let (net, nb, eb, sb) = fixture();
        let mut pool = SlotPool::new();
        assert_eq!(slot_pool_max(&pool, 0, &[]), 0);
        let p = PlannerParams::default();
        maybe_reserve(&veh(1, nb, 100.0), &eta(5.0, 100.0), &p, &mut pool, &net).unwrap();
        maybe_reserve(&veh(2, sb, 100.0), &eta(5.0, 100.0), &p, &mut pool, &net).unwrap();
        maybe_reserve(&veh(3, eb, 100.0), &eta(5.0, 100.0), &p, &mut pool, &net).unwrap();
        // nb and sb do not conflict: both hold slot 1; eb takes 2
        assert_eq!(pool.slot_of(VehicleId(1)), 1);
        assert_eq!(pool.slot_of(VehicleId(2)), 1);
        assert_eq!(pool.slot_of(VehicleId(3)), 2);
        assert_eq!(slot_pool_max(&pool, 0, &[VehicleId(1), VehicleId(3)]), 2);
        // present but not in the conflicting set
        assert_eq!(slot_pool_max(&pool, 0, &[VehicleId(99)]), 0);
        assert!(pool.uniqueness_violations(&net).is_empty());
    }

    #[test]
    fn release_resets_and_missing_release_is_noop() {
        let (net, nb, _, _) = fixture();
        let mut pool = SlotPool::new();
        maybe_reserve(&veh(1, nb, 100.0), &eta(5.0, 100.0), &PlannerParams::default(), &mut pool, &net).unwrap();
        let rec = release_on_exit(VehicleId(1), &mut pool).unwrap();
        assert_eq!(rec.slot, 0);
        assert!(rec.references.is_empty());
        assert_eq!(pool.slot_of(VehicleId(1)), 0);
        assert!(release_on_exit(VehicleId(1), &mut pool).is_none());
    }

    #[test]
    fn estimate_all_caps_follower_against_predecessor() {
        let (net, nb, _, _) = fixture();
        let mut lead = veh(1, nb, 150.0);
        lead.v = 2.0; // slow predecessor
        let follow = veh(2, nb, 100.0);
        let p = PlannerParams {
            predecessor_rule: PredecessorRule::Max,
            ..Default::default()
        };
        let etas = estimate_all(&[lead, follow], &net, &p, 0.0);
        let t_lead = etas[&VehicleId(1)].t_i;
        assert!((etas[&VehicleId(2)].t_i - (t_lead + 1.2)).abs() < 1e-12);
    }
}
