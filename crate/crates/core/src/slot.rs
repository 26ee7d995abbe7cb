//! Reserved-slot rectangles of reference vehicles, expressed in the ego
//! vehicle's path frame.
//!
//! A reference vehicle `j` is mapped onto the ego path so that its slot is as
//! far from the shared conflict point as `j` itself is:
//!
//! ```text
//! r_s = r_i + (d_i - d_j) - delta_ij
//! ```
//!
//! where `d` is distance to the stop line and `delta_ij` is the stop-line to
//! conflict-point distance on `j` minus the same on `i`. `r_s` is the slot
//! centre; the slot spans `l_s` symmetrically around it.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::network::{ConflictPoint, RoadNetwork};
use crate::vehicle::{VehicleId, VehicleState};

/// Samples older than this are dead-reckoned forward before use (s).
pub const STALE_SAMPLE_AGE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Availability {
    UnavailableRed,
    AvailableGreen,
}

impl Availability {
    pub fn color(self) -> &'static str {
        match self {
            Availability::UnavailableRed => "red",
            Availability::AvailableGreen => "green",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlotGeometry {
    pub ref_vehicle: VehicleId,
    pub r_s: f64,
    pub x_s: f64,
    pub l_s: f64,
    pub w_s: f64,
    pub availability: Availability,
}

impl SlotGeometry {
    pub fn span(&self) -> (f64, f64) {
        (self.r_s - self.l_s / 2.0, self.r_s + self.l_s / 2.0)
    }
}

/// Whether the ego has passed the conflict point along its own path.
pub fn ego_crossed(ego_r: f64, cp: &ConflictPoint) -> bool {
    ego_r > cp.arclength_on_i
}

/// Advances a stale sample by `v * age`; fresh samples are returned unchanged.
/// The flag reports whether extrapolation happened.
pub fn dead_reckon(sample: &VehicleState, age: f64) -> (VehicleState, bool) {
    if age > STALE_SAMPLE_AGE {
        let mut s = *sample;
        s.r += sample.v * age;
        (s, true)
    } else {
        (*sample, false)
    }
}

/// Slot of reference vehicle `ref_sample` on the ego path.
///
/// `cp` is the conflict point of (ego path, reference path) from the ego's
/// side; passing `None` is an error because non-conflicting pairs have no
/// slot.
pub fn compute_slot(
    net: &RoadNetwork,
    ego: &VehicleState,
    ref_sample: &VehicleState,
    cp: Option<&ConflictPoint>,
    v_target: f64,
    t_h: f64,
) -> Result<SlotGeometry> {
    let cp = cp.ok_or(SimError::NoConflict(ego.path, ref_sample.path))?;
    let d_i = net.path(ego.path).stop_line - ego.r;
    let d_j = net.path(ref_sample.path).stop_line - ref_sample.r;
    Ok(slot_from_distances(ego, ref_sample, d_i, d_j, cp.delta_ij, v_target, t_h))
}

/// Slot placement from already-computed distances to arrival.
pub fn slot_from_distances(
    ego: &VehicleState,
    ref_sample: &VehicleState,
    d_i: f64,
    d_j: f64,
    delta_ij: f64,
    v_target: f64,
    t_h: f64,
) -> SlotGeometry {
    SlotGeometry {
        ref_vehicle: ref_sample.id,
        r_s: ego.r + (d_i - d_j) - delta_ij,
        x_s: ego.x,
        l_s: ref_sample.length.max(v_target * t_h),
        w_s: ref_sample.width,
        availability: Availability::UnavailableRed,
    }
}

/// The set of red slots currently shown to one ego driver.
#[derive(Debug, Clone, Default)]
pub struct HmiSlots {
    slots: Vec<SlotGeometry>,
}

impl HmiSlots {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or refreshes the slot of `slot.ref_vehicle`.
    pub fn upsert(&mut self, slot: SlotGeometry) {
        match self.slots.iter_mut().find(|s| s.ref_vehicle == slot.ref_vehicle) {
            Some(s) => *s = slot,
            None => self.slots.push(slot),
        }
    }

    /// Drops the slot of `ref_vehicle` once the ego has crossed `cp`.
    pub fn reset_slot(&mut self, ref_vehicle: VehicleId, ego_r: f64, cp: &ConflictPoint) -> bool {
        if !ego_crossed(ego_r, cp) {
            return false;
        }
        let before = self.slots.len();
        self.slots.retain(|s| s.ref_vehicle != ref_vehicle);
        self.slots.len() != before
    }

    pub fn remove(&mut self, ref_vehicle: VehicleId) {
        self.slots.retain(|s| s.ref_vehicle != ref_vehicle);
    }

    pub fn sorted(&self) -> Vec<SlotGeometry> {
        let mut v = self.slots.clone();
        v.sort_by(|a, b| a.r_s.total_cmp(&b.r_s).then(a.ref_vehicle.cmp(&b.ref_vehicle)));
        v
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// Green gaps: complement of the union of red slot spans within
/// `[ego_r, ego_r + horizon]`.
pub fn available_gaps(slots: &[SlotGeometry], ego_r: f64, horizon: f64) -> Vec<(f64, f64)> {
    let lo = ego_r;
    let hi = ego_r + horizon;
    let mut spans: Vec<(f64, f64)> = slots
        .iter()
        .map(SlotGeometry::span)
        .filter(|&(a, b)| b > lo && a < hi)
        .map(|(a, b)| (a.max(lo), b.min(hi)))
        .collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (a, b) in spans {
        match merged.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }
    let mut gaps = Vec::new();
    let mut cursor = lo;
    for (a, b) in merged {
        if a > cursor {
            gaps.push((cursor, a));
        }
        cursor = cursor.max(b);
    }
    if cursor < hi {
        gaps.push((cursor, hi));
    }
    gaps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::VehicleKind;
    use proptest::prelude::*;

    fn veh(id: u32, r: f64, length: f64) -> VehicleState {
        VehicleState {
            id: VehicleId(id),
            path: 0,
            r,
            x: 0.0,
            v: 10.0,
            a: 0.0,
            length,
            width: 1.8,
            kind: VehicleKind::Cav,
        }
    }

    fn red(id: u32, r_s: f64, l_s: f64) -> SlotGeometry {
        SlotGeometry {
            ref_vehicle: VehicleId(id),
            r_s,
            x_s: 0.0,
            l_s,
            w_s: 1.8,
            availability: Availability::UnavailableRed,
        }
    }

    #[test]
    fn symmetric_arrival_colocates_slot() {
        let s = slot_from_distances(&veh(1, 40.0, 4.5), &veh(2, 10.0, 4.5), 60.0, 60.0, 0.0, 10.0, 1.2);
        assert_eq!(s.r_s, 40.0);
    }

    #[test]
    fn nearer_reference_puts_slot_ahead() {
        let s = slot_from_distances(&veh(1, 50.0, 4.5), &veh(2, 0.0, 4.5), 50.0, 30.0, 0.0, 10.0, 1.2);
        assert_eq!(s.r_s, 70.0);
    }

    #[test]
    fn slot_length_floor() {
        let s = slot_from_distances(&veh(1, 0.0, 4.5), &veh(2, 0.0, 4.5), 0.0, 0.0, 0.0, 15.0, 1.2);
        assert!((s.l_s - 18.0).abs() < 1e-12);
        let s = slot_from_distances(&veh(1, 0.0, 4.5), &veh(2, 0.0, 4.5), 0.0, 0.0, 0.0, 1.0, 1.2);
        assert_eq!(s.l_s, 4.5);
        assert_eq!(s.w_s, 1.8);
        assert_eq!(s.availability, Availability::UnavailableRed);
    }

    #[test]
    fn gaps_without_slots_cover_horizon() {
        assert_eq!(available_gaps(&[], 10.0, 100.0), vec![(10.0, 110.0)]);
    }

    #[test]
    fn one_slot_splits_horizon() {
        let g = available_gaps(&[red(1, 50.0, 10.0)], 0.0, 100.0);
        assert_eq!(g, vec![(0.0, 45.0), (55.0, 100.0)]);
    }

    #[test]
    fn overlapping_slots_merge() {
        let g = available_gaps(&[red(1, 50.0, 10.0), red(2, 58.0, 10.0)], 0.0, 100.0);
        assert_eq!(g, vec![(0.0, 45.0), (63.0, 100.0)]);
    }

    #[test]
    fn hmi_reset_on_crossing() {
        use crate::geometry::Vec2;
        use crate::network::ConflictKind;
        let cp = ConflictPoint {
            point: Vec2::new(0.0, 0.0),
            arclength_on_i: 100.0,
            arclength_on_j: 100.0,
            delta_ij: 0.0,
            kind: ConflictKind::Crossing,
        };
        let mut hmi = HmiSlots::new();
        hmi.upsert(red(1, 80.0, 10.0));
        hmi.upsert(red(2, 90.0, 10.0));
        assert!(!hmi.reset_slot(VehicleId(1), 99.0, &cp));
        assert!(hmi.reset_slot(VehicleId(1), 100.5, &cp));
        assert_eq!(hmi.len(), 1);
        assert!(hmi.reset_slot(VehicleId(2), 101.0, &cp));
        assert!(hmi.is_empty());
    }

    #[test]
    fn dead_reckoning_only_when_stale() {
        let s = veh(1, 10.0, 4.5);
        assert_eq!(dead_reckon(&s, 0.1).0.r, 10.0);
        let (s2, flagged) = dead_reckon(&s, 0.6);
        assert!(flagged);
        assert!((s2.r - 16.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn red_plus_green_tiles_horizon(
            ego in -50.0f64..50.0,
            horizon in 1.0f64..200.0,
            raw in proptest::collection::vec((-100.0f64..300.0, 0.1f64..40.0), 0..8),
        ) {
            let slots: Vec<_> = raw.iter().enumerate().map(|(k, &(r, l))| red(k as u32, r, l)).collect();
            let gaps = available_gaps(&slots, ego, horizon);
            let green: f64 = gaps.iter().map(|(a, b)| b - a).sum();
            // red measure by brute-force merge over clipped spans
            let mut spans: Vec<(f64, f64)> = slots.iter().map(|s| s.span())
                .map(|(a, b)| (a.max(ego), b.min(ego + horizon))).filter(|(a, b)| b > a).collect();
            spans.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut red_len = 0.0;
            let mut cur: Option<(f64, f64)> = None;
            for (a, b) in spans {
                cur = match cur {
                    Some((ca, cb)) if a <= cb => Some((ca, cb.max(b))),
                    Some((ca, cb)) => { red_len += cb - ca; Some((a, b)) }
                    None => Some((a, b)),
                };
            }
            if let Some((ca, cb)) = cur { red_len += cb - ca; }
            prop_assert!((green + red_len - horizon).abs() < 1e-9);
            for (a, b) in &gaps {
                prop_assert!(a < b);
                for s in &slots {
                    let (sa, sb) = s.span();
                    prop_assert!(sb <= *a + 1e-12 || sa >= *b - 1e-12);
                }
            }
        }
    }
}
