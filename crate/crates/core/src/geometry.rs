//! Planar polyline helpers: arclength tables, pose lookup and
//! segment/segment intersection.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn scale(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }

    pub fn lerp(self, o: Vec2, t: f64) -> Vec2 {
        self + (o - self).scale(t)
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

/// Position and heading (radians, CCW from +x) of a point on a path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub pos: Vec2,
    pub heading: f64,
}

impl Pose2 {
    pub fn forward(&self) -> Vec2 {
        Vec2::new(self.heading.cos(), self.heading.sin())
    }

    /// Unit vector pointing to the left of the direction of travel.
    pub fn left(&self) -> Vec2 {
        Vec2::new(-self.heading.sin(), self.heading.cos())
    }
}

/// Cumulative arclength at each vertex; first entry is 0.
pub fn cumulative_lengths(points: &[Vec2]) -> Vec<f64> {
    let mut acc = Vec::with_capacity(points.len());
    let mut s = 0.0;
    acc.push(0.0);
    for w in points.windows(2) {
        s += w[0].dist(w[1]);
        acc.push(s);
    }
    acc
}

/// Pose at arclength `s`. Values outside `[0, total]` extrapolate along the
/// first or last segment.
pub fn pose_at(points: &[Vec2], cumulative: &[f64], s: f64) -> Pose2 {
    debug_assert!(points.len() >= 2);
    let last = points.len() - 2;
    let seg = match cumulative.binary_search_by(|c| c.total_cmp(&s)) {
        Ok(i) => i.min(last),
        Err(i) => i.saturating_sub(1).min(last),
    };
    let a = points[seg];
    let b = points[seg + 1];
    let len = cumulative[seg + 1] - cumulative[seg];
    let d = b - a;
    let heading = d.y.atan2(d.x);
    let t = (s - cumulative[seg]) / len;
    Pose2 {
        pos: a.lerp(b, t),
        heading,
    }
}

/// Intersection of segment `p0→p1` with `q0→q1`.
///
/// Returns the parameters `(t, u)` of the hit closest to `p0`, with both in
/// `[0, 1]`. Collinear overlaps report the start of the overlap along `p`.
pub fn segment_intersection(p0: Vec2, p1: Vec2, q0: Vec2, q1: Vec2) -> Option<(f64, f64)> {
    const EPS: f64 = 1e-12;
    let r = p1 - p0;
    let s = q1 - q0;
    let qp = q0 - p0;
    let denom = r.cross(s);
    let scale = r.norm() * s.norm();
    if denom.abs() <= EPS * scale.max(1.0) {
        // parallel
        if qp.cross(r).abs() > 1e-9 * r.norm().max(1.0) {
            return None;
        }
        let rr = r.dot(r);
        let t0 = qp.dot(r) / rr;
        let t1 = t0 + s.dot(r) / rr;
        let (lo, hi) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
        let start = lo.max(0.0);
        let end = hi.min(1.0);
        if start > end + 1e-12 {
            return None;
        }
        let hit = p0 + r.scale(start);
        let ss = s.dot(s);
        let u = ((hit - q0).dot(s) / ss).clamp(0.0, 1.0);
        return Some((start, u));
    }
    let t = qp.cross(s) / denom;
    let u = qp.cross(r) / denom;
    let tol = 1e-9;
    if (-tol..=1.0 + tol).contains(&t) && (-tol..=1.0 + tol).contains(&u) {
        Some((t.clamp(0.0, 1.0), u.clamp(0.0, 1.0)))
    } else {
        None
    }
}

/// First crossing of polyline `a` with polyline `b`, ordered by arclength on
/// `a`. Returns `(point, arclength_on_a, arclength_on_b)`.
pub fn first_polyline_intersection(
    a: &[Vec2],
    a_cum: &[f64],
    b: &[Vec2],
    b_cum: &[f64],
) -> Option<(Vec2, f64, f64)> {
    for (i, sa) in a.windows(2).enumerate() {
        let len_a = a_cum[i + 1] - a_cum[i];
        let mut best: Option<(f64, f64)> = None;
        for (j, sb) in b.windows(2).enumerate() {
            if let Some((t, u)) = segment_intersection(sa[0], sa[1], sb[0], sb[1]) {
                let arc_a = a_cum[i] + t * len_a;
                let arc_b = b_cum[j] + u * (b_cum[j + 1] - b_cum[j]);
                let better = match best {
                    None => true,
                    Some((ba, bb)) => arc_a < ba - 1e-12 || ((arc_a - ba).abs() <= 1e-12 && arc_b < bb),
                };
                if better {
                    best = Some((arc_a, arc_b));
                }
            }
        }
        if let Some((arc_a, arc_b)) = best {
            let point = pose_at(a, a_cum, arc_a).pos;
            return Some((point, arc_a, arc_b));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crossing_segments() {
        let (t, u) = segment_intersection(
            Vec2::new(0.0, -1.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(-2.0, 0.0),
            Vec2::new(2.0, 0.0),
        )
        .unwrap();
        assert!((t - 0.5).abs() < 1e-12);
        assert!((u - 0.5).abs() < 1e-12);
    }

    #[test]
    fn parallel_disjoint() {
        assert!(segment_intersection(
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(1.0, 1.0)
        )
        .is_none());
    }

    #[test]
    fn collinear_overlap_reports_start() {
        let (t, u) = segment_intersection(
            Vec2::new(0.0, 0.0),
            Vec2::new(10.0, 0.0),
            Vec2::new(4.0, 0.0),
            Vec2::new(20.0, 0.0),
        )
        .unwrap();
        assert!((t - 0.4).abs() < 1e-12);
        assert_eq!(u, 0.0);
    }

    #[test]
    fn pose_extrapolates() {
        let pts = [Vec2::new(0.0, 0.0), Vec2::new(0.0, 10.0)];
        let cum = cumulative_lengths(&pts);
        let p = pose_at(&pts, &cum, 12.0);
        assert!((p.pos.y - 12.0).abs() < 1e-12);
        assert!((p.heading - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        let p = pose_at(&pts, &cum, -1.0);
        assert!((p.pos.y + 1.0).abs() < 1e-12);
    }
}
