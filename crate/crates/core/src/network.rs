//! Corridor road network: directed single-lane links, four-way
//! intersections chained along a north-south main street, and the
//! turning paths through each intersection.
//!
//! World frame: x east, y north, metres. Traffic keeps right. Intersection
//! `k` is centred at `(0, k * spacing)`; its box spans one lane width on
//! either side of the centre in both axes. Stop lines sit at the end of each
//! approach link, on the box edge.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::geometry::{cumulative_lengths, first_polyline_intersection, pose_at, Pose2, Vec2};

pub type LinkId = usize;
pub type PathId = usize;
pub type IntersectionId = usize;

/// Direction of travel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    /// Position in [`Heading::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn unit(self) -> Vec2 {
        match self {
            Heading::North => Vec2::new(0.0, 1.0),
            Heading::East => Vec2::new(1.0, 0.0),
            Heading::South => Vec2::new(0.0, -1.0),
            Heading::West => Vec2::new(-1.0, 0.0),
        }
    }

    pub fn right(self) -> Heading {
        match self {
            Heading::North => Heading::East,
            Heading::East => Heading::South,
            Heading::South => Heading::West,
            Heading::West => Heading::North,
        }
    }

    pub fn left(self) -> Heading {
        self.right().right().right()
    }

    /// Main-street traffic (north/south bound).
    pub fn is_main(self) -> bool {
        matches!(self, Heading::North | Heading::South)
    }

    fn right_vec(self) -> Vec2 {
        self.right().unit()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Movement {
    Left,
    Through,
    Right,
}

impl Movement {
    pub const ALL: [Movement; 3] = [Movement::Left, Movement::Through, Movement::Right];

    pub fn exit_heading(self, approach: Heading) -> Heading {
        match self {
            Movement::Left => approach.left(),
            Movement::Through => approach,
            Movement::Right => approach.right(),
        }
    }
}

/// Geometry parameters of the synthetic corridor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub intersections: usize,
    /// Centre-to-centre distance between consecutive intersections (m).
    pub spacing: f64,
    pub lane_width: f64,
    /// Length of the main-street links entering and leaving the corridor ends (m).
    pub entry_length: f64,
    /// Length of each cross-street approach/exit link (m).
    pub cross_length: f64,
    pub speed_limit: f64,
    /// Polyline segments used to approximate each turning arc.
    pub arc_segments: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            intersections: 4,
            spacing: 200.0,
            lane_width: 3.5,
            entry_length: 200.0,
            cross_length: 200.0,
            speed_limit: 15.0,
            arc_segments: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkRole {
    /// Approach to an intersection that nothing feeds (vehicles spawn here).
    Entry,
    /// Exit of one intersection and approach of the next.
    Internal,
    /// Leaves the corridor.
    Exit,
}

#[derive(Debug, Clone, Serialize)]
pub struct Link {
    pub id: LinkId,
    pub start: Vec2,
    pub end: Vec2,
    pub heading: Heading,
    pub length: f64,
    pub role: LinkRole,
    pub speed_limit: f64,
    /// Intersection this link feeds, if any.
    pub approaches: Option<IntersectionId>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Intersection {
    pub id: IntersectionId,
    pub center: Vec2,
    /// Approach links, indexed by `Heading::ALL` order of travel direction.
    pub approach_links: Vec<LinkId>,
    pub exit_links: Vec<LinkId>,
    pub paths: Vec<PathId>,
}

/// Centreline from the start of an approach link, through the intersection
/// box, to the first point of the exit link.
#[derive(Debug, Clone, Serialize)]
pub struct Path {
    pub id: PathId,
    pub intersection: IntersectionId,
    pub from_link: LinkId,
    pub to_link: LinkId,
    pub approach: Heading,
    pub movement: Movement,
    pub polyline: Vec<Vec2>,
    #[serde(skip)]
    pub cumulative: Vec<f64>,
    pub total_length: f64,
    /// Arclength of the stop line (end of the approach link).
    pub stop_line: f64,
}

impl Path {
    /// A path detached from any network, e.g. for projection or tests.
    /// `stop_line` is clamped to the polyline length.
    pub fn standalone(polyline: Vec<Vec2>, stop_line: f64, approach: Heading) -> Path {
        let cumulative = cumulative_lengths(&polyline);
        let total_length = cumulative.last().copied().unwrap_or(0.0);
        Path {
            id: 0,
            intersection: 0,
            from_link: 0,
            to_link: 0,
            approach,
            movement: Movement::Through,
            polyline,
            cumulative,
            total_length,
            stop_line: stop_line.clamp(0.0, total_length),
        }
    }

    pub fn pose_at(&self, r: f64) -> Pose2 {
        pose_at(&self.polyline, &self.cumulative, r)
    }

    pub fn exit_heading(&self) -> Heading {
        self.movement.exit_heading(self.approach)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictKind {
    /// Paths from different approaches cross inside the box.
    Crossing,
    /// Paths from different approaches join the same exit link.
    Merge,
    /// Paths leave from the same approach link (same lane).
    SharedApproach,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConflictPoint {
    pub point: Vec2,
    pub arclength_on_i: f64,
    pub arclength_on_j: f64,
    /// Stop-line-to-point distance on `j` minus the same distance on `i`.
    pub delta_ij: f64,
    pub kind: ConflictKind,
}

#[derive(Debug, Clone)]
pub struct RoadNetwork {
    pub config: NetworkConfig,
    pub links: Vec<Link>,
    pub intersections: Vec<Intersection>,
    pub paths: Vec<Path>,
    conflicts: Vec<Option<ConflictPoint>>,
}

impl RoadNetwork {
    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id]
    }

    pub fn path(&self, id: PathId) -> &Path {
        &self.paths[id]
    }

    /// Cached result of [`conflict_point`] for two paths of the same
    /// intersection; `None` across intersections.
    pub fn conflict(&self, i: PathId, j: PathId) -> Option<&ConflictPoint> {
        self.conflicts[i * self.paths.len() + j].as_ref()
    }

    pub fn paths_conflict(&self, i: PathId, j: PathId) -> bool {
        self.conflict(i, j).is_some()
    }

    /// The path through `link`'s downstream intersection taking `movement`.
    pub fn path_for(&self, link: LinkId, movement: Movement) -> Option<PathId> {
        let ix = self.links[link].approaches?;
        self.intersections[ix]
            .paths
            .iter()
            .copied()
            .find(|&p| self.paths[p].from_link == link && self.paths[p].movement == movement)
    }

    /// Entry links where vehicles are injected.
    pub fn entry_links(&self) -> impl Iterator<Item = &Link> {
        self.links.iter().filter(|l| l.role == LinkRole::Entry)
    }

    /// Main-street northbound route through every intersection, starting on
    /// the southern entry link.
    pub fn northbound_route(&self) -> Vec<PathId> {
        let mut route = Vec::new();
        let Some(mut link) = self
            .entry_links()
            .find(|l| l.heading == Heading::North)
            .map(|l| l.id)
        else {
            return route;
        };
        while let Some(p) = self.path_for(link, Movement::Through) {
            route.push(p);
            link = self.paths[p].to_link;
        }
        route
    }
}

/// Builds and validates the corridor described by `cfg`.
pub fn build_network(cfg: &NetworkConfig) -> Result<RoadNetwork> {
    validate(cfg)?;
    let n = cfg.intersections;
    let w = cfg.lane_width;
    let h = w;
    let centers: Vec<Vec2> = (0..n).map(|k| Vec2::new(0.0, k as f64 * cfg.spacing)).collect();

    let mut links: Vec<Link> = Vec::new();
    let push_link = |links: &mut Vec<Link>, start: Vec2, end: Vec2, heading: Heading, role: LinkRole, approaches: Option<usize>| {
        let id = links.len();
        links.push(Link {
            id,
            start,
            end,
            heading,
            length: start.dist(end),
            role,
            speed_limit: cfg.speed_limit,
            approaches,
        });
        id
    };

    // approach[k][heading] and exit[k][heading]
    let mut approach = vec![[usize::MAX; 4]; n];
    let mut exit = vec![[usize::MAX; 4]; n];
    let hidx = Heading::index;
    let lane_off = |hd: Heading| hd.right_vec().scale(w / 2.0);

    // Main street, northbound.
    for k in 0..=n {
        let hd = Heading::North;
        let start = if k == 0 {
            centers[0] - hd.unit().scale(h + cfg.entry_length)
        } else {
            centers[k - 1] + hd.unit().scale(h)
        } + lane_off(hd);
        let end = if k == n {
            centers[n - 1] + hd.unit().scale(h + cfg.entry_length)
        } else {
            centers[k] - hd.unit().scale(h)
        } + lane_off(hd);
        let role = if k == 0 {
            LinkRole::Entry
        } else if k == n {
            LinkRole::Exit
        } else {
            LinkRole::Internal
        };
        let id = push_link(&mut links, start, end, hd, role, (k < n).then_some(k));
        if k < n {
            approach[k][hidx(hd)] = id;
        }
        if k > 0 {
            exit[k - 1][hidx(hd)] = id;
        }
    }
    // Main street, southbound (walk from north).
    for kk in 0..=n {
        let hd = Heading::South;
        // kk counts links from the north end; intersection fed is n-1-kk
        let fed = n.checked_sub(kk + 1);
        let upstream = if kk == 0 { None } else { Some(n - kk) };
        let start = match upstream {
            None => centers[n - 1] - hd.unit().scale(h + cfg.entry_length),
            Some(u) => centers[u] + hd.unit().scale(h),
        } + lane_off(hd);
        let end = match fed {
            Some(f) => centers[f] - hd.unit().scale(h),
            None => centers[0] + hd.unit().scale(h + cfg.entry_length),
        } + lane_off(hd);
        let role = match (upstream, fed) {
            (None, _) => LinkRole::Entry,
            (_, None) => LinkRole::Exit,
            _ => LinkRole::Internal,
        };
        let id = push_link(&mut links, start, end, hd, role, fed);
        if let Some(f) = fed {
            approach[f][hidx(hd)] = id;
        }
        if let Some(u) = upstream {
            exit[u][hidx(hd)] = id;
        }
    }
    // Cross streets.
    for (k, &c) in centers.iter().enumerate() {
        for hd in [Heading::East, Heading::West] {
            let f = hd.unit();
            let a_start = c - f.scale(h + cfg.cross_length) + lane_off(hd);
            let a_end = c - f.scale(h) + lane_off(hd);
            approach[k][hidx(hd)] = push_link(&mut links, a_start, a_end, hd, LinkRole::Entry, Some(k));
            let e_start = c + f.scale(h) + lane_off(hd);
            let e_end = c + f.scale(h + cfg.cross_length) + lane_off(hd);
            exit[k][hidx(hd)] = push_link(&mut links, e_start, e_end, hd, LinkRole::Exit, None);
        }
    }

    let mut paths = Vec::new();
    let mut intersections = Vec::new();
    for (k, &c) in centers.iter().enumerate() {
        let mut ids = Vec::new();
        for hd in Heading::ALL {
            let from = approach[k][hidx(hd)];
            for mv in Movement::ALL {
                let out = mv.exit_heading(hd);
                let to = exit[k][hidx(out)];
                let mut pts = vec![links[from].start, links[from].end];
                pts.extend(connector(c, h, w, hd, mv, cfg.arc_segments));
                pts.push(links[to].start);
                pts.dedup_by(|a, b| a.dist(*b) < 1e-12);
                let cumulative = cumulative_lengths(&pts);
                let total_length = *cumulative.last().unwrap();
                let id = paths.len();
                paths.push(Path {
                    id,
                    intersection: k,
                    from_link: from,
                    to_link: to,
                    approach: hd,
                    movement: mv,
                    polyline: pts,
                    cumulative,
                    total_length,
                    stop_line: links[from].length,
                });
                ids.push(id);
            }
        }
        intersections.push(Intersection {
            id: k,
            center: c,
            approach_links: approach[k].to_vec(),
            exit_links: exit[k].to_vec(),
            paths: ids,
        });
    }

    let np = paths.len();
    let mut conflicts = vec![None; np * np];
    for ix in &intersections {
        for &i in &ix.paths {
            for &j in &ix.paths {
                conflicts[i * np + j] = conflict_point(&paths[i], &paths[j]);
            }
        }
    }

    let net = RoadNetwork {
        config: cfg.clone(),
        links,
        intersections,
        paths,
        conflicts,
    };
    check_invariants(&net)?;
    Ok(net)
}

/// Interior points of the connector through the box (excluding the stop line
/// point and the exit link start).
fn connector(c: Vec2, h: f64, w: f64, hd: Heading, mv: Movement, segs: usize) -> Vec<Vec2> {
    let f = hd.unit();
    let rt = hd.right_vec();
    let (center, radius) = match mv {
        Movement::Through => return Vec::new(),
        Movement::Right => (c + rt.scale(h) - f.scale(h), h - w / 2.0),
        Movement::Left => (c - rt.scale(h) - f.scale(h), h + w / 2.0),
    };
    let entry = c - f.scale(h) + rt.scale(w / 2.0);
    let out = mv.exit_heading(hd);
    let exit = c + out.unit().scale(h) + out.right_vec().scale(w / 2.0);
    let a0 = (entry.y - center.y).atan2(entry.x - center.x);
    let a1 = (exit.y - center.y).atan2(exit.x - center.x);
    let mut sweep = a1 - a0;
    while sweep > PI {
        sweep -= 2.0 * PI;
    }
    while sweep <= -PI {
        sweep += 2.0 * PI;
    }
    let segs = segs.max(1);
    (1..segs)
        .map(|s| {
            let a = a0 + sweep * s as f64 / segs as f64;
            center + Vec2::new(a.cos(), a.sin()).scale(radius)
        })
        .collect()
}

fn validate(cfg: &NetworkConfig) -> Result<()> {
    let pos = |name: &str, v: f64| -> Result<()> {
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(SimError::config(format!("network.{name}"), format!("must be > 0, got {v}")))
        }
    };
    if cfg.intersections == 0 {
        return Err(SimError::config("network.intersections", "at least one intersection required"));
    }
    pos("lane_width", cfg.lane_width)?;
    pos("entry_length", cfg.entry_length)?;
    pos("cross_length", cfg.cross_length)?;
    pos("speed_limit", cfg.speed_limit)?;
    if cfg.intersections > 1 {
        let internal = cfg.spacing - 2.0 * cfg.lane_width;
        if !(internal.is_finite() && internal > 0.0) {
            return Err(SimError::config(
                "network.spacing",
                format!("links between intersections would have length {internal}"),
            ));
        }
    }
    if cfg.arc_segments == 0 {
        return Err(SimError::config("network.arc_segments", "must be >= 1"));
    }
    Ok(())
}

fn check_invariants(net: &RoadNetwork) -> Result<()> {
    for l in &net.links {
        if !(l.length > 0.0) {
            return Err(SimError::config("network.links", format!("link {} has zero length", l.id)));
        }
    }
    for ix in &net.intersections {
        if ix.approach_links.len() < 2 {
            return Err(SimError::config("network.intersections", "fewer than two approaches"));
        }
    }
    for p in &net.paths {
        if p.polyline.len() < 2 || p.cumulative.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SimError::config("network.paths", format!("path {} is degenerate", p.id)));
        }
    }
    Ok(())
}

/// First crossing of `p_j` with `p_i` by arclength on `p_i`.
pub fn conflict_point(p_i: &Path, p_j: &Path) -> Option<ConflictPoint> {
    let (point, arc_i, arc_j) =
        first_polyline_intersection(&p_i.polyline, &p_i.cumulative, &p_j.polyline, &p_j.cumulative)?;
    let kind = if p_i.from_link == p_j.from_link {
        ConflictKind::SharedApproach
    } else if p_i.to_link == p_j.to_link {
        ConflictKind::Merge
    } else {
        ConflictKind::Crossing
    };
    Some(ConflictPoint {
        point,
        arclength_on_i: arc_i,
        arclength_on_j: arc_j,
        delta_ij: (arc_j - p_j.stop_line) - (arc_i - p_i.stop_line),
        kind,
    })
}

/// Arclength from `r` to the stop line; negative past it.
pub fn distance_to_arrival(path: &Path, r: f64) -> Result<f64> {
    if !(0.0..=path.total_length).contains(&r) {
        return Err(SimError::Range {
            what: "path arclength",
            value: r,
            lo: 0.0,
            hi: path.total_length,
        });
    }
    Ok(path.stop_line - r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single() -> RoadNetwork {
        build_network(&NetworkConfig {
            intersections: 1,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn single_intersection_has_twelve_paths() {
        let net = single();
        assert_eq!(net.intersections.len(), 1);
        assert_eq!(net.intersections[0].approach_links.len(), 4);
        assert_eq!(net.paths.len(), 12);
    }

    #[test]
    fn corridor_chains_four_intersections_on_one_axis() {
        let net = build_network(&NetworkConfig::default()).unwrap();
        assert_eq!(net.intersections.len(), 4);
        for (k, ix) in net.intersections.iter().enumerate() {
            assert_eq!(ix.center.x, 0.0);
            assert_eq!(ix.center.y, 200.0 * k as f64);
        }
        assert_eq!(net.northbound_route().len(), 4);
        // northbound route is continuous
        let route = net.northbound_route();
        for w in route.windows(2) {
            assert_eq!(net.path(w[0]).to_link, net.path(w[1]).from_link);
        }
    }

    #[test]
    fn zero_length_link_rejected() {
        let err = build_network(&NetworkConfig {
            entry_length: 0.0,
            ..Default::default()
        })
        .unwrap_err();
        assert!(err.to_string().contains("network.entry_length"), "{err}");
        let err = build_network(&NetworkConfig {
            spacing: 7.0,
            ..Default::default()
        })
        .unwrap_err();
        assert!(err.to_string().contains("network.spacing"), "{err}");
    }

    #[test]
    fn perpendicular_through_paths_cross_at_hand_computed_point() {
        let net = single();
        let nb = net.path_for(net.intersections[0].approach_links[0], Movement::Through).unwrap();
        let eb = net.path_for(net.intersections[0].approach_links[1], Movement::Through).unwrap();
        let cp = conflict_point(net.path(nb), net.path(eb)).unwrap();
        // NB lane at x = +1.75 from y = -203.5; EB lane at y = -1.75 from x = -203.5.
        assert!((cp.point.x - 1.75).abs() < 1e-9);
        assert!((cp.point.y + 1.75).abs() < 1e-9);
        assert!((cp.arclength_on_i - (203.5 - 1.75)).abs() < 1e-9);
        assert!((cp.arclength_on_j - (203.5 + 1.75)).abs() < 1e-9);
        // stop-line-to-point: j 5.25, i 1.75
        assert!((cp.delta_ij - 3.5).abs() < 1e-9);
        assert_eq!(cp.kind, ConflictKind::Crossing);
    }

    #[test]
    fn opposing_through_paths_do_not_conflict() {
        let net = single();
        let nb = net.path_for(net.intersections[0].approach_links[0], Movement::Through).unwrap();
        let sb = net.path_for(net.intersections[0].approach_links[2], Movement::Through).unwrap();
        assert!(conflict_point(net.path(nb), net.path(sb)).is_none());
        assert!(!net.paths_conflict(nb, sb));
    }

    #[test]
    fn identical_paths_conflict_at_start() {
        let net = single();
        let p = net.path(0);
        let cp = conflict_point(p, p).unwrap();
        assert_eq!(cp.arclength_on_i, 0.0);
        assert_eq!(cp.arclength_on_j, 0.0);
        assert_eq!(cp.delta_ij, 0.0);
    }

    #[test]
    fn distance_to_arrival_cases() {
        let net = single();
        let p = net.path(0);
        assert_eq!(distance_to_arrival(p, p.stop_line).unwrap(), 0.0);
        assert_eq!(distance_to_arrival(p, 0.0).unwrap(), p.stop_line);
        assert!((distance_to_arrival(p, p.stop_line + 2.0).unwrap() + 2.0).abs() < 1e-12);
        assert!(distance_to_arrival(p, -0.1).is_err());
        assert!(distance_to_arrival(p, p.total_length + 0.1).is_err());
    }

    #[test]
    fn path_length_matches_polyline() {
        let net = build_network(&NetworkConfig::default()).unwrap();
        for p in &net.paths {
            let s: f64 = p.polyline.windows(2).map(|w| w[0].dist(w[1])).sum();
            assert!((s - p.total_length).abs() < 1e-6);
            assert!(p.stop_line < p.total_length);
        }
    }
}
