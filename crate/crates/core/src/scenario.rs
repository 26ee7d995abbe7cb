//! Scenario files: TOML with a `schema_version` field.
//!
//! ```toml
//! schema_version = 1
//! mode = "unsignalized"      # or "baseline"
//! duration = 300.0
//! dt = 0.05
//! seed = 7
//!
//! [network]     # corridor geometry
//! [demand]      # Poisson arrivals per entry link
//! [ego]         # the driven vehicle
//! [[vehicles]]  # explicitly placed vehicles
//! [planner]
//! [controller]
//! [delay]
//! [signals]
//! [limits]
//! [fuel]
//! ```
//!
//! Relative file paths (the gain table) resolve against the scenario file's
//! directory.

use std::path::{Path as FsPath, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::bus::DelayModel;
use crate::controller::ControllerConfig;
use crate::error::{Result, SimError};
use crate::fuel::FuelSurrogate;
use crate::network::{Heading, LinkId, LinkRole, Movement, NetworkConfig, RoadNetwork};
use crate::planner::PlannerParams;
use crate::signal::SignalTiming;
use crate::vehicle::{VehicleKind, VehicleLimits};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Unsignalized,
    #[serde(alias = "baseline_signals")]
    Baseline,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Unsignalized => "unsignalized",
            Mode::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unsignalized" => Ok(Mode::Unsignalized),
            "baseline" | "baseline_signals" => Ok(Mode::Baseline),
            _ => Err(SimError::config("mode", format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TurnProbabilities {
    pub left: f64,
    pub through: f64,
    pub right: f64,
}

impl Default for TurnProbabilities {
    fn default() -> Self {
        Self {
            left: 0.2,
            through: 0.6,
            right: 0.2,
        }
    }
}

impl TurnProbabilities {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Movement {
        let total = self.left + self.through + self.right;
        let u: f64 = rng.random::<f64>() * total;
        if u < self.left {
            Movement::Left
        } else if u < self.left + self.through {
            Movement::Through
        } else {
            Movement::Right
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemandConfig {
    /// Arrival rate per entry link (veh/s).
    pub rate: f64,
    /// Arrivals are generated in `[0, spawn_window)` (s).
    pub spawn_window: f64,
    pub turns: TurnProbabilities,
    pub length: f64,
    pub width: f64,
    /// Comfortable deceleration used to pick a safe spawn speed (m/s^2).
    pub spawn_decel: f64,
}

impl Default for DemandConfig {
    fn default() -> Self {
        Self {
            rate: 0.08,
            spawn_window: 75.0,
            turns: TurnProbabilities::default(),
            length: 4.5,
            width: 1.8,
            spawn_decel: 2.0,
        }
    }
}

/// Vehicle-level behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    /// Automated: slot following when unsignalized, signal-aware following in
    /// baseline mode. Human-kind vehicles take pedal input instead.
    #[default]
    Auto,
    /// Scripted: hold the initial speed regardless of traffic.
    HoldSpeed,
}

/// An explicitly placed vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleSpec {
    /// Direction of travel on the starting approach.
    pub heading: Heading,
    /// Intersection the starting approach leads into.
    pub intersection: usize,
    /// Movement at each intersection met; the last entry repeats.
    pub movements: Vec<Movement>,
    /// Initial arclength on the approach (m).
    pub r0: f64,
    pub v0: f64,
    pub spawn_time: f64,
    pub kind: VehicleKind,
    pub behavior: Behavior,
    pub length: f64,
    pub width: f64,
}

impl Default for VehicleSpec {
    fn default() -> Self {
        Self {
            heading: Heading::North,
            intersection: 0,
            movements: vec![Movement::Through],
            r0: 0.0,
            v0: 0.0,
            spawn_time: 0.0,
            kind: VehicleKind::Cav,
            behavior: Behavior::Auto,
            length: 4.5,
            width: 1.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EgoSpec {
    pub enabled: bool,
    #[serde(flatten)]
    pub vehicle: VehicleSpec,
}

impl Default for EgoSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            vehicle: VehicleSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    pub mode: Mode,
    pub duration: f64,
    pub dt: f64,
    pub seed: u64,
    /// First vehicle id; the ego takes it, explicit vehicles follow, then
    /// random arrivals in spawn order.
    pub id_base: u32,
    /// End the run once every vehicle has left and no spawn is pending.
    pub stop_when_empty: bool,
    /// Keep per-tick trace rows (disable for large sweeps).
    pub record_trace: bool,
    pub network: NetworkConfig,
    pub demand: DemandConfig,
    pub ego: EgoSpec,
    pub vehicles: Vec<VehicleSpec>,
    pub planner: PlannerParams,
    pub controller: ControllerConfig,
    pub delay: DelayModel,
    pub signals: SignalTiming,
    pub limits: VehicleLimits,
    pub fuel: FuelSurrogate,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: "corridor".into(),
            mode: Mode::Unsignalized,
            duration: 300.0,
            dt: 0.05,
            seed: 0,
            id_base: 0,
            stop_when_empty: true,
            record_trace: true,
            network: NetworkConfig::default(),
            demand: DemandConfig::default(),
            ego: EgoSpec::default(),
            vehicles: Vec::new(),
            planner: PlannerParams::default(),
            controller: ControllerConfig::default(),
            delay: DelayModel::default(),
            signals: SignalTiming::default(),
            limits: VehicleLimits::default(),
            fuel: FuelSurrogate::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::parse(text, FsPath::new("<string>"))
    }

    /// Reads and validates a scenario file.
    pub fn load(path: &FsPath) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text, path)?;
        if let Some(t) = &cfg.controller.gain_table {
            let p = PathBuf::from(t);
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.controller.gain_table = Some(dir.join(p).to_string_lossy().into_owned());
                }
            }
        }
        Ok(cfg)
    }

    fn parse(text: &str, path: &FsPath) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| SimError::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(SimError::config(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return Err(SimError::config("dt", "must lie in (0, 0.1]"));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(SimError::config("duration", "must be > 0"));
        }
        let d = &self.demand;
        if !(d.rate >= 0.0 && d.rate.is_finite()) {
            return Err(SimError::config("demand.rate", "must be >= 0"));
        }
        if !(d.spawn_window >= 0.0) {
            return Err(SimError::config("demand.spawn_window", "must be >= 0"));
        }
        let t = &d.turns;
        if [t.left, t.through, t.right].iter().any(|p| !(*p >= 0.0)) || t.left + t.through + t.right <= 0.0 {
            return Err(SimError::config("demand.turns", "probabilities must be >= 0 with a positive sum"));
        }
        if !(d.length > 0.0 && d.width > 0.0) {
            return Err(SimError::config("demand.length", "vehicle dimensions must be > 0"));
        }
        if !(d.spawn_decel > 0.0) {
            return Err(SimError::config("demand.spawn_decel", "must be > 0"));
        }
        let lim = &self.limits;
        if !(lim.a_min < 0.0 && lim.a_max > 0.0 && lim.v_max > 0.0) {
            return Err(SimError::config("limits", "need a_min < 0 < a_max and v_max > 0"));
        }
        self.planner.validate()?;
        self.delay.validate()?;
        self.signals.validate()?;
        self.fuel.validate()?;
        let c = &self.controller;
        if !(c.fallback.k > 0.0 && c.fallback.gamma > 0.0) {
            return Err(SimError::config("controller.fallback", "gains must be > 0"));
        }
        if !(c.standstill_gap >= 0.0 && c.lookahead > 0.0) {
            return Err(SimError::config("controller.lookahead", "must be > 0"));
        }
        let lane_half = self.network.lane_width / 2.0;
        let specs = std::iter::once(("ego", &self.ego.vehicle)).chain(self.vehicles.iter().map(|v| ("vehicles", v)));
        for (name, v) in specs {
            if v.intersection >= self.network.intersections {
                return Err(SimError::config(format!("{name}.intersection"), "no such intersection"));
            }
            if v.movements.is_empty() {
                return Err(SimError::config(format!("{name}.movements"), "at least one movement required"));
            }
            if !(v.r0 >= 0.0 && v.v0 >= 0.0 && v.spawn_time >= 0.0) {
                return Err(SimError::config(format!("{name}.r0"), "r0, v0 and spawn_time must be >= 0"));
            }
            if !(v.length > 0.0 && v.width > 0.0 && v.width < 2.0 * lane_half) {
                return Err(SimError::config(format!("{name}.width"), "dimensions must be > 0 and fit the lane"));
            }
        }
        Ok(())
    }
}

/// One scheduled random arrival.
#[derive(Debug, Clone, PartialEq)]
pub struct Arrival {
    pub time: f64,
    pub link: LinkId,
    /// Movement drawn for each intersection the vehicle may meet.
    pub movements: Vec<Movement>,
}

/// Poisson arrivals on every entry link, drawn from the demand stream of
/// `seed`. Independent of the mode so paired runs see the same demand.
pub fn arrival_schedule(cfg: &ScenarioConfig, net: &RoadNetwork, seed: u64) -> Vec<Arrival> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut out = Vec::new();
    let d = &cfg.demand;
    if d.rate <= 0.0 {
        return out;
    }
    let exp = Exp::new(d.rate).expect("rate validated");
    let n = net.intersections.len();
    for link in net.links.iter().filter(|l| l.role == LinkRole::Entry) {
        let mut t = 0.0;
        loop {
            t += exp.sample(&mut rng);
            if t >= d.spawn_window {
                break;
            }
            let movements = (0..n).map(|_| d.turns.draw(&mut rng)).collect();
            out.push(Arrival {
                time: t,
                link: link.id,
                movements,
            });
        }
    }
    out.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.link.cmp(&b.link)));
    out
}

/// Approach link for a vehicle spec.
pub fn approach_link(net: &RoadNetwork, heading: Heading, intersection: usize) -> Result<LinkId> {
    let ix = net
        .intersections
        .get(intersection)
        .ok_or(SimError::UnknownId {
            kind: "intersection",
            id: intersection,
        })?;
    Ok(ix.approach_links[heading.index()])
}

/// Path sequence from `link` taking `movements[k]` at the k-th intersection
/// (last entry repeated) until the vehicle lands on an exit link.
pub fn route_from(net: &RoadNetwork, mut link: LinkId, movements: &[Movement]) -> Vec<usize> {
    let mut route = Vec::new();
    let mut k = 0;
    while let Some(p) = movements
        .get(k.min(movements.len().saturating_sub(1)))
        .and_then(|&m| net.path_for(link, m))
    {
        route.push(p);
        link = net.path(p).to_link;
        k += 1;
    }
    route
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::build_network;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ScenarioConfig::default();
        let back = ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn minimal_file_uses_defaults() {
        let cfg = ScenarioConfig::from_toml_str("schema_version = 1\nmode = \"baseline\"\n").unwrap();
        assert_eq!(cfg.mode, Mode::Baseline);
        assert_eq!(cfg.dt, 0.05);
    }

    #[test]
    fn rejects_bad_fields() {
        let e = ScenarioConfig::from_toml_str("schema_version = 1\ndt = 0.5\n").unwrap_err();
        assert!(e.to_string().contains("dt"), "{e}");
        let e = ScenarioConfig::from_toml_str("schema_version = 2\n").unwrap_err();
        assert!(e.to_string().contains("schema_version"));
        let e = ScenarioConfig::from_toml_str("schema_version = 1\n[network]\nlane_width = 0.0\n").unwrap_err();
        assert!(matches!(e, SimError::Parse { .. } | SimError::Config { .. }));
        assert!(ScenarioConfig::from_toml_str("schema_version = 1\nbogus = 3\n").is_err());
        assert!(ScenarioConfig::from_toml_str("schema_version = 1\n[demand]\nrate = -1.0\n").is_err());
    }

    #[test]
    fn schedule_is_seeded_and_bounded() {
        let cfg = ScenarioConfig::default();
        let net = build_network(&cfg.network).unwrap();
        let a = arrival_schedule(&cfg, &net, 3);
        assert_eq!(a, arrival_schedule(&cfg, &net, 3));
        assert_ne!(a, arrival_schedule(&cfg, &net, 4));
        assert!(a.iter().all(|x| x.time < 75.0));
        assert!(a.windows(2).all(|w| w[0].time <= w[1].time));
    }

    #[test]
    fn schedule_mean_count_matches_rate() {
        let cfg = ScenarioConfig::default();
        let net = build_network(&cfg.network).unwrap();
        let n: usize = (0..200).map(|s| arrival_schedule(&cfg, &net, s).len()).sum();
        // 10 entry links * 0.08 veh/s * 75 s = 60 per run
        let mean = n as f64 / 200.0;
        assert!((mean - 60.0).abs() < 2.0, "{mean}");
    }

    #[test]
    fn main_street_through_route_spans_corridor() {
        let cfg = ScenarioConfig::default();
        let net = build_network(&cfg.network).unwrap();
        let l = approach_link(&net, Heading::North, 0).unwrap();
        assert_eq!(route_from(&net, l, &[Movement::Through]), net.northbound_route());
        assert_eq!(route_from(&net, l, &[Movement::Right]).len(), 1);
    }
}
