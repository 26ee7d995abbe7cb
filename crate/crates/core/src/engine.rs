//! Fixed-step simulation loop.
//!
//! Each tick runs, in order: spawns due at the tick start, then
//! 1. bus delivery into the relay inbox,
//! 2. planner tick (unsignalized mode),
//! 3. ego slot geometry,
//! 4. driver/controller commands,
//! 5. integration, path transitions and releases,
//! 6. state broadcast,
//! 7. trace rows.
//!
//! Vehicles are always processed in id order. Demand and bus latency draw
//! from separate seeded streams so both modes see identical arrivals.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bus::{Bus, Inbox, ReceiverId};
use crate::controller::{
    free_drive_target, lookup_gains, reference_slot, reference_slots, step_controller, GainTable, Gains, WorldView,
};
use crate::error::Result;
use crate::metrics::{StopCounter, VehicleMetrics};
use crate::network::{build_network, ConflictKind, PathId, RoadNetwork};
use crate::planner::{plan_tick, release_on_exit, ReservationRecord, SlotPool};
use crate::scenario::{approach_link, arrival_schedule, route_from, Arrival, Behavior, Mode, ScenarioConfig, VehicleSpec};
use crate::signal::{signal_controller, SignalPhase};
use crate::slot::{available_gaps, Availability, SlotGeometry};
use crate::trace::TraceRow;
use crate::vehicle::{
    human_input_adapter, step_vehicle, CommandSource, DriveCommand, PedalInput, VehicleId, VehicleKind, VehicleLimits,
    VehicleState,
};

/// Look-ahead of the green gap computation on the ego path (m).
pub const GAP_HORIZON: f64 = 100.0;
/// Comfortable deceleration for stop-line braking in baseline mode (m/s^2).
const STOP_DECEL: f64 = 2.0;
/// Above this required deceleration a vehicle proceeds on yellow (m/s^2).
const YELLOW_GO_DECEL: f64 = 3.0;
/// Distance kept between the front bumper and the stop line (m).
const STOP_MARGIN: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct SimVehicle {
    pub state: VehicleState,
    pub route: Vec<PathId>,
    pub leg: usize,
    pub is_ego: bool,
    pub behavior: Behavior,
    pub hold_speed: f64,
    pub spawn_time: f64,
    /// Gains captured when the current reservation was made.
    pub gains: Option<Gains>,
    pub fuel: f64,
    pub distance: f64,
    stops: StopCounter,
}

impl SimVehicle {
    /// Completed stop episodes so far.
    pub fn stops(&self) -> u32 {
        self.stops.count()
    }

    fn metrics(&self, exit_time: Option<f64>) -> VehicleMetrics {
        VehicleMetrics {
            id: self.state.id.0,
            is_ego: self.is_ego,
            spawn_time: self.spawn_time,
            exit_time,
            travel_time: exit_time.map(|t| t - self.spawn_time),
            stops: self.stops.count(),
            fuel: self.fuel,
            distance: self.distance,
        }
    }
}

/// Safety and bookkeeping counters collected while running.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AuditCounters {
    /// Conflicting active reservations sharing a slot, summed over ticks.
    pub uniqueness_violations: u64,
    /// Records that survived their holder leaving the approach.
    pub unreleased_on_exit: u64,
    /// Records whose intersection no longer matches the holder, summed over ticks.
    pub stale_records: u64,
    /// Distinct vehicle pairs seen inside the same conflict zone.
    pub co_occupancy: u64,
    /// Smallest time gap between two vehicles passing a shared conflict point (s).
    pub min_crossing_gap: Option<f64>,
    /// Conflict-point passages closer than half the time headway.
    pub crossing_gap_violations: u64,
    /// Same-lane bumper overlaps, summed over ticks.
    pub same_lane_overlaps: u64,
    pub controller_faults: u64,
    pub stale_samples: u64,
    pub step_faults: u64,
    pub dropped_arrivals: u64,
    pub reservations: u64,
    pub releases: u64,
    /// Ticks where spawned != exited + active.
    pub conservation_violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReservationEvent {
    pub t: f64,
    pub vehicle: u32,
    pub intersection: usize,
    pub slot: u32,
    pub references: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub mode: Mode,
    pub ticks: u64,
    pub sim_time: f64,
    pub spawned: u64,
    pub exited: u64,
    /// Vehicles still on the network at the end; excluded from travel metrics.
    pub truncated: Vec<u32>,
    pub mean_travel_time: Option<f64>,
    pub total_fuel: f64,
    pub ego: Option<VehicleMetrics>,
    pub vehicles: Vec<VehicleMetrics>,
    pub reservations: Vec<ReservationEvent>,
    pub audit: AuditCounters,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<TraceRow>,
    pub summary: RunSummary,
    /// Ego pedal inputs in effect from the given tick on.
    pub input_log: Vec<(u64, PedalInput)>,
}

#[derive(Debug, Clone)]
enum Pending {
    Explicit { id: VehicleId, spec: VehicleSpec, is_ego: bool },
    Random(Arrival),
}

impl Pending {
    fn time(&self) -> f64 {
        match self {
            Pending::Explicit { spec, .. } => spec.spawn_time,
            Pending::Random(a) => a.time,
        }
    }
}

/// Pose of a vehicle in world coordinates for rendering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VehiclePose {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub v: f64,
}

pub struct Engine {
    cfg: ScenarioConfig,
    net: RoadNetwork,
    limits: VehicleLimits,
    gain_table: Option<GainTable>,
    bus: Bus,
    relay: ReceiverId,
    inbox: Inbox,
    bus_rng: ChaCha8Rng,
    pool: SlotPool,
    vehicles: Vec<SimVehicle>,
    pending: VecDeque<Pending>,
    next_id: u32,
    tick: u64,
    n_ticks: u64,
    signal_offset: f64,
    ego_id: Option<VehicleId>,
    ego_input: PedalInput,
    queued_input: Option<PedalInput>,
    input_log: Vec<(u64, PedalInput)>,
    ego_slots: Vec<SlotGeometry>,
    trace: Vec<TraceRow>,
    done: Vec<VehicleMetrics>,
    reservations: Vec<ReservationEvent>,
    audit: AuditCounters,
    passages: BTreeMap<(PathId, PathId), Vec<(VehicleId, f64)>>,
    co_pairs: BTreeSet<(VehicleId, VehicleId)>,
    spawned: u64,
}

impl Engine {
    /// Validates the scenario and builds the initial state. Nothing is stepped.
    pub fn new(cfg: ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let net = build_network(&cfg.network)?;
        let gain_table = if cfg.controller.constant_gains {
            None
        } else {
            match &cfg.controller.gain_table {
                Some(p) => Some(GainTable::load(std::path::Path::new(p))?),
                None => Some(GainTable::builtin()),
            }
        };
        let mut limits = cfg.limits;
        limits.v_max = limits.v_max.min(cfg.network.speed_limit);

        let mut bus = Bus::new(cfg.delay);
        let relay = bus.subscribe();
        let mut bus_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        bus_rng.set_stream(2);
        let mut sig_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        sig_rng.set_stream(3);
        let signal_offset = if cfg.signals.random_offset {
            sig_rng.random::<f64>() * cfg.signals.cycle()
        } else {
            0.0
        };

        let mut pending: Vec<Pending> = Vec::new();
        let mut next_id = cfg.id_base;
        let ego_id = if cfg.ego.enabled {
            pending.push(Pending::Explicit {
                id: VehicleId(next_id),
                spec: cfg.ego.vehicle.clone(),
                is_ego: true,
            });
            next_id += 1;
            Some(VehicleId(next_id - 1))
        } else {
            None
        };
        for spec in &cfg.vehicles {
            pending.push(Pending::Explicit {
                id: VehicleId(next_id),
                spec: spec.clone(),
                is_ego: false,
            });
            next_id += 1;
        }
        for spec in pending.iter() {
            if let Pending::Explicit { spec, .. } = spec {
                approach_link(&net, spec.heading, spec.intersection)?;
            }
        }
        pending.extend(arrival_schedule(&cfg, &net, cfg.seed).into_iter().map(Pending::Random));
        // stable: explicit entries keep their order ahead of random ones at equal times
        pending.sort_by(|a, b| a.time().total_cmp(&b.time()));

        let n_ticks = (cfg.duration / cfg.dt).round().max(1.0) as u64;
        Ok(Self {
            net,
            limits,
            gain_table,
            bus,
            relay,
            inbox: Inbox::default(),
            bus_rng,
            pool: SlotPool::new(),
            vehicles: Vec::new(),
            pending: pending.into(),
            next_id,
            tick: 0,
            n_ticks,
            signal_offset,
            ego_id,
            ego_input: PedalInput::default(),
            queued_input: None,
            input_log: Vec::new(),
            ego_slots: Vec::new(),
            trace: Vec::new(),
            done: Vec::new(),
            reservations: Vec::new(),
            audit: AuditCounters::default(),
            passages: BTreeMap::new(),
            co_pairs: BTreeSet::new(),
            spawned: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn network(&self) -> &RoadNetwork {
        &self.net
    }

    pub fn pool(&self) -> &SlotPool {
        &self.pool
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.cfg.dt
    }

    pub fn limits(&self) -> &VehicleLimits {
        &self.limits
    }

    pub fn vehicles(&self) -> &[SimVehicle] {
        &self.vehicles
    }

    pub fn ego_id(&self) -> Option<VehicleId> {
        self.ego_id
    }

    pub fn ego(&self) -> Option<&SimVehicle> {
        self.vehicles.iter().find(|v| v.is_ego)
    }

    /// Red slots and green gaps shown to the ego after the last tick.
    pub fn ego_slots(&self) -> &[SlotGeometry] {
        &self.ego_slots
    }

    pub fn audit(&self) -> &AuditCounters {
        &self.audit
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn spawned(&self) -> u64 {
        self.spawned
    }

    pub fn exited(&self) -> u64 {
        self.done.len() as u64
    }

    pub fn input_log(&self) -> &[(u64, PedalInput)] {
        &self.input_log
    }

    pub fn poses(&self) -> Vec<VehiclePose> {
        self.vehicles
            .iter()
            .map(|v| {
                let p = self.net.path(v.state.path).pose_at(v.state.r);
                VehiclePose {
                    id: v.state.id.0,
                    x: p.pos.x,
                    y: p.pos.y,
                    heading: p.heading,
                    v: v.state.v,
                }
            })
            .collect()
    }

    /// Signal phases per intersection (empty in unsignalized mode).
    pub fn phases(&self) -> Vec<[SignalPhase; 4]> {
        match self.cfg.mode {
            Mode::Unsignalized => Vec::new(),
            Mode::Baseline => (0..self.net.intersections.len())
                .map(|k| signal_controller(self.signal_time(k, self.time()), &self.cfg.signals))
                .collect(),
        }
    }

    fn signal_time(&self, ix: usize, t: f64) -> f64 {
        t + self.signal_offset + ix as f64 * self.cfg.signals.offset_step
    }

    /// Latches a pedal input for the ego; it takes effect at the next tick.
    pub fn set_ego_input(&mut self, input: PedalInput) {
        self.queued_input = Some(input);
    }

    /// True once the tick budget is used up, or when `stop_when_empty` is set
    /// and nothing is left to simulate.
    pub fn is_finished(&self) -> bool {
        self.tick >= self.n_ticks
            || (self.cfg.stop_when_empty && self.tick > 0 && self.vehicles.is_empty() && self.pending.is_empty())
    }

    fn spawn_due(&mut self, t_now: f64) {
        let eps = 1e-9;
        while self.pending.front().is_some_and(|p| p.time() <= t_now + eps) {
            let p = self.pending.pop_front().unwrap();
            match p {
                Pending::Explicit { id, spec, is_ego } => {
                    let link = approach_link(&self.net, spec.heading, spec.intersection).expect("checked at build");
                    let route = route_from(&self.net, link, &spec.movements);
                    let state = VehicleState {
                        id,
                        path: route[0],
                        r: spec.r0,
                        x: 0.0,
                        v: spec.v0.min(self.limits.v_max),
                        a: 0.0,
                        length: spec.length,
                        width: spec.width,
                        kind: spec.kind,
                    };
                    self.insert_vehicle(state, route, is_ego, spec.behavior, t_now);
                }
                Pending::Random(a) => {
                    let d = &self.cfg.demand;
                    let ahead = self
                        .vehicles
                        .iter()
                        .filter(|v| self.net.path(v.state.path).from_link == a.link)
                        .min_by(|x, y| x.state.r.total_cmp(&y.state.r));
                    let v_limit = self.net.link(a.link).speed_limit.min(self.limits.v_max);
                    let v0 = match ahead {
                        Some(o) if o.state.r < 2.0 * d.length => {
                            self.audit.dropped_arrivals += 1;
                            continue;
                        }
                        Some(o) => {
                            let standoff = (d.length + o.state.length) / 2.0 + self.cfg.controller.standstill_gap;
                            let room = (o.state.r - standoff).max(0.0);
                            (o.state.v * o.state.v + 2.0 * d.spawn_decel * room).sqrt().min(v_limit)
                        }
                        None => v_limit,
                    };
                    let route = route_from(&self.net, a.link, &a.movements);
                    let id = VehicleId(self.next_id);
                    self.next_id += 1;
                    let state = VehicleState {
                        id,
                        path: route[0],
                        r: 0.0,
                        x: 0.0,
                        v: v0,
                        a: 0.0,
                        length: d.length,
                        width: d.width,
                        kind: VehicleKind::Cav,
                    };
                    self.insert_vehicle(state, route, false, Behavior::Auto, t_now);
                }
            }
        }
    }

    fn insert_vehicle(&mut self, state: VehicleState, route: Vec<PathId>, is_ego: bool, behavior: Behavior, t: f64) {
        let v = SimVehicle {
            hold_speed: state.v,
            state,
            route,
            leg: 0,
            is_ego,
            behavior,
            spawn_time: t,
            gains: None,
            fuel: 0.0,
            distance: 0.0,
            stops: StopCounter::default(),
        };
        let pos = self.vehicles.partition_point(|o| o.state.id < state.id);
        self.vehicles.insert(pos, v);
        self.spawned += 1;
    }

    /// Advances the simulation by one tick.
    pub fn step(&mut self) {
        let dt = self.cfg.dt;
        let t_now = self.time();
        let t_next = (self.tick + 1) as f64 * dt;
        if let Some(inp) = self.queued_input.take() {
            if self.input_log.last().is_none_or(|(_, last)| *last != inp) {
                self.input_log.push((self.tick, inp));
            }
            self.ego_input = inp;
        }
        self.spawn_due(t_now);

        // 1. delivery
        let msgs = self.bus.poll(self.relay, t_now);
        self.inbox.accept_all(msgs);

        let states: Vec<VehicleState> = self.vehicles.iter().map(|v| v.state).collect();

        // 2. planner
        if self.cfg.mode == Mode::Unsignalized {
            let created = plan_tick(&states, &self.net, &self.cfg.planner, &mut self.pool, t_now);
            for rec in created {
                self.on_reservation(&rec, &states, t_now);
            }
            self.audit.uniqueness_violations += self.pool.uniqueness_violations(&self.net).len() as u64;
        }

        // 3. ego slot geometry
        self.ego_slots = self.compute_ego_slots(&states, t_now);

        // 4. commands
        let view = WorldView {
            net: &self.net,
            vehicles: &states,
            inbox: &self.inbox,
            pool: &self.pool,
            t_now,
        };
        let mut commands = Vec::with_capacity(states.len());
        for v in &self.vehicles {
            let cmd = match (v.behavior, v.state.kind) {
                (Behavior::HoldSpeed, _) => DriveCommand::speed(v.hold_speed, CommandSource::Script),
                (Behavior::Auto, VehicleKind::Human) => {
                    let input = if v.is_ego { self.ego_input } else { PedalInput::default() };
                    human_input_adapter(input, &self.limits)
                }
                (Behavior::Auto, VehicleKind::Cav) => match self.cfg.mode {
                    Mode::Unsignalized => {
                        let out = step_controller(
                            &v.state,
                            &view,
                            v.gains.unwrap_or(self.cfg.controller.fallback),
                            &self.cfg.controller,
                            self.cfg.planner.t_h,
                            dt,
                            &self.limits,
                        );
                        if out.fault.is_some() {
                            self.audit.controller_faults += 1;
                        }
                        if out.stale_sample {
                            self.audit.stale_samples += 1;
                        }
                        out.command
                    }
                    Mode::Baseline => self.baseline_command(&v.state, &view, t_now),
                },
            };
            commands.push(cmd);
        }

        // 5. integration
        let mut exited: Vec<usize> = Vec::new();
        for (k, cmd) in commands.iter().enumerate() {
            let before = self.vehicles[k].state;
            let (next, fault) = step_vehicle(&before, cmd, &self.limits, dt);
            if fault.is_some() {
                self.audit.step_faults += 1;
            }
            self.record_passages(&before, &next, t_now, dt);
            let fuel_rate = self.cfg.fuel.rate(next.v, next.a);
            let sv = &mut self.vehicles[k];
            sv.state = next;
            sv.fuel += fuel_rate * dt;
            sv.distance += next.r - before.r;
            sv.stops.observe(next.v, dt);
            // path transitions
            loop {
                let path = self.net.path(sv.state.path);
                if sv.state.r < path.total_length {
                    break;
                }
                let id = sv.state.id;
                if self.pool.record(id).is_some() {
                    release_on_exit(id, &mut self.pool);
                    self.audit.releases += 1;
                }
                if self.pool.record(id).is_some() {
                    self.audit.unreleased_on_exit += 1;
                }
                sv.gains = None;
                if sv.leg + 1 < sv.route.len() {
                    sv.state.r -= path.total_length;
                    sv.leg += 1;
                    sv.state.path = sv.route[sv.leg];
                } else {
                    exited.push(k);
                    break;
                }
            }
        }
        for &k in exited.iter().rev() {
            let v = self.vehicles.remove(k);
            self.inbox.forget(v.state.id);
            self.done.push(v.metrics(Some(t_next)));
        }
        self.audit_after_step(t_next);

        // 6. broadcast
        for v in &self.vehicles {
            self.bus.send(v.state, v.state.id, t_next, &mut self.bus_rng);
        }

        // 7. trace
        if self.cfg.record_trace {
            for v in &self.vehicles {
                let p = self.net.path(v.state.path);
                self.trace.push(TraceRow {
                    t: t_next,
                    vehicle_id: v.state.id.0,
                    intersection_id: p.intersection,
                    r: v.state.r,
                    v: v.state.v,
                    a: v.state.a,
                    slot: self.pool.slot_of(v.state.id),
                    d_arrival: p.stop_line - v.state.r,
                    fuel_rate: self.cfg.fuel.rate(v.state.v, v.state.a),
                });
            }
        }
        self.tick += 1;
    }

    fn on_reservation(&mut self, rec: &ReservationRecord, states: &[VehicleState], t_now: f64) {
        self.audit.reservations += 1;
        self.reservations.push(ReservationEvent {
            t: t_now,
            vehicle: rec.vehicle.0,
            intersection: rec.intersection,
            slot: rec.slot,
            references: rec.references.iter().map(|r| r.0).collect(),
        });
        let Some(k) = self.vehicles.iter().position(|v| v.state.id == rec.vehicle) else {
            return;
        };
        let ego = self.vehicles[k].state;
        let fallback = self.cfg.controller.fallback;
        let leader = rec
            .references
            .iter()
            .filter_map(|j| self.pool.record(*j))
            .filter(|jr| jr.slot < rec.slot)
            .max_by(|a, b| a.slot.cmp(&b.slot).then(b.vehicle.cmp(&a.vehicle)))
            .map(|jr| jr.vehicle);
        let view = WorldView {
            net: &self.net,
            vehicles: states,
            inbox: &self.inbox,
            pool: &self.pool,
            t_now,
        };
        let gains = match leader.and_then(|j| reference_slot(&ego, j, &view, ego.v, self.cfg.planner.t_h)) {
            Some((slot, sample, _)) => {
                lookup_gains(self.gain_table.as_ref(), ego.v, sample.v, ego.r - slot.r_s, fallback)
            }
            None => fallback,
        };
        self.vehicles[k].gains = Some(gains);
    }

    fn compute_ego_slots(&self, states: &[VehicleState], t_now: f64) -> Vec<SlotGeometry> {
        if self.cfg.mode != Mode::Unsignalized {
            return Vec::new();
        }
        let Some(ego) = self.ego_id.and_then(|id| states.iter().find(|s| s.id == id)) else {
            return Vec::new();
        };
        let view = WorldView {
            net: &self.net,
            vehicles: states,
            inbox: &self.inbox,
            pool: &self.pool,
            t_now,
        };
        let mut red = reference_slots(ego, &view, ego.v, self.cfg.planner.t_h);
        red.sort_by(|a, b| a.r_s.total_cmp(&b.r_s).then(a.ref_vehicle.cmp(&b.ref_vehicle)));
        let gaps = available_gaps(&red, ego.r, GAP_HORIZON);
        let mut out = red;
        out.extend(gaps.into_iter().map(|(a, b)| SlotGeometry {
            ref_vehicle: ego.id,
            r_s: (a + b) / 2.0,
            x_s: ego.x,
            l_s: b - a,
            w_s: ego.width,
            availability: Availability::AvailableGreen,
        }));
        out
    }

    /// Same-lane following capped by stop-line braking on red/yellow.
    fn baseline_command(&self, ego: &VehicleState, view: &WorldView<'_>, t_now: f64) -> DriveCommand {
        let dt = self.cfg.dt;
        let lim = &self.limits;
        let free = free_drive_target(ego, view, &self.cfg.controller, self.cfg.planner.t_h, dt, lim.v_max);
        let mut a = ((free.clamped - ego.v) / dt).clamp(lim.a_min, lim.a_max);
        let path = self.net.path(ego.path);
        let d_stop = path.stop_line - ego.length / 2.0 - STOP_MARGIN - ego.r;
        if d_stop > -STOP_MARGIN {
            let k = path.approach.index();
            let phase = signal_controller(self.signal_time(path.intersection, t_now), &self.cfg.signals)[k];
            let need = ego.v * ego.v / (2.0 * d_stop.max(1e-3));
            let stop = match phase {
                SignalPhase::Green => false,
                SignalPhase::Yellow => need <= YELLOW_GO_DECEL,
                SignalPhase::Red => need <= lim.a_min.abs(),
            };
            if stop {
                let v_cap = (2.0 * STOP_DECEL * d_stop.max(0.0)).sqrt();
                let a_stop = if v_cap >= ego.v {
                    ((v_cap - ego.v) / dt).min(lim.a_max)
                } else {
                    (-need).max(lim.a_min).min((v_cap - ego.v) / dt)
                };
                a = a.min(a_stop).max(lim.a_min);
            }
        }
        DriveCommand::accel(a, CommandSource::Controller)
    }

    fn record_passages(&mut self, before: &VehicleState, after: &VehicleState, t_now: f64, dt: f64) {
        if after.r <= before.r {
            return;
        }
        let p = before.path;
        let ix = self.net.path(p).intersection;
        let min_gap = 0.5 * self.cfg.planner.t_h;
        for &q in &self.net.intersections[ix].paths {
            if q == p {
                continue;
            }
            let Some(cp) = self.net.conflict(p, q) else { continue };
            if cp.kind == ConflictKind::SharedApproach {
                continue;
            }
            let arc = cp.arclength_on_i;
            if !(before.r < arc && arc <= after.r) {
                continue;
            }
            let t_pass = t_now + dt * (arc - before.r) / (after.r - before.r);
            if let Some(others) = self.passages.get(&(q, p)) {
                for &(other, t_o) in others {
                    if other == before.id {
                        continue;
                    }
                    let gap = (t_pass - t_o).abs();
                    if self.audit.min_crossing_gap.is_none_or(|g| gap < g) {
                        self.audit.min_crossing_gap = Some(gap);
                    }
                    if gap < min_gap {
                        self.audit.crossing_gap_violations += 1;
                        log::debug!("crossing gap {gap:.3}s between {} and {other} at t={t_pass:.2}", before.id);
                    }
                }
            }
            let list = self.passages.entry((p, q)).or_default();
            list.retain(|&(_, t)| t_pass - t < 120.0);
            list.push((before.id, t_pass));
        }
    }

    fn audit_after_step(&mut self, t_next: f64) {
        let n = self.vehicles.len();
        // conflict-zone co-occupancy
        for a in 0..n {
            for b in a + 1..n {
                let (va, vb) = (&self.vehicles[a].state, &self.vehicles[b].state);
                if va.path == vb.path {
                    continue;
                }
                let Some(cp) = self.net.conflict(va.path, vb.path) else { continue };
                if cp.kind == ConflictKind::SharedApproach {
                    continue;
                }
                let in_a = (va.r - cp.arclength_on_i).abs() < (va.length + vb.width) / 2.0;
                let in_b = (vb.r - cp.arclength_on_j).abs() < (vb.length + va.width) / 2.0;
                if in_a && in_b && self.co_pairs.insert((va.id, vb.id)) {
                    log::debug!("co-occupancy of {} and {} at t={t_next:.2}", va.id, vb.id);
                    self.audit.co_occupancy += 1;
                }
            }
        }
        // same-lane overlaps
        let states: Vec<VehicleState> = self.vehicles.iter().map(|v| v.state).collect();
        let view = WorldView {
            net: &self.net,
            vehicles: &states,
            inbox: &self.inbox,
            pool: &self.pool,
            t_now: t_next,
        };
        for s in &states {
            if let Some((pred, r_pred)) = view.same_lane_predecessor(s, 20.0) {
                if r_pred - s.r < (s.length + pred.length) / 2.0 {
                    self.audit.same_lane_overlaps += 1;
                }
            }
        }
        // stale reservations
        for v in &self.vehicles {
            if let Some(rec) = self.pool.record(v.state.id) {
                if rec.intersection != self.net.path(v.state.path).intersection {
                    self.audit.stale_records += 1;
                }
            }
        }
        if self.spawned != self.done.len() as u64 + self.vehicles.len() as u64 {
            self.audit.conservation_violations += 1;
        }
    }

    /// Metrics of the run so far, treating vehicles still active as truncated.
    pub fn summary(&self) -> RunSummary {
        let mut vehicles = self.done.clone();
        vehicles.extend(self.vehicles.iter().map(|v| v.metrics(None)));
        vehicles.sort_by_key(|m| m.id);
        let truncated: Vec<u32> = self.vehicles.iter().map(|v| v.state.id.0).collect();
        let travel: Vec<f64> = vehicles.iter().filter_map(|m| m.travel_time).collect();
        RunSummary {
            name: self.cfg.name.clone(),
            seed: self.cfg.seed,
            mode: self.cfg.mode,
            ticks: self.tick,
            sim_time: self.time(),
            spawned: self.spawned,
            exited: self.done.len() as u64,
            truncated,
            mean_travel_time: (!travel.is_empty()).then(|| travel.iter().sum::<f64>() / travel.len() as f64),
            total_fuel: vehicles.iter().map(|m| m.fuel).sum(),
            ego: vehicles.iter().find(|m| m.is_ego).cloned(),
            vehicles,
            reservations: self.reservations.clone(),
            audit: self.audit.clone(),
        }
    }

    /// Runs to completion and returns trace and summary.
    pub fn run_to_end(mut self) -> RunOutput {
        while !self.is_finished() {
            self.step();
        }
        self.finish()
    }

    pub fn finish(self) -> RunOutput {
        let summary = self.summary();
        RunOutput {
            trace: self.trace,
            summary,
            input_log: self.input_log,
        }
    }
}

/// Validates `cfg` and runs it headless.
pub fn run(cfg: ScenarioConfig) -> Result<RunOutput> {
    Ok(Engine::new(cfg)?.run_to_end())
}

/// Headless run with ego pedal inputs applied from the given ticks on, as
/// recorded by [`RunOutput::input_log`] or a gateway session.
pub fn run_with_inputs(cfg: ScenarioConfig, inputs: &[(u64, PedalInput)]) -> Result<RunOutput> {
    let mut engine = Engine::new(cfg)?;
    let mut k = 0;
    while !engine.is_finished() {
        while k < inputs.len() && inputs[k].0 <= engine.tick() {
            engine.set_ego_input(inputs[k].1);
            k += 1;
        }
        engine.step();
    }
    Ok(engine.finish())
}
