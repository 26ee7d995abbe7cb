use std::path::PathBuf;

use slotsim::controller::GainTable;
use slotsim::metrics::metrics;
use slotsim::planner::PredecessorRule;
use slotsim::scenario::{Behavior, VehicleSpec};
use slotsim::network::Heading;
use slotsim::trace::{read_trace, write_trace};
use slotsim::{run, Engine, Mode, ScenarioConfig};

fn preset(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(&root().join("scenarios").join(name)).unwrap()
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[test]
fn every_preset_loads() {
    for entry in std::fs::read_dir(root().join("scenarios")).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap().to_owned();
        if name.ends_with(".toml") && name != "camera.toml" && name != "gain_table.toml" {
            let cfg = ScenarioConfig::load(&path).unwrap();
            Engine::new(cfg).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }
}

#[test]
fn shipped_gain_table_matches_builtin() {
    let table = GainTable::load(&root().join("scenarios/gain_table.toml")).unwrap();
    let builtin = GainTable::builtin();
    assert_eq!(table.v_ego, builtin.v_ego);
    assert_eq!(table.gap, builtin.gap);
    let flat = |t: &GainTable| -> Vec<f64> { t.k.iter().chain(&t.gamma).flatten().flatten().copied().collect() };
    for (a, b) in flat(&table).iter().zip(flat(&builtin)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn default_config_equals_corridor_preset() {
    assert_eq!(preset("corridor.toml"), ScenarioConfig::default());
}

#[test]
fn one_tick_run() {
    let mut cfg = preset("corridor.toml");
    cfg.duration = 0.1;
    cfg.dt = 0.1;
    let out = run(cfg).unwrap();
    assert_eq!(out.summary.ticks, 1);
    assert!((out.summary.sim_time - 0.1).abs() < 1e-12);
    assert!(out.trace.iter().all(|r| (r.t - 0.1).abs() < 1e-12));
}

#[test]
fn vehicles_are_conserved() {
    for seed in [3, 11] {
        for mode in [Mode::Unsignalized, Mode::Baseline] {
            let mut cfg = preset("corridor.toml");
            cfg.seed = seed;
            cfg.mode = mode;
            cfg.duration = 60.0;
            let s = run(cfg).unwrap().summary;
            assert_eq!(s.spawned, s.exited + s.truncated.len() as u64);
            assert_eq!(s.audit.conservation_violations, 0);
            assert!(!s.truncated.is_empty(), "60 s is too short to empty the corridor");
        }
    }
}

#[test]
fn id_base_only_relabels() {
    let mut a = preset("corridor.toml");
    a.seed = 5;
    let mut b = a.clone();
    b.id_base = 1000;
    let ra = run(a).unwrap();
    let rb = run(b).unwrap();
    assert_eq!(ra.trace.len(), rb.trace.len());
    for (x, y) in ra.trace.iter().zip(&rb.trace) {
        let mut y = *y;
        y.vehicle_id -= 1000;
        assert_eq!(*x, y);
    }
    assert_eq!(ra.summary.ego.unwrap().id, 0);
    assert_eq!(rb.summary.ego.unwrap().id, 1000);
}

#[test]
fn both_modes_see_the_same_arrivals() {
    let mut cfg = preset("corridor.toml");
    cfg.seed = 9;
    cfg.record_trace = false;
    let u = run(cfg.clone()).unwrap().summary;
    cfg.mode = Mode::Baseline;
    let b = run(cfg).unwrap().summary;
    assert_eq!(u.spawned, b.spawned);
    let spawns = |s: &slotsim::RunSummary| s.vehicles.iter().map(|v| (v.id, v.spawn_time)).collect::<Vec<_>>();
    assert_eq!(spawns(&u), spawns(&b));
}

fn lone_northbound(mode: Mode) -> slotsim::RunOutput {
    let mut cfg = preset("single.toml");
    cfg.mode = mode;
    cfg.demand.rate = 0.0;
    cfg.signals.random_offset = false;
    cfg.vehicles = vec![VehicleSpec {
        heading: Heading::North,
        v0: 15.0,
        spawn_time: 30.0,
        ..VehicleSpec::default()
    }];
    run(cfg).unwrap()
}

#[test]
fn baseline_vehicle_waits_at_red() {
    // main street is green for [0, 30), yellow to 33, red until 66; the
    // vehicle reaches the line at about t = 43
    let out = lone_northbound(Mode::Baseline);
    let rows = &out.trace;
    let waiting: Vec<_> = rows.iter().filter(|r| r.t > 40.0 && r.t < 66.0).collect();
    assert!(waiting.iter().all(|r| r.d_arrival >= 0.5 - 1e-9), "ran the red light");
    assert!(waiting.iter().any(|r| r.v == 0.0));
    let m = &out.summary.vehicles[0];
    assert_eq!(m.stops, 1);
    assert!(m.exit_time.unwrap() > 66.0);

    let free = lone_northbound(Mode::Unsignalized);
    assert_eq!(free.summary.vehicles[0].stops, 0);
    assert!(free.summary.vehicles[0].travel_time.unwrap() < m.travel_time.unwrap());
}

#[test]
fn trace_metrics_agree_with_summary() {
    let mut cfg = preset("corridor.toml");
    cfg.seed = 21;
    let dt = cfg.dt;
    let out = run(cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    write_trace(&path, &out.trace).unwrap();
    let rows = read_trace(&path).unwrap();
    assert_eq!(rows, out.trace);

    let m = metrics(&rows, dt, out.summary.sim_time);
    assert!(m.truncated.is_empty());
    assert_eq!(m.vehicles.len(), out.summary.vehicles.len());
    for (a, b) in m.vehicles.iter().zip(&out.summary.vehicles) {
        assert_eq!(a.id, b.id);
        assert!((a.travel_time.unwrap() - b.travel_time.unwrap()).abs() < 1e-6, "vehicle {}", a.id);
        assert_eq!(a.stops, b.stops, "vehicle {}", a.id);
        // the exit tick burns fuel but writes no row
        let last = rows.iter().rev().find(|r| r.vehicle_id == a.id).unwrap();
        let gap = b.fuel - a.fuel;
        assert!(gap > 0.0 && gap < 1.5 * last.fuel_rate * dt + 1e-9, "vehicle {}: {gap}", a.id);
    }
}

#[test]
fn seven_cars_preset_releases_everything() {
    let mut engine = Engine::new(preset("seven_cars.toml")).unwrap();
    while !engine.is_finished() {
        engine.step();
    }
    assert_eq!(engine.pool().len(), 0);
    let out = engine.finish();
    assert_eq!(out.summary.exited, 7);
    assert_eq!(out.summary.audit.reservations, out.summary.audit.releases);
    assert_eq!(out.summary.audit.co_occupancy, 0);
}

#[test]
fn hold_speed_vehicles_keep_their_speed() {
    let out = run(preset("two_cars.toml")).unwrap();
    for r in &out.trace {
        let want = if r.vehicle_id == 0 { 5.0 } else { 15.0 };
        assert!((r.v - want).abs() < 1e-12);
    }
}

#[test]
fn max_predecessor_rule_runs_safely() {
    let mut cfg = preset("corridor.toml");
    cfg.seed = 2;
    cfg.record_trace = false;
    cfg.planner.predecessor_rule = PredecessorRule::Max;
    let s = run(cfg).unwrap().summary;
    assert_eq!(s.audit.uniqueness_violations, 0);
    assert_eq!(s.audit.co_occupancy, 0);
    assert!(s.truncated.is_empty());
}

#[test]
fn scenario_without_ego() {
    let s = run(preset("single.toml")).unwrap().summary;
    assert!(s.ego.is_none());
    assert!(s.spawned > 0);
    assert_eq!(s.spawned, s.exited);
}

#[test]
fn scripted_ego_behaviour_is_accepted() {
    let mut cfg = preset("seven_cars.toml");
    cfg.ego.vehicle.behavior = Behavior::HoldSpeed;
    let s = run(cfg).unwrap().summary;
    assert_eq!(s.exited, 7);
}
