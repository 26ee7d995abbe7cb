use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use slotsim::gateway::{Gateway, GatewayOptions, Pacing};
use slotsim::metrics::{mean_std, paired_reduction};
use slotsim::projection::CameraConfig;
use slotsim::trace::{distance_series, read_trace, slot_series, speed_distance, write_trace};
use slotsim::vehicle::VehicleKind;
use slotsim::{run, Engine, Mode, RunSummary, ScenarioConfig, SimError};

#[derive(Parser)]
#[command(name = "slotsim", version, about = "Slot-reservation corridor simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario headless and write traces and summaries.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Seeds, comma separated; defaults to the scenario's seed.
        #[arg(long, value_delimiter = ',')]
        seed: Vec<u64>,
        /// Overrides the scenario mode.
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Paired unsignalized vs baseline runs over seeds 0..n.
    Compare {
        #[arg(long, default_value_t = 50)]
        seeds: u64,
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Also write the comparison as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a series from a trace file as CSV.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum)]
        series: Series,
        /// Vehicle for the speed series; defaults to the lowest id.
        #[arg(long)]
        vehicle: Option<u32>,
    },
    /// Serve a live session to a driver console.
    Serve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long)]
        camera: Option<PathBuf>,
        /// Step once per client input instead of in real time.
        #[arg(long)]
        lockstep: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Series {
    Distance,
    Slot,
    Speed,
}

/// Error with the process exit code it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let err = e.into();
        let code = match err.downcast_ref::<SimError>() {
            Some(SimError::Config { .. } | SimError::Parse { .. } | SimError::Range { .. }) => 3,
            Some(SimError::Trace(_)) => 4,
            _ => 1,
        };
        Failure { code, err }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            seed,
            mode,
            out,
        } => cmd_run(&scenario, &seed, mode, &out),
        Command::Compare { seeds, scenario, out } => cmd_compare(seeds, scenario.as_deref(), out.as_deref()),
        Command::Replay { trace, series, vehicle } => cmd_replay(&trace, series, vehicle),
        Command::Serve {
            scenario,
            port,
            camera,
            lockstep,
            out,
        } => cmd_serve(&scenario, port, camera.as_deref(), lockstep, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn load_scenario(path: &Path) -> Result<ScenarioConfig, Failure> {
    if !path.is_file() {
        return Err(Failure {
            code: 2,
            err: anyhow::anyhow!("scenario file {} not found", path.display()),
        });
    }
    Ok(ScenarioConfig::load(path)?)
}

fn cmd_run(scenario: &Path, seeds: &[u64], mode: Option<Mode>, out: &Path) -> Result<(), Failure> {
    let mut cfg = load_scenario(scenario)?;
    if let Some(m) = mode {
        cfg.mode = m;
    }
    cfg.validate()?;
    let seeds = if seeds.is_empty() { vec![cfg.seed] } else { seeds.to_vec() };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for seed in seeds {
        let mut c = cfg.clone();
        c.seed = seed;
        let stem = format!("{}_{}_seed{seed}", c.name, c.mode.as_str());
        let result = run(c)?;
        write_trace(&out.join(format!("{stem}.csv")), &result.trace)?;
        let json = serde_json::to_string_pretty(&result.summary)?;
        fs::write(out.join(format!("{stem}_summary.json")), json)?;
        print_summary(&result.summary);
    }
    Ok(())
}

fn print_summary(s: &RunSummary) {
    let ego = s.ego.as_ref();
    println!(
        "{} seed {} [{}]: {} vehicles, mean travel time {}, ego travel time {}, ego stops {}, co-occupancy {}",
        s.name,
        s.seed,
        s.mode.as_str(),
        s.spawned,
        fmt_opt(s.mean_travel_time),
        fmt_opt(ego.and_then(|e| e.travel_time)),
        ego.map_or("-".into(), |e| e.stops.to_string()),
        s.audit.co_occupancy,
    );
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{v:.2} s"))
}

#[derive(serde::Serialize)]
struct Comparison {
    seeds: u64,
    pairs: usize,
    ego_travel_time_reduction: f64,
    ego_travel_time_ci95: Option<(f64, f64)>,
    ego_fuel_reduction: f64,
    ego_fuel_ci95: Option<(f64, f64)>,
    fuel_lower_pairs: usize,
    ego_no_stop_runs: usize,
    mean_travel_time_reduction: f64,
}

fn cmd_compare(seeds: u64, scenario: Option<&Path>, out: Option<&Path>) -> Result<(), Failure> {
    let base = match scenario {
        Some(p) => load_scenario(p)?,
        None => ScenarioConfig::default(),
    };
    let (mut tt_b, mut tt_u, mut f_b, mut f_u, mut net_red) = (vec![], vec![], vec![], vec![], vec![]);
    let mut no_stop = 0;
    for seed in 0..seeds {
        let mut cfg = base.clone();
        cfg.seed = seed;
        cfg.record_trace = false;
        cfg.mode = Mode::Unsignalized;
        let u = run(cfg.clone())?.summary;
        cfg.mode = Mode::Baseline;
        let b = run(cfg)?.summary;
        if let (Some(x), Some(y)) = (u.mean_travel_time, b.mean_travel_time) {
            net_red.push((y - x) / y);
        }
        let (Some(ue), Some(be)) = (u.ego, b.ego) else {
            continue;
        };
        let (Some(tu), Some(tb)) = (ue.travel_time, be.travel_time) else {
            continue;
        };
        no_stop += usize::from(ue.stops == 0);
        tt_u.push(tu);
        tt_b.push(tb);
        f_u.push(ue.fuel);
        f_b.push(be.fuel);
    }
    let tt = paired_reduction(&tt_b, &tt_u, 10_000, 1);
    let fuel = paired_reduction(&f_b, &f_u, 10_000, 2);
    let cmp = Comparison {
        seeds,
        pairs: tt.n,
        ego_travel_time_reduction: tt.mean,
        ego_travel_time_ci95: tt.ci95,
        ego_fuel_reduction: fuel.mean,
        ego_fuel_ci95: fuel.ci95,
        fuel_lower_pairs: f_u.iter().zip(&f_b).filter(|(u, b)| u < b).count(),
        ego_no_stop_runs: no_stop,
        mean_travel_time_reduction: mean_std(&net_red).0,
    };
    let pct = |x: f64| format!("{:.1}%", 100.0 * x);
    let ci = |c: Option<(f64, f64)>| c.map_or("-".into(), |(lo, hi)| format!("[{}, {}]", pct(lo), pct(hi)));
    println!("pairs: {} of {seeds} seeds", cmp.pairs);
    println!("ego travel time reduction: {} {}", pct(cmp.ego_travel_time_reduction), ci(cmp.ego_travel_time_ci95));
    println!("ego fuel reduction: {} {}", pct(cmp.ego_fuel_reduction), ci(cmp.ego_fuel_ci95));
    println!("fuel lower in {} of {} pairs", cmp.fuel_lower_pairs, cmp.pairs);
    println!("ego without a full stop in {} of {} runs", cmp.ego_no_stop_runs, cmp.pairs);
    println!("all-vehicle mean travel time reduction: {}", pct(cmp.mean_travel_time_reduction));
    if let Some(path) = out {
        fs::write(path, serde_json::to_string_pretty(&cmp)?)?;
    }
    Ok(())
}

fn cmd_replay(trace: &Path, series: Series, vehicle: Option<u32>) -> Result<(), Failure> {
    let rows = read_trace(trace).map_err(|e| match e {
        SimError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Failure {
            code: 4,
            err: anyhow::anyhow!("trace file {} not found", trace.display()),
        },
        other => other.into(),
    })?;
    match series {
        Series::Distance => {
            println!("vehicle_id,t,intersection_id,d_arrival");
            for (id, pts) in distance_series(&rows) {
                for (t, ix, d) in pts {
                    println!("{id},{t},{ix},{d}");
                }
            }
        }
        Series::Slot => {
            println!("vehicle_id,t,intersection_id,slot");
            for (id, pts) in slot_series(&rows) {
                for (t, ix, s) in pts {
                    println!("{id},{t},{ix},{s}");
                }
            }
        }
        Series::Speed => {
            let Some(id) = vehicle.or_else(|| rows.iter().map(|r| r.vehicle_id).min()) else {
                return Ok(());
            };
            println!("distance,v");
            for (d, v) in speed_distance(&rows, id) {
                println!("{d},{v}");
            }
        }
    }
    Ok(())
}

fn cmd_serve(scenario: &Path, port: u16, camera: Option<&Path>, lockstep: bool, out: &Path) -> Result<(), Failure> {
    let mut cfg = load_scenario(scenario)?;
    if cfg.ego.vehicle.kind != VehicleKind::Human || !cfg.ego.enabled {
        log::info!("the console drives the ego: switching it to human control");
        cfg.ego.enabled = true;
        cfg.ego.vehicle.kind = VehicleKind::Human;
    }
    let camera = match camera {
        Some(p) => CameraConfig::load(p)?,
        None => CameraConfig::default(),
    };
    let opts = GatewayOptions {
        pacing: if lockstep { Pacing::Lockstep } else { Pacing::RealTime },
        camera,
        ..GatewayOptions::default()
    };
    let engine = Engine::new(cfg)?;
    let gw = Gateway::bind(("0.0.0.0", port), opts).with_context(|| format!("binding port {port}"))?;
    log::info!("waiting for a driver on {}", gw.local_addr()?);
    fs::create_dir_all(out)?;
    let trace_path = out.join("session.csv");
    let report = gw.serve(engine, |e| {
        if let Err(err) = write_trace(&trace_path, e.trace()) {
            log::error!("flushing trace: {err}");
        }
    })?;
    write_trace(&trace_path, &report.output.trace)?;
    fs::write(out.join("session_inputs.json"), serde_json::to_string_pretty(&report.output.input_log)?)?;
    fs::write(out.join("session_summary.json"), serde_json::to_string_pretty(&report.output.summary)?)?;
    println!(
        "session over: {} snapshots, {} malformed messages, {} pauses",
        report.snapshots, report.malformed, report.pauses
    );
    print_summary(&report.output.summary);
    Ok(())
}
