//! Prints the reservation log of a scenario file.
//!
//! `cargo run --example reservations -- scenarios/seven_cars.toml`

use std::path::Path;

fn main() -> slotsim::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "scenarios/seven_cars.toml".into());
    let cfg = slotsim::ScenarioConfig::load(Path::new(&path))?;
    let out = slotsim::run(cfg)?;
    for e in &out.summary.reservations {
        let refs: Vec<String> = e.references.iter().map(|r| r.to_string()).collect();
        println!(
            "t={:7.2}  vehicle {:3}  intersection {}  slot {:2}  refs [{}]",
            e.t,
            e.vehicle,
            e.intersection,
            e.slot,
            refs.join(", ")
        );
    }
    let s = &out.summary;
    println!(
        "spawned {} exited {} co-occupancy {} min crossing gap {:?}",
        s.spawned, s.exited, s.audit.co_occupancy, s.audit.min_crossing_gap
    );
    Ok(())
}
