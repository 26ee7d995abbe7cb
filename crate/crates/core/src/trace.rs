//! Per-tick trace files (CSV) and plot-ready series derived from them.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

pub const TRACE_COLUMNS: [&str; 9] = [
    "t",
    "vehicle_id",
    "intersection_id",
    "r",
    "v",
    "a",
    "slot",
    "d_arrival",
    "fuel_rate",
];

/// One vehicle at the end of one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub vehicle_id: u32,
    pub intersection_id: usize,
    pub r: f64,
    pub v: f64,
    pub a: f64,
    pub slot: u32,
    pub d_arrival: f64,
    pub fuel_rate: f64,
}

pub fn write_trace_to<W: Write>(w: W, rows: &[TraceRow]) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wr.write_record(TRACE_COLUMNS).map_err(csv_err)?;
    for r in rows {
        wr.serialize(r).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_trace_to(f, rows)
}

/// Parses a trace, requiring the exact column header.
pub fn read_trace_from<R: Read>(r: R) -> Result<Vec<TraceRow>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let headers = rd.headers().map_err(|e| SimError::Trace(e.to_string()))?.clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    if headers.iter().ne(TRACE_COLUMNS.iter().copied()) {
        return Err(SimError::Trace(format!(
            "unexpected header {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut rows = Vec::new();
    for (k, rec) in rd.deserialize::<TraceRow>().enumerate() {
        let row = rec.map_err(|e| SimError::Trace(format!("row {}: {e}", k + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let f = std::fs::File::open(path)?;
    read_trace_from(std::io::BufReader::new(f))
}

fn csv_err(e: csv::Error) -> SimError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => SimError::Io(io),
        other => SimError::Trace(format!("{other:?}")),
    }
}

/// Distance to the next stop line over time, per vehicle: `(t, intersection, d)`.
pub fn distance_series(rows: &[TraceRow]) -> BTreeMap<u32, Vec<(f64, usize, f64)>> {
    let mut out: BTreeMap<u32, Vec<_>> = BTreeMap::new();
    for r in rows {
        out.entry(r.vehicle_id).or_default().push((r.t, r.intersection_id, r.d_arrival));
    }
    out
}

/// Slot number change points per vehicle: `(t, intersection, slot)`.
pub fn slot_series(rows: &[TraceRow]) -> BTreeMap<u32, Vec<(f64, usize, u32)>> {
    let mut out: BTreeMap<u32, Vec<(f64, usize, u32)>> = BTreeMap::new();
    for r in rows {
        let s = out.entry(r.vehicle_id).or_default();
        if s.last().is_none_or(|&(_, ix, slot)| ix != r.intersection_id || slot != r.slot) {
            s.push((r.t, r.intersection_id, r.slot));
        }
    }
    out
}

/// Speed against travelled distance for one vehicle: `(distance, v)`.
/// Distance is the trapezoidal integral of speed over the trace.
pub fn speed_distance(rows: &[TraceRow], vehicle: u32) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    let mut dist = 0.0;
    for r in rows.iter().filter(|r| r.vehicle_id == vehicle) {
        if let Some((t0, v0)) = prev {
            dist += 0.5 * (v0 + r.v) * (r.t - t0);
        }
        out.push((dist, r.v));
        prev = Some((r.t, r.v));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: f64, id: u32, slot: u32) -> TraceRow {
        TraceRow {
            t,
            vehicle_id: id,
            intersection_id: 0,
            r: 1.5,
            v: 10.0,
            a: 0.0,
            slot,
            d_arrival: 98.5,
            fuel_rate: 0.4,
        }
    }

    #[test]
    fn round_trip_and_exact_header() {
        let rows = vec![row(0.05, 0, 0), row(0.05, 3, 2), row(0.1, 0, 1)];
        let mut buf = Vec::new();
        write_trace_to(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,vehicle_id,intersection_id,r,v,a,slot,d_arrival,fuel_rate\n"));
        assert_eq!(read_trace_from(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn malformed_trace_is_an_error() {
        assert!(matches!(read_trace_from(&b"a,b\n1,2\n"[..]), Err(SimError::Trace(_))));
        let bad = b"t,vehicle_id,intersection_id,r,v,a,slot,d_arrival,fuel_rate\n0.1,x,0,0,0,0,0,0,0\n";
        assert!(matches!(read_trace_from(&bad[..]), Err(SimError::Trace(_))));
    }

    #[test]
    fn empty_trace_gives_empty_series() {
        let rows = read_trace_from(&b""[..]).unwrap();
        assert!(rows.is_empty());
        assert!(distance_series(&rows).is_empty());
    }

    #[test]
    fn slot_series_keeps_change_points() {
        let rows = vec![row(0.1, 1, 0), row(0.2, 1, 2), row(0.3, 1, 2), row(0.4, 1, 0)];
        let s = slot_series(&rows);
        assert_eq!(s[&1], vec![(0.1, 0, 0), (0.2, 0, 2), (0.4, 0, 0)]);
    }

    #[test]
    fn speed_distance_integrates() {
        let rows: Vec<_> = (1..=11).map(|k| row(k as f64 * 0.1, 0, 0)).collect();
        let s = speed_distance(&rows, 0);
        assert!((s.last().unwrap().0 - 10.0).abs() < 1e-9);
    }
}
