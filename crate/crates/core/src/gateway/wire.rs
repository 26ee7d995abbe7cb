//! Wire format shared by the gateway and its clients.
//!
//! Frames are a 4-byte big-endian length followed by a UTF-8 JSON object.
//! Object fields are emitted in declaration order and every float is rounded
//! to 6 significant digits before encoding.
//!
//! Server to client:
//!
//! ```text
//! {"type":"snapshot","version":1,"tick":..,"t":..,
//!  "ego":{"id":..,"r":..,"v":..,"a":..,"slot":..,"d_arrival":..} | null,
//!  "vehicles":[{"id":..,"x":..,"y":..,"heading":..,"v":..}],
//!  "slots":[{"ref_id":..,"color":"red"|"green","quad":[[u,v],..],"r_s":..,"l_s":..}],
//!  "phases":[{"intersection":..,"north":..,"east":..,"south":..,"west":..}],
//!  "metrics":{"spawned":..,"exited":..,"ego_fuel":..,"ego_stops":..}}
//! {"type":"end","version":1,"tick":..,"t":..}
//! ```
//!
//! Client to server: `{"type":"input","ack_tick":..,"throttle":..,"brake":..}`.
//! A `steering` field is accepted and ignored.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::engine::Engine;
use crate::projection::{project_slot, CameraConfig, CameraModel};
use crate::signal::SignalPhase;
use crate::vehicle::PedalInput;

pub const WIRE_VERSION: u32 = 1;
/// Frames larger than this are rejected as malformed.
pub const MAX_FRAME: usize = 1 << 20;

/// Rounds to 6 significant digits.
pub fn sig6(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoMsg {
    pub id: u32,
    pub r: f64,
    pub v: f64,
    pub a: f64,
    /// Reserved slot number at the current intersection, 0 for none.
    pub slot: u32,
    /// Distance to the current stop line (m).
    pub d_arrival: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseMsg {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotMsg {
    pub ref_id: u32,
    pub color: String,
    /// Image-space polygon after clipping; four corners unless clipped.
    pub quad: Vec<[f64; 2]>,
    pub r_s: f64,
    pub l_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMsg {
    pub intersection: usize,
    pub north: SignalPhase,
    pub east: SignalPhase,
    pub south: SignalPhase,
    pub west: SignalPhase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsMsg {
    pub spawned: u64,
    pub exited: u64,
    pub ego_fuel: f64,
    pub ego_stops: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    #[serde(rename = "type")]
    pub kind: String,
    pub version: u32,
    pub tick: u64,
    pub t: f64,
    pub ego: Option<EgoMsg>,
    pub vehicles: Vec<PoseMsg>,
    pub slots: Vec<SlotMsg>,
    pub phases: Vec<PhaseMsg>,
    pub metrics: MetricsMsg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndMsg {
    #[serde(rename = "type")]
    pub kind: String,
    pub version: u32,
    pub tick: u64,
    pub t: f64,
}

impl EndMsg {
    pub fn new(tick: u64, t: f64) -> Self {
        Self {
            kind: "end".into(),
            version: WIRE_VERSION,
            tick,
            t: sig6(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputMsg {
    #[serde(rename = "type")]
    pub kind: InputTag,
    pub ack_tick: u64,
    pub throttle: f64,
    pub brake: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steering: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputTag {
    Input,
}

impl InputMsg {
    pub fn new(ack_tick: u64, throttle: f64, brake: f64) -> Self {
        Self {
            kind: InputTag::Input,
            ack_tick,
            throttle,
            brake,
            steering: None,
        }
    }

    pub fn pedals(&self) -> PedalInput {
        PedalInput {
            throttle: self.throttle,
            brake: self.brake,
        }
    }
}

/// Builds the snapshot of the engine's current state. Slot quads come from
/// [`project_slot`] with a camera mounted on the ego; slots entirely behind
/// the near plane or outside the image are left out.
pub fn snapshot(engine: &Engine, camera: &CameraConfig) -> Snapshot {
    let net = engine.network();
    let ego = engine.ego();
    let ego_msg = ego.map(|e| {
        let p = net.path(e.state.path);
        EgoMsg {
            id: e.state.id.0,
            r: sig6(e.state.r),
            v: sig6(e.state.v),
            a: sig6(e.state.a),
            slot: engine.pool().slot_of(e.state.id),
            d_arrival: sig6(p.stop_line - e.state.r),
        }
    });
    let mut slots = Vec::new();
    if let Some(e) = ego {
        let path = net.path(e.state.path);
        match CameraModel::from_pose(camera, &path.pose_at(e.state.r)) {
            Ok(cam) => {
                for s in engine.ego_slots() {
                    if let Some(q) = project_slot(s, path, &cam) {
                        slots.push(SlotMsg {
                            ref_id: s.ref_vehicle.0,
                            color: s.availability.color().to_string(),
                            quad: q.corners.iter().map(|c| [sig6(c[0]), sig6(c[1])]).collect(),
                            r_s: sig6(s.r_s),
                            l_s: sig6(s.l_s),
                        });
                    }
                }
            }
            Err(e) => log::warn!("camera: {e}"),
        }
    }
    let phases = engine
        .phases()
        .iter()
        .enumerate()
        .map(|(k, p)| PhaseMsg {
            intersection: k,
            north: p[0],
            east: p[1],
            south: p[2],
            west: p[3],
        })
        .collect();
    Snapshot {
        kind: "snapshot".into(),
        version: WIRE_VERSION,
        tick: engine.tick(),
        t: sig6(engine.time()),
        ego: ego_msg,
        vehicles: engine
            .poses()
            .into_iter()
            .map(|p| PoseMsg {
                id: p.id,
                x: sig6(p.x),
                y: sig6(p.y),
                heading: sig6(p.heading),
                v: sig6(p.v),
            })
            .collect(),
        slots,
        phases,
        metrics: MetricsMsg {
            spawned: engine.spawned(),
            exited: engine.exited(),
            ego_fuel: sig6(ego.map_or(0.0, |e| e.fuel)),
            ego_stops: ego.map_or(0, |e| e.stops()),
        },
    }
}

pub fn encode<T: Serialize>(msg: &T) -> Vec<u8> {
    serde_json::to_vec(msg).expect("wire messages always serialize")
}

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("bad json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Range(String),
}

/// Parses and range-checks a client input message.
pub fn decode_input(bytes: &[u8]) -> Result<InputMsg, DecodeError> {
    let msg: InputMsg = serde_json::from_slice(bytes)?;
    for (name, x) in [("throttle", msg.throttle), ("brake", msg.brake)] {
        if !(0.0..=1.0).contains(&x) {
            return Err(DecodeError::Range(format!("{name} {x} outside [0, 1]")));
        }
    }
    Ok(msg)
}

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {n} bytes")));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}
