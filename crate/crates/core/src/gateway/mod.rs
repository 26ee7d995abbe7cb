//! Live session over TCP: one driver client, per-tick snapshots out, pedal
//! inputs in. See [`wire`] for the message schema.

mod server;
pub mod wire;

pub use server::{Gateway, GatewayOptions, Pacing, SessionReport};
