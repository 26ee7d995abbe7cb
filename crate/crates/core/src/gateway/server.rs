use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::engine::{Engine, RunOutput};
use crate::error::{Result, SimError};
use crate::projection::CameraConfig;
use crate::vehicle::VehicleKind;

use super::wire::{decode_input, encode, read_frame, snapshot, write_frame, EndMsg, InputMsg};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pacing {
    /// Sim time locked to the wall clock.
    RealTime,
    /// One step per client input message; used for scripted clients.
    Lockstep,
}

#[derive(Debug, Clone)]
pub struct GatewayOptions {
    pub pacing: Pacing,
    /// How long the session keeps running after the client drops.
    pub grace: Duration,
    /// Most ticks run back to back when the loop falls behind.
    pub max_catch_up: u32,
    pub camera: CameraConfig,
}

impl Default for GatewayOptions {
    fn default() -> Self {
        Self {
            pacing: Pacing::RealTime,
            grace: Duration::from_secs(2),
            max_catch_up: 5,
            camera: CameraConfig::default(),
        }
    }
}

#[derive(Debug)]
pub struct SessionReport {
    pub output: RunOutput,
    /// Client messages that failed to parse or were out of range.
    pub malformed: u64,
    pub snapshots: u64,
    /// Times the session paused after a lost client.
    pub pauses: u32,
}

enum ClientEvent {
    Input(InputMsg),
    Malformed,
    Closed,
}

struct Connection {
    events: Receiver<ClientEvent>,
    out: Option<Sender<Vec<u8>>>,
    writer: Option<JoinHandle<()>>,
    stream: TcpStream,
}

impl Connection {
    fn open(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        let (ev_tx, events) = mpsc::channel();
        let mut rd = stream.try_clone()?;
        thread::spawn(move || loop {
            match read_frame(&mut rd) {
                Ok(Some(bytes)) => {
                    let ev = match decode_input(&bytes) {
                        Ok(m) => ClientEvent::Input(m),
                        Err(e) => {
                            log::warn!("ignoring client message: {e}");
                            ClientEvent::Malformed
                        }
                    };
                    if ev_tx.send(ev).is_err() {
                        break;
                    }
                }
                Ok(None) => {
                    let _ = ev_tx.send(ClientEvent::Closed);
                    break;
                }
                Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                    log::debug!("client closed mid-frame");
                    let _ = ev_tx.send(ClientEvent::Closed);
                    break;
                }
                Err(e) => {
                    log::warn!("client read: {e}");
                    let _ = ev_tx.send(ClientEvent::Malformed);
                    let _ = ev_tx.send(ClientEvent::Closed);
                    break;
                }
            }
        });
        let (out, out_rx) = mpsc::channel::<Vec<u8>>();
        let mut wr = stream.try_clone()?;
        let writer = thread::spawn(move || {
            for buf in out_rx {
                if write_frame(&mut wr, &buf).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            events,
            out: Some(out),
            writer: Some(writer),
            stream,
        })
    }

    fn send(&self, buf: Vec<u8>) {
        if let Some(out) = &self.out {
            let _ = out.send(buf);
        }
    }

    /// Flushes queued frames and closes both directions.
    fn close(mut self) {
        self.out.take();
        if let Some(w) = self.writer.take() {
            let _ = w.join();
        }
        let _ = self.stream.shutdown(std::net::Shutdown::Both);
    }
}

pub struct Gateway {
    listener: TcpListener,
    opts: GatewayOptions,
}

impl Gateway {
    /// Binds the listening socket; a busy port is an error here, not later.
    pub fn bind(addr: impl ToSocketAddrs, opts: GatewayOptions) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        Ok(Self { listener, opts })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    fn accept(&self) -> Result<Connection> {
        let (stream, peer) = self.listener.accept()?;
        log::info!("driver connected from {peer}");
        Connection::open(stream)
    }

    /// Runs `engine` as a live session until the scenario ends, or, in
    /// lockstep mode, until the client disconnects. Nothing is stepped while
    /// no client is connected. `on_pause` is called each time the session
    /// pauses after losing its client, e.g. to flush the trace.
    pub fn serve(&self, mut engine: Engine, mut on_pause: impl FnMut(&Engine)) -> Result<SessionReport> {
        let ego = &engine.config().ego;
        if !ego.enabled || ego.vehicle.kind != VehicleKind::Human {
            return Err(SimError::config("ego.kind", "a live session needs a human-driven ego"));
        }
        let dt = Duration::from_secs_f64(engine.config().dt);
        let mut report = Counters::default();
        let mut conn = self.accept()?;
        conn.send(encode(&snapshot(&engine, &self.opts.camera)));
        report.snapshots += 1;

        let mut base = Instant::now();
        let mut n: u32 = 0;
        let mut lost_at: Option<Instant> = None;
        while !engine.is_finished() {
            match self.opts.pacing {
                Pacing::Lockstep => match wait_for_input(&conn.events, &mut report) {
                    Some(m) => engine.set_ego_input(m.pedals()),
                    None => break,
                },
                Pacing::RealTime => {
                    loop {
                        match conn.events.try_recv() {
                            Ok(ClientEvent::Input(m)) => engine.set_ego_input(m.pedals()),
                            Ok(ClientEvent::Malformed) => report.malformed += 1,
                            Ok(ClientEvent::Closed) | Err(TryRecvError::Disconnected) => {
                                lost_at.get_or_insert_with(Instant::now);
                                break;
                            }
                            Err(TryRecvError::Empty) => break,
                        }
                    }
                    if lost_at.is_some_and(|t| t.elapsed() >= self.opts.grace) {
                        log::info!("driver lost; paused at tick {}", engine.tick());
                        report.pauses += 1;
                        on_pause(&engine);
                        conn.close();
                        conn = self.accept()?;
                        conn.send(encode(&snapshot(&engine, &self.opts.camera)));
                        report.snapshots += 1;
                        lost_at = None;
                        base = Instant::now();
                        n = 0;
                        continue;
                    }
                    let deadline = base + dt * (n + 1);
                    let now = Instant::now();
                    if now < deadline {
                        thread::sleep(deadline - now);
                    } else if now > deadline + dt * self.opts.max_catch_up {
                        // too far behind: drop the backlog
                        base = now - dt * (n + 1);
                    }
                    n += 1;
                }
            }
            engine.step();
            if lost_at.is_none() {
                conn.send(encode(&snapshot(&engine, &self.opts.camera)));
                report.snapshots += 1;
            }
        }
        if engine.is_finished() {
            conn.send(encode(&EndMsg::new(engine.tick(), engine.time())));
        }
        conn.close();
        Ok(SessionReport {
            output: engine.finish(),
            malformed: report.malformed,
            snapshots: report.snapshots,
            pauses: report.pauses,
        })
    }
}

#[derive(Default)]
struct Counters {
    malformed: u64,
    snapshots: u64,
    pauses: u32,
}

fn wait_for_input(events: &Receiver<ClientEvent>, report: &mut Counters) -> Option<InputMsg> {
    loop {
        match events.recv_timeout(Duration::from_secs(60)) {
            Ok(ClientEvent::Input(m)) => return Some(m),
            Ok(ClientEvent::Malformed) => report.malformed += 1,
            Ok(ClientEvent::Closed) | Err(RecvTimeoutError::Disconnected) => return None,
            Err(RecvTimeoutError::Timeout) => log::warn!("lockstep client idle for 60 s"),
        }
    }
}
