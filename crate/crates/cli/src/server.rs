//! WebSocket teleoperation server.
//!
//! The control loop owns the simulator and never touches a socket. One thread
//! accepts connections and one thread per client parses frames into a bounded
//! command queue and forwards the most recent published state.

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, SyncSender, TryRecvError, TrySendError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use anyhow::Context;
use nalgebra::Vector6;
use sqcbf::filter::CycleRecord;
use sqcbf::sim::{Controller, Scenario, Simulation};
use tungstenite::{Message, WebSocket};

use crate::protocol::{ClientMessage, ServerMessage, StateFrame};

pub const CONTROL_RATE_HZ: f64 = 100.0;
pub const BROADCAST_RATE_HZ: f64 = 30.0;
pub const STALE_AFTER: Duration = Duration::from_millis(200);
const QUEUE_DEPTH: usize = 64;
const CLIENT_POLL: Duration = Duration::from_millis(5);
const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub bind: String,
    pub control_rate_hz: f64,
    pub broadcast_rate_hz: f64,
    pub stale_after: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8765".into(),
            control_rate_hz: CONTROL_RATE_HZ,
            broadcast_rate_hz: BROADCAST_RATE_HZ,
            stale_after: STALE_AFTER,
        }
    }
}

#[derive(Debug)]
enum Command {
    Jog {
        twist: Vector6<f64>,
        seq: i64,
        at: Instant,
    },
    Reset,
    SetFilter(bool),
    Disconnected,
}

/// Wall-clock timing of one control tick.
#[derive(Clone, Copy, Debug)]
pub struct TickTiming {
    /// Seconds since the loop started.
    pub start: f64,
    /// Seconds spent in the simulator and filter.
    pub compute: f64,
}

#[derive(Default)]
struct Shared {
    records: Mutex<Vec<CycleRecord>>,
    timings: Mutex<Vec<TickTiming>>,
    /// Latest serialized state and its publication counter.
    latest: Mutex<Option<(u64, String)>>,
    client_active: AtomicBool,
    stop: AtomicBool,
    failure: Mutex<Option<String>>,
}

pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Log of every control tick so far.
    pub fn records(&self) -> Vec<CycleRecord> {
        self.shared.records.lock().unwrap().clone()
    }

    pub fn timings(&self) -> Vec<TickTiming> {
        self.shared.timings.lock().unwrap().clone()
    }

    /// Error that terminated the control loop, if any.
    pub fn failure(&self) -> Option<String> {
        self.shared.failure.lock().unwrap().clone()
    }

    pub fn is_running(&self) -> bool {
        !self.shared.stop.load(Ordering::SeqCst)
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    /// Blocks until the control loop ends.
    pub fn wait(mut self) -> anyhow::Result<()> {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        match self.failure() {
            Some(e) => anyhow::bail!(e),
            None => Ok(()),
        }
    }

    fn shutdown(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Starts the control loop and the listener. The scenario's controller is
/// replaced by operator input.
pub fn serve(scenario: &Scenario, cfg: &ServerConfig) -> anyhow::Result<ServerHandle> {
    if !(cfg.control_rate_hz > 0.0 && cfg.broadcast_rate_hz > 0.0) {
        anyhow::bail!("rates must be positive");
    }
    let mut scenario = scenario.clone();
    scenario.controller = Controller::External;
    let sim = Simulation::new(&scenario).context("building simulation")?;

    let listener = TcpListener::bind(&cfg.bind).with_context(|| format!("binding {}", cfg.bind))?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    log::info!("listening on ws://{addr}");

    let shared = Arc::new(Shared::default());
    let (tx, rx) = mpsc::sync_channel(QUEUE_DEPTH);

    let control = {
        let shared = shared.clone();
        let cfg = cfg.clone();
        thread::spawn(move || {
            if let Err(e) = control_loop(sim, rx, &shared, &cfg) {
                log::error!("control loop stopped: {e:#}");
                *shared.failure.lock().unwrap() = Some(format!("{e:#}"));
            }
            shared.stop.store(true, Ordering::SeqCst);
        })
    };
    let accept = {
        let shared = shared.clone();
        thread::spawn(move || accept_loop(listener, tx, shared))
    };
    Ok(ServerHandle {
        addr,
        shared,
        threads: vec![control, accept],
    })
}

fn control_loop(
    mut sim: Simulation,
    rx: Receiver<Command>,
    shared: &Shared,
    cfg: &ServerConfig,
) -> anyhow::Result<()> {
    let period = Duration::from_secs_f64(1.0 / cfg.control_rate_hz);
    let decimation = (cfg.control_rate_hz / cfg.broadcast_rate_hz).max(1.0);
    let origin = Instant::now();
    let mut next = origin;
    let mut jog: Option<(Vector6<f64>, Instant)> = None;
    let mut seq = None;
    let mut tick_index: u64 = 0;
    let mut published: u64 = 0;

    while !shared.stop.load(Ordering::SeqCst) {
        let start = Instant::now();
        loop {
            match rx.try_recv() {
                Ok(Command::Jog { twist, seq: s, at }) => {
                    jog = Some((twist, at));
                    seq = Some(s);
                }
                Ok(Command::Reset) => {
                    sim.reset()?;
                    jog = None;
                }
                Ok(Command::SetFilter(on)) => sim.set_filter(on),
                Ok(Command::Disconnected) => jog = None,
                Err(TryRecvError::Empty) | Err(TryRecvError::Disconnected) => break,
            }
        }
        let twist = match jog {
            Some((v, at)) if start.duration_since(at) <= cfg.stale_after => v,
            _ => Vector6::zeros(),
        };

        let tick = sim.tick(Some(&twist))?;
        let compute = start.elapsed().as_secs_f64();

        // Publish on the ticks where the 30 Hz clock advances.
        if (tick_index as f64 / decimation).floor() >= published as f64 {
            let frame = StateFrame::from_tick(&tick, sim.filter_enabled(), seq);
            let text = ServerMessage::State(frame).to_json();
            published += 1;
            *shared.latest.lock().unwrap() = Some((published, text));
        }
        shared.records.lock().unwrap().push(tick.record);
        shared.timings.lock().unwrap().push(TickTiming {
            start: start.duration_since(origin).as_secs_f64(),
            compute,
        });
        tick_index += 1;

        next += period;
        let now = Instant::now();
        if next > now {
            thread::sleep(next - now);
        } else {
            // Overran; do not try to catch up with a burst of ticks.
            next = now;
        }
    }
    Ok(())
}

fn accept_loop(listener: TcpListener, tx: SyncSender<Command>, shared: Arc<Shared>) {
    let mut clients = Vec::new();
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                if shared.client_active.swap(true, Ordering::SeqCst) {
                    log::warn!("rejecting second client {peer}");
                    thread::spawn(move || reject(stream));
                    continue;
                }
                log::info!("client {peer} connected");
                let tx = tx.clone();
                let shared = shared.clone();
                clients.push(thread::spawn(move || {
                    if let Err(e) = client_session(stream, &tx, &shared) {
                        log::info!("client {peer} ended: {e}");
                    }
                    let _ = tx.try_send(Command::Disconnected);
                    shared.client_active.store(false, Ordering::SeqCst);
                }));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(CLIENT_POLL),
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(CLIENT_POLL);
            }
        }
    }
    for c in clients {
        let _ = c.join();
    }
}

fn handshake(stream: TcpStream) -> anyhow::Result<WebSocket<TcpStream>> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT))?;
    stream.set_write_timeout(Some(HANDSHAKE_TIMEOUT))?;
    stream.set_nodelay(true)?;
    tungstenite::accept(stream).map_err(|e| anyhow::anyhow!("handshake failed: {e}"))
}

fn reject(stream: TcpStream) {
    if let Ok(mut ws) = handshake(stream) {
        let _ = ws.send(Message::Text(
            ServerMessage::error("another operator is connected").to_json(),
        ));
        let _ = ws.close(None);
        let _ = ws.flush();
    }
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io)
        if matches!(io.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut))
}

fn client_session(
    stream: TcpStream,
    tx: &SyncSender<Command>,
    shared: &Shared,
) -> anyhow::Result<()> {
    let mut ws = handshake(stream)?;
    ws.get_ref().set_read_timeout(Some(CLIENT_POLL))?;
    let mut sent = 0u64;
    while !shared.stop.load(Ordering::SeqCst) {
        match ws.read() {
            Ok(Message::Text(text)) => match ClientMessage::parse(&text) {
                Ok(msg) => {
                    let cmd = match msg {
                        ClientMessage::Jog { twist, seq } => Command::Jog {
                            twist: Vector6::from(twist),
                            seq,
                            at: Instant::now(),
                        },
                        ClientMessage::Reset => Command::Reset,
                        ClientMessage::SetFilter { on } => Command::SetFilter(on),
                    };
                    match tx.try_send(cmd) {
                        Ok(()) => {}
                        Err(TrySendError::Full(_)) => {
                            ws.send(Message::Text(
                                ServerMessage::error("command queue full").to_json(),
                            ))?;
                        }
                        Err(TrySendError::Disconnected(_)) => return Ok(()),
                    }
                }
                Err(e) => ws.send(Message::Text(ServerMessage::error(e).to_json()))?,
            },
            Ok(Message::Binary(_)) => ws.send(Message::Text(
                ServerMessage::error("binary frames are not supported").to_json(),
            ))?,
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(e) if is_timeout(&e) => {}
            Err(e) => return Err(e.into()),
        }
        let latest = shared.latest.lock().unwrap().clone();
        if let Some((n, text)) = latest {
            if n > sent {
                sent = n;
                ws.send(Message::Text(text))?;
            }
        }
    }
    let _ = ws.close(None);
    let _ = ws.flush();
    Ok(())
}
