//! Live session server.
//!
//! One hub thread owns the [`Session`] and steps it. Each connection gets a
//! thread that decodes client lines into hub commands and drains that
//! client's [`Outbox`]. Inputs reach the hub through a bounded queue and are
//! applied together on the next tick; broadcasting only touches outboxes, so
//! a slow client never stalls the loop.

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, BufRead, BufReader, Write};
use std::net::{IpAddr, Ipv4Addr, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, SyncSender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use aerovac_core::dynamics::ProfileRegistry;
use aerovac_core::map::VoxelUpdate;
use aerovac_core::session::{InputEvent, MetricsReport, Session, SessionSetup, Snapshot};
use log::{debug, info, warn};
use tungstenite::Message as WsMessage;

use crate::protocol::{decode, encode, param_text, Message, Role, ScenarioSummary};
use crate::{summarize, GatewayError, Result};

const INPUT_QUEUE: usize = 1024;
const OUTBOX_LIMIT: usize = 256;
const POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    /// One tick per `dt` of wall time.
    RealTime,
    /// Ticks only on [`ServerHandle::step`].
    Manual,
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub bind: IpAddr,
    /// Newline-delimited JSON over TCP; 0 picks a free port.
    pub port: u16,
    pub ws_port: Option<u16>,
    pub clock: Clock,
    pub snapshot_hz: f64,
    /// Ticks between metrics broadcasts.
    pub metrics_every: u64,
    /// Stop after this many ticks.
    pub max_ticks: Option<u64>,
    /// Write the session trace here on shutdown.
    pub record: Option<PathBuf>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 0,
            ws_port: None,
            clock: Clock::RealTime,
            snapshot_hz: 30.0,
            metrics_every: 100,
            max_ticks: None,
            record: None,
        }
    }
}

/// Counters readable while the server runs.
#[derive(Debug, Default)]
pub struct Stats {
    pub ticks: AtomicU64,
    pub inputs_received: AtomicU64,
    pub inputs_applied: AtomicU64,
    /// Largest number of ticks between an input's arrival and the snapshot
    /// that first reflects it.
    pub max_input_latency: AtomicU64,
    pub snapshots_dropped: AtomicU64,
}

impl Stats {
    pub fn get(counter: &AtomicU64) -> u64 {
        counter.load(Ordering::SeqCst)
    }
}

type ClientId = u64;

enum Command {
    Join { id: ClientId, outbox: Arc<Outbox> },
    Hello { id: ClientId },
    Input { id: ClientId, msg: Message },
    Leave { id: ClientId },
    Step { ticks: u64, done: mpsc::Sender<u64> },
    Shutdown,
}

#[derive(Default)]
struct OutboxState {
    queue: VecDeque<String>,
    snapshot: Option<String>,
    resync: bool,
    closed: bool,
}

/// Pending frames for one client. Snapshots are latest-only; when the queue
/// overflows it is cleared and the client gets a full map on the next tick.
pub struct Outbox {
    state: Mutex<OutboxState>,
}

impl Outbox {
    fn new() -> Self {
        Self { state: Mutex::new(OutboxState::default()) }
    }

    fn push(&self, msg: &Message) {
        let mut s = self.state.lock().unwrap();
        if s.queue.len() >= OUTBOX_LIMIT {
            s.queue.retain(|line| !line.contains("\"type\":\"voxel_delta\""));
            s.resync = true;
        }
        s.queue.push_back(encode(msg));
    }

    /// Returns true if an unsent snapshot was replaced.
    fn set_snapshot(&self, line: String) -> bool {
        let mut s = self.state.lock().unwrap();
        s.snapshot.replace(line).is_some()
    }

    fn take_resync(&self) -> bool {
        std::mem::take(&mut self.state.lock().unwrap().resync)
    }

    fn close(&self) {
        self.state.lock().unwrap().closed = true;
    }

    /// Everything ready to send, queued frames first. `None` once closed.
    fn drain(&self) -> Option<Vec<String>> {
        let mut s = self.state.lock().unwrap();
        if s.closed {
            return None;
        }
        let mut out: Vec<String> = s.queue.drain(..).collect();
        out.extend(s.snapshot.take());
        Some(out)
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    ws_addr: Option<SocketAddr>,
    commands: SyncSender<Command>,
    stats: Arc<Stats>,
    stop: Arc<AtomicBool>,
    hub: Option<JoinHandle<Result<MetricsReport>>>,
    acceptors: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn ws_addr(&self) -> Option<SocketAddr> {
        self.ws_addr
    }

    pub fn stats(&self) -> &Stats {
        &self.stats
    }

    /// Advances a [`Clock::Manual`] server; returns the number of ticks done.
    pub fn step(&self, ticks: u64) -> Result<u64> {
        let (done, reply) = mpsc::channel();
        self.commands.send(Command::Step { ticks, done }).map_err(|_| GatewayError::Stopped)?;
        reply.recv().map_err(|_| GatewayError::Stopped)
    }

    pub fn is_finished(&self) -> bool {
        self.hub.as_ref().is_none_or(JoinHandle::is_finished)
    }

    /// Blocks until the session ends on its own (`max_ticks`).
    pub fn wait(mut self) -> Result<MetricsReport> {
        self.finish()
    }

    pub fn shutdown(mut self) -> Result<MetricsReport> {
        let _ = self.commands.send(Command::Shutdown);
        self.finish()
    }

    fn finish(&mut self) -> Result<MetricsReport> {
        let result = match self.hub.take() {
            Some(hub) => hub.join().unwrap_or(Err(GatewayError::Stopped)),
            None => Err(GatewayError::Stopped),
        };
        self.stop.store(true, Ordering::SeqCst);
        for a in self.acceptors.drain(..) {
            let _ = a.join();
        }
        result
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.hub.is_some() {
            let _ = self.commands.send(Command::Shutdown);
            let _ = self.finish();
        }
    }
}

/// Binds the listeners and starts the session loop.
pub fn serve(setup: SessionSetup, opts: ServeOptions) -> Result<ServerHandle> {
    let registry = ProfileRegistry::builtin();
    let summary = summarize(&setup, &registry);
    let mut session = Session::with_registry(setup, registry)?;
    if opts.record.is_some() {
        session.start_recording();
    }

    let bind = |port: u16| TcpListener::bind((opts.bind, port)).map_err(|source| GatewayError::Bind { port, source });
    let tcp = bind(opts.port)?;
    let ws = opts.ws_port.map(bind).transpose()?;
    let addr = tcp.local_addr()?;
    let ws_addr = ws.as_ref().map(TcpListener::local_addr).transpose()?;

    let (tx, rx) = mpsc::sync_channel(INPUT_QUEUE);
    let stats = Arc::new(Stats::default());
    let stop = Arc::new(AtomicBool::new(false));
    let ids = Arc::new(AtomicU64::new(1));

    let mut acceptors = vec![accept_loop(tcp, Transport::Lines, tx.clone(), stop.clone(), ids.clone())?];
    if let Some(ws) = ws {
        acceptors.push(accept_loop(ws, Transport::WebSocket, tx.clone(), stop.clone(), ids)?);
    }
    info!("serving {} on {addr}{}", summary.name, ws_addr.map(|a| format!(", websocket on {a}")).unwrap_or_default());

    let hub = Hub::new(session, summary, opts, stats.clone());
    let hub = thread::Builder::new().name("session".into()).spawn(move || hub.run(rx))?;
    Ok(ServerHandle { addr, ws_addr, commands: tx, stats, stop, hub: Some(hub), acceptors })
}

struct Client {
    outbox: Arc<Outbox>,
    role: Option<Role>,
}

struct Hub {
    session: Session,
    summary: ScenarioSummary,
    opts: ServeOptions,
    stats: Arc<Stats>,
    clients: BTreeMap<ClientId, Client>,
    controller: Option<ClientId>,
    /// Controller inputs and the session tick at which each arrived.
    pending: Vec<(InputEvent, u64)>,
    paused: bool,
    snapshot_period: u64,
    last: Option<Snapshot>,
}

impl Hub {
    fn new(session: Session, summary: ScenarioSummary, opts: ServeOptions, stats: Arc<Stats>) -> Self {
        let per_tick = opts.snapshot_hz * session.config().dt;
        let snapshot_period = if per_tick > 0.0 { (1.0 / per_tick).round().max(1.0) as u64 } else { u64::MAX };
        Self {
            session,
            summary,
            opts,
            stats,
            clients: BTreeMap::new(),
            controller: None,
            pending: Vec::new(),
            paused: false,
            snapshot_period,
            last: None,
        }
    }

    fn run(mut self, rx: Receiver<Command>) -> Result<MetricsReport> {
        let dt = Duration::from_secs_f64(self.session.config().dt);
        let mut deadline = Instant::now() + dt;
        let result = 'run: loop {
            match self.opts.clock {
                Clock::RealTime => {
                    loop {
                        let wait = deadline.saturating_duration_since(Instant::now());
                        match rx.recv_timeout(wait) {
                            Ok(Command::Shutdown) => break 'run Ok(()),
                            Ok(cmd) => self.handle(cmd),
                            Err(RecvTimeoutError::Timeout) => break,
                            Err(RecvTimeoutError::Disconnected) => break 'run Ok(()),
                        }
                    }
                    deadline += dt;
                    // Fall behind gracefully instead of bursting.
                    if deadline < Instant::now() {
                        deadline = Instant::now() + dt;
                    }
                    if !self.paused {
                        if let Err(e) = self.tick() {
                            break 'run Err(e);
                        }
                    }
                }
                Clock::Manual => match rx.recv() {
                    Ok(Command::Shutdown) | Err(_) => break 'run Ok(()),
                    Ok(Command::Step { ticks, done }) => {
                        let mut n = 0;
                        while n < ticks && !self.at_end() {
                            if let Err(e) = self.tick() {
                                break 'run Err(e);
                            }
                            n += 1;
                        }
                        let _ = done.send(n);
                    }
                    Ok(cmd) => self.handle(cmd),
                },
            }
            if self.at_end() {
                break Ok(());
            }
        };
        let report = self.session.report();
        for client in self.clients.values() {
            client.outbox.push(&Message::Metrics(report.clone()));
        }
        // Let writers flush the final metrics before closing.
        thread::sleep(Duration::from_millis(20));
        for client in self.clients.values() {
            client.outbox.close();
        }
        if let Some(path) = &self.opts.record {
            if let Some(trace) = self.session.take_trace() {
                trace.save(path).map_err(|source| GatewayError::File { path: path.clone(), source })?;
                info!("trace of {} ticks written to {}", trace.ticks(), path.display());
            }
        }
        result.map(|()| report)
    }

    fn at_end(&self) -> bool {
        self.opts.max_ticks.is_some_and(|m| self.session.tick() >= m)
    }

    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Join { id, outbox } => {
                self.clients.insert(id, Client { outbox, role: None });
            }
            Command::Hello { id } => self.hello(id),
            Command::Input { id, msg } => self.input(id, msg),
            Command::Leave { id } => {
                if let Some(c) = self.clients.remove(&id) {
                    c.outbox.close();
                }
                if self.controller == Some(id) {
                    info!("controller {id} left");
                    self.controller = None;
                }
            }
            Command::Step { done, .. } => {
                let _ = done.send(0);
            }
            Command::Shutdown => {}
        }
    }

    fn hello(&mut self, id: ClientId) {
        let Some(client) = self.clients.get_mut(&id) else { return };
        if client.role.is_some() {
            client.outbox.push(&Message::error("already joined"));
            return;
        }
        let role = if self.controller.is_none() {
            self.controller = Some(id);
            Role::Controller
        } else {
            Role::Observer
        };
        client.role = Some(role);
        info!("client {id} joined as {role:?}");
        client.outbox.push(&Message::Hello { role: Some(role), scenario: Some(self.summary.clone()) });
        client.outbox.push(&full_map(&self.session));
        if let Some(s) = &self.last {
            client.outbox.set_snapshot(encode(&snapshot_message(s)));
        }
    }

    fn input(&mut self, id: ClientId, msg: Message) {
        let Some(client) = self.clients.get(&id) else { return };
        match client.role {
            None => return client.outbox.push(&Message::error("send hello first")),
            Some(Role::Observer) => {
                return client.outbox.push(&Message::error("observer clients cannot send inputs"))
            }
            Some(Role::Controller) => {}
        }
        let tick = self.session.tick();
        let mut queue = |event| {
            self.stats.inputs_received.fetch_add(1, Ordering::SeqCst);
            self.pending.push((event, tick));
        };
        match msg {
            Message::InputMarker { p: Some(p) } => queue(InputEvent::Marker { p }),
            Message::InputMarker { p: None } => queue(InputEvent::MarkerRelease),
            Message::PlaceGoal { goal } => queue(InputEvent::PlaceGoal { goal }),
            Message::ClearGoal => queue(InputEvent::ClearGoal),
            Message::SetProfile { name } => queue(InputEvent::SetProfile { name }),
            Message::SetModeParams { params } => {
                for (key, value) in params {
                    queue(InputEvent::SetParam { key, value: param_text(&value) });
                }
            }
            Message::Pause => self.paused = true,
            Message::Resume => self.paused = false,
            other => client.outbox.push(&Message::error(format!("`{}` is not accepted from clients", other.kind()))),
        }
    }

    fn tick(&mut self) -> Result<()> {
        let (events, arrived): (Vec<InputEvent>, Vec<u64>) = std::mem::take(&mut self.pending).into_iter().unzip();
        let snapshot = self.session.step(&events)?;
        self.stats.ticks.store(self.session.tick(), Ordering::SeqCst);
        if !events.is_empty() {
            self.stats.inputs_applied.fetch_add(events.len() as u64, Ordering::SeqCst);
            let latency = arrived.iter().map(|&t| snapshot.tick + 1 - t).max().unwrap_or(0);
            self.stats.max_input_latency.fetch_max(latency, Ordering::SeqCst);
            debug!("tick {}: applied {} inputs", snapshot.tick, events.len());
        }

        if let Some(controller) = self.controller.and_then(|id| self.clients.get(&id)) {
            for r in &snapshot.rejected {
                controller.outbox.push(&Message::error(r.reason.clone()));
            }
        }

        let joined = || self.clients.values().filter(|c| c.role.is_some());
        if !snapshot.voxel_delta.is_empty() {
            let delta = Message::VoxelDelta {
                full: false,
                voxel_size: self.session.config().voxel_size,
                voxels: snapshot.voxel_delta.clone(),
            };
            joined().for_each(|c| c.outbox.push(&delta));
        }
        for c in joined() {
            if c.outbox.take_resync() {
                warn!("client fell behind, resending the full map");
                c.outbox.push(&full_map(&self.session));
            }
        }
        if !events.is_empty() || snapshot.tick % self.snapshot_period == 0 {
            let line = encode(&snapshot_message(&snapshot));
            for c in joined() {
                if c.outbox.set_snapshot(line.clone()) {
                    self.stats.snapshots_dropped.fetch_add(1, Ordering::SeqCst);
                }
            }
        }
        if self.opts.metrics_every > 0 && self.session.tick().is_multiple_of(self.opts.metrics_every) {
            let metrics = Message::Metrics(self.session.report());
            joined().for_each(|c| c.outbox.push(&metrics));
        }
        self.last = Some(snapshot);
        Ok(())
    }
}

/// Snapshots travel without their voxel delta, which is sent separately so
/// that dropping a stale snapshot never loses map updates.
fn snapshot_message(s: &Snapshot) -> Message {
    let mut s = s.clone();
    s.voxel_delta.clear();
    Message::Snapshot(Box::new(s))
}

fn full_map(session: &Session) -> Message {
    let map = session.map();
    Message::VoxelDelta {
        full: true,
        voxel_size: map.voxel_size(),
        voxels: map.iter().map(|(key, sources)| VoxelUpdate { key, sources, fresh: true }).collect(),
    }
}

#[derive(Debug, Clone, Copy)]
enum Transport {
    Lines,
    WebSocket,
}

fn accept_loop(
    listener: TcpListener,
    transport: Transport,
    hub: SyncSender<Command>,
    stop: Arc<AtomicBool>,
    ids: Arc<AtomicU64>,
) -> io::Result<JoinHandle<()>> {
    listener.set_nonblocking(true)?;
    thread::Builder::new().name(format!("accept-{transport:?}")).spawn(move || {
        while !stop.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, peer)) => {
                    let id = ids.fetch_add(1, Ordering::SeqCst);
                    debug!("connection {id} from {peer}");
                    let hub = hub.clone();
                    let spawned = thread::Builder::new()
                        .name(format!("client-{id}"))
                        .spawn(move || serve_client(id, stream, transport, hub));
                    if let Err(e) = spawned {
                        warn!("cannot start client thread: {e}");
                    }
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
                Err(e) => {
                    warn!("accept failed: {e}");
                    thread::sleep(POLL);
                }
            }
        }
    })
}

/// A full-duplex text channel polled with short read timeouts.
trait Channel {
    /// `Ok(None)` when nothing arrived within the poll interval.
    fn recv(&mut self) -> io::Result<Option<String>>;
    fn send(&mut self, text: &str) -> io::Result<()>;
}

struct LineChannel {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    buf: Vec<u8>,
}

impl Channel for LineChannel {
    fn recv(&mut self) -> io::Result<Option<String>> {
        match self.reader.read_until(b'\n', &mut self.buf) {
            Ok(0) => Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(_) if self.buf.ends_with(b"\n") => {
                let line = String::from_utf8_lossy(&self.buf).into_owned();
                self.buf.clear();
                Ok(Some(line))
            }
            // EOF in the middle of a line.
            Ok(_) => Err(io::ErrorKind::UnexpectedEof.into()),
            Err(e) if is_timeout(&e) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn send(&mut self, text: &str) -> io::Result<()> {
        self.writer.write_all(text.as_bytes())?;
        self.writer.write_all(b"\n")
    }
}

struct WsChannel(tungstenite::WebSocket<TcpStream>);

impl Channel for WsChannel {
    fn recv(&mut self) -> io::Result<Option<String>> {
        match self.0.read() {
            Ok(WsMessage::Text(t)) => Ok(Some(t.to_string())),
            Ok(WsMessage::Binary(b)) => Ok(Some(String::from_utf8_lossy(&b).into_owned())),
            Ok(WsMessage::Close(_)) => Err(io::ErrorKind::ConnectionAborted.into()),
            Ok(_) => Ok(None),
            Err(tungstenite::Error::Io(e)) if is_timeout(&e) => Ok(None),
            Err(e) => Err(io::Error::other(e)),
        }
    }

    fn send(&mut self, text: &str) -> io::Result<()> {
        self.0.send(WsMessage::text(text)).map_err(io::Error::other)
    }
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut)
}

fn open_channel(stream: TcpStream, transport: Transport) -> io::Result<Box<dyn Channel>> {
    Ok(match transport {
        Transport::Lines => {
            stream.set_read_timeout(Some(POLL))?;
            let writer = stream.try_clone()?;
            Box::new(LineChannel { reader: BufReader::new(stream), writer, buf: Vec::new() })
        }
        Transport::WebSocket => {
            let ws = tungstenite::accept(stream).map_err(io::Error::other)?;
            ws.get_ref().set_read_timeout(Some(POLL))?;
            Box::new(WsChannel(ws))
        }
    })
}

fn serve_client(id: ClientId, stream: TcpStream, transport: Transport, hub: SyncSender<Command>) {
    let _ = stream.set_nodelay(true);
    let mut channel = match open_channel(stream, transport) {
        Ok(c) => c,
        Err(e) => return debug!("connection {id} failed to open: {e}"),
    };
    let outbox = Arc::new(Outbox::new());
    if hub.send(Command::Join { id, outbox: outbox.clone() }).is_err() {
        return;
    }
    let outcome = client_loop(id, channel.as_mut(), &outbox, &hub);
    debug!("connection {id} closed: {outcome:?}");
    let _ = hub.send(Command::Leave { id });
}

fn client_loop(id: ClientId, channel: &mut dyn Channel, outbox: &Outbox, hub: &SyncSender<Command>) -> io::Result<()> {
    loop {
        while let Some(line) = channel.recv()? {
            if line.trim().is_empty() {
                continue;
            }
            let cmd = match decode(&line) {
                Ok(Message::Hello { .. }) => Command::Hello { id },
                Ok(msg) if msg.is_input() => Command::Input { id, msg },
                Ok(msg) => {
                    channel.send(&encode(&Message::error(format!("`{}` is not accepted from clients", msg.kind()))))?;
                    continue;
                }
                Err(e) => {
                    channel.send(&encode(&Message::error(e.to_string())))?;
                    continue;
                }
            };
            if hub.send(cmd).is_err() {
                return Ok(());
            }
        }
        match outbox.drain() {
            Some(lines) => {
                for line in lines {
                    channel.send(&line)?;
                }
            }
            None => return Ok(()),
        }
    }
}
