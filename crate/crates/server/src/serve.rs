//! Live teaching endpoint. The training loop runs on the calling thread and
//! owns the session; a connection thread owns the socket. They exchange
//! frames, replies and console events through queues only.

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use dcoach::dcoach::FeedbackQueue;
use dcoach::session::{Algorithm, HumanTeacher, Session, SessionConfig, SessionSummary, FINAL_CHECKPOINT};
use dcoach::teachers::{FeedbackSignal, KeyMap};
use serde::Serialize;
use tungstenite::{Message, WebSocket};

use crate::error::{Result, ServerError};
use crate::frames::{encode_png_b64, FrameQueue};
use crate::protocol::{ClientMessage, ControlCommand, Frame, ServerMessage};

/// How long a blocking socket read waits before the handler checks its
/// queues again.
const READ_POLL: Duration = Duration::from_millis(2);
const IDLE_POLL: Duration = Duration::from_millis(10);
const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub run_id: String,
    /// Receives the curve, feedback log, checkpoints and summary.
    pub out_dir: PathBuf,
    pub keymap: KeyMap,
    /// Pace of the training loop; `None` steps as fast as possible.
    pub step_interval: Option<Duration>,
    /// Frames buffered for a lagging console before the oldest are dropped.
    pub frame_capacity: usize,
}

impl ServeOptions {
    pub fn new(out_dir: impl Into<PathBuf>, action_dims: usize) -> Self {
        Self {
            run_id: "human".into(),
            out_dir: out_dir.into(),
            keymap: KeyMap::arrows(action_dims),
            step_interval: Some(Duration::from_millis(50)),
            frame_capacity: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServeReport {
    pub summary: SessionSummary,
    /// Feedback discarded because its step was more than one behind.
    pub stale_feedback: u64,
    /// Feedback replaced by a newer message before the loop consumed it.
    pub superseded_feedback: u64,
    pub frames_sent: u64,
    pub frames_dropped: u64,
    pub refused_connections: u64,
    pub malformed_messages: u64,
    /// Whether the console ended the session (as opposed to the budget).
    pub stopped_by_console: bool,
}

#[derive(Debug)]
enum Event {
    Connected,
    Disconnected,
    Control(ControlCommand),
}

#[derive(Debug, Default)]
struct Counters {
    frames_sent: AtomicU64,
    refused: AtomicU64,
    malformed: AtomicU64,
}

struct Shared {
    frames: FrameQueue,
    feedback: Arc<FeedbackQueue>,
    shutdown: AtomicBool,
    counters: Counters,
}

/// A bound endpoint waiting to run a session.
pub struct Server {
    listener: TcpListener,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Runs a human-taught session until the console stops it or the budget
    /// is spent. Training only advances while a console is connected and the
    /// session is not paused; losing the connection pauses it.
    pub fn run(self, config: SessionConfig, options: ServeOptions) -> Result<ServeReport> {
        if config.algorithm == Algorithm::DcoachBasic {
            return Err(ServerError::Config(
                "basic mode needs recorded demonstrations; live sessions run coach-classic or dcoach-enhanced".into(),
            ));
        }
        let dims = config.env.action_dims();
        options.keymap.validate(dims)?;
        let mut session = Session::new(config, &options.run_id, Some(&options.out_dir))?;
        session.pause_clock();

        self.listener.set_nonblocking(true)?;
        let shared = Arc::new(Shared {
            frames: FrameQueue::new(options.frame_capacity.max(1)),
            feedback: Arc::new(FeedbackQueue::new()),
            shutdown: AtomicBool::new(false),
            counters: Counters::default(),
        });
        let (event_tx, event_rx) = mpsc::channel();
        let (reply_tx, reply_rx) = mpsc::channel();
        let handler = {
            let shared = shared.clone();
            let keymap = options.keymap.clone();
            let listener = self.listener;
            thread::Builder::new()
                .name("console-connection".into())
                .spawn(move || connection_loop(listener, &shared, &event_tx, &reply_rx, &keymap, dims))?
        };

        let mut teacher = HumanTeacher::new(shared.feedback.clone());
        let mut lp = TrainingLoop {
            session: &mut session,
            shared: &shared,
            replies: &reply_tx,
            connected: false,
            paused: false,
            stopped: false,
        };
        let outcome = lp.run(&event_rx, &mut teacher, options.step_interval);
        let stopped_by_console = lp.stopped;
        let outcome = outcome.and_then(|()| {
            let summary = session.finish()?;
            let path = options.out_dir.join(FINAL_CHECKPOINT);
            let _ = reply_tx.send(ServerMessage::Ack {
                cmd: ControlCommand::Stop,
                path: Some(path.display().to_string()),
            });
            Ok(summary)
        });
        if let Err(e) = &outcome {
            let _ = reply_tx.send(ServerMessage::Error { message: e.to_string() });
        }
        shared.shutdown.store(true, Ordering::SeqCst);
        handler.join().map_err(|_| ServerError::IoThread)?;

        let summary = outcome?;
        Ok(ServeReport {
            summary,
            stale_feedback: teacher.stale(),
            superseded_feedback: shared.feedback.dropped(),
            frames_sent: shared.counters.frames_sent.load(Ordering::Relaxed),
            frames_dropped: shared.frames.dropped(),
            refused_connections: shared.counters.refused.load(Ordering::Relaxed),
            malformed_messages: shared.counters.malformed.load(Ordering::Relaxed),
            stopped_by_console,
        })
    }
}

/// Binds `addr` and runs the session; see [`Server::run`].
pub fn serve(config: SessionConfig, addr: impl ToSocketAddrs, options: ServeOptions) -> Result<ServeReport> {
    Server::bind(addr)?.run(config, options)
}

struct TrainingLoop<'a> {
    session: &'a mut Session,
    shared: &'a Shared,
    replies: &'a Sender<ServerMessage>,
    connected: bool,
    paused: bool,
    stopped: bool,
}

impl TrainingLoop<'_> {
    fn active(&self) -> bool {
        self.connected && !self.paused
    }

    fn run(&mut self, events: &Receiver<Event>, teacher: &mut HumanTeacher, interval: Option<Duration>) -> Result<()> {
        let mut next_step = Instant::now();
        loop {
            while let Ok(ev) = events.try_recv() {
                self.apply(ev)?;
            }
            if self.stopped || self.session.budget_exhausted() {
                return Ok(());
            }
            let wait = if self.active() {
                next_step.saturating_duration_since(Instant::now())
            } else {
                IDLE_POLL
            };
            if !wait.is_zero() {
                match events.recv_timeout(wait) {
                    Ok(ev) => self.apply(ev)?,
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => return Err(ServerError::IoThread),
                }
                continue;
            }
            self.session.step(teacher)?;
            self.publish()?;
            if let Some(dt) = interval {
                next_step = (next_step + dt).max(Instant::now());
            }
        }
    }

    fn apply(&mut self, event: Event) -> Result<()> {
        match event {
            Event::Connected => {
                self.connected = true;
                self.sync_clock();
                self.publish()?;
            }
            Event::Disconnected => {
                log::info!("console disconnected at step {}; pausing", self.session.t());
                self.connected = false;
                self.paused = true;
                self.sync_clock();
            }
            Event::Control(cmd) => {
                let mut path = None;
                match cmd {
                    ControlCommand::Pause => self.paused = true,
                    ControlCommand::Resume => self.paused = false,
                    ControlCommand::Save => match self.session.save_checkpoint() {
                        Ok(p) => path = Some(p.display().to_string()),
                        Err(e) => {
                            let _ = self.replies.send(ServerMessage::Error {
                                message: format!("save failed: {e}"),
                            });
                            return Ok(());
                        }
                    },
                    ControlCommand::Stop => {
                        self.stopped = true;
                        return Ok(());
                    }
                }
                self.sync_clock();
                let _ = self.replies.send(ServerMessage::Ack { cmd, path });
                if matches!(cmd, ControlCommand::Pause | ControlCommand::Resume) {
                    self.publish()?;
                }
            }
        }
        Ok(())
    }

    fn sync_clock(&mut self) {
        match (self.active(), self.session.clock().is_running()) {
            (true, false) => self.session.resume_clock(),
            (false, true) => self.session.pause_clock(),
            _ => {}
        }
    }

    fn publish(&self) -> Result<()> {
        if !self.connected {
            return Ok(());
        }
        self.shared.frames.push(Frame {
            step: self.session.t(),
            image_png_b64: encode_png_b64(self.session.observation())?,
            action: self.session.last_action().to_vec(),
            episode_return: self.session.episode_return(),
            feedback_rate: self.session.feedback_rate(),
            paused: self.paused,
        });
        Ok(())
    }
}

type Socket = WebSocket<TcpStream>;

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut))
}

fn send(ws: &mut Socket, msg: &ServerMessage) -> bool {
    match ws.send(Message::text(msg.to_json())) {
        Ok(()) => true,
        Err(e) => {
            log::debug!("send failed: {e}");
            false
        }
    }
}

fn handshake(stream: TcpStream) -> Option<Socket> {
    stream.set_nonblocking(false).ok()?;
    stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT)).ok()?;
    match tungstenite::accept(stream) {
        Ok(ws) => Some(ws),
        Err(e) => {
            log::warn!("websocket handshake failed: {e}");
            None
        }
    }
}

fn refuse(stream: TcpStream, shared: &Shared) {
    shared.counters.refused.fetch_add(1, Ordering::Relaxed);
    if let Some(mut ws) = handshake(stream) {
        send(
            &mut ws,
            &ServerMessage::Error {
                message: "another console is already connected to this session".into(),
            },
        );
        let _ = ws.close(None);
        let _ = ws.flush();
    }
}

fn connection_loop(
    listener: TcpListener,
    shared: &Shared,
    events: &Sender<Event>,
    replies: &Receiver<ServerMessage>,
    keymap: &KeyMap,
    dims: usize,
) {
    let mut conn: Option<Socket> = None;
    loop {
        match listener.accept() {
            Ok((stream, peer)) if conn.is_some() => {
                log::info!("refusing second console from {peer}");
                refuse(stream, shared);
            }
            Ok((stream, peer)) => {
                if let Some(ws) = handshake(stream) {
                    if ws.get_ref().set_read_timeout(Some(READ_POLL)).is_ok() {
                        log::info!("console connected from {peer}");
                        shared.frames.clear();
                        conn = Some(ws);
                        let _ = events.send(Event::Connected);
                    }
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {}
            Err(e) => log::warn!("accept failed: {e}"),
        }

        // Read before draining so that replies queued ahead of shutdown are
        // still delivered.
        let shutting_down = shared.shutdown.load(Ordering::SeqCst);
        let Some(ws) = conn.as_mut() else {
            while replies.try_recv().is_ok() {}
            if shutting_down {
                return;
            }
            thread::sleep(IDLE_POLL);
            continue;
        };

        let mut alive = true;
        while let (true, Ok(msg)) = (alive, replies.try_recv()) {
            alive = send(ws, &msg);
        }
        while let (true, Some(frame)) = (alive, shared.frames.pop()) {
            alive = send(ws, &ServerMessage::Frame(frame));
            if alive {
                shared.counters.frames_sent.fetch_add(1, Ordering::Relaxed);
            }
        }
        if shutting_down {
            let _ = ws.close(None);
            let _ = ws.flush();
            return;
        }
        if alive {
            alive = match ws.read() {
                Ok(Message::Text(text)) => {
                    handle_text(ws, text.as_str(), shared, events, keymap, dims);
                    true
                }
                Ok(Message::Binary(_)) => {
                    reject(ws, shared, "binary messages are not part of the protocol".into());
                    true
                }
                Ok(_) => true,
                Err(e) if is_timeout(&e) => true,
                Err(e) => {
                    log::debug!("read ended: {e}");
                    false
                }
            };
        }
        if !alive {
            conn = None;
            let _ = events.send(Event::Disconnected);
        }
    }
}

fn reject(ws: &mut Socket, shared: &Shared, message: String) {
    shared.counters.malformed.fetch_add(1, Ordering::Relaxed);
    send(ws, &ServerMessage::Error { message });
}

fn handle_text(ws: &mut Socket, text: &str, shared: &Shared, events: &Sender<Event>, keymap: &KeyMap, dims: usize) {
    let msg = match ClientMessage::parse(text) {
        Ok(m) => m,
        Err(e) => return reject(ws, shared, format!("malformed message: {e}")),
    };
    match msg {
        ClientMessage::Feedback { step, h } => {
            if h.len() != dims {
                return reject(ws, shared, format!("feedback needs {dims} components, got {}", h.len()));
            }
            match FeedbackSignal::new(h, step) {
                Ok(signal) if signal.is_zero() => {}
                Ok(signal) => shared.feedback.push(signal),
                Err(e) => reject(ws, shared, e.to_string()),
            }
        }
        ClientMessage::Control { cmd } => {
            let _ = events.send(Event::Control(cmd));
        }
        ClientMessage::KeymapQuery => {
            send(
                ws,
                &ServerMessage::Keymap {
                    entries: keymap.entries.clone(),
                },
            );
        }
    }
}
