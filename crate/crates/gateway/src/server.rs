//! WebSocket service. One task owns the engine and applies commands in
//! arrival order; each connection gets a snapshot, then every broadcast,
//! with its own gap-free sequence numbers.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, oneshot, Mutex};

use crate::engine::Engine;
use crate::error::{GatewayError, Result};
use crate::replay::Driver;
use crate::wire::{decode_command, ClientCommand, ErrorPayload, Role, Sequencer, ServerMessage, PROTOCOL_VERSION};

pub const BIND_ENV: &str = "MYOREVIEW_BIND";
pub const DEFAULT_BIND: &str = "127.0.0.1:8765";

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Playback speed relative to real time; 0 plays as fast as possible.
    pub speed: f64,
    /// Hold the input until the first client has connected.
    pub wait_for_subscriber: bool,
    pub broadcast_capacity: usize,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            speed: 1.0,
            wait_for_subscriber: false,
            broadcast_capacity: 1 << 16,
        }
    }
}

type Reply = std::result::Result<(), ErrorPayload>;

enum Request {
    Subscribe {
        reply: oneshot::Sender<(Vec<ServerMessage>, broadcast::Receiver<Arc<ServerMessage>>)>,
    },
    Command {
        command: ClientCommand,
        reply: oneshot::Sender<Reply>,
    },
}

#[derive(Clone)]
struct Shared {
    requests: mpsc::Sender<Request>,
    controller: Arc<Mutex<Option<u64>>>,
    next_id: Arc<AtomicU64>,
}

/// Owns the engine: applies requests and feeds the input at the configured
/// pace.
async fn engine_task(
    mut engine: Engine,
    mut driver: Option<Driver>,
    options: ServeOptions,
    mut requests: mpsc::Receiver<Request>,
    events: broadcast::Sender<Arc<ServerMessage>>,
) {
    let step_len = engine
        .config()
        .window
        .sample_counts(engine.config().rate_hz)
        .map(|(_, s)| s)
        .unwrap_or(1);
    let period = if options.speed > 0.0 {
        Duration::from_secs_f64(engine.config().window.step_seconds() / options.speed)
    } else {
        Duration::ZERO
    };
    let mut ticker = tokio::time::interval(period.max(Duration::from_micros(1)));
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Burst);
    let mut started = !options.wait_for_subscriber;
    let send = |msgs: Vec<ServerMessage>| {
        for m in msgs {
            let _ = events.send(Arc::new(m));
        }
    };

    loop {
        let feeding = started && driver.as_ref().is_some_and(|d| !d.is_done());
        tokio::select! {
            biased;
            request = requests.recv() => match request {
                None => return,
                Some(Request::Subscribe { reply }) => {
                    let _ = reply.send((engine.snapshot(), events.subscribe()));
                    started = true;
                }
                Some(Request::Command { command, reply }) => {
                    let result = engine.command(&command).map(&send);
                    let _ = reply.send(result);
                }
            },
            _ = ticker.tick(), if feeding && !period.is_zero() => {
                feed(&mut engine, driver.as_mut().expect("feeding"), step_len, &send);
            }
            _ = tokio::task::yield_now(), if feeding && period.is_zero() => {
                feed(&mut engine, driver.as_mut().expect("feeding"), step_len, &send);
            }
        }
    }
}

fn feed(engine: &mut Engine, driver: &mut Driver, step_len: usize, send: &impl Fn(Vec<ServerMessage>)) {
    for _ in 0..step_len {
        if driver.is_done() {
            break;
        }
        match driver.step(engine) {
            Ok(out) => {
                send(out.broadcast);
                for e in out.errors {
                    send(vec![ServerMessage::Error(e)]);
                }
            }
            Err(e) => {
                send(vec![ServerMessage::error(format!("input stopped: {e}"), None, None)]);
                while !driver.is_done() {
                    let _ = driver.step(engine);
                }
                break;
            }
        }
    }
}

async fn index() -> impl IntoResponse {
    format!("myoreview {PROTOCOL_VERSION}: connect a WebSocket to /ws\n")
}

async fn upgrade(ws: WebSocketUpgrade, State(shared): State<Shared>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, shared))
}

async fn connection(socket: WebSocket, shared: Shared) {
    let id = shared.next_id.fetch_add(1, Ordering::Relaxed);
    let (reply, rx) = oneshot::channel();
    if shared.requests.send(Request::Subscribe { reply }).await.is_err() {
        return;
    }
    let Ok((snapshot, mut events)) = rx.await else { return };
    let (mut sink, mut stream) = socket.split();
    let mut seq = Sequencer::new();
    let send_one = |seq: &mut Sequencer, m: &ServerMessage| Message::Text(seq.encode(m).into());

    for m in &snapshot {
        if sink.send(send_one(&mut seq, m)).await.is_err() {
            return;
        }
    }
    loop {
        tokio::select! {
            event = events.recv() => match event {
                Ok(m) => {
                    if sink.send(send_one(&mut seq, &m)).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    let m = ServerMessage::error(format!("subscriber fell {n} messages behind; reconnect"), None, None);
                    let _ = sink.send(send_one(&mut seq, &m)).await;
                    break;
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
            incoming = stream.next() => match incoming {
                Some(Ok(Message::Text(text))) => {
                    if let Some(err) = handle_text(&shared, id, text.as_str()).await {
                        if sink.send(send_one(&mut seq, &ServerMessage::Error(err))).await.is_err() {
                            break;
                        }
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
    let mut controller = shared.controller.lock().await;
    if *controller == Some(id) {
        *controller = None;
    }
}

/// Returns an error for the sender, if any.
async fn handle_text(shared: &Shared, id: u64, text: &str) -> Option<ErrorPayload> {
    let command = match decode_command(text) {
        Ok(c) => c,
        Err(e) => {
            return Some(ErrorPayload {
                message: format!("malformed command: {e}"),
                command: None,
                movement: None,
            })
        }
    };
    let reject = |message: &str| {
        Some(ErrorPayload {
            message: message.to_string(),
            command: Some(command.kind().to_string()),
            movement: None,
        })
    };
    {
        let mut controller = shared.controller.lock().await;
        match &command {
            ClientCommand::Subscribe { role: Role::Controller } => {
                return match *controller {
                    Some(other) if other != id => reject("another controller is connected"),
                    _ => {
                        *controller = Some(id);
                        None
                    }
                };
            }
            ClientCommand::Subscribe { role: Role::Observer } => {
                if *controller == Some(id) {
                    *controller = None;
                }
                return None;
            }
            _ if *controller != Some(id) => return reject("only the controller may send commands"),
            _ => {}
        }
    }
    let (reply, rx) = oneshot::channel();
    shared.requests.send(Request::Command { command, reply }).await.ok()?;
    rx.await.ok()?.err()
}

/// A running service.
pub struct Server {
    pub addr: SocketAddr,
    handle: tokio::task::JoinHandle<()>,
}

impl Server {
    pub fn abort(&self) {
        self.handle.abort();
    }

    pub async fn wait(self) -> Result<()> {
        self.handle
            .await
            .map_err(|e| GatewayError::Protocol(format!("server task failed: {e}")))
    }
}

pub fn router(engine: Engine, driver: Option<Driver>, options: ServeOptions) -> Router {
    let (requests, rx) = mpsc::channel(256);
    let (events, _) = broadcast::channel(options.broadcast_capacity.max(1));
    tokio::spawn(engine_task(engine, driver, options, rx, events));
    let shared = Shared {
        requests,
        controller: Arc::new(Mutex::new(None)),
        next_id: Arc::new(AtomicU64::new(0)),
    };
    Router::new()
        .route("/", get(index))
        .route("/ws", get(upgrade))
        .with_state(shared)
}

/// Serve on an already bound listener.
pub async fn serve(
    listener: TcpListener,
    engine: Engine,
    driver: Option<Driver>,
    options: ServeOptions,
) -> Result<Server> {
    let addr = listener.local_addr().map_err(|e| GatewayError::io("listener", e))?;
    let app = router(engine, driver, options);
    let handle = tokio::spawn(async move {
        let _ = axum::serve(listener, app).await;
    });
    Ok(Server { addr, handle })
}
