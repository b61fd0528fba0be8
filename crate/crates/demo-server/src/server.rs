//! HTTP front: `/ws` carries the session, everything else is static assets.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use demolab::env::EnvSpec;
use futures::{SinkExt, StreamExt};
use tokio::net::{TcpListener, ToSocketAddrs};
use tokio::sync::mpsc;
use tokio::time::MissedTickBehavior;
use tower_http::services::ServeDir;

use crate::error::{Error, Result};
use crate::protocol::{ClientMessage, ServerMessage};
use crate::session::{warning, Outbox, Session};

pub const DEFAULT_TICK_HZ: f64 = 15.0;
const CHANNEL_BOUND: usize = 64;

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub env: EnvSpec,
    pub seed: u64,
    /// Archive file that saved episodes are appended to.
    pub archive: PathBuf,
    pub assets: PathBuf,
    pub tick_hz: f64,
}

impl ServerConfig {
    pub fn new(env: EnvSpec, seed: u64, archive: impl Into<PathBuf>) -> Self {
        Self {
            env,
            seed,
            archive: archive.into(),
            assets: default_assets_dir(),
            tick_hz: DEFAULT_TICK_HZ,
        }
    }
}

pub fn default_assets_dir() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/assets"))
}

/// What happened during the session, reported once the client has gone.
#[derive(Clone, Debug, Default)]
pub struct SessionSummary {
    pub ticks: u64,
    pub episodes_saved: usize,
    pub states_saved: usize,
    /// Time between consecutive frame sends.
    pub frame_intervals: Vec<Duration>,
}

#[derive(Clone)]
struct AppState {
    config: Arc<ServerConfig>,
    busy: Arc<AtomicBool>,
    finished: mpsc::Sender<SessionSummary>,
}

pub struct DemoServer {
    listener: TcpListener,
    app: Router,
    finished: mpsc::Receiver<SessionSummary>,
}

impl DemoServer {
    pub async fn bind(addr: impl ToSocketAddrs, config: ServerConfig) -> Result<Self> {
        if !(config.tick_hz > 0.0 && config.tick_hz.is_finite()) {
            return Err(Error::Protocol(format!("tick rate {} must be positive", config.tick_hz)));
        }
        let listener = TcpListener::bind(addr).await?;
        let (tx, finished) = mpsc::channel(1);
        let assets = ServeDir::new(&config.assets);
        let state = AppState {
            config: Arc::new(config),
            busy: Arc::new(AtomicBool::new(false)),
            finished: tx,
        };
        let app = Router::new()
            .route("/ws", get(upgrade))
            .fallback_service(assets)
            .with_state(state);
        Ok(Self { listener, app, finished })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Serves until the first session's client disconnects.
    pub async fn run(mut self) -> Result<SessionSummary> {
        let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
        let server = axum::serve(self.listener, self.app).with_graceful_shutdown(async {
            let _ = stop_rx.await;
        });
        let server = tokio::spawn(async move { server.await });
        let summary = self.finished.recv().await.unwrap_or_default();
        let _ = stop_tx.send(());
        server.await.map_err(|e| Error::Protocol(e.to_string()))??;
        Ok(summary)
    }
}

/// Single-session service: a second client is turned away while one plays.
async fn upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    if state.busy.swap(true, Ordering::SeqCst) {
        return (StatusCode::CONFLICT, "a demonstration session is already active").into_response();
    }
    let busy = state.busy.clone();
    ws.on_failed_upgrade(move |e| {
        log::warn!("websocket upgrade failed: {e}");
        busy.store(false, Ordering::SeqCst);
    })
    .on_upgrade(move |socket| async move {
        let summary = serve_session(socket, &state.config).await;
        state.busy.store(false, Ordering::SeqCst);
        let _ = state.finished.send(summary).await;
    })
}

async fn serve_session(socket: WebSocket, config: &ServerConfig) -> SessionSummary {
    let (mut sink, mut stream) = socket.split();
    let (in_tx, mut inbox) = mpsc::channel::<ClientMessage>(CHANNEL_BOUND);
    let (out_tx, mut outbox) = mpsc::channel::<Message>(CHANNEL_BOUND);

    let writer = tokio::spawn(async move {
        while let Some(msg) = outbox.recv().await {
            if sink.send(msg).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });

    let reader_out = out_tx.clone();
    let reader = tokio::spawn(async move {
        while let Some(Ok(msg)) = stream.next().await {
            let parsed = match msg {
                Message::Text(text) => ClientMessage::parse(&text),
                Message::Binary(_) => Err(Error::Protocol("binary messages are not accepted".into())),
                Message::Close(_) => break,
                Message::Ping(_) | Message::Pong(_) => continue,
            };
            match parsed {
                Ok(m) => {
                    if in_tx.send(m).await.is_err() {
                        break;
                    }
                }
                Err(e) => {
                    log::warn!("ignoring client message: {e}");
                    let _ = reader_out.send(Message::Text(warning(e.to_string()).to_json())).await;
                }
            }
        }
    });

    let mut session = Session::new(config.env.clone(), config.seed, config.archive.clone());
    let mut summary = SessionSummary::default();
    let mut clock = tokio::time::interval(Duration::from_secs_f64(1.0 / config.tick_hz));
    clock.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let mut started = false;
    let mut last_frame: Option<Instant> = None;

    loop {
        let out = tokio::select! {
            msg = inbox.recv() => match msg {
                Some(m) => {
                    if m == ClientMessage::Hello && !started {
                        started = true;
                        clock.reset();
                    }
                    let out = session.handle(m.clone(), config.tick_hz);
                    if let Some(ServerMessage::Saved { episodes, total_states, .. }) = out.status.last() {
                        summary.episodes_saved = *episodes;
                        summary.states_saved = *total_states;
                    }
                    out
                }
                None => break,
            },
            _ = clock.tick(), if started => {
                summary.ticks += 1;
                session.tick().unwrap_or_else(|e| Outbox {
                    frame: None,
                    status: vec![warning(format!("step failed: {e}"))],
                })
            }
        };
        if let Some(frame) = out.frame {
            let now = Instant::now();
            if let Some(prev) = last_frame.replace(now) {
                summary.frame_intervals.push(now - prev);
            }
            if out_tx.send(Message::Binary(frame.encode())).await.is_err() {
                break;
            }
        }
        for status in out.status {
            if out_tx.send(Message::Text(status.to_json())).await.is_err() {
                break;
            }
        }
    }
    drop(out_tx);
    reader.abort();
    let _ = writer.await;
    log::info!(
        "session over: {} ticks, {} episodes ({} states) saved to {}",
        summary.ticks,
        summary.episodes_saved,
        summary.states_saved,
        config.archive.display()
    );
    summary
}
