//! Websocket front end. Network tasks only translate between JSON text
//! frames and the session's queues; the simulation loop runs on its own thread.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use tokio::sync::broadcast;

use crate::protocol::ClientMessage;
use crate::session::{Inbound, Session};
use crate::timing::{run_fixed_rate, LoopReport, SystemClock};

/// Queues shared by every connection.
#[derive(Clone)]
pub struct Hub {
    inbound: mpsc::Sender<Inbound>,
    outbound: broadcast::Sender<Arc<str>>,
}

impl Hub {
    pub fn new(inbound: mpsc::Sender<Inbound>, capacity: usize) -> Self {
        let (outbound, _) = broadcast::channel(capacity.max(16));
        Self { inbound, outbound }
    }

    /// Publishes already-encoded server messages; drops them when nobody listens.
    pub fn publisher(&self) -> impl FnMut(Vec<crate::protocol::ServerMessage>) + Send + 'static {
        let tx = self.outbound.clone();
        move |msgs| {
            for m in msgs {
                let _ = tx.send(Arc::from(m.to_json()));
            }
        }
    }
}

pub fn router(hub: Hub) -> Router {
    Router::new().route("/ws", get(upgrade)).route("/health", get(|| async { "ok" })).with_state(hub)
}

async fn upgrade(ws: WebSocketUpgrade, State(hub): State<Hub>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, hub))
}

async fn connection(socket: WebSocket, hub: Hub) {
    let (mut sink, mut stream) = socket.split();
    let mut outbound = hub.outbound.subscribe();
    let writer = tokio::spawn(async move {
        loop {
            match outbound.recv().await {
                Ok(text) => {
                    if sink.send(Message::Text(text.as_ref().into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => log::warn!("client lagging, {n} messages dropped"),
                Err(broadcast::error::RecvError::Closed) => break,
            }
        }
    });
    while let Some(Ok(frame)) = stream.next().await {
        match frame {
            Message::Text(text) => match ClientMessage::parse(text.as_str()) {
                Ok(msg) => {
                    if hub.inbound.send(Inbound::Client(msg)).is_err() {
                        break;
                    }
                }
                Err(e) => log::warn!("ignoring malformed client message: {e}"),
            },
            Message::Close(_) => break,
            _ => {}
        }
    }
    let _ = hub.inbound.send(Inbound::Disconnected);
    writer.abort();
}

/// Result of a served session.
pub struct ServedSession {
    pub session: Session,
    pub loop_report: LoopReport,
}

/// Serves `session` on `addr` until it finishes, then returns it.
pub async fn serve(session: Session, addr: SocketAddr) -> std::io::Result<ServedSession> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on ws://{}/ws", listener.local_addr()?);
    serve_on(session, listener, Arc::new(AtomicBool::new(false))).await
}

/// Like [`serve`] on an already bound listener; raising `stop` ends the loop early.
pub async fn serve_on(
    mut session: Session,
    listener: tokio::net::TcpListener,
    stop: Arc<AtomicBool>,
) -> std::io::Result<ServedSession> {
    let (in_tx, in_rx) = mpsc::channel();
    let hub = Hub::new(in_tx, 8192);
    let mut publish = hub.publisher();
    let period = Duration::from_secs_f64(session.study().game.control_period);
    let loop_stop = stop.clone();
    let sim = tokio::task::spawn_blocking(move || {
        let report = run_fixed_rate(&mut session, &SystemClock::new(), period, &in_rx, &mut publish, &loop_stop);
        (session, report)
    });
    let server = axum::serve(listener, router(hub));
    let (session, loop_report) = tokio::select! {
        done = sim => done.map_err(std::io::Error::other)?,
        res = server => {
            stop.store(true, Ordering::Relaxed);
            res?;
            return Err(std::io::Error::other("server stopped before the session finished"));
        }
    };
    log::info!(
        "session finished after {} ticks; p99 jitter {} us",
        loop_report.ticks,
        loop_report.jitter.quantile_micros(0.99)
    );
    Ok(ServedSession { session, loop_report })
}
