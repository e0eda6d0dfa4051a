use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use colearn_core::partner::PartnerPolicy;
use colearn_core::study::{Condition, Profile, StudyConfig};
use colearn_realtime::server::serve_on;
use colearn_realtime::{Session, SessionConfig, PROTOCOL_VERSION};
use futures_util::{SinkExt, StreamExt};
use tokio_tungstenite::tungstenite::Message;

fn session() -> Session {
    let mut c = StudyConfig::new(Condition::NoTl, PartnerPolicy::KeyboardStream, 1, Profile::Desk);
    c.sac.updates = 10;
    c.sac.batch_size = 16;
    c.sac.hidden = vec![8];
    c.blocks = 1;
    c.games_per_batch = 1;
    let cfg = SessionConfig { session_id: "room".into(), countdown: 0.1, between_games: 0.1, ..SessionConfig::default() };
    Session::new(c, None, cfg).unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn websocket_handshake_keys_and_state() {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let stop = Arc::new(AtomicBool::new(false));
    let server = tokio::spawn(serve_on(session(), listener, stop.clone()));

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap();
    let join = format!(r#"{{"type":"join","session_id":"room","protocol_version":{PROTOCOL_VERSION}}}"#);
    ws.send(Message::Text(join.into())).await.unwrap();
    ws.send(Message::Text(r#"{"type":"ready"}"#.into())).await.unwrap();

    let mut seen_welcome = false;
    let mut seen_start = false;
    let mut pressed = false;
    let mut last_seq = None;
    let mut moved = false;
    let deadline = tokio::time::Instant::now() + Duration::from_secs(20);
    while !moved && tokio::time::Instant::now() < deadline {
        let Some(Ok(Message::Text(text))) = tokio::time::timeout(Duration::from_secs(5), ws.next()).await.unwrap() else {
            continue;
        };
        let v: serde_json::Value = serde_json::from_str(text.as_str()).unwrap();
        let seq = v["seq"].as_u64().unwrap();
        if let Some(prev) = last_seq {
            assert_eq!(seq, prev + 1, "gap in sequence numbers");
        }
        last_seq = Some(seq);
        match v["type"].as_str().unwrap() {
            "welcome" => seen_welcome = true,
            "game_start" => seen_start = true,
            "state" if !pressed => {
                // push toward the centre from whichever edge the game started on
                let key = if v["y"].as_f64().unwrap() < 0.0 { "i" } else { "," };
                ws.send(Message::Text(format!(r#"{{"type":"key","key":"{key}"}}"#).into())).await.unwrap();
                pressed = true;
            }
            "state" => moved = v["vy"].as_f64().unwrap() != 0.0,
            _ => {}
        }
    }
    assert!(seen_welcome && seen_start && moved);
    ws.close(None).await.unwrap();
    stop.store(true, Ordering::Relaxed);
    let served = server.await.unwrap().unwrap();
    assert_eq!(served.session.key_log().len(), 1);
    assert!(served.loop_report.jitter.samples() > 0);
}
