use std::time::Duration;

use demo_server::protocol::{FrameMessage, ServerMessage, FRAME_MESSAGE_BYTES};
use demo_server::{replay_archive, DemoServer, ServerConfig, SessionSummary};
use demolab::archive::DemoArchive;
use demolab::env::{EnvId, EnvSpec};
use futures::{SinkExt, StreamExt};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::task::JoinHandle;
use tokio::time::timeout;
use tokio_tungstenite::tungstenite::{self, Message};
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Client = WebSocketStream<MaybeTlsStream<tokio::net::TcpStream>>;

async fn start(config: ServerConfig) -> (String, JoinHandle<SessionSummary>) {
    let server = DemoServer::bind("127.0.0.1:0", config).await.unwrap();
    let addr = server.local_addr().unwrap();
    let handle = tokio::spawn(async move { server.run().await.unwrap() });
    (format!("{addr}"), handle)
}

async fn send(ws: &mut Client, json: &str) {
    ws.send(Message::Text(json.into())).await.unwrap();
}

enum Incoming {
    Frame(FrameMessage),
    Status(ServerMessage),
}

async fn next(ws: &mut Client) -> Incoming {
    loop {
        let msg = timeout(Duration::from_secs(10), ws.next()).await.expect("server went quiet").unwrap().unwrap();
        match msg {
            Message::Binary(b) => {
                assert_eq!(b.len(), FRAME_MESSAGE_BYTES);
                return Incoming::Frame(FrameMessage::decode(&b).unwrap());
            }
            Message::Text(t) => return Incoming::Status(serde_json::from_str(&t).unwrap()),
            _ => continue,
        }
    }
}

async fn next_status(ws: &mut Client) -> ServerMessage {
    loop {
        if let Incoming::Status(s) = next(ws).await {
            return s;
        }
    }
}

async fn next_frame(ws: &mut Client) -> FrameMessage {
    loop {
        if let Incoming::Frame(f) = next(ws).await {
            return f;
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn full_session_over_the_socket() {
    let dir = tempfile::tempdir().unwrap();
    let archive = dir.path().join("live.bin");
    let mut config = ServerConfig::new(EnvSpec::new(EnvId::MiniPong), 77, &archive);
    config.tick_hz = 60.0;
    let (addr, server) = start(config).await;

    let (mut ws, _) = connect_async(format!("ws://{addr}/ws")).await.unwrap();
    send(&mut ws, r#"{"type":"hello"}"#).await;
    match next_status(&mut ws).await {
        ServerMessage::Hello { env, actions, .. } => {
            assert_eq!(env, "minipong");
            assert_eq!(actions, ["noop", "up", "down"]);
        }
        other => panic!("expected hello, got {other:?}"),
    }

    // a second player is turned away while this one plays
    match connect_async(format!("ws://{addr}/ws")).await {
        Err(tungstenite::Error::Http(resp)) => assert_eq!(resp.status(), 409),
        other => panic!("second client should be rejected, got {:?}", other.map(|_| ())),
    }

    send(&mut ws, "{not json").await;
    let mut warned = false;
    let mut last_step = 0;
    // the key press lands on the first step after the server reads it
    let mut pressed_after = None;
    while last_step < 40 {
        match next(&mut ws).await {
            Incoming::Frame(f) => {
                assert_eq!(f.step, last_step + 1, "steps are consecutive");
                last_step = f.step;
                if last_step == 10 {
                    send(&mut ws, r#"{"type":"action","action":2}"#).await;
                    pressed_after = Some(10usize);
                }
            }
            Incoming::Status(ServerMessage::Warning { .. }) => warned = true,
            Incoming::Status(other) => panic!("unexpected {other:?}"),
        }
    }
    assert!(warned, "malformed message should draw a warning");

    send(&mut ws, r#"{"type":"stop"}"#).await;
    let steps = match next_status(&mut ws).await {
        ServerMessage::Paused { terminal: false, steps, .. } => steps,
        other => panic!("expected pause, got {other:?}"),
    };
    send(&mut ws, r#"{"type":"save"}"#).await;
    match next_status(&mut ws).await {
        ServerMessage::Saved { states, episodes: 1, .. } => assert_eq!(states, steps),
        other => panic!("expected save confirmation, got {other:?}"),
    }
    ws.close(None).await.unwrap();
    let summary = timeout(Duration::from_secs(10), server).await.unwrap().unwrap();
    assert_eq!((summary.episodes_saved, summary.states_saved), (1, steps));

    let archive = DemoArchive::load(&archive).unwrap();
    let ep = &archive.episodes[0];
    assert_eq!(ep.len(), steps);
    let first_press = ep.actions.iter().position(|&a| a == 2).expect("key press recorded");
    assert!(first_press >= pressed_after.unwrap());
    assert!(ep.actions[..first_press].iter().all(|&a| a == 0));
    assert!(ep.actions[first_press..].iter().all(|&a| a == 2));
    assert!(replay_archive(&archive, 0).unwrap().matches(&archive, 0));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn frames_keep_the_tick_cadence() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ServerConfig::new(EnvSpec::new(EnvId::MiniPong), 1, dir.path().join("x.bin"));
    config.tick_hz = 20.0;
    let (addr, server) = start(config).await;
    let (mut ws, _) = connect_async(format!("ws://{addr}/ws")).await.unwrap();
    send(&mut ws, r#"{"type":"hello"}"#).await;
    for _ in 0..30 {
        next_frame(&mut ws).await;
    }
    ws.close(None).await.unwrap();
    let summary = server.await.unwrap();
    let period = Duration::from_millis(50);
    assert!(summary.frame_intervals.len() >= 29);
    for (i, dt) in summary.frame_intervals.iter().enumerate() {
        let jitter = dt.abs_diff(period);
        assert!(jitter < period / 2, "interval {i}: {dt:?}");
    }
}

#[tokio::test]
async fn serves_static_assets() {
    let dir = tempfile::tempdir().unwrap();
    let config = ServerConfig::new(EnvSpec::new(EnvId::MiniPong), 1, dir.path().join("x.bin"));
    let server = DemoServer::bind("127.0.0.1:0", config).await.unwrap();
    let addr = server.local_addr().unwrap();
    tokio::spawn(server.run());
    let mut tcp = tokio::net::TcpStream::connect(addr).await.unwrap();
    tcp.write_all(b"GET /index.html HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").await.unwrap();
    let mut body = String::new();
    tcp.read_to_string(&mut body).await.unwrap();
    assert!(body.starts_with("HTTP/1.1 200"), "{body}");
    assert!(body.contains("<canvas"));
}
