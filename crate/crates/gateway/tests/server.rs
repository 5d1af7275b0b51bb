use std::time::Duration;

use futures::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

use myoreview_gateway::record::{record_session, RecordPlan};
use myoreview_gateway::replay::{config_for, replay, Driver};
use myoreview_gateway::server::{serve, ServeOptions};
use myoreview_gateway::wire::{decode_server, encode_command, ClientCommand, Role, ServerMessage};
use myoreview_gateway::{Engine, EngineConfig};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

async fn connect(addr: std::net::SocketAddr) -> Ws {
    connect_async(format!("ws://{addr}/ws")).await.unwrap().0
}

async fn next_text(ws: &mut Ws) -> String {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(20), ws.next())
            .await
            .expect("message within 20 s")
            .expect("stream open")
            .unwrap();
        if let Message::Text(t) = msg {
            return t.to_string();
        }
    }
}

async fn send(ws: &mut Ws, c: &ClientCommand) {
    ws.send(Message::Text(encode_command(c).into())).await.unwrap();
}

/// Read until a message satisfies `pred`, checking sequence continuity.
async fn read_until(ws: &mut Ws, expect_seq: &mut u64, pred: impl Fn(&ServerMessage) -> bool) -> ServerMessage {
    loop {
        let (seq, m) = decode_server(&next_text(ws).await).unwrap();
        assert_eq!(seq, *expect_seq);
        *expect_seq += 1;
        if pred(&m) {
            return m;
        }
    }
}

async fn idle_server() -> std::net::SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let engine = Engine::new(EngineConfig::default()).unwrap();
    serve(listener, engine, None, ServeOptions::default())
        .await
        .unwrap()
        .addr
}

#[tokio::test]
async fn served_replay_matches_offline_transcript() {
    let config = EngineConfig::default();
    let plan = RecordPlan {
        trials: Some(2),
        recalibrations: vec![],
        explore_ms: 1000,
        ..RecordPlan::default()
    };
    let rec = record_session(&plan, &config).unwrap();
    let offline = replay(&rec.recording, &rec.script, &config).unwrap();

    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let engine = Engine::new(config_for(&rec.recording, &config)).unwrap();
    let driver = Driver::new(rec.recording.clone(), rec.script.clone());
    let options = ServeOptions {
        speed: 0.0,
        wait_for_subscriber: true,
        ..ServeOptions::default()
    };
    let server = serve(listener, engine, Some(driver), options).await.unwrap();
    let mut ws = connect(server.addr).await;
    let mut live = Vec::new();
    for _ in 0..offline.transcript.len() {
        live.push(next_text(&mut ws).await);
    }
    assert_eq!(live.join("\n"), offline.transcript.join("\n"));
    assert!(tokio::time::timeout(Duration::from_millis(300), ws.next())
        .await
        .is_err());
    server.abort();
}

#[tokio::test]
async fn one_controller_at_a_time() {
    let addr = idle_server().await;
    let mut a = connect(addr).await;
    let mut b = connect(addr).await;
    let (mut sa, mut sb) = (0, 0);
    read_until(&mut a, &mut sa, |m| matches!(m, ServerMessage::SessionState(_))).await;
    read_until(&mut b, &mut sb, |m| matches!(m, ServerMessage::SessionState(_))).await;

    send(&mut a, &ClientCommand::Subscribe { role: Role::Controller }).await;
    send(&mut a, &ClientCommand::StartCalibration { session: 2, seed: None }).await;
    let state = read_until(&mut a, &mut sa, |m| matches!(m, ServerMessage::SessionState(_))).await;
    let ServerMessage::SessionState(state) = state else {
        unreachable!()
    };
    assert_eq!(state.session_index, Some(2));
    // Observers see the broadcast too.
    read_until(
        &mut b,
        &mut sb,
        |m| matches!(m, ServerMessage::SessionState(s) if s.session_index == Some(2)),
    )
    .await;

    send(&mut b, &ClientCommand::Subscribe { role: Role::Controller }).await;
    let err = read_until(&mut b, &mut sb, |m| matches!(m, ServerMessage::Error(_))).await;
    let ServerMessage::Error(e) = err else { unreachable!() };
    assert!(e.message.contains("controller"), "{}", e.message);

    send(&mut b, &ClientCommand::EndExploration {}).await;
    let err = read_until(&mut b, &mut sb, |m| matches!(m, ServerMessage::Error(_))).await;
    assert!(matches!(err, ServerMessage::Error(e) if e.message.contains("only the controller")));

    // Releasing the controller lets the other client take over.
    drop(a);
    tokio::time::sleep(Duration::from_millis(100)).await;
    send(&mut b, &ClientCommand::Subscribe { role: Role::Controller }).await;
    send(
        &mut b,
        &ClientCommand::Recalibrate {
            movement: "finger_gun".into(),
        },
    )
    .await;
    let err = read_until(&mut b, &mut sb, |m| matches!(m, ServerMessage::Error(_))).await;
    let ServerMessage::Error(e) = err else { unreachable!() };
    assert_eq!(e.movement.as_deref(), Some("finger_gun"));
    assert!(e.message.contains("finger_gun"));
}

#[tokio::test]
async fn malformed_frames_get_an_error() {
    let addr = idle_server().await;
    let mut ws = connect(addr).await;
    let mut seq = 0;
    ws.send(Message::Text("{\"type\":\"warp\"}".into())).await.unwrap();
    let err = read_until(&mut ws, &mut seq, |m| matches!(m, ServerMessage::Error(_))).await;
    assert!(matches!(err, ServerMessage::Error(e) if e.message.starts_with("malformed")));
}

#[tokio::test]
async fn late_subscriber_gets_snapshot_then_deltas() {
    let config = EngineConfig::default();
    let plan = RecordPlan {
        trials: Some(1),
        recalibrations: vec![],
        explore_ms: 20_000,
        ..RecordPlan::default()
    };
    let rec = record_session(&plan, &config).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let engine = Engine::new(config_for(&rec.recording, &config)).unwrap();
    let driver = Driver::new(rec.recording.clone(), rec.script.clone());
    let options = ServeOptions {
        speed: 20.0,
        ..ServeOptions::default()
    };
    let server = serve(listener, engine, Some(driver), options).await.unwrap();

    // Calibration takes 50 s of stream time, 2.5 s at 20x.
    tokio::time::sleep(Duration::from_millis(3500)).await;
    let mut ws = connect(server.addr).await;
    let (seq0, first) = decode_server(&next_text(&mut ws).await).unwrap();
    assert_eq!(seq0, 0);
    assert!(matches!(first, ServerMessage::Clusters(_)), "{first:?}");
    let mut seq = 1;
    let mut clusters = 1;
    let mut cursors = 0;
    while cursors < 10 {
        let (s, m) = decode_server(&next_text(&mut ws).await).unwrap();
        assert_eq!(s, seq);
        seq += 1;
        match m {
            ServerMessage::Clusters(_) => clusters += 1,
            ServerMessage::Cursor3d(_) => cursors += 1,
            _ => {}
        }
    }
    assert_eq!(clusters, 1);
    server.abort();
}
