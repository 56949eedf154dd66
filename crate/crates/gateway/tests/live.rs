use std::time::Duration;

use futures::{SinkExt, StreamExt};
use reembody_core::RouteGraph;
use reembody_gateway::{start, Body, Engine, EngineConfig, ServerConfig, WireMessage};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;

fn engine() -> Engine {
    Engine::with_defaults(RouteGraph::campus_default(), EngineConfig::instant())
}

fn local() -> std::net::SocketAddr {
    "127.0.0.1:0".parse().unwrap()
}

async fn read_until<F: Fn(&WireMessage) -> bool>(lines: &mut tokio::io::Lines<BufReader<tokio::net::tcp::OwnedReadHalf>>, f: F) -> Vec<WireMessage> {
    let mut seen = Vec::new();
    loop {
        let line = tokio::time::timeout(Duration::from_secs(5), lines.next_line())
            .await
            .expect("reply in time")
            .unwrap()
            .expect("connection open");
        let m = WireMessage::decode(&line).unwrap();
        let done = f(&m);
        seen.push(m);
        if done {
            return seen;
        }
    }
}

#[tokio::test]
async fn tcp_round_trip_and_telemetry() {
    let dir = tempfile::tempdir().unwrap();
    let telemetry = dir.path().join("gateway.jsonl");
    let mut config = ServerConfig::new(local());
    config.telemetry_out = Some(telemetry.clone());
    let gw = start(engine(), config).await.unwrap();

    let stream = TcpStream::connect(gw.tcp_addr).await.unwrap();
    let (r, mut w) = stream.into_split();
    let mut lines = BufReader::new(r).lines();
    w.write_all(b"{\"type\":\"hello\",\"session_id\":\"s1\",\"device_id\":\"robot1\",\"seq\":1,\"payload\":{\"kind\":\"stationary\",\"home\":\"booth\"}}\n")
        .await
        .unwrap();
    let got = read_until(&mut lines, |m| matches!(m.body, Body::HelloAck(_))).await;
    assert!(!got.is_empty());
    w.write_all(b"{\"type\":\"ptt_utterance\",\"session_id\":\"s1\",\"device_id\":\"robot1\",\"seq\":2,\"payload\":{\"text\":\"Where is the student cafe?\"}}\n")
        .await
        .unwrap();
    let got = read_until(&mut lines, |m| matches!(m.body, Body::AssistantSay(_))).await;
    let Body::AssistantSay(say) = &got.last().unwrap().body else { unreachable!() };
    assert_eq!(say.text, "Walk to the green triangle.");
    assert_eq!(say.in_reply_to, Some(2));

    w.write_all(b"{\"type\":\"teleport\",\"session_id\":\"s1\",\"device_id\":\"robot1\",\"seq\":3}\n").await.unwrap();
    let got = read_until(&mut lines, |m| matches!(m.body, Body::Error(_))).await;
    let Body::Error(e) = &got.last().unwrap().body else { unreachable!() };
    assert_eq!(e.code.as_str(), "unknown_type");

    gw.shutdown().await.unwrap();
    let log = std::fs::read_to_string(&telemetry).unwrap();
    assert!(log.lines().any(|l| l.contains("\"event\":\"turn\"")), "{log}");
}

#[tokio::test]
async fn websocket_speaks_the_same_protocol() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>device</html>").unwrap();
    let mut config = ServerConfig::new(local());
    config.ws_addr = Some(local());
    config.ui_dir = Some(dir.path().to_path_buf());
    let gw = start(engine(), config).await.unwrap();
    let ws_addr = gw.ws_addr.unwrap();

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{ws_addr}/ws")).await.unwrap();
    ws.send(Message::Text(
        r#"{"type":"hello","session_id":"s1","device_id":"watch1","seq":1,"payload":{"kind":"wearable"}}"#.into(),
    ))
    .await
    .unwrap();
    ws.send(Message::Text(r#"{"type":"ping","session_id":"s1","device_id":"watch1","seq":2}"#.into()))
        .await
        .unwrap();
    let mut kinds = Vec::new();
    while !kinds.contains(&"pong") {
        let msg = tokio::time::timeout(Duration::from_secs(5), ws.next()).await.unwrap().unwrap().unwrap();
        if let Message::Text(t) = msg {
            kinds.push(WireMessage::decode(&t).unwrap().body.type_tag());
        }
    }
    assert_eq!(kinds.first(), Some(&"hello_ack"));

    // Static bundle on the same listener.
    let mut http = TcpStream::connect(ws_addr).await.unwrap();
    http.write_all(b"GET /index.html HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").await.unwrap();
    let mut body = String::new();
    tokio::io::AsyncReadExt::read_to_string(&mut http, &mut body).await.unwrap();
    assert!(body.starts_with("HTTP/1.1 200"), "{body}");
    assert!(body.contains("<html>device</html>"));
    gw.shutdown().await.unwrap();
}

#[tokio::test]
async fn missing_ui_dir_is_rejected() {
    let mut config = ServerConfig::new(local());
    config.ws_addr = Some(local());
    config.ui_dir = Some("/definitely/not/here".into());
    assert!(start(engine(), config).await.is_err());
}
