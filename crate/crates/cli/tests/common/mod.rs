#![allow(dead_code)]

use std::net::{SocketAddr, TcpStream};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use sqcbf::sim::Scenario;
use sqcbf_cli::protocol::{ServerMessage, StateFrame};
use sqcbf_cli::server::{serve, ServerConfig, ServerHandle};
use tungstenite::{Message, WebSocket};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
}

pub fn start(name: &str) -> ServerHandle {
    let sc = Scenario::load(scenario_path(name)).unwrap();
    serve(
        &sc,
        &ServerConfig {
            bind: "127.0.0.1:0".into(),
            ..ServerConfig::default()
        },
    )
    .unwrap()
}

pub struct Client {
    pub ws: WebSocket<TcpStream>,
}

impl Client {
    pub fn connect(addr: SocketAddr) -> Self {
        let stream = TcpStream::connect(addr).unwrap();
        let (ws, _) = tungstenite::client(format!("ws://{addr}/"), stream).unwrap();
        ws.get_ref()
            .set_read_timeout(Some(Duration::from_millis(2)))
            .unwrap();
        Self { ws }
    }

    pub fn send(&mut self, text: &str) {
        self.ws.send(Message::Text(text.into())).unwrap();
    }

    pub fn jog(&mut self, twist: [f64; 6], seq: i64) {
        self.send(&serde_json::json!({"type": "jog", "twist": twist, "seq": seq}).to_string());
    }

    /// Every message that arrives within `window`.
    pub fn drain(&mut self, window: Duration) -> Vec<ServerMessage> {
        let end = Instant::now() + window;
        let mut out = Vec::new();
        while Instant::now() < end {
            match self.ws.read() {
                Ok(Message::Text(t)) => out.push(serde_json::from_str(&t).unwrap()),
                Ok(_) => {}
                Err(tungstenite::Error::Io(e))
                    if matches!(
                        e.kind(),
                        std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                    ) => {}
                Err(_) => break,
            }
        }
        out
    }

    /// Sends `twist` at 50 Hz for `duration` and collects the state frames.
    pub fn hold_jog(&mut self, twist: [f64; 6], duration: Duration, seq: &mut i64) -> Vec<StateFrame> {
        let end = Instant::now() + duration;
        let mut frames = Vec::new();
        while Instant::now() < end {
            *seq += 1;
            self.jog(twist, *seq);
            frames.extend(states(self.drain(Duration::from_millis(20))));
        }
        frames
    }
}

pub fn states(msgs: Vec<ServerMessage>) -> Vec<StateFrame> {
    msgs.into_iter()
        .filter_map(|m| match m {
            ServerMessage::State(s) => Some(s),
            ServerMessage::Error { .. } => None,
        })
        .collect()
}

pub fn errors(msgs: &[ServerMessage]) -> Vec<String> {
    msgs.iter()
        .filter_map(|m| match m {
            ServerMessage::Error { msg } => Some(msg.clone()),
            ServerMessage::State(_) => None,
        })
        .collect()
}
