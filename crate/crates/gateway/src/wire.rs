//! `reviewer/v1` message schemas.
//!
//! Every message is one JSON object, sent as a WebSocket text frame or as
//! one line of a transcript file:
//!
//! ```text
//! {"v":"reviewer/v1","seq":0,"type":"session_state","payload":{...}}
//! ```
//!
//! `seq` starts at 0 on each connection and increases by one per message.
//! Client commands carry no `seq`; `v` is optional on input but must match
//! when present.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use myoreview::classifier::Decision;
use myoreview::flt::{CursorConfig, FltMetrics, Outcome, TrialStatus};
use myoreview::session::{Phase, Stage};
use myoreview::Movement;

use crate::error::{GatewayError, Result};

pub const PROTOCOL_VERSION: &str = "reviewer/v1";

/// One calibration class as drawn in the Reviewer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterView {
    pub movement: Movement,
    pub id: u8,
    /// Rest-translated centroid.
    pub centroid: [f64; 3],
    pub points: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clusters {
    pub snapshot: usize,
    pub provenance: String,
    pub p: usize,
    pub degenerate: bool,
    pub classes: Vec<ClusterView>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cursor3d {
    pub t_ms: u64,
    pub coords: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionView {
    pub t_ms: u64,
    #[serde(flatten)]
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FltState {
    /// Zero-based trial number within the block.
    pub trial: usize,
    pub trials_total: usize,
    pub prompt: Movement,
    pub target: CursorConfig,
    pub half_width: f64,
    pub cursor: CursorConfig,
    pub rendered_phi: f64,
    pub status: TrialStatus,
    pub dwell_steps: usize,
    pub dwell_required: usize,
    pub elapsed_ms: u64,
    pub time_limit_ms: u32,
    pub outcome: Option<Outcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Collecting {
    pub movement: Movement,
    pub collected: usize,
    pub required: usize,
    pub position: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub phase: Option<Phase>,
    pub session_index: Option<u32>,
    pub stage: Option<Stage>,
    pub movements: Vec<Movement>,
    pub collected: Vec<Movement>,
    pub clock_ms: u64,
    pub t_d_ms: u64,
    pub t_max_ms: u64,
    pub nr: usize,
    pub ntt: Option<f64>,
    pub snapshots: usize,
    pub collecting: Option<Collecting>,
    pub trials_done: usize,
    pub trials_total: usize,
    pub metrics: Option<FltMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub movement: Option<String>,
}

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ServerMessage {
    Clusters(Clusters),
    Cursor3d(Cursor3d),
    Decision(DecisionView),
    FltState(FltState),
    SessionState(SessionState),
    Error(ErrorPayload),
}

impl ServerMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            ServerMessage::Clusters(_) => "clusters",
            ServerMessage::Cursor3d(_) => "cursor3d",
            ServerMessage::Decision(_) => "decision",
            ServerMessage::FltState(_) => "flt_state",
            ServerMessage::SessionState(_) => "session_state",
            ServerMessage::Error(_) => "error",
        }
    }

    pub fn error(message: impl Into<String>, command: Option<&str>, movement: Option<String>) -> Self {
        ServerMessage::Error(ErrorPayload {
            message: message.into(),
            command: command.map(str::to_string),
            movement,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Controller,
    Observer,
}

/// Client to server. Movement names are parsed leniently by the engine, so
/// they travel as strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ClientCommand {
    StartCalibration {
        session: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Collect {
        movement: String,
    },
    Recalibrate {
        movement: String,
    },
    EndExploration {},
    StartTrial {},
    Subscribe {
        role: Role,
    },
}

impl ClientCommand {
    pub fn kind(&self) -> &'static str {
        match self {
            ClientCommand::StartCalibration { .. } => "start_calibration",
            ClientCommand::Collect { .. } => "collect",
            ClientCommand::Recalibrate { .. } => "recalibrate",
            ClientCommand::EndExploration {} => "end_exploration",
            ClientCommand::StartTrial {} => "start_trial",
            ClientCommand::Subscribe { .. } => "subscribe",
        }
    }
}

#[derive(Serialize)]
struct EnvelopeOut<'a> {
    v: &'static str,
    seq: u64,
    #[serde(flatten)]
    message: &'a ServerMessage,
}

#[derive(Deserialize)]
struct EnvelopeIn {
    v: String,
    seq: u64,
    #[serde(flatten)]
    message: ServerMessage,
}

/// Assigns gap-free sequence numbers for one connection or transcript.
#[derive(Debug, Clone, Default)]
pub struct Sequencer {
    next: u64,
}

impl Sequencer {
    pub fn new() -> Self {
        Sequencer::default()
    }

    pub fn encode(&mut self, message: &ServerMessage) -> String {
        let text = serde_json::to_string(&EnvelopeOut {
            v: PROTOCOL_VERSION,
            seq: self.next,
            message,
        })
        .expect("server messages always serialize");
        self.next += 1;
        text
    }

    pub fn next_seq(&self) -> u64 {
        self.next
    }
}

/// Parse a server frame into its sequence number and message.
pub fn decode_server(text: &str) -> Result<(u64, ServerMessage)> {
    let env: EnvelopeIn = serde_json::from_str(text)?;
    if env.v != PROTOCOL_VERSION {
        return Err(GatewayError::Protocol(format!("unsupported version {:?}", env.v)));
    }
    Ok((env.seq, env.message))
}

pub fn encode_command(command: &ClientCommand) -> String {
    let mut value = serde_json::to_value(command).expect("commands always serialize");
    if let Value::Object(map) = &mut value {
        map.insert("v".into(), Value::String(PROTOCOL_VERSION.into()));
    }
    value.to_string()
}

pub fn decode_command(text: &str) -> Result<ClientCommand> {
    let mut value: Value = serde_json::from_str(text)?;
    if let Value::Object(map) = &mut value {
        if let Some(v) = map.remove("v") {
            if v != PROTOCOL_VERSION {
                return Err(GatewayError::Protocol(format!("unsupported version {v}")));
            }
        }
        // Commands without arguments may omit the payload.
        map.entry("payload")
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(serde_json::from_value(value)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_layout() {
        let mut seq = Sequencer::new();
        let msg = ServerMessage::Cursor3d(Cursor3d {
            t_ms: 250,
            coords: [1.0, -0.5, 0.0],
        });
        assert_eq!(
            seq.encode(&msg),
            r#"{"v":"reviewer/v1","seq":0,"type":"cursor3d","payload":{"t_ms":250,"coords":[1.0,-0.5,0.0]}}"#
        );
        let second = seq.encode(&msg);
        assert_eq!(decode_server(&second).unwrap(), (1, msg));
    }

    #[test]
    fn commands_round_trip() {
        let all = [
            ClientCommand::StartCalibration {
                session: 3,
                seed: Some(9),
            },
            ClientCommand::StartCalibration { session: 1, seed: None },
            ClientCommand::Collect {
                movement: "power_grasp".into(),
            },
            ClientCommand::Recalibrate {
                movement: "rest".into(),
            },
            ClientCommand::EndExploration {},
            ClientCommand::StartTrial {},
            ClientCommand::Subscribe { role: Role::Controller },
        ];
        for c in all {
            assert_eq!(decode_command(&encode_command(&c)).unwrap(), c, "{}", c.kind());
        }
    }

    #[test]
    fn bare_commands_and_versions() {
        assert_eq!(
            decode_command(r#"{"type":"start_trial"}"#).unwrap(),
            ClientCommand::StartTrial {}
        );
        assert!(decode_command(r#"{"v":"reviewer/v0","type":"start_trial"}"#).is_err());
        assert!(decode_command(r#"{"type":"launch"}"#).is_err());
        assert!(decode_server(r#"{"v":"x","seq":0,"type":"error","payload":{"message":"m"}}"#).is_err());
    }

    #[test]
    fn decision_payload_is_flat() {
        let msg = ServerMessage::Decision(DecisionView {
            t_ms: 50,
            decision: Decision::rest(),
        });
        let text = Sequencer::new().encode(&msg);
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["payload"]["label"], "rest");
        assert_eq!(v["payload"]["t_ms"], 50);
    }
}
