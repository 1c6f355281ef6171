//! Wire protocol: one JSON object per line (TCP) or per text frame
//! (WebSocket). Every object carries the protocol version `v` and a `type`
//! tag; the remaining keys are the payload.
//!
//! ```text
//! {"v":1,"type":"place_goal","goal":[5.0,0.0,0.8]}
//! {"v":1,"type":"error","message":"goal occupied"}
//! ```

use std::collections::BTreeMap;

use aerovac_core::map::VoxelUpdate;
use aerovac_core::session::{MetricsReport, Snapshot};
use aerovac_core::world::Aabb;
use aerovac_core::Vec3;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const PROTOCOL_VERSION: u32 = 1;

/// Every `type` tag the protocol knows.
pub const MESSAGE_TYPES: [&str; 12] = [
    "hello",
    "snapshot",
    "voxel_delta",
    "input_marker",
    "place_goal",
    "clear_goal",
    "set_profile",
    "set_mode_params",
    "pause",
    "resume",
    "error",
    "metrics",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Controller,
    Observer,
}

/// What a client needs to draw the static scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub name: String,
    pub dt: f64,
    pub bounds: Aabb,
    pub obstacles: Vec<Aabb>,
    pub start: Vec3,
    pub voxel_size: f64,
    pub profiles: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    /// Sent bare by a client; the server answers with role and scenario.
    Hello {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        role: Option<Role>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scenario: Option<ScenarioSummary>,
    },
    Snapshot(Box<Snapshot>),
    /// Voxels whose tags changed; `full` marks a complete map on join.
    VoxelDelta { full: bool, voxel_size: f64, voxels: Vec<VoxelUpdate> },
    /// Marker measurement, or release when `p` is null.
    InputMarker { p: Option<Vec3> },
    PlaceGoal { goal: Vec3 },
    ClearGoal,
    SetProfile { name: String },
    /// Live configuration overrides, dotted key to scalar or array.
    SetModeParams { params: BTreeMap<String, Value> },
    Pause,
    Resume,
    Error { message: String },
    Metrics(MetricsReport),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("protocol version mismatch: expected {PROTOCOL_VERSION}, got {0}")]
    Version(u64),
    #[error("unknown message type `{0}`")]
    UnknownType(String),
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "hello",
            Message::Snapshot(_) => "snapshot",
            Message::VoxelDelta { .. } => "voxel_delta",
            Message::InputMarker { .. } => "input_marker",
            Message::PlaceGoal { .. } => "place_goal",
            Message::ClearGoal => "clear_goal",
            Message::SetProfile { .. } => "set_profile",
            Message::SetModeParams { .. } => "set_mode_params",
            Message::Pause => "pause",
            Message::Resume => "resume",
            Message::Error { .. } => "error",
            Message::Metrics(_) => "metrics",
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        Message::Error { message: message.into() }
    }

    /// Whether a client may send this message.
    pub fn is_input(&self) -> bool {
        matches!(
            self,
            Message::InputMarker { .. }
                | Message::PlaceGoal { .. }
                | Message::ClearGoal
                | Message::SetProfile { .. }
                | Message::SetModeParams { .. }
                | Message::Pause
                | Message::Resume
        )
    }
}

/// Serializes to a single line without the trailing newline.
pub fn encode(msg: &Message) -> String {
    let mut value = serde_json::to_value(msg).expect("messages serialize");
    let obj = value.as_object_mut().expect("messages are objects");
    obj.insert("v".into(), PROTOCOL_VERSION.into());
    value.to_string()
}

pub fn decode(line: &str) -> Result<Message, ProtocolError> {
    let mut value: Value = serde_json::from_str(line.trim()).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let obj = value.as_object_mut().ok_or_else(|| ProtocolError::Malformed("expected an object".into()))?;
    match obj.remove("v") {
        Some(Value::Number(n)) if n.as_u64() == Some(u64::from(PROTOCOL_VERSION)) => {}
        Some(Value::Number(n)) => return Err(ProtocolError::Version(n.as_u64().unwrap_or(0))),
        _ => return Err(ProtocolError::Malformed("missing protocol version `v`".into())),
    }
    match obj.get("type").and_then(Value::as_str) {
        Some(t) if MESSAGE_TYPES.contains(&t) => {}
        Some(t) => return Err(ProtocolError::UnknownType(t.to_owned())),
        None => return Err(ProtocolError::Malformed("missing `type`".into())),
    }
    serde_json::from_value(value).map_err(|e| ProtocolError::Malformed(e.to_string()))
}

/// Renders a wire value as the text form expected by config overrides.
pub fn param_text(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}
