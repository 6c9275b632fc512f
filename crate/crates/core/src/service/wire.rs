//! Line-delimited JSON wire messages.
//!
//! Every line is one object:
//! `{"session_id": "...", "t_ms": 1234, "type": "telemetry", "payload": {...}}`.

use serde::{Deserialize, Serialize};

use crate::alerts::{Alert, OperatingMode, PresentationConfig, ScenarioTag};
use crate::telemetry::{BufferReport, FullScale, RawFrame};

pub const PROTOCOL_VERSION: u32 = 1;

/// Message types a peer may send, in wire spelling.
pub const MESSAGE_TYPES: [&str; 8] =
    ["hello", "telemetry", "scenario", "privacy", "mode", "alert", "buffer_report", "error"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub session_id: String,
    pub t_ms: u64,
    #[serde(flatten)]
    pub body: WireBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum WireBody {
    Hello(Hello),
    Telemetry(RawFrame),
    Scenario(ScenarioChange),
    Privacy(PrivacyChange),
    Mode(ModeChange),
    Alert(Alert),
    BufferReport(WindowBufferReport),
    Error(WireError),
}

impl WireBody {
    pub fn type_name(&self) -> &'static str {
        match self {
            WireBody::Hello(_) => "hello",
            WireBody::Telemetry(_) => "telemetry",
            WireBody::Scenario(_) => "scenario",
            WireBody::Privacy(_) => "privacy",
            WireBody::Mode(_) => "mode",
            WireBody::Alert(_) => "alert",
            WireBody::BufferReport(_) => "buffer_report",
            WireBody::Error(_) => "error",
        }
    }
}

/// Session negotiation. The client proposes; the server answers with the
/// settings in force and the feature schemas its model accepts.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Hello {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screen_w: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screen_h: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_scale: Option<FullScale>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<OperatingMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub presentation: Option<PresentationConfig>,
    /// Server reply only: schema versions of the loaded model variants.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schemas: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioChange {
    /// `None` leaves the current scenario.
    pub tag: Option<ScenarioTag>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivacyChange {
    pub enabled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeChange {
    pub mode: OperatingMode,
}

/// One channel's verification result for a closed window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowBufferReport {
    pub window_start_ms: u64,
    pub window_end_ms: u64,
    #[serde(flatten)]
    pub report: BufferReport,
    /// Set on the last report of a window the pipeline could not score.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropped: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    HelloRequired,
    DuplicateHello,
    UnsupportedVersion,
    MalformedMessage,
    UnknownType,
    InvalidPayload,
    UnexpectedType,
    SessionMismatch,
    RejectedFrame,
    Config,
    TooManyStrikes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireError {
    pub code: ErrorCode,
    pub message: String,
    /// The server closes the connection after sending a fatal error.
    #[serde(default)]
    pub fatal: bool,
}

impl WireMessage {
    pub fn new(session_id: impl Into<String>, t_ms: u64, body: WireBody) -> Self {
        Self { session_id: session_id.into(), t_ms, body }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("wire message serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn telemetry_shape() {
        let m = WireMessage::new("s1", 50, WireBody::Telemetry(RawFrame::Steering { angle_raw: Some(-120.0) }));
        let line = m.to_line();
        assert_eq!(
            line,
            r#"{"session_id":"s1","t_ms":50,"type":"telemetry","payload":{"channel":"steering","angle_raw":-120.0}}"#
        );
        assert_eq!(serde_json::from_str::<WireMessage>(&line).unwrap(), m);
    }

    #[test]
    fn hello_defaults() {
        let m: WireMessage =
            serde_json::from_str(r#"{"session_id":"a","t_ms":0,"type":"hello","payload":{"version":1}}"#).unwrap();
        assert_eq!(m.body, WireBody::Hello(Hello { version: 1, ..Hello::default() }));
    }

    #[test]
    fn every_type_round_trips() {
        let bodies = vec![
            WireBody::Hello(Hello { version: 1, seed: Some(3), ..Hello::default() }),
            WireBody::Scenario(ScenarioChange { tag: Some(ScenarioTag::Parking) }),
            WireBody::Scenario(ScenarioChange { tag: None }),
            WireBody::Privacy(PrivacyChange { enabled: true }),
            WireBody::Mode(ModeChange { mode: OperatingMode::VisualTest }),
            WireBody::Error(WireError { code: ErrorCode::UnknownType, message: "x".into(), fatal: false }),
        ];
        for b in bodies {
            let m = WireMessage::new("s", 7, b);
            let back: WireMessage = serde_json::from_str(&m.to_line()).unwrap();
            assert_eq!(back, m);
            assert!(MESSAGE_TYPES.contains(&m.body.type_name()));
        }
    }
}
