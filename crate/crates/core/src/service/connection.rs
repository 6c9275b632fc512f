//! Per-connection protocol state machine, independent of any socket.

use std::sync::Arc;

use serde_json::Value;

use super::wire::{
    ErrorCode, Hello, ModeChange, PrivacyChange, ScenarioChange, WindowBufferReport, WireBody, WireError, WireMessage,
    MESSAGE_TYPES, PROTOCOL_VERSION,
};
use crate::model::IrregularityModel;
use crate::pipeline::{PipelineConfig, PipelineError, PipelineEvent, PipelineOutput, SessionPipeline};
use crate::telemetry::{ChannelSpecs, FullScale, DEFAULT_SCREEN_H, DEFAULT_SCREEN_W};

pub const MAX_STRIKES: u32 = 3;

/// Read-only state shared by every connection.
#[derive(Debug, Clone)]
pub struct ServerContext {
    pub model: Option<Arc<IrregularityModel>>,
    pub config: PipelineConfig,
}

impl ServerContext {
    pub fn new(model: Option<Arc<IrregularityModel>>, config: PipelineConfig) -> Self {
        Self { model, config }
    }

    fn schemas(&self) -> Vec<String> {
        self.model
            .iter()
            .flat_map(|m| m.variants())
            .map(|v| format!("{}-v{}", if v.schema.eye_included { "full" } else { "eyeless" }, v.schema.version))
            .collect()
    }
}

/// What to send back for one input line.
#[derive(Debug, Default, PartialEq)]
pub struct Reply {
    pub messages: Vec<WireMessage>,
    /// Close the connection once `messages` are written.
    pub close: bool,
}

enum State {
    AwaitHello,
    Active { session_id: String, pipeline: Box<SessionPipeline> },
    Closed,
}

pub struct Connection {
    ctx: Arc<ServerContext>,
    state: State,
    strikes: u32,
}

impl Connection {
    pub fn new(ctx: Arc<ServerContext>) -> Self {
        Self { ctx, state: State::AwaitHello, strikes: 0 }
    }

    pub fn session_id(&self) -> Option<&str> {
        match &self.state {
            State::Active { session_id, .. } => Some(session_id),
            _ => None,
        }
    }

    pub fn strikes(&self) -> u32 {
        self.strikes
    }

    pub fn is_closed(&self) -> bool {
        matches!(self.state, State::Closed)
    }

    /// Processes one line of input.
    pub fn handle_line(&mut self, line: &str) -> Reply {
        if self.is_closed() {
            return Reply { messages: Vec::new(), close: true };
        }
        let line = line.trim();
        if line.is_empty() {
            return Reply::default();
        }
        let value: Value = match serde_json::from_str(line) {
            Ok(v @ Value::Object(_)) => v,
            Ok(_) => return self.strike(0, ErrorCode::MalformedMessage, "message is not a JSON object".into()),
            Err(e) => return self.strike(0, ErrorCode::MalformedMessage, format!("unparseable line: {e}")),
        };
        let t_ms = value.get("t_ms").and_then(Value::as_u64).unwrap_or(0);
        let session_id = value.get("session_id").and_then(Value::as_str);
        let kind = value.get("type").and_then(Value::as_str);
        let (Some(session_id), Some(kind)) = (session_id, kind) else {
            return self.strike(t_ms, ErrorCode::MalformedMessage, "missing session_id or type".into());
        };
        if value.get("t_ms").and_then(Value::as_u64).is_none() {
            return self.strike(t_ms, ErrorCode::MalformedMessage, "missing or invalid t_ms".into());
        }
        if !MESSAGE_TYPES.contains(&kind) {
            return self.soft_error(t_ms, ErrorCode::UnknownType, format!("unknown message type `{kind}`"));
        }
        let (session_id, kind) = (session_id.to_string(), kind.to_string());
        let msg: WireMessage = match serde_json::from_value(value) {
            Ok(m) => m,
            Err(e) => return self.soft_error(t_ms, ErrorCode::InvalidPayload, format!("bad {kind} payload: {e}")),
        };
        match &self.state {
            State::AwaitHello => match msg.body {
                WireBody::Hello(hello) => self.open(session_id, t_ms, hello),
                _ => self.strike(t_ms, ErrorCode::HelloRequired, "the first message must be hello".into()),
            },
            State::Active { session_id: active, .. } if *active != session_id => {
                let m = format!("connection is bound to session `{active}`");
                self.strike(t_ms, ErrorCode::SessionMismatch, m)
            }
            State::Active { .. } => self.dispatch(msg),
            State::Closed => unreachable!("checked above"),
        }
    }

    /// End of input: closes the remaining windows.
    pub fn finish(&mut self) -> Vec<WireMessage> {
        let out = match &mut self.state {
            State::Active { session_id, pipeline } => render_outputs(session_id, pipeline.finish()),
            _ => Vec::new(),
        };
        self.state = State::Closed;
        out
    }

    fn open(&mut self, session_id: String, t_ms: u64, hello: Hello) -> Reply {
        if hello.version != PROTOCOL_VERSION {
            let m = format!("protocol version {} is not supported (expected {PROTOCOL_VERSION})", hello.version);
            return self.strike(t_ms, ErrorCode::UnsupportedVersion, m);
        }
        let mut cfg = self.ctx.config.clone();
        if let Some(mode) = hello.mode {
            cfg.mode = mode;
        }
        if let Some(seed) = hello.seed {
            cfg.seed = seed;
        }
        if let Some(p) = hello.presentation {
            cfg.presentation = p;
        }
        let fs = hello.full_scale.unwrap_or_default();
        let screen = (hello.screen_w.unwrap_or(DEFAULT_SCREEN_W), hello.screen_h.unwrap_or(DEFAULT_SCREEN_H));
        let built = ChannelSpecs::with_full_scale(fs.steering, fs.pedals)
            .map_err(PipelineError::from)
            .and_then(|specs| SessionPipeline::new(cfg.clone(), self.ctx.model.clone(), specs, screen));
        let pipeline = match built {
            Ok(p) => p,
            Err(e) => return self.strike(t_ms, ErrorCode::Config, e.to_string()),
        };
        log::info!("session `{session_id}` opened in {:?} mode", cfg.mode);
        let reply = Hello {
            version: PROTOCOL_VERSION,
            screen_w: Some(screen.0),
            screen_h: Some(screen.1),
            full_scale: Some(FullScale { steering: fs.steering, pedals: fs.pedals }),
            mode: Some(cfg.mode),
            seed: Some(cfg.seed),
            presentation: Some(cfg.presentation),
            schemas: self.ctx.schemas(),
        };
        let messages = vec![WireMessage::new(session_id.clone(), t_ms, WireBody::Hello(reply))];
        self.state = State::Active { session_id, pipeline: Box::new(pipeline) };
        Reply { messages, close: false }
    }

    fn dispatch(&mut self, msg: WireMessage) -> Reply {
        let t_ms = msg.t_ms;
        let (event, ack) = match msg.body {
            WireBody::Telemetry(frame) => (PipelineEvent::Frame { t_ms, frame }, None),
            WireBody::Scenario(ScenarioChange { tag }) => {
                (PipelineEvent::Scenario { t_ms, tag }, Some(WireBody::Scenario(ScenarioChange { tag })))
            }
            WireBody::Privacy(PrivacyChange { enabled }) => {
                (PipelineEvent::Privacy { t_ms, enabled }, Some(WireBody::Privacy(PrivacyChange { enabled })))
            }
            WireBody::Mode(ModeChange { mode }) => {
                (PipelineEvent::Mode { t_ms, mode }, Some(WireBody::Mode(ModeChange { mode })))
            }
            WireBody::Hello(_) => {
                return self.strike(t_ms, ErrorCode::DuplicateHello, "session already negotiated".into())
            }
            other => {
                let m = format!("`{}` messages are sent by the server only", other.type_name());
                return self.strike(t_ms, ErrorCode::UnexpectedType, m);
            }
        };
        let State::Active { session_id, pipeline } = &mut self.state else {
            unreachable!("dispatch runs on active connections")
        };
        match pipeline.handle(&event) {
            Ok(outputs) => {
                let mut messages = render_outputs(session_id, outputs);
                if let Some(body) = ack {
                    messages.push(WireMessage::new(session_id.clone(), t_ms, body));
                }
                Reply { messages, close: false }
            }
            Err(PipelineError::Telemetry(e)) => self.soft_error(t_ms, ErrorCode::RejectedFrame, e.to_string()),
            Err(e) => self.soft_error(t_ms, ErrorCode::Config, e.to_string()),
        }
    }

    fn reply_session(&self) -> String {
        self.session_id().unwrap_or("").to_string()
    }

    /// Error that leaves the session intact and costs no strike.
    fn soft_error(&self, t_ms: u64, code: ErrorCode, message: String) -> Reply {
        let body = WireBody::Error(WireError { code, message, fatal: false });
        Reply { messages: vec![WireMessage::new(self.reply_session(), t_ms, body)], close: false }
    }

    /// Protocol violation. The third one closes the connection.
    fn strike(&mut self, t_ms: u64, code: ErrorCode, message: String) -> Reply {
        self.strikes += 1;
        let sid = self.reply_session();
        let mut messages =
            vec![WireMessage::new(sid.clone(), t_ms, WireBody::Error(WireError { code, message, fatal: false }))];
        if self.strikes < MAX_STRIKES {
            return Reply { messages, close: false };
        }
        messages.extend(self.finish());
        let m = format!("{MAX_STRIKES} protocol violations; closing");
        messages.push(WireMessage::new(
            sid,
            t_ms,
            WireBody::Error(WireError { code: ErrorCode::TooManyStrikes, message: m, fatal: true }),
        ));
        Reply { messages, close: true }
    }
}

/// Wire messages for pipeline outputs: one buffer report per channel for each
/// closed window, then any alerts.
pub fn render_outputs(session_id: &str, outputs: Vec<PipelineOutput>) -> Vec<WireMessage> {
    let mut out = Vec::new();
    for o in outputs {
        match o {
            PipelineOutput::Window { outcome, .. } => {
                let last = outcome.reports.len().saturating_sub(1);
                for (i, report) in outcome.reports.into_iter().enumerate() {
                    let body = WireBody::BufferReport(WindowBufferReport {
                        window_start_ms: outcome.window_start_ms,
                        window_end_ms: outcome.window_end_ms,
                        report,
                        dropped: if i == last { outcome.dropped.clone() } else { None },
                    });
                    out.push(WireMessage::new(session_id, outcome.window_end_ms, body));
                }
            }
            PipelineOutput::Alert { alert } => {
                out.push(WireMessage::new(session_id, alert.t_ms, WireBody::Alert(alert)));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alerts::OperatingMode;
    use crate::telemetry::RawFrame;

    fn ctx() -> Arc<ServerContext> {
        let cfg = PipelineConfig { mode: OperatingMode::VisualTest, ..PipelineConfig::default() };
        Arc::new(ServerContext::new(None, cfg))
    }

    fn hello(sid: &str) -> String {
        WireMessage::new(sid, 0, WireBody::Hello(Hello { version: PROTOCOL_VERSION, ..Hello::default() })).to_line()
    }

    fn codes(r: &Reply) -> Vec<ErrorCode> {
        r.messages
            .iter()
            .filter_map(|m| match &m.body {
                WireBody::Error(e) => Some(e.code),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn hello_must_come_first() {
        let mut c = Connection::new(ctx());
        let frame = WireMessage::new("a", 0, WireBody::Telemetry(RawFrame::Steering { angle_raw: Some(0.0) }));
        let r = c.handle_line(&frame.to_line());
        assert_eq!(codes(&r), vec![ErrorCode::HelloRequired]);
        assert_eq!(c.strikes(), 1);
        let r = c.handle_line(&hello("a"));
        assert!(matches!(r.messages[0].body, WireBody::Hello(_)));
        assert_eq!(c.session_id(), Some("a"));
    }

    #[test]
    fn unknown_type_keeps_connection() {
        let mut c = Connection::new(ctx());
        c.handle_line(&hello("a"));
        for _ in 0..5 {
            let r = c.handle_line(r#"{"session_id":"a","t_ms":1,"type":"teleport","payload":{}}"#);
            assert_eq!(codes(&r), vec![ErrorCode::UnknownType]);
            assert!(!r.close);
        }
        assert_eq!(c.strikes(), 0);
    }

    #[test]
    fn third_strike_closes() {
        let mut c = Connection::new(ctx());
        c.handle_line(&hello("a"));
        assert!(!c.handle_line("{").close);
        assert!(!c.handle_line("[1]").close);
        let r = c.handle_line(&hello("a"));
        assert!(r.close);
        let last = r.messages.last().unwrap();
        assert!(matches!(&last.body, WireBody::Error(e) if e.fatal && e.code == ErrorCode::TooManyStrikes));
        assert!(c.is_closed());
    }

    #[test]
    fn rejected_frame_is_not_a_strike() {
        let mut c = Connection::new(ctx());
        c.handle_line(&hello("a"));
        let f =
            |t| WireMessage::new("a", t, WireBody::Telemetry(RawFrame::Steering { angle_raw: Some(1.0) })).to_line();
        assert!(codes(&c.handle_line(&f(100))).is_empty());
        assert_eq!(codes(&c.handle_line(&f(50))), vec![ErrorCode::RejectedFrame]);
        assert_eq!(c.strikes(), 0);
    }

    #[test]
    fn privacy_is_acknowledged() {
        let mut c = Connection::new(ctx());
        c.handle_line(&hello("a"));
        let r = c.handle_line(&WireMessage::new("a", 5, WireBody::Privacy(PrivacyChange { enabled: true })).to_line());
        assert_eq!(r.messages, vec![WireMessage::new("a", 5, WireBody::Privacy(PrivacyChange { enabled: true }))]);
    }

    #[test]
    fn experience_without_model_is_refused() {
        let mut c = Connection::new(Arc::new(ServerContext::new(None, PipelineConfig::default())));
        let r = c.handle_line(&hello("a"));
        assert_eq!(codes(&r), vec![ErrorCode::Config]);
        assert!(c.session_id().is_none());
    }
}
