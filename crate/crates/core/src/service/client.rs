//! Scripted client: streams a recorded session to a server and collects
//! everything the server sends back.

use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::thread;

use super::wire::{Hello, ModeChange, PrivacyChange, ScenarioChange, WireBody, WireMessage, PROTOCOL_VERSION};
use crate::alerts::Alert;
use crate::pipeline::{session_events, PipelineEvent, PrivacyToggle};
use crate::telemetry::SessionRecord;

pub fn event_message(session_id: &str, event: &PipelineEvent) -> WireMessage {
    let body = match *event {
        PipelineEvent::Frame { frame, .. } => WireBody::Telemetry(frame),
        PipelineEvent::Scenario { tag, .. } => WireBody::Scenario(ScenarioChange { tag }),
        PipelineEvent::Privacy { enabled, .. } => WireBody::Privacy(PrivacyChange { enabled }),
        PipelineEvent::Mode { mode, .. } => WireBody::Mode(ModeChange { mode }),
    };
    WireMessage::new(session_id, event.t_ms(), body)
}

/// Hello describing a recorded session's screen and device scales.
pub fn session_hello(record: &SessionRecord) -> Hello {
    Hello {
        version: PROTOCOL_VERSION,
        screen_w: Some(record.meta.screen_w),
        screen_h: Some(record.meta.screen_h),
        full_scale: Some(record.meta.full_scale),
        ..Hello::default()
    }
}

/// Everything a client sends for a recorded session, hello first.
pub fn session_script(record: &SessionRecord, privacy: &[PrivacyToggle], hello: Hello) -> Vec<WireMessage> {
    let sid = record.meta.session_id.as_str();
    std::iter::once(WireMessage::new(sid, 0, WireBody::Hello(hello)))
        .chain(session_events(record, privacy).iter().map(|e| event_message(sid, e)))
        .collect()
}

/// Reads wire messages until the server closes the connection.
pub fn read_messages(reader: impl io::Read) -> io::Result<Vec<WireMessage>> {
    let mut out = Vec::new();
    for line in BufReader::new(reader).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?);
    }
    Ok(out)
}

/// Sends `script`, half-closes, and returns every message received.
pub fn run_script(addr: impl ToSocketAddrs, script: &[WireMessage]) -> io::Result<Vec<WireMessage>> {
    let stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    let reader = stream.try_clone()?;
    let collector = thread::spawn(move || read_messages(reader));
    let mut w = BufWriter::new(&stream);
    for m in script {
        w.write_all(m.to_line().as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    drop(w);
    stream.shutdown(Shutdown::Write)?;
    collector.join().map_err(|_| io::Error::other("reader thread panicked"))?
}

pub fn alerts_in(messages: &[WireMessage]) -> Vec<Alert> {
    messages
        .iter()
        .filter_map(|m| match &m.body {
            WireBody::Alert(a) => Some(a.clone()),
            _ => None,
        })
        .collect()
}
