//! Recorded-session replay with wall-clock pacing.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use super::ServiceError;
use crate::alerts::Alert;
use crate::model::IrregularityModel;
use crate::pipeline::{session_events, PipelineConfig, PipelineError, PipelineOutput, PrivacyToggle, SessionPipeline};
use crate::telemetry::SessionRecord;

/// Paces replay against the wall clock. Pacing never changes decisions:
/// windows close on the recorded timestamps.
#[derive(Debug)]
pub struct ReplayClock {
    speed_factor: f64,
    paused: AtomicBool,
}

impl ReplayClock {
    /// `speed_factor` must be positive; infinity disables pacing.
    pub fn new(speed_factor: f64) -> Result<Self, ServiceError> {
        if speed_factor.is_nan() || speed_factor <= 0.0 {
            return Err(ServiceError::InvalidArgument(format!("speed factor must be > 0, got {speed_factor}")));
        }
        Ok(Self { speed_factor, paused: AtomicBool::new(false) })
    }

    pub fn unpaced() -> Self {
        Self { speed_factor: f64::INFINITY, paused: AtomicBool::new(false) }
    }

    pub fn speed_factor(&self) -> f64 {
        self.speed_factor
    }

    pub fn pause(&self) {
        self.paused.store(true, Ordering::SeqCst);
    }

    pub fn resume(&self) {
        self.paused.store(false, Ordering::SeqCst);
    }

    pub fn is_paused(&self) -> bool {
        self.paused.load(Ordering::SeqCst)
    }

    /// Wall-clock spacing for a recorded gap.
    pub fn spacing(&self, recorded_ms: u64) -> Duration {
        if self.speed_factor.is_infinite() {
            return Duration::ZERO;
        }
        Duration::from_secs_f64(recorded_ms as f64 / 1000.0 / self.speed_factor)
    }
}

/// Sleeps so that event time `t_ms` is emitted at `origin + spacing(t_ms -
/// t0)`. Time spent paused pushes the origin forward.
struct Pacer<'a> {
    clock: &'a ReplayClock,
    origin: Instant,
    t0: Option<u64>,
}

impl Pacer<'_> {
    fn wait_for(&mut self, t_ms: u64) {
        while self.clock.is_paused() {
            let start = Instant::now();
            thread::sleep(Duration::from_millis(5));
            self.origin += start.elapsed();
        }
        let t0 = *self.t0.get_or_insert(t_ms);
        let target = self.origin + self.clock.spacing(t_ms.saturating_sub(t0));
        let now = Instant::now();
        if target > now {
            thread::sleep(target - now);
        }
    }
}

/// Replays a session through a fresh pipeline, handing every output to
/// `sink` as it is produced. Returns all alerts in order.
pub fn replay_session(
    record: &SessionRecord,
    model: Option<Arc<IrregularityModel>>,
    cfg: &PipelineConfig,
    privacy: &[PrivacyToggle],
    clock: &ReplayClock,
    mut sink: impl FnMut(&PipelineOutput),
) -> Result<Vec<Alert>, PipelineError> {
    let mut pipeline =
        SessionPipeline::new(cfg.clone(), model, record.specs()?, (record.meta.screen_w, record.meta.screen_h))?;
    let mut pacer = Pacer { clock, origin: Instant::now(), t0: None };
    let mut alerts = Vec::new();
    let mut take = |outputs: Vec<PipelineOutput>, alerts: &mut Vec<Alert>| {
        for o in outputs {
            sink(&o);
            if let PipelineOutput::Alert { alert } = o {
                alerts.push(alert);
            }
        }
    };
    for event in session_events(record, privacy) {
        pacer.wait_for(event.t_ms());
        match pipeline.handle(&event) {
            Ok(o) => take(o, &mut alerts),
            Err(PipelineError::Telemetry(e)) => log::warn!("frame dropped: {e}"),
            Err(e) => return Err(e),
        }
    }
    take(pipeline.finish(), &mut alerts);
    Ok(alerts)
}

/// Alert log bytes: one JSON object per line.
pub fn alert_log(alerts: &[Alert]) -> String {
    alerts.iter().map(|a| a.to_ndjson() + "\n").collect()
}

pub fn write_alert_log(alerts: &[Alert], path: &Path) -> Result<(), ServiceError> {
    let mut f = fs::File::create(path).map_err(ServiceError::io(path))?;
    f.write_all(alert_log(alerts).as_bytes()).map_err(ServiceError::io(path))
}

/// Parses a privacy script: one `{"t_ms": .., "enabled": ..}` per line.
pub fn parse_privacy_script(text: &str) -> Result<Vec<PrivacyToggle>, ServiceError> {
    let mut out: Vec<PrivacyToggle> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let toggle: PrivacyToggle = serde_json::from_str(line)
            .map_err(|e| ServiceError::PrivacyScript { line: i + 1, reason: e.to_string() })?;
        if out.last().is_some_and(|p| p.t_ms > toggle.t_ms) {
            return Err(ServiceError::PrivacyScript { line: i + 1, reason: "toggles must be in time order".into() });
        }
        out.push(toggle);
    }
    Ok(out)
}

pub fn load_privacy_script(path: &Path) -> Result<Vec<PrivacyToggle>, ServiceError> {
    parse_privacy_script(&fs::read_to_string(path).map_err(ServiceError::io(path))?)
}
