//! Per-session streaming pipeline: ingest → window close on data time →
//! verification → features → prediction → alert decision. The batch replay
//! and the live service both drive this same state machine.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alerts::{
    decide, Alert, AlertError, AlertPolicy, DecisionState, Evidence, ModeRunner, OperatingMode, PresentationConfig,
    ScenarioTag,
};
use crate::features::{extract, FeatureParams, WindowFeatures, WindowGroup, WindowSpec};
use crate::model::{IrregularityModel, ModelError, Prediction};
use crate::telemetry::{
    BufferReport, BufferStatus, Channel, ChannelSamples, ChannelSpecs, RawFrame, SessionRecord, StreamState,
    TelemetryError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Alert(#[from] AlertError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub window: WindowSpec,
    pub features: FeatureParams,
    pub policy: AlertPolicy,
    pub presentation: PresentationConfig,
    pub mode: OperatingMode,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window: WindowSpec::default(),
            features: FeatureParams::default(),
            policy: AlertPolicy::default(),
            presentation: PresentationConfig::default(),
            mode: OperatingMode::Experience,
            seed: 0,
        }
    }
}

/// Everything known about one closed window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowOutcome {
    pub window_start_ms: u64,
    pub window_end_ms: u64,
    pub reports: Vec<BufferReport>,
    pub features: Option<WindowFeatures>,
    pub dropped: Option<String>,
}

/// Closes every channel buffer for `[start_ms, start_ms + length)` and
/// extracts features. Steering or pedal failure drops the window; a gaze
/// buffer that is not `ok` switches the window to the eyeless schema.
pub fn evaluate_window(
    stream: &StreamState,
    start_ms: u64,
    spec: &WindowSpec,
    params: &FeatureParams,
) -> WindowOutcome {
    let mut group = WindowGroup { start_ms, end_ms: start_ms + spec.length_ms, ..WindowGroup::default() };
    let mut reports = Vec::with_capacity(3);
    for channel in Channel::ALL {
        let closed = stream.close_buffer(channel, start_ms, spec.length_ms);
        match closed.samples {
            ChannelSamples::Steering(s) => group.steering = s,
            ChannelSamples::Pedals(p) => group.pedals = p,
            ChannelSamples::Gaze(g) => group.gaze = g,
        }
        reports.push(closed.report);
    }
    let status = |c: Channel| reports.iter().find(|r| r.channel == c).map(|r| r.status);
    let mut dropped = None;
    let features = if status(Channel::Steering) == Some(BufferStatus::Failed) {
        dropped = Some("steering buffer failed verification".to_string());
        None
    } else if status(Channel::Pedals) == Some(BufferStatus::Failed) {
        dropped = Some("pedal buffer failed verification".to_string());
        None
    } else {
        let eye_allowed = status(Channel::Gaze) == Some(BufferStatus::Ok);
        match extract(&group, eye_allowed, stream.screen(), params) {
            Ok(f) => Some(f),
            Err(e) => {
                dropped = Some(e.to_string());
                None
            }
        }
    };
    if let Some(reason) = &dropped {
        log::debug!("window [{start_ms}, {}) dropped: {reason}", group.end_ms);
    }
    WindowOutcome { window_start_ms: start_ms, window_end_ms: group.end_ms, reports, features, dropped }
}

/// Ingests a whole recorded session and evaluates every window it contains.
pub fn session_windows(
    record: &SessionRecord,
    spec: &WindowSpec,
    params: &FeatureParams,
) -> Result<Vec<WindowOutcome>, PipelineError> {
    let specs = record.specs()?;
    let mut stream = StreamState::new(specs, record.meta.screen_w, record.meta.screen_h);
    for (t, frame) in record.frames() {
        stream.ingest(t, &frame)?;
    }
    Ok(spec.starts(record.span_ms()).map(|s| evaluate_window(&stream, s, spec, params)).collect())
}

/// Input to a session pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PipelineEvent {
    Frame { t_ms: u64, frame: RawFrame },
    Scenario { t_ms: u64, tag: Option<ScenarioTag> },
    Privacy { t_ms: u64, enabled: bool },
    Mode { t_ms: u64, mode: OperatingMode },
}

impl PipelineEvent {
    pub fn t_ms(&self) -> u64 {
        match self {
            PipelineEvent::Frame { t_ms, .. }
            | PipelineEvent::Scenario { t_ms, .. }
            | PipelineEvent::Privacy { t_ms, .. }
            | PipelineEvent::Mode { t_ms, .. } => *t_ms,
        }
    }

    fn order_key(&self) -> (u64, u8, u8) {
        match self {
            PipelineEvent::Mode { t_ms, .. } => (*t_ms, 0, 0),
            PipelineEvent::Privacy { t_ms, .. } => (*t_ms, 1, 0),
            PipelineEvent::Scenario { t_ms, .. } => (*t_ms, 2, 0),
            PipelineEvent::Frame { t_ms, frame } => (*t_ms, 3, frame.channel() as u8),
        }
    }
}

/// A scripted privacy toggle, one per line of a privacy script.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivacyToggle {
    pub t_ms: u64,
    pub enabled: bool,
}

/// The event stream a client would send for a recorded session: frames,
/// scenario enter/exit from the annotated intervals, and privacy toggles.
/// Control events at a timestamp precede frames at the same timestamp.
pub fn session_events(record: &SessionRecord, privacy: &[PrivacyToggle]) -> Vec<PipelineEvent> {
    let mut events: Vec<PipelineEvent> =
        record.frames().into_iter().map(|(t_ms, frame)| PipelineEvent::Frame { t_ms, frame }).collect();
    let mut intervals = record.meta.scenarios.clone();
    intervals.sort_by_key(|s| (s.t0_ms, s.t1_ms));
    let mut boundaries: Vec<(u64, Option<ScenarioTag>)> = Vec::new();
    for s in &intervals {
        boundaries.push((s.t0_ms, Some(s.tag)));
        boundaries.push((s.t1_ms, None));
    }
    // An exit and an entry at the same instant: the entry wins.
    boundaries.sort_by_key(|(t, tag)| (*t, tag.is_some()));
    events.extend(boundaries.into_iter().map(|(t_ms, tag)| PipelineEvent::Scenario { t_ms, tag }));
    events.extend(privacy.iter().map(|p| PipelineEvent::Privacy { t_ms: p.t_ms, enabled: p.enabled }));
    events.sort_by_key(PipelineEvent::order_key);
    events
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum PipelineOutput {
    Window { outcome: WindowOutcome, prediction: Option<Prediction> },
    Alert { alert: Alert },
}

/// Streaming state for one session.
pub struct SessionPipeline {
    cfg: PipelineConfig,
    model: Option<Arc<IrregularityModel>>,
    stream: StreamState,
    decision: DecisionState,
    runner: ModeRunner,
    scenario: Option<ScenarioTag>,
    next_window: u64,
    finished: bool,
}

impl SessionPipeline {
    pub fn new(
        cfg: PipelineConfig,
        model: Option<Arc<IrregularityModel>>,
        specs: ChannelSpecs,
        screen: (u32, u32),
    ) -> Result<Self, PipelineError> {
        if cfg.window.hop_ms() == 0 {
            return Err(PipelineError::Config("window hop is zero".into()));
        }
        cfg.policy.validate(cfg.window.hop_ms())?;
        let runner = ModeRunner::new(cfg.mode, 0, cfg.seed, model.is_some())?;
        Ok(Self {
            decision: DecisionState::new(cfg.presentation.privacy_enabled),
            stream: StreamState::new(specs, screen.0, screen.1),
            runner,
            model,
            cfg,
            scenario: None,
            next_window: 0,
            finished: false,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn mode(&self) -> OperatingMode {
        self.runner.mode()
    }

    pub fn privacy(&self) -> bool {
        self.decision.privacy
    }

    pub fn scenario(&self) -> Option<ScenarioTag> {
        self.scenario
    }

    pub fn stream(&self) -> &StreamState {
        &self.stream
    }

    /// Applies one event. A rejected frame returns the error and leaves the
    /// pipeline usable.
    pub fn handle(&mut self, event: &PipelineEvent) -> Result<Vec<PipelineOutput>, PipelineError> {
        let mut out = Vec::new();
        match *event {
            PipelineEvent::Frame { t_ms, ref frame } => {
                self.stream.ingest(t_ms, frame)?;
                self.advance(t_ms, false, &mut out);
            }
            PipelineEvent::Scenario { t_ms, tag } => {
                self.advance(t_ms, false, &mut out);
                if let Some(tag) = tag {
                    if self.scenario != Some(tag) {
                        self.runner.on_scenario_entry(t_ms, tag, self.cfg.policy.min_gap_ms, &self.cfg.presentation);
                    }
                }
                self.scenario = tag;
            }
            PipelineEvent::Privacy { t_ms, enabled } => {
                self.advance(t_ms, false, &mut out);
                self.decision.set_privacy(enabled);
            }
            PipelineEvent::Mode { t_ms, mode } => {
                self.advance(t_ms, false, &mut out);
                self.runner = ModeRunner::new(mode, t_ms, self.cfg.seed, self.model.is_some())?;
            }
        }
        Ok(out)
    }

    /// Closes the remaining windows that fit in the session span. Further
    /// calls return nothing.
    pub fn finish(&mut self) -> Vec<PipelineOutput> {
        let mut out = Vec::new();
        if self.finished {
            return out;
        }
        self.finished = true;
        let span = Channel::ALL
            .iter()
            .filter_map(|&c| self.stream.last_t(c).map(|t| t + self.stream.specs().get(c).period_ms()))
            .max();
        if let Some(span) = span {
            self.advance(span, true, &mut out);
        }
        out
    }

    fn window_start(&self, k: u64) -> u64 {
        k * self.cfg.window.hop_ms()
    }

    /// Closes every window whose end is strictly before `now` (or at `now`
    /// when flushing), then releases due test-mode alerts.
    fn advance(&mut self, now: u64, flush: bool, out: &mut Vec<PipelineOutput>) {
        let len = self.cfg.window.length_ms;
        while self.stream.watermark().is_some() {
            let start = self.window_start(self.next_window);
            let end = start + len;
            let closes =
                if flush { end <= now } else { end <= now && self.stream.watermark().is_some_and(|w| w >= end) };
            if !closes {
                break;
            }
            let outcome = evaluate_window(&self.stream, start, &self.cfg.window, &self.cfg.features);
            let prediction = self.predict(&outcome);
            // Test-mode alerts due before this window's end go first.
            self.release_test_alerts(end.saturating_sub(1), out);
            let alert = match (&prediction, self.runner.mode()) {
                (Some((p, margin)), OperatingMode::Experience) => {
                    let evidence =
                        Evidence { t_ms: end, label: p.label, margin: *margin, group_deviation: p.group_deviation };
                    decide(&evidence, self.scenario, &self.cfg.policy, &self.cfg.presentation, None, &mut self.decision)
                }
                _ => None,
            };
            out.push(PipelineOutput::Window { outcome, prediction: prediction.map(|(p, _)| p) });
            if let Some(alert) = alert {
                out.push(PipelineOutput::Alert { alert });
            }
            self.next_window += 1;
            self.stream.prune_before(self.window_start(self.next_window));
        }
        self.release_test_alerts(now, out);
    }

    fn release_test_alerts(&mut self, now: u64, out: &mut Vec<PipelineOutput>) {
        for alert in self.runner.due(now, self.scenario, self.decision.privacy) {
            out.push(PipelineOutput::Alert { alert });
        }
    }

    fn predict(&self, outcome: &WindowOutcome) -> Option<(Prediction, f64)> {
        let model = self.model.as_ref()?;
        let features = outcome.features.as_ref()?;
        let variant = match model.variant_for(features) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("window at {} ms not scored: {e}", outcome.window_start_ms);
                return None;
            }
        };
        match variant.predict(features) {
            Ok(p) => {
                let margin = p.margin(&variant.label_map);
                Some((p, margin))
            }
            Err(e) => {
                log::warn!("window at {} ms not scored: {e}", outcome.window_start_ms);
                None
            }
        }
    }
}

/// Alerts in the order the pipeline produced them.
pub fn alerts_of(outputs: &[PipelineOutput]) -> impl Iterator<Item = &Alert> {
    outputs.iter().filter_map(|o| match o {
        PipelineOutput::Alert { alert } => Some(alert),
        _ => None,
    })
}

/// Runs a recorded session through a fresh pipeline in one go.
pub fn run_session(
    record: &SessionRecord,
    model: Option<Arc<IrregularityModel>>,
    cfg: &PipelineConfig,
    privacy: &[PrivacyToggle],
) -> Result<Vec<PipelineOutput>, PipelineError> {
    let mut pipeline =
        SessionPipeline::new(cfg.clone(), model, record.specs()?, (record.meta.screen_w, record.meta.screen_h))?;
    let mut out = Vec::new();
    for event in session_events(record, privacy) {
        match pipeline.handle(&event) {
            Ok(o) => out.extend(o),
            Err(PipelineError::Telemetry(e)) => log::warn!("frame dropped: {e}"),
            Err(e) => return Err(e),
        }
    }
    out.extend(pipeline.finish());
    Ok(out)
}
