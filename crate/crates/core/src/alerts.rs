//! Turning window predictions into alerts: scenario tiers, rate limiting,
//! privacy suppression, presentation choices, and the two test modes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GroupDeviation, Label};

pub const VISUAL_TEST_PERIOD_MS: u64 = 30_000;
pub const DEFAULT_MIN_GAP_MS: u64 = 10_000;
pub const DEFAULT_BASE_THRESHOLD: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum AlertError {
    #[error("experience mode needs a loaded model")]
    ModelMissing,
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("invalid alert policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioTag {
    Starting,
    TrafficSignals,
    Turns,
    LaneObservance,
    Overtaking,
    SpeedControl,
    BackingUp,
    Curving,
    LaneChangesMerging,
    TrafficSigns,
    Parking,
}

impl ScenarioTag {
    pub const ALL: [ScenarioTag; 11] = [
        ScenarioTag::Starting,
        ScenarioTag::TrafficSignals,
        ScenarioTag::Turns,
        ScenarioTag::LaneObservance,
        ScenarioTag::Overtaking,
        ScenarioTag::SpeedControl,
        ScenarioTag::BackingUp,
        ScenarioTag::Curving,
        ScenarioTag::LaneChangesMerging,
        ScenarioTag::TrafficSigns,
        ScenarioTag::Parking,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioTag::Starting => "starting",
            ScenarioTag::TrafficSignals => "traffic_signals",
            ScenarioTag::Turns => "turns",
            ScenarioTag::LaneObservance => "lane_observance",
            ScenarioTag::Overtaking => "overtaking",
            ScenarioTag::SpeedControl => "speed_control",
            ScenarioTag::BackingUp => "backing_up",
            ScenarioTag::Curving => "curving",
            ScenarioTag::LaneChangesMerging => "lane_changes_merging",
            ScenarioTag::TrafficSigns => "traffic_signs",
            ScenarioTag::Parking => "parking",
        }
    }

    /// Alert sensitivity drawn from how strongly drivers wanted alerts in
    /// each situation.
    pub fn default_tier(self) -> Tier {
        use ScenarioTag::*;
        match self {
            SpeedControl | TrafficSigns | Overtaking | Turns => Tier::High,
            Parking | TrafficSignals | Starting | Curving | BackingUp => Tier::Low,
            LaneObservance | LaneChangesMerging => Tier::Neutral,
        }
    }
}

impl fmt::Display for ScenarioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioTag {
    type Err = AlertError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioTag::ALL.into_iter().find(|t| t.as_str() == s).ok_or_else(|| AlertError::UnknownScenario(s.to_string()))
    }
}

/// A scenario active over `[t0_ms, t1_ms)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioInterval {
    pub tag: ScenarioTag,
    pub t0_ms: u64,
    pub t1_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    High,
    Neutral,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierMultipliers {
    pub high: f64,
    pub neutral: f64,
    pub low: f64,
}

impl Default for TierMultipliers {
    fn default() -> Self {
        Self { high: 0.8, neutral: 1.0, low: 1.3 }
    }
}

impl TierMultipliers {
    pub fn get(&self, tier: Tier) -> f64 {
        match tier {
            Tier::High => self.high,
            Tier::Neutral => self.neutral,
            Tier::Low => self.low,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertPolicy {
    pub priority_tier: BTreeMap<ScenarioTag, Tier>,
    /// Minimum margin (scaled-distance units) before an irregular window alerts.
    pub base_threshold: f64,
    pub tier_multiplier: TierMultipliers,
    pub min_gap_ms: u64,
    pub confirm_windows: u32,
}

impl Default for AlertPolicy {
    fn default() -> Self {
        Self {
            priority_tier: ScenarioTag::ALL.into_iter().map(|t| (t, t.default_tier())).collect(),
            base_threshold: DEFAULT_BASE_THRESHOLD,
            tier_multiplier: TierMultipliers::default(),
            min_gap_ms: DEFAULT_MIN_GAP_MS,
            confirm_windows: 1,
        }
    }
}

impl AlertPolicy {
    pub fn validate(&self, window_hop_ms: u64) -> Result<(), AlertError> {
        let m = &self.tier_multiplier;
        if [m.high, m.neutral, m.low].iter().any(|v| v.is_nan() || *v <= 0.0) {
            return Err(AlertError::InvalidPolicy("tier multipliers must be positive".into()));
        }
        if self.min_gap_ms < window_hop_ms {
            return Err(AlertError::InvalidPolicy(format!(
                "min gap {} ms is shorter than the window hop {window_hop_ms} ms",
                self.min_gap_ms
            )));
        }
        if self.confirm_windows == 0 {
            return Err(AlertError::InvalidPolicy("confirm_windows must be at least 1".into()));
        }
        Ok(())
    }

    pub fn tier(&self, scenario: Option<ScenarioTag>) -> Tier {
        scenario.map_or(Tier::Neutral, |s| self.priority_tier.get(&s).copied().unwrap_or(s.default_tier()))
    }

    pub fn threshold(&self, scenario: Option<ScenarioTag>) -> f64 {
        self.base_threshold * self.tier_multiplier.get(self.tier(scenario))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertContent {
    Hand,
    Foot,
    Eye,
}

impl AlertContent {
    pub const ALL: [AlertContent; 3] = [AlertContent::Hand, AlertContent::Foot, AlertContent::Eye];

    /// Group with the largest deviation; ties resolve hand, then foot, then eye.
    pub fn from_deviation(d: &GroupDeviation) -> Self {
        if d.hand >= d.foot && d.hand >= d.eye {
            AlertContent::Hand
        } else if d.foot >= d.eye {
            AlertContent::Foot
        } else {
            AlertContent::Eye
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisualPosition {
    Hud,
    Dashboard,
    CenterScreen,
}

impl VisualPosition {
    pub const ALL: [VisualPosition; 3] = [VisualPosition::Hud, VisualPosition::Dashboard, VisualPosition::CenterScreen];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisualForm {
    TriangleIcon,
    TextOnly,
    TriangleText,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AudioForm {
    SoundOnly,
    WhatToDo,
    WhatAndWhy,
}

impl AudioForm {
    pub const ALL: [AudioForm; 3] = [AudioForm::SoundOnly, AudioForm::WhatToDo, AudioForm::WhatAndWhy];
}

/// Parses the snake_case wire spelling of a unit enum.
macro_rules! from_wire_str {
    ($($t:ty),*) => {$(
        impl FromStr for $t {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                serde_json::from_value(serde_json::Value::String(s.to_string()))
                    .map_err(|_| format!("unknown {} `{s}`", stringify!($t)))
            }
        }
    )*};
}

from_wire_str!(VisualPosition, VisualForm, AudioForm);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub t_ms: u64,
    pub content: AlertContent,
    pub visual_position: VisualPosition,
    pub visual_form: VisualForm,
    pub audio_form: AudioForm,
    pub audio_text: String,
    pub scenario: Option<ScenarioTag>,
    pub suppressed: bool,
    /// Decision margin for model-driven alerts; absent for test-mode alerts.
    pub margin: Option<f64>,
}

impl Alert {
    pub fn presented(&self) -> bool {
        !self.suppressed
    }

    /// One line of the alert log.
    pub fn to_ndjson(&self) -> String {
        serde_json::to_string(self).expect("alert serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PresentationConfig {
    pub visual_position: VisualPosition,
    pub visual_form: VisualForm,
    pub audio_form: AudioForm,
    /// Above this speed the spoken prompt drops its explanation.
    pub terse_audio_speed_kmh: Option<f64>,
    pub privacy_enabled: bool,
}

impl Default for PresentationConfig {
    fn default() -> Self {
        Self {
            visual_position: VisualPosition::Hud,
            visual_form: VisualForm::TriangleIcon,
            audio_form: AudioForm::WhatAndWhy,
            terse_audio_speed_kmh: Some(60.0),
            privacy_enabled: false,
        }
    }
}

impl PresentationConfig {
    pub fn audio_form_at(&self, speed_kmh: Option<f64>) -> AudioForm {
        match (self.audio_form, self.terse_audio_speed_kmh, speed_kmh) {
            (AudioForm::WhatAndWhy, Some(limit), Some(v)) if v > limit => AudioForm::WhatToDo,
            (form, _, _) => form,
        }
    }
}

fn imperative(content: AlertContent, scenario: Option<ScenarioTag>) -> &'static str {
    use AlertContent::*;
    use ScenarioTag::*;
    match (content, scenario) {
        (Foot, Some(SpeedControl)) => "Check your speed.",
        (Foot, Some(TrafficSignals)) => "Get ready to brake for the signal.",
        (Foot, Some(Parking | BackingUp)) => "Ease off and brake gently.",
        (Foot, Some(Starting)) => "Press the throttle gently.",
        (Foot, _) => "Check your pedal control.",
        (Hand, Some(Turns | Curving)) => "Steer smoothly through the bend.",
        (Hand, Some(LaneObservance)) => "Keep to the centre of your lane.",
        (Hand, Some(LaneChangesMerging | Overtaking)) => "Hold the wheel steady as you change lanes.",
        (Hand, Some(Parking | BackingUp)) => "Turn the wheel slowly.",
        (Hand, _) => "Steady the steering wheel.",
        (Eye, Some(TrafficSigns)) => "Scan the road signs.",
        (Eye, Some(TrafficSignals)) => "Watch the traffic light.",
        (Eye, Some(Overtaking | LaneChangesMerging)) => "Check your mirrors.",
        (Eye, Some(Parking | BackingUp)) => "Look around the car.",
        (Eye, _) => "Keep your eyes on the road.",
    }
}

fn reason(content: AlertContent) -> &'static str {
    match content {
        AlertContent::Hand => "your steering is unsteady.",
        AlertContent::Foot => "your pedal control is irregular.",
        AlertContent::Eye => "your gaze has narrowed.",
    }
}

/// Spoken prompt for an alert. Sound-only alerts carry no text.
pub fn render_audio_text(content: AlertContent, form: AudioForm, scenario: Option<ScenarioTag>) -> String {
    match form {
        AudioForm::SoundOnly => String::new(),
        AudioForm::WhatToDo => imperative(content, scenario).to_string(),
        AudioForm::WhatAndWhy => {
            let what = imperative(content, scenario);
            format!("{} — {}", what.trim_end_matches('.'), reason(content))
        }
    }
}

/// What a window contributes to the alert decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evidence {
    pub t_ms: u64,
    pub label: Label,
    pub margin: f64,
    pub group_deviation: GroupDeviation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DecisionState {
    pub last_alert_t: Option<u64>,
    pub consecutive_irregular: u32,
    pub privacy: bool,
}

impl DecisionState {
    pub fn new(privacy: bool) -> Self {
        Self { privacy, ..Self::default() }
    }

    /// Applies on the next decision.
    pub fn set_privacy(&mut self, enabled: bool) {
        self.privacy = enabled;
    }

    fn rate_ok(&self, t_ms: u64, min_gap_ms: u64) -> bool {
        self.last_alert_t.is_none_or(|last| t_ms.saturating_sub(last) >= min_gap_ms && t_ms >= last)
    }
}

/// Alert decision for one window. Privacy only flips `suppressed`; the
/// decision itself, including rate limiting, is unchanged.
pub fn decide(
    evidence: &Evidence,
    scenario: Option<ScenarioTag>,
    policy: &AlertPolicy,
    presentation: &PresentationConfig,
    speed_kmh: Option<f64>,
    state: &mut DecisionState,
) -> Option<Alert> {
    if evidence.label != Label::Irregular {
        state.consecutive_irregular = 0;
        return None;
    }
    state.consecutive_irregular = state.consecutive_irregular.saturating_add(1);
    if evidence.margin < policy.threshold(scenario)
        || state.consecutive_irregular < policy.confirm_windows
        || !state.rate_ok(evidence.t_ms, policy.min_gap_ms)
    {
        return None;
    }
    state.last_alert_t = Some(evidence.t_ms);
    let content = AlertContent::from_deviation(&evidence.group_deviation);
    let audio_form = presentation.audio_form_at(speed_kmh);
    Some(Alert {
        t_ms: evidence.t_ms,
        content,
        visual_position: presentation.visual_position,
        visual_form: presentation.visual_form,
        audio_form,
        audio_text: render_audio_text(content, audio_form, scenario),
        scenario,
        suppressed: state.privacy,
        margin: Some(evidence.margin),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatingMode {
    VisualTest,
    AudioTest,
    Experience,
}

impl FromStr for OperatingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "visual_test" => Ok(OperatingMode::VisualTest),
            "audio_test" => Ok(OperatingMode::AudioTest),
            "experience" => Ok(OperatingMode::Experience),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

/// Cyclic 3×3 Latin square: row `r` plays forms `(r + j) mod 3`.
pub fn latin_square_row(row: usize) -> [AudioForm; 3] {
    [0, 1, 2].map(|j| AudioForm::ALL[(row + j) % 3])
}

/// Schedules test-mode alerts against session (data) time.
#[derive(Debug, Clone)]
pub struct ModeRunner {
    mode: OperatingMode,
    started_ms: u64,
    rng: ChaCha8Rng,
    next_visual_ms: u64,
    scenario_entries: usize,
    pending: Vec<Alert>,
}

impl ModeRunner {
    pub fn new(mode: OperatingMode, started_ms: u64, seed: u64, model_loaded: bool) -> Result<Self, AlertError> {
        if mode == OperatingMode::Experience && !model_loaded {
            return Err(AlertError::ModelMissing);
        }
        Ok(Self {
            mode,
            started_ms,
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_visual_ms: started_ms + VISUAL_TEST_PERIOD_MS,
            scenario_entries: 0,
            pending: Vec::new(),
        })
    }

    pub fn mode(&self) -> OperatingMode {
        self.mode
    }

    pub fn started_ms(&self) -> u64 {
        self.started_ms
    }

    /// Audio test: each scenario entry schedules the three audio forms in
    /// Latin-square order, `gap_ms` apart.
    pub fn on_scenario_entry(&mut self, t_ms: u64, tag: ScenarioTag, gap_ms: u64, presentation: &PresentationConfig) {
        if self.mode != OperatingMode::AudioTest {
            return;
        }
        let row = self.scenario_entries;
        self.scenario_entries += 1;
        let content = AlertContent::ALL[row % 3];
        for (j, form) in latin_square_row(row).into_iter().enumerate() {
            self.pending.push(Alert {
                t_ms: t_ms + j as u64 * gap_ms,
                content,
                visual_position: presentation.visual_position,
                visual_form: presentation.visual_form,
                audio_form: form,
                audio_text: render_audio_text(content, form, Some(tag)),
                scenario: Some(tag),
                suppressed: false,
                margin: None,
            });
        }
    }

    /// Test alerts due at or before `now_ms`, in time order.
    pub fn due(&mut self, now_ms: u64, scenario: Option<ScenarioTag>, privacy: bool) -> Vec<Alert> {
        let mut out = Vec::new();
        match self.mode {
            OperatingMode::VisualTest => {
                while self.next_visual_ms <= now_ms {
                    let position = VisualPosition::ALL[self.rng.random_range(0..3)];
                    let content = AlertContent::ALL[self.rng.random_range(0..3)];
                    out.push(Alert {
                        t_ms: self.next_visual_ms,
                        content,
                        visual_position: position,
                        visual_form: VisualForm::TriangleIcon,
                        audio_form: AudioForm::SoundOnly,
                        audio_text: String::new(),
                        scenario,
                        suppressed: privacy,
                        margin: None,
                    });
                    self.next_visual_ms += VISUAL_TEST_PERIOD_MS;
                }
            }
            OperatingMode::AudioTest => {
                let (mut ready, rest): (Vec<Alert>, Vec<Alert>) =
                    self.pending.drain(..).partition(|a| a.t_ms <= now_ms);
                self.pending = rest;
                ready.sort_by_key(|a| a.t_ms);
                for mut a in ready {
                    a.suppressed = privacy;
                    out.push(a);
                }
            }
            OperatingMode::Experience => {}
        }
        out
    }
}

/// Session timing for a standalone test-mode run.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionClock {
    pub start_ms: u64,
    pub end_ms: u64,
    /// Scenario entry times, in order.
    pub scenario_entries: Vec<(u64, ScenarioTag)>,
}

/// Runs a test mode over a whole clock and returns every alert it emits.
/// Experience mode alerts come from the window pipeline, so here it only
/// validates that a model is present.
pub fn run_mode(
    mode: OperatingMode,
    clock: &SessionClock,
    policy: &AlertPolicy,
    presentation: &PresentationConfig,
    seed: u64,
    model_loaded: bool,
) -> Result<Vec<Alert>, AlertError> {
    let mut runner = ModeRunner::new(mode, clock.start_ms, seed, model_loaded)?;
    let mut out = Vec::new();
    let mut scenario = None;
    for &(t, tag) in &clock.scenario_entries {
        out.extend(runner.due(t.saturating_sub(1), scenario, presentation.privacy_enabled));
        scenario = Some(tag);
        runner.on_scenario_entry(t, tag, policy.min_gap_ms, presentation);
    }
    out.extend(runner.due(clock.end_ms, scenario, presentation.privacy_enabled));
    Ok(out)
}
