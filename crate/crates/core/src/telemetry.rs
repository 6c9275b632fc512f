//! Channel sample types, raw-unit normalization, the per-session stream
//! buffers with integrity verification, and the on-disk session format.

use std::collections::VecDeque;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alerts::ScenarioInterval;

pub const DEFAULT_SCREEN_W: u32 = 1920;
pub const DEFAULT_SCREEN_H: u32 = 1080;
pub const STEERING_RATE_HZ: f64 = 20.0;
pub const PEDAL_RATE_HZ: f64 = 20.0;
pub const GAZE_RATE_HZ: f64 = 120.0;
pub const DEFAULT_STEERING_FULL_SCALE: f64 = 32767.0;
pub const DEFAULT_PEDAL_FULL_SCALE: f64 = 35000.0;
pub const DEFAULT_RATE_TOLERANCE: f64 = 0.25;
/// Verification buffer span; also the default analysis window.
pub const BUFFER_SPAN_MS: u64 = 10_000;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
    #[error("{channel} frame at t={t_ms} ms is not after previous t={last_ms} ms")]
    NonMonotonicTimestamp { channel: Channel, t_ms: u64, last_ms: u64 },
    #[error("{channel} buffer is empty")]
    EmptyBuffer { channel: Channel },
    #[error("invalid channel spec: {0}")]
    InvalidSpec(String),
    #[error("{file}:{line}: malformed row: {reason}")]
    MalformedRow { file: String, line: u64, reason: String },
    #[error("schema mismatch in {file}: {reason}")]
    SchemaMismatch { file: String, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Steering,
    Pedals,
    Gaze,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Steering, Channel::Pedals, Channel::Gaze];

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Steering => "steering",
            Channel::Pedals => "pedals",
            Channel::Gaze => "gaze",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = TelemetryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "steering" => Ok(Channel::Steering),
            "pedals" => Ok(Channel::Pedals),
            "gaze" => Ok(Channel::Gaze),
            other => Err(TelemetryError::UnknownChannel(other.to_string())),
        }
    }
}

/// Normalized steering position: -1 full left, +1 full right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringSample {
    pub t_ms: u64,
    pub angle: f64,
}

/// Pedal depths in [0, 1], pressed = larger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PedalSample {
    pub t_ms: u64,
    pub throttle: f64,
    pub brake: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub t_ms: u64,
    pub x_px: f64,
    pub y_px: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub name: Channel,
    pub nominal_rate_hz: f64,
    pub rate_tolerance_frac: f64,
    pub full_scale_raw: f64,
}

impl ChannelSpec {
    pub fn new(
        name: Channel,
        nominal_rate_hz: f64,
        rate_tolerance_frac: f64,
        full_scale_raw: f64,
    ) -> Result<Self, TelemetryError> {
        if !(nominal_rate_hz > 0.0 && nominal_rate_hz.is_finite()) {
            return Err(TelemetryError::InvalidSpec(format!(
                "{name}: nominal rate must be positive, got {nominal_rate_hz}"
            )));
        }
        if !(rate_tolerance_frac > 0.0 && rate_tolerance_frac < 1.0) {
            return Err(TelemetryError::InvalidSpec(format!(
                "{name}: rate tolerance must be in (0, 1), got {rate_tolerance_frac}"
            )));
        }
        if !(full_scale_raw > 0.0 && full_scale_raw.is_finite()) {
            return Err(TelemetryError::InvalidSpec(format!(
                "{name}: full scale must be positive, got {full_scale_raw}"
            )));
        }
        Ok(Self { name, nominal_rate_hz, rate_tolerance_frac, full_scale_raw })
    }

    pub fn steering() -> Self {
        Self {
            name: Channel::Steering,
            nominal_rate_hz: STEERING_RATE_HZ,
            rate_tolerance_frac: DEFAULT_RATE_TOLERANCE,
            full_scale_raw: DEFAULT_STEERING_FULL_SCALE,
        }
    }

    pub fn pedals() -> Self {
        Self {
            name: Channel::Pedals,
            nominal_rate_hz: PEDAL_RATE_HZ,
            rate_tolerance_frac: DEFAULT_RATE_TOLERANCE,
            full_scale_raw: DEFAULT_PEDAL_FULL_SCALE,
        }
    }

    pub fn gaze() -> Self {
        Self {
            name: Channel::Gaze,
            nominal_rate_hz: GAZE_RATE_HZ,
            rate_tolerance_frac: DEFAULT_RATE_TOLERANCE,
            full_scale_raw: 1.0,
        }
    }

    /// Nominal sample period rounded up to whole milliseconds.
    pub fn period_ms(&self) -> u64 {
        (1000.0 / self.nominal_rate_hz).ceil() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpecs {
    pub steering: ChannelSpec,
    pub pedals: ChannelSpec,
    pub gaze: ChannelSpec,
}

impl Default for ChannelSpecs {
    fn default() -> Self {
        Self { steering: ChannelSpec::steering(), pedals: ChannelSpec::pedals(), gaze: ChannelSpec::gaze() }
    }
}

impl ChannelSpecs {
    pub fn get(&self, channel: Channel) -> &ChannelSpec {
        match channel {
            Channel::Steering => &self.steering,
            Channel::Pedals => &self.pedals,
            Channel::Gaze => &self.gaze,
        }
    }

    pub fn with_full_scale(steering_fs: f64, pedal_fs: f64) -> Result<Self, TelemetryError> {
        let d = Self::default();
        Ok(Self {
            steering: ChannelSpec::new(
                Channel::Steering,
                d.steering.nominal_rate_hz,
                d.steering.rate_tolerance_frac,
                steering_fs,
            )?,
            pedals: ChannelSpec::new(
                Channel::Pedals,
                d.pedals.nominal_rate_hz,
                d.pedals.rate_tolerance_frac,
                pedal_fs,
            )?,
            gaze: d.gaze,
        })
    }
}

/// Steering raw units divided by full scale, clamped to [-1, 1].
pub fn normalize_steering(raw: f64, full_scale: f64) -> f64 {
    (raw / full_scale).clamp(-1.0, 1.0)
}

/// Raw pedal axis reads `+full_scale` when released and `-full_scale` when
/// fully pressed; the result is depth in [0, 1] with pressed = 1.
pub fn normalize_pedal(raw: f64, full_scale: f64) -> f64 {
    ((full_scale - raw) / (2.0 * full_scale)).clamp(0.0, 1.0)
}

/// Inverse of [`normalize_pedal`] for depths in [0, 1].
pub fn pedal_raw_from_depth(depth: f64, full_scale: f64) -> f64 {
    full_scale - depth * 2.0 * full_scale
}

/// One frame as it arrives from a device or the wire. `None` marks a null
/// reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "channel", rename_all = "snake_case")]
pub enum RawFrame {
    Steering { angle_raw: Option<f64> },
    Pedals { throttle_raw: Option<f64>, brake_raw: Option<f64> },
    Gaze { x_px: Option<f64>, y_px: Option<f64>, valid: bool },
}

impl RawFrame {
    pub fn channel(&self) -> Channel {
        match self {
            RawFrame::Steering { .. } => Channel::Steering,
            RawFrame::Pedals { .. } => Channel::Pedals,
            RawFrame::Gaze { .. } => Channel::Gaze,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferStatus {
    Ok,
    Degraded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferReport {
    pub channel: Channel,
    pub span_ms: u64,
    pub sample_count: u64,
    pub observed_rate_hz: f64,
    pub monotonic: bool,
    pub null_count: u64,
    pub status: BufferStatus,
}

/// Integrity check for one channel buffer. `timestamps` covers every
/// received frame, null or not; `null_count` of them carried no usable
/// reading.
pub fn verify_buffer(spec: &ChannelSpec, timestamps: &[u64], null_count: u64, span_ms: u64) -> BufferReport {
    let sample_count = timestamps.len() as u64;
    let observed_rate_hz = if span_ms == 0 { 0.0 } else { sample_count as f64 * 1000.0 / span_ms as f64 };
    let monotonic = timestamps.windows(2).all(|w| w[1] > w[0]);
    let usable = sample_count.saturating_sub(null_count);
    let rate_ok = (observed_rate_hz - spec.nominal_rate_hz).abs() <= spec.rate_tolerance_frac * spec.nominal_rate_hz;

    let status = if sample_count == 0 || !monotonic || usable < 2 {
        BufferStatus::Failed
    } else if null_count == 0 && rate_ok {
        BufferStatus::Ok
    } else {
        BufferStatus::Degraded
    };

    BufferReport { channel: spec.name, span_ms, sample_count, observed_rate_hz, monotonic, null_count, status }
}

#[derive(Debug, Clone, Copy)]
struct Entry<T> {
    t_ms: u64,
    sample: Option<T>,
}

#[derive(Debug, Clone)]
struct ChannelBuffer<T> {
    entries: VecDeque<Entry<T>>,
    last_t: Option<u64>,
    rejected: u64,
}

impl<T: Copy> ChannelBuffer<T> {
    fn new() -> Self {
        Self { entries: VecDeque::new(), last_t: None, rejected: 0 }
    }

    fn push(&mut self, channel: Channel, t_ms: u64, sample: Option<T>) -> Result<(), TelemetryError> {
        if let Some(last_ms) = self.last_t {
            if t_ms <= last_ms {
                self.rejected += 1;
                return Err(TelemetryError::NonMonotonicTimestamp { channel, t_ms, last_ms });
            }
        }
        self.last_t = Some(t_ms);
        self.entries.push_back(Entry { t_ms, sample });
        Ok(())
    }

    fn range(&self, start_ms: u64, end_ms: u64) -> impl Iterator<Item = &Entry<T>> {
        self.entries.iter().skip_while(move |e| e.t_ms < start_ms).take_while(move |e| e.t_ms < end_ms)
    }

    fn prune_before(&mut self, t_ms: u64) {
        while self.entries.front().is_some_and(|e| e.t_ms < t_ms) {
            self.entries.pop_front();
        }
    }
}

/// Samples handed out when a buffer closes.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelSamples {
    Steering(Vec<SteeringSample>),
    Pedals(Vec<PedalSample>),
    Gaze(Vec<GazeSample>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedBuffer {
    pub samples: ChannelSamples,
    pub report: BufferReport,
}

/// Ingestion state for a single session.
#[derive(Debug, Clone)]
pub struct StreamState {
    specs: ChannelSpecs,
    screen_w: u32,
    screen_h: u32,
    steering: ChannelBuffer<SteeringSample>,
    pedals: ChannelBuffer<PedalSample>,
    gaze: ChannelBuffer<GazeSample>,
    watermark: Option<u64>,
}

impl StreamState {
    pub fn new(specs: ChannelSpecs, screen_w: u32, screen_h: u32) -> Self {
        Self {
            specs,
            screen_w,
            screen_h,
            steering: ChannelBuffer::new(),
            pedals: ChannelBuffer::new(),
            gaze: ChannelBuffer::new(),
            watermark: None,
        }
    }

    pub fn specs(&self) -> &ChannelSpecs {
        &self.specs
    }

    pub fn screen(&self) -> (u32, u32) {
        (self.screen_w, self.screen_h)
    }

    /// Largest timestamp accepted on any channel.
    pub fn watermark(&self) -> Option<u64> {
        self.watermark
    }

    pub fn last_t(&self, channel: Channel) -> Option<u64> {
        match channel {
            Channel::Steering => self.steering.last_t,
            Channel::Pedals => self.pedals.last_t,
            Channel::Gaze => self.gaze.last_t,
        }
    }

    /// Frames dropped for non-increasing timestamps.
    pub fn rejected(&self, channel: Channel) -> u64 {
        match channel {
            Channel::Steering => self.steering.rejected,
            Channel::Pedals => self.pedals.rejected,
            Channel::Gaze => self.gaze.rejected,
        }
    }

    /// Normalizes and appends one frame. Null or non-finite readings are kept
    /// as null entries so the buffer check can count them.
    pub fn ingest(&mut self, t_ms: u64, frame: &RawFrame) -> Result<(), TelemetryError> {
        let finite = |v: Option<f64>| v.filter(|x| x.is_finite());
        match *frame {
            RawFrame::Steering { angle_raw } => {
                let fs = self.specs.steering.full_scale_raw;
                let sample = finite(angle_raw).map(|raw| SteeringSample { t_ms, angle: normalize_steering(raw, fs) });
                self.steering.push(Channel::Steering, t_ms, sample)?;
            }
            RawFrame::Pedals { throttle_raw, brake_raw } => {
                let fs = self.specs.pedals.full_scale_raw;
                let sample = match (finite(throttle_raw), finite(brake_raw)) {
                    (Some(th), Some(br)) => {
                        Some(PedalSample { t_ms, throttle: normalize_pedal(th, fs), brake: normalize_pedal(br, fs) })
                    }
                    _ => None,
                };
                self.pedals.push(Channel::Pedals, t_ms, sample)?;
            }
            RawFrame::Gaze { x_px, y_px, valid } => {
                let sample = match (finite(x_px), finite(y_px)) {
                    (Some(x), Some(y)) => {
                        let on_screen =
                            (0.0..=self.screen_w as f64).contains(&x) && (0.0..=self.screen_h as f64).contains(&y);
                        Some(GazeSample { t_ms, x_px: x, y_px: y, valid: valid && on_screen })
                    }
                    _ => None,
                };
                self.gaze.push(Channel::Gaze, t_ms, sample)?;
            }
        }
        self.watermark = Some(self.watermark.map_or(t_ms, |w| w.max(t_ms)));
        Ok(())
    }

    /// Returns the samples with `t_ms` in `[start_ms, start_ms + span_ms)` and
    /// the integrity report for that span. Entries stay buffered until
    /// [`StreamState::prune_before`] so overlapping windows can reuse them.
    pub fn close_buffer(&self, channel: Channel, start_ms: u64, span_ms: u64) -> ClosedBuffer {
        let end_ms = start_ms + span_ms;
        let spec = self.specs.get(channel);
        fn split<T: Copy>(
            buf: &ChannelBuffer<T>,
            s: u64,
            e: u64,
            is_null: impl Fn(&T) -> bool,
        ) -> (Vec<u64>, u64, Vec<T>) {
            let mut ts = Vec::new();
            let mut nulls = 0;
            let mut samples = Vec::new();
            for entry in buf.range(s, e) {
                ts.push(entry.t_ms);
                match &entry.sample {
                    Some(sample) => {
                        if is_null(sample) {
                            nulls += 1;
                        }
                        samples.push(*sample);
                    }
                    None => nulls += 1,
                }
            }
            (ts, nulls, samples)
        }
        let (ts, nulls, samples) = match channel {
            Channel::Steering => {
                let (ts, n, s) = split(&self.steering, start_ms, end_ms, |_| false);
                (ts, n, ChannelSamples::Steering(s))
            }
            Channel::Pedals => {
                let (ts, n, s) = split(&self.pedals, start_ms, end_ms, |_| false);
                (ts, n, ChannelSamples::Pedals(s))
            }
            Channel::Gaze => {
                let (ts, n, s) = split(&self.gaze, start_ms, end_ms, |g| !g.valid);
                (ts, n, ChannelSamples::Gaze(s))
            }
        };
        ClosedBuffer { samples, report: verify_buffer(spec, &ts, nulls, span_ms) }
    }

    pub fn prune_before(&mut self, t_ms: u64) {
        self.steering.prune_before(t_ms);
        self.pedals.prune_before(t_ms);
        self.gaze.prune_before(t_ms);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Pd,
    NonPd,
    Unknown,
}

impl FromStr for Group {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pd" => Ok(Group::Pd),
            "non_pd" => Ok(Group::NonPd),
            "unknown" => Ok(Group::Unknown),
            other => Err(format!("unknown group `{other}` (expected pd, non_pd or unknown)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawSteering {
    pub t_ms: u64,
    pub angle_raw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawPedals {
    pub t_ms: u64,
    pub throttle_raw: f64,
    pub brake_raw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullScale {
    pub steering: f64,
    pub pedals: f64,
}

impl Default for FullScale {
    fn default() -> Self {
        Self { steering: DEFAULT_STEERING_FULL_SCALE, pedals: DEFAULT_PEDAL_FULL_SCALE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: String,
    pub group: Group,
    pub screen_w: u32,
    pub screen_h: u32,
    #[serde(default)]
    pub full_scale: FullScale,
    #[serde(default)]
    pub scenarios: Vec<ScenarioInterval>,
}

/// A recorded drive in raw device units.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub meta: SessionMeta,
    pub steering: Vec<RawSteering>,
    pub pedals: Vec<RawPedals>,
    pub gaze: Vec<GazeSample>,
}

impl SessionRecord {
    pub fn specs(&self) -> Result<ChannelSpecs, TelemetryError> {
        ChannelSpecs::with_full_scale(self.meta.full_scale.steering, self.meta.full_scale.pedals)
    }

    /// Session length: the latest channel's last timestamp plus one nominal
    /// sample period.
    pub fn span_ms(&self) -> u64 {
        let specs = ChannelSpecs::default();
        let ends = [
            self.steering.last().map(|s| s.t_ms + specs.steering.period_ms()),
            self.pedals.last().map(|s| s.t_ms + specs.pedals.period_ms()),
            self.gaze.last().map(|s| s.t_ms + specs.gaze.period_ms()),
        ];
        ends.into_iter().flatten().max().unwrap_or(0)
    }

    /// Every channel interleaved in timestamp order, ties broken by channel.
    pub fn frames(&self) -> Vec<(u64, RawFrame)> {
        let mut out = Vec::with_capacity(self.steering.len() + self.pedals.len() + self.gaze.len());
        out.extend(self.steering.iter().map(|s| (s.t_ms, RawFrame::Steering { angle_raw: Some(s.angle_raw) })));
        out.extend(
            self.pedals.iter().map(|p| {
                (p.t_ms, RawFrame::Pedals { throttle_raw: Some(p.throttle_raw), brake_raw: Some(p.brake_raw) })
            }),
        );
        out.extend(
            self.gaze
                .iter()
                .map(|g| (g.t_ms, RawFrame::Gaze { x_px: Some(g.x_px), y_px: Some(g.y_px), valid: g.valid })),
        );
        out.sort_by_key(|(t, f)| (*t, f.channel()));
        out
    }

    fn check_monotonic(&self) -> Result<(), TelemetryError> {
        fn check(file: &str, ts: impl Iterator<Item = u64>) -> Result<(), TelemetryError> {
            let mut last: Option<u64> = None;
            for (i, t) in ts.enumerate() {
                if last.is_some_and(|l| t <= l) {
                    return Err(TelemetryError::MalformedRow {
                        file: file.to_string(),
                        line: i as u64 + 2,
                        reason: format!("timestamp {t} does not increase"),
                    });
                }
                last = Some(t);
            }
            Ok(())
        }
        check("steering.csv", self.steering.iter().map(|s| s.t_ms))?;
        check("pedals.csv", self.pedals.iter().map(|s| s.t_ms))?;
        check("gaze.csv", self.gaze.iter().map(|s| s.t_ms))
    }
}

#[derive(Serialize, Deserialize)]
struct GazeRow {
    t_ms: u64,
    x_px: f64,
    y_px: f64,
    valid: u8,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TelemetryError + '_ {
    move |source| TelemetryError::Io { path: path.display().to_string(), source }
}

fn read_csv<T: serde::de::DeserializeOwned>(dir: &Path, file: &str, header: &[&str]) -> Result<Vec<T>, TelemetryError> {
    let path = dir.join(file);
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(&path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => TelemetryError::Io { path: path.display().to_string(), source: io },
        other => TelemetryError::SchemaMismatch { file: file.to_string(), reason: format!("{other:?}") },
    })?;
    let found: Vec<String> = reader
        .headers()
        .map_err(|e| TelemetryError::SchemaMismatch { file: file.to_string(), reason: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    if found != header {
        return Err(TelemetryError::SchemaMismatch {
            file: file.to_string(),
            reason: format!("expected columns {header:?}, found {found:?}"),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            TelemetryError::MalformedRow { file: file.to_string(), line, reason: e.to_string() }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if let Some(col) = record.iter().position(|cell| cell.trim().is_empty()) {
            return Err(TelemetryError::MalformedRow {
                file: file.to_string(),
                line,
                reason: format!("empty `{}` cell", header[col]),
            });
        }
        let row: T = record
            .deserialize(Some(&csv::StringRecord::from(header.to_vec())))
            .map_err(|e| TelemetryError::MalformedRow { file: file.to_string(), line, reason: e.to_string() })?;
        rows.push(row);
    }
    Ok(rows)
}

fn write_csv<T: Serialize>(dir: &Path, file: &str, rows: impl Iterator<Item = T>) -> Result<(), TelemetryError> {
    let path = dir.join(file);
    let mut writer = csv::Writer::from_path(&path).map_err(|e| TelemetryError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    })?;
    for row in rows {
        writer.serialize(row).map_err(|e| TelemetryError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e.to_string()),
        })?;
    }
    writer.flush().map_err(io_err(&path))
}

pub fn load_session(dir: &Path) -> Result<SessionRecord, TelemetryError> {
    let meta_path = dir.join("meta.json");
    let meta_text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta: SessionMeta = serde_json::from_str(&meta_text)
        .map_err(|e| TelemetryError::SchemaMismatch { file: "meta.json".into(), reason: e.to_string() })?;
    let steering = read_csv::<RawSteering>(dir, "steering.csv", &["t_ms", "angle_raw"])?;
    let pedals = read_csv::<RawPedals>(dir, "pedals.csv", &["t_ms", "throttle_raw", "brake_raw"])?;
    let gaze = read_csv::<GazeRow>(dir, "gaze.csv", &["t_ms", "x_px", "y_px", "valid"])?
        .into_iter()
        .enumerate()
        .map(|(i, r)| match r.valid {
            0 | 1 => Ok(GazeSample { t_ms: r.t_ms, x_px: r.x_px, y_px: r.y_px, valid: r.valid == 1 }),
            v => Err(TelemetryError::MalformedRow {
                file: "gaze.csv".into(),
                line: i as u64 + 2,
                reason: format!("valid must be 0 or 1, got {v}"),
            }),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let record = SessionRecord { meta, steering, pedals, gaze };
    record.check_monotonic()?;
    Ok(record)
}

pub fn save_session(record: &SessionRecord, dir: &Path) -> Result<(), TelemetryError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta_path = dir.join("meta.json");
    let meta = serde_json::to_string_pretty(&record.meta).expect("session meta serializes");
    fs::write(&meta_path, meta + "\n").map_err(io_err(&meta_path))?;
    write_csv(dir, "steering.csv", record.steering.iter())?;
    write_csv(dir, "pedals.csv", record.pedals.iter())?;
    write_csv(
        dir,
        "gaze.csv",
        record.gaze.iter().map(|g| GazeRow { t_ms: g.t_ms, x_px: g.x_px, y_px: g.y_px, valid: g.valid as u8 }),
    )
}

/// Session directories directly under `root`, sorted by name.
pub fn list_sessions(root: &Path) -> Result<Vec<std::path::PathBuf>, TelemetryError> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        let path = entry.path();
        if path.is_dir() && path.join("meta.json").is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}
