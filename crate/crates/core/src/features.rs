//! Sliding windows over validated channel streams and the per-window
//! steering, pedal and gaze feature blocks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::{GazeSample, PedalSample, SteeringSample};

pub const DEFAULT_WINDOW_MS: u64 = 10_000;
pub const DEFAULT_OVERLAP: f64 = 0.5;
pub const SWEEP_LENGTHS_MS: [u64; 4] = [1_000, 3_000, 5_000, 10_000];
pub const SCHEMA_VERSION: u32 = 1;

pub const STEERING_FEATURES: [&str; 7] = [
    "steer_sum",
    "steer_abs_sum",
    "steer_fluct_times",
    "steer_volume_per_fluct",
    "steer_max_fluct",
    "steer_fluct_speed_mean",
    "steer_fluct_speed_max",
];
pub const PEDAL_FEATURES: [&str; 5] =
    ["throttle_duration_s", "brake_duration_s", "throttle_brake_ratio", "brake_times", "throttle_auc"];
pub const EYE_FEATURES: [&str; 7] = [
    "eye_avg_speed_x",
    "eye_avg_speed_y",
    "eye_avg_speed_traj",
    "eye_max_speed_x",
    "eye_max_speed_y",
    "eye_max_speed_traj",
    "gaze_area_ratio",
];

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("{block} block needs at least 2 samples, got {got}")]
    TooFewSamples { block: &'static str, got: usize },
    #[error("not enough valid gaze samples ({valid})")]
    InsufficientGaze { valid: usize },
    #[error("invalid window spec: {0}")]
    InvalidWindowSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub length_ms: u64,
    pub overlap_frac: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { length_ms: DEFAULT_WINDOW_MS, overlap_frac: DEFAULT_OVERLAP }
    }
}

impl WindowSpec {
    pub fn new(length_ms: u64, overlap_frac: f64) -> Result<Self, FeatureError> {
        if length_ms == 0 {
            return Err(FeatureError::InvalidWindowSpec("length must be positive".into()));
        }
        if !(0.0..1.0).contains(&overlap_frac) {
            return Err(FeatureError::InvalidWindowSpec(format!("overlap must be in [0, 1), got {overlap_frac}")));
        }
        let spec = Self { length_ms, overlap_frac };
        if spec.hop_ms() == 0 {
            return Err(FeatureError::InvalidWindowSpec("hop rounds to 0 ms".into()));
        }
        Ok(spec)
    }

    /// Distance between consecutive window starts, rounded to whole ms.
    pub fn hop_ms(&self) -> u64 {
        (self.length_ms as f64 * (1.0 - self.overlap_frac)).round() as u64
    }

    /// Start times of every window fully contained in `[0, span_ms)`.
    pub fn starts(&self, span_ms: u64) -> impl Iterator<Item = u64> {
        let (len, hop) = (self.length_ms, self.hop_ms().max(1));
        let count = if span_ms < len { 0 } else { (span_ms - len) / hop + 1 };
        (0..count).map(move |k| k * hop)
    }

    pub fn window_count(&self, span_ms: u64) -> usize {
        self.starts(span_ms).count()
    }
}

/// Normalized samples of one window, every channel restricted to
/// `[start_ms, end_ms)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WindowGroup {
    pub start_ms: u64,
    pub end_ms: u64,
    pub steering: Vec<SteeringSample>,
    pub pedals: Vec<PedalSample>,
    pub gaze: Vec<GazeSample>,
}

/// Normalized channel streams of a whole session.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SessionChannels {
    pub steering: Vec<SteeringSample>,
    pub pedals: Vec<PedalSample>,
    pub gaze: Vec<GazeSample>,
}

fn in_range<T: Copy>(samples: &[T], t: impl Fn(&T) -> u64, start: u64, end: u64) -> Vec<T> {
    let lo = samples.partition_point(|s| t(s) < start);
    let hi = samples.partition_point(|s| t(s) < end);
    samples[lo..hi].to_vec()
}

/// Cuts a session of length `span_ms` into windows. A session shorter than
/// one window yields nothing.
pub fn slice_windows(channels: &SessionChannels, spec: &WindowSpec, span_ms: u64) -> Vec<WindowGroup> {
    spec.starts(span_ms)
        .map(|start| {
            let end = start + spec.length_ms;
            WindowGroup {
                start_ms: start,
                end_ms: end,
                steering: in_range(&channels.steering, |s| s.t_ms, start, end),
                pedals: in_range(&channels.pedals, |s| s.t_ms, start, end),
                gaze: in_range(&channels.gaze, |s| s.t_ms, start, end),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    /// Steering changes smaller than this are ignored when counting reversals.
    pub steer_hysteresis: f64,
    /// Pedal depth above which a pedal counts as engaged.
    pub pedal_engage: f64,
    /// Throttle/brake ratio reported when the brake was never engaged.
    pub ratio_cap: f64,
    pub gaze_cell_px: u32,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self { steer_hysteresis: 0.005, pedal_engage: 0.02, ratio_cap: 100.0, gaze_cell_px: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringBlock {
    pub sum: f64,
    pub abs_sum: f64,
    pub fluct_times: u32,
    pub volume_per_fluct: f64,
    pub max_fluct: f64,
    pub fluct_speed_mean: f64,
    pub fluct_speed_max: f64,
    /// Sign changes of the angle itself; diagnostic only, not a model input.
    pub zero_crossings: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PedalBlock {
    pub throttle_duration_s: f64,
    pub brake_duration_s: f64,
    pub throttle_brake_ratio: f64,
    pub brake_times: u32,
    pub throttle_auc: f64,
    /// True when the ratio is the cap because the brake was never engaged.
    pub ratio_capped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EyeBlock {
    pub avg_speed_x: f64,
    pub avg_speed_y: f64,
    pub avg_speed_traj: f64,
    pub max_speed_x: f64,
    pub max_speed_y: f64,
    pub max_speed_traj: f64,
    pub gaze_area_ratio: f64,
}

fn secs(dt_ms: u64) -> f64 {
    dt_ms as f64 / 1000.0
}

pub fn steering_features(samples: &[SteeringSample], params: &FeatureParams) -> Result<SteeringBlock, FeatureError> {
    if samples.len() < 2 {
        return Err(FeatureError::TooFewSamples { block: "steering", got: samples.len() });
    }
    let first = samples[0].angle;
    let last = samples[samples.len() - 1].angle;

    let mut abs_sum = 0.0;
    let mut max_fluct: f64 = 0.0;
    let mut speed_sum = 0.0;
    let mut speed_max: f64 = 0.0;
    let mut fluct_times = 0u32;
    let mut last_dir = 0i8;
    let mut zero_crossings = 0u32;
    let mut last_side = 0i8;

    for pair in samples.windows(2) {
        let delta = pair[1].angle - pair[0].angle;
        let magnitude = delta.abs();
        abs_sum += magnitude;
        max_fluct = max_fluct.max(magnitude);
        let speed = magnitude / secs(pair[1].t_ms - pair[0].t_ms);
        speed_sum += speed;
        speed_max = speed_max.max(speed);

        if magnitude >= params.steer_hysteresis && magnitude > 0.0 {
            let dir = if delta > 0.0 { 1 } else { -1 };
            if last_dir != 0 && dir != last_dir {
                fluct_times += 1;
            }
            last_dir = dir;
        }
    }
    for s in samples {
        let side = if s.angle > 0.0 {
            1
        } else if s.angle < 0.0 {
            -1
        } else {
            0
        };
        if side != 0 {
            if last_side != 0 && side != last_side {
                zero_crossings += 1;
            }
            last_side = side;
        }
    }

    let pairs = (samples.len() - 1) as f64;
    Ok(SteeringBlock {
        sum: last - first,
        abs_sum,
        fluct_times,
        volume_per_fluct: if fluct_times == 0 { 0.0 } else { abs_sum / fluct_times as f64 },
        max_fluct,
        fluct_speed_mean: speed_sum / pairs,
        fluct_speed_max: speed_max,
        zero_crossings,
    })
}

/// Each sample holds until the next one; the last holds until `window_end_ms`.
pub fn pedal_features(
    samples: &[PedalSample],
    window_end_ms: u64,
    params: &FeatureParams,
) -> Result<PedalBlock, FeatureError> {
    if samples.len() < 2 {
        return Err(FeatureError::TooFewSamples { block: "pedal", got: samples.len() });
    }
    let mut throttle_duration = 0.0;
    let mut brake_duration = 0.0;
    let mut auc = 0.0;
    let mut brake_times = 0u32;
    let mut braking = false;

    for (i, s) in samples.iter().enumerate() {
        let next_t = samples.get(i + 1).map_or(window_end_ms.max(s.t_ms), |n| n.t_ms);
        let dt = secs(next_t - s.t_ms);
        if s.throttle > params.pedal_engage {
            throttle_duration += dt;
        }
        let pressed = s.brake > params.pedal_engage;
        if pressed {
            brake_duration += dt;
            if !braking {
                brake_times += 1;
            }
        }
        braking = pressed;
        auc += s.throttle * dt;
    }

    let ratio_capped = brake_duration == 0.0;
    let ratio =
        if ratio_capped { params.ratio_cap } else { (throttle_duration / brake_duration).min(params.ratio_cap) };
    Ok(PedalBlock {
        throttle_duration_s: throttle_duration,
        brake_duration_s: brake_duration,
        throttle_brake_ratio: ratio,
        brake_times,
        throttle_auc: auc,
        ratio_capped,
    })
}

/// Grid geometry used for gaze coverage.
#[derive(Debug, Clone, Copy)]
pub struct GazeGrid {
    pub screen_w: u32,
    pub screen_h: u32,
    pub cell_px: u32,
}

impl GazeGrid {
    pub fn cols(&self) -> u32 {
        self.screen_w.div_ceil(self.cell_px)
    }

    pub fn rows(&self) -> u32 {
        self.screen_h.div_ceil(self.cell_px)
    }

    pub fn cell_of(&self, x: f64, y: f64) -> (u32, u32) {
        let c = ((x / self.cell_px as f64).floor().max(0.0) as u32).min(self.cols() - 1);
        let r = ((y / self.cell_px as f64).floor().max(0.0) as u32).min(self.rows() - 1);
        (c, r)
    }

    /// Cell area clipped to the screen edge.
    pub fn cell_area(&self, col: u32, row: u32) -> f64 {
        let w = (self.screen_w - col * self.cell_px).min(self.cell_px);
        let h = (self.screen_h - row * self.cell_px).min(self.cell_px);
        (w as u64 * h as u64) as f64
    }

    pub fn screen_area(&self) -> f64 {
        (self.screen_w as u64 * self.screen_h as u64) as f64
    }
}

pub fn gaze_area_ratio(samples: &[GazeSample], grid: &GazeGrid) -> f64 {
    let cols = grid.cols() as usize;
    let mut occupied = vec![false; cols * grid.rows() as usize];
    let mut area = 0.0;
    for s in samples.iter().filter(|s| s.valid) {
        let (c, r) = grid.cell_of(s.x_px, s.y_px);
        let idx = r as usize * cols + c as usize;
        if !occupied[idx] {
            occupied[idx] = true;
            area += grid.cell_area(c, r);
        }
    }
    area / grid.screen_area()
}

/// Speeds are taken between consecutive valid fixes.
pub fn eye_features(
    samples: &[GazeSample],
    screen_w: u32,
    screen_h: u32,
    params: &FeatureParams,
) -> Result<EyeBlock, FeatureError> {
    let valid: Vec<&GazeSample> = samples.iter().filter(|s| s.valid).collect();
    if valid.len() < 2 {
        return Err(FeatureError::InsufficientGaze { valid: valid.len() });
    }
    let (mut sx, mut sy, mut st) = (0.0, 0.0, 0.0);
    let (mut mx, mut my, mut mt): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for pair in valid.windows(2) {
        let dt = secs(pair[1].t_ms - pair[0].t_ms);
        let dx = (pair[1].x_px - pair[0].x_px).abs();
        let dy = (pair[1].y_px - pair[0].y_px).abs();
        let (vx, vy, vt) = (dx / dt, dy / dt, dx.hypot(dy) / dt);
        sx += vx;
        sy += vy;
        st += vt;
        mx = mx.max(vx);
        my = my.max(vy);
        mt = mt.max(vt);
    }
    let n = (valid.len() - 1) as f64;
    let grid = GazeGrid { screen_w, screen_h, cell_px: params.gaze_cell_px };
    Ok(EyeBlock {
        avg_speed_x: sx / n,
        avg_speed_y: sy / n,
        avg_speed_traj: st / n,
        max_speed_x: mx,
        max_speed_y: my,
        max_speed_traj: mt,
        gaze_area_ratio: gaze_area_ratio(samples, &grid),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub names: Vec<String>,
    pub eye_included: bool,
    pub version: u32,
}

impl FeatureSchema {
    pub fn full() -> Self {
        Self::build(true)
    }

    pub fn eyeless() -> Self {
        Self::build(false)
    }

    pub fn for_eye(eye_included: bool) -> Self {
        Self::build(eye_included)
    }

    fn build(eye: bool) -> Self {
        let mut names: Vec<String> =
            STEERING_FEATURES.iter().chain(PEDAL_FEATURES.iter()).map(|s| s.to_string()).collect();
        if eye {
            names.extend(EYE_FEATURES.iter().map(|s| s.to_string()));
        }
        Self { names, eye_included: eye, version: SCHEMA_VERSION }
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }
}

/// Index ranges of the hand/foot/eye feature groups within a vector.
pub const HAND_RANGE: std::ops::Range<usize> = 0..7;
pub const FOOT_RANGE: std::ops::Range<usize> = 7..12;
pub const EYE_RANGE: std::ops::Range<usize> = 12..19;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowFeatures {
    pub window_start_ms: u64,
    pub window_end_ms: u64,
    pub steering: SteeringBlock,
    pub pedal: PedalBlock,
    pub eye: Option<EyeBlock>,
}

impl WindowFeatures {
    pub fn eye_included(&self) -> bool {
        self.eye.is_some()
    }

    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema::for_eye(self.eye_included())
    }

    /// Feature values in schema order. An eyeless schema drops the eye block
    /// even if it is present.
    pub fn to_vector(&self, eye: bool) -> Option<Vec<f64>> {
        let s = &self.steering;
        let p = &self.pedal;
        let mut v = vec![
            s.sum,
            s.abs_sum,
            s.fluct_times as f64,
            s.volume_per_fluct,
            s.max_fluct,
            s.fluct_speed_mean,
            s.fluct_speed_max,
            p.throttle_duration_s,
            p.brake_duration_s,
            p.throttle_brake_ratio,
            p.brake_times as f64,
            p.throttle_auc,
        ];
        if eye {
            let e = self.eye?;
            v.extend([
                e.avg_speed_x,
                e.avg_speed_y,
                e.avg_speed_traj,
                e.max_speed_x,
                e.max_speed_y,
                e.max_speed_traj,
                e.gaze_area_ratio,
            ]);
        }
        Some(v)
    }

    /// Block invariants that hold for every extraction.
    pub fn check_invariants(&self) -> Result<(), String> {
        let s = &self.steering;
        let span = secs(self.window_end_ms - self.window_start_ms);
        let eps = 1e-12;
        if s.abs_sum.is_nan() || s.abs_sum + eps < s.sum.abs() {
            return Err(format!("abs_sum {} < |sum| {}", s.abs_sum, s.sum.abs()));
        }
        if s.max_fluct > s.abs_sum + eps {
            return Err(format!("max_fluct {} > abs_sum {}", s.max_fluct, s.abs_sum));
        }
        if s.fluct_speed_mean > s.fluct_speed_max * (1.0 + eps) + eps {
            return Err("fluctuation speed mean exceeds max".into());
        }
        let p = &self.pedal;
        for d in [p.throttle_duration_s, p.brake_duration_s] {
            if !(-eps..=span + eps).contains(&d) {
                return Err(format!("duration {d} outside [0, {span}]"));
            }
        }
        if let Some(e) = &self.eye {
            if !(0.0..=1.0).contains(&e.gaze_area_ratio) {
                return Err(format!("gaze area ratio {} outside [0, 1]", e.gaze_area_ratio));
            }
            for (avg, max) in
                [(e.avg_speed_x, e.max_speed_x), (e.avg_speed_y, e.max_speed_y), (e.avg_speed_traj, e.max_speed_traj)]
            {
                if avg > max * (1.0 + eps) + eps {
                    return Err("eye speed mean exceeds max".into());
                }
            }
        }
        Ok(())
    }
}

/// Extracts every block of one window. `eye_allowed` is false when the gaze
/// buffer did not pass verification; the eye block is then absent.
pub fn extract(
    group: &WindowGroup,
    eye_allowed: bool,
    screen: (u32, u32),
    params: &FeatureParams,
) -> Result<WindowFeatures, FeatureError> {
    let steering = steering_features(&group.steering, params)?;
    let pedal = pedal_features(&group.pedals, group.end_ms, params)?;
    let eye = if eye_allowed { eye_features(&group.gaze, screen.0, screen.1, params).ok() } else { None };
    let features =
        WindowFeatures { window_start_ms: group.start_ms, window_end_ms: group.end_ms, steering, pedal, eye };
    debug_assert!(features.check_invariants().is_ok(), "{:?}", features.check_invariants());
    Ok(features)
}
