//! Synthetic drivers for tests, calibration and demos.
//!
//! The regular profile makes small continuous steering corrections,
//! alternates pressing and releasing the throttle, and brakes every few
//! seconds. The irregular profile sways with large over-corrections, holds
//! the throttle in one long press that deepens slowly, and brakes roughly
//! once every four minutes. Gaze tracking loss can be injected.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::alerts::{ScenarioInterval, ScenarioTag};
use crate::telemetry::{
    pedal_raw_from_depth, FullScale, GazeSample, Group, RawPedals, RawSteering, SessionMeta, SessionRecord,
    DEFAULT_SCREEN_H, DEFAULT_SCREEN_W,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverProfile {
    /// Smooth, modulated driving typical of the baseline group.
    Regular,
    /// Sway, sustained throttle and rare braking.
    Irregular,
}

impl DriverProfile {
    pub fn group(self) -> Group {
        match self {
            DriverProfile::Regular => Group::NonPd,
            DriverProfile::Irregular => Group::Pd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub duration_ms: u64,
    /// Fraction of gaze frames lost, in bursts.
    pub gaze_loss: f64,
    /// Annotate scenario intervals.
    pub scenarios: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { duration_ms: 600_000, gaze_loss: 0.0, scenarios: true }
    }
}

const STEP_MS: u64 = 50;

fn steering_trace(profile: DriverProfile, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (amp, period_s, noise) = match profile {
        DriverProfile::Regular => (rng.random_range(0.015..0.035), rng.random_range(3.0..6.0), 0.0015),
        DriverProfile::Irregular => (rng.random_range(0.15..0.3), rng.random_range(2.0..3.5), 0.008),
    };
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let drift_period: f64 = rng.random_range(20.0..40.0);
    let jitter = Normal::new(0.0, noise).expect("valid sigma");
    (0..n)
        .map(|i| {
            let t = i as f64 * STEP_MS as f64 / 1000.0;
            let sway = amp * (std::f64::consts::TAU * t / period_s + phase).sin();
            let drift = 0.02 * (std::f64::consts::TAU * t / drift_period).sin();
            (sway + drift + jitter.sample(rng)).clamp(-1.0, 1.0)
        })
        .collect()
}

/// Throttle and brake depth per 50 ms step.
fn pedal_trace(profile: DriverProfile, n: usize, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    let steps = |s: f64| (s * 1000.0 / STEP_MS as f64).round().max(1.0) as usize;
    match profile {
        DriverProfile::Regular => {
            let mut next_brake = steps(rng.random_range(1.0..6.0));
            while out.len() < n {
                if out.len() >= next_brake {
                    let depth = rng.random_range(0.3..0.6);
                    for _ in 0..steps(rng.random_range(0.6..1.5)) {
                        out.push((0.0, depth));
                    }
                    next_brake = out.len() + steps(rng.random_range(5.0..8.5));
                    continue;
                }
                let depth = rng.random_range(0.3..0.6);
                for _ in 0..steps(rng.random_range(1.0..2.5)) {
                    out.push((depth, 0.0));
                }
                for _ in 0..steps(rng.random_range(0.4..1.2)) {
                    out.push((0.0, 0.0));
                }
            }
        }
        DriverProfile::Irregular => {
            let mut next_brake = steps(rng.random_range(60.0..240.0));
            while out.len() < n {
                let ramp = steps(rng.random_range(40.0..90.0));
                let (lo, hi) = (rng.random_range(0.15..0.3), rng.random_range(0.75..0.95));
                for k in 0..ramp {
                    if out.len() >= next_brake {
                        let depth = rng.random_range(0.4..0.8);
                        for _ in 0..steps(rng.random_range(1.0..2.0)) {
                            out.push((0.0, depth));
                        }
                        next_brake = out.len() + steps(rng.random_range(200.0..280.0));
                    }
                    out.push((lo + (hi - lo) * k as f64 / ramp as f64, 0.0));
                }
            }
        }
    }
    out.truncate(n);
    out
}

fn gaze_trace(profile: DriverProfile, duration_ms: u64, loss: f64, rng: &mut ChaCha8Rng) -> Vec<GazeSample> {
    let (w, h) = (DEFAULT_SCREEN_W as f64, DEFAULT_SCREEN_H as f64);
    // Fixation region half-extent and duration range.
    let (rx, ry, fix_ms) = match profile {
        DriverProfile::Regular => (650.0, 330.0, 180.0..550.0),
        DriverProfile::Irregular => (260.0, 140.0, 400.0..1200.0),
    };
    let jitter = Normal::new(0.0, 3.0).expect("valid sigma");
    let n = (duration_ms as f64 * 120.0 / 1000.0).floor() as u64;
    let mut out = Vec::with_capacity(n as usize);
    let mut fix_until = 0u64;
    let (mut fx, mut fy) = (w / 2.0, h / 2.0);
    let mut lost_until = 0u64;
    for i in 0..n {
        let t = i * 1000 / 120;
        if t >= fix_until {
            fx = w / 2.0 + rng.random_range(-rx..rx);
            fy = h / 2.0 + rng.random_range(-ry..ry);
            fix_until = t + rng.random_range(fix_ms.clone()) as u64;
        }
        if loss > 0.0 && t >= lost_until && rng.random_bool((loss / 60.0).min(1.0)) {
            // Bursts average ~60 frames.
            lost_until = t + rng.random_range(250..750);
        }
        if t < lost_until {
            continue;
        }
        let x = (fx + jitter.sample(rng)).clamp(0.0, w);
        let y = (fy + jitter.sample(rng)).clamp(0.0, h);
        out.push(GazeSample { t_ms: t, x_px: x.round(), y_px: y.round(), valid: true });
    }
    out
}

fn scenario_plan(duration_ms: u64, rng: &mut ChaCha8Rng) -> Vec<ScenarioInterval> {
    let mut out = Vec::new();
    let mut t = rng.random_range(5_000..20_000);
    while t + 20_000 < duration_ms {
        let tag = ScenarioTag::ALL[rng.random_range(0..ScenarioTag::ALL.len())];
        let len = rng.random_range(15_000..40_000);
        out.push(ScenarioInterval { tag, t0_ms: t, t1_ms: (t + len).min(duration_ms) });
        t += len + rng.random_range(10_000..40_000);
    }
    out
}

/// One synthetic session in raw device units.
pub fn generate_session(session_id: &str, profile: DriverProfile, seed: u64, opts: &SynthOptions) -> SessionRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = FullScale::default();
    let n = (opts.duration_ms / STEP_MS) as usize;
    let steering = steering_trace(profile, n, &mut rng)
        .into_iter()
        .enumerate()
        .map(|(i, a)| RawSteering { t_ms: i as u64 * STEP_MS, angle_raw: (a * fs.steering).round() })
        .collect();
    let pedals = pedal_trace(profile, n, &mut rng)
        .into_iter()
        .enumerate()
        .map(|(i, (th, br))| RawPedals {
            t_ms: i as u64 * STEP_MS,
            throttle_raw: pedal_raw_from_depth(th, fs.pedals).round(),
            brake_raw: pedal_raw_from_depth(br, fs.pedals).round(),
        })
        .collect();
    let gaze = gaze_trace(profile, opts.duration_ms, opts.gaze_loss, &mut rng);
    let scenarios = if opts.scenarios { scenario_plan(opts.duration_ms, &mut rng) } else { Vec::new() };
    SessionRecord {
        meta: SessionMeta {
            session_id: session_id.to_string(),
            group: profile.group(),
            screen_w: DEFAULT_SCREEN_W,
            screen_h: DEFAULT_SCREEN_H,
            full_scale: fs,
            scenarios,
        },
        steering,
        pedals,
        gaze,
    }
}

/// `n_irregular` irregular and `n_regular` regular sessions. Every fourth
/// session of each group has lossy gaze tracking.
pub fn generate_corpus(n_irregular: usize, n_regular: usize, seed: u64, opts: &SynthOptions) -> Vec<SessionRecord> {
    let mut out = Vec::with_capacity(n_irregular + n_regular);
    let mut plan = |prefix: &str, profile: DriverProfile, count: usize, salt: u64| {
        for i in 0..count {
            let lossy = i % 4 == 3;
            let o = SynthOptions { gaze_loss: if lossy { opts.gaze_loss.max(0.3) } else { opts.gaze_loss }, ..*opts };
            let s = seed.wrapping_mul(1_000_003).wrapping_add(salt * 10_007 + i as u64);
            out.push(generate_session(&format!("{prefix}{:02}", i + 1), profile, s, &o));
        }
    };
    plan("pd", DriverProfile::Irregular, n_irregular, 1);
    plan("nc", DriverProfile::Regular, n_regular, 2);
    out
}
