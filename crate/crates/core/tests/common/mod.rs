//! Shared reference implementations and fixtures for the integration tests
//! and the acceptance runner.
#![allow(dead_code)]

use std::collections::HashSet;
use std::net::SocketAddr;
use std::sync::Arc;

use drivewatch_core::features::{
    EyeBlock, FeatureParams, PedalBlock, SteeringBlock, WindowFeatures, WindowGroup, WindowSpec,
};
use drivewatch_core::model::{IrregularityModel, Label, TrainConfig};
use drivewatch_core::pipeline::{session_windows, PipelineConfig};
use drivewatch_core::service::{Server, ServerContext};
use drivewatch_core::synth::{generate_corpus, generate_session, DriverProfile, SynthOptions};
use drivewatch_core::telemetry::{
    BufferStatus, Channel, ChannelSpecs, GazeSample, Group, PedalSample, RawFrame, SessionRecord, SteeringSample,
    StreamState, BUFFER_SPAN_MS,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Feature reference: deliberately naive formulations.

pub fn ref_steering(s: &[SteeringSample], eps: f64) -> SteeringBlock {
    let diffs: Vec<f64> = (1..s.len()).map(|i| s[i].angle - s[i - 1].angle).collect();
    let dts: Vec<f64> = (1..s.len()).map(|i| (s[i].t_ms - s[i - 1].t_ms) as f64 / 1000.0).collect();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let abs_sum: f64 = abs.iter().sum();
    let signs: Vec<i32> =
        diffs.iter().filter(|d| d.abs() >= eps && **d != 0.0).map(|d| if *d > 0.0 { 1 } else { -1 }).collect();
    let fluct = signs.windows(2).filter(|w| w[0] != w[1]).count() as u32;
    let speeds: Vec<f64> = abs.iter().zip(&dts).map(|(a, t)| a / t).collect();
    let sides: Vec<i32> = s.iter().filter(|x| x.angle != 0.0).map(|x| if x.angle > 0.0 { 1 } else { -1 }).collect();
    SteeringBlock {
        sum: s[s.len() - 1].angle - s[0].angle,
        abs_sum,
        fluct_times: fluct,
        volume_per_fluct: if fluct == 0 { 0.0 } else { abs_sum / fluct as f64 },
        max_fluct: abs.iter().cloned().fold(0.0, f64::max),
        fluct_speed_mean: speeds.iter().sum::<f64>() / speeds.len() as f64,
        fluct_speed_max: speeds.iter().cloned().fold(0.0, f64::max),
        zero_crossings: sides.windows(2).filter(|w| w[0] != w[1]).count() as u32,
    }
}

/// Integrates on a 1 ms grid: the held sample at every millisecond of
/// `[first sample, end)`.
pub fn ref_pedal(s: &[PedalSample], end_ms: u64, p: &FeatureParams) -> PedalBlock {
    let (mut thr_ms, mut brk_ms, mut auc_per_ms) = (0u64, 0u64, 0.0);
    let mut presses = 0u32;
    let mut prev_pressed = false;
    let mut idx = 0;
    for t in s[0].t_ms..end_ms {
        while idx + 1 < s.len() && s[idx + 1].t_ms <= t {
            idx += 1;
        }
        let cur = s[idx];
        if cur.throttle > p.pedal_engage {
            thr_ms += 1;
        }
        let pressed = cur.brake > p.pedal_engage;
        if pressed {
            brk_ms += 1;
            if !prev_pressed {
                presses += 1;
            }
        }
        prev_pressed = pressed;
        auc_per_ms += cur.throttle;
    }
    let (thr, brk) = (thr_ms as f64 / 1000.0, brk_ms as f64 / 1000.0);
    let capped = brk_ms == 0;
    PedalBlock {
        throttle_duration_s: thr,
        brake_duration_s: brk,
        throttle_brake_ratio: if capped { p.ratio_cap } else { (thr / brk).min(p.ratio_cap) },
        brake_times: presses,
        throttle_auc: auc_per_ms / 1000.0,
        ratio_capped: capped,
    }
}

pub fn ref_gaze_area(s: &[GazeSample], w: u32, h: u32, cell: u32) -> f64 {
    let cells: HashSet<(u64, u64)> = s
        .iter()
        .filter(|g| g.valid)
        .map(|g| {
            let cx = ((g.x_px.max(0.0) as u64) / cell as u64).min((w as u64 - 1) / cell as u64);
            let cy = ((g.y_px.max(0.0) as u64) / cell as u64).min((h as u64 - 1) / cell as u64);
            (cx, cy)
        })
        .collect();
    let area: u64 = cells
        .iter()
        .map(|&(cx, cy)| {
            let x0 = cx * cell as u64;
            let y0 = cy * cell as u64;
            ((x0 + cell as u64).min(w as u64) - x0) * ((y0 + cell as u64).min(h as u64) - y0)
        })
        .sum();
    area as f64 / (w as f64 * h as f64)
}

pub fn ref_eye(s: &[GazeSample], w: u32, h: u32, p: &FeatureParams) -> Option<EyeBlock> {
    let v: Vec<&GazeSample> = s.iter().filter(|g| g.valid).collect();
    if v.len() < 2 {
        return None;
    }
    let mut sp = Vec::new();
    for i in 1..v.len() {
        let dt = (v[i].t_ms - v[i - 1].t_ms) as f64 / 1000.0;
        let dx = v[i].x_px - v[i - 1].x_px;
        let dy = v[i].y_px - v[i - 1].y_px;
        sp.push((dx.abs() / dt, dy.abs() / dt, (dx * dx + dy * dy).sqrt() / dt));
    }
    let n = sp.len() as f64;
    let mean = |f: fn(&(f64, f64, f64)) -> f64| sp.iter().map(f).sum::<f64>() / n;
    let max = |f: fn(&(f64, f64, f64)) -> f64| sp.iter().map(f).fold(0.0, f64::max);
    Some(EyeBlock {
        avg_speed_x: mean(|t| t.0),
        avg_speed_y: mean(|t| t.1),
        avg_speed_traj: mean(|t| t.2),
        max_speed_x: max(|t| t.0),
        max_speed_y: max(|t| t.1),
        max_speed_traj: max(|t| t.2),
        gaze_area_ratio: ref_gaze_area(s, w, h, p.gaze_cell_px),
    })
}

pub fn ref_features(g: &WindowGroup, screen: (u32, u32), p: &FeatureParams) -> WindowFeatures {
    WindowFeatures {
        window_start_ms: g.start_ms,
        window_end_ms: g.end_ms,
        steering: ref_steering(&g.steering, p.steer_hysteresis),
        pedal: ref_pedal(&g.pedals, g.end_ms, p),
        eye: ref_eye(&g.gaze, screen.0, screen.1, p),
    }
}

pub fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    a == b || (a - b).abs() <= rel * a.abs().max(b.abs()) || (a - b).abs() <= 1e-12
}

fn random_times(rng: &mut ChaCha8Rng, start: u64, end: u64, max_gap: u64) -> Vec<u64> {
    let mut t = start + rng.random_range(0..max_gap.min(end - start));
    let mut out = Vec::new();
    while t < end {
        out.push(t);
        t += rng.random_range(1..=max_gap);
    }
    out
}

/// A random window with irregular timing, plateaus, tiny moves around the
/// hysteresis, pedal runs and invalid or edge-of-screen gaze fixes.
pub fn random_group(rng: &mut ChaCha8Rng) -> WindowGroup {
    let start = rng.random_range(0..100) * 500;
    let len = [1_000, 3_000, 5_000, 10_000][rng.random_range(0..4)];
    let end = start + len;
    let mut angle: f64 = rng.random_range(-0.5..0.5);
    let steering = loop {
        let ts = random_times(rng, start, end, 120);
        if ts.len() >= 2 {
            break ts
                .into_iter()
                .map(|t| {
                    angle = match rng.random_range(0..4) {
                        0 => angle,
                        1 => angle + rng.random_range(-0.006..0.006),
                        _ => angle + rng.random_range(-0.2..0.2),
                    }
                    .clamp(-1.0, 1.0);
                    SteeringSample { t_ms: t, angle }
                })
                .collect::<Vec<_>>();
        }
    };
    let (mut thr, mut brk) = (0.0, 0.0);
    let pedals = loop {
        let ts = random_times(rng, start, end, 150);
        if ts.len() >= 2 {
            break ts
                .into_iter()
                .map(|t| {
                    if rng.random_bool(0.15) {
                        thr = [0.0, 0.01, 0.02, 0.5, 1.0, rng.random_range(0.0..1.0)][rng.random_range(0..6)];
                    }
                    if rng.random_bool(0.1) {
                        brk = [0.0, 0.02, 0.021, 0.7, rng.random_range(0.0..1.0)][rng.random_range(0..5)];
                    }
                    PedalSample { t_ms: t, throttle: thr, brake: brk }
                })
                .collect::<Vec<_>>();
        }
    };
    let gaze = random_times(rng, start, end, 40)
        .into_iter()
        .map(|t| {
            let edge = rng.random_bool(0.05);
            let x = if edge {
                [0.0, 1919.0, 1920.0][rng.random_range(0..3)]
            } else {
                rng.random_range(0.0..1920.0f64).floor()
            };
            let y = if edge {
                [0.0, 1079.0, 1080.0][rng.random_range(0..3)]
            } else {
                rng.random_range(0.0..1080.0f64).floor()
            };
            GazeSample { t_ms: t, x_px: x, y_px: y, valid: !rng.random_bool(0.1) }
        })
        .collect();
    WindowGroup { start_ms: start, end_ms: end, steering, pedals, gaze }
}

/// Compares all 19 feature values (plus the diagnostic fields). Returns the
/// first disagreement.
pub fn compare_features(a: &WindowFeatures, b: &WindowFeatures, rel: f64) -> Result<(), String> {
    let va = a.to_vector(a.eye.is_some()).unwrap();
    let vb = b.to_vector(b.eye.is_some()).unwrap();
    if va.len() != vb.len() {
        return Err(format!("eye block presence differs: {} vs {}", va.len(), vb.len()));
    }
    for (i, (x, y)) in va.iter().zip(&vb).enumerate() {
        if !rel_close(*x, *y, rel) {
            return Err(format!("feature {i}: {x} vs {y}"));
        }
    }
    if a.steering.zero_crossings != b.steering.zero_crossings || a.pedal.ratio_capped != b.pedal.ratio_capped {
        return Err("diagnostic fields differ".into());
    }
    Ok(())
}

/// Triangle wave starting at a trough: `n` full periods of amplitude `a`,
/// `half` samples per half period, 50 ms apart.
pub fn triangle_wave(a: f64, n: usize, half: usize) -> Vec<SteeringSample> {
    let total = 2 * half * n;
    (0..=total)
        .map(|i| {
            let phase = i % (2 * half);
            let frac = if phase <= half { phase as f64 / half as f64 } else { (2 * half - phase) as f64 / half as f64 };
            SteeringSample { t_ms: i as u64 * 50, angle: -a + 2.0 * a * frac }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Clustering reference.

pub fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Minimum two-cluster inertia over every split into two non-empty parts.
pub fn best_two_partition(data: &[Vec<f64>]) -> f64 {
    let n = data.len();
    let d = data[0].len();
    let mut best = f64::INFINITY;
    // Point 0 always in part A; enumerate the rest.
    for mask in 0u32..(1 << (n - 1)) {
        let in_b = |i: usize| i > 0 && mask & (1 << (i - 1)) != 0;
        let nb = (0..n).filter(|&i| in_b(i)).count();
        if nb == 0 {
            continue;
        }
        let mut inertia = 0.0;
        for part in [false, true] {
            let members: Vec<&Vec<f64>> = (0..n).filter(|&i| in_b(i) == part).map(|i| &data[i]).collect();
            let mean: Vec<f64> =
                (0..d).map(|k| members.iter().map(|p| p[k]).sum::<f64>() / members.len() as f64).collect();
            inertia += members.iter().map(|p| sq(p, &mean)).sum::<f64>();
        }
        best = best.min(inertia);
    }
    best
}

/// Small dataset on an integer lattice (exact ties and duplicates happen).
pub fn random_small_dataset(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rng.random_range(2..=8);
    let d = rng.random_range(1..=3);
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-5..=5) as f64).collect()).collect()
}

// ---------------------------------------------------------------------------
// Synthetic corpus fixtures.

pub struct SyntheticFixture {
    pub model: Arc<IrregularityModel>,
    pub held_out: Vec<SessionRecord>,
}

pub fn windows_with_groups(sessions: &[SessionRecord]) -> Vec<(WindowFeatures, Group)> {
    let (spec, params) = (WindowSpec::default(), FeatureParams::default());
    sessions
        .iter()
        .flat_map(|s| {
            session_windows(s, &spec, &params)
                .unwrap()
                .into_iter()
                .filter_map(|o| o.features)
                .map(move |f| (f, s.meta.group))
        })
        .collect()
}

/// Trains on a 9 + 13 corpus of 10-minute sessions; holds out 3 + 3 fresh
/// sessions from a different seed.
pub fn synthetic_fixture(seed: u64) -> SyntheticFixture {
    let opts = SynthOptions::default();
    let train = generate_corpus(9, 13, seed, &opts);
    let windows = windows_with_groups(&train);
    let (w, g): (Vec<WindowFeatures>, Vec<Group>) = windows.into_iter().unzip();
    let baseline: Vec<bool> = g.iter().map(|g| *g == Group::NonPd).collect();
    let model = IrregularityModel::train(&w, &baseline, &TrainConfig::default()).unwrap();
    SyntheticFixture { model: Arc::new(model), held_out: generate_corpus(3, 3, seed + 1000, &opts) }
}

/// Fraction of held-out windows whose label matches the session's group.
pub fn held_out_accuracy(fx: &SyntheticFixture) -> (usize, usize) {
    let mut ok = 0;
    let windows = windows_with_groups(&fx.held_out);
    for (w, g) in &windows {
        let want = if *g == Group::Pd { Label::Irregular } else { Label::Regular };
        ok += usize::from(fx.model.predict(w).unwrap().label == want);
    }
    (ok, windows.len())
}

pub fn short_session(id: &str, profile: DriverProfile, seed: u64, duration_ms: u64) -> SessionRecord {
    generate_session(id, profile, seed, &SynthOptions { duration_ms, gaze_loss: 0.0, scenarios: true })
}

// ---------------------------------------------------------------------------
// Live service fixtures.

pub fn start_server(model: Option<Arc<IrregularityModel>>, cfg: PipelineConfig) -> SocketAddr {
    let server = Server::bind("127.0.0.1:0", ServerContext::new(model, cfg)).unwrap();
    let addr = server.local_addr().unwrap();
    server.spawn();
    addr
}

/// A quickly trained model on four 2-minute sessions, shared per test binary.
pub fn small_model() -> Arc<IrregularityModel> {
    static MODEL: std::sync::OnceLock<Arc<IrregularityModel>> = std::sync::OnceLock::new();
    MODEL
        .get_or_init(|| {
            let corpus = generate_corpus(2, 2, 3, &SynthOptions { duration_ms: 120_000, ..Default::default() });
            let (w, g): (Vec<WindowFeatures>, Vec<Group>) = windows_with_groups(&corpus).into_iter().unzip();
            let baseline: Vec<bool> = g.iter().map(|g| *g == Group::NonPd).collect();
            Arc::new(IrregularityModel::train(&w, &baseline, &TrainConfig::default()).unwrap())
        })
        .clone()
}

// ---------------------------------------------------------------------------
// Buffer integrity fixtures.

/// One frame of `channel`; kind 0 is clean, 1 a missing value, 2 a
/// non-finite value, 3 an invalid gaze fix.
pub fn frame(channel: Channel, kind: u8) -> RawFrame {
    match (channel, kind) {
        (Channel::Steering, 0) => RawFrame::Steering { angle_raw: Some(100.0) },
        (Channel::Steering, 1) => RawFrame::Steering { angle_raw: None },
        (Channel::Steering, _) => RawFrame::Steering { angle_raw: Some(f64::NAN) },
        (Channel::Pedals, 0) => RawFrame::Pedals { throttle_raw: Some(0.0), brake_raw: Some(35_000.0) },
        (Channel::Pedals, 1) => RawFrame::Pedals { throttle_raw: None, brake_raw: Some(35_000.0) },
        (Channel::Pedals, _) => RawFrame::Pedals { throttle_raw: Some(0.0), brake_raw: Some(f64::INFINITY) },
        (Channel::Gaze, 0) => RawFrame::Gaze { x_px: Some(960.0), y_px: Some(540.0), valid: true },
        (Channel::Gaze, 1) => RawFrame::Gaze { x_px: None, y_px: Some(540.0), valid: true },
        (Channel::Gaze, 2) => RawFrame::Gaze { x_px: Some(f64::NAN), y_px: Some(540.0), valid: true },
        (Channel::Gaze, _) => RawFrame::Gaze { x_px: Some(960.0), y_px: Some(540.0), valid: false },
    }
}

pub fn nominal_times(channel: Channel) -> Vec<u64> {
    let n = match channel {
        Channel::Gaze => 1200,
        _ => 200,
    };
    (0..n).map(|i| i * BUFFER_SPAN_MS / n).collect()
}

pub fn status_after(channel: Channel, times: &[u64], kinds: &dyn Fn(usize) -> u8) -> BufferStatus {
    let mut s = StreamState::new(ChannelSpecs::default(), 1920, 1080);
    for (i, &t) in times.iter().enumerate() {
        s.ingest(t, &frame(channel, kinds(i))).unwrap();
    }
    s.close_buffer(channel, 0, BUFFER_SPAN_MS).report.status
}
