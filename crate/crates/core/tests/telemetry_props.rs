mod common;

use common::{frame, nominal_times, status_after};
use drivewatch_core::features::WindowSpec;
use drivewatch_core::telemetry::{
    verify_buffer, BufferStatus, Channel, ChannelSpecs, StreamState, TelemetryError, BUFFER_SPAN_MS,
};
use proptest::prelude::*;

fn brute_force_count(span: u64, len: u64, hop: u64) -> usize {
    let mut k = 0u64;
    while k * hop + len <= span {
        k += 1;
    }
    k as usize
}

#[test]
fn ten_minute_session_has_119_windows() {
    let spec = WindowSpec::default();
    assert_eq!(spec.window_count(600_000), 119);
    assert_eq!(spec.starts(600_000).last(), Some(590_000));
}

fn channel_strategy() -> impl Strategy<Value = Channel> {
    prop_oneof![Just(Channel::Steering), Just(Channel::Pedals), Just(Channel::Gaze)]
}

#[test]
fn clean_nominal_buffers_are_ok() {
    for c in Channel::ALL {
        assert_eq!(status_after(c, &nominal_times(c), &|_| 0), BufferStatus::Ok, "{c}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn window_count_formula(span in 0u64..2_000_000, len in 1u64..60_000, overlap in 0.0f64..0.99) {
        let spec = match WindowSpec::new(len, overlap) {
            Ok(s) => s,
            Err(_) => return Ok(()),
        };
        let hop = spec.hop_ms();
        prop_assert_eq!(hop, (len as f64 * (1.0 - overlap)).round() as u64);
        let expected = if span < len { 0 } else { ((span - len) / hop + 1) as usize };
        prop_assert_eq!(spec.window_count(span), expected);
        prop_assert_eq!(spec.window_count(span), brute_force_count(span, len, hop));
        for s in spec.starts(span) {
            prop_assert!(s + len <= span);
            prop_assert_eq!(s % hop, 0);
        }
    }

    #[test]
    fn any_null_degrades(channel in channel_strategy(),
                         positions in prop::collection::btree_set(0usize..200, 1..20),
                         kind in 1u8..4) {
        let times = nominal_times(channel);
        let kind = if channel != Channel::Gaze && kind == 3 { 2 } else { kind };
        let positions: Vec<usize> = positions.into_iter().map(|p| p * times.len() / 200).collect();
        let st = status_after(channel, &times, &|i| if positions.contains(&i) { kind } else { 0 });
        prop_assert_ne!(st, BufferStatus::Ok);
    }

    #[test]
    fn heavy_drop_degrades(channel in channel_strategy(), drop_frac in 0.3f64..1.0, seed in any::<u64>()) {
        let times = nominal_times(channel);
        let n_drop = (times.len() as f64 * drop_frac).ceil() as usize;
        // Deterministic pseudo-random subset of size n_drop.
        let mut idx: Vec<usize> = (0..times.len()).collect();
        let mut x = seed | 1;
        for i in (1..idx.len()).rev() {
            x ^= x << 13; x ^= x >> 7; x ^= x << 17;
            idx.swap(i, (x % (i as u64 + 1)) as usize);
        }
        let mut kept: Vec<u64> = idx[n_drop..].iter().map(|&i| times[i]).collect();
        kept.sort_unstable();
        let st = status_after(channel, &kept, &|_| 0);
        prop_assert_ne!(st, BufferStatus::Ok);
    }

    #[test]
    fn non_monotonic_always_detected(mut ts in prop::collection::vec(0u64..10_000, 2..300), at in any::<prop::sample::Index>()) {
        ts.sort_unstable();
        ts.dedup();
        prop_assume!(ts.len() >= 2);
        let i = at.index(ts.len() - 1) + 1;
        let mut bad = ts.clone();
        bad[i] = bad[i - 1];
        if bad.len() > i + 1 && i % 2 == 0 {
            bad[i] = bad[i - 1].saturating_sub(1);
        }
        let spec = ChannelSpecs::default().steering;
        let report = verify_buffer(&spec, &bad, 0, BUFFER_SPAN_MS);
        prop_assert!(!report.monotonic);
        prop_assert_eq!(report.status, BufferStatus::Failed);

        let mut s = StreamState::new(ChannelSpecs::default(), 1920, 1080);
        let mut rejected = false;
        for (k, &t) in bad.iter().enumerate() {
            match s.ingest(t, &frame(Channel::Steering, 0)) {
                Ok(()) => prop_assert!(k != i, "violation at {} accepted", k),
                Err(TelemetryError::NonMonotonicTimestamp { .. }) => { prop_assert_eq!(k, i); rejected = true; }
                Err(e) => prop_assert!(false, "unexpected error {}", e),
            }
        }
        prop_assert!(rejected);
    }
}
