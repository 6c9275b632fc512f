mod common;

use common::{best_two_partition, random_small_dataset, sq};
use drivewatch_core::model::{inertia_is_monotone, kmeans_fit, kmeans_fit_exhaustive, KMeansConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn recomputed_inertia(data: &[Vec<f64>], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    data.iter().zip(assignments).map(|(p, &a)| sq(p, &centroids[a])).sum()
}

#[test]
fn exhaustive_mode_matches_brute_force_partition() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..200 {
        let data = random_small_dataset(&mut rng);
        let fit = kmeans_fit_exhaustive(&data, 300, 0.0).unwrap();
        let best = best_two_partition(&data);
        assert!(
            (fit.inertia - best).abs() <= 1e-9 * best.max(1.0),
            "case {case}: inertia {} vs optimum {best} for {data:?}",
            fit.inertia
        );
        assert!(
            (recomputed_inertia(&data, &fit.assignments, &fit.centroids) - fit.inertia).abs() <= 1e-9 * best.max(1.0)
        );
        assert!(inertia_is_monotone(&fit.inertia_trace), "case {case}: {:?}", fit.inertia_trace);
    }
}

#[test]
fn seeded_fit_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let data = random_small_dataset(&mut rng);
        let cfg = KMeansConfig { seed: 11, ..KMeansConfig::default() };
        assert_eq!(kmeans_fit(&data, &cfg).unwrap(), kmeans_fit(&data, &cfg).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn inertia_trace_never_increases(
        data in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 4), 2..60),
        seed in any::<u64>(),
    ) {
        let fit = kmeans_fit(&data, &KMeansConfig { seed, ..KMeansConfig::default() }).unwrap();
        prop_assert!(inertia_is_monotone(&fit.inertia_trace), "{:?}", fit.inertia_trace);
        prop_assert!(fit.inertia.is_finite() && fit.inertia >= 0.0);
        prop_assert_eq!(fit.assignments.len(), data.len());
        prop_assert_eq!(fit.centroids.len(), 2);
        // Every point sits with its nearest centroid after convergence.
        for (p, &a) in data.iter().zip(&fit.assignments) {
            prop_assert!(sq(p, &fit.centroids[a]) <= sq(p, &fit.centroids[1 - a]) + 1e-9);
        }
    }
}
