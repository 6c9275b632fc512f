//! Lloyd's algorithm with farthest-point seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { k: 2, max_iter: 300, tol: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after each assignment step, in order.
    pub inertia_trace: Vec<f64>,
    /// Every point identical; centroids coincide.
    pub degenerate: bool,
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid (lowest index on ties) and its squared distance.
pub fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn check_input(data: &[Vec<f64>], k: usize) -> Result<usize, ModelError> {
    if k == 0 || data.len() < k {
        return Err(ModelError::TooFewPoints { points: data.len(), k });
    }
    let dim = data[0].len();
    if dim == 0 {
        return Err(ModelError::DimensionMismatch { expected: 1, got: 0 });
    }
    for (r, row) in data.iter().enumerate() {
        if row.len() != dim {
            return Err(ModelError::DimensionMismatch { expected: dim, got: row.len() });
        }
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteFeature { row: r, column: c });
        }
    }
    Ok(dim)
}

/// Greedy farthest-point seeding: a random first centre, then repeatedly the
/// point farthest from its nearest chosen centre.
pub fn farthest_point_init(data: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![data[rng.random_range(0..data.len())].clone()];
    let mut closest: Vec<f64> = data.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let (far, _) = closest
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
        let c = data[far].clone();
        for (p, d) in data.iter().zip(closest.iter_mut()) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Runs Lloyd's iterations from the given centroids. Stops once no centroid
/// moves more than `tol` or after `max_iter` updates.
pub fn lloyd(data: &[Vec<f64>], init: Vec<Vec<f64>>, max_iter: usize, tol: f64) -> KMeansFit {
    let k = init.len();
    let dim = init[0].len();
    let mut centroids = init;
    let mut assignments = vec![0usize; data.len()];
    let mut dists = vec![0.0; data.len()];
    let mut inertia_trace = Vec::new();
    let mut iterations = 0;

    loop {
        for (i, p) in data.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            assignments[i] = c;
            dists[i] = d;
        }
        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        // Empty cluster: take the point farthest from its centre, from a
        // cluster that can spare one.
        for empty in 0..k {
            if counts[empty] > 0 {
                continue;
            }
            let donor =
                (0..data.len()).filter(|&i| counts[assignments[i]] > 1).fold(
                    None,
                    |best: Option<usize>, i| match best {
                        Some(b) if dists[b] >= dists[i] => Some(b),
                        _ => Some(i),
                    },
                );
            if let Some(i) = donor {
                counts[assignments[i]] -= 1;
                counts[empty] += 1;
                assignments[i] = empty;
                dists[i] = 0.0;
                centroids[empty] = data[i].clone();
            }
        }
        inertia_trace.push(dists.iter().sum());

        if iterations >= max_iter {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        for (p, &a) in data.iter().zip(&assignments) {
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for (c, (sum, &n)) in centroids.iter_mut().zip(sums.iter().zip(&counts)) {
            if n == 0 {
                continue;
            }
            let next: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
            shift = shift.max(sq_dist(c, &next).sqrt());
            *c = next;
        }
        iterations += 1;
        if shift <= tol {
            // Final assignment against the settled centroids.
            for (i, p) in data.iter().enumerate() {
                let (c, d) = nearest(p, &centroids);
                assignments[i] = c;
                dists[i] = d;
            }
            inertia_trace.push(dists.iter().sum());
            break;
        }
    }

    let inertia = *inertia_trace.last().expect("at least one assignment step");
    let degenerate = data.iter().all(|p| p == &data[0]);
    KMeansFit { centroids, assignments, inertia, iterations, inertia_trace, degenerate }
}

pub fn kmeans_fit(data: &[Vec<f64>], cfg: &KMeansConfig) -> Result<KMeansFit, ModelError> {
    check_input(data, cfg.k)?;
    let init = farthest_point_init(data, cfg.k, cfg.seed);
    let fit = lloyd(data, init, cfg.max_iter, cfg.tol);
    if fit.degenerate {
        log::warn!("all {} training points are identical; centroids coincide", data.len());
    }
    Ok(fit)
}

/// Small-instance mode: runs Lloyd's from every pair of distinct points and
/// keeps the lowest-inertia result. Only meaningful for k = 2.
pub fn kmeans_fit_exhaustive(data: &[Vec<f64>], max_iter: usize, tol: f64) -> Result<KMeansFit, ModelError> {
    check_input(data, 2)?;
    let mut best: Option<KMeansFit> = None;
    for i in 0..data.len() {
        for j in i + 1..data.len() {
            if data[i] == data[j] {
                continue;
            }
            let fit = lloyd(data, vec![data[i].clone(), data[j].clone()], max_iter, tol);
            if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
                best = Some(fit);
            }
        }
    }
    Ok(best.unwrap_or_else(|| lloyd(data, vec![data[0].clone(), data[0].clone()], max_iter, tol)))
}

/// Inertia trace never increases beyond float round-off.
pub fn inertia_is_monotone(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    fn sorted_centres(fit: &KMeansFit) -> Vec<f64> {
        let mut c: Vec<f64> = fit.centroids.iter().map(|c| c[0]).collect();
        c.sort_by(f64::total_cmp);
        c
    }

    #[test]
    fn k_equals_n() {
        let fit = kmeans_fit(&pts(&[0.0, 10.0]), &KMeansConfig::default()).unwrap();
        assert_eq!(sorted_centres(&fit), vec![0.0, 10.0]);
        assert_eq!(fit.inertia, 0.0);
    }

    #[test]
    fn two_groups_of_three() {
        let fit = kmeans_fit(&pts(&[0.0, 1.0, 2.0, 10.0, 11.0, 12.0]), &KMeansConfig::default()).unwrap();
        assert_eq!(sorted_centres(&fit), vec![1.0, 11.0]);
        assert!((fit.inertia - 4.0).abs() < 1e-12);
        assert!(inertia_is_monotone(&fit.inertia_trace));
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(
            kmeans_fit(&pts(&[1.0]), &KMeansConfig::default()),
            Err(ModelError::TooFewPoints { points: 1, k: 2 })
        ));
    }

    #[test]
    fn identical_points_are_degenerate() {
        let fit = kmeans_fit(&pts(&[3.0; 5]), &KMeansConfig::default()).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.centroids[0], fit.centroids[1]);
        assert_eq!(fit.inertia, 0.0);
    }

    #[test]
    fn empty_cluster_is_repaired() {
        // Both seeds on the left group; the right group would leave one empty
        // only if seeding were bad, so force it.
        let data = pts(&[0.0, 0.1, 0.2, 5.0]);
        let fit = lloyd(&data, vec![vec![0.1], vec![100.0]], 300, 1e-6);
        assert_eq!(fit.assignments.iter().filter(|&&a| a == 1).count(), 1);
        assert!(inertia_is_monotone(&fit.inertia_trace));
    }

    #[test]
    fn seeding_is_deterministic() {
        let data: Vec<Vec<f64>> = (0..50).map(|i| vec![(i * 7 % 13) as f64, (i % 5) as f64]).collect();
        let a = kmeans_fit(&data, &KMeansConfig { seed: 9, ..Default::default() }).unwrap();
        let b = kmeans_fit(&data, &KMeansConfig { seed: 9, ..Default::default() }).unwrap();
        assert_eq!(a, b);
    }
}
