//! Window-length sweep: retrain per length and compare clustering quality.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sq_dist, IrregularityModel, Label, ModelError, TrainConfig};
use crate::features::{FeatureParams, WindowSpec};
use crate::pipeline::{session_windows, PipelineError};
use crate::telemetry::{Group, SessionRecord};

/// Mean silhouette coefficient of a labelled point set. Points in singleton
/// clusters score 0.
pub fn silhouette(points: &[Vec<f64>], assignments: &[usize], k: usize) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let sizes: Vec<usize> = (0..k).map(|c| assignments.iter().filter(|&&a| a == c).count()).collect();
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let own = assignments[i];
        if sizes[own] <= 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for (j, q) in points.iter().enumerate() {
            if i != j {
                sums[assignments[j]] += sq_dist(p, q).sqrt();
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() && a.max(b) > 0.0 {
            total += (b - a) / a.max(b);
        }
    }
    total / points.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub overlap_frac: f64,
    pub features: FeatureParams,
    pub train: TrainConfig,
    /// Silhouette is quadratic; larger window sets are subsampled to this size.
    pub silhouette_sample: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            overlap_frac: 0.5,
            features: FeatureParams::default(),
            train: TrainConfig::default(),
            silhouette_sample: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub length_ms: u64,
    pub evaluable: bool,
    pub n_windows: usize,
    pub silhouette: Option<f64>,
    /// Fraction of windows whose label matches the session group.
    pub separation_rate: Option<f64>,
    pub rank: Option<usize>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn best(&self) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.rank == Some(1))
    }
}

fn expected_label(group: Group) -> Option<Label> {
    match group {
        Group::Pd => Some(Label::Irregular),
        Group::NonPd => Some(Label::Regular),
        Group::Unknown => None,
    }
}

fn evaluate_length(sessions: &[SessionRecord], length_ms: u64, cfg: &SweepConfig) -> Result<SweepRow, PipelineError> {
    let not_evaluable = |n: usize, note: String| SweepRow {
        length_ms,
        evaluable: false,
        n_windows: n,
        silhouette: None,
        separation_rate: None,
        rank: None,
        note: Some(note),
    };
    let spec = WindowSpec::new(length_ms, cfg.overlap_frac).map_err(|e| PipelineError::Config(e.to_string()))?;
    let mut windows = Vec::new();
    let mut groups = Vec::new();
    for s in sessions {
        for w in session_windows(s, &spec, &cfg.features)? {
            if let Some(f) = w.features {
                windows.push(f);
                groups.push(s.meta.group);
            }
        }
    }
    let baseline: Vec<bool> = groups.iter().map(|g| *g == Group::NonPd).collect();
    if windows.len() < 2 {
        return Ok(not_evaluable(windows.len(), "corpus too short for this window length".into()));
    }
    if !baseline.iter().any(|&b| b) {
        return Ok(not_evaluable(windows.len(), "no baseline windows at this length".into()));
    }
    let model = match IrregularityModel::train(&windows, &baseline, &cfg.train) {
        Ok(m) => m,
        Err(
            e @ (ModelError::TooFewPoints { .. } | ModelError::EmptyTrainingSet { .. } | ModelError::EmptyBaseline),
        ) => return Ok(not_evaluable(windows.len(), e.to_string())),
        Err(e) => return Err(e.into()),
    };

    let mut matched = 0usize;
    let mut judged = 0usize;
    for (w, g) in windows.iter().zip(&groups) {
        if let Some(expected) = expected_label(*g) {
            judged += 1;
            if model.predict(w)?.label == expected {
                matched += 1;
            }
        }
    }

    let eyeless = model.eyeless.as_ref().expect("training always fits the eyeless variant");
    let mut idx: Vec<usize> = (0..windows.len()).collect();
    if idx.len() > cfg.silhouette_sample {
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.train.kmeans.seed ^ length_ms));
        idx.truncate(cfg.silhouette_sample);
    }
    let mut points = Vec::with_capacity(idx.len());
    let mut assign = Vec::with_capacity(idx.len());
    for &i in &idx {
        let scaled = eyeless.scaler.transform(&windows[i].to_vector(false).expect("eyeless vector"));
        assign.push(eyeless.predict_scaled(&scaled).0);
        points.push(scaled);
    }

    Ok(SweepRow {
        length_ms,
        evaluable: true,
        n_windows: windows.len(),
        silhouette: Some(silhouette(&points, &assign, 2)),
        separation_rate: (judged > 0).then(|| matched as f64 / judged as f64),
        rank: None,
        note: None,
    })
}

/// Retrains on each window length (half-length hop) and ranks lengths by
/// separation rate, then silhouette.
pub fn window_sweep(
    sessions: &[SessionRecord],
    lengths_ms: &[u64],
    cfg: &SweepConfig,
) -> Result<SweepReport, PipelineError> {
    let mut rows = lengths_ms.iter().map(|&l| evaluate_length(sessions, l, cfg)).collect::<Result<Vec<_>, _>>()?;
    let mut order: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].evaluable).collect();
    let key = |r: &SweepRow| (r.separation_rate.unwrap_or(-1.0), r.silhouette.unwrap_or(-1.0));
    order.sort_by(|&a, &b| {
        let (ka, kb) = (key(&rows[a]), key(&rows[b]));
        kb.0.total_cmp(&ka.0).then(kb.1.total_cmp(&ka.1))
    });
    for (rank, i) in order.into_iter().enumerate() {
        rows[i].rank = Some(rank + 1);
    }
    Ok(SweepReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silhouette_of_separated_pairs() {
        let pts = vec![vec![0.0], vec![1.0], vec![10.0], vec![11.0]];
        let s = silhouette(&pts, &[0, 0, 1, 1], 2);
        // a = 1; b is the mean distance to the other pair: 10.5 or 9.5.
        let exact = ((10.5 - 1.0) / 10.5 + (9.5 - 1.0) / 9.5 + (9.5 - 1.0) / 9.5 + (10.5 - 1.0) / 10.5) / 4.0;
        assert!((s - exact).abs() < 1e-12, "{s} vs {exact}");
    }

    #[test]
    fn singleton_cluster_scores_zero() {
        let pts = vec![vec![0.0], vec![5.0]];
        assert_eq!(silhouette(&pts, &[0, 1], 2), 0.0);
    }
}
