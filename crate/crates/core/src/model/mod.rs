//! Two-cluster irregularity model: scaling, clustering, cluster labelling,
//! prediction and the versioned model file.

mod kmeans;
mod scaler;
mod sweep;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::{FeatureSchema, WindowFeatures, EYE_RANGE, FOOT_RANGE, HAND_RANGE};

pub use kmeans::{
    farthest_point_init, inertia_is_monotone, kmeans_fit, kmeans_fit_exhaustive, lloyd, nearest, sq_dist, KMeansConfig,
    KMeansFit,
};
pub use scaler::MinMaxScaler;
pub use sweep::{silhouette, window_sweep, SweepConfig, SweepReport, SweepRow};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const CLUSTERS: usize = 2;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training set has {rows} rows; at least 2 are required")]
    EmptyTrainingSet { rows: usize },
    #[error("non-finite feature at row {row}, column {column}")]
    NonFiniteFeature { row: usize, column: usize },
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{points} points cannot form {k} clusters")]
    TooFewPoints { points: usize, k: usize },
    #[error("baseline set is empty")]
    EmptyBaseline,
    #[error("window schema (eye included: {window_eye}) has no matching model variant")]
    SchemaMismatch { window_eye: bool },
    #[error("model format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u64, expected: u32 },
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Regular,
    Irregular,
}

/// Which cluster index is the irregular one. The other is regular.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub irregular_cluster: usize,
}

impl LabelMap {
    pub fn label(&self, cluster: usize) -> Label {
        if cluster == self.irregular_cluster {
            Label::Irregular
        } else {
            Label::Regular
        }
    }

    pub fn regular_cluster(&self) -> usize {
        1 - self.irregular_cluster
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEvidence {
    /// Baseline windows falling in each cluster.
    pub baseline_counts: [usize; 2],
    /// Set when the counts tied and the distance rule decided.
    pub tie_break: bool,
}

/// Cluster→label assignment: the cluster holding the minority of baseline
/// (regular) windows is irregular. On a tie, the centroid farther from the
/// baseline mean is irregular.
pub fn assign_labels(centroids: &[Vec<f64>], baseline: &[Vec<f64>]) -> Result<(LabelMap, LabelEvidence), ModelError> {
    if baseline.is_empty() {
        return Err(ModelError::EmptyBaseline);
    }
    let mut counts = [0usize; 2];
    for b in baseline {
        counts[nearest(b, centroids).0] += 1;
    }
    let (irregular_cluster, tie_break) = if counts[0] != counts[1] {
        (if counts[0] < counts[1] { 0 } else { 1 }, false)
    } else {
        let dim = baseline[0].len();
        let mean: Vec<f64> =
            (0..dim).map(|j| baseline.iter().map(|b| b[j]).sum::<f64>() / baseline.len() as f64).collect();
        let d0 = sq_dist(&centroids[0], &mean);
        let d1 = sq_dist(&centroids[1], &mean);
        (if d1 > d0 { 1 } else { 0 }, true)
    };
    Ok((LabelMap { irregular_cluster }, LabelEvidence { baseline_counts: counts, tie_break }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub n_windows: usize,
    pub n_baseline: usize,
    pub rng_seed: u64,
    pub iterations_run: usize,
    pub inertia: f64,
    pub degenerate: bool,
    pub label_evidence: LabelEvidence,
}

/// One fitted variant for a single feature schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub schema: FeatureSchema,
    pub scaler: MinMaxScaler,
    pub centroids: Vec<Vec<f64>>,
    pub label_map: LabelMap,
    pub train_meta: TrainMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupDeviation {
    pub hand: f64,
    pub foot: f64,
    pub eye: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub window_start_ms: u64,
    pub window_end_ms: u64,
    pub eye_included: bool,
    pub cluster: usize,
    pub label: Label,
    pub distances: [f64; 2],
    pub group_deviation: GroupDeviation,
    /// Some scaled coordinate fell outside [0, 1].
    pub extrapolated: bool,
}

impl Prediction {
    /// Distance to the regular centroid minus distance to the irregular one.
    pub fn margin(&self, label_map: &LabelMap) -> f64 {
        self.distances[label_map.regular_cluster()] - self.distances[label_map.irregular_cluster]
    }
}

fn group_l2(x: &[f64], c: &[f64], range: std::ops::Range<usize>) -> f64 {
    if range.end > x.len() {
        return 0.0;
    }
    sq_dist(&x[range.clone()], &c[range]).sqrt()
}

impl ClusterModel {
    pub fn fit(
        rows: &[Vec<f64>],
        baseline: &[bool],
        schema: FeatureSchema,
        cfg: &KMeansConfig,
    ) -> Result<Self, ModelError> {
        let scaler = MinMaxScaler::fit(rows)?;
        if scaler.dim() != schema.dim() {
            return Err(ModelError::DimensionMismatch { expected: schema.dim(), got: scaler.dim() });
        }
        let scaled: Vec<Vec<f64>> = rows.iter().map(|r| scaler.transform(r)).collect();
        let fit = kmeans_fit(&scaled, &KMeansConfig { k: CLUSTERS, ..*cfg })?;
        let base: Vec<Vec<f64>> = scaled.iter().zip(baseline).filter(|(_, &b)| b).map(|(r, _)| r.clone()).collect();
        let (label_map, label_evidence) = assign_labels(&fit.centroids, &base)?;
        Ok(Self {
            schema,
            scaler,
            centroids: fit.centroids,
            label_map,
            train_meta: TrainMeta {
                n_windows: rows.len(),
                n_baseline: base.len(),
                rng_seed: cfg.seed,
                iterations_run: fit.iterations,
                inertia: fit.inertia,
                degenerate: fit.degenerate,
                label_evidence,
            },
        })
    }

    /// Prediction for an already-scaled vector.
    pub fn predict_scaled(&self, scaled: &[f64]) -> (usize, [f64; 2], GroupDeviation) {
        let distances = [sq_dist(scaled, &self.centroids[0]).sqrt(), sq_dist(scaled, &self.centroids[1]).sqrt()];
        let cluster = if distances[1] < distances[0] { 1 } else { 0 };
        let regular = &self.centroids[self.label_map.regular_cluster()];
        let deviation = GroupDeviation {
            hand: group_l2(scaled, regular, HAND_RANGE),
            foot: group_l2(scaled, regular, FOOT_RANGE),
            eye: group_l2(scaled, regular, EYE_RANGE),
        };
        (cluster, distances, deviation)
    }

    pub fn predict(&self, window: &WindowFeatures) -> Result<Prediction, ModelError> {
        let raw = window
            .to_vector(self.schema.eye_included)
            .ok_or(ModelError::SchemaMismatch { window_eye: window.eye_included() })?;
        let (scaled, extrapolated) = self.scaler.transform_flagged(&raw);
        let (cluster, distances, group_deviation) = self.predict_scaled(&scaled);
        Ok(Prediction {
            window_start_ms: window.window_start_ms,
            window_end_ms: window.window_end_ms,
            eye_included: self.schema.eye_included,
            cluster,
            label: self.label_map.label(cluster),
            distances,
            group_deviation,
            extrapolated,
        })
    }
}

/// The deployable model: one variant with gaze features and one without.
#[derive(Debug, Clone, PartialEq)]
pub struct IrregularityModel {
    pub full: Option<ClusterModel>,
    pub eyeless: Option<ClusterModel>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kmeans: KMeansConfig,
}

impl IrregularityModel {
    /// Fits the eyeless variant on every window and the full variant on the
    /// windows that carry a gaze block (when there are at least two, with at
    /// least one baseline among them).
    pub fn train(windows: &[WindowFeatures], baseline: &[bool], cfg: &TrainConfig) -> Result<Self, ModelError> {
        if windows.len() < 2 {
            return Err(ModelError::EmptyTrainingSet { rows: windows.len() });
        }
        let rows: Vec<Vec<f64>> = windows.iter().map(|w| w.to_vector(false).expect("eyeless vector")).collect();
        let eyeless = ClusterModel::fit(&rows, baseline, FeatureSchema::eyeless(), &cfg.kmeans)?;

        let (eye_rows, eye_base): (Vec<Vec<f64>>, Vec<bool>) =
            windows.iter().zip(baseline).filter_map(|(w, &b)| w.to_vector(true).map(|v| (v, b))).unzip();
        let full = if eye_rows.len() >= 2 && eye_base.iter().any(|&b| b) {
            Some(ClusterModel::fit(&eye_rows, &eye_base, FeatureSchema::full(), &cfg.kmeans)?)
        } else {
            log::warn!("only {} windows carry gaze features; no gaze-aware variant trained", eye_rows.len());
            None
        };
        Ok(Self { full, eyeless: Some(eyeless) })
    }

    /// Variant used for a window: gaze-aware when the window has a gaze block
    /// and such a variant exists, otherwise eyeless.
    pub fn variant_for(&self, window: &WindowFeatures) -> Result<&ClusterModel, ModelError> {
        let chosen =
            if window.eye_included() { self.full.as_ref().or(self.eyeless.as_ref()) } else { self.eyeless.as_ref() };
        chosen.ok_or(ModelError::SchemaMismatch { window_eye: window.eye_included() })
    }

    pub fn predict(&self, window: &WindowFeatures) -> Result<Prediction, ModelError> {
        self.variant_for(window)?.predict(window)
    }

    pub fn variants(&self) -> impl Iterator<Item = &ClusterModel> {
        self.full.iter().chain(self.eyeless.iter())
    }

    fn body(&self) -> ModelBody {
        ModelBody { version: MODEL_FORMAT_VERSION, models: self.variants().cloned().collect() }
    }

    pub fn to_json(&self) -> String {
        let body = self.body();
        let checksum = body.checksum();
        let file = ModelFile { version: body.version, models: body.models, checksum };
        serde_json::to_string_pretty(&file).expect("model serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ModelError::CorruptModel(format!("unparseable: {e}")))?;
        let version = value
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| ModelError::CorruptModel("missing version".into()))?;
        if version != MODEL_FORMAT_VERSION as u64 {
            return Err(ModelError::VersionMismatch { found: version, expected: MODEL_FORMAT_VERSION });
        }
        let file: ModelFile =
            serde_json::from_value(value).map_err(|e| ModelError::CorruptModel(format!("bad structure: {e}")))?;
        let body = ModelBody { version: file.version, models: file.models };
        let expected = body.checksum();
        if expected != file.checksum {
            return Err(ModelError::CorruptModel(format!(
                "checksum mismatch: stored {}, computed {expected}",
                file.checksum
            )));
        }
        let mut model = IrregularityModel { full: None, eyeless: None };
        for m in body.models {
            validate_variant(&m)?;
            let slot = if m.schema.eye_included { &mut model.full } else { &mut model.eyeless };
            if slot.replace(m).is_some() {
                return Err(ModelError::CorruptModel("duplicate schema variant".into()));
            }
        }
        if model.full.is_none() && model.eyeless.is_none() {
            return Err(ModelError::CorruptModel("no model variants".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_json()).map_err(|source| ModelError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text =
            fs::read_to_string(path).map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }
}

fn validate_variant(m: &ClusterModel) -> Result<(), ModelError> {
    let expected = FeatureSchema::for_eye(m.schema.eye_included);
    if m.schema != expected {
        return Err(ModelError::CorruptModel(format!("unknown feature schema {:?}", m.schema.names)));
    }
    let d = expected.dim();
    if m.scaler.min.len() != d || m.scaler.max.len() != d {
        return Err(ModelError::CorruptModel("scaler dimension does not match schema".into()));
    }
    if m.centroids.len() != CLUSTERS || m.centroids.iter().any(|c| c.len() != d || c.iter().any(|v| !v.is_finite())) {
        return Err(ModelError::CorruptModel("expected two finite centroids".into()));
    }
    if m.label_map.irregular_cluster >= CLUSTERS {
        return Err(ModelError::CorruptModel("label map out of range".into()));
    }
    Ok(())
}

#[derive(Serialize)]
struct ModelBody {
    version: u32,
    models: Vec<ClusterModel>,
}

impl ModelBody {
    fn checksum(&self) -> String {
        let canonical = serde_json::to_string(self).expect("model serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    models: Vec<ClusterModel>,
    checksum: String,
}
