//! Offline operations behind the command-line tool: train, eval, sweep and
//! feature dumps over a directory of recorded sessions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ServiceError;
use crate::features::{FeatureParams, WindowFeatures, WindowSpec};
use crate::model::{
    window_sweep, IrregularityModel, Label, LabelEvidence, ModelError, SweepConfig, SweepReport, TrainConfig,
};
use crate::pipeline::{session_windows, WindowOutcome};
use crate::telemetry::{list_sessions, load_session, Group, SessionRecord};

/// Loads every session directory (one holding `meta.json`) under `root`.
pub fn load_corpus(root: &Path) -> Result<Vec<SessionRecord>, ServiceError> {
    list_sessions(root)?
        .into_iter()
        .map(|dir| {
            load_session(&dir)
                .map_err(|e| ServiceError::Session { session: dir.display().to_string(), source: e.into() })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub window: WindowSpec,
    pub features: FeatureParams,
    pub train: TrainConfig,
    /// Sessions of this group supply the baseline windows.
    pub baseline_group: Group,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            window: WindowSpec::default(),
            features: FeatureParams::default(),
            train: TrainConfig::default(),
            baseline_group: Group::NonPd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionWindowCount {
    pub session_id: String,
    pub group: Group,
    pub windows: usize,
    pub with_gaze: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub eye_included: bool,
    pub n_windows: usize,
    pub n_baseline: usize,
    pub inertia: f64,
    pub iterations: usize,
    pub degenerate: bool,
    pub irregular_cluster: usize,
    pub label_evidence: LabelEvidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub n_sessions: usize,
    pub n_baseline_sessions: usize,
    pub n_windows: usize,
    pub n_baseline_windows: usize,
    pub sessions: Vec<SessionWindowCount>,
    pub variants: Vec<VariantReport>,
    pub warnings: Vec<String>,
}

fn windows_of(
    record: &SessionRecord,
    window: &WindowSpec,
    params: &FeatureParams,
) -> Result<Vec<WindowOutcome>, ServiceError> {
    session_windows(record, window, params)
        .map_err(|source| ServiceError::Session { session: record.meta.session_id.clone(), source })
}

/// Extracts windows from every session and trains both model variants.
pub fn train_corpus(
    sessions: &[SessionRecord],
    opts: &TrainOptions,
) -> Result<(IrregularityModel, TrainReport), ServiceError> {
    let mut windows: Vec<WindowFeatures> = Vec::new();
    let mut baseline = Vec::new();
    let mut counts = Vec::new();
    for s in sessions {
        let outcomes = windows_of(s, &opts.window, &opts.features)?;
        let is_base = s.meta.group == opts.baseline_group;
        let mut c = SessionWindowCount {
            session_id: s.meta.session_id.clone(),
            group: s.meta.group,
            windows: 0,
            with_gaze: 0,
            dropped: 0,
        };
        for o in outcomes {
            match o.features {
                Some(f) => {
                    c.windows += 1;
                    c.with_gaze += usize::from(f.eye_included());
                    windows.push(f);
                    baseline.push(is_base);
                }
                None => c.dropped += 1,
            }
        }
        counts.push(c);
    }
    if windows.len() < 2 {
        return Err(ModelError::EmptyTrainingSet { rows: windows.len() }.into());
    }
    let model = IrregularityModel::train(&windows, &baseline, &opts.train)?;
    let mut warnings = Vec::new();
    let variants: Vec<VariantReport> = model
        .variants()
        .map(|v| {
            let m = &v.train_meta;
            if m.degenerate {
                warnings.push(format!(
                    "DegenerateData: all {} windows of the {} variant are identical; centroids coincide",
                    m.n_windows,
                    if v.schema.eye_included { "gaze-aware" } else { "eyeless" }
                ));
            }
            VariantReport {
                eye_included: v.schema.eye_included,
                n_windows: m.n_windows,
                n_baseline: m.n_baseline,
                inertia: m.inertia,
                iterations: m.iterations_run,
                degenerate: m.degenerate,
                irregular_cluster: v.label_map.irregular_cluster,
                label_evidence: m.label_evidence.clone(),
            }
        })
        .collect();
    if model.full.is_none() {
        warnings.push("no gaze-aware variant: too few windows with usable gaze".into());
    }
    let report = TrainReport {
        n_sessions: sessions.len(),
        n_baseline_sessions: sessions.iter().filter(|s| s.meta.group == opts.baseline_group).count(),
        n_windows: windows.len(),
        n_baseline_windows: baseline.iter().filter(|&&b| b).count(),
        sessions: counts,
        variants,
        warnings,
    };
    Ok((model, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEval {
    pub session_id: String,
    pub group: Group,
    pub windows: usize,
    pub irregular: usize,
    pub regular: usize,
    pub unscored: usize,
    pub irregular_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sessions: Vec<SessionEval>,
    /// Windows whose label matches their session group (pd → irregular,
    /// non_pd → regular), over windows from sessions of known group.
    pub agreement: Option<f64>,
    pub judged_windows: usize,
}

pub fn eval_corpus(
    model: &IrregularityModel,
    sessions: &[SessionRecord],
    window: &WindowSpec,
    params: &FeatureParams,
) -> Result<EvalReport, ServiceError> {
    let mut rows = Vec::new();
    let (mut judged, mut matched) = (0usize, 0usize);
    for s in sessions {
        let mut e = SessionEval {
            session_id: s.meta.session_id.clone(),
            group: s.meta.group,
            windows: 0,
            irregular: 0,
            regular: 0,
            unscored: 0,
            irregular_fraction: None,
        };
        for o in windows_of(s, window, params)? {
            e.windows += 1;
            let Some(f) = o.features else {
                e.unscored += 1;
                continue;
            };
            let label = model
                .predict(&f)
                .map_err(|err| ServiceError::Session { session: s.meta.session_id.clone(), source: err.into() })?
                .label;
            match label {
                Label::Irregular => e.irregular += 1,
                Label::Regular => e.regular += 1,
            }
            let expected = match s.meta.group {
                Group::Pd => Some(Label::Irregular),
                Group::NonPd => Some(Label::Regular),
                Group::Unknown => None,
            };
            if let Some(x) = expected {
                judged += 1;
                matched += usize::from(x == label);
            }
        }
        let scored = e.irregular + e.regular;
        e.irregular_fraction = (scored > 0).then(|| e.irregular as f64 / scored as f64);
        rows.push(e);
    }
    Ok(EvalReport {
        sessions: rows,
        agreement: (judged > 0).then(|| matched as f64 / judged as f64),
        judged_windows: judged,
    })
}

pub fn sweep_corpus(
    sessions: &[SessionRecord],
    lengths_ms: &[u64],
    cfg: &SweepConfig,
) -> Result<SweepReport, ServiceError> {
    if sessions.is_empty() {
        return Err(ModelError::EmptyTrainingSet { rows: 0 }.into());
    }
    Ok(window_sweep(sessions, lengths_ms, cfg)?)
}

/// One line per window: bounds, buffer reports, features or drop reason.
pub fn feature_dump(
    record: &SessionRecord,
    window: &WindowSpec,
    params: &FeatureParams,
) -> Result<String, ServiceError> {
    let mut out = String::new();
    for o in windows_of(record, window, params)? {
        out.push_str(&serde_json::to_string(&o).expect("window outcome serializes"));
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_corpus, SynthOptions};

    #[test]
    fn empty_corpus_is_rejected() {
        let err = train_corpus(&[], &TrainOptions::default()).unwrap_err();
        assert!(matches!(err, ServiceError::Model(ModelError::EmptyTrainingSet { rows: 0 })));
    }

    #[test]
    fn train_and_eval_small_corpus() {
        let corpus = generate_corpus(2, 2, 5, &SynthOptions { duration_ms: 60_000, ..Default::default() });
        let (model, report) = train_corpus(&corpus, &TrainOptions::default()).unwrap();
        assert_eq!(report.n_sessions, 4);
        assert_eq!(report.n_baseline_sessions, 2);
        assert_eq!(report.n_windows, 4 * 11);
        let eval = eval_corpus(&model, &corpus, &WindowSpec::default(), &FeatureParams::default()).unwrap();
        assert_eq!(eval.judged_windows, 44);
        assert!(eval.agreement.unwrap() > 0.9);
    }
}
