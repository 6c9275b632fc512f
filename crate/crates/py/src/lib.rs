//! Python bindings. Structured results cross the boundary as JSON text so
//! they can be loaded with `json.loads`.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use drivewatch_core::alerts::{render_audio_text as render, AlertContent, AudioForm, OperatingMode, ScenarioTag};
use drivewatch_core::features::{FeatureParams, WindowFeatures, WindowSpec};
use drivewatch_core::model::{IrregularityModel, KMeansConfig, TrainConfig};
use drivewatch_core::pipeline::{run_session, PipelineConfig, PrivacyToggle};
use drivewatch_core::service::commands::{feature_dump, train_corpus, TrainOptions};
use drivewatch_core::service::replay::alert_log;
use drivewatch_core::synth::{generate_session, DriverProfile, SynthOptions};
use drivewatch_core::telemetry::{load_session, save_session, Group, SessionRecord};

create_exception!(drivewatch, DrivewatchError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    DrivewatchError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr>(what: &str, s: &str) -> PyResult<T> {
    s.parse().map_err(|_| err(format!("unknown {what} `{s}`")))
}

fn window_spec(window_ms: u64, overlap: f64) -> PyResult<WindowSpec> {
    WindowSpec::new(window_ms, overlap).map_err(err)
}

/// A recorded or synthetic session in raw device units.
#[pyclass(frozen)]
pub struct Session {
    inner: SessionRecord,
}

#[pymethods]
impl Session {
    /// Loads a session directory (meta.json plus per-channel CSV files).
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: load_session(&path).map_err(err)? })
    }

    /// Generates a synthetic session; `profile` is `regular` or `irregular`.
    #[staticmethod]
    #[pyo3(signature = (session_id, profile, seed, duration_ms = 600_000, gaze_loss = 0.0))]
    fn synthetic(session_id: &str, profile: &str, seed: u64, duration_ms: u64, gaze_loss: f64) -> PyResult<Self> {
        let profile = match profile {
            "regular" => DriverProfile::Regular,
            "irregular" => DriverProfile::Irregular,
            other => return Err(err(format!("unknown profile `{other}`"))),
        };
        let opts = SynthOptions { duration_ms, gaze_loss, scenarios: true };
        Ok(Self { inner: generate_session(session_id, profile, seed, &opts) })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_session(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn session_id(&self) -> String {
        self.inner.meta.session_id.clone()
    }

    #[getter]
    fn group(&self) -> String {
        serde_json::to_value(self.inner.meta.group)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default()
    }

    #[getter]
    fn span_ms(&self) -> u64 {
        self.inner.span_ms()
    }

    /// NDJSON, one line per window: buffer reports and features.
    #[pyo3(signature = (window_ms = 10_000, overlap = 0.5))]
    fn windows(&self, window_ms: u64, overlap: f64) -> PyResult<String> {
        feature_dump(&self.inner, &window_spec(window_ms, overlap)?, &FeatureParams::default()).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Session({:?}, group={}, span_ms={})", self.inner.meta.session_id, self.group(), self.span_ms())
    }
}

/// A trained two-cluster model with gaze-aware and eyeless variants.
#[pyclass(frozen)]
pub struct Model {
    inner: Arc<IrregularityModel>,
}

#[pymethods]
impl Model {
    /// Trains on `sessions`; returns `(model, report_json)`.
    #[staticmethod]
    #[pyo3(signature = (sessions, baseline_group = "non_pd", window_ms = 10_000, overlap = 0.5, seed = 0))]
    fn train(
        sessions: Vec<PyRef<'_, Session>>,
        baseline_group: &str,
        window_ms: u64,
        overlap: f64,
        seed: u64,
    ) -> PyResult<(Self, String)> {
        let records: Vec<SessionRecord> = sessions.iter().map(|s| s.inner.clone()).collect();
        let opts = TrainOptions {
            window: window_spec(window_ms, overlap)?,
            baseline_group: parse::<Group>("group", baseline_group)?,
            train: TrainConfig { kmeans: KMeansConfig { seed, ..KMeansConfig::default() } },
            ..TrainOptions::default()
        };
        let (model, report) = train_corpus(&records, &opts).map_err(err)?;
        Ok((Self { inner: Arc::new(model) }, serde_json::to_string(&report).map_err(err)?))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: Arc::new(IrregularityModel::load(&path).map_err(err)?) })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: Arc::new(IrregularityModel::from_json(text).map_err(err)?) })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn has_gaze_variant(&self) -> bool {
        self.inner.full.is_some()
    }

    /// Scores one window given as the `features` object of a window line.
    fn predict(&self, features_json: &str) -> PyResult<String> {
        let w: WindowFeatures = serde_json::from_str(features_json).map_err(err)?;
        let p = self.inner.predict(&w).map_err(err)?;
        serde_json::to_string(&p).map_err(err)
    }
}

/// Runs a session through the pipeline and returns the alert log as NDJSON.
/// `privacy` is a list of `(t_ms, enabled)` toggles.
#[pyfunction]
#[pyo3(signature = (session, model = None, mode = "experience", seed = 0, privacy = Vec::new()))]
fn replay(
    session: PyRef<'_, Session>,
    model: Option<PyRef<'_, Model>>,
    mode: &str,
    seed: u64,
    privacy: Vec<(u64, bool)>,
) -> PyResult<String> {
    let cfg = PipelineConfig { mode: parse::<OperatingMode>("mode", mode)?, seed, ..PipelineConfig::default() };
    let toggles: Vec<PrivacyToggle> =
        privacy.into_iter().map(|(t_ms, enabled)| PrivacyToggle { t_ms, enabled }).collect();
    let outputs = run_session(&session.inner, model.map(|m| Arc::clone(&m.inner)), &cfg, &toggles).map_err(err)?;
    let alerts: Vec<_> = drivewatch_core::pipeline::alerts_of(&outputs).cloned().collect();
    Ok(alert_log(&alerts))
}

/// Spoken prompt for an alert; empty for `sound_only`.
#[pyfunction]
#[pyo3(signature = (content, form, scenario = None))]
fn render_audio_text(content: &str, form: &str, scenario: Option<&str>) -> PyResult<String> {
    let content = match content {
        "hand" => AlertContent::Hand,
        "foot" => AlertContent::Foot,
        "eye" => AlertContent::Eye,
        other => return Err(err(format!("unknown content `{other}`"))),
    };
    let form = parse::<AudioForm>("audio form", form)?;
    let scenario = scenario.map(|s| parse::<ScenarioTag>("scenario", s)).transpose()?;
    Ok(render(content, form, scenario))
}

/// Number of complete windows in a session of `span_ms`.
#[pyfunction]
#[pyo3(signature = (span_ms, window_ms = 10_000, overlap = 0.5))]
fn window_count(span_ms: u64, window_ms: u64, overlap: f64) -> PyResult<usize> {
    Ok(window_spec(window_ms, overlap)?.window_count(span_ms))
}

#[pymodule]
pub fn drivewatch(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DrivewatchError", m.py().get_type::<DrivewatchError>())?;
    m.add_class::<Session>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add_function(wrap_pyfunction!(render_audio_text, m)?)?;
    m.add_function(wrap_pyfunction!(window_count, m)?)?;
    Ok(())
}
