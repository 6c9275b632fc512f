mod common;

use common::{random_group, synthetic_fixture, windows_with_groups};
use drivewatch_core::features::{extract, FeatureParams};
use drivewatch_core::model::{IrregularityModel, ModelError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn save_load_preserves_every_prediction() {
    let fx = synthetic_fixture(5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    fx.model.save(&path).unwrap();
    let loaded = IrregularityModel::load(&path).unwrap();
    assert_eq!(&loaded, fx.model.as_ref());

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let params = FeatureParams::default();
    let mut windows: Vec<_> = (0..100)
        .map(|_| extract(&random_group(&mut rng), rng.random_bool(0.5), (1920, 1080), &params).unwrap())
        .collect();
    windows.extend(windows_with_groups(&fx.held_out[..1]).into_iter().map(|(w, _)| w));
    assert!(windows.iter().any(|w| w.eye_included()) && windows.iter().any(|w| !w.eye_included()));
    for w in &windows {
        assert_eq!(fx.model.predict(w).unwrap(), loaded.predict(w).unwrap());
    }
    // Serialisation is a fixed point.
    assert_eq!(loaded.to_json(), fx.model.to_json());
}

#[test]
fn tampering_is_detected() {
    let fx = synthetic_fixture(6);
    let text = fx.model.to_json();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let c = &mut v["models"][0]["centroids"][0][0];
    *c = serde_json::json!(c.as_f64().unwrap() + 1e-6);
    let err = IrregularityModel::from_json(&v.to_string()).unwrap_err();
    assert!(matches!(err, ModelError::CorruptModel(ref m) if m.contains("checksum")), "{err}");

    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["version"] = serde_json::json!(2);
    assert!(matches!(IrregularityModel::from_json(&v.to_string()), Err(ModelError::VersionMismatch { found: 2, .. })));
    assert!(matches!(IrregularityModel::from_json("not json"), Err(ModelError::CorruptModel(_))));
}
