//! Browser demo: three small operations over `pki-core`, exported through
//! wasm-bindgen and driven by `www/index.html`.
//!
//! * [`run_protocol`] trains on a seeded Gaussian-cluster stream and returns
//!   per-session accuracies alongside a nearest-class-mean baseline.
//! * [`cosine_schedule`] samples the learning-rate curve used in training.
//! * [`group_layout`] shows which sessions share a weight sum under each mode.
//!
//! The `*_json` functions are plain Rust so they can be tested natively.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use pki_core::ncm::ncm_protocol;
use pki_core::nn::cosine_lr;
use pki_core::{make_synthetic_stream, run_protocol as run, EnsembleMode, SessionLayout, SynthSpec, TrainConfig};

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoParams {
    pub mode: String,
    pub k: usize,
    pub alpha: f64,
    pub seed: u64,
    pub cluster_std: f64,
    pub sessions: usize,
    pub base_epochs: usize,
    pub incr_iters: usize,
}

impl Default for DemoParams {
    fn default() -> Self {
        Self {
            mode: "pki".into(),
            k: 2,
            alpha: 1.0,
            seed: 1,
            cluster_std: 0.5,
            sessions: 4,
            base_epochs: 40,
            incr_iters: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoResult {
    pub label: String,
    /// Joint accuracy after each session, percent.
    pub joint: Vec<f64>,
    /// Accuracy on base-session classes after each session, percent.
    pub base: Vec<f64>,
    /// Nearest-class-mean baseline on raw features, percent.
    pub ncm: Vec<f64>,
    /// Weight sets the forward pass uses once training ends.
    pub stored_weight_sets: usize,
}

/// Runs the protocol on a 10-base-class, 16-dimensional stream with
/// `sessions` incremental 5-way 5-shot sessions.
pub fn run_protocol_json(params_json: &str) -> Result<String, String> {
    let p: DemoParams = if params_json.trim().is_empty() {
        DemoParams::default()
    } else {
        serde_json::from_str(params_json).map_err(|e| format!("bad parameters: {e}"))?
    };
    if p.sessions > 8 || p.base_epochs > 200 || p.incr_iters > 500 {
        return Err("demo limits: sessions <= 8, base_epochs <= 200, incr_iters <= 500".into());
    }
    let spec = SynthSpec {
        d: 16,
        layout: SessionLayout {
            base_classes: 10,
            num_incremental: p.sessions,
            n_way: 5,
            k_shot: 5,
        },
        cluster_std: p.cluster_std,
        center_scale: 1.0,
        train_per_base_class: 30,
        test_per_class: 30,
        seed: p.seed,
    };
    let stream = make_synthetic_stream(&spec).map_err(|e| e.to_string())?;
    let mut cfg = TrainConfig {
        alpha: p.alpha,
        seed: p.seed,
        base_epochs: p.base_epochs,
        incr_iters: p.incr_iters,
        ..TrainConfig::default()
    };
    cfg.set_mode(EnsembleMode::parse(&p.mode, p.k).map_err(|e| e.to_string())?);
    let (state, acc) = run(&stream, &cfg).map_err(|e| e.to_string())?;
    let ncm = ncm_protocol(&stream).map_err(|e| e.to_string())?;
    let result = DemoResult {
        label: cfg.label(),
        joint: acc.percent(),
        base: acc.per_origin.iter().map(|row| 100.0 * row[0]).collect(),
        ncm: ncm.iter().map(|a| 100.0 * a).collect(),
        stored_weight_sets: state.ensemble.materialized_count(),
    };
    serde_json::to_string(&result).map_err(|e| e.to_string())
}

/// `points` evenly spaced samples of the cosine schedule over `total` steps.
pub fn cosine_points(lr_max: f64, lr_min: f64, total: usize, points: usize) -> Result<Vec<f64>, String> {
    if points < 2 || total == 0 {
        return Err("need total >= 1 and at least two points".into());
    }
    (0..points)
        .map(|i| {
            let step = (i * total + (points - 1) / 2) / (points - 1);
            cosine_lr(step, total, lr_max, lr_min).map_err(|e| e.to_string())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupLayout {
    pub mode: String,
    /// Session indices summed into each forward application, in order. The
    /// last group holds the trainable projector.
    pub groups: Vec<Vec<usize>>,
    pub stored_weight_sets: usize,
}

/// Group structure at session `t` while session `t` trains.
pub fn group_layout_json(mode: &str, k: usize, t: usize) -> Result<String, String> {
    if t > 64 {
        return Err("t must be at most 64".into());
    }
    let mode = EnsembleMode::parse(mode, k).map_err(|e| e.to_string())?;
    let sessions: Vec<usize> = (0..=t).collect();
    let groups: Vec<Vec<usize>> = match mode {
        EnsembleMode::Pki => sessions.iter().map(|&j| vec![j]).collect(),
        EnsembleMode::Pkiv1 => vec![sessions],
        EnsembleMode::Pkiv2 { k } => sessions.chunks(k).map(<[usize]>::to_vec).collect(),
    };
    // count what the engine itself materializes
    let dims = pki_core::ProjectorDims::square(1);
    let weights = (0..=t)
        .map(|j| pki_core::Projector::init_indexed(dims, 0, j as u64))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let ens = pki_core::ProjectorEnsemble::from_session_weights(mode, 1.0, weights).map_err(|e| e.to_string())?;
    let layout = GroupLayout {
        mode: mode.to_string(),
        groups,
        stored_weight_sets: ens.materialized_count(),
    };
    serde_json::to_string(&layout).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn run_protocol(params_json: &str) -> Result<String, JsError> {
    run_protocol_json(params_json).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn cosine_schedule(lr_max: f64, lr_min: f64, total: usize, points: usize) -> Result<Vec<f64>, JsError> {
    cosine_points(lr_max, lr_min, total, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn group_layout(mode: &str, k: usize, t: usize) -> Result<String, JsError> {
    group_layout_json(mode, k, t).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn protocol_returns_one_value_per_session() {
        let out = run_protocol_json(r#"{"sessions": 2, "base_epochs": 10, "incr_iters": 10}"#).unwrap();
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["joint"].as_array().unwrap().len(), 3);
        assert_eq!(v["ncm"].as_array().unwrap().len(), 3);
        assert_eq!(v["stored_weight_sets"], 3);
        assert_eq!(v["label"], "PKI");
    }

    #[test]
    fn protocol_is_deterministic_and_validates_input() {
        let p = r#"{"mode": "pkiv2", "k": 2, "sessions": 2, "base_epochs": 5, "incr_iters": 5}"#;
        assert_eq!(run_protocol_json(p).unwrap(), run_protocol_json(p).unwrap());
        assert!(run_protocol_json(r#"{"sessions": 99}"#).is_err());
        assert!(run_protocol_json(r#"{"speed": 1}"#).is_err());
        assert!(run_protocol_json(r#"{"mode": "nope"}"#).is_err());
        assert!(run_protocol_json(r#"{"alpha": 0}"#).is_err());
    }

    #[test]
    fn schedule_runs_from_max_to_min() {
        let pts = cosine_points(0.25, 0.0, 100, 5).unwrap();
        assert_eq!(pts.len(), 5);
        assert!((pts[0] - 0.25).abs() < 1e-15);
        assert!((pts[2] - 0.125).abs() < 1e-12);
        assert!(pts[4].abs() < 1e-15);
        assert!(cosine_points(0.25, 0.0, 100, 1).is_err());
    }

    #[test]
    fn layouts_match_engine_storage() {
        let v: serde_json::Value = serde_json::from_str(&group_layout_json("pkiv2", 3, 8).unwrap()).unwrap();
        assert_eq!(v["groups"], serde_json::json!([[0, 1, 2], [3, 4, 5], [6, 7, 8]]));
        assert_eq!(v["stored_weight_sets"], 4);
        let v: serde_json::Value = serde_json::from_str(&group_layout_json("pki", 1, 3).unwrap()).unwrap();
        assert_eq!(v["groups"].as_array().unwrap().len(), 4);
        assert_eq!(v["stored_weight_sets"], 4);
        let v: serde_json::Value = serde_json::from_str(&group_layout_json("pkiv1", 1, 5).unwrap()).unwrap();
        assert_eq!(v["stored_weight_sets"], 2);
        assert!(group_layout_json("pkiv2", 0, 3).is_err());
    }
}
