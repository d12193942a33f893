//! Finite-difference verification of the incremental objective's gradients.
//!
//! Builds a random ensemble with some frozen sessions, a random classifier,
//! random new-session examples and random memory means, then compares the
//! analytic gradient of the summed incremental loss against central
//! differences for every trainable entry (current projector and classifier).
//! Entries whose perturbation flips any ReLU are skipped, since the loss is
//! not differentiable across the kink.

use rand::Rng;

use crate::data::FeatureDataset;
use crate::ensemble::{EnsembleMode, ProjectorEnsemble};
use crate::error::{Error, Result};
use crate::memory::ClassMeanMemory;
use crate::nn::{l2_normalize, softmax_cross_entropy, Classifier, Linear, Projector, ProjectorDims};
use crate::rng::{substream, Purpose};
use crate::trainer::{incremental_objective, Reduction};

/// Denominator floor of the relative error `|a - n| / max(|a|, |n|, floor)`.
///
/// A central difference with step 1e-5 carries round-off of roughly
/// `eps · loss / step`, about 1e-10 for losses of order ten, so gradient
/// entries below 1e-5 cannot be resolved to a relative 1e-4.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub dims: ProjectorDims,
    pub classes: usize,
    /// Frozen sessions before the current one.
    pub frozen_sessions: usize,
    pub mode: EnsembleMode,
    pub alpha: f64,
    pub seed: u64,
    pub step: f64,
    pub examples_per_class: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            dims: ProjectorDims::square(8),
            classes: 6,
            frozen_sessions: 3,
            mode: EnsembleMode::Pki,
            alpha: 1.0,
            seed: 0,
            step: 1e-5,
            examples_per_class: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    /// Tensors whose error reaches `tolerance`.
    pub fn failures(&self, tolerance: f64) -> Vec<&TensorCheck> {
        self.tensors.iter().filter(|t| !(t.max_rel_error < tolerance)).collect()
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.failures(tolerance).is_empty()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// The randomized problem a gradient check runs on.
#[derive(Debug, Clone)]
pub struct GradCheckProblem {
    pub ensemble: ProjectorEnsemble,
    pub classifier: Classifier,
    pub memory: ClassMeanMemory,
    pub data: FeatureDataset,
}

impl GradCheckProblem {
    pub fn build(cfg: &GradCheckConfig) -> Result<Self> {
        if cfg.classes == 0 || cfg.examples_per_class == 0 {
            return Err(Error::arg("gradient check needs at least one class and example"));
        }
        if !(cfg.step > 0.0) {
            return Err(Error::arg("finite-difference step must be positive"));
        }
        let mut rng = substream(cfg.seed, Purpose::GradCheck, 0);
        let mut noisy = |p: &mut [f64], scale: f64| {
            for x in p {
                *x = scale * (2.0 * rng.random::<f64>() - 1.0);
            }
        };
        let mut weights = Vec::with_capacity(cfg.frozen_sessions + 1);
        for j in 0..=cfg.frozen_sessions {
            let mut p = Projector::init_indexed(cfg.dims, cfg.seed, j as u64)?;
            // non-zero biases keep the output off the origin and exercise bias gradients
            for (i, t) in p.tensors_mut().into_iter().enumerate() {
                if i % 2 == 1 {
                    noisy(t, 0.5);
                }
            }
            weights.push(p);
        }
        let ensemble = ProjectorEnsemble::from_session_weights(cfg.mode, cfg.alpha, weights)?;

        let mut cls = Linear::zeros(cfg.dims.output, cfg.classes);
        noisy(cls.weight_mut(), 1.0);
        noisy(cls.bias_mut(), 0.5);
        let classifier = Classifier::from_linear(cls)?;

        let new = (cfg.classes / 2).max(1);
        let old = cfg.classes - new;
        let mut means = Vec::with_capacity(old);
        for c in 0..old {
            let mut m = vec![0.0; cfg.dims.input];
            noisy(&mut m, 2.0);
            means.push((c as u32, m));
        }
        let memory = ClassMeanMemory::new().update(&means, 0)?;

        let mut data = FeatureDataset::empty(cfg.dims.input);
        for c in old..cfg.classes {
            for _ in 0..cfg.examples_per_class {
                let mut f = vec![0.0; cfg.dims.input];
                noisy(&mut f, 2.0);
                data.push(f, c as u32)?;
            }
        }
        Ok(Self {
            ensemble,
            classifier,
            memory,
            data,
        })
    }

    /// Summed loss by plain forward evaluation, with the ReLU pattern of every
    /// projector application.
    fn loss_and_pattern(
        ensemble: &ProjectorEnsemble,
        classifier: &Classifier,
        terms: &[(&[f64], u32)],
    ) -> Result<(f64, Vec<bool>)> {
        let view = ensemble.view();
        let mut loss = 0.0;
        let mut pattern = Vec::new();
        for &(f, y) in terms {
            let (v, cache) = view.forward(f)?;
            pattern.extend(cache.applications().flat_map(|c| c.activation_pattern()));
            let (unit, _) = l2_normalize(&v)?;
            let logits = classifier.logits(&unit)?;
            loss += softmax_cross_entropy(&logits, y as usize)?.0;
        }
        Ok((loss, pattern))
    }

    pub fn check(&self, step: f64) -> Result<GradCheckReport> {
        let analytic = incremental_objective(
            &self.ensemble,
            &self.classifier,
            &self.memory,
            &self.data,
            Reduction::Sum,
        )?
        .combined();
        let terms: Vec<(&[f64], u32)> = self
            .data
            .iter()
            .chain(self.memory.iter().map(|(c, e)| (e.mean.as_slice(), c)))
            .collect();
        let (_, base_pattern) = Self::loss_and_pattern(&self.ensemble, &self.classifier, &terms)?;

        let mut tensors = Vec::new();
        let current = self
            .ensemble
            .current()
            .ok_or_else(|| Error::FrozenParameter("no trainable projector".into()))?;
        for (ti, name) in Projector::TENSOR_NAMES.iter().enumerate() {
            let len = current.tensors()[ti].len();
            let grads = analytic.projector.tensors()[ti];
            let mut check = TensorCheck {
                name: format!("projector.{name}"),
                max_rel_error: 0.0,
                checked: 0,
                skipped: 0,
            };
            for i in 0..len {
                let eval = |delta: f64| -> Result<(f64, Vec<bool>)> {
                    let mut ens = self.ensemble.clone();
                    ens.trainable_mut()?.tensors_mut()[ti][i] += delta;
                    Self::loss_and_pattern(&ens, &self.classifier, &terms)
                };
                record(&mut check, grads[i], eval(step)?, eval(-step)?, &base_pattern, step);
            }
            tensors.push(check);
        }
        for (ti, name) in ["W", "b"].iter().enumerate() {
            let len = self.classifier.tensors()[ti].len();
            let grads = [analytic.classifier.weight(), analytic.classifier.bias()][ti];
            let mut check = TensorCheck {
                name: format!("classifier.{name}"),
                max_rel_error: 0.0,
                checked: 0,
                skipped: 0,
            };
            for i in 0..len {
                let eval = |delta: f64| -> Result<(f64, Vec<bool>)> {
                    let mut cls = self.classifier.clone();
                    cls.tensors_mut()[ti][i] += delta;
                    Self::loss_and_pattern(&self.ensemble, &cls, &terms)
                };
                record(&mut check, grads[i], eval(step)?, eval(-step)?, &base_pattern, step);
            }
            tensors.push(check);
        }
        Ok(GradCheckReport { tensors })
    }
}

fn record(
    check: &mut TensorCheck,
    analytic: f64,
    plus: (f64, Vec<bool>),
    minus: (f64, Vec<bool>),
    base: &[bool],
    step: f64,
) {
    if plus.1 != base || minus.1 != base {
        check.skipped += 1;
        return;
    }
    let numeric = (plus.0 - minus.0) / (2.0 * step);
    check.max_rel_error = check.max_rel_error.max(relative_error(analytic, numeric));
    check.checked += 1;
}

pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    GradCheckProblem::build(cfg)?.check(cfg.step)
}
