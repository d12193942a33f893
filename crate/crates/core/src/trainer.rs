//! Base and incremental training, and the full session protocol.
//!
//! Base session: projector 0 and the classifier are trained jointly by
//! mini-batch SGD on `D0`, minimizing mean cross-entropy of the classifier
//! over L2-normalized projector outputs. Projector 0 is then frozen and the
//! memory is seeded with the base class means.
//!
//! Incremental session `t`: a new projector is added, the classifier grows
//! by `N` rows, and for `incr_iters` full-batch steps the loss
//!
//! ```text
//! Σ_{(f,y) ∈ Dt} CE(norm(v(f)), y)  +  Σ_{(m,c) ∈ memory} CE(norm(v(m)), c)
//! ```
//!
//! is minimized over the current projector and the classifier only
//! ([`Reduction::Sum`]; the default [`Reduction::Mean`] divides each term by
//! its count). The new projector is then frozen and the session's class means join the memory.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureDataset, SessionLayout, SessionStream};
use crate::ensemble::{EnsembleMode, EnsembleView, InitMode, ProjectorEnsemble};
use crate::error::{Error, Result};
use crate::memory::{class_means, ClassMeanMemory};
use crate::nn::{
    l2_normalize, l2_normalize_backward, softmax_cross_entropy, Classifier, Linear, OptimizerState, Projector,
    ProjectorDims, ProjectorGrads,
};
use crate::report::{evaluate_session, AccuracyMatrix};
use crate::rng::{substream, Purpose};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const MAX_INCR_ITERS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Pki,
    Pkiv1,
    Pkiv2,
}

/// How the two incremental loss terms are reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Plain sums over examples and memory entries.
    Sum,
    /// Each term divided by its own count.
    Mean,
}

/// Training hyperparameters. Serialized as a flat TOML table; unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub schema_version: u32,
    pub base_epochs: usize,
    pub incr_iters: usize,
    /// Base-session mini-batch size; clamped to the dataset size.
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub momentum: f64,
    pub alpha: f64,
    pub mode: ModeName,
    /// PKIV-2 group size; ignored by the other modes.
    pub k: usize,
    pub hidden_dim: Option<usize>,
    pub output_dim: Option<usize>,
    pub seed: u64,
    pub init_mode: InitMode,
    /// `mean` by default: the summed loss at `lr_max = 0.25` overshoots and
    /// erodes old classes on some streams.
    pub incr_reduction: Reduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            base_epochs: 100,
            incr_iters: 150,
            batch_size: 512,
            lr_max: 0.25,
            lr_min: 0.0,
            momentum: 0.9,
            alpha: 1.0,
            mode: ModeName::Pki,
            k: 3,
            hidden_dim: None,
            output_dim: None,
            seed: 0,
            init_mode: InitMode::Random,
            incr_reduction: Reduction::Mean,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::arg(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn ensemble_mode(&self) -> EnsembleMode {
        match self.mode {
            ModeName::Pki => EnsembleMode::Pki,
            ModeName::Pkiv1 => EnsembleMode::Pkiv1,
            ModeName::Pkiv2 => EnsembleMode::Pkiv2 { k: self.k },
        }
    }

    pub fn set_mode(&mut self, mode: EnsembleMode) {
        match mode {
            EnsembleMode::Pki => self.mode = ModeName::Pki,
            EnsembleMode::Pkiv1 => self.mode = ModeName::Pkiv1,
            EnsembleMode::Pkiv2 { k } => {
                self.mode = ModeName::Pkiv2;
                self.k = k;
            }
        }
    }

    pub fn projector_dims(&self, d: usize) -> ProjectorDims {
        ProjectorDims::new(d, self.hidden_dim.unwrap_or(d), self.output_dim.unwrap_or(d))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::arg(format!(
                "config schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.incr_iters == 0 || self.incr_iters > MAX_INCR_ITERS {
            return Err(Error::arg(format!("incr_iters must lie in 1..={MAX_INCR_ITERS}")));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size must be >= 1"));
        }
        if !(self.lr_max > 0.0 && self.lr_max.is_finite()) {
            return Err(Error::arg("lr_max must be positive"));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_max) {
            return Err(Error::arg("lr_min must lie in [0, lr_max]"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg("momentum must lie in [0, 1)"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::arg("alpha must lie in (0, 1]"));
        }
        if self.k == 0 {
            return Err(Error::arg("k must be >= 1"));
        }
        if self.hidden_dim == Some(0) || self.output_dim == Some(0) {
            return Err(Error::arg("projector widths must be >= 1"));
        }
        Ok(())
    }

    /// Short row label such as `PKIV-2 (k=3)` or `PKI α=0.5`.
    pub fn label(&self) -> String {
        let mut s = self.ensemble_mode().to_string();
        if self.alpha != 1.0 {
            s.push_str(&format!(" α={}", self.alpha));
        }
        if self.init_mode == InitMode::Previous {
            s.push_str(" init=previous");
        }
        s
    }
}

/// Everything needed to continue the protocol: the unit of checkpointing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: TrainConfig,
    pub layout: Option<SessionLayout>,
    pub ensemble: ProjectorEnsemble,
    pub classifier: Classifier,
    pub memory: ClassMeanMemory,
    pub session: usize,
}

impl ModelState {
    pub fn feature_dim(&self) -> usize {
        self.ensemble.dims().input
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.ensemble.validate()?;
        if self.ensemble.session() != self.session {
            return Err(Error::state("ensemble and state disagree on the session index"));
        }
        if self.classifier.input_dim() != self.ensemble.dims().output || !self.classifier.is_finite() {
            return Err(Error::state("classifier does not match the ensemble output"));
        }
        self.memory.validate(self.feature_dim())?;
        if self.ensemble.is_frozen() && self.memory.len() != self.classifier.num_classes() {
            return Err(Error::state(
                "classifier rows and memory size disagree between sessions",
            ));
        }
        Ok(())
    }

    /// Tensors the optimizer may touch: current projector then classifier.
    fn trainable_tensors(&mut self) -> Result<Vec<&mut [f64]>> {
        let current = self.ensemble.trainable_mut()?;
        let mut out: Vec<&mut [f64]> = current.tensors_mut().into_iter().collect();
        out.extend(self.classifier.tensors_mut());
        Ok(out)
    }
}

/// Per-epoch (base) or per-iteration (incremental) training loss.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub losses: Vec<f64>,
}

/// `W · norm(ensemble(f)) + b`.
pub fn forward_logits(ensemble: &ProjectorEnsemble, classifier: &Classifier, f: &[f64]) -> Result<Vec<f64>> {
    let (v, _) = ensemble.forward(f)?;
    let (unit, _) = l2_normalize(&v)?;
    classifier.logits(&unit)
}

/// Argmax of the logits; ties go to the lowest class id.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &z) in logits.iter().enumerate().skip(1) {
        if z > logits[best] {
            best = i;
        }
    }
    best
}

pub fn predict(state: &ModelState, f: &[f64]) -> Result<u32> {
    Ok(argmax(&forward_logits(&state.ensemble, &state.classifier, f)?) as u32)
}

/// Loss and gradients of a weighted sum of cross-entropy terms.
#[derive(Debug, Clone)]
pub struct Objective {
    pub loss: f64,
    pub terms: usize,
    pub projector: ProjectorGrads,
    pub classifier: Linear,
}

impl Objective {
    pub fn zeros(dims: ProjectorDims, classes: usize) -> Result<Self> {
        Ok(Self {
            loss: 0.0,
            terms: 0,
            projector: Projector::zeros(dims)?,
            classifier: Linear::zeros(dims.output, classes),
        })
    }

    fn add(&mut self, other: &Objective) {
        self.loss += other.loss;
        self.terms += other.terms;
        self.projector.add_scaled(&other.projector, 1.0);
        for (a, b) in self.classifier.weight_mut().iter_mut().zip(other.classifier.weight()) {
            *a += b;
        }
        for (a, b) in self.classifier.bias_mut().iter_mut().zip(other.classifier.bias()) {
            *a += b;
        }
    }

    fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.projector.tensors().into_iter().collect();
        out.push(self.classifier.weight());
        out.push(self.classifier.bias());
        out
    }
}

/// Adds `weight · CE(W·norm(v(f)) + b, y)` and its gradients into `acc`.
fn accumulate_term(
    view: &EnsembleView<'_>,
    classifier: &Classifier,
    f: &[f64],
    y: u32,
    weight: f64,
    acc: &mut Objective,
) -> Result<()> {
    let (v, ens_cache) = view.forward(f)?;
    let (unit, norm_cache) = l2_normalize(&v)?;
    let logits = classifier.logits(&unit)?;
    let (loss, mut dlogits) = softmax_cross_entropy(&logits, y as usize)?;
    dlogits.iter_mut().for_each(|g| *g *= weight);
    let dunit = classifier.backward_into(&unit, &dlogits, &mut acc.classifier);
    let dv = l2_normalize_backward(&norm_cache, &dunit);
    view.backward_into(&ens_cache, &dv, &mut acc.projector)?;
    acc.loss += weight * loss;
    acc.terms += 1;
    Ok(())
}

/// Weighted objective over `(feature, label)` pairs.
pub fn objective<'a>(
    ensemble: &ProjectorEnsemble,
    classifier: &Classifier,
    terms: impl IntoIterator<Item = (&'a [f64], u32)>,
    weight: f64,
) -> Result<Objective> {
    let view = ensemble.view();
    let mut acc = Objective::zeros(ensemble.dims(), classifier.num_classes())?;
    for (f, y) in terms {
        accumulate_term(&view, classifier, f, y, weight, &mut acc)?;
    }
    Ok(acc)
}

/// The incremental loss split into its example and memory parts.
#[derive(Debug, Clone)]
pub struct IncrementalObjective {
    pub examples: Objective,
    pub memory: Objective,
}

impl IncrementalObjective {
    pub fn total_loss(&self) -> f64 {
        self.examples.loss + self.memory.loss
    }

    pub fn combined(&self) -> Objective {
        let mut total = self.examples.clone();
        total.add(&self.memory);
        total
    }
}

/// New-session examples plus every memory mean re-projected through the
/// current ensemble.
pub fn incremental_objective(
    ensemble: &ProjectorEnsemble,
    classifier: &Classifier,
    memory: &ClassMeanMemory,
    data: &FeatureDataset,
    reduction: Reduction,
) -> Result<IncrementalObjective> {
    let (wx, wm) = match reduction {
        Reduction::Sum => (1.0, 1.0),
        Reduction::Mean => (1.0 / data.len().max(1) as f64, 1.0 / memory.len().max(1) as f64),
    };
    let examples = objective(ensemble, classifier, data.iter(), wx)?;
    let memory_terms = memory.iter().map(|(c, e)| (e.mean.as_slice(), c));
    let memory = objective(ensemble, classifier, memory_terms, wm)?;
    Ok(IncrementalObjective { examples, memory })
}

fn check_dense_classes(data: &FeatureDataset, first: usize, count: usize, what: &str) -> Result<()> {
    let classes = data.classes();
    let expected: Vec<u32> = (first as u32..(first + count) as u32).collect();
    if classes.iter().copied().ne(expected.iter().copied()) {
        return Err(Error::state(format!(
            "{what} classes must be exactly {first}..{}, found {:?}",
            first + count,
            classes
        )));
    }
    Ok(())
}

/// Trains projector 0 and the classifier on the base session.
pub fn base_train(data: &FeatureDataset, cfg: &TrainConfig) -> Result<(ModelState, TrainLog)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::arg("base session has no training examples"));
    }
    let num_classes = data.classes().len();
    check_dense_classes(data, 0, num_classes, "base")?;

    let dims = cfg.projector_dims(data.dim());
    let projector = Projector::init_indexed(dims, cfg.seed, 0)?;
    let mut state = ModelState {
        config: cfg.clone(),
        layout: None,
        ensemble: ProjectorEnsemble::new(cfg.ensemble_mode(), cfg.alpha, projector)?,
        classifier: Classifier::init(num_classes, dims.output, cfg.seed)?,
        memory: ClassMeanMemory::new(),
        session: 0,
    };

    let mut log = TrainLog::default();
    if cfg.base_epochs > 0 {
        let batch = cfg.batch_size.min(data.len());
        let per_epoch = data.len().div_ceil(batch);
        let mut opt = OptimizerState::new(cfg.momentum, cfg.lr_max, cfg.lr_min, cfg.base_epochs * per_epoch);
        let mut rng = substream(cfg.seed, Purpose::Shuffle, 0);
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..cfg.base_epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(batch) {
                let terms = chunk.iter().map(|&i| (data.features()[i].as_slice(), data.labels()[i]));
                let obj = objective(&state.ensemble, &state.classifier, terms, 1.0 / chunk.len() as f64)?;
                epoch_loss += obj.loss * chunk.len() as f64;
                let grads = obj.tensors();
                opt.scheduled_step(&mut state.trainable_tensors()?, &grads)?;
            }
            log.losses.push(epoch_loss / data.len() as f64);
        }
    }

    state.ensemble.freeze_current();
    state.memory = state.memory.update(&class_means(data)?, 0)?;
    Ok((state, log))
}

/// One incremental session: add, train, freeze, remember.
pub fn incremental_train(
    state: &ModelState,
    data: &FeatureDataset,
    cfg: &TrainConfig,
) -> Result<(ModelState, TrainLog)> {
    cfg.validate()?;
    if cfg.ensemble_mode() != state.ensemble.mode() || cfg.alpha != state.ensemble.alpha() {
        return Err(Error::arg("config mode/alpha differ from the model being trained"));
    }
    if !state.ensemble.is_frozen() {
        return Err(Error::state("previous session's projector has not been frozen"));
    }
    if data.is_empty() {
        return Err(Error::arg("incremental session has no training examples"));
    }
    if data.dim() != state.feature_dim() {
        return Err(Error::arg(format!(
            "session features have dimension {}, model expects {}",
            data.dim(),
            state.feature_dim()
        )));
    }
    if let Some(c) = data.classes().into_iter().find(|&c| state.memory.contains(c)) {
        return Err(Error::state(format!(
            "class {c} was already learned in an earlier session"
        )));
    }
    let new_classes = data.classes().len();
    let seen = state.classifier.num_classes();
    check_dense_classes(data, seen, new_classes, "incremental session")?;

    let t = state.session + 1;
    let mut next = state.clone();
    next.ensemble.add_projector(cfg.init_mode, cfg.seed)?;
    next.classifier = next.classifier.expand(new_classes, cfg.seed)?;
    next.session = t;

    let mut opt = OptimizerState::new(cfg.momentum, cfg.lr_max, cfg.lr_min, cfg.incr_iters);
    let mut log = TrainLog::default();
    for _ in 0..cfg.incr_iters {
        let obj = incremental_objective(&next.ensemble, &next.classifier, &next.memory, data, cfg.incr_reduction)?;
        log.losses.push(obj.total_loss());
        let total = obj.combined();
        let grads = total.tensors();
        opt.scheduled_step(&mut next.trainable_tensors()?, &grads)?;
    }

    next.ensemble.freeze_current();
    next.memory = next.memory.update(&class_means(data)?, t)?;
    Ok((next, log))
}

/// Test sets of sessions `0..=session`.
fn seen_tests(stream: &SessionStream, session: usize) -> Vec<&FeatureDataset> {
    stream.sessions[..=session].iter().map(|s| &s.test).collect()
}

/// Runs every session of `stream`, evaluating after each one.
pub fn run_protocol(stream: &SessionStream, cfg: &TrainConfig) -> Result<(ModelState, AccuracyMatrix)> {
    run_protocol_with(stream, cfg, |_, _| Ok(()))
}

/// [`run_protocol`] with a callback after each session (for checkpointing).
pub fn run_protocol_with<F>(
    stream: &SessionStream,
    cfg: &TrainConfig,
    mut on_session: F,
) -> Result<(ModelState, AccuracyMatrix)>
where
    F: FnMut(&ModelState, &AccuracyMatrix) -> Result<()>,
{
    stream.validate()?;
    let (mut state, _) = base_train(&stream.sessions[0].train, cfg)?;
    state.layout = Some(stream.layout);
    let mut acc = AccuracyMatrix::default();
    acc.push(evaluate_session(&state, &seen_tests(stream, 0))?);
    on_session(&state, &acc)?;
    continue_protocol(state, acc, stream, on_session)
}

/// Continues a run from a state saved at a session boundary.
pub fn resume_protocol<F>(
    state: ModelState,
    acc: AccuracyMatrix,
    stream: &SessionStream,
    on_session: F,
) -> Result<(ModelState, AccuracyMatrix)>
where
    F: FnMut(&ModelState, &AccuracyMatrix) -> Result<()>,
{
    stream.validate()?;
    state.validate()?;
    if state.layout != Some(stream.layout) {
        return Err(Error::state(
            "checkpoint was produced on a stream with a different layout",
        ));
    }
    if acc.per_session.len() != state.session + 1 {
        return Err(Error::state("checkpoint accuracy history does not match its session"));
    }
    continue_protocol(state, acc, stream, on_session)
}

fn continue_protocol<F>(
    mut state: ModelState,
    mut acc: AccuracyMatrix,
    stream: &SessionStream,
    mut on_session: F,
) -> Result<(ModelState, AccuracyMatrix)>
where
    F: FnMut(&ModelState, &AccuracyMatrix) -> Result<()>,
{
    let cfg = state.config.clone();
    for t in state.session + 1..stream.sessions.len() {
        let (next, _) = incremental_train(&state, &stream.sessions[t].train, &cfg)?;
        state = next;
        acc.push(evaluate_session(&state, &seen_tests(stream, t))?);
        on_session(&state, &acc)?;
    }
    Ok((state, acc))
}
