//! The projector ensemble and its two weight-compressed variants.
//!
//! Every session `t` contributes one projector `w(t)`. Incremental-session
//! projectors (`t >= 1`) are scaled by the influence factor `alpha`; the base
//! projector never is. The three modes aggregate them differently:
//!
//! * **PKI** keeps every projector and sums their outputs:
//!   `v = φ(f; w0) + alpha · Σ_{j>=1} φ(f; wj)`.
//! * **PKIV-1** keeps a single running weight sum and applies it once:
//!   `v = φ(f; w0 + alpha · Σ_{j>=1} wj)`.
//! * **PKIV-2(k)** partitions sessions into disjoint groups of `k`
//!   (`{0..k-1}, {k..2k-1}, ...`). Completed groups are stored as weight sums;
//!   the open group (residual) holds the remaining sessions including the
//!   current one. The output sums one application per group. With `k = 1`
//!   this is PKI; with `k > t` it is PKIV-1.
//!
//! Group sums are materialized when a projector is frozen, so forward cost
//! in the variants does not grow with the session count. Gradients only ever
//! reach the current projector.

use std::borrow::Cow;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{ForwardCache, Projector, ProjectorDims, ProjectorGrads};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnsembleMode {
    Pki,
    Pkiv1,
    Pkiv2 { k: usize },
}

impl EnsembleMode {
    /// Parses `pki`, `pkiv1` or `pkiv2`; `k` is only consulted for `pkiv2`.
    pub fn parse(name: &str, k: usize) -> Result<Self> {
        match name.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "pki" => Ok(Self::Pki),
            "pkiv1" => Ok(Self::Pkiv1),
            "pkiv2" => {
                if k == 0 {
                    return Err(Error::arg("PKIV-2 needs a group size k >= 1"));
                }
                Ok(Self::Pkiv2 { k })
            }
            other => Err(Error::arg(format!("unknown ensemble mode {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Pki => "pki",
            Self::Pkiv1 => "pkiv1",
            Self::Pkiv2 { .. } => "pkiv2",
        }
    }

    fn group_size(&self) -> Option<usize> {
        match *self {
            Self::Pki => Some(1),
            Self::Pkiv1 => None,
            Self::Pkiv2 { k } => Some(k),
        }
    }
}

impl fmt::Display for EnsembleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Pki => f.write_str("PKI"),
            Self::Pkiv1 => f.write_str("PKIV-1"),
            Self::Pkiv2 { k } => write!(f, "PKIV-2 (k={k})"),
        }
    }
}

/// How a new session's projector starts out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Random,
    Previous,
}

impl std::str::FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(Self::Random),
            "previous" => Ok(Self::Previous),
            other => Err(Error::arg(format!("unknown init mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectorEnsemble {
    mode: EnsembleMode,
    alpha: f64,
    dims: ProjectorDims,
    /// Index of the current projector, or of the last frozen one.
    session: usize,
    /// PKI: every frozen projector. PKIV-2: completed group sums. PKIV-1: empty.
    groups: Vec<Projector>,
    /// Weight sum of the frozen members of the open group (PKIV-1: all of them).
    residual: Option<Projector>,
    residual_members: usize,
    current: Option<Projector>,
    /// Raw weights of the last frozen projector, consumed by the next
    /// `add_projector`. Not part of the forward computation.
    previous: Option<Projector>,
}

/// Byte-level content hash of a projector.
pub fn projector_hash(p: &Projector) -> [u8; 32] {
    let mut h = Sha256::new();
    for t in p.tensors() {
        for x in t {
            h.update(x.to_le_bytes());
        }
    }
    h.finalize().into()
}

fn accumulate(slot: &mut Option<Projector>, w: &Projector, scale: f64) {
    match slot {
        Some(sum) => sum.add_scaled(w, scale),
        None => *slot = Some(w.scaled(scale)),
    }
}

impl ProjectorEnsemble {
    /// Session-0 ensemble whose trainable projector is `base`.
    pub fn new(mode: EnsembleMode, alpha: f64, base: Projector) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::arg(format!("alpha must lie in (0, 1], got {alpha}")));
        }
        if let EnsembleMode::Pkiv2 { k: 0 } = mode {
            return Err(Error::arg("PKIV-2 needs a group size k >= 1"));
        }
        base.validate()?;
        Ok(Self {
            mode,
            alpha,
            dims: base.dims(),
            session: 0,
            groups: Vec::new(),
            residual: None,
            residual_members: 0,
            current: Some(base),
            previous: None,
        })
    }

    pub fn mode(&self) -> EnsembleMode {
        self.mode
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dims(&self) -> ProjectorDims {
        self.dims
    }

    pub fn session(&self) -> usize {
        self.session
    }

    pub fn current(&self) -> Option<&Projector> {
        self.current.as_ref()
    }

    pub fn is_frozen(&self) -> bool {
        self.current.is_none()
    }

    /// PKI: the frozen projectors. PKIV-2: completed group sums.
    pub fn frozen_groups(&self) -> &[Projector] {
        &self.groups
    }

    pub fn residual(&self) -> Option<&Projector> {
        self.residual.as_ref()
    }

    /// Scale applied to session `j`'s projector.
    pub fn session_scale(&self, j: usize) -> f64 {
        if j == 0 {
            1.0
        } else {
            self.alpha
        }
    }

    /// Mutable access to the trainable projector.
    pub fn trainable_mut(&mut self) -> Result<&mut Projector> {
        self.current.as_mut().ok_or_else(|| {
            Error::FrozenParameter(format!(
                "session {} projector is frozen; add a projector before training",
                self.session
            ))
        })
    }

    /// Moves the current projector into frozen storage. No-op when already frozen.
    pub fn freeze_current(&mut self) {
        let Some(current) = self.current.take() else {
            return;
        };
        let scale = self.session_scale(self.session);
        match self.mode {
            EnsembleMode::Pki => self.groups.push(current.clone()),
            EnsembleMode::Pkiv1 | EnsembleMode::Pkiv2 { .. } => {
                accumulate(&mut self.residual, &current, scale);
                self.residual_members += 1;
                if self.mode.group_size() == Some(self.residual_members) {
                    self.groups.extend(self.residual.take());
                    self.residual_members = 0;
                }
            }
        }
        self.previous = Some(current);
    }

    /// Installs the next session's projector and advances the session counter.
    ///
    /// `Random` draws from substream `t` of `seed`, where `t` is the new
    /// session index, so one run seed yields distinct per-session projectors.
    pub fn add_projector(&mut self, init: InitMode, seed: u64) -> Result<()> {
        if self.current.is_some() {
            return Err(Error::state(format!(
                "session {} projector must be frozen before adding another",
                self.session
            )));
        }
        let next = match init {
            InitMode::Random => Projector::init_indexed(self.dims, seed, self.session as u64 + 1)?,
            InitMode::Previous => self
                .previous
                .clone()
                .ok_or_else(|| Error::state("no previous projector to copy"))?,
        };
        self.install(next);
        Ok(())
    }

    /// Installs a caller-supplied projector as the next session's.
    pub fn add_projector_with(&mut self, projector: Projector) -> Result<()> {
        if self.current.is_some() {
            return Err(Error::state(format!(
                "session {} projector must be frozen before adding another",
                self.session
            )));
        }
        if projector.dims() != self.dims {
            return Err(Error::arg(format!(
                "projector dims {:?} differ from ensemble dims {:?}",
                projector.dims(),
                self.dims
            )));
        }
        projector.validate()?;
        self.install(projector);
        Ok(())
    }

    fn install(&mut self, projector: Projector) {
        self.previous = None;
        self.current = Some(projector);
        self.session += 1;
    }

    /// Builds an ensemble from per-session weights, freezing all but the last.
    pub fn from_session_weights(mode: EnsembleMode, alpha: f64, weights: Vec<Projector>) -> Result<Self> {
        let mut iter = weights.into_iter();
        let base = iter.next().ok_or_else(|| Error::arg("need at least one projector"))?;
        let mut ens = Self::new(mode, alpha, base)?;
        for w in iter {
            ens.freeze_current();
            ens.add_projector_with(w)?;
        }
        Ok(ens)
    }

    /// Number of projector-sized weight sets used by the forward pass.
    pub fn materialized_count(&self) -> usize {
        self.groups.len() + usize::from(self.residual.is_some()) + usize::from(self.current.is_some())
    }

    /// Weight-sum projectors of the variants, residual and current merged into one.
    pub fn effective_weight_groups(&self) -> Result<Vec<Projector>> {
        if self.mode == EnsembleMode::Pki {
            return Err(Error::UnsupportedMode(self.mode.to_string()));
        }
        let mut out = self.groups.clone();
        let mut open = self.residual.clone();
        if let Some(cur) = &self.current {
            accumulate(&mut open, cur, self.session_scale(self.session));
        }
        out.extend(open);
        Ok(out)
    }

    /// Content hashes of every frozen weight set: groups, then the residual.
    pub fn frozen_hashes(&self) -> Vec<[u8; 32]> {
        self.groups
            .iter()
            .chain(self.residual.as_ref())
            .map(projector_hash)
            .collect()
    }

    /// Freezes the per-example parameters of a forward pass.
    pub fn view(&self) -> EnsembleView<'_> {
        let mut fixed = Vec::with_capacity(self.groups.len() + 1);
        match self.mode {
            EnsembleMode::Pki => {
                for (j, p) in self.groups.iter().enumerate() {
                    fixed.push((p, self.session_scale(j)));
                }
            }
            EnsembleMode::Pkiv1 | EnsembleMode::Pkiv2 { .. } => {
                fixed.extend(self.groups.iter().map(|p| (p, 1.0)));
            }
        }
        let scale = self.session_scale(self.session);
        let trainable = match (&self.current, self.mode) {
            (Some(cur), EnsembleMode::Pki) => Some(Trainable {
                effective: Cow::Borrowed(cur),
                out_scale: scale,
                weight_scale: 1.0,
            }),
            (Some(cur), _) => {
                let mut eff = self.residual.clone();
                accumulate(&mut eff, cur, scale);
                Some(Trainable {
                    effective: Cow::Owned(eff.expect("just accumulated")),
                    out_scale: 1.0,
                    weight_scale: scale,
                })
            }
            (None, _) => {
                fixed.extend(self.residual.iter().map(|p| (p, 1.0)));
                None
            }
        };
        EnsembleView {
            dims: self.dims,
            fixed,
            trainable,
        }
    }

    pub fn forward(&self, f: &[f64]) -> Result<(Vec<f64>, EnsembleCache)> {
        self.view().forward(f)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::state("alpha outside (0, 1]"));
        }
        let all = self
            .groups
            .iter()
            .chain(&self.residual)
            .chain(&self.current)
            .chain(&self.previous);
        for p in all {
            p.validate()?;
            if p.dims() != self.dims {
                return Err(Error::state("ensemble projectors disagree in shape"));
            }
        }
        let frozen = if self.current.is_some() {
            self.session
        } else {
            self.session + 1
        };
        let consistent = match self.mode {
            EnsembleMode::Pki => self.groups.len() == frozen && self.residual.is_none(),
            EnsembleMode::Pkiv1 => self.groups.is_empty() && self.residual_members == frozen,
            EnsembleMode::Pkiv2 { k } => {
                k >= 1 && self.residual_members < k && self.groups.len() * k + self.residual_members == frozen
            }
        };
        if !consistent || self.residual.is_some() != (self.residual_members > 0) {
            return Err(Error::state(format!(
                "{} storage does not match session {}",
                self.mode, self.session
            )));
        }
        Ok(())
    }
}

/// Contributes `out_scale · φ(f; R + weight_scale · current)`, where `R` is
/// already folded into `effective`.
struct Trainable<'a> {
    effective: Cow<'a, Projector>,
    out_scale: f64,
    weight_scale: f64,
}

/// Materialized forward parameters of an ensemble.
pub struct EnsembleView<'a> {
    dims: ProjectorDims,
    fixed: Vec<(&'a Projector, f64)>,
    trainable: Option<Trainable<'a>>,
}

/// Per-application caches of one ensemble forward pass.
#[derive(Debug, Clone)]
pub struct EnsembleCache {
    fixed: Vec<ForwardCache>,
    trainable: Option<ForwardCache>,
}

impl EnsembleCache {
    pub fn applications(&self) -> impl Iterator<Item = &ForwardCache> + '_ {
        self.fixed.iter().chain(&self.trainable)
    }
}

impl EnsembleView<'_> {
    pub fn application_count(&self) -> usize {
        self.fixed.len() + usize::from(self.trainable.is_some())
    }

    /// Sum of scaled projector outputs: fixed applications in session order,
    /// then the one containing the current projector.
    pub fn forward(&self, f: &[f64]) -> Result<(Vec<f64>, EnsembleCache)> {
        let mut v = vec![0.0; self.dims.output];
        let mut fixed = Vec::with_capacity(self.fixed.len());
        for &(p, scale) in &self.fixed {
            let (y, cache) = p.forward(f)?;
            for (a, b) in v.iter_mut().zip(&y) {
                *a += scale * b;
            }
            fixed.push(cache);
        }
        let trainable = match &self.trainable {
            Some(t) => {
                let (y, cache) = t.effective.forward(f)?;
                for (a, b) in v.iter_mut().zip(&y) {
                    *a += t.out_scale * b;
                }
                Some(cache)
            }
            None => None,
        };
        Ok((v, EnsembleCache { fixed, trainable }))
    }

    /// Adds the gradient of `v·dv` w.r.t. the current projector into `grads`.
    pub fn backward_into(&self, cache: &EnsembleCache, dv: &[f64], grads: &mut ProjectorGrads) -> Result<()> {
        let (t, c) = match (&self.trainable, &cache.trainable) {
            (Some(t), Some(c)) => (t, c),
            _ => return Err(Error::FrozenParameter("ensemble has no trainable projector".into())),
        };
        let scale = t.out_scale * t.weight_scale;
        let upstream: Vec<f64> = dv.iter().map(|g| scale * g).collect();
        t.effective.backward_into(c, &upstream, grads)?;
        Ok(())
    }

    /// Gradient of `v·dv` w.r.t. the current projector and the input feature.
    pub fn backward(&self, cache: &EnsembleCache, dv: &[f64]) -> Result<(ProjectorGrads, Vec<f64>)> {
        if cache.fixed.len() != self.fixed.len() {
            return Err(Error::state("ensemble cache does not match this view"));
        }
        let mut grads = Projector::zeros(self.dims)?;
        let mut df = vec![0.0; self.dims.input];
        if let (Some(t), Some(c)) = (&self.trainable, &cache.trainable) {
            let upstream: Vec<f64> = dv.iter().map(|g| t.out_scale * g).collect();
            let mut g_eff = Projector::zeros(self.dims)?;
            let dfi = t.effective.backward_into(c, &upstream, &mut g_eff)?;
            add_into(&mut df, &dfi);
            grads.add_scaled(&g_eff, t.weight_scale);
        } else {
            return Err(Error::FrozenParameter("ensemble has no trainable projector".into()));
        }
        for (&(p, scale), c) in self.fixed.iter().zip(&cache.fixed) {
            let upstream: Vec<f64> = dv.iter().map(|g| scale * g).collect();
            let mut scratch = Projector::zeros(self.dims)?;
            let dfi = p.backward_into(c, &upstream, &mut scratch)?;
            add_into(&mut df, &dfi);
        }
        Ok((grads, df))
    }
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}
