//! Feature datasets, session streams, synthetic stream generation and the
//! feature-file formats.
//!
//! # PKIF binary format
//!
//! Little-endian throughout:
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `b"PKIF"`               |
//! | 4      | 2    | version, `u16` = 1            |
//! | 6      | 1    | dtype, `u8` = 1 (f64)         |
//! | 7      | 4    | feature dimension `d`, `u32`  |
//! | 11     | 4    | record count `n`, `u32`       |
//! | 15     | ...  | `n` × (label `u32`, `d` × `f64`) |
//!
//! # Text format
//!
//! Files ending in `.csv` or `.txt` hold one example per line as
//! `label,f1,...,fd`. Blank lines are skipped.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, ParseError, Result};
use crate::rng::{substream, BoxMuller, Purpose};

pub const MAGIC: &[u8; 4] = b"PKIF";
pub const VERSION: u16 = 1;
pub const DTYPE_F64: u8 = 1;
const HEADER_LEN: usize = 15;

/// Labeled intermediate features, all of dimension `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    dim: usize,
    features: Vec<Vec<f64>>,
    labels: Vec<u32>,
}

impl FeatureDataset {
    pub fn new(dim: usize, features: Vec<Vec<f64>>, labels: Vec<u32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("feature dimension must be >= 1"));
        }
        if features.len() != labels.len() {
            return Err(Error::arg(format!(
                "{} feature vectors but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some((i, f)) = features.iter().enumerate().find(|(_, f)| f.len() != dim) {
            return Err(Error::arg(format!(
                "example {i} has dimension {}, expected {dim}",
                f.len()
            )));
        }
        Ok(Self { dim, features, labels })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], u32)> + '_ {
        self.features.iter().map(Vec::as_slice).zip(self.labels.iter().copied())
    }

    /// Distinct labels, ascending.
    pub fn classes(&self) -> BTreeSet<u32> {
        self.labels.iter().copied().collect()
    }

    pub fn class_counts(&self) -> BTreeMap<u32, usize> {
        let mut counts = BTreeMap::new();
        for &y in &self.labels {
            *counts.entry(y).or_insert(0) += 1;
        }
        counts
    }

    pub fn push(&mut self, feature: Vec<f64>, label: u32) -> Result<()> {
        if feature.len() != self.dim {
            return Err(Error::arg(format!(
                "feature has dimension {}, dataset has {}",
                feature.len(),
                self.dim
            )));
        }
        self.features.push(feature);
        self.labels.push(label);
        Ok(())
    }

    /// Concatenation of several datasets of equal dimension.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a FeatureDataset>) -> Result<Self> {
        let mut iter = parts.into_iter();
        let first = iter.next().ok_or_else(|| Error::arg("nothing to concatenate"))?;
        let mut out = first.clone();
        for part in iter {
            if part.dim != out.dim {
                return Err(Error::arg("cannot concatenate datasets of different dimension"));
            }
            out.features.extend(part.features.iter().cloned());
            out.labels.extend(&part.labels);
        }
        Ok(out)
    }

    pub fn to_pkif_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.len() * (4 + 8 * self.dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(DTYPE_F64);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (f, y) in self.iter() {
            out.extend_from_slice(&y.to_le_bytes());
            for x in f {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_pkif_bytes(bytes: &[u8]) -> Result<Self, ParseError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(ParseError::BadMagic { offset: 0 });
        }
        let read = |at: usize, len: usize| -> Result<&[u8], ParseError> {
            bytes.get(at..at + len).ok_or(ParseError::Truncated {
                offset: bytes.len() as u64,
                expected: 0,
                found: 0,
            })
        };
        let version = u16::from_le_bytes(read(4, 2)?.try_into().unwrap());
        if version != VERSION {
            return Err(ParseError::UnsupportedVersion { offset: 4, version });
        }
        let dtype = read(6, 1)?[0];
        if dtype != DTYPE_F64 {
            return Err(ParseError::UnsupportedDtype { offset: 6, dtype });
        }
        let dim = u32::from_le_bytes(read(7, 4)?.try_into().unwrap());
        if dim == 0 {
            return Err(ParseError::BadDimension { offset: 7, dim });
        }
        let n = u32::from_le_bytes(read(11, 4)?.try_into().unwrap());
        let record = 4 + 8 * dim as usize;
        let body = &bytes[HEADER_LEN..];
        let complete = body.len() / record;
        if complete < n as usize {
            return Err(ParseError::Truncated {
                offset: (HEADER_LEN + complete * record) as u64,
                expected: n,
                found: complete as u32,
            });
        }
        let used = n as usize * record;
        if body.len() > used {
            return Err(ParseError::TrailingBytes {
                offset: (HEADER_LEN + used) as u64,
                extra: (body.len() - used) as u64,
            });
        }
        let mut features = Vec::with_capacity(n as usize);
        let mut labels = Vec::with_capacity(n as usize);
        for (r, chunk) in body.chunks_exact(record).enumerate() {
            labels.push(u32::from_le_bytes(chunk[..4].try_into().unwrap()));
            let mut f = Vec::with_capacity(dim as usize);
            for (j, raw) in chunk[4..].chunks_exact(8).enumerate() {
                let x = f64::from_le_bytes(raw.try_into().unwrap());
                if !x.is_finite() {
                    return Err(ParseError::NonFinite {
                        offset: (HEADER_LEN + r * record + 4 + 8 * j) as u64,
                    });
                }
                f.push(x);
            }
            features.push(f);
        }
        Ok(Self {
            dim: dim as usize,
            features,
            labels,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (f, y) in self.iter() {
            out.push_str(&y.to_string());
            for x in f {
                out.push(',');
                // Display prints the shortest string that parses back exactly.
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ParseError> {
        let mut dim = None;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut offset = 0u64;
        for (i, line) in text.split_inclusive('\n').enumerate() {
            let here = offset;
            offset += line.len() as u64;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| ParseError::Text {
                line: i + 1,
                offset: here,
                msg,
            };
            let mut fields = line.split(',');
            let label: u32 = fields
                .next()
                .unwrap_or_default()
                .trim()
                .parse()
                .map_err(|e| err(format!("bad label: {e}")))?;
            let f = fields
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| err(format!("bad feature value: {e}")))?;
            if f.is_empty() {
                return Err(err("no feature values".into()));
            }
            if !f.iter().all(|x| x.is_finite()) {
                return Err(err("non-finite feature value".into()));
            }
            match dim {
                None => dim = Some(f.len()),
                Some(d) if d != f.len() => {
                    return Err(err(format!("{} features, expected {d}", f.len())));
                }
                _ => {}
            }
            features.push(f);
            labels.push(label);
        }
        let dim = dim.ok_or(ParseError::Text {
            line: 0,
            offset: 0,
            msg: "no examples".into(),
        })?;
        Ok(Self { dim, features, labels })
    }
}

fn is_text_path(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("csv" | "txt")
    )
}

/// Reads a feature file; `.csv`/`.txt` select the text format, anything else PKIF.
pub fn load_feature_file(path: impl AsRef<Path>) -> Result<FeatureDataset> {
    let path = path.as_ref();
    let wrap = |source| Error::Parse {
        path: path.to_path_buf(),
        source,
    };
    if is_text_path(path) {
        FeatureDataset::from_text(&fs::read_to_string(path)?).map_err(wrap)
    } else {
        FeatureDataset::from_pkif_bytes(&fs::read(path)?).map_err(wrap)
    }
}

pub fn save_feature_file(path: impl AsRef<Path>, data: &FeatureDataset) -> Result<()> {
    let path = path.as_ref();
    if is_text_path(path) {
        fs::write(path, data.to_text())?;
    } else {
        fs::write(path, data.to_pkif_bytes())?;
    }
    Ok(())
}

/// Base-session size plus the N-way K-shot shape of incremental sessions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionLayout {
    pub base_classes: usize,
    pub num_incremental: usize,
    pub n_way: usize,
    pub k_shot: usize,
}

impl SessionLayout {
    /// 60 base classes then 8 sessions of 5-way 5-shot.
    pub const CIFAR_LIKE: SessionLayout = SessionLayout {
        base_classes: 60,
        num_incremental: 8,
        n_way: 5,
        k_shot: 5,
    };

    pub fn validate(&self) -> Result<()> {
        if self.base_classes == 0 || self.n_way == 0 || self.k_shot == 0 {
            return Err(Error::arg(format!("layout fields must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn total_classes(&self) -> usize {
        self.base_classes + self.num_incremental * self.n_way
    }

    pub fn num_sessions(&self) -> usize {
        self.num_incremental + 1
    }

    /// Class ids introduced in `session`; dense and in session order.
    pub fn session_classes(&self, session: usize) -> std::ops::Range<u32> {
        if session == 0 {
            0..self.base_classes as u32
        } else {
            let start = self.base_classes + (session - 1) * self.n_way;
            start as u32..(start + self.n_way) as u32
        }
    }

    /// Number of classes seen once `session` has been learned.
    pub fn classes_through(&self, session: usize) -> usize {
        self.base_classes + session * self.n_way
    }
}

/// One train/test pair per session.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub train: FeatureDataset,
    pub test: FeatureDataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionStream {
    pub layout: SessionLayout,
    pub sessions: Vec<Session>,
}

impl SessionStream {
    pub fn dim(&self) -> usize {
        self.sessions.first().map_or(0, |s| s.train.dim())
    }

    /// Union of the test sets of sessions `0..=session`.
    pub fn joint_test(&self, session: usize) -> Result<FeatureDataset> {
        FeatureDataset::concat(self.sessions[..=session].iter().map(|s| &s.test))
    }

    /// Checks every stream invariant, returning the first violation.
    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        if self.sessions.len() != self.layout.num_sessions() {
            return Err(Error::arg(format!(
                "layout has {} sessions but stream has {}",
                self.layout.num_sessions(),
                self.sessions.len()
            )));
        }
        let dim = self.dim();
        let mut seen: BTreeMap<u32, usize> = BTreeMap::new();
        for (t, session) in self.sessions.iter().enumerate() {
            for found in [session.train.dim(), session.test.dim()] {
                if found != dim {
                    return Err(Error::DimMismatch {
                        session: t,
                        expected: dim,
                        found,
                    });
                }
            }
            let counts = session.train.class_counts();
            for &class in counts.keys() {
                if let Some(&previous) = seen.get(&class) {
                    return Err(Error::LabelOverlap {
                        session: t,
                        class,
                        previous,
                    });
                }
            }
            let expected_way = if t == 0 {
                self.layout.base_classes
            } else {
                self.layout.n_way
            };
            if counts.len() != expected_way {
                return Err(Error::WayCount {
                    session: t,
                    expected: expected_way,
                    found: counts.len(),
                });
            }
            if t > 0 {
                if let Some((&class, &found)) = counts.iter().find(|(_, &n)| n != self.layout.k_shot) {
                    return Err(Error::ShotCount {
                        session: t,
                        class,
                        found,
                        expected: self.layout.k_shot,
                    });
                }
            }
            if let Some(&class) = session.test.labels().iter().find(|y| !counts.contains_key(y)) {
                return Err(Error::ForeignTestClass { session: t, class });
            }
            seen.extend(counts.keys().map(|&c| (c, t)));
        }
        Ok(())
    }
}

pub fn validate_stream(stream: &SessionStream) -> Result<()> {
    stream.validate()
}

/// Parameters of a Gaussian-cluster stream standing in for backbone features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub d: usize,
    pub layout: SessionLayout,
    pub cluster_std: f64,
    pub center_scale: f64,
    #[serde(default = "default_train_per_base_class")]
    pub train_per_base_class: usize,
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_train_per_base_class() -> usize {
    50
}

fn default_test_per_class() -> usize {
    100
}

impl SynthSpec {
    /// The separable benchmark stream: 20 base classes, 4 sessions of 5-way
    /// 5-shot, `d = 32`, `cluster_std = 0.1`, `center_scale = 5`.
    pub fn separable(seed: u64) -> Self {
        Self {
            d: 32,
            layout: SessionLayout {
                base_classes: 20,
                num_incremental: 4,
                n_way: 5,
                k_shot: 5,
            },
            cluster_std: 0.1,
            center_scale: 5.0,
            train_per_base_class: default_train_per_base_class(),
            test_per_class: default_test_per_class(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        if self.d == 0 {
            return Err(Error::arg("d must be >= 1"));
        }
        if !(self.cluster_std > 0.0 && self.cluster_std.is_finite()) {
            return Err(Error::arg("cluster_std must be positive and finite"));
        }
        if !(self.center_scale > 0.0 && self.center_scale.is_finite()) {
            return Err(Error::arg("center_scale must be positive and finite"));
        }
        if self.train_per_base_class == 0 || self.test_per_class == 0 {
            return Err(Error::arg("per-class example counts must be >= 1"));
        }
        if self.layout.total_classes() > u32::MAX as usize {
            return Err(Error::arg("too many classes"));
        }
        Ok(())
    }
}

/// Class centers uniform in `[-center_scale, center_scale]^d`; examples are
/// `center + N(0, cluster_std² I)` via Box–Muller.
///
/// Each session draws from its own substream: training examples class by
/// class, then test examples class by class.
pub fn make_synthetic_stream(spec: &SynthSpec) -> Result<SessionStream> {
    spec.validate()?;
    let layout = spec.layout;
    let mut center_rng = substream(spec.seed, Purpose::SynthCenters, 0);
    let coord = Uniform::new_inclusive(-spec.center_scale, spec.center_scale).expect("valid range");
    let centers: Vec<Vec<f64>> = (0..layout.total_classes())
        .map(|_| (0..spec.d).map(|_| coord.sample(&mut center_rng)).collect())
        .collect();

    let mut sessions = Vec::with_capacity(layout.num_sessions());
    for t in 0..layout.num_sessions() {
        let mut rng = substream(spec.seed, Purpose::SynthSamples, t as u64);
        let mut gauss = BoxMuller::new();
        let mut draw = |count: usize| -> FeatureDataset {
            let mut ds = FeatureDataset::empty(spec.d);
            for class in layout.session_classes(t) {
                let center = &centers[class as usize];
                for _ in 0..count {
                    let f = center
                        .iter()
                        .map(|c| c + spec.cluster_std * gauss.sample(&mut rng))
                        .collect();
                    ds.features.push(f);
                    ds.labels.push(class);
                }
            }
            ds
        };
        let per_class = if t == 0 {
            spec.train_per_base_class
        } else {
            layout.k_shot
        };
        let train = draw(per_class);
        let test = draw(spec.test_per_class);
        sessions.push(Session { train, test });
    }
    Ok(SessionStream { layout, sessions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny() -> FeatureDataset {
        FeatureDataset::new(
            2,
            vec![vec![1.5, -0.0], vec![f64::MIN_POSITIVE, 3.0], vec![-2.25, 1e300]],
            vec![0, 4, 4],
        )
        .unwrap()
    }

    fn bitwise_eq(a: &FeatureDataset, b: &FeatureDataset) -> bool {
        a.dim == b.dim
            && a.labels == b.labels
            && a.features
                .iter()
                .zip(&b.features)
                .all(|(x, y)| x.iter().map(|v| v.to_bits()).eq(y.iter().map(|v| v.to_bits())))
    }

    #[test]
    fn pkif_round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.pkif");
        save_feature_file(&path, &tiny()).unwrap();
        let back = load_feature_file(&path).unwrap();
        assert!(bitwise_eq(&back, &tiny()));
    }

    #[test]
    fn text_round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.csv");
        save_feature_file(&path, &tiny()).unwrap();
        assert!(fs::read_to_string(&path).unwrap().starts_with("0,1.5,-0\n"));
        let back = load_feature_file(&path).unwrap();
        assert!(bitwise_eq(&back, &tiny()));
    }

    #[test]
    fn header_layout_is_fixed() {
        let bytes = tiny().to_pkif_bytes();
        assert_eq!(&bytes[..4], b"PKIF");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(bytes[6], 1);
        assert_eq!(&bytes[7..11], &2u32.to_le_bytes());
        assert_eq!(&bytes[11..15], &3u32.to_le_bytes());
        assert_eq!(bytes.len(), 15 + 3 * (4 + 16));
    }

    #[test]
    fn wrong_magic_fails_at_offset_zero() {
        let mut bytes = tiny().to_pkif_bytes();
        bytes[1] = b'X';
        assert_eq!(
            FeatureDataset::from_pkif_bytes(&bytes),
            Err(ParseError::BadMagic { offset: 0 })
        );
    }

    #[test]
    fn bad_version_and_dtype_name_their_offsets() {
        let mut bytes = tiny().to_pkif_bytes();
        bytes[4] = 2;
        assert_eq!(
            FeatureDataset::from_pkif_bytes(&bytes),
            Err(ParseError::UnsupportedVersion { offset: 4, version: 2 })
        );
        let mut bytes = tiny().to_pkif_bytes();
        bytes[6] = 2;
        assert_eq!(
            FeatureDataset::from_pkif_bytes(&bytes),
            Err(ParseError::UnsupportedDtype { offset: 6, dtype: 2 })
        );
    }

    #[test]
    fn missing_record_is_truncation() {
        let ds = FeatureDataset::new(2, vec![vec![0.0, 1.0]; 5], vec![1; 5]).unwrap();
        let bytes = ds.to_pkif_bytes();
        let cut = &bytes[..bytes.len() - 20];
        assert_eq!(
            FeatureDataset::from_pkif_bytes(cut),
            Err(ParseError::Truncated {
                offset: 15 + 4 * 20,
                expected: 5,
                found: 4
            })
        );
        // a partial record is also truncation
        assert!(matches!(
            FeatureDataset::from_pkif_bytes(&bytes[..bytes.len() - 3]),
            Err(ParseError::Truncated { found: 4, .. })
        ));
        assert!(matches!(
            FeatureDataset::from_pkif_bytes(&bytes[..9]),
            Err(ParseError::Truncated { .. })
        ));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut bytes = tiny().to_pkif_bytes();
        bytes.push(0);
        assert!(matches!(
            FeatureDataset::from_pkif_bytes(&bytes),
            Err(ParseError::TrailingBytes { extra: 1, .. })
        ));
    }

    #[test]
    fn text_dimension_mismatch_names_line() {
        let err = FeatureDataset::from_text("1,0.5,0.25\n2,1.0\n").unwrap_err();
        assert!(
            matches!(
                err,
                ParseError::Text {
                    line: 2,
                    offset: 11,
                    ..
                }
            ),
            "{err:?}"
        );
    }

    #[test]
    fn synthetic_layout_and_determinism() {
        let mut spec = SynthSpec::separable(3);
        spec.train_per_base_class = 4;
        spec.test_per_class = 3;
        let a = make_synthetic_stream(&spec).unwrap();
        let b = make_synthetic_stream(&spec).unwrap();
        assert_eq!(a, b);
        for s in &a.sessions[1..] {
            assert_eq!(s.train.len(), 25);
            assert!(s.train.class_counts().values().all(|&n| n == 5));
        }
        a.validate().unwrap();
        spec.seed = 4;
        assert_ne!(make_synthetic_stream(&spec).unwrap(), a);
    }

    #[test]
    fn vanishing_std_reproduces_centers() {
        let mut spec = SynthSpec::separable(9);
        spec.cluster_std = 1e-300;
        spec.train_per_base_class = 3;
        spec.test_per_class = 2;
        let stream = make_synthetic_stream(&spec).unwrap();
        let base = &stream.sessions[0].train;
        for (f, y) in base.iter() {
            let first = base.iter().find(|(_, z)| *z == y).unwrap().0;
            assert_eq!(f, first);
            assert!(f.iter().all(|x| x.abs() <= 5.0));
        }
    }

    #[test]
    fn invalid_synth_spec_is_rejected() {
        let mut spec = SynthSpec::separable(0);
        spec.cluster_std = 0.0;
        assert!(matches!(make_synthetic_stream(&spec), Err(Error::InvalidArgument(_))));
    }

    fn small_stream() -> SessionStream {
        let mut spec = SynthSpec::separable(5);
        spec.layout = SessionLayout {
            base_classes: 3,
            num_incremental: 2,
            n_way: 2,
            k_shot: 5,
        };
        spec.d = 3;
        spec.train_per_base_class = 4;
        spec.test_per_class = 2;
        make_synthetic_stream(&spec).unwrap()
    }

    #[test]
    fn overlap_is_reported_with_class_and_session() {
        let mut stream = small_stream();
        // classes: base 0..3, session 1 = {3,4}, session 2 = {5,6}; relabel 5 -> 3
        let train = &mut stream.sessions[2].train;
        for y in train.labels.iter_mut().filter(|y| **y == 5) {
            *y = 3;
        }
        let err = stream.validate().unwrap_err();
        assert!(
            matches!(
                err,
                Error::LabelOverlap {
                    session: 2,
                    class: 3,
                    previous: 1
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn short_class_is_a_shot_count_violation() {
        let mut stream = small_stream();
        let train = &mut stream.sessions[1].train;
        train.features.pop();
        train.labels.pop();
        let err = stream.validate().unwrap_err();
        assert!(
            matches!(
                err,
                Error::ShotCount {
                    session: 1,
                    found: 4,
                    expected: 5,
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn foreign_test_class_and_dim_mismatch() {
        let mut stream = small_stream();
        stream.sessions[1].test.labels[0] = 0;
        assert!(matches!(
            stream.validate(),
            Err(Error::ForeignTestClass { session: 1, class: 0 })
        ));
        let mut stream = small_stream();
        stream.sessions[2].test = FeatureDataset::empty(7);
        assert!(matches!(
            stream.validate(),
            Err(Error::DimMismatch {
                session: 2,
                found: 7,
                ..
            })
        ));
    }

    #[test]
    fn cifar_like_layout_is_valid() {
        let spec = SynthSpec {
            d: 4,
            layout: SessionLayout::CIFAR_LIKE,
            cluster_std: 0.1,
            center_scale: 1.0,
            train_per_base_class: 2,
            test_per_class: 1,
            seed: 0,
        };
        let stream = make_synthetic_stream(&spec).unwrap();
        validate_stream(&stream).unwrap();
        assert_eq!(stream.sessions.len(), 9);
        assert_eq!(spec.layout.total_classes(), 100);
        let all: BTreeSet<u32> = stream.sessions.iter().flat_map(|s| s.train.classes()).collect();
        assert_eq!(all.len(), 100);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn synthetic_streams_always_validate(
            base in 1usize..8, incr in 0usize..5, way in 1usize..4, shot in 1usize..4,
            d in 1usize..6, std in 0.01f64..2.0, scale in 0.1f64..10.0, seed in any::<u64>(),
        ) {
            let spec = SynthSpec {
                d,
                layout: SessionLayout { base_classes: base, num_incremental: incr, n_way: way, k_shot: shot },
                cluster_std: std,
                center_scale: scale,
                train_per_base_class: 3,
                test_per_class: 2,
                seed,
            };
            let stream = make_synthetic_stream(&spec).unwrap();
            prop_assert!(stream.validate().is_ok());
            let classes: BTreeSet<u32> = stream.sessions.iter().flat_map(|s| s.train.classes()).collect();
            prop_assert_eq!(classes.len(), spec.layout.total_classes());
        }

        #[test]
        fn pkif_round_trip_is_identity(
            rows in proptest::collection::vec(
                (any::<u32>(), proptest::collection::vec(
                    prop_oneof![any::<f64>().prop_filter("finite", |x| x.is_finite()), Just(-0.0)], 3)),
                0..12)
        ) {
            let (labels, features): (Vec<u32>, Vec<Vec<f64>>) = rows.into_iter().unzip();
            let ds = FeatureDataset::new(3, features, labels).unwrap();
            let back = FeatureDataset::from_pkif_bytes(&ds.to_pkif_bytes()).unwrap();
            prop_assert!(bitwise_eq(&ds, &back));
            if !ds.is_empty() {
                let back = FeatureDataset::from_text(&ds.to_text()).unwrap();
                prop_assert!(bitwise_eq(&ds, &back));
            }
        }
    }
}
