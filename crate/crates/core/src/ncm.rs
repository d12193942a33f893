//! Nearest-class-mean baseline on raw features.
//!
//! Each class is represented by the mean of its training features; a query
//! goes to the class whose mean is closest in Euclidean distance (ties to the
//! lowest class id). Used as a reference point for what the feature stream
//! itself supports.

use crate::data::{FeatureDataset, SessionStream};
use crate::error::{Error, Result};
use crate::memory::class_means;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NearestClassMean {
    means: Vec<(u32, Vec<f64>)>,
}

impl NearestClassMean {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    /// Adds the class means of `data`; classes already present are rejected.
    pub fn fit(&mut self, data: &FeatureDataset) -> Result<()> {
        for (c, m) in class_means(data)? {
            if self.means.iter().any(|(k, _)| *k == c) {
                return Err(Error::state(format!("class {c} already has a mean")));
            }
            self.means.push((c, m));
        }
        self.means.sort_by_key(|(c, _)| *c);
        Ok(())
    }

    pub fn predict(&self, f: &[f64]) -> Result<u32> {
        let mut best: Option<(u32, f64)> = None;
        for (c, m) in &self.means {
            if m.len() != f.len() {
                return Err(Error::arg(format!(
                    "query has dimension {}, means have {}",
                    f.len(),
                    m.len()
                )));
            }
            let d: f64 = m.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((*c, d));
            }
        }
        best.map(|(c, _)| c)
            .ok_or_else(|| Error::state("no class means fitted"))
    }

    pub fn accuracy(&self, data: &FeatureDataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::arg("accuracy of an empty dataset"));
        }
        let mut hits = 0usize;
        for (f, y) in data.iter() {
            hits += usize::from(self.predict(f)? == y);
        }
        Ok(hits as f64 / data.len() as f64)
    }
}

/// Joint accuracy of the nearest-class-mean baseline after each session.
pub fn ncm_protocol(stream: &SessionStream) -> Result<Vec<f64>> {
    let mut ncm = NearestClassMean::new();
    let mut out = Vec::with_capacity(stream.sessions.len());
    for (t, s) in stream.sessions.iter().enumerate() {
        ncm.fit(&s.train)?;
        out.push(ncm.accuracy(&stream.joint_test(t)?)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(rows: &[(&[f64], u32)]) -> FeatureDataset {
        let mut d = FeatureDataset::empty(rows[0].0.len());
        for (f, y) in rows {
            d.push(f.to_vec(), *y).unwrap();
        }
        d
    }

    #[test]
    fn nearest_mean_wins_and_ties_go_low() {
        let mut n = NearestClassMean::new();
        n.fit(&ds(&[(&[0.0, 0.0], 3), (&[2.0, 0.0], 1)])).unwrap();
        assert_eq!(n.predict(&[0.4, 0.0]).unwrap(), 3);
        assert_eq!(n.predict(&[1.6, 0.0]).unwrap(), 1);
        assert_eq!(n.predict(&[1.0, 0.0]).unwrap(), 1);
    }

    #[test]
    fn refits_and_empty_are_errors() {
        let mut n = NearestClassMean::new();
        assert!(n.predict(&[0.0]).is_err());
        n.fit(&ds(&[(&[0.0], 0)])).unwrap();
        assert!(n.fit(&ds(&[(&[1.0], 0)])).is_err());
    }
}
