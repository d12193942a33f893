//! Group-size sweeps over PKIV-2.

use std::fmt;
use std::str::FromStr;

use crate::data::SessionStream;
use crate::ensemble::EnsembleMode;
use crate::error::{Error, Result};
use crate::report::{AccuracyMatrix, Report, ReportRow};
use crate::trainer::{run_protocol, TrainConfig};

/// A group size, either literal or `T` (the stream's session count, which
/// always exceeds the last session index and so reproduces PKIV-1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KChoice {
    Fixed(usize),
    Total,
}

impl KChoice {
    pub fn resolve(self, sessions: usize) -> usize {
        match self {
            Self::Fixed(k) => k,
            Self::Total => sessions,
        }
    }

    /// Parses a comma-separated list such as `1,2,3,4,T`.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        s.split(',').map(|p| p.trim().parse()).collect()
    }
}

impl FromStr for KChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("t") {
            return Ok(Self::Total);
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(Self::Fixed(k)),
            _ => Err(Error::arg(format!(
                "group size must be a positive integer or T, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for KChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fixed(k) => write!(f, "k={k}"),
            Self::Total => f.write_str("k=T"),
        }
    }
}

/// Runs PKIV-2 once per group size and collects the per-session accuracies.
pub fn k_sweep(stream: &SessionStream, cfg: &TrainConfig, ks: &[KChoice]) -> Result<(Report, Vec<AccuracyMatrix>)> {
    if ks.is_empty() {
        return Err(Error::arg("k sweep needs at least one group size"));
    }
    let mut report = Report::default();
    let mut runs = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut c = cfg.clone();
        c.set_mode(EnsembleMode::Pkiv2 {
            k: k.resolve(stream.sessions.len()),
        });
        let (_, acc) = run_protocol(stream, &c)?;
        report.push(ReportRow::new(k.to_string(), acc.percent()));
        runs.push(acc);
    }
    Ok((report, runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_lists_with_total() {
        assert_eq!(
            KChoice::parse_list("1, 2,T").unwrap(),
            vec![KChoice::Fixed(1), KChoice::Fixed(2), KChoice::Total]
        );
        assert!(KChoice::parse_list("0").is_err());
        assert!(KChoice::parse_list("2,x").is_err());
        assert_eq!(KChoice::Total.resolve(9), 9);
        assert_eq!(KChoice::Total.to_string(), "k=T");
    }
}
