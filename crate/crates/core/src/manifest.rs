//! On-disk session streams: one feature file per session split plus a TOML
//! manifest.
//!
//! ```toml
//! schema_version = 1
//! dim = 32
//!
//! [layout]
//! base_classes = 20
//! num_incremental = 4
//! n_way = 5
//! k_shot = 5
//!
//! [[sessions]]
//! train = "session_00_train.pkif"
//! test = "session_00_test.pkif"
//! ```
//!
//! File paths are relative to the manifest's directory unless absolute; both
//! `.pkif` and text (`.csv`/`.txt`) feature files are accepted. An optional
//! `[synth]` table records the generator parameters of synthetic streams.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_feature_file, save_feature_file, Session, SessionLayout, SessionStream, SynthSpec};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionFiles {
    pub train: String,
    pub test: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamManifest {
    pub schema_version: u32,
    pub dim: usize,
    pub layout: SessionLayout,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    pub sessions: Vec<SessionFiles>,
}

impl StreamManifest {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::arg(format!(
                "stream manifest schema_version {} is not supported (expected {MANIFEST_SCHEMA_VERSION})",
                m.schema_version
            )));
        }
        m.layout.validate()?;
        if m.sessions.len() != m.layout.num_sessions() {
            return Err(Error::arg(format!(
                "manifest lists {} sessions, layout needs {}",
                m.sessions.len(),
                m.layout.num_sessions()
            )));
        }
        Ok(m)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }
}

/// File names used by [`write_stream`] for session `t`.
pub fn session_file_names(t: usize) -> SessionFiles {
    SessionFiles {
        train: format!("session_{t:02}_train.pkif"),
        test: format!("session_{t:02}_test.pkif"),
    }
}

/// Every path [`write_stream`] would create in `dir` for `layout`.
pub fn stream_paths(dir: &Path, layout: &SessionLayout) -> Vec<PathBuf> {
    let mut out = vec![dir.join(MANIFEST_FILE)];
    for t in 0..layout.num_sessions() {
        let f = session_file_names(t);
        out.push(dir.join(f.train));
        out.push(dir.join(f.test));
    }
    out
}

/// Writes the stream's PKIF files and manifest into `dir`, creating it.
pub fn write_stream(dir: &Path, stream: &SessionStream, synth: Option<&SynthSpec>) -> Result<StreamManifest> {
    stream.validate()?;
    fs::create_dir_all(dir)?;
    let mut sessions = Vec::with_capacity(stream.sessions.len());
    for (t, s) in stream.sessions.iter().enumerate() {
        let files = session_file_names(t);
        save_feature_file(dir.join(&files.train), &s.train)?;
        save_feature_file(dir.join(&files.test), &s.test)?;
        sessions.push(files);
    }
    let manifest = StreamManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        dim: stream.dim(),
        layout: stream.layout,
        synth: synth.cloned(),
        sessions,
    };
    fs::write(dir.join(MANIFEST_FILE), manifest.to_toml_string()?)?;
    Ok(manifest)
}

/// Loads and validates a stream from a manifest file or its directory.
pub fn read_stream(path: &Path) -> Result<SessionStream> {
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let manifest = StreamManifest::from_toml_str(&fs::read_to_string(&manifest_path)?)?;
    let mut sessions = Vec::with_capacity(manifest.sessions.len());
    for files in &manifest.sessions {
        let train = load_feature_file(base.join(&files.train))?;
        let test = load_feature_file(base.join(&files.test))?;
        if train.dim() != manifest.dim || test.dim() != manifest.dim {
            return Err(Error::arg(format!(
                "{} or {} does not have the manifest dimension {}",
                files.train, files.test, manifest.dim
            )));
        }
        sessions.push(Session { train, test });
    }
    let stream = SessionStream {
        layout: manifest.layout,
        sessions,
    };
    stream.validate()?;
    Ok(stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic_stream;

    fn spec() -> SynthSpec {
        let mut s = SynthSpec::separable(4);
        s.d = 3;
        s.layout = SessionLayout {
            base_classes: 3,
            num_incremental: 2,
            n_way: 2,
            k_shot: 2,
        };
        s.train_per_base_class = 4;
        s.test_per_class = 3;
        s
    }

    #[test]
    fn round_trip_through_directory() {
        let dir = tempfile::tempdir().unwrap();
        let spec = spec();
        let stream = make_synthetic_stream(&spec).unwrap();
        let m = write_stream(dir.path(), &stream, Some(&spec)).unwrap();
        assert_eq!(m.sessions.len(), 3);
        for p in stream_paths(dir.path(), &stream.layout) {
            assert!(p.exists(), "{}", p.display());
        }
        assert_eq!(read_stream(dir.path()).unwrap(), stream);
        assert_eq!(read_stream(&dir.path().join(MANIFEST_FILE)).unwrap(), stream);
        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(StreamManifest::from_toml_str(&text).unwrap(), m);
    }

    #[test]
    fn manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        let stream = make_synthetic_stream(&spec()).unwrap();
        let m = write_stream(dir.path(), &stream, None).unwrap();
        let text = m.to_toml_string().unwrap();
        assert!(StreamManifest::from_toml_str(&text.replace("schema_version = 1", "schema_version = 2")).is_err());
        assert!(StreamManifest::from_toml_str(&format!("extra = 1\n{text}")).is_err());

        let mut short = m.clone();
        short.sessions.pop();
        assert!(StreamManifest::from_toml_str(&short.to_toml_string().unwrap()).is_err());

        fs::remove_file(dir.path().join("session_01_test.pkif")).unwrap();
        assert!(read_stream(dir.path()).is_err());
    }

    #[test]
    fn text_feature_files_are_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let stream = make_synthetic_stream(&spec()).unwrap();
        let mut m = write_stream(dir.path(), &stream, None).unwrap();
        let csv = dir.path().join("s0_train.csv");
        save_feature_file(&csv, &stream.sessions[0].train).unwrap();
        m.sessions[0].train = "s0_train.csv".into();
        fs::write(dir.path().join(MANIFEST_FILE), m.to_toml_string().unwrap()).unwrap();
        assert_eq!(read_stream(dir.path()).unwrap(), stream);
    }
}
