//! Few-shot class-incremental learning with a prior-knowledge projector
//! ensemble, over frozen feature streams.
//!
//! Intermediate features (the output of a frozen backbone) come from PKIF
//! files or from a seeded Gaussian-cluster generator. Each session adds a
//! three-layer MLP projector; frozen projectors from earlier sessions keep
//! contributing to the embedding, either individually ([`EnsembleMode::Pki`])
//! or as weight sums ([`EnsembleMode::Pkiv1`], [`EnsembleMode::Pkiv2`]). A
//! class-mean memory replays old classes during incremental sessions.
//!
//! ```no_run
//! use pki_core::{make_synthetic_stream, run_protocol, SynthSpec, TrainConfig};
//!
//! let stream = make_synthetic_stream(&SynthSpec::separable(1))?;
//! let (_state, acc) = run_protocol(&stream, &TrainConfig::default())?;
//! println!("{:?}", acc.per_session);
//! # Ok::<(), pki_core::Error>(())
//! ```

pub mod checkpoint;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod gradcheck;
pub mod manifest;
pub mod memory;
pub mod ncm;
pub mod nn;
pub mod report;
pub mod rng;
pub mod sweep;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use data::{
    load_feature_file, make_synthetic_stream, save_feature_file, validate_stream, FeatureDataset, Session,
    SessionLayout, SessionStream, SynthSpec,
};
pub use ensemble::{EnsembleMode, InitMode, ProjectorEnsemble};
pub use error::{Error, ParseError, Result};
pub use memory::{class_means, ClassMeanMemory};
pub use nn::{Classifier, Projector, ProjectorDims};
pub use report::{average_accuracy, evaluate_joint, AccuracyMatrix, Report, ReportRow, TableFormat};
pub use trainer::{base_train, incremental_train, run_protocol, ModelState, TrainConfig};
