//! Signal-companding data augmentation for synthetic speech detection.
//!
//! The crate covers the whole pipeline around a-law / mu-law companding
//! augmentation:
//!
//! * [`audio`] and [`protocol`]: 16-bit mono WAV I/O and trial-list parsing.
//! * [`companding`]: continuous a-law / mu-law curves and the 8-bit G.711 codec.
//! * [`augment`]: companding (3x) expansion of a dataset and noise mixing at a
//!   target SNR.
//! * [`cqt`]: constant-Q log power spectrogram front-end (84 x 550 features).
//! * [`lcnn`]: a light CNN with max-feature-map activations, trained from scratch.
//! * [`metrics`]: EER, minimum normalized t-DCF and DET curves.
//! * [`fixture`]: a deterministic synthetic corpus for smoke and trend tests.
//!
//! Batch work goes through [`exec`], which uses rayon when the `parallel`
//! feature is enabled and falls back to plain iteration otherwise. Results
//! never depend on the number of worker threads.

pub mod audio;
pub mod augment;
pub mod companding;
pub mod cqt;
pub mod error;
pub mod exec;
pub mod fixture;
pub mod lcnn;
pub mod metrics;
pub mod protocol;

pub use audio::AudioClip;
pub use companding::{CompandingLaw, CompandingMode, LawKind};
pub use error::{Error, Result};
pub use protocol::{DatasetManifest, Key, Subset, TrialRecord};
