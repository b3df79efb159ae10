//! Simulation toolkit for combined multichannel noise reduction (NR) and
//! acoustic echo cancellation (AEC).
//!
//! The crate implements two cascaded designs end to end and the machinery to
//! compare them:
//!
//! - **NR-AEC**: a GEVD-based multichannel Wiener filter on the microphones,
//!   followed by an NLMS echo canceller that must model the NR-filtered echo
//!   paths.
//! - **NRext-AEC**: the same Wiener filter built on the stacked
//!   microphone + loudspeaker vector, followed by an NLMS canceller whose
//!   optimum equals the physical echo paths regardless of the NR stage.
//!
//! Supporting modules cover randomized image-method room simulation
//! ([`room`]), scenario synthesis with ideal voice-activity tracks
//! ([`synth`]), a WOLA STFT engine with equivalent-FIR conversion
//! ([`stft`]), VAD-gated covariance estimation and GEVD Wiener filters
//! ([`spectral`]), the NLMS canceller ([`nlms`]), the two cascades
//! ([`cascade`]), intelligibility-weighted metrics ([`metrics`]) and the
//! reproducible experiment sweep ([`experiment`]).

pub mod cascade;
pub mod conv;
pub mod error;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod nlms;
pub mod room;
pub mod spectral;
pub mod stft;
pub mod synth;
pub mod verify;

pub use cascade::{CascadeConfig, CascadeOutput, Design, Mode};
pub use error::{CoreError, Result};
pub use experiment::{ExperimentConfig, FigureId, ResultsTable};
pub use metrics::{BandWeights, MetricsReport};
pub use nlms::{NlmsConfig, NlmsState};
pub use room::{ImpulseResponseBank, RoomSpec, ScenarioGeometry, SourceRole};
pub use spectral::{CovarianceSet, SpectralFilter};
pub use stft::{SpectralFrames, StftConfig, TimeEquivalentFilter};
pub use synth::{ComponentTracks, ExtendedTracks, VadTrack};
pub use verify::CheckReport;
