//! Simulation and analysis pipeline for cross-polarized pulse pairs in a
//! meridian drift-scan narrowband survey.
//!
//! Stages run in a fixed order: scene rendering, channelization and
//! thresholding, RFI excision, pair matching, and per-RA-bin binomial
//! statistics.

pub mod channelizer;
pub mod config;
pub mod error;
pub mod io;
pub mod pairing;
pub mod pipeline;
pub mod rfi;
pub mod scene;
pub mod sky;
pub mod stats;

pub use channelizer::{Channelizer, Pol, Spectrum, ThresholdEvent};
pub use config::{
    AnalysisConfig, FilterConfig, ObservationConfig, PairingConfig, RunConfig, SimulationConfig,
};
pub use error::{Error, Result};
pub use pairing::PulsePair;
pub use rfi::{DynamicExcisionState, ExcisionEpisode, MaskInterval, Provenance, RfiMask};
pub use scene::{IqBlock, IqRenderer, Scene, SceneComponent};
pub use sky::RaBin;
