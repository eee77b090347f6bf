//! Spectrum and prosody conversion between two non-parallel speakers.
//!
//! MCEP frames and 10-scale CWT decompositions of log-F0 are mapped by two
//! independently trained CycleGANs; aperiodicities pass through untouched.

pub mod config;
pub mod cwt;
pub mod cyclegan;
pub mod f0;
pub mod features;
pub mod gradcheck;
pub mod nn;
pub mod pipeline;
pub mod stats;

pub use cwt::{CwtMatrix, ScaleStats};
pub use f0::SpeakerF0Stats;
pub use features::{FeatureDiagnostics, UtteranceFeatures, VoicingMask};
