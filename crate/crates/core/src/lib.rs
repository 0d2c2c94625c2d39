//! RIS localization workbench: coupled-dipole enclosure simulation, a
//! dual-input BiLSTM localizer/classifier, and a calibrated configuration
//! codebook for dynamically changing rich-scattering rooms.

pub mod codebook;
pub mod dataset;
pub mod eval;
pub mod neural;
pub mod pipeline;
pub mod provenance;
pub mod rng;
pub mod scene;
pub mod wavesim;
