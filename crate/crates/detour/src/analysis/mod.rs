//! Representation-similarity analysis, interventions and statistics.

pub mod bootstrap;
pub mod cka;
pub mod divergence;
pub mod probe;
pub mod transplant;

pub use bootstrap::paired_bootstrap;
pub use cka::linear_cka;
pub use divergence::{
    divergence_profile, extract_set, seed_noise_ratio, seed_noise_ratio_from_reps,
    DivergenceProfile, RatioProfile, RepresentationSet,
};
pub use probe::{linear_probe, macro_f1, ProbeConfig, ProbeResult};
pub use transplant::{transplant, TransplantComponents, TransplantSpec};
