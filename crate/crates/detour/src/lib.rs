//! Desk-scale lab for the CLM-detour continued-pretraining recipe.
//!
//! A small encoder trains under interchangeable causal / masked language
//! modeling objectives; the crate bundles the full analysis kit around that
//! switch: CKA divergence profiles, seed-noise ratios, freeze interventions,
//! layer transplants, linear probing, paired bootstrap tests and a
//! needle-in-haystack long-context benchmark.

pub mod analysis;
pub mod data;
pub mod error;
pub mod experiment;
pub mod io;
pub mod model;
pub mod needle;
pub mod numerics;
pub mod trainer;

pub use error::{DetourError, Result};
