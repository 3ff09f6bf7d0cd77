//! Importance sampling for latent Gaussian models with guaranteed finite
//! weight moments.
//!
//! The crate covers banded Gaussian linear algebra ([`band`]), proposal
//! densities and the moment-constrained mixture ([`proposal`]), example
//! measurement models ([`models`]), state space approximating models and
//! moment repairs ([`statespace`]), likelihood estimators and weight
//! diagnostics ([`estimators`]), and pseudo-marginal MCMC ([`inference`]).

pub mod band;
pub mod data;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod inference;
pub mod models;
pub mod proposal;
pub mod rng;
pub mod sampler;
pub mod statespace;

pub use band::{BandCholesky, SymBandMatrix};
pub use error::{Error, Result};
pub use proposal::{
    AnyProposal, Clamp, GaussianProposal, ImportanceDensity, MixtureProposal, MomentOrder, StudentTProposal,
};
pub use rng::{derive_seed, rng_from_seed, SimRng};
