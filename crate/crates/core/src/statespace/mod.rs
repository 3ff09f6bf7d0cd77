//! AR(1) latent processes, SPDK approximating models, and the banded moment
//! checks and repairs for state space proposals.

mod ar1;
mod moments;
mod spdk;

pub use ar1::{ar1_precision, Ar1Precision, Ar1Spec, BlockAr1Spec};
pub use moments::{
    build_ssm_mixture, constant_variance_bound, impose_block, impose_scalar, sylvester_check, ImposedBlock,
    ImposedScalar, SylvesterTrace, DEFAULT_EPS_INFLATE, PHI_ZERO_MARGIN,
};
pub use spdk::{spdk_fit, SpdkFit};
