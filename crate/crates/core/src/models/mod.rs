//! Measurement densities `l(alpha) = log p(y | alpha)` with their derivatives,
//! and the Gaussian latent priors they are paired with.

mod bernoulli;
mod gaussian;
mod glmm;
mod panel;
mod poisson;

pub use bernoulli::{bernoulli_taylor_proposal, BernoulliToyModel};
pub use gaussian::GaussianNoiseModel;
pub use glmm::{glmm_newton_mode, GlmmCluster, GlmmClusterMeasurement, GlmmPoissonModel};
pub use panel::{PanelAr1Model, PanelSeries};
pub use poisson::PoissonSsmModel;

use crate::band::SymBandMatrix;
use crate::error::{invalid, Result};
use crate::proposal::{GaussianProposal, ImportanceDensity};

pub const DEFAULT_NEWTON_TOL: f64 = 1e-8;
pub const DEFAULT_NEWTON_MAX_ITER: usize = 100;

/// `l(alpha) = log p(y | alpha)` for a latent vector made of `dim / block_size`
/// state blocks. Each observation depends on one block only, so the Hessian
/// is block diagonal.
pub trait MeasurementModel: Sync {
    fn dim(&self) -> usize;

    fn block_size(&self) -> usize {
        1
    }

    /// `-inf` outside the support.
    fn log_meas(&self, alpha: &[f64]) -> f64;

    fn grad(&self, alpha: &[f64]) -> Vec<f64>;

    /// Block-diagonal Hessian of `l`.
    fn hess(&self, alpha: &[f64]) -> SymBandMatrix;

    /// `l` is concave in `alpha`.
    fn is_concave(&self) -> bool;

    /// `l(alpha) <= k + delta' alpha` for some `k`, `delta`.
    fn has_linear_bound(&self) -> bool;
}

/// Gaussian latent prior `N(mean, precision^{-1})`. With `normalized = false`
/// only the kernel `-0.5 (a - m)' Q (a - m)` enters [`GaussianPrior::log_density`];
/// used for truncated priors whose normalizer cancels in ratio estimates.
#[derive(Clone, Debug)]
pub struct GaussianPrior {
    density: GaussianProposal,
    normalized: bool,
}

impl GaussianPrior {
    pub fn new(mean: Vec<f64>, precision: SymBandMatrix) -> Result<Self> {
        Ok(Self {
            density: GaussianProposal::new(mean, precision)?,
            normalized: true,
        })
    }

    pub fn kernel_only(mean: Vec<f64>, precision: SymBandMatrix) -> Result<Self> {
        Ok(Self {
            density: GaussianProposal::new(mean, precision)?,
            normalized: false,
        })
    }

    pub fn mean(&self) -> &[f64] {
        self.density.mean()
    }

    pub fn precision(&self) -> &SymBandMatrix {
        self.density.precision()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn log_density(&self, alpha: &[f64]) -> f64 {
        if self.normalized {
            self.density.log_density(alpha)
        } else {
            -0.5 * self.density.mahalanobis_sq(alpha)
        }
    }

    pub fn as_gaussian(&self) -> &GaussianProposal {
        &self.density
    }
}

/// A measurement model together with its Gaussian prior.
#[derive(Clone, Debug)]
pub struct LatentGaussianModel<M> {
    pub measurement: M,
    pub prior: GaussianPrior,
}

impl<M: MeasurementModel> LatentGaussianModel<M> {
    pub fn new(measurement: M, prior: GaussianPrior) -> Result<Self> {
        if measurement.dim() != prior.mean().len() {
            return Err(invalid(format!(
                "measurement dimension {} differs from prior dimension {}",
                measurement.dim(),
                prior.mean().len()
            )));
        }
        Ok(Self { measurement, prior })
    }

    pub fn dim(&self) -> usize {
        self.measurement.dim()
    }

    /// `l(alpha) + log p(alpha)`; `-inf` outside the support.
    pub fn log_joint(&self, alpha: &[f64]) -> f64 {
        let l = self.measurement.log_meas(alpha);
        if l == f64::NEG_INFINITY {
            return l;
        }
        l + self.prior.log_density(alpha)
    }
}

/// Free-function form of [`LatentGaussianModel::log_joint`].
pub fn log_joint<M: MeasurementModel + ?Sized>(model: &M, prior: &GaussianPrior, alpha: &[f64]) -> f64 {
    let l = model.log_meas(alpha);
    if l == f64::NEG_INFINITY {
        return l;
    }
    l + prior.log_density(alpha)
}
