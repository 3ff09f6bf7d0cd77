use super::{GaussianPrior, MeasurementModel};
use crate::band::SymBandMatrix;
use crate::error::{invalid, Result};
use crate::proposal::GaussianProposal;

pub const BERNOULLI_PRIOR_MEAN: f64 = 0.5;

/// `k` successes in `N` Bernoulli trials with success probability `alpha`,
/// under a normal prior `N(0.5, 1/Q)` truncated to `(0, 1)`.
#[derive(Clone, Debug)]
pub struct BernoulliToyModel {
    trials: u64,
    successes: u64,
    prior_precision: f64,
}

impl BernoulliToyModel {
    pub fn new(trials: u64, successes: u64, prior_precision: f64) -> Result<Self> {
        if successes > trials {
            return Err(invalid(format!("{successes} successes in {trials} trials")));
        }
        if !(prior_precision.is_finite() && prior_precision > 0.0) {
            return Err(invalid("prior precision must be positive"));
        }
        Ok(Self {
            trials,
            successes,
            prior_precision,
        })
    }

    pub fn trials(&self) -> u64 {
        self.trials
    }

    pub fn successes(&self) -> u64 {
        self.successes
    }

    pub fn prior_precision(&self) -> f64 {
        self.prior_precision
    }

    /// The truncated prior as an unnormalized kernel.
    pub fn prior(&self) -> GaussianPrior {
        GaussianPrior::kernel_only(
            vec![BERNOULLI_PRIOR_MEAN],
            SymBandMatrix::diagonal(&[self.prior_precision]).expect("1x1"),
        )
        .expect("positive precision")
    }

    fn failures(&self) -> f64 {
        (self.trials - self.successes) as f64
    }
}

impl MeasurementModel for BernoulliToyModel {
    fn dim(&self) -> usize {
        1
    }

    fn log_meas(&self, alpha: &[f64]) -> f64 {
        let a = alpha[0];
        if !(a > 0.0 && a < 1.0) {
            return f64::NEG_INFINITY;
        }
        let mut l = 0.0;
        if self.successes > 0 {
            l += self.successes as f64 * a.ln();
        }
        if self.trials > self.successes {
            l += self.failures() * (1.0 - a).ln();
        }
        l
    }

    fn grad(&self, alpha: &[f64]) -> Vec<f64> {
        let a = alpha[0];
        vec![self.successes as f64 / a - self.failures() / (1.0 - a)]
    }

    fn hess(&self, alpha: &[f64]) -> SymBandMatrix {
        let a = alpha[0];
        let h = -(self.successes as f64) / (a * a) - self.failures() / ((1.0 - a) * (1.0 - a));
        SymBandMatrix::diagonal(&[h]).expect("1x1")
    }

    fn is_concave(&self) -> bool {
        true
    }

    /// `l <= 0` everywhere.
    fn has_linear_bound(&self) -> bool {
        true
    }
}

/// Normal proposal from a second-order expansion of `l` at `k/N`, combined
/// with the prior. When `k` is `0` or `N` the expansion point is clamped to
/// `[1/(2N), 1 - 1/(2N)]`.
pub fn bernoulli_taylor_proposal(model: &BernoulliToyModel) -> Result<GaussianProposal> {
    if model.trials == 0 {
        return Err(invalid("Bernoulli model needs at least one trial"));
    }
    let n = model.trials as f64;
    let lo = 0.5 / n;
    let a_hat = (model.successes as f64 / n).clamp(lo, 1.0 - lo);
    let d = -(model.successes as f64) / (a_hat * a_hat) - model.failures() / ((1.0 - a_hat) * (1.0 - a_hat));
    let q = model.prior_precision;
    let q_star = q - d;
    let mean = (BERNOULLI_PRIOR_MEAN * q - d * a_hat) / q_star;
    GaussianProposal::new(vec![mean], SymBandMatrix::diagonal(&[q_star])?)
}
