use serde::Serialize;

use crate::band::SymBandMatrix;
use crate::error::{invalid, Error, Result};
use crate::models::{log_joint, GaussianPrior, MeasurementModel};
use crate::proposal::GaussianProposal;

const MAX_HALVINGS: usize = 40;

/// Linear Gaussian approximating model `g(y_t | alpha_t) ∝ exp(b_t' alpha_t - 0.5 alpha_t' C_t alpha_t)`
/// matched to the mode of the posterior.
#[derive(Clone, Debug, Serialize)]
pub struct SpdkFit {
    /// Stacked `b_t`.
    pub b: Vec<f64>,
    /// Block-diagonal `C`.
    pub c: SymBandMatrix,
    /// Posterior mode `(C + Q)^{-1} (B + Q mu)`.
    pub mode: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl SpdkFit {
    /// `N(mode, (C + Q)^{-1})`.
    pub fn proposal(&self, prior: &GaussianPrior) -> Result<GaussianProposal> {
        let qstar = self.c.add(prior.precision())?;
        GaussianProposal::new(self.mode.clone(), qstar)
    }

    /// Approximating-model variances `v_t = 1 / C_t` (scalar states only).
    pub fn variances(&self) -> Result<Vec<f64>> {
        if self.c.block_size() != 1 {
            return Err(invalid("variances are defined for scalar states only"));
        }
        Ok(self.c.diag_blocks().iter().map(|c| 1.0 / c).collect())
    }

    /// Pseudo-observations `y_hat_t = b_t / C_t` (scalar states only).
    pub fn pseudo_observations(&self) -> Result<Vec<f64>> {
        if self.c.block_size() != 1 {
            return Err(invalid("pseudo-observations are defined for scalar states only"));
        }
        Ok(self.b.iter().zip(self.c.diag_blocks()).map(|(b, c)| b / c).collect())
    }
}

/// Newton iteration for the mode of `l(alpha) + log p(alpha)`, returning the
/// approximating model at the mode. Starts at the prior mean; each step is
/// halved until the log target does not decrease.
pub fn spdk_fit<M: MeasurementModel + ?Sized>(
    model: &M,
    prior: &GaussianPrior,
    tol: f64,
    max_iter: usize,
) -> Result<SpdkFit> {
    let dim = model.dim();
    if prior.mean().len() != dim {
        return Err(invalid("prior and measurement dimensions differ"));
    }
    if prior.precision().block_size() != model.block_size() {
        return Err(invalid("prior block size does not match the state block size"));
    }
    if !(tol > 0.0) {
        return Err(invalid("tolerance must be positive"));
    }
    let q = prior.precision();
    let q_mu = q.mul_vec(prior.mean());
    let target = |a: &[f64]| log_joint(model, prior, a);

    let mut alpha = prior.mean().to_vec();
    let mut f = target(&alpha);
    for iter in 0..=max_iter {
        let c = model.hess(&alpha).scaled(-1.0);
        let c_alpha = c.mul_vec(&alpha);
        let b: Vec<f64> = model.grad(&alpha).iter().zip(&c_alpha).map(|(g, ca)| g + ca).collect();
        let qstar = c.add(q)?;
        let chol = qstar.factorize()?;
        if let Some(block_row) = chol.failed_block_row() {
            return Err(Error::NotPositiveDefinite { block_row });
        }
        let rhs: Vec<f64> = b.iter().zip(&q_mu).map(|(x, y)| x + y).collect();
        let full = chol.solve(&rhs)?;
        let change = full
            .iter()
            .zip(&alpha)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if change <= tol {
            return Ok(SpdkFit {
                b,
                c,
                mode: full,
                iterations: iter,
                converged: true,
            });
        }
        if iter == max_iter {
            break;
        }
        let mut scale = 1.0;
        let mut next = full.clone();
        for _ in 0..MAX_HALVINGS {
            let fn_ = target(&next);
            if fn_.is_finite() && fn_ >= f - 1e-10 * f.abs().max(1.0) {
                f = fn_;
                break;
            }
            scale *= 0.5;
            for ((n, a), s) in next.iter_mut().zip(&alpha).zip(&full) {
                *n = a + scale * (s - a);
            }
        }
        alpha = next;
    }
    Err(Error::Diverged {
        iterations: max_iter,
        last: alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{GaussianNoiseModel, PoissonSsmModel};
    use crate::rng::rng_from_seed;
    use crate::statespace::{ar1_precision, Ar1Spec};
    use rand::Rng;
    use rand_distr::{Distribution, Normal, Poisson};

    fn ar1_prior(mu: f64, phi: f64, s2: f64, t: usize) -> GaussianPrior {
        let (m, q) = ar1_precision(&Ar1Spec::new(mu, phi, s2, t).unwrap()).unwrap();
        GaussianPrior::new(m, q).unwrap()
    }

    #[test]
    fn fixed_point_at_prior_mode() {
        let beta = 2f64.ln();
        let model = PoissonSsmModel::new(vec![2; 40], beta).unwrap();
        let prior = ar1_prior(0.0, 0.8, 0.18, 40);
        let fit = spdk_fit(&model, &prior, 1e-8, 100).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.iterations, 0);
        assert!(fit.mode.iter().all(|a| a.abs() < 1e-12));
        assert!(fit.c.diag_blocks().iter().all(|c| (c - 2.0).abs() < 1e-12));
    }

    #[test]
    fn quadratic_measurement_is_exact_in_one_step() {
        let mut rng = rng_from_seed(21);
        let y: Vec<f64> = (0..25).map(|_| rng.random_range(-2.0..2.0)).collect();
        let model = GaussianNoiseModel::new(y.clone(), 0.6).unwrap();
        let prior = ar1_prior(0.2, 0.7, 0.5, 25);
        let fit = spdk_fit(&model, &prior, 1e-10, 100).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.iterations, 1);
        // Exact posterior: precision Q + I/s2, mean solves (Q + I/s2) m = Q mu + y/s2.
        let post_q = prior.precision().to_dense() + nalgebra::DMatrix::identity(25, 25) / 0.6;
        let rhs = prior.precision().to_dense() * nalgebra::DVector::from_vec(prior.mean().to_vec())
            + nalgebra::DVector::from_vec(y) / 0.6;
        let exact = post_q.clone().lu().solve(&rhs).unwrap();
        let g = fit.proposal(&prior).unwrap();
        for i in 0..25 {
            assert!((g.mean()[i] - exact[i]).abs() < 1e-10);
        }
        assert!((g.precision().to_dense() - post_q).abs().max() < 1e-12);
    }

    #[test]
    fn dgp_path_converges() {
        let mut rng = rng_from_seed(22);
        let (beta, phi, s2, t): (f64, f64, f64, usize) = (-1.4, 0.8, 0.18, 500);
        let noise = Normal::new(0.0, s2.sqrt()).unwrap();
        let mut a = Normal::new(0.0, (s2 / (1.0 - phi * phi)).sqrt()).unwrap().sample(&mut rng);
        let mut y = Vec::with_capacity(t);
        for _ in 0..t {
            let lam: f64 = (beta + a).exp();
            y.push(Poisson::new(lam).unwrap().sample(&mut rng) as u64);
            a = phi * a + noise.sample(&mut rng);
        }
        let model = PoissonSsmModel::new(y, beta).unwrap();
        let prior = ar1_prior(0.0, phi, s2, t);
        let fit = spdk_fit(&model, &prior, 1e-8, 100).unwrap();
        assert!(fit.converged && fit.iterations <= 100);
        // Mode satisfies the fixed-point equation.
        let qstar = fit.c.add(prior.precision()).unwrap();
        let lhs = qstar.mul_vec(&fit.mode);
        let q_mu = prior.precision().mul_vec(prior.mean());
        for i in 0..t {
            assert!((lhs[i] - fit.b[i] - q_mu[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn iteration_cap_reports_divergence() {
        let model = PoissonSsmModel::new(vec![300, 0, 250, 1], -3.0).unwrap();
        let prior = ar1_prior(0.0, 0.5, 1.0, 4);
        match spdk_fit(&model, &prior, 1e-12, 1) {
            Err(Error::Diverged { iterations, last }) => {
                assert_eq!(iterations, 1);
                assert_eq!(last.len(), 4);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
