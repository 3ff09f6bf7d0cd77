use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::band::SymBandMatrix;
use crate::error::{invalid, Error, Result};

const LYAPUNOV_TOL: f64 = 1e-12;
const LYAPUNOV_MAX_ITER: usize = 1_000_000;

/// Stationary scalar AR(1): `alpha_{t+1} = mu (1 - phi) + phi alpha_t + eta_t`,
/// `eta_t ~ N(0, sigma2)`, over `len` time points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Ar1Spec {
    mu: f64,
    phi: f64,
    sigma2: f64,
    len: usize,
}

impl Ar1Spec {
    pub fn new(mu: f64, phi: f64, sigma2: f64, len: usize) -> Result<Self> {
        if !mu.is_finite() {
            return Err(invalid("AR(1) mean must be finite"));
        }
        if !(phi.abs() < 1.0) {
            return Err(invalid(format!("AR(1) coefficient {phi} is not stationary")));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(invalid("AR(1) innovation variance must be positive"));
        }
        if len == 0 {
            return Err(invalid("AR(1) length must be positive"));
        }
        Ok(Self { mu, phi, sigma2, len })
    }

    /// Parameterized by the stationary variance `sigma_alpha2 = sigma2 / (1 - phi^2)`.
    pub fn from_stationary_variance(mu: f64, phi: f64, sigma_alpha2: f64, len: usize) -> Result<Self> {
        Self::new(mu, phi, sigma_alpha2 * (1.0 - phi * phi), len)
    }

    pub fn with_len(&self, len: usize) -> Self {
        Self { len: len.max(1), ..*self }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn stationary_variance(&self) -> f64 {
        self.sigma2 / (1.0 - self.phi * self.phi)
    }
}

/// Stationary vector AR(1): `alpha_{t+1} = d + Phi alpha_t + eta_t`,
/// `eta_t ~ N(0, Sigma)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockAr1Spec {
    d: DVector<f64>,
    phi: DMatrix<f64>,
    sigma: DMatrix<f64>,
    len: usize,
    sigma_alpha: DMatrix<f64>,
    mean: DVector<f64>,
}

impl BlockAr1Spec {
    pub fn new(d: Vec<f64>, phi: DMatrix<f64>, sigma: DMatrix<f64>, len: usize) -> Result<Self> {
        let m = d.len();
        if m == 0 || phi.shape() != (m, m) || sigma.shape() != (m, m) {
            return Err(invalid("block AR(1) dimensions do not conform"));
        }
        if len == 0 {
            return Err(invalid("block AR(1) length must be positive"));
        }
        if !phi.iter().chain(sigma.iter()).chain(d.iter()).all(|v| v.is_finite()) {
            return Err(invalid("block AR(1) parameters must be finite"));
        }
        let radius = phi
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if radius >= 1.0 {
            return Err(invalid(format!("spectral radius {radius} of Phi is not below one")));
        }
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        if sigma.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite { block_row: 1 });
        }
        let sigma_alpha = solve_lyapunov(&phi, &sigma)?;
        let d = DVector::from_vec(d);
        let mean = (DMatrix::identity(m, m) - &phi)
            .lu()
            .solve(&d)
            .ok_or_else(|| invalid("I - Phi is singular"))?;
        Ok(Self {
            d,
            phi,
            sigma,
            len,
            sigma_alpha,
            mean,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.d.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Stationary covariance solving `S = Phi S Phi' + Sigma`.
    pub fn stationary_covariance(&self) -> &DMatrix<f64> {
        &self.sigma_alpha
    }

    pub fn stationary_mean(&self) -> &DVector<f64> {
        &self.mean
    }
}

fn solve_lyapunov(phi: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut s = sigma.clone();
    for it in 0..LYAPUNOV_MAX_ITER {
        let next = phi * &s * phi.transpose() + sigma;
        let diff = (&next - &s).abs().max();
        let scale = next.abs().max().max(1.0);
        s = next;
        if diff <= LYAPUNOV_TOL * scale {
            return Ok((&s + s.transpose()) * 0.5);
        }
        if it + 1 == LYAPUNOV_MAX_ITER {
            break;
        }
    }
    Err(Error::Diverged {
        iterations: LYAPUNOV_MAX_ITER,
        last: s.iter().copied().collect(),
    })
}

/// Latent processes with a banded prior precision.
pub trait Ar1Precision {
    /// Prior mean (stacked) and precision of `(alpha_1, ..., alpha_T)`.
    fn prior_precision(&self) -> Result<(Vec<f64>, SymBandMatrix)>;
}

impl Ar1Precision for Ar1Spec {
    fn prior_precision(&self) -> Result<(Vec<f64>, SymBandMatrix)> {
        if !(self.phi.abs() < 1.0) {
            return Err(invalid("AR(1) coefficient is not stationary"));
        }
        let t = self.len;
        let mean = vec![self.mu; t];
        if t == 1 {
            return Ok((mean, SymBandMatrix::diagonal(&[1.0 / self.stationary_variance()])?));
        }
        let inv = 1.0 / self.sigma2;
        let mut diag = vec![(1.0 + self.phi * self.phi) * inv; t];
        diag[0] = inv;
        diag[t - 1] = inv;
        let off = vec![-self.phi * inv; t - 1];
        Ok((mean, SymBandMatrix::tridiagonal(&diag, &off)?))
    }
}

impl Ar1Precision for BlockAr1Spec {
    fn prior_precision(&self) -> Result<(Vec<f64>, SymBandMatrix)> {
        let m = self.state_dim();
        let t = self.len;
        let sigma_inv = self
            .sigma
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { block_row: 1 })?
            .inverse();
        let s_alpha_inv = self
            .sigma_alpha
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { block_row: 1 })?
            .inverse();
        let gain = self.phi.transpose() * &sigma_inv * &self.phi;
        let coupling = -(&sigma_inv * &self.phi);

        let mut diag = Vec::with_capacity(t * m * m);
        let mut off = Vec::with_capacity(t.saturating_sub(1) * m * m);
        let push = |dst: &mut Vec<f64>, b: &DMatrix<f64>| {
            for i in 0..m {
                for j in 0..m {
                    dst.push(b[(i, j)]);
                }
            }
        };
        for k in 0..t {
            let block = if t == 1 {
                s_alpha_inv.clone()
            } else if k == 0 {
                &s_alpha_inv + &gain
            } else if k + 1 == t {
                sigma_inv.clone()
            } else {
                &sigma_inv + &gain
            };
            push(&mut diag, &block);
            if k + 1 < t {
                push(&mut off, &coupling);
            }
        }
        let mean = (0..t).flat_map(|_| self.mean.iter().copied()).collect();
        Ok((mean, SymBandMatrix::new(m, diag, off)?))
    }
}

/// Prior mean and banded precision of a stationary AR(1) path.
pub fn ar1_precision<S: Ar1Precision + ?Sized>(spec: &S) -> Result<(Vec<f64>, SymBandMatrix)> {
    spec.prior_precision()
}
