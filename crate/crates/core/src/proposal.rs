//! Gaussian, Student-t and two-component mixture importance densities, and the
//! precision modification that guarantees the first `n` moments of the
//! importance weights.
//!
//! For a Gaussian prior with precision `Q` and a Gaussian proposal with
//! precision `Q*`, the weights have `n` finite moments (for log-concave or
//! linearly bounded measurement densities) when `Q* - n (Q* - Q)` is positive
//! definite. [`modify_precision`] clamps the generalized eigenvalues of `Q*`
//! relative to `n Q` so that the condition holds, and [`build_mixture`] puts a
//! small weight on the modified density so the mixture inherits the moments
//! while staying close to the original fit.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::band::{gaussian_log_density_parts, BandCholesky, SymBandMatrix};
use crate::error::{invalid, Error, Result};

pub const DEFAULT_PI: f64 = 0.1;
pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_DELTA: f64 = 1e-5;
pub const DEFAULT_T_DOF: f64 = 5.0;

/// A density that can be sampled and evaluated pointwise.
pub trait ImportanceDensity: Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, x: &[f64]) -> f64;

    /// Overwrite `out` with one draw.
    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]);

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| {
                let mut x = vec![0.0; self.dim()];
                self.sample_into(rng, &mut x);
                x
            })
            .collect()
    }
}

/// `N(mean, precision^{-1})`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "GaussianDoc", into = "GaussianDoc")]
pub struct GaussianProposal {
    mean: Vec<f64>,
    precision: SymBandMatrix,
    chol: BandCholesky,
    log_det: f64,
}

#[derive(Clone, Serialize, Deserialize)]
struct GaussianDoc {
    mean: Vec<f64>,
    precision: SymBandMatrix,
}

impl TryFrom<GaussianDoc> for GaussianProposal {
    type Error = Error;
    fn try_from(doc: GaussianDoc) -> Result<Self> {
        GaussianProposal::new(doc.mean, doc.precision)
    }
}

impl From<GaussianProposal> for GaussianDoc {
    fn from(g: GaussianProposal) -> Self {
        GaussianDoc {
            mean: g.mean,
            precision: g.precision,
        }
    }
}

impl GaussianProposal {
    /// Fails with `NotPositiveDefinite` unless the precision factorizes.
    pub fn new(mean: Vec<f64>, precision: SymBandMatrix) -> Result<Self> {
        if mean.len() != precision.dim() {
            return Err(invalid(format!(
                "mean has length {} but precision is {}x{}",
                mean.len(),
                precision.dim(),
                precision.dim()
            )));
        }
        let chol = precision.factorize()?;
        let log_det = match (chol.log_det(), chol.failed_block_row()) {
            (Some(ld), _) => ld,
            (None, Some(block_row)) => return Err(Error::NotPositiveDefinite { block_row }),
            (None, None) => unreachable!(),
        };
        Ok(Self {
            mean,
            precision,
            chol,
            log_det,
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn precision(&self) -> &SymBandMatrix {
        &self.precision
    }

    pub fn log_det_precision(&self) -> f64 {
        self.log_det
    }

    pub fn cholesky(&self) -> &BandCholesky {
        &self.chol
    }

    /// `(x - mean)' Q (x - mean)`.
    pub fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        self.precision.quad_form(&diff)
    }
}

impl ImportanceDensity for GaussianProposal {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        gaussian_log_density_parts(self.mean.len(), self.log_det, self.mahalanobis_sq(x))
    }

    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        self.chol.sample_into(&self.mean, rng, out);
    }
}

/// Multivariate Student-t with location, scale matrix `precision^{-1}` and
/// `nu` degrees of freedom.
#[derive(Clone, Debug)]
pub struct StudentTProposal {
    base: GaussianProposal,
    nu: f64,
    chi2: ChiSquared<f64>,
    log_norm: f64,
}

impl StudentTProposal {
    pub fn new(location: Vec<f64>, precision: SymBandMatrix, nu: f64) -> Result<Self> {
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(invalid("degrees of freedom must be positive"));
        }
        let base = GaussianProposal::new(location, precision)?;
        let d = base.dim() as f64;
        let log_norm = ln_gamma(0.5 * (nu + d))
            - ln_gamma(0.5 * nu)
            - 0.5 * d * (nu * std::f64::consts::PI).ln()
            + 0.5 * base.log_det;
        let chi2 = ChiSquared::new(nu).map_err(|e| invalid(e.to_string()))?;
        Ok(Self {
            base,
            nu,
            chi2,
            log_norm,
        })
    }

    pub fn from_gaussian(g: &GaussianProposal, nu: f64) -> Result<Self> {
        Self::new(g.mean.clone(), g.precision.clone(), nu)
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn location(&self) -> &[f64] {
        &self.base.mean
    }
}

impl ImportanceDensity for StudentTProposal {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.dim() as f64;
        let q = self.base.mahalanobis_sq(x);
        self.log_norm - 0.5 * (self.nu + d) * (q / self.nu).ln_1p()
    }

    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let w: f64 = self.chi2.sample(rng);
        let scale = (self.nu / w).sqrt();
        for v in out.iter_mut() {
            *v *= scale;
        }
        self.base.chol.transform_standard_normal(&self.base.mean, out);
    }
}

/// `pi * heavy + (1 - pi) * fitted`. The heavy component carries the moment
/// guarantee, the fitted one the accuracy near the mode.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "MixtureDoc", into = "MixtureDoc")]
pub struct MixtureProposal {
    pi: f64,
    heavy: GaussianProposal,
    fitted: GaussianProposal,
    ln_pi: f64,
    ln_1m_pi: f64,
}

#[derive(Clone, Serialize, Deserialize)]
struct MixtureDoc {
    pi: f64,
    /// Heavy component first.
    components: [GaussianProposal; 2],
}

impl TryFrom<MixtureDoc> for MixtureProposal {
    type Error = Error;
    fn try_from(doc: MixtureDoc) -> Result<Self> {
        let [heavy, fitted] = doc.components;
        MixtureProposal::new(doc.pi, heavy, fitted)
    }
}

impl From<MixtureProposal> for MixtureDoc {
    fn from(m: MixtureProposal) -> Self {
        MixtureDoc {
            pi: m.pi,
            components: [m.heavy, m.fitted],
        }
    }
}

impl MixtureProposal {
    pub fn new(pi: f64, heavy: GaussianProposal, fitted: GaussianProposal) -> Result<Self> {
        if !(pi > 0.0 && pi < 1.0) {
            return Err(invalid(format!("mixture weight {pi} outside (0, 1)")));
        }
        if heavy.dim() != fitted.dim() {
            return Err(invalid("mixture components differ in dimension"));
        }
        Ok(Self {
            pi,
            heavy,
            fitted,
            ln_pi: pi.ln(),
            ln_1m_pi: (-pi).ln_1p(),
        })
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }

    pub fn heavy(&self) -> &GaussianProposal {
        &self.heavy
    }

    pub fn fitted(&self) -> &GaussianProposal {
        &self.fitted
    }

    /// Draw into `out` and report whether the heavy component was used.
    pub fn sample_with_component<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> bool {
        let u: f64 = rng.random();
        let heavy = u < self.pi;
        if heavy {
            self.heavy.sample_into(rng, out);
        } else {
            self.fitted.sample_into(rng, out);
        }
        heavy
    }
}

pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `log(pi exp(l1) + (1 - pi) exp(l2))`.
pub fn mixture_log_density(g: &MixtureProposal, x: &[f64]) -> f64 {
    log_add_exp(
        g.ln_pi + g.heavy.log_density(x),
        g.ln_1m_pi + g.fitted.log_density(x),
    )
}

impl ImportanceDensity for MixtureProposal {
    fn dim(&self) -> usize {
        self.heavy.dim()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        mixture_log_density(self, x)
    }

    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        self.sample_with_component(rng, out);
    }
}

/// `count` draws from a mixture.
pub fn sample_mixture<R: Rng + ?Sized>(g: &MixtureProposal, rng: &mut R, count: usize) -> Vec<Vec<f64>> {
    g.sample(rng, count)
}

/// Any of the shipped importance densities.
#[derive(Clone, Debug)]
pub enum AnyProposal {
    Gaussian(GaussianProposal),
    StudentT(StudentTProposal),
    Mixture(MixtureProposal),
}

impl ImportanceDensity for AnyProposal {
    fn dim(&self) -> usize {
        match self {
            AnyProposal::Gaussian(g) => g.dim(),
            AnyProposal::StudentT(g) => g.dim(),
            AnyProposal::Mixture(g) => g.dim(),
        }
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        match self {
            AnyProposal::Gaussian(g) => g.log_density(x),
            AnyProposal::StudentT(g) => g.log_density(x),
            AnyProposal::Mixture(g) => g.log_density(x),
        }
    }

    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            AnyProposal::Gaussian(g) => g.sample_into(rng, out),
            AnyProposal::StudentT(g) => g.sample_into(rng, out),
            AnyProposal::Mixture(g) => g.sample_into(rng, out),
        }
    }
}

/// Number of moments to guarantee, with the clamp margin `eps` and the width
/// `delta` of the smooth clamp.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentOrder {
    pub n: f64,
    pub eps: f64,
    pub delta: f64,
}

impl MomentOrder {
    pub fn new(n: f64) -> Result<Self> {
        Self::with_margins(n, DEFAULT_EPS, DEFAULT_DELTA)
    }

    pub fn with_margins(n: f64, eps: f64, delta: f64) -> Result<Self> {
        if !(n > 0.0) || !n.is_finite() {
            return Err(invalid(format!("moment order {n} must be positive")));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(invalid("eps must lie in (0, 1)"));
        }
        if !(delta > 0.0) {
            return Err(invalid("delta must be positive"));
        }
        Ok(Self { n, eps, delta })
    }

    /// Clamp level `(1 - eps) / (n - 1)`; infinite for `n <= 1`.
    pub fn tau(&self) -> f64 {
        if self.n <= 1.0 {
            f64::INFINITY
        } else {
            (1.0 - self.eps) / (self.n - 1.0)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Clamp {
    /// Eigenvalues at or above `1/(n-1)` are set to `(1-eps)/(n-1)`.
    #[default]
    Hard,
    /// C1 cubic blend on `[tau - delta, tau)`, constant `tau` above.
    Smooth,
}

fn require_same_dim(a: &SymBandMatrix, b: &SymBandMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(invalid(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// True iff `Q* - n (Q* - Q)` is positive definite.
pub fn check_moment_condition(qstar: &SymBandMatrix, q: &SymBandMatrix, order: MomentOrder) -> Result<bool> {
    require_same_dim(qstar, q)?;
    let n = order.n;
    let m = SymBandMatrix::lin_comb(1.0 - n, qstar, n, q)?;
    m.is_positive_definite()
}

fn hard_clamp(lambda: f64, n: f64, tau: f64) -> f64 {
    if lambda < 1.0 / (n - 1.0) {
        lambda
    } else {
        tau
    }
}

/// The C1 clamp: identity below `tau - delta`, the cubic
/// `a l^3 + b l^2 + c l + d` on `[tau - delta, tau)` and `tau` above.
pub fn smooth_clamp(lambda: f64, tau: f64, delta: f64) -> f64 {
    if lambda < tau - delta {
        lambda
    } else if lambda < tau {
        // The cubic expanded around tau; the monomial coefficients are of
        // order tau^3 / delta^2 and cancel catastrophically for small delta.
        let u = tau - lambda;
        tau - 2.0 * u * u / delta + u * u * u / (delta * delta)
    } else {
        tau
    }
}

/// Return `Q~ = A V L~ V' A'` where `n Q = A A'`, `V' A^{-1} Q* A'^{-1} V = L`
/// and `L~` is the clamped spectrum, so that `n Q - (n - 1) Q~` is positive
/// definite. Returns `Q*` unchanged when no eigenvalue needs clamping. The
/// result is dense.
pub fn modify_precision(
    qstar: &SymBandMatrix,
    q: &SymBandMatrix,
    order: MomentOrder,
    clamp: Clamp,
) -> Result<SymBandMatrix> {
    require_same_dim(qstar, q)?;
    let n = order.n;
    if n <= 1.0 {
        return Ok(qstar.clone());
    }
    if clamp == Clamp::Hard && check_moment_condition(qstar, q, order)? {
        return Ok(qstar.clone());
    }
    let nq = q.scaled(n);
    if let Some(block_row) = nq.factorize()?.failed_block_row() {
        return Err(Error::NotPositiveDefinite { block_row });
    }
    let a = nq
        .to_dense()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { block_row: 1 })?
        .l();
    let qs = qstar.to_dense();
    // M = A^{-1} Q* A'^{-1}
    let y = a
        .solve_lower_triangular(&qs)
        .ok_or_else(|| invalid("singular Cholesky factor"))?;
    let mut m = a
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| invalid("singular Cholesky factor"))?;
    m = (&m + m.transpose()) * 0.5;

    let eig = SymmetricEigen::new(m);
    let tau = order.tau();
    let mut changed = false;
    let clamped: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| {
            let c = match clamp {
                Clamp::Hard => hard_clamp(l, n, tau),
                Clamp::Smooth => smooth_clamp(l, tau, order.delta),
            };
            changed |= c != l;
            c
        })
        .collect();
    if !changed {
        return Ok(qstar.clone());
    }
    let av = &a * &eig.eigenvectors;
    let scaled = DMatrix::from_fn(av.nrows(), av.ncols(), |i, j| av[(i, j)] * clamped[j]);
    let qt = &scaled * av.transpose();
    SymBandMatrix::from_dense(&((&qt + qt.transpose()) * 0.5))
}

/// The n-th moment constrained mixture: heavy component `N(mean, Q~^{-1})`
/// with weight `pi`, fitted component `N(mean, Q*^{-1})`.
pub fn build_mixture(
    mean: &[f64],
    qstar: &SymBandMatrix,
    q: &SymBandMatrix,
    order: MomentOrder,
    clamp: Clamp,
    pi: f64,
) -> Result<MixtureProposal> {
    let qt = modify_precision(qstar, q, order, clamp)?;
    let heavy = GaussianProposal::new(mean.to_vec(), qt)?;
    let fitted = GaussianProposal::new(mean.to_vec(), qstar.clone())?;
    MixtureProposal::new(pi, heavy, fitted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;

    fn scalar(x: f64) -> SymBandMatrix {
        SymBandMatrix::diagonal(&[x]).unwrap()
    }

    fn order(n: f64) -> MomentOrder {
        MomentOrder::new(n).unwrap()
    }

    #[test]
    fn first_moment_always_exists() {
        let q = SymBandMatrix::tridiagonal(&[1.0, 1.3, 1.0], &[-0.3, -0.3]).unwrap();
        let qstar = q.add(&SymBandMatrix::diagonal(&[50.0, 0.1, 7.0]).unwrap()).unwrap();
        assert!(check_moment_condition(&qstar, &q, order(1.0)).unwrap());
    }

    #[test]
    fn scalar_second_moment_verdicts() {
        assert!(!check_moment_condition(&scalar(3.0), &scalar(1.0), order(2.0)).unwrap());
        assert!(check_moment_condition(&scalar(1.5), &scalar(1.0), order(2.0)).unwrap());
        assert!(check_moment_condition(&scalar(1.5), &SymBandMatrix::identity(2), order(2.0)).is_err());
    }

    #[test]
    fn modify_leaves_passing_scalar_unchanged() {
        let out = modify_precision(&scalar(1.2), &scalar(1.0), order(2.0), Clamp::Hard).unwrap();
        assert_eq!(out, scalar(1.2));
        let out = modify_precision(&scalar(1.2), &scalar(1.0), order(2.0), Clamp::Smooth).unwrap();
        assert_eq!(out, scalar(1.2));
    }

    #[test]
    fn modify_clamps_failing_scalar() {
        let out = modify_precision(&scalar(3.0), &scalar(1.0), order(2.0), Clamp::Hard).unwrap();
        let qt = out.get(0, 0);
        assert!((qt - 2.0 * (1.0 - 1e-5)).abs() < 1e-12, "{qt}");
        assert!(2.0 - qt > 0.0);
        assert_eq!(out.storage(), crate::band::Storage::Dense);
        assert!(check_moment_condition(&out, &scalar(1.0), order(2.0)).unwrap());
    }

    #[test]
    fn modify_is_identity_for_n_at_most_one() {
        let out = modify_precision(&scalar(30.0), &scalar(1.0), order(1.0), Clamp::Hard).unwrap();
        assert_eq!(out, scalar(30.0));
    }

    #[test]
    fn modify_rejects_non_pd_prior() {
        let err = modify_precision(&scalar(3.0), &scalar(-1.0), order(2.0), Clamp::Hard).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { .. }));
    }

    #[test]
    fn smooth_clamp_boundary_values() {
        let tau = 0.8;
        let delta = 1e-5;
        assert!((smooth_clamp(tau - delta, tau, delta) - (tau - delta)).abs() < 1e-12);
        assert!((smooth_clamp(tau, tau, delta) - tau).abs() < 1e-12);
        // Cubic evaluated at tau itself also lands on tau.
        let just_below = smooth_clamp(tau - 1e-15, tau, delta);
        assert!((just_below - tau).abs() < 1e-9);
    }

    #[test]
    fn smooth_clamp_is_monotone_c1_and_bounded() {
        let tau = (1.0 - 1e-5) / 1.0;
        let delta = 1e-3;
        let grid: Vec<f64> = (0..4001).map(|i| tau - 2.0 * delta + i as f64 * 1e-6).collect();
        let vals: Vec<f64> = grid.iter().map(|&l| smooth_clamp(l, tau, delta)).collect();
        for w in vals.windows(2) {
            assert!(w[1] >= w[0] - 1e-15);
        }
        assert!(vals.iter().all(|&v| v <= tau));
        // Derivatives from both sides at the two knots.
        let h = 1e-9;
        let d = |x: f64| (smooth_clamp(x + h, tau, delta) - smooth_clamp(x - h, tau, delta)) / (2.0 * h);
        let left = |x: f64| (smooth_clamp(x, tau, delta) - smooth_clamp(x - h, tau, delta)) / h;
        let right = |x: f64| (smooth_clamp(x + h, tau, delta) - smooth_clamp(x, tau, delta)) / h;
        assert!((left(tau - delta) - 1.0).abs() < 1e-4);
        assert!((right(tau - delta) - 1.0).abs() < 1e-4);
        assert!(left(tau).abs() < 1e-4);
        assert!(right(tau).abs() < 1e-12);
        // f'(tau - u) = 4u/delta - 3u^2/delta^2, so 1.25 at the midpoint.
        assert!((d(tau - delta / 2.0) - 1.25).abs() < 1e-4);
    }

    #[test]
    fn mixture_of_identical_components_is_degenerate() {
        let q = scalar(1.0);
        let qstar = scalar(1.5);
        let mix = build_mixture(&[0.3], &qstar, &q, order(2.0), Clamp::Hard, DEFAULT_PI).unwrap();
        assert_eq!(mix.pi(), 0.1);
        let g = GaussianProposal::new(vec![0.3], qstar).unwrap();
        for x in [-3.0, 0.0, 0.3, 2.0, 10.0] {
            assert!((mix.log_density(&[x]) - g.log_density(&[x])).abs() < 1e-12);
        }
    }

    #[test]
    fn mixture_heavy_precision_for_failing_scalar() {
        let mix = build_mixture(&[0.0], &scalar(3.0), &scalar(1.0), order(2.0), Clamp::Hard, DEFAULT_PI)
            .unwrap();
        assert!((mix.heavy().precision().get(0, 0) - 1.99998).abs() < 1e-10);
        assert_eq!(mix.fitted().precision().get(0, 0), 3.0);
    }

    #[test]
    fn mixture_log_density_equal_unit_densities() {
        assert!(log_add_exp(0.1f64.ln(), 0.9f64.ln()).abs() < 1e-15);
        assert_eq!(log_add_exp(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
    }

    #[test]
    fn mixture_log_density_matches_naive_sum() {
        let q1 = SymBandMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5])).unwrap();
        let q2 = SymBandMatrix::tridiagonal(&[4.0, 3.0], &[-1.0]).unwrap();
        let g1 = GaussianProposal::new(vec![0.1, -0.2], q1).unwrap();
        let g2 = GaussianProposal::new(vec![0.5, 0.4], q2).unwrap();
        let mix = MixtureProposal::new(0.3, g1.clone(), g2.clone()).unwrap();
        for x in [[0.0, 0.0], [1.0, -1.0], [0.4, 0.5]] {
            let naive = (0.3 * g1.log_density(&x).exp() + 0.7 * g2.log_density(&x).exp()).ln();
            assert!((mixture_log_density(&mix, &x) - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn mixture_validation() {
        let g = GaussianProposal::new(vec![0.0], scalar(1.0)).unwrap();
        let g2 = GaussianProposal::new(vec![0.0, 0.0], SymBandMatrix::identity(2)).unwrap();
        assert!(MixtureProposal::new(0.0, g.clone(), g.clone()).is_err());
        assert!(MixtureProposal::new(1.0, g.clone(), g.clone()).is_err());
        assert!(MixtureProposal::new(0.5, g, g2).is_err());
    }

    #[test]
    fn component_selection_frequency() {
        let g1 = GaussianProposal::new(vec![0.0], scalar(1.0)).unwrap();
        let g2 = GaussianProposal::new(vec![5.0], scalar(1.0)).unwrap();
        let mix = MixtureProposal::new(0.1, g1, g2).unwrap();
        let mut rng = rng_from_seed(17);
        let mut out = [0.0];
        let s = 100_000;
        let heavy = (0..s).filter(|_| mix.sample_with_component(&mut rng, &mut out)).count();
        let frac = heavy as f64 / s as f64;
        assert!((frac - 0.1).abs() < 0.006, "{frac}");
    }

    #[test]
    fn degenerate_mixture_samples_like_single_gaussian() {
        let g = GaussianProposal::new(vec![1.0], scalar(4.0)).unwrap();
        let mix = MixtureProposal::new(0.1, g.clone(), g).unwrap();
        let mut draws: Vec<f64> = sample_mixture(&mix, &mut rng_from_seed(2), 20_000)
            .into_iter()
            .map(|x| x[0])
            .collect();
        draws.sort_by(f64::total_cmp);
        let normal = statrs::distribution::Normal::new(1.0, 0.5).unwrap();
        use statrs::distribution::ContinuousCDF;
        let n = draws.len() as f64;
        let ks = draws
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = normal.cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value is about 1.63 / sqrt(n).
        assert!(ks < 1.63 / n.sqrt(), "{ks}");
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let mix = build_mixture(&[0.0, 0.0], &SymBandMatrix::identity(2).scaled(3.0), &SymBandMatrix::identity(2), order(2.0), Clamp::Hard, 0.1).unwrap();
        let a = sample_mixture(&mix, &mut rng_from_seed(4), 10);
        let b = sample_mixture(&mix, &mut rng_from_seed(4), 10);
        assert_eq!(a, b);
        let t = StudentTProposal::new(vec![0.0], scalar(1.0), 5.0).unwrap();
        assert_eq!(t.sample(&mut rng_from_seed(4), 5), t.sample(&mut rng_from_seed(4), 5));
    }

    #[test]
    fn student_t_density_matches_statrs() {
        use statrs::distribution::{Continuous, StudentsT};
        let t = StudentTProposal::new(vec![0.5], scalar(4.0), 5.0).unwrap();
        let reference = StudentsT::new(0.5, 0.5, 5.0).unwrap();
        for x in [-2.0, 0.0, 0.5, 3.0] {
            assert!((t.log_density(&[x]) - reference.ln_pdf(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn student_t_sample_variance() {
        // Var = nu / (nu - 2) * scale^2 = 5/3 for unit scale.
        let t = StudentTProposal::new(vec![0.0], scalar(1.0), 5.0).unwrap();
        let draws = t.sample(&mut rng_from_seed(8), 200_000);
        let var = draws.iter().map(|x| x[0] * x[0]).sum::<f64>() / draws.len() as f64;
        assert!((var - 5.0 / 3.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn proposals_round_trip_through_json() {
        let mix = build_mixture(&[0.2], &scalar(3.0), &scalar(1.0), order(2.0), Clamp::Hard, 0.1).unwrap();
        let text = serde_json::to_string(&mix).unwrap();
        assert!(text.contains("\"components\""));
        let back: MixtureProposal = serde_json::from_str(&text).unwrap();
        assert_eq!(back.pi(), mix.pi());
        assert_eq!(back.heavy().precision(), mix.heavy().precision());
        assert_eq!(back.fitted().mean(), mix.fitted().mean());
        let bad = text.replace("0.1,", "1.5,");
        assert!(serde_json::from_str::<MixtureProposal>(&bad).is_err());
    }

    /// E_g[w^n] for target N(0, 1/q) and proposal N(m, 1/qs), by closed form.
    /// `None` when the integrand does not decay.
    fn gaussian_moment_closed_form(q: f64, qs: f64, m: f64, n: f64) -> Option<f64> {
        let a = n * q + (1.0 - n) * qs;
        if a <= 0.0 {
            return None;
        }
        let log_v = 0.5 * n * q.ln() + 0.5 * (1.0 - n) * qs.ln() - 0.5 * a.ln()
            - 0.5 * n * (1.0 - n) * q * qs * m * m / a;
        Some(log_v.exp())
    }

    fn gaussian_moment_quadrature(q: f64, qs: f64, m: f64, n: f64) -> f64 {
        let lp = |x: f64| 0.5 * (q / std::f64::consts::TAU).ln() - 0.5 * q * x * x;
        let lg = |x: f64| 0.5 * (qs / std::f64::consts::TAU).ln() - 0.5 * qs * (x - m) * (x - m);
        let h = 1e-3;
        (-40_000..=40_000)
            .map(|i| {
                let x = i as f64 * h;
                (n * lp(x) + (1.0 - n) * lg(x)).exp() * h
            })
            .sum()
    }

    #[test]
    fn closed_form_moment_matches_quadrature() {
        for &(q, qs, m, n) in &[(1.0, 1.5, 0.3, 2.0), (2.0, 2.5, -0.5, 3.0), (1.0, 0.5, 0.0, 2.0)] {
            let cf = gaussian_moment_closed_form(q, qs, m, n).unwrap();
            let quad = gaussian_moment_quadrature(q, qs, m, n);
            assert!((cf - quad).abs() < 1e-6 * cf, "{cf} {quad}");
        }
    }

    #[test]
    fn moment_verdict_matches_gaussian_integral_grid() {
        let mut disagreements = 0;
        for i in 0..5 {
            for j in 0..5 {
                for k in 0..4 {
                    let q = 0.3 + 0.5 * i as f64;
                    let qs = 0.2 + 0.77 * j as f64;
                    let n = [1.5, 2.0, 3.0, 4.5][k];
                    let finite = gaussian_moment_closed_form(q, qs, 0.4, n).is_some();
                    let verdict = check_moment_condition(&scalar(qs), &scalar(q), order(n)).unwrap();
                    if finite != verdict {
                        disagreements += 1;
                    }
                }
            }
        }
        assert_eq!(disagreements, 0);
    }

    #[test]
    fn monte_carlo_second_moment_converges_when_condition_holds() {
        let (q, qs, m) = (1.0, 1.5, 0.3);
        let g = GaussianProposal::new(vec![m], scalar(qs)).unwrap();
        let target = GaussianProposal::new(vec![0.0], scalar(q)).unwrap();
        let draws = g.sample(&mut rng_from_seed(12), 1_000_000);
        let w2: Vec<f64> = draws
            .iter()
            .map(|x| (2.0 * (target.log_density(x) - g.log_density(x))).exp())
            .collect();
        let mean = w2.iter().sum::<f64>() / w2.len() as f64;
        let exact = gaussian_moment_closed_form(q, qs, m, 2.0).unwrap();
        assert!((mean - exact).abs() < 0.02 * exact, "{mean} vs {exact}");
    }

    fn random_spd(rng: &mut impl rand::Rng, d: usize, ridge: f64) -> SymBandMatrix {
        let b = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        SymBandMatrix::from_dense(&(&b * b.transpose() + DMatrix::identity(d, d) * ridge)).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn modified_precision_satisfies_condition(seed in any::<u64>(), d in 1usize..12, n in prop::sample::select(vec![1.5, 2.0, 3.0, 4.0]), smooth in any::<bool>()) {
            let mut rng = rng_from_seed(seed);
            let q = random_spd(&mut rng, d, 0.5);
            let qstar = q.add(&random_spd(&mut rng, d, 0.01).scaled(3.0)).unwrap();
            let ord = order(n);
            let clamp = if smooth { Clamp::Smooth } else { Clamp::Hard };
            let qt = modify_precision(&qstar, &q, ord, clamp).unwrap();
            let gap = SymBandMatrix::lin_comb(n, &q, -(n - 1.0), &qt).unwrap();
            prop_assert!(gap.factorize().unwrap().is_success());
            if check_moment_condition(&qstar, &q, ord).unwrap() && clamp == Clamp::Hard {
                prop_assert_eq!(&qt, &qstar);
            }
        }
    }
}
