use nalgebra::DMatrix;
use serde::Serialize;

use super::ar1::{ar1_precision, Ar1Spec};
use super::spdk::SpdkFit;
use crate::band::{smallest_eigenvalue, SymBandMatrix, EIGEN_TOL};
use crate::error::{invalid, Error, Result};
use crate::models::GaussianPrior;
use crate::proposal::{GaussianProposal, MixtureProposal};

pub const DEFAULT_EPS_INFLATE: f64 = 0.05;

/// Added to the `phi = 0` variance bound, which is strict.
pub const PHI_ZERO_MARGIN: f64 = 1e-5;

const MAX_IMPOSE_ITER: usize = 100_000;

/// Leading principal minors of `Q - (n - 1) diag(1 / v)` via the pivot
/// recursion `d_t = a_t - b_{t-1}^2 / d_{t-1}`, with `Lambda_t = prod d_i`
/// stored as `log |Lambda_t|` and its sign.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SylvesterTrace {
    pub holds: bool,
    pub pivots: Vec<f64>,
    pub log_abs_minor: Vec<f64>,
    pub sign: Vec<i8>,
}

impl SylvesterTrace {
    /// Number of sign changes along `Lambda_1, ..., Lambda_T`.
    pub fn sign_changes(&self) -> usize {
        self.sign.windows(2).filter(|w| w[0] != w[1]).count()
    }
}

/// Sylvester's criterion for `Q - (n - 1) C` with `C = diag(1 / v_t)` and
/// tridiagonal `Q`. `holds` is true iff every leading minor is positive.
pub fn sylvester_check(q: &SymBandMatrix, v: &[f64], n: f64) -> Result<SylvesterTrace> {
    if q.block_size() != 1 {
        return Err(invalid("Sylvester check needs scalar states"));
    }
    let t = q.dim();
    if v.len() != t {
        return Err(invalid(format!("expected {t} variances, got {}", v.len())));
    }
    let diag = q.diag_blocks();
    let off = q.off_blocks();
    let mut pivots = Vec::with_capacity(t);
    let mut log_abs = Vec::with_capacity(t);
    let mut sign = Vec::with_capacity(t);
    let mut log_acc = 0.0;
    let mut sign_acc: i8 = 1;
    let mut prev = 0.0;
    for i in 0..t {
        let a = diag[i] - (n - 1.0) / v[i];
        let mut d = if i == 0 { a } else { a - off[i - 1] * off[i - 1] / prev };
        if d == 0.0 {
            // A vanishing minor; nudge so the recursion can continue.
            log_abs.push(f64::NEG_INFINITY);
            sign.push(0);
            pivots.push(0.0);
            d = -f64::EPSILON * a.abs().max(f64::MIN_POSITIVE);
            sign_acc = -sign_acc;
            log_acc += d.abs().ln();
            prev = d;
            continue;
        }
        if d < 0.0 {
            sign_acc = -sign_acc;
        }
        log_acc += d.abs().ln();
        pivots.push(d);
        log_abs.push(log_acc);
        sign.push(sign_acc);
        prev = d;
    }
    let holds = pivots.iter().all(|&d| d > 0.0);
    Ok(SylvesterTrace {
        holds,
        pivots,
        log_abs_minor: log_abs,
        sign,
    })
}

/// Smallest constant approximating-model variance `v` for which
/// `Q - (n - 1) v^{-1} I` is positive definite for every length:
/// `(n - 1) s_a (1 + |phi|) / (1 - |phi|)`, or `(n - 1) s_a + 1e-5` when
/// `phi = 0`, with `s_a` the stationary variance.
pub fn constant_variance_bound(spec: &Ar1Spec, n: f64) -> Result<f64> {
    if !(n > 1.0) {
        return Err(invalid("variance bound needs n > 1"));
    }
    let sa = spec.stationary_variance();
    let phi = spec.phi().abs();
    if phi == 0.0 {
        Ok((n - 1.0) * sa + PHI_ZERO_MARGIN)
    } else {
        Ok((n - 1.0) * sa * (1.0 + phi) / (1.0 - phi))
    }
}

/// Output of [`impose_scalar`].
#[derive(Clone, Debug, Serialize)]
pub struct ImposedScalar {
    /// Fit with `C_t = 1 / v*_t` and `b_t = C_t y_hat_t`.
    pub fit: SpdkFit,
    pub variances: Vec<f64>,
    pub k: usize,
    pub bound: f64,
}

/// Inflate every `v_t` below the constant bound by `1 + eps` per round
/// until `Q - (n - 1) C` passes Sylvester's criterion.
pub fn impose_scalar(fit: &SpdkFit, spec: &Ar1Spec, n: f64, eps_inflate: f64) -> Result<ImposedScalar> {
    if !(eps_inflate > 0.0) {
        return Err(invalid("inflation factor must be positive"));
    }
    let (_, q) = ar1_precision(&spec.with_len(fit.mode.len()))?;
    let v0 = fit.variances()?;
    let y_hat = fit.pseudo_observations()?;
    if n <= 1.0 {
        return Ok(ImposedScalar {
            fit: fit.clone(),
            variances: v0,
            k: 0,
            bound: 0.0,
        });
    }
    let bound = constant_variance_bound(spec, n)?;
    let mut v = v0;
    let mut k = 0;
    loop {
        if sylvester_check(&q, &v, n)?.holds {
            let c: Vec<f64> = v.iter().map(|x| 1.0 / x).collect();
            let m = SymBandMatrix::lin_comb(1.0, &q, 1.0 - n, &SymBandMatrix::diagonal(&c)?)?;
            if m.factorize()?.is_success() {
                break;
            }
        }
        if k == MAX_IMPOSE_ITER {
            return Err(Error::Diverged { iterations: k, last: v });
        }
        let mut any = false;
        for x in v.iter_mut() {
            // Non-positive C_t only helps the condition.
            if *x > 0.0 && *x < bound {
                *x *= 1.0 + eps_inflate;
                any = true;
            }
        }
        if !any {
            // Every v_t is at or above the bound; inflate them all.
            for x in v.iter_mut().filter(|x| **x > 0.0) {
                *x *= 1.0 + eps_inflate;
            }
        }
        k += 1;
    }
    let c: Vec<f64> = v.iter().map(|x| 1.0 / x).collect();
    let b = c.iter().zip(&y_hat).map(|(c, y)| c * y).collect();
    Ok(ImposedScalar {
        fit: SpdkFit {
            b,
            c: SymBandMatrix::diagonal(&c)?,
            mode: fit.mode.clone(),
            iterations: fit.iterations,
            converged: fit.converged,
        },
        variances: v,
        k,
        bound,
    })
}

/// Output of [`impose_block`].
#[derive(Clone, Debug, Serialize)]
pub struct ImposedBlock {
    pub c: SymBandMatrix,
    pub k: usize,
}

/// Shrink `C` by `1 + eps` per round until `Q - (n - 1) C` has a positive
/// smallest eigenvalue. `k > 0` means the original `C` failed.
pub fn impose_block(c: &SymBandMatrix, q: &SymBandMatrix, n: f64, eps_inflate: f64) -> Result<ImposedBlock> {
    if !(eps_inflate > 0.0) {
        return Err(invalid("inflation factor must be positive"));
    }
    if c.dim() != q.dim() || c.block_size() != q.block_size() {
        return Err(invalid("C and Q do not conform"));
    }
    let mut k = 0;
    let mut scale = 1.0;
    loop {
        let ck = c.scaled(scale);
        let m = SymBandMatrix::lin_comb(1.0, q, 1.0 - n, &ck)?;
        if smallest_eigenvalue(&m, EIGEN_TOL)? > EIGEN_TOL && m.factorize()?.is_success() {
            return Ok(ImposedBlock { c: ck, k });
        }
        if k == MAX_IMPOSE_ITER {
            return Err(Error::Diverged {
                iterations: k,
                last: ck.main_diagonal(),
            });
        }
        k += 1;
        scale /= 1.0 + eps_inflate;
    }
}

/// Two-component proposal: weight `pi` on the approximating model built from
/// `imposed_c`, the rest on the original fit. The imposed component's mean is
/// the mode of its own approximating model, with `b*_t = C*_t C_t^{-1} b_t`.
pub fn build_ssm_mixture(
    fit: &SpdkFit,
    imposed_c: &SymBandMatrix,
    prior: &GaussianPrior,
    pi: f64,
) -> Result<MixtureProposal> {
    let q = prior.precision();
    let fitted = fit.proposal(prior)?;
    if imposed_c.dim() != fit.c.dim() || imposed_c.block_size() != fit.c.block_size() {
        return Err(invalid("imposed C does not conform to the fit"));
    }
    let b_star = reweight_b(&fit.b, &fit.c, imposed_c)?;
    let q_tilde = imposed_c.add(q)?;
    let chol = q_tilde.factorize()?;
    if let Some(block_row) = chol.failed_block_row() {
        return Err(Error::NotPositiveDefinite { block_row });
    }
    let q_mu = q.mul_vec(prior.mean());
    let rhs: Vec<f64> = b_star.iter().zip(&q_mu).map(|(a, b)| a + b).collect();
    let mean = chol.solve(&rhs)?;
    let heavy = GaussianProposal::new(mean, q_tilde)?;
    MixtureProposal::new(pi, heavy, fitted)
}

fn reweight_b(b: &[f64], c: &SymBandMatrix, c_star: &SymBandMatrix) -> Result<Vec<f64>> {
    let m = c.block_size();
    let mut out = Vec::with_capacity(b.len());
    for t in 0..c.num_blocks() {
        let bt = &b[t * m..(t + 1) * m];
        let ct = c.diag_block(t);
        let cst = c_star.diag_block(t);
        if ct == cst {
            out.extend_from_slice(bt);
            continue;
        }
        let ct = DMatrix::from_row_slice(m, m, ct);
        let cst = DMatrix::from_row_slice(m, m, cst);
        let y_hat = ct
            .lu()
            .solve(&nalgebra::DVector::from_column_slice(bt))
            .ok_or_else(|| invalid(format!("C block {} is singular", t + 1)))?;
        out.extend((cst * y_hat).iter());
    }
    Ok(out)
}
