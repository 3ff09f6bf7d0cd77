use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use super::WeightSample;
use crate::error::{invalid, Error, Result};

pub const DEFAULT_KSC_PERCENTILE: f64 = 90.0;
pub const KSC_MIN_WEIGHTS: usize = 100;
pub const KSC_MIN_EXCEEDANCES: usize = 10;
const REJECT_LEVEL: f64 = 0.01;
const XI_NULL: f64 = 0.5;
const XI_EXPONENTIAL: f64 = 1e-8;

/// Generalized Pareto fit to the weight exceedances over a threshold, with a
/// Wald test of `xi <= 1/2` (finite weight variance).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GpdFit {
    pub xi: f64,
    /// Scale, in units of the weights divided by their maximum.
    pub gpd_scale: f64,
    /// Threshold, in units of the weights divided by their maximum.
    pub threshold: f64,
    /// Threshold on the log-weight scale.
    pub log_threshold: f64,
    pub exceedances: usize,
    pub se_xi: f64,
    pub wald: f64,
    pub p_value: f64,
    pub reject: bool,
}

/// [`ksc_test_at`] with the threshold at the 90th percentile.
pub fn ksc_test(ws: &WeightSample) -> Result<GpdFit> {
    ksc_test_at(ws, DEFAULT_KSC_PERCENTILE)
}

/// Fit a generalized Pareto distribution by maximum likelihood to the
/// weights above the given percentile and test `H0: xi <= 1/2` one-sided.
/// Rejection at `p < 0.01` indicates infinite weight variance.
pub fn ksc_test_at(ws: &WeightSample, percentile: f64) -> Result<GpdFit> {
    if !(percentile > 0.0 && percentile < 100.0) {
        return Err(invalid("percentile must lie in (0, 100)"));
    }
    let finite: Vec<f64> = ws.log_weights.iter().copied().filter(|w| w.is_finite()).collect();
    if finite.len() < KSC_MIN_WEIGHTS {
        return Err(invalid(format!(
            "need at least {KSC_MIN_WEIGHTS} finite weights, got {}",
            finite.len()
        )));
    }
    let max = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = finite.iter().map(|l| (l - max).exp()).collect();
    w.sort_by(f64::total_cmp);
    let u = quantile_sorted(&w, percentile / 100.0);
    let z: Vec<f64> = w.iter().filter(|&&x| x > u).map(|x| x - u).collect();
    if z.len() < KSC_MIN_EXCEEDANCES {
        return Err(Error::InsufficientTail {
            found: z.len(),
            needed: KSC_MIN_EXCEEDANCES,
        });
    }
    let (xi, scale, se) = fit_gpd(&z)?;
    let wald = (xi - XI_NULL) / se;
    let p_value = 1.0 - Normal::standard().cdf(wald);
    Ok(GpdFit {
        xi,
        gpd_scale: scale,
        threshold: u,
        log_threshold: u.ln() + max,
        exceedances: z.len(),
        se_xi: se,
        wald,
        p_value,
        reject: p_value < REJECT_LEVEL,
    })
}

/// Linear interpolation between order statistics.
fn quantile_sorted(x: &[f64], p: f64) -> f64 {
    let h = (x.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(x.len() - 1);
    x[lo] + (h - lo as f64) * (x[hi] - x[lo])
}

/// Negative GPD log-likelihood of exceedances in `(xi, log beta)`.
struct GpdNegLogLik<'a> {
    z: &'a [f64],
}

impl GpdNegLogLik<'_> {
    fn eval(&self, xi: f64, log_beta: f64) -> f64 {
        let beta = log_beta.exp();
        let r = self.z.len() as f64;
        if xi.abs() < XI_EXPONENTIAL {
            return r * log_beta + self.z.iter().sum::<f64>() / beta;
        }
        let mut s = 0.0;
        for &z in self.z {
            let t = xi * z / beta;
            if t <= -1.0 {
                return f64::INFINITY;
            }
            s += t.ln_1p();
        }
        r * log_beta + (1.0 + 1.0 / xi) * s
    }
}

impl CostFunction for GpdNegLogLik<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.eval(p[0], p[1]))
    }
}

fn nelder_mead(cost: &GpdNegLogLik, start: [f64; 2], step: f64) -> Result<(Vec<f64>, f64)> {
    // Absolute tolerance on the spread of simplex costs, which grow like r.
    let tol = 1e-10 * cost.z.len() as f64;
    let simplex = vec![
        start.to_vec(),
        vec![start[0] + step, start[1]],
        vec![start[0], start[1] + step],
    ];
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(tol)
        .map_err(|e| invalid(e.to_string()))?;
    let res = Executor::new(GpdNegLogLik { z: cost.z }, solver)
        .configure(|s| s.max_iters(2000))
        .run()
        .map_err(|e| invalid(format!("GPD optimization failed: {e}")))?;
    let best = res
        .state()
        .get_best_param()
        .cloned()
        .ok_or_else(|| invalid("GPD optimization returned no point"))?;
    let f = cost.eval(best[0], best[1]);
    Ok((best, f))
}

/// Returns `(xi, beta, se(xi))`.
fn fit_gpd(z: &[f64]) -> Result<(f64, f64, f64)> {
    // Standardize so the optimizer works near unit scale; xi is unaffected.
    let r = z.len() as f64;
    let mean = z.iter().sum::<f64>() / r;
    if !(mean > 0.0) {
        return Err(Error::DegenerateSample);
    }
    let zs: Vec<f64> = z.iter().map(|v| v / mean).collect();
    let var = zs.iter().map(|v| (v - 1.0) * (v - 1.0)).sum::<f64>() / (r - 1.0);
    // Method-of-moments start, valid for xi < 1/2.
    let xi_mom = (0.5 * (1.0 - 1.0 / var)).clamp(-0.4, 0.45);
    let beta_mom = (1.0 - xi_mom).max(0.1);
    let cost = GpdNegLogLik { z: &zs };
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in [[xi_mom, beta_mom.ln()], [0.75, 0.0]] {
        let (p, f) = nelder_mead(&cost, start, 0.1)?;
        let (p, f) = nelder_mead(&cost, [p[0], p[1]], 1e-3).map(|x| if x.1 <= f { x } else { (p, f) })?;
        if best.as_ref().is_none_or(|b| f < b.1) {
            best = Some((p, f));
        }
    }
    let (p, _) = best.expect("at least one start");
    let (xi, log_beta) = (p[0], p[1]);
    let se = observed_se_xi(&cost, xi, log_beta).unwrap_or_else(|| (1.0 + xi).abs() / r.sqrt());
    Ok((xi, log_beta.exp() * mean, se))
}

/// `sqrt([H^{-1}]_{xi xi})` from a central-difference Hessian of the negative
/// log-likelihood. The entry is invariant to reparameterizing the scale.
fn observed_se_xi(cost: &GpdNegLogLik, xi: f64, lb: f64) -> Option<f64> {
    let h = 1e-4;
    let f = |a: f64, b: f64| cost.eval(a, b);
    let f0 = f(xi, lb);
    let hxx = (f(xi + h, lb) - 2.0 * f0 + f(xi - h, lb)) / (h * h);
    let hbb = (f(xi, lb + h) - 2.0 * f0 + f(xi, lb - h)) / (h * h);
    let hxb = (f(xi + h, lb + h) - f(xi + h, lb - h) - f(xi - h, lb + h) + f(xi - h, lb - h)) / (4.0 * h * h);
    let det = hxx * hbb - hxb * hxb;
    if !(det > 0.0 && hxx > 0.0) || !det.is_finite() {
        return None;
    }
    let var = hbb / det;
    (var > 0.0).then(|| var.sqrt())
}
