//! Parameter priors, the panel likelihood estimator, and pseudo-marginal
//! adaptive random walk Metropolis-Hastings.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimators::{estimate_likelihood, iact, LikelihoodEstimate};
use crate::models::{GaussianPrior, PanelAr1Model, PanelSeries, PoissonSsmModel};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sampler::{ssm_proposal, SamplerSpec};
use crate::statespace::{ar1_precision, Ar1Spec};

/// Prior variance of each regression coefficient.
pub const BETA_PRIOR_VARIANCE: f64 = 100.0;
/// Iterations with the fixed diagonal random walk before adaptation starts.
pub const ADAPT_START: usize = 1000;
pub const INITIAL_STEP: f64 = 0.1;
pub const ADAPT_JITTER: f64 = 1e-8;

/// Model parameters `(beta, phi, sigma2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Psi {
    pub beta: Vec<f64>,
    pub phi: f64,
    pub sigma2: f64,
}

impl Psi {
    pub fn new(beta: Vec<f64>, phi: f64, sigma2: f64) -> Self {
        Self { beta, phi, sigma2 }
    }

    pub fn dim(&self) -> usize {
        self.beta.len() + 2
    }

    pub fn in_support(&self) -> bool {
        self.phi.abs() < 1.0 && self.sigma2 > 0.0 && self.sigma2.is_finite() && self.beta.iter().all(|b| b.is_finite())
    }

    /// `(beta, atanh(phi), log(sigma2))`.
    pub fn to_unconstrained(&self) -> Vec<f64> {
        let mut t = self.beta.clone();
        t.push(self.phi.atanh());
        t.push(self.sigma2.ln());
        t
    }

    pub fn from_unconstrained(theta: &[f64]) -> Result<Self> {
        if theta.len() < 2 {
            return Err(invalid("parameter vector needs phi and sigma2"));
        }
        let p = theta.len() - 2;
        Ok(Self {
            beta: theta[..p].to_vec(),
            phi: theta[p].tanh(),
            sigma2: theta[p + 1].exp(),
        })
    }

    pub fn names(num_beta: usize) -> Vec<String> {
        let mut n: Vec<String> = (0..num_beta).map(|i| format!("beta{i}")).collect();
        n.push("phi".into());
        n.push("sigma2".into());
        n
    }

    /// `(beta..., phi, sigma2)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        v.push(self.phi);
        v.push(self.sigma2);
        v
    }

    pub fn ar1(&self, len: usize) -> Result<Ar1Spec> {
        Ar1Spec::new(0.0, self.phi, self.sigma2, len)
    }
}

/// Log prior density of `psi`: `beta ~ N(0, 100 I)`, `p(phi) ∝ (1 - phi^2)^{-1/2}`,
/// `p(sigma2) ∝ 1 / sigma2`. The last two are unnormalized.
pub fn log_prior(psi: &Psi) -> f64 {
    if !psi.in_support() {
        return f64::NEG_INFINITY;
    }
    let p = psi.beta.len() as f64;
    let ss: f64 = psi.beta.iter().map(|b| b * b).sum();
    let beta = -0.5 * p * (2.0 * std::f64::consts::PI * BETA_PRIOR_VARIANCE).ln() - 0.5 * ss / BETA_PRIOR_VARIANCE;
    beta - 0.5 * (1.0 - psi.phi * psi.phi).ln() - psi.sigma2.ln()
}

/// [`log_prior`] of the unconstrained vector, including the Jacobians
/// `1 - phi^2` and `sigma2` of the inverse transforms.
pub fn log_prior_unconstrained(theta: &[f64]) -> f64 {
    let Ok(psi) = Psi::from_unconstrained(theta) else {
        return f64::NEG_INFINITY;
    };
    let lp = log_prior(&psi);
    if lp == f64::NEG_INFINITY {
        return lp;
    }
    lp + (1.0 - psi.phi * psi.phi).ln() + psi.sigma2.ln()
}

/// Unbiased likelihood estimator indexed by a seed.
pub trait LikelihoodEstimator: Sync {
    fn num_beta(&self) -> usize;

    fn log_likelihood(&self, psi: &Psi, seed: u64) -> Result<f64>;
}

/// Sum of per-panel estimates.
#[derive(Clone, Debug, Serialize)]
pub struct PanelEstimate {
    pub log_value: f64,
    pub panels: Vec<LikelihoodEstimate>,
    /// Per panel: the SPDK Gaussian satisfies the moment condition.
    pub condition_holds: Vec<bool>,
}

/// Estimate the panel likelihood as the product of per-panel estimates.
/// Panel `i` draws from `derive_seed(seed, &[i])`, so a fixed seed gives
/// common random numbers across parameter values.
pub fn estimate_panel_likelihood(
    model: &PanelAr1Model,
    sampler: &SamplerSpec,
    samples: usize,
    seed: u64,
) -> Result<PanelEstimate> {
    let results: Vec<Result<(LikelihoodEstimate, bool)>> = (0..model.num_panels())
        .into_par_iter()
        .map(|i| {
            let meas = model.panel_measurement(i);
            let ar = model.panel_ar1(i);
            let prior = model.panel_prior(i);
            let (_, built) = ssm_proposal(&meas, &prior, &ar, sampler)?;
            let est = estimate_likelihood(&meas, &prior, &built.proposal, samples, derive_seed(seed, &[i as u64]))?;
            Ok((est, built.condition_holds))
        })
        .collect();
    let mut panels = Vec::with_capacity(results.len());
    let mut holds = Vec::with_capacity(results.len());
    let mut total = 0.0;
    for (i, r) in results.into_iter().enumerate() {
        let (est, h) = r.map_err(|e| Error::Panel {
            panel: i,
            source: Box::new(e),
        })?;
        total += est.log_value;
        panels.push(est);
        holds.push(h);
    }
    Ok(PanelEstimate {
        log_value: total,
        panels,
        condition_holds: holds,
    })
}

/// Panel likelihood as a function of `psi`.
#[derive(Clone, Debug)]
pub struct PanelLikelihood {
    pub panels: Vec<PanelSeries>,
    pub sampler: SamplerSpec,
    pub samples: usize,
}

impl LikelihoodEstimator for PanelLikelihood {
    fn num_beta(&self) -> usize {
        self.panels.first().and_then(|p| p.x.first()).map_or(0, |r| r.len())
    }

    fn log_likelihood(&self, psi: &Psi, seed: u64) -> Result<f64> {
        let model = PanelAr1Model::new(self.panels.clone(), psi.beta.clone(), psi.ar1(1)?)?;
        Ok(estimate_panel_likelihood(&model, &self.sampler, self.samples, seed)?.log_value)
    }
}

/// Poisson state space likelihood as a function of `psi = (beta, phi, sigma2)`.
#[derive(Clone, Debug)]
pub struct SsmLikelihood {
    pub y: Vec<u64>,
    pub sampler: SamplerSpec,
    pub samples: usize,
}

impl LikelihoodEstimator for SsmLikelihood {
    fn num_beta(&self) -> usize {
        1
    }

    fn log_likelihood(&self, psi: &Psi, seed: u64) -> Result<f64> {
        if psi.beta.len() != 1 {
            return Err(invalid("the Poisson state space model has one intercept"));
        }
        let meas = PoissonSsmModel::new(self.y.clone(), psi.beta[0])?;
        let ar = psi.ar1(self.y.len())?;
        let (mu, q) = ar1_precision(&ar)?;
        let prior = GaussianPrior::new(mu, q)?;
        let (_, built) = ssm_proposal(&meas, &prior, &ar, &self.sampler)?;
        Ok(estimate_likelihood(&meas, &prior, &built.proposal, self.samples, seed)?.log_value)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PmmhConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PmmhOutput {
    pub names: Vec<String>,
    /// Post burn-in draws of `(beta..., phi, sigma2)`.
    pub chain: Vec<Vec<f64>>,
    pub log_post: Vec<f64>,
    pub accepted: Vec<bool>,
    /// Over the post burn-in iterations.
    pub acceptance_rate: f64,
    pub iact: Vec<f64>,
    pub mean_iact: f64,
    /// Proposals whose likelihood estimate failed; each was rejected.
    pub estimator_failures: usize,
    pub runtime_secs: f64,
}

impl PmmhOutput {
    /// CSV with columns `iter, <names>, log_post_est, accepted`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["iter".to_string()];
        header.extend(self.names.iter().cloned());
        header.push("log_post_est".into());
        header.push("accepted".into());
        w.write_record(&header)?;
        for (i, row) in self.chain.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            rec.push(self.log_post[i].to_string());
            rec.push(self.accepted[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Running mean and covariance (Welford).
struct RunningCov {
    n: usize,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl RunningCov {
    fn new(d: usize) -> Self {
        Self {
            n: 0,
            mean: DVector::zeros(d),
            m2: DMatrix::zeros(d, d),
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let x = DVector::from_column_slice(x);
        let delta = &x - &self.mean;
        self.mean += &delta / self.n as f64;
        let delta2 = &x - &self.mean;
        self.m2 += &delta * delta2.transpose();
    }

    fn covariance(&self) -> DMatrix<f64> {
        let c = &self.m2 / (self.n.max(2) - 1) as f64;
        (&c + c.transpose()) * 0.5
    }
}

/// Pseudo-marginal random walk Metropolis-Hastings on the unconstrained
/// parameters. The first [`ADAPT_START`] iterations use the proposal
/// covariance `0.1^2 / d I`, later ones `2.38^2 / d (Cov + 1e-8 I)` of the
/// draws so far. Each proposal gets a fresh likelihood seed; the current
/// state's estimate is kept until a proposal is accepted.
pub fn run_pmmh<E: LikelihoodEstimator + ?Sized>(
    estimator: &E,
    init: &Psi,
    config: &PmmhConfig,
) -> Result<PmmhOutput> {
    let start = Instant::now();
    if !init.in_support() {
        return Err(invalid("initial parameters are outside the prior support"));
    }
    if init.beta.len() != estimator.num_beta() {
        return Err(invalid("initial beta has the wrong length"));
    }
    let d = init.dim();
    let total = config.burn_in + config.iterations;
    let mut theta = init.to_unconstrained();
    let mut psi = init.clone();
    let ll = estimator.log_likelihood(&psi, derive_seed(config.seed, &[0]))?;
    let mut lp = ll + log_prior_unconstrained(&theta);
    if !lp.is_finite() {
        return Err(invalid("log posterior at the initial parameters is not finite"));
    }
    let mut stats = RunningCov::new(d);
    stats.push(&theta);
    let mut chain = Vec::with_capacity(config.iterations);
    let mut log_post = Vec::with_capacity(config.iterations);
    let mut accepted = Vec::with_capacity(config.iterations);
    let mut failures = 0;
    let fixed = DMatrix::identity(d, d) * (INITIAL_STEP * INITIAL_STEP / d as f64);
    let scale = 2.38 * 2.38 / d as f64;

    for it in 1..=total {
        let mut rng = rng_from_seed(derive_seed(config.seed, &[1, it as u64]));
        let cov = if it <= ADAPT_START {
            fixed.clone()
        } else {
            (stats.covariance() + DMatrix::identity(d, d) * ADAPT_JITTER) * scale
        };
        let l = cov
            .cholesky()
            .map(|c| c.l())
            .unwrap_or_else(|| fixed.map(f64::sqrt));
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let step = l * z;
        let prop: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let u: f64 = rng.random();

        let prior_prop = log_prior_unconstrained(&prop);
        let mut acc = false;
        if prior_prop.is_finite() {
            let psi_prop = Psi::from_unconstrained(&prop)?;
            match estimator.log_likelihood(&psi_prop, derive_seed(config.seed, &[2, it as u64])) {
                Ok(ll_prop) if !ll_prop.is_nan() => {
                    let lp_prop = ll_prop + prior_prop;
                    if u.ln() < lp_prop - lp {
                        theta = prop;
                        psi = psi_prop;
                        lp = lp_prop;
                        acc = true;
                    }
                }
                _ => failures += 1,
            }
        }
        stats.push(&theta);
        if it > config.burn_in {
            chain.push(psi.to_vec());
            log_post.push(lp);
            accepted.push(acc);
        }
    }

    let kept = chain.len();
    let acceptance_rate = if kept == 0 {
        0.0
    } else {
        accepted.iter().filter(|a| **a).count() as f64 / kept as f64
    };
    let iacts: Vec<f64> = (0..d)
        .map(|j| {
            let col: Vec<f64> = chain.iter().map(|r| r[j]).collect();
            match iact(&col) {
                Ok(r) => r.estimate,
                // A chain that never moved carries one draw's worth of information.
                Err(Error::ConstantChain) => col.len() as f64,
                Err(_) => f64::NAN,
            }
        })
        .collect();
    let mean_iact = iacts.iter().sum::<f64>() / d as f64;
    Ok(PmmhOutput {
        names: Psi::names(init.beta.len()),
        chain,
        log_post,
        accepted,
        acceptance_rate,
        iact: iacts,
        mean_iact,
        estimator_failures: failures,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::GaussianNoiseModel;
    use crate::proposal::GaussianProposal;
    use crate::statespace::spdk_fit;

    #[test]
    fn transforms_round_trip() {
        let psi = Psi::new(vec![1.4, -1.0], 0.8, 0.18);
        let back = Psi::from_unconstrained(&psi.to_unconstrained()).unwrap();
        assert!((back.phi - 0.8).abs() < 1e-12);
        assert!((back.sigma2 - 0.18).abs() < 1e-12);
        assert_eq!(back.beta, psi.beta);
        assert_eq!(Psi::names(2), vec!["beta0", "beta1", "phi", "sigma2"]);
    }

    #[test]
    fn prior_values() {
        let psi = Psi::new(vec![0.0], 0.0, 1.0);
        let expected = -0.5 * (2.0 * std::f64::consts::PI * 100.0).ln();
        assert!((log_prior(&psi) - expected).abs() < 1e-14);
        assert!((log_prior_unconstrained(&psi.to_unconstrained()) - expected).abs() < 1e-14);
        let c = 3.7;
        let scaled = Psi::new(vec![0.0], 0.0, c);
        assert!((log_prior(&scaled) - (expected - c.ln())).abs() < 1e-14);
        assert_eq!(log_prior(&Psi::new(vec![0.0], 1.0, 1.0)), f64::NEG_INFINITY);
        assert_eq!(log_prior_unconstrained(&[0.0, 40.0, 0.0]), f64::NEG_INFINITY);
        assert_eq!(log_prior(&Psi::new(vec![0.0], 0.2, -1.0)), f64::NEG_INFINITY);
    }

    #[test]
    fn jacobian_matches_numeric_derivative() {
        let theta = [0.3, -0.7, 0.4];
        let psi = Psi::from_unconstrained(&theta).unwrap();
        let h = 1e-6;
        let dphi = ((theta[1] + h).tanh() - (theta[1] - h).tanh()) / (2.0 * h);
        let ds2 = ((theta[2] + h).exp() - (theta[2] - h).exp()) / (2.0 * h);
        let expected = log_prior(&psi) + dphi.ln() + ds2.ln();
        assert!((log_prior_unconstrained(&theta) - expected).abs() < 1e-8);
    }

    /// Stand-in likelihood: a standard normal on `log sigma2` makes the
    /// otherwise improper target proper; optional Gaussian data on `beta`.
    struct Toy {
        y: Vec<f64>,
    }

    impl LikelihoodEstimator for Toy {
        fn num_beta(&self) -> usize {
            1
        }

        fn log_likelihood(&self, psi: &Psi, _seed: u64) -> Result<f64> {
            let ls = psi.sigma2.ln();
            let data: f64 = self.y.iter().map(|y| -0.5 * (y - psi.beta[0]).powi(2)).sum();
            Ok(-0.5 * ls * ls + data)
        }
    }

    fn batch_se(x: &[f64]) -> f64 {
        let b = 50;
        let size = x.len() / b;
        let means: Vec<f64> = (0..b).map(|i| x[i * size..(i + 1) * size].iter().sum::<f64>() / size as f64).collect();
        let m = means.iter().sum::<f64>() / b as f64;
        (means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (b as f64 * (b - 1) as f64)).sqrt()
    }

    #[test]
    fn prior_only_target_recovers_prior_moments() {
        let cfg = PmmhConfig {
            iterations: 60_000,
            burn_in: 5_000,
            seed: 1,
        };
        let out = run_pmmh(&Toy { y: vec![] }, &Psi::new(vec![0.0], 0.0, 1.0), &cfg).unwrap();
        let col = |j: usize| out.chain.iter().map(|r| r[j]).collect::<Vec<f64>>();
        let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
        let beta = col(0);
        let phi = col(1);
        let ls: Vec<f64> = col(2).iter().map(|s| s.ln()).collect();
        // beta ~ N(0, 100), phi ~ arcsine on (-1, 1), log sigma2 ~ N(0, 1).
        assert!(mean(&beta).abs() < 4.0 * batch_se(&beta), "{}", mean(&beta));
        assert!(mean(&phi).abs() < 4.0 * batch_se(&phi));
        assert!(mean(&ls).abs() < 4.0 * batch_se(&ls));
        let var_phi = phi.iter().map(|p| p * p).sum::<f64>() / phi.len() as f64;
        assert!((var_phi - 0.5).abs() < 0.05, "{var_phi}");
        let var_beta = beta.iter().map(|p| p * p).sum::<f64>() / beta.len() as f64;
        assert!((var_beta / 100.0 - 1.0).abs() < 0.25, "{var_beta}");
    }

    #[test]
    fn exact_likelihood_gives_analytic_posterior_mean() {
        let y: Vec<f64> = (0..20).map(|i| 0.5 + ((i * 7) % 5) as f64 * 0.2).collect();
        let cfg = PmmhConfig {
            iterations: 40_000,
            burn_in: 5_000,
            seed: 2,
        };
        let out = run_pmmh(&Toy { y: y.clone() }, &Psi::new(vec![0.0], 0.0, 1.0), &cfg).unwrap();
        let beta: Vec<f64> = out.chain.iter().map(|r| r[0]).collect();
        let m = beta.iter().sum::<f64>() / beta.len() as f64;
        let exact = y.iter().sum::<f64>() / (y.len() as f64 + 0.01);
        assert!((m - exact).abs() < 3.0 * batch_se(&beta), "{m} vs {exact}");
        assert!(out.acceptance_rate > 0.05 && out.acceptance_rate < 0.9);
    }

    #[test]
    fn same_seed_same_chain() {
        let cfg = PmmhConfig {
            iterations: 300,
            burn_in: 100,
            seed: 3,
        };
        let a = run_pmmh(&Toy { y: vec![1.0] }, &Psi::new(vec![0.0], 0.1, 1.0), &cfg).unwrap();
        let b = run_pmmh(&Toy { y: vec![1.0] }, &Psi::new(vec![0.0], 0.1, 1.0), &cfg).unwrap();
        assert_eq!(a.chain, b.chain);
        assert_eq!(a.log_post, b.log_post);
    }

    /// Returns the log likelihood plus a seed-dependent offset, to check the
    /// stored estimate is reused rather than refreshed.
    struct Noisy;

    impl LikelihoodEstimator for Noisy {
        fn num_beta(&self) -> usize {
            1
        }

        fn log_likelihood(&self, psi: &Psi, seed: u64) -> Result<f64> {
            let noise = (seed % 1000) as f64 / 1000.0;
            Ok(-0.5 * psi.beta[0] * psi.beta[0] - 0.5 * psi.sigma2.ln().powi(2) + noise)
        }
    }

    #[test]
    fn stored_estimate_is_not_refreshed() {
        let cfg = PmmhConfig {
            iterations: 2000,
            burn_in: 0,
            seed: 4,
        };
        let out = run_pmmh(&Noisy, &Psi::new(vec![0.0], 0.0, 1.0), &cfg).unwrap();
        for i in 1..out.chain.len() {
            if !out.accepted[i] {
                assert_eq!(out.log_post[i], out.log_post[i - 1]);
                assert_eq!(out.chain[i], out.chain[i - 1]);
            }
        }
    }

    struct Failing;

    impl LikelihoodEstimator for Failing {
        fn num_beta(&self) -> usize {
            1
        }

        fn log_likelihood(&self, psi: &Psi, _seed: u64) -> Result<f64> {
            if psi.beta[0] > 0.0 {
                Err(Error::DegenerateSample)
            } else {
                Ok(-0.5 * psi.sigma2.ln().powi(2))
            }
        }
    }

    #[test]
    fn failed_estimates_are_rejected() {
        let cfg = PmmhConfig {
            iterations: 3000,
            burn_in: 0,
            seed: 5,
        };
        let out = run_pmmh(&Failing, &Psi::new(vec![-0.5], 0.0, 1.0), &cfg).unwrap();
        assert!(out.estimator_failures > 0);
        assert!(out.chain.iter().all(|r| r[0] <= 0.0));
    }

    #[test]
    fn single_panel_matches_direct_estimate() {
        let panels = vec![PanelSeries {
            y: vec![3, 1, 0, 4, 2, 2, 5, 0],
            x: vec![vec![1.0, 0.3]; 8],
        }];
        let psi = Psi::new(vec![0.5, -0.2], 0.7, 0.3);
        let model = PanelAr1Model::new(panels, psi.beta.clone(), psi.ar1(8).unwrap()).unwrap();
        let spec = SamplerSpec::moment(2.0);
        let est = estimate_panel_likelihood(&model, &spec, 500, 9).unwrap();
        let meas = model.panel_measurement(0);
        let prior = model.panel_prior(0);
        let (_, built) = ssm_proposal(&meas, &prior, &model.panel_ar1(0), &spec).unwrap();
        let direct = estimate_likelihood(&meas, &prior, &built.proposal, 500, derive_seed(9, &[0])).unwrap();
        assert_eq!(est.log_value, direct.log_value);
    }

    #[test]
    fn exact_proposals_give_zero_variance() {
        // Gaussian panels: the SPDK proposal is the exact posterior.
        let spec = Ar1Spec::new(0.0, 0.5, 0.4, 6).unwrap();
        let (mu, q) = ar1_precision(&spec).unwrap();
        let prior = GaussianPrior::new(mu, q).unwrap();
        let model = GaussianNoiseModel::new(vec![0.1, -0.3, 0.8, 0.2, 0.0, 1.1], 0.3).unwrap();
        let fit = spdk_fit(&model, &prior, 1e-12, 50).unwrap();
        let g: GaussianProposal = fit.proposal(&prior).unwrap();
        let a = estimate_likelihood(&model, &prior, &g, 200, 1).unwrap();
        assert!(a.sample.normalized_variance().unwrap() < 1e-16);
    }

    #[test]
    fn panel_estimates_share_random_numbers_across_parameters() {
        let panels = vec![
            PanelSeries {
                y: vec![3, 1, 0, 4, 2],
                x: vec![vec![1.0, 0.3]; 5],
            };
            3
        ];
        let spec = SamplerSpec::t_default();
        let at = |b: f64| {
            let model = PanelAr1Model::new(panels.clone(), vec![b, -1.0], Ar1Spec::new(0.0, 0.8, 0.2, 1).unwrap()).unwrap();
            estimate_panel_likelihood(&model, &spec, 2000, 11).unwrap().log_value
        };
        // Smooth in beta under common random numbers.
        let (a, b, c) = (at(1.0), at(1.0 + 1e-4), at(1.0 + 2e-4));
        assert!(((c - b) - (b - a)).abs() < 1e-6);
    }
}
