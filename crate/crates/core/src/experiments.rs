//! Replicated simulation studies. Each driver returns a report holding its
//! config, one flat row per replication (and sampler), a summary computed
//! only from those rows, and any replication failures.
//!
//! Replication `r` draws its data from `derive_seed(seed, &[0, r])` and its
//! importance samples from `derive_seed(seed, &[1, r, ...])`; samplers being
//! compared share those streams. CPU columns are wall-clock seconds.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{simulate_panel, simulate_poisson_ssm, Dataset, PanelParams, SsmParams};
use crate::error::{invalid, Error, Result};
use crate::estimators::{
    estimate_likelihood, estimate_likelihood_with_payload, ksc_test, ratio_estimate, LikelihoodEstimate,
};
use crate::inference::{
    estimate_panel_likelihood, run_pmmh, LikelihoodEstimator, PanelLikelihood, PmmhConfig, PmmhOutput, Psi,
    SsmLikelihood,
};
use crate::models::{
    bernoulli_taylor_proposal, glmm_newton_mode, GaussianPrior, PanelAr1Model, PoissonSsmModel,
    DEFAULT_NEWTON_MAX_ITER, DEFAULT_NEWTON_TOL,
};
use crate::proposal::{check_moment_condition, Clamp, GaussianProposal, MomentOrder, DEFAULT_PI, DEFAULT_T_DOF};
use crate::rng::derive_seed;
use crate::sampler::{proposal_from_fit, proposal_from_gaussian, ssm_proposal, SamplerSpec};
use crate::statespace::{
    ar1_precision, constant_variance_bound, impose_scalar, spdk_fit, sylvester_check, Ar1Spec, DEFAULT_EPS_INFLATE,
};

/// Share of failed replications above which a run counts as failed.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub rep: usize,
    pub error: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report<C, R, S> {
    pub experiment: String,
    pub config: C,
    pub replications: usize,
    pub failures: Vec<ReplicationFailure>,
    pub summary: S,
    /// Written to CSV, not to the JSON summary.
    #[serde(skip)]
    pub rows: Vec<R>,
}

impl<C, R, S> Report<C, R, S> {
    pub fn failure_fraction(&self) -> f64 {
        if self.replications == 0 {
            0.0
        } else {
            self.failures.len() as f64 / self.replications as f64
        }
    }

    pub fn failed(&self) -> bool {
        self.failure_fraction() > MAX_FAILURE_FRACTION
    }
}

fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        f64::NAN
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

fn sample_sd(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return f64::NAN;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Run `f` for every replication in parallel, sorting results by index and
/// splitting out the failures.
fn replicate<T: Send>(reps: usize, f: impl Fn(usize) -> Result<T> + Sync) -> (Vec<(usize, T)>, Vec<ReplicationFailure>) {
    let results: Vec<(usize, Result<T>)> = (0..reps).into_par_iter().map(|r| (r, f(r))).collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (rep, res) in results {
        match res {
            Ok(v) => ok.push((rep, v)),
            Err(e) => failed.push(ReplicationFailure {
                rep,
                error: e.to_string(),
            }),
        }
    }
    (ok, failed)
}

fn check_reps(reps: usize, samples: usize) -> Result<()> {
    if reps == 0 || samples == 0 {
        return Err(invalid("need at least one replication and one importance sample"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Bernoulli posterior mean

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table1Config {
    pub trials: u64,
    pub successes: u64,
    pub prior_precision: f64,
    pub reps: usize,
    pub samples: usize,
    pub n: f64,
    pub pi: f64,
    pub nu: f64,
    pub seed: u64,
}

impl Table1Config {
    /// `N = 100`, `k = 7`, `Q = 0.1`, 100 replications of `S = 10^6`.
    pub fn hard() -> Self {
        Self {
            trials: 100,
            successes: 7,
            prior_precision: 0.1,
            reps: 100,
            samples: 1_000_000,
            n: 2.0,
            pi: DEFAULT_PI,
            nu: DEFAULT_T_DOF,
            seed: 1,
        }
    }

    /// `N = 100`, `k = 50`.
    pub fn easy() -> Self {
        Self {
            successes: 50,
            ..Self::hard()
        }
    }

    pub fn samplers(&self) -> [SamplerSpec; 3] {
        [
            SamplerSpec::Normal,
            SamplerSpec::StudentT { nu: self.nu },
            SamplerSpec::Moment {
                n: self.n,
                pi: self.pi,
                clamp: Clamp::Hard,
            },
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub rep: usize,
    pub sampler: String,
    pub estimate: f64,
    pub variance: f64,
    /// Over the normal sampler's variance in the same replication.
    pub variance_ratio: f64,
    pub ksc_xi: Option<f64>,
    pub ksc_p_value: Option<f64>,
    pub ksc_reject: Option<bool>,
    pub cpu_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table1Column {
    pub sampler: String,
    pub mean_estimate: f64,
    pub mean_variance_ratio: f64,
    /// Rejections over replications where the test could be run.
    pub ksc_rejection_rate: f64,
    pub ksc_tests: usize,
    pub mean_cpu_secs: f64,
}

pub type Table1Report = Report<Table1Config, Table1Row, Vec<Table1Column>>;

/// Posterior mean of the Bernoulli success probability by self-normalized
/// importance sampling under the normal, t and moment-constrained samplers.
pub fn table1(config: &Table1Config) -> Result<Table1Report> {
    check_reps(config.reps, config.samples)?;
    let ds = Dataset::Bernoulli {
        trials: config.trials,
        successes: config.successes,
        prior_precision: config.prior_precision,
    };
    let model = ds.bernoulli()?;
    let prior = model.prior();
    let g = bernoulli_taylor_proposal(&model)?;
    let samplers = config.samplers();
    let built = samplers
        .iter()
        .map(|s| proposal_from_gaussian(&g, &prior, s))
        .collect::<Result<Vec<_>>>()?;

    let (ok, failures) = replicate(config.reps, |r| {
        let seed = derive_seed(config.seed, &[1, r as u64]);
        let mut rows = Vec::with_capacity(samplers.len());
        for (s, b) in samplers.iter().zip(&built) {
            let start = Instant::now();
            let est = estimate_likelihood_with_payload(&model, &prior, &b.proposal, config.samples, seed, |a| a[0])?;
            let ratio = ratio_estimate(&est.sample)?;
            let cpu = start.elapsed().as_secs_f64();
            let ksc = ksc_test(&est.sample).ok();
            rows.push(Table1Row {
                rep: r,
                sampler: s.label(),
                estimate: ratio.estimate,
                variance: ratio.variance,
                variance_ratio: f64::NAN,
                ksc_xi: ksc.as_ref().map(|k| k.xi),
                ksc_p_value: ksc.as_ref().map(|k| k.p_value),
                ksc_reject: ksc.as_ref().map(|k| k.reject),
                cpu_secs: cpu,
            });
        }
        let base = rows[0].variance;
        if !(base > 0.0) {
            return Err(Error::DivisionByZero("normal sampler variance is zero"));
        }
        for row in &mut rows {
            row.variance_ratio = row.variance / base;
        }
        Ok(rows)
    });
    let rows: Vec<Table1Row> = ok.into_iter().flat_map(|(_, r)| r).collect();
    let summary = samplers
        .iter()
        .map(|s| {
            let label = s.label();
            let mine: Vec<&Table1Row> = rows.iter().filter(|r| r.sampler == label).collect();
            let tests: Vec<bool> = mine.iter().filter_map(|r| r.ksc_reject).collect();
            Table1Column {
                sampler: label,
                mean_estimate: mean(&mine.iter().map(|r| r.estimate).collect::<Vec<_>>()),
                mean_variance_ratio: mean(&mine.iter().map(|r| r.variance_ratio).collect::<Vec<_>>()),
                ksc_rejection_rate: if tests.is_empty() {
                    f64::NAN
                } else {
                    tests.iter().filter(|&&b| b).count() as f64 / tests.len() as f64
                },
                ksc_tests: tests.len(),
                mean_cpu_secs: mean(&mine.iter().map(|r| r.cpu_secs).collect::<Vec<_>>()),
            }
        })
        .collect();
    Ok(Report {
        experiment: "table1".into(),
        config: config.clone(),
        replications: config.reps,
        failures,
        summary,
        rows,
    })
}

// ---------------------------------------------------------------------------
// Poisson state space likelihood

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table2Config {
    pub datasets: usize,
    pub evals: usize,
    pub samples: usize,
    pub len: usize,
    pub dgp: SsmParams,
    /// Parameter value at which the likelihood is evaluated.
    pub psi: SsmParams,
    pub n: f64,
    pub pi: f64,
    pub eps_inflate: f64,
    pub seed: u64,
}

impl Table2Config {
    /// 100 series of length 500, 100 evaluations of `S = 10^4` at `psi`.
    pub fn full(psi: SsmParams) -> Self {
        Self {
            datasets: 100,
            evals: 100,
            samples: 10_000,
            len: 500,
            dgp: SsmParams::dgp(),
            psi,
            n: 2.0,
            pi: DEFAULT_PI,
            eps_inflate: DEFAULT_EPS_INFLATE,
            seed: 1,
        }
    }

    pub fn samplers(&self) -> [SamplerSpec; 2] {
        [
            SamplerSpec::Normal,
            SamplerSpec::Imposed {
                n: self.n,
                pi: self.pi,
                eps_inflate: self.eps_inflate,
            },
        ]
    }
}

/// Per dataset and sampler, over the evaluations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodRow {
    pub rep: usize,
    pub sampler: String,
    pub mean_log_lik: f64,
    /// Mean over evaluations of the raw weight variance, relative to the
    /// squared likelihood scale of the dataset, averaged over panels.
    pub weight_variance: f64,
    /// Standard deviation of the log-likelihood estimates.
    pub mce: f64,
    /// Over the benchmark sampler in the same replication.
    pub variance_ratio: f64,
    pub mce_ratio: f64,
    /// The fitted Gaussian satisfies the moment condition (all panels).
    pub condition_holds: bool,
    pub cpu_secs_per_eval: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodColumn {
    pub sampler: String,
    /// Pooled: summed `weight_variance` over summed benchmark `weight_variance`.
    pub mean_variance_ratio: f64,
    pub mean_mce_ratio: f64,
    pub finite_variance_fraction: f64,
    pub mean_cpu_secs_per_eval: f64,
}

pub type LikelihoodReport<C> = Report<C, LikelihoodRow, Vec<LikelihoodColumn>>;

struct EvalStats {
    log_lik: Vec<f64>,
    /// Per evaluation, per block: log likelihood estimate and log weight variance.
    blocks: Vec<Vec<(f64, f64)>>,
    secs: f64,
}

impl EvalStats {
    fn new() -> Self {
        Self {
            log_lik: Vec::new(),
            blocks: Vec::new(),
            secs: 0.0,
        }
    }

    fn push(&mut self, log_lik: f64, blocks: &[LikelihoodEstimate]) -> Result<()> {
        self.log_lik.push(log_lik);
        self.blocks.push(
            blocks
                .iter()
                .map(|b| Ok((b.log_value, b.sample.log_variance()?)))
                .collect::<Result<_>>()?,
        );
        Ok(())
    }
}

/// Weight variances are put on a common scale per block: the mean log
/// likelihood estimate over every sampler and evaluation. Normalizing each
/// evaluation by its own estimate would hide the rare huge weights that
/// make the raw variance infinite.
fn relative_variances(stats: &[EvalStats]) -> Vec<f64> {
    let nblocks = stats[0].blocks[0].len();
    let scale: Vec<f64> = (0..nblocks)
        .map(|b| mean(&stats.iter().flat_map(|s| s.blocks.iter().map(move |e| e[b].0)).collect::<Vec<_>>()))
        .collect();
    stats
        .iter()
        .map(|s| {
            mean(
                &s.blocks
                    .iter()
                    .map(|e| mean(&e.iter().zip(&scale).map(|(&(_, lv), c)| (lv - 2.0 * c).exp()).collect::<Vec<_>>()))
                    .collect::<Vec<_>>(),
            )
        })
        .collect()
}

fn likelihood_rows(rep: usize, labels: &[String], stats: &[EvalStats], holds: &[bool]) -> Result<Vec<LikelihoodRow>> {
    let vars = relative_variances(stats);
    let base_var = vars[0];
    let base_mce = sample_sd(&stats[0].log_lik);
    if !(base_var > 0.0) {
        return Err(Error::DivisionByZero("benchmark weights have zero variance"));
    }
    Ok(labels
        .iter()
        .zip(stats)
        .zip(holds)
        .zip(vars)
        .map(|(((label, s), &h), var)| {
            let mce = sample_sd(&s.log_lik);
            LikelihoodRow {
                rep,
                sampler: label.clone(),
                mean_log_lik: mean(&s.log_lik),
                weight_variance: var,
                mce,
                variance_ratio: var / base_var,
                mce_ratio: mce / base_mce,
                condition_holds: h,
                cpu_secs_per_eval: s.secs / s.log_lik.len() as f64,
            }
        })
        .collect())
}

fn likelihood_summary(labels: &[String], rows: &[LikelihoodRow]) -> Vec<LikelihoodColumn> {
    let pooled = |label: &String| rows.iter().filter(|r| &r.sampler == label).map(|r| r.weight_variance).sum::<f64>();
    let base = labels.first().map(pooled).unwrap_or(f64::NAN);
    labels
        .iter()
        .map(|label| {
            let mine: Vec<&LikelihoodRow> = rows.iter().filter(|r| &r.sampler == label).collect();
            let col = |f: fn(&LikelihoodRow) -> f64| mean(&mine.iter().map(|r| f(r)).collect::<Vec<_>>());
            LikelihoodColumn {
                sampler: label.clone(),
                mean_variance_ratio: pooled(label) / base,
                mean_mce_ratio: col(|r| r.mce_ratio),
                finite_variance_fraction: col(|r| if r.condition_holds { 1.0 } else { 0.0 }),
                mean_cpu_secs_per_eval: col(|r| r.cpu_secs_per_eval),
            }
        })
        .collect()
}

/// SPDK versus the imposed mixture for the Poisson state space likelihood.
/// Proposals depend only on the data and `psi`, so each is built once per
/// dataset and reused across evaluations.
pub fn table2(config: &Table2Config) -> Result<LikelihoodReport<Table2Config>> {
    check_reps(config.datasets, config.samples)?;
    if config.evals < 2 {
        return Err(invalid("need at least two evaluations for a standard error"));
    }
    let samplers = config.samplers();
    let labels: Vec<String> = samplers.iter().map(|s| s.label()).collect();
    let ar = config.psi.ar1(config.len)?;
    let (mu, q) = ar1_precision(&ar)?;
    let prior = GaussianPrior::new(mu, q)?;

    let (ok, failures) = replicate(config.datasets, |r| {
        let ds = simulate_poisson_ssm(config.dgp, config.len, derive_seed(config.seed, &[0, r as u64]))?;
        let Dataset::PoissonSsm { y, .. } = ds else { unreachable!() };
        let meas = PoissonSsmModel::new(y, config.psi.beta)?;
        let start = Instant::now();
        let fit = spdk_fit(&meas, &prior, DEFAULT_NEWTON_TOL, DEFAULT_NEWTON_MAX_ITER)?;
        let fit_secs = start.elapsed().as_secs_f64();
        let mut stats = Vec::new();
        let mut holds = Vec::new();
        for s in &samplers {
            let start = Instant::now();
            let built = proposal_from_fit(&fit, &prior, &ar, s)?;
            let mut st = EvalStats::new();
            for e in 0..config.evals {
                let seed = derive_seed(config.seed, &[1, r as u64, e as u64]);
                let est = estimate_likelihood(&meas, &prior, &built.proposal, config.samples, seed)?;
                st.push(est.log_value, std::slice::from_ref(&est))?;
            }
            // Each evaluation would refit, so charge the fit to every one.
            st.secs = start.elapsed().as_secs_f64() + fit_secs * config.evals as f64;
            stats.push(st);
            holds.push(built.condition_holds);
        }
        likelihood_rows(r, &labels, &stats, &holds)
    });
    let rows: Vec<LikelihoodRow> = ok.into_iter().flat_map(|(_, r)| r).collect();
    Ok(Report {
        experiment: "table2".into(),
        config: config.clone(),
        replications: config.datasets,
        failures,
        summary: likelihood_summary(&labels, &rows),
        rows,
    })
}

// ---------------------------------------------------------------------------
// Panel likelihood

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PanelCase {
    /// Evaluate at the data generating parameters.
    Truth,
    /// Evaluate at `(0, 0, 0, 1)`.
    Far,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table3Config {
    pub panels: usize,
    pub len: usize,
    pub sigma_alpha2: f64,
    pub case: PanelCase,
    pub datasets: usize,
    pub evals: usize,
    pub samples: usize,
    pub n: f64,
    pub pi: f64,
    pub nu: f64,
    pub seed: u64,
}

impl Table3Config {
    /// `m = 20`, 100 datasets, 100 evaluations of `S = 10^3`.
    pub fn full(len: usize, sigma_alpha2: f64, case: PanelCase) -> Self {
        Self {
            panels: 20,
            len,
            sigma_alpha2,
            case,
            datasets: 100,
            evals: 100,
            samples: 1000,
            n: 2.0,
            pi: DEFAULT_PI,
            nu: DEFAULT_T_DOF,
            seed: 1,
        }
    }

    pub fn samplers(&self) -> [SamplerSpec; 2] {
        [
            SamplerSpec::StudentT { nu: self.nu },
            SamplerSpec::Moment {
                n: self.n,
                pi: self.pi,
                clamp: Clamp::Hard,
            },
        ]
    }

    pub fn psi(&self) -> PanelParams {
        match self.case {
            PanelCase::Truth => PanelParams::dgp(self.sigma_alpha2),
            PanelCase::Far => PanelParams::far(),
        }
    }
}

/// t versus moment-constrained mixture for the panel likelihood. Both
/// samplers and all evaluations of one dataset share the evaluation seeds,
/// so the comparison uses common random numbers.
pub fn table3(config: &Table3Config) -> Result<LikelihoodReport<Table3Config>> {
    check_reps(config.datasets, config.samples)?;
    if config.evals < 2 {
        return Err(invalid("need at least two evaluations for a standard error"));
    }
    let samplers = config.samplers();
    let labels: Vec<String> = samplers.iter().map(|s| s.label()).collect();
    let psi = config.psi();
    let (ok, failures) = replicate(config.datasets, |r| {
        let ds = simulate_panel(
            PanelParams::dgp(config.sigma_alpha2),
            config.panels,
            config.len,
            derive_seed(config.seed, &[0, r as u64]),
        )?;
        let model = PanelAr1Model::new(ds.panel_series()?, psi.beta.clone(), Ar1Spec::new(0.0, psi.phi, psi.sigma2, 1)?)?;
        let mut stats = Vec::new();
        let mut holds = Vec::new();
        for s in &samplers {
            let mut st = EvalStats::new();
            let mut all_hold = true;
            let start = Instant::now();
            for e in 0..config.evals {
                let seed = derive_seed(config.seed, &[1, r as u64, e as u64]);
                let est = estimate_panel_likelihood(&model, s, config.samples, seed)?;
                st.push(est.log_value, &est.panels)?;
                all_hold &= est.condition_holds.iter().all(|&h| h);
            }
            st.secs = start.elapsed().as_secs_f64();
            stats.push(st);
            holds.push(all_hold);
        }
        likelihood_rows(r, &labels, &stats, &holds)
    });
    let rows: Vec<LikelihoodRow> = ok.into_iter().flat_map(|(_, r)| r).collect();
    Ok(Report {
        experiment: "table3".into(),
        config: config.clone(),
        replications: config.datasets,
        failures,
        summary: likelihood_summary(&labels, &rows),
        rows,
    })
}

// ---------------------------------------------------------------------------
// Pseudo-marginal MCMC for the panel model

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table5Config {
    pub panels: usize,
    pub len: usize,
    pub sigma_alpha2: f64,
    pub reps: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub samples: usize,
    pub n: f64,
    pub pi: f64,
    pub nu: f64,
    pub seed: u64,
}

impl Table5Config {
    /// `m = 20`, 5 replications of 50,000 iterations after 50,000 burn-in,
    /// `S = 200`.
    pub fn full(len: usize, sigma_alpha2: f64) -> Self {
        Self {
            panels: 20,
            len,
            sigma_alpha2,
            reps: 5,
            iterations: 50_000,
            burn_in: 50_000,
            samples: 200,
            n: 2.0,
            pi: DEFAULT_PI,
            nu: DEFAULT_T_DOF,
            seed: 1,
        }
    }

    pub fn samplers(&self) -> [SamplerSpec; 2] {
        [
            SamplerSpec::StudentT { nu: self.nu },
            SamplerSpec::Moment {
                n: self.n,
                pi: self.pi,
                clamp: Clamp::Hard,
            },
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table5Row {
    pub rep: usize,
    pub sampler: String,
    pub acceptance_rate: f64,
    pub mean_iact: f64,
    /// Over the t sampler's mean IACT in the same replication.
    pub iact_ratio: f64,
    pub estimator_failures: usize,
    pub cpu_secs_per_iter: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table5Column {
    pub sampler: String,
    pub mean_acceptance_rate: f64,
    pub mean_iact_ratio: f64,
    pub mean_cpu_secs_per_iter: f64,
}

pub type Table5Report = Report<Table5Config, Table5Row, Vec<Table5Column>>;

/// Both chains of a replication start at the data generating parameters and
/// share the chain seed.
pub fn table5(config: &Table5Config) -> Result<Table5Report> {
    check_reps(config.reps, config.samples)?;
    let samplers = config.samplers();
    let labels: Vec<String> = samplers.iter().map(|s| s.label()).collect();
    let truth = PanelParams::dgp(config.sigma_alpha2);
    let init = Psi::new(truth.beta.clone(), truth.phi, truth.sigma2);
    let (ok, failures) = replicate(config.reps, |r| {
        let ds = simulate_panel(truth.clone(), config.panels, config.len, derive_seed(config.seed, &[0, r as u64]))?;
        let panels = ds.panel_series()?;
        let pm = PmmhConfig {
            iterations: config.iterations,
            burn_in: config.burn_in,
            seed: derive_seed(config.seed, &[1, r as u64]),
        };
        let outs = samplers
            .iter()
            .map(|s| {
                let est = PanelLikelihood {
                    panels: panels.clone(),
                    sampler: *s,
                    samples: config.samples,
                };
                run_pmmh(&est, &init, &pm)
            })
            .collect::<Result<Vec<PmmhOutput>>>()?;
        let base = outs[0].mean_iact;
        Ok(labels
            .iter()
            .zip(&outs)
            .map(|(label, o)| Table5Row {
                rep: r,
                sampler: label.clone(),
                acceptance_rate: o.acceptance_rate,
                mean_iact: o.mean_iact,
                iact_ratio: o.mean_iact / base,
                estimator_failures: o.estimator_failures,
                cpu_secs_per_iter: o.runtime_secs / (config.iterations + config.burn_in) as f64,
            })
            .collect::<Vec<_>>())
    });
    let rows: Vec<Table5Row> = ok.into_iter().flat_map(|(_, r)| r).collect();
    let summary = labels
        .iter()
        .map(|label| {
            let mine: Vec<&Table5Row> = rows.iter().filter(|r| &r.sampler == label).collect();
            Table5Column {
                sampler: label.clone(),
                mean_acceptance_rate: mean(&mine.iter().map(|r| r.acceptance_rate).collect::<Vec<_>>()),
                mean_iact_ratio: mean(&mine.iter().map(|r| r.iact_ratio).collect::<Vec<_>>()),
                mean_cpu_secs_per_iter: mean(&mine.iter().map(|r| r.cpu_secs_per_iter).collect::<Vec<_>>()),
            }
        })
        .collect();
    Ok(Report {
        experiment: "table5".into(),
        config: config.clone(),
        replications: config.reps,
        failures,
        summary,
        rows,
    })
}

// ---------------------------------------------------------------------------
// Leading minors for constant approximating-model variances

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig2Config {
    pub phi: f64,
    pub sigma_alpha2: f64,
    pub n: f64,
    pub len: usize,
    pub v: Vec<f64>,
}

impl Default for Fig2Config {
    fn default() -> Self {
        Self {
            phi: 0.975,
            sigma_alpha2: 0.5,
            n: 2.0,
            len: 500,
            v: vec![5.0, 10.0, 25.0, 40.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig2Row {
    pub v: f64,
    pub t: usize,
    pub log_abs_minor: f64,
    pub sign: i8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig2Path {
    pub v: f64,
    /// Some leading minor is non-positive.
    pub crosses: bool,
    pub sign_changes: usize,
    pub first_nonpositive: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig2Summary {
    pub bound: f64,
    pub paths: Vec<Fig2Path>,
}

pub type Fig2Report = Report<Fig2Config, Fig2Row, Fig2Summary>;

/// Leading minors of `sigma^2 (Q - (n - 1) I / v)` for constant `v`. The
/// factor `sigma^2` keeps the minors on a plottable scale and does not move
/// their signs.
pub fn fig2(config: &Fig2Config) -> Result<Fig2Report> {
    if config.v.is_empty() {
        return Err(invalid("need at least one variance"));
    }
    let ar = Ar1Spec::from_stationary_variance(0.0, config.phi, config.sigma_alpha2, config.len)?;
    let (_, q) = ar1_precision(&ar)?;
    let q = q.scaled(ar.sigma2());
    let bound = constant_variance_bound(&ar, config.n)?;
    let mut rows = Vec::new();
    let mut paths = Vec::new();
    for &v in &config.v {
        if !(v > 0.0) {
            return Err(invalid("variances must be positive"));
        }
        let tr = sylvester_check(&q, &vec![v / ar.sigma2(); config.len], config.n)?;
        for t in 0..config.len {
            rows.push(Fig2Row {
                v,
                t: t + 1,
                log_abs_minor: tr.log_abs_minor[t],
                sign: tr.sign[t],
            });
        }
        paths.push(Fig2Path {
            v,
            crosses: !tr.holds,
            sign_changes: tr.sign_changes(),
            first_nonpositive: tr.sign.iter().position(|&s| s <= 0).map(|t| t + 1),
        });
    }
    Ok(Report {
        experiment: "fig2".into(),
        config: config.clone(),
        replications: config.v.len(),
        failures: Vec::new(),
        summary: Fig2Summary { bound, paths },
        rows,
    })
}

// ---------------------------------------------------------------------------
// Single-dataset operations

/// Parameters at which a dataset is evaluated; defaults to its recorded DGP.
pub fn dataset_psi(ds: &Dataset) -> Result<Psi> {
    match ds {
        Dataset::PoissonSsm { params, .. } => Ok(Psi::new(vec![params.beta], params.phi, params.sigma2)),
        Dataset::PanelAr1 { params, .. } => Ok(Psi::new(params.beta.clone(), params.phi, params.sigma2)),
        _ => Err(invalid(format!("{} datasets have no (beta, phi, sigma2) parameters", ds.kind()))),
    }
}

fn with_psi(ds: &Dataset, psi: &Psi) -> Result<Dataset> {
    let mut ds = ds.clone();
    match &mut ds {
        Dataset::PoissonSsm { params, .. } => {
            if psi.beta.len() != 1 {
                return Err(invalid("the Poisson state space model has one intercept"));
            }
            *params = SsmParams {
                beta: psi.beta[0],
                phi: psi.phi,
                sigma2: psi.sigma2,
            };
        }
        Dataset::PanelAr1 { params, .. } => {
            *params = PanelParams {
                beta: psi.beta.clone(),
                phi: psi.phi,
                sigma2: psi.sigma2,
            };
        }
        _ => {}
    }
    Ok(ds)
}

/// Moment verdict for one latent block (series, panel or cluster).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockCheck {
    pub block: usize,
    pub condition_holds: bool,
    /// Smallest approximating-model variance, for scalar state space blocks.
    pub min_variance: Option<f64>,
    /// Constant-variance bound for the block's AR(1) prior.
    pub bound: Option<f64>,
    /// Leading-minor sign changes, for scalar state space blocks.
    pub sign_changes: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub dataset: String,
    pub n: f64,
    pub psi: Option<Psi>,
    pub condition_holds: bool,
    pub blocks: Vec<BlockCheck>,
}

fn ssm_block_check(
    block: usize,
    meas: &dyn crate::models::MeasurementModel,
    ar: &Ar1Spec,
    n: f64,
) -> Result<BlockCheck> {
    let (mu, q) = ar1_precision(ar)?;
    let prior = GaussianPrior::new(mu, q)?;
    let fit = spdk_fit(meas, &prior, DEFAULT_NEWTON_TOL, DEFAULT_NEWTON_MAX_ITER)?;
    let v = fit.variances()?;
    let tr = sylvester_check(prior.precision(), &v, n)?;
    Ok(BlockCheck {
        block,
        condition_holds: tr.holds,
        min_variance: v.iter().copied().reduce(f64::min),
        bound: Some(constant_variance_bound(&ar.with_len(meas.dim()), n)?),
        sign_changes: Some(tr.sign_changes()),
    })
}

/// Whether the fitted Gaussian of every latent block satisfies the moment
/// condition of order `n` at `psi` (or at the dataset's recorded values).
pub fn check_dataset(ds: &Dataset, psi: Option<&Psi>, n: f64) -> Result<CheckReport> {
    let order = MomentOrder::new(n)?;
    let psi = match (ds, psi) {
        (Dataset::PoissonSsm { .. } | Dataset::PanelAr1 { .. }, None) => Some(dataset_psi(ds)?),
        (_, p) => p.cloned(),
    };
    let ds = match &psi {
        Some(p) => with_psi(ds, p)?,
        None => ds.clone(),
    };
    let blocks = match &ds {
        Dataset::PoissonSsm { params, .. } => {
            let meas = ds.poisson_ssm()?;
            vec![ssm_block_check(0, &meas, &params.ar1(meas.y().len())?, n)?]
        }
        Dataset::PanelAr1 { .. } => {
            let model = ds.panel_model()?;
            (0..model.num_panels())
                .into_par_iter()
                .map(|i| ssm_block_check(i, &model.panel_measurement(i), &model.panel_ar1(i), n))
                .collect::<Result<Vec<_>>>()?
        }
        Dataset::GlmmPoisson { .. } => {
            let model = ds.glmm_model()?;
            let prior = model.prior();
            (0..model.num_clusters())
                .map(|i| {
                    let (_, qstar) = glmm_newton_mode(&model, i, DEFAULT_NEWTON_TOL, DEFAULT_NEWTON_MAX_ITER)?;
                    Ok(BlockCheck {
                        block: i,
                        condition_holds: check_moment_condition(&qstar, prior.precision(), order)?,
                        min_variance: None,
                        bound: None,
                        sign_changes: None,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
        Dataset::Bernoulli { .. } => {
            let model = ds.bernoulli()?;
            let g = bernoulli_taylor_proposal(&model)?;
            vec![BlockCheck {
                block: 0,
                condition_holds: check_moment_condition(g.precision(), model.prior().precision(), order)?,
                min_variance: None,
                bound: None,
                sign_changes: None,
            }]
        }
    };
    Ok(CheckReport {
        dataset: ds.kind().into(),
        n,
        psi,
        condition_holds: blocks.iter().all(|b| b.condition_holds),
        blocks,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImposeBlock {
    pub block: usize,
    pub holds_before: bool,
    pub holds_after: bool,
    pub rounds: usize,
    pub bound: f64,
    pub min_variance_before: f64,
    pub min_variance_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImposeReport {
    pub dataset: String,
    pub n: f64,
    pub eps_inflate: f64,
    pub psi: Psi,
    pub blocks: Vec<ImposeBlock>,
}

fn impose_block_report(
    block: usize,
    meas: &dyn crate::models::MeasurementModel,
    ar: &Ar1Spec,
    n: f64,
    eps: f64,
) -> Result<ImposeBlock> {
    let ar = ar.with_len(meas.dim());
    let (mu, q) = ar1_precision(&ar)?;
    let prior = GaussianPrior::new(mu, q)?;
    let fit = spdk_fit(meas, &prior, DEFAULT_NEWTON_TOL, DEFAULT_NEWTON_MAX_ITER)?;
    let before = fit.variances()?;
    let imposed = impose_scalar(&fit, &ar, n, eps)?;
    let after_check = sylvester_check(prior.precision(), &imposed.variances, n)?;
    Ok(ImposeBlock {
        block,
        holds_before: sylvester_check(prior.precision(), &before, n)?.holds,
        holds_after: after_check.holds,
        rounds: imposed.k,
        bound: imposed.bound,
        min_variance_before: before.iter().copied().fold(f64::INFINITY, f64::min),
        min_variance_after: imposed.variances.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

/// Inflate the approximating-model variances of every state space block
/// until the moment condition of order `n` holds.
pub fn impose_dataset(ds: &Dataset, psi: Option<&Psi>, n: f64, eps_inflate: f64) -> Result<ImposeReport> {
    let psi = match psi {
        Some(p) => p.clone(),
        None => dataset_psi(ds)?,
    };
    let ds = with_psi(ds, &psi)?;
    let blocks = match &ds {
        Dataset::PoissonSsm { params, .. } => {
            let meas = ds.poisson_ssm()?;
            vec![impose_block_report(0, &meas, &params.ar1(meas.y().len())?, n, eps_inflate)?]
        }
        Dataset::PanelAr1 { .. } => {
            let model = ds.panel_model()?;
            (0..model.num_panels())
                .into_par_iter()
                .map(|i| impose_block_report(i, &model.panel_measurement(i), &model.panel_ar1(i), n, eps_inflate))
                .collect::<Result<Vec<_>>>()?
        }
        _ => return Err(invalid(format!("imposing applies to state space data, not {}", ds.kind()))),
    };
    Ok(ImposeReport {
        dataset: ds.kind().into(),
        n,
        eps_inflate,
        psi,
        blocks,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoglikConfig {
    pub sampler: SamplerSpec,
    pub psi: Option<Psi>,
    pub reps: usize,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoglikRow {
    pub rep: usize,
    pub seed: u64,
    pub log_lik: f64,
    /// Mean over latent blocks of the normalized weight variance.
    pub weight_variance: f64,
    pub cpu_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoglikSummary {
    pub dataset: String,
    pub mean_log_lik: f64,
    pub mce: f64,
    pub mean_weight_variance: f64,
    pub condition_holds: bool,
}

pub type LoglikReport = Report<LoglikConfig, LoglikRow, LoglikSummary>;

/// Repeated likelihood estimates for one dataset. Replication `r` uses
/// `derive_seed(seed, &[1, r])`.
pub fn loglik(ds: &Dataset, config: &LoglikConfig) -> Result<LoglikReport> {
    check_reps(config.reps, config.samples)?;
    config.sampler.validate()?;
    let psi = match (&config.psi, ds) {
        (Some(p), _) => Some(p.clone()),
        (None, Dataset::PoissonSsm { .. } | Dataset::PanelAr1 { .. }) => Some(dataset_psi(ds)?),
        _ => None,
    };
    let ds = match &psi {
        Some(p) => with_psi(ds, p)?,
        None => ds.clone(),
    };
    let sampler = config.sampler;
    let holds = std::sync::atomic::AtomicBool::new(true);
    let one = |seed: u64| -> Result<(f64, f64)> {
        let ests: Vec<LikelihoodEstimate> = match &ds {
            Dataset::PoissonSsm { params, .. } => {
                let meas = ds.poisson_ssm()?;
                let ar = params.ar1(meas.y().len())?;
                let (mu, q) = ar1_precision(&ar)?;
                let prior = GaussianPrior::new(mu, q)?;
                let (_, built) = ssm_proposal(&meas, &prior, &ar, &sampler)?;
                if !built.condition_holds {
                    holds.store(false, std::sync::atomic::Ordering::Relaxed);
                }
                vec![estimate_likelihood(&meas, &prior, &built.proposal, config.samples, seed)?]
            }
            Dataset::PanelAr1 { .. } => {
                let est = estimate_panel_likelihood(&ds.panel_model()?, &sampler, config.samples, seed)?;
                if !est.condition_holds.iter().all(|&h| h) {
                    holds.store(false, std::sync::atomic::Ordering::Relaxed);
                }
                est.panels
            }
            Dataset::GlmmPoisson { .. } => {
                let model = ds.glmm_model()?;
                let prior = model.prior();
                (0..model.num_clusters())
                    .map(|i| {
                        let (mode, qstar) = glmm_newton_mode(&model, i, DEFAULT_NEWTON_TOL, DEFAULT_NEWTON_MAX_ITER)?;
                        let g = GaussianProposal::new(mode, qstar)?;
                        let built = proposal_from_gaussian(&g, &prior, &sampler)?;
                        if !built.condition_holds {
                            holds.store(false, std::sync::atomic::Ordering::Relaxed);
                        }
                        let meas = model.cluster_measurement(i);
                        estimate_likelihood(&meas, &prior, &built.proposal, config.samples, derive_seed(seed, &[i as u64]))
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            Dataset::Bernoulli { .. } => {
                let model = ds.bernoulli()?;
                let prior = model.prior();
                let g = bernoulli_taylor_proposal(&model)?;
                let built = proposal_from_gaussian(&g, &prior, &sampler)?;
                if !built.condition_holds {
                    holds.store(false, std::sync::atomic::Ordering::Relaxed);
                }
                vec![estimate_likelihood(&model, &prior, &built.proposal, config.samples, seed)?]
            }
        };
        let vars = ests
            .iter()
            .map(|e| e.sample.normalized_variance())
            .collect::<Result<Vec<_>>>()?;
        Ok((ests.iter().map(|e| e.log_value).sum(), mean(&vars)))
    };
    let (ok, failures) = replicate(config.reps, |r| {
        let seed = derive_seed(config.seed, &[1, r as u64]);
        let start = Instant::now();
        let (log_lik, weight_variance) = one(seed)?;
        Ok(LoglikRow {
            rep: r,
            seed,
            log_lik,
            weight_variance,
            cpu_secs: start.elapsed().as_secs_f64(),
        })
    });
    let rows: Vec<LoglikRow> = ok.into_iter().map(|(_, r)| r).collect();
    let ll: Vec<f64> = rows.iter().map(|r| r.log_lik).collect();
    let summary = LoglikSummary {
        dataset: ds.kind().into(),
        mean_log_lik: mean(&ll),
        mce: sample_sd(&ll),
        mean_weight_variance: mean(&rows.iter().map(|r| r.weight_variance).collect::<Vec<_>>()),
        condition_holds: holds.into_inner(),
    };
    let mut config = config.clone();
    config.psi = psi;
    Ok(Report {
        experiment: "loglik".into(),
        replications: config.reps,
        config,
        failures,
        summary,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub sampler: SamplerSpec,
    pub samples: usize,
    pub iterations: usize,
    pub burn_in: usize,
    /// Starting value; defaults to the dataset's recorded parameters.
    pub init: Option<Psi>,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct McmcReport {
    pub experiment: String,
    pub config: McmcConfig,
    pub names: Vec<String>,
    pub acceptance_rate: f64,
    pub iact: Vec<f64>,
    pub mean_iact: f64,
    pub posterior_mean: Vec<f64>,
    pub estimator_failures: usize,
    pub runtime_secs: f64,
    #[serde(skip)]
    pub output: PmmhOutput,
}

/// Pseudo-marginal chain for a Poisson state space or panel dataset.
pub fn mcmc(ds: &Dataset, config: &McmcConfig) -> Result<McmcReport> {
    config.sampler.validate()?;
    let init = match &config.init {
        Some(p) => p.clone(),
        None => dataset_psi(ds)?,
    };
    let pm = PmmhConfig {
        iterations: config.iterations,
        burn_in: config.burn_in,
        seed: config.seed,
    };
    let est: Box<dyn LikelihoodEstimator> = match ds {
        Dataset::PoissonSsm { y, .. } => Box::new(SsmLikelihood {
            y: y.clone(),
            sampler: config.sampler,
            samples: config.samples,
        }),
        Dataset::PanelAr1 { .. } => Box::new(PanelLikelihood {
            panels: ds.panel_series()?,
            sampler: config.sampler,
            samples: config.samples,
        }),
        _ => return Err(invalid(format!("MCMC is available for state space data, not {}", ds.kind()))),
    };
    let out = run_pmmh(est.as_ref(), &init, &pm)?;
    let d = out.names.len();
    let kept = &out.chain[config.burn_in.min(out.chain.len())..];
    let posterior_mean = (0..d)
        .map(|j| mean(&kept.iter().map(|row| row[j]).collect::<Vec<_>>()))
        .collect();
    let mut config = config.clone();
    config.init = Some(init);
    Ok(McmcReport {
        experiment: "mcmc".into(),
        config,
        names: out.names.clone(),
        acceptance_rate: out.acceptance_rate,
        iact: out.iact.clone(),
        mean_iact: out.mean_iact,
        posterior_mean,
        estimator_failures: out.estimator_failures,
        runtime_secs: out.runtime_secs,
        output: out,
    })
}
