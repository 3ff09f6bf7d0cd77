//! Importance sampling likelihood and ratio estimators, and diagnostics for
//! the resulting weights.

mod gpd;
mod iact;

pub use gpd::{ksc_test, ksc_test_at, GpdFit, DEFAULT_KSC_PERCENTILE, KSC_MIN_EXCEEDANCES, KSC_MIN_WEIGHTS};
pub use iact::{iact, IactResult, IACT_MAX_LAG};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::{log_joint, GaussianPrior, MeasurementModel};
use crate::proposal::ImportanceDensity;
use crate::rng::rng_from_seed;

/// Log importance weights from one run, with an optional scalar payload
/// `h(alpha_s)` per draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSample {
    pub log_weights: Vec<f64>,
    pub payload: Option<Vec<f64>>,
    pub tag: String,
    pub seed: u64,
}

impl WeightSample {
    pub fn new(log_weights: Vec<f64>, tag: impl Into<String>, seed: u64) -> Result<Self> {
        let ws = Self {
            log_weights,
            payload: None,
            tag: tag.into(),
            seed,
        };
        ws.validate()?;
        Ok(ws)
    }

    pub fn with_payload(mut self, payload: Vec<f64>) -> Result<Self> {
        if payload.len() != self.log_weights.len() {
            return Err(invalid("payload length differs from the number of weights"));
        }
        self.payload = Some(payload);
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.log_weights.is_empty() {
            return Err(invalid("weight sample is empty"));
        }
        if self.log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(invalid("log weights must be finite or -inf"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    /// `log((1/S) sum w_s)`.
    pub fn log_mean_weight(&self) -> Result<f64> {
        log_mean_exp(&self.log_weights)
    }

    /// Weights divided by their mean.
    pub fn normalized_weights(&self) -> Result<Vec<f64>> {
        let lm = self.log_mean_weight()?;
        Ok(self.log_weights.iter().map(|w| (w - lm).exp()).collect())
    }

    /// Unbiased sample variance of the normalized weights.
    pub fn normalized_variance(&self) -> Result<f64> {
        let w = self.normalized_weights()?;
        if w.len() < 2 {
            return Err(invalid("variance needs at least two weights"));
        }
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        Ok(w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0))
    }

    /// Log of the unbiased sample variance of the raw weights.
    pub fn log_variance(&self) -> Result<f64> {
        Ok(self.normalized_variance()?.ln() + 2.0 * self.log_mean_weight()?)
    }

    /// CSV with columns `log_weight` and, if present, `payload`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        match &self.payload {
            Some(p) => {
                wtr.write_record(["log_weight", "payload"])?;
                for (w, h) in self.log_weights.iter().zip(p) {
                    wtr.write_record([w.to_string(), h.to_string()])?;
                }
            }
            None => {
                wtr.write_record(["log_weight"])?;
                for w in &self.log_weights {
                    wtr.write_record([w.to_string()])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// `log((1/n) sum exp(x_i))` without overflow.
pub fn log_mean_exp(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(invalid("empty input"));
    }
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateSample);
    }
    if max.is_nan() {
        return Err(invalid("NaN log weight"));
    }
    let s: f64 = x.iter().map(|v| (v - max).exp()).sum();
    Ok(max + s.ln() - (x.len() as f64).ln())
}

/// Likelihood estimate `(1/S) sum w_s` on both scales.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LikelihoodEstimate {
    pub log_value: f64,
    pub value: f64,
    pub sample: WeightSample,
}

/// Draw `samples` points from `proposal` with `rng_from_seed(seed)` and
/// average `p(y, alpha) / g(alpha)`.
pub fn estimate_likelihood<M, G>(
    model: &M,
    prior: &GaussianPrior,
    proposal: &G,
    samples: usize,
    seed: u64,
) -> Result<LikelihoodEstimate>
where
    M: MeasurementModel + ?Sized,
    G: ImportanceDensity + ?Sized,
{
    let (log_weights, _) = draw_log_weights(model, prior, proposal, samples, seed, None::<fn(&[f64]) -> f64>)?;
    finish(WeightSample::new(log_weights, "", seed)?)
}

/// As [`estimate_likelihood`], also recording `h(alpha_s)` for
/// [`ratio_estimate`].
pub fn estimate_likelihood_with_payload<M, G, H>(
    model: &M,
    prior: &GaussianPrior,
    proposal: &G,
    samples: usize,
    seed: u64,
    h: H,
) -> Result<LikelihoodEstimate>
where
    M: MeasurementModel + ?Sized,
    G: ImportanceDensity + ?Sized,
    H: Fn(&[f64]) -> f64,
{
    let (log_weights, payload) = draw_log_weights(model, prior, proposal, samples, seed, Some(h))?;
    finish(WeightSample::new(log_weights, "", seed)?.with_payload(payload)?)
}

fn finish(sample: WeightSample) -> Result<LikelihoodEstimate> {
    let log_value = sample.log_mean_weight()?;
    Ok(LikelihoodEstimate {
        log_value,
        value: log_value.exp(),
        sample,
    })
}

fn draw_log_weights<M, G, H>(
    model: &M,
    prior: &GaussianPrior,
    proposal: &G,
    samples: usize,
    seed: u64,
    h: Option<H>,
) -> Result<(Vec<f64>, Vec<f64>)>
where
    M: MeasurementModel + ?Sized,
    G: ImportanceDensity + ?Sized,
    H: Fn(&[f64]) -> f64,
{
    if samples == 0 {
        return Err(invalid("need at least one importance sample"));
    }
    let d = model.dim();
    if proposal.dim() != d || prior.mean().len() != d {
        return Err(invalid(format!(
            "dimensions differ: model {d}, proposal {}, prior {}",
            proposal.dim(),
            prior.mean().len()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut x = vec![0.0; d];
    let mut log_w = Vec::with_capacity(samples);
    let mut payload = Vec::with_capacity(if h.is_some() { samples } else { 0 });
    for _ in 0..samples {
        proposal.sample_into(&mut rng, &mut x);
        let lj = log_joint(model, prior, &x);
        let w = if lj == f64::NEG_INFINITY {
            lj
        } else {
            lj - proposal.log_density(&x)
        };
        log_w.push(if w.is_nan() { f64::NEG_INFINITY } else { w });
        if let Some(h) = &h {
            payload.push(h(&x));
        }
    }
    Ok((log_w, payload))
}

/// Self-normalized estimate `I = sum h_s w_s / sum w_s` and its variance
/// estimate `S sum (h_s - I)^2 w_s^2 / (sum w_s)^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RatioEstimate {
    pub estimate: f64,
    pub variance: f64,
}

pub fn ratio_estimate(ws: &WeightSample) -> Result<RatioEstimate> {
    let h = ws
        .payload
        .as_ref()
        .ok_or_else(|| invalid("ratio estimate needs a payload"))?;
    let max = ws.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateSample);
    }
    let w: Vec<f64> = ws.log_weights.iter().map(|l| (l - max).exp()).collect();
    let sw: f64 = w.iter().sum();
    let est = w.iter().zip(h).filter(|(w, _)| **w > 0.0).map(|(w, h)| w * h).sum::<f64>() / sw;
    let num: f64 = w
        .iter()
        .zip(h)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, h)| (h - est) * (h - est) * w * w)
        .sum();
    Ok(RatioEstimate {
        estimate: est,
        variance: ws.len() as f64 * num / (sw * sw),
    })
}

/// Variance of the normalized weights of `a` over that of `b`.
pub fn weight_variance_ratio(a: &WeightSample, b: &WeightSample) -> Result<f64> {
    let vb = b.normalized_variance()?;
    if vb == 0.0 {
        return Err(Error::DivisionByZero("weights of the reference sample have zero variance"));
    }
    Ok(a.normalized_variance()? / vb)
}
