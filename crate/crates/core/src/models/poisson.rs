use statrs::function::gamma::ln_gamma;

use super::MeasurementModel;
use crate::band::SymBandMatrix;
use crate::error::{invalid, Result};

/// Poisson counts with log intensity `offset_t + alpha_t`.
///
/// With a constant offset `beta` this is the dynamic Poisson state space
/// model; per-time offsets `x_t' beta` give one panel of the Poisson panel
/// model.
#[derive(Clone, Debug)]
pub struct PoissonSsmModel {
    y: Vec<u64>,
    offset: Vec<f64>,
    log_fact: Vec<f64>,
}

impl PoissonSsmModel {
    pub fn new(y: Vec<u64>, beta: f64) -> Result<Self> {
        let offset = vec![beta; y.len()];
        Self::with_offsets(y, offset)
    }

    pub fn with_offsets(y: Vec<u64>, offset: Vec<f64>) -> Result<Self> {
        if y.is_empty() || y.len() != offset.len() {
            return Err(invalid("need one offset per observation and at least one observation"));
        }
        if offset.iter().any(|o| !o.is_finite()) {
            return Err(invalid("offsets must be finite"));
        }
        let log_fact = y.iter().map(|&v| ln_gamma(v as f64 + 1.0)).collect();
        Ok(Self { y, offset, log_fact })
    }

    pub fn y(&self) -> &[u64] {
        &self.y
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offset
    }

    /// Witness of the linear bound: `l(alpha) <= k + y' alpha` with
    /// `k = sum(y_t o_t - log y_t!)`.
    pub fn linear_bound(&self, alpha: &[f64]) -> f64 {
        self.y
            .iter()
            .zip(&self.offset)
            .zip(&self.log_fact)
            .zip(alpha)
            .map(|(((&y, &o), &lf), &a)| y as f64 * (o + a) - lf)
            .sum()
    }
}

impl MeasurementModel for PoissonSsmModel {
    fn dim(&self) -> usize {
        self.y.len()
    }

    fn log_meas(&self, alpha: &[f64]) -> f64 {
        let mut s = 0.0;
        for t in 0..self.y.len() {
            let eta = self.offset[t] + alpha[t];
            s += self.y[t] as f64 * eta - eta.exp() - self.log_fact[t];
        }
        s
    }

    fn grad(&self, alpha: &[f64]) -> Vec<f64> {
        (0..self.y.len())
            .map(|t| self.y[t] as f64 - (self.offset[t] + alpha[t]).exp())
            .collect()
    }

    fn hess(&self, alpha: &[f64]) -> SymBandMatrix {
        let d: Vec<f64> = (0..self.y.len())
            .map(|t| -(self.offset[t] + alpha[t]).exp())
            .collect();
        SymBandMatrix::diagonal(&d).expect("non-empty")
    }

    fn is_concave(&self) -> bool {
        true
    }

    fn has_linear_bound(&self) -> bool {
        true
    }
}
