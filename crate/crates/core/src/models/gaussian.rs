use super::MeasurementModel;
use crate::band::SymBandMatrix;
use crate::error::{invalid, Result};

/// `y_t ~ N(alpha_t, s2)` independently. Quadratic in `alpha`, so the
/// posterior is Gaussian and available in closed form.
#[derive(Clone, Debug)]
pub struct GaussianNoiseModel {
    y: Vec<f64>,
    noise_var: f64,
}

impl GaussianNoiseModel {
    pub fn new(y: Vec<f64>, noise_var: f64) -> Result<Self> {
        if y.is_empty() || !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(invalid("need observations and a positive noise variance"));
        }
        Ok(Self { y, noise_var })
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }
}

impl MeasurementModel for GaussianNoiseModel {
    fn dim(&self) -> usize {
        self.y.len()
    }

    fn log_meas(&self, alpha: &[f64]) -> f64 {
        let c = -0.5 * (2.0 * std::f64::consts::PI * self.noise_var).ln();
        self.y
            .iter()
            .zip(alpha)
            .map(|(y, a)| c - 0.5 * (y - a) * (y - a) / self.noise_var)
            .sum()
    }

    fn grad(&self, alpha: &[f64]) -> Vec<f64> {
        self.y.iter().zip(alpha).map(|(y, a)| (y - a) / self.noise_var).collect()
    }

    fn hess(&self, _alpha: &[f64]) -> SymBandMatrix {
        SymBandMatrix::diagonal(&vec![-1.0 / self.noise_var; self.y.len()]).expect("non-empty")
    }

    fn is_concave(&self) -> bool {
        true
    }

    fn has_linear_bound(&self) -> bool {
        true
    }
}
