use serde::{Deserialize, Serialize};

use super::{log_joint, GaussianPrior, PoissonSsmModel};
use crate::error::{invalid, Result};
use crate::statespace::{ar1_precision, Ar1Spec};

/// Counts and covariate rows of one panel unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelSeries {
    pub y: Vec<u64>,
    /// One covariate row `x_it` per time point.
    pub x: Vec<Vec<f64>>,
}

/// Poisson panel with unit-specific AR(1) latent paths sharing `(mu, phi, sigma2)`:
/// `eta_it = x_it' beta + alpha_it`.
#[derive(Clone, Debug)]
pub struct PanelAr1Model {
    panels: Vec<PanelSeries>,
    beta: Vec<f64>,
    ar: Ar1Spec,
}

impl PanelAr1Model {
    /// `ar.len()` is ignored; each panel uses its own length.
    pub fn new(panels: Vec<PanelSeries>, beta: Vec<f64>, ar: Ar1Spec) -> Result<Self> {
        if panels.is_empty() {
            return Err(invalid("panel model needs at least one panel"));
        }
        for (i, p) in panels.iter().enumerate() {
            if p.y.is_empty() || p.x.len() != p.y.len() {
                return Err(invalid(format!("panel {i}: need one covariate row per count")));
            }
            if p.x.iter().any(|r| r.len() != beta.len()) {
                return Err(invalid(format!("panel {i}: covariate rows must have {} entries", beta.len())));
            }
        }
        Ok(Self { panels, beta, ar })
    }

    pub fn panels(&self) -> &[PanelSeries] {
        &self.panels
    }

    pub fn num_panels(&self) -> usize {
        self.panels.len()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn ar(&self) -> &Ar1Spec {
        &self.ar
    }

    pub fn panel_ar1(&self, i: usize) -> Ar1Spec {
        self.ar.with_len(self.panels[i].y.len())
    }

    pub fn panel_measurement(&self, i: usize) -> PoissonSsmModel {
        let p = &self.panels[i];
        let offsets = p
            .x
            .iter()
            .map(|row| row.iter().zip(&self.beta).map(|(a, b)| a * b).sum())
            .collect();
        PoissonSsmModel::with_offsets(p.y.clone(), offsets).expect("validated panel")
    }

    pub fn panel_prior(&self, i: usize) -> GaussianPrior {
        let (mean, q) = ar1_precision(&self.panel_ar1(i)).expect("validated AR(1)");
        GaussianPrior::new(mean, q).expect("AR(1) precision is PD")
    }

    /// Sum of per-panel joint log densities.
    pub fn log_joint(&self, alphas: &[Vec<f64>]) -> Result<f64> {
        if alphas.len() != self.panels.len() {
            return Err(invalid("need one latent path per panel"));
        }
        let mut total = 0.0;
        for (i, a) in alphas.iter().enumerate() {
            if a.len() != self.panels[i].y.len() {
                return Err(invalid(format!("panel {i}: latent path has wrong length")));
            }
            total += log_joint(&self.panel_measurement(i), &self.panel_prior(i), a);
        }
        Ok(total)
    }
}
