//! Dataset files and simulation from the example data generating processes.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::band::SymBandMatrix;
use crate::error::{invalid, Result};
use crate::models::{BernoulliToyModel, GlmmCluster, GlmmPoissonModel, PanelAr1Model, PanelSeries, PoissonSsmModel};
use crate::rng::{derive_seed, rng_from_seed, SimRng};
use crate::statespace::Ar1Spec;

/// Parameters of the Poisson state space model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsmParams {
    pub beta: f64,
    pub phi: f64,
    pub sigma2: f64,
}

impl SsmParams {
    /// `beta = -1.4`, `phi = 0.8`, `sigma2 = 0.5 (1 - phi^2) = 0.18`.
    pub fn dgp() -> Self {
        Self {
            beta: -1.4,
            phi: 0.8,
            sigma2: 0.5 * (1.0 - 0.8 * 0.8),
        }
    }

    /// `(-1.4, 0.99, 1)`, far from the data generating values.
    pub fn extreme() -> Self {
        Self {
            beta: -1.4,
            phi: 0.99,
            sigma2: 1.0,
        }
    }

    pub fn ar1(&self, len: usize) -> Result<Ar1Spec> {
        Ar1Spec::new(0.0, self.phi, self.sigma2, len)
    }
}

/// Parameters of the Poisson panel model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelParams {
    pub beta: Vec<f64>,
    pub phi: f64,
    pub sigma2: f64,
}

impl PanelParams {
    /// `beta = (1.4, -1)`, `phi = 0.8`, and `sigma2` from the stationary
    /// variance.
    pub fn dgp(sigma_alpha2: f64) -> Self {
        Self {
            beta: vec![1.4, -1.0],
            phi: 0.8,
            sigma2: sigma_alpha2 * (1.0 - 0.8 * 0.8),
        }
    }

    /// `(0, 0, 0, 1)`.
    pub fn far() -> Self {
        Self {
            beta: vec![0.0, 0.0],
            phi: 0.0,
            sigma2: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmmParams {
    pub beta: Vec<f64>,
    /// Random-effect precision, row by row.
    pub precision: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Dataset {
    PoissonSsm {
        y: Vec<u64>,
        params: SsmParams,
        seed: Option<u64>,
    },
    PanelAr1 {
        /// One count series per panel.
        y: Vec<Vec<u64>>,
        /// Covariate rows per panel.
        #[serde(rename = "X")]
        x: Vec<Vec<Vec<f64>>>,
        params: PanelParams,
        seed: Option<u64>,
    },
    GlmmPoisson {
        y: Vec<Vec<u64>>,
        #[serde(rename = "X")]
        x: Vec<Vec<Vec<f64>>>,
        #[serde(rename = "Z")]
        z: Vec<Vec<Vec<f64>>>,
        params: GlmmParams,
        seed: Option<u64>,
    },
    Bernoulli {
        trials: u64,
        successes: u64,
        prior_precision: f64,
    },
}

impl Dataset {
    pub fn kind(&self) -> &'static str {
        match self {
            Dataset::PoissonSsm { .. } => "poisson_ssm",
            Dataset::PanelAr1 { .. } => "panel_ar1",
            Dataset::GlmmPoisson { .. } => "glmm_poisson",
            Dataset::Bernoulli { .. } => "bernoulli",
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn poisson_ssm(&self) -> Result<PoissonSsmModel> {
        match self {
            Dataset::PoissonSsm { y, params, .. } => PoissonSsmModel::new(y.clone(), params.beta),
            _ => Err(invalid(format!("expected a poisson_ssm dataset, got {}", self.kind()))),
        }
    }

    pub fn panel_series(&self) -> Result<Vec<PanelSeries>> {
        match self {
            Dataset::PanelAr1 { y, x, .. } => {
                if y.len() != x.len() {
                    return Err(invalid("need covariates for every panel"));
                }
                Ok(y.iter()
                    .zip(x)
                    .map(|(y, x)| PanelSeries {
                        y: y.clone(),
                        x: x.clone(),
                    })
                    .collect())
            }
            _ => Err(invalid(format!("expected a panel_ar1 dataset, got {}", self.kind()))),
        }
    }

    pub fn panel_model(&self) -> Result<PanelAr1Model> {
        match self {
            Dataset::PanelAr1 { params, .. } => PanelAr1Model::new(
                self.panel_series()?,
                params.beta.clone(),
                Ar1Spec::new(0.0, params.phi, params.sigma2, 1)?,
            ),
            _ => Err(invalid(format!("expected a panel_ar1 dataset, got {}", self.kind()))),
        }
    }

    pub fn glmm_model(&self) -> Result<GlmmPoissonModel> {
        match self {
            Dataset::GlmmPoisson { y, x, z, params, .. } => {
                if y.len() != x.len() || y.len() != z.len() {
                    return Err(invalid("need X and Z for every cluster"));
                }
                let u = params.precision.len();
                if u == 0 || params.precision.iter().any(|r| r.len() != u) {
                    return Err(invalid("random-effect precision must be square"));
                }
                let q = DMatrix::from_fn(u, u, |i, j| params.precision[i][j]);
                let clusters = (0..y.len())
                    .map(|i| GlmmCluster {
                        y: y[i].clone(),
                        x: x[i].clone(),
                        z: z[i].clone(),
                    })
                    .collect();
                GlmmPoissonModel::new(clusters, params.beta.clone(), SymBandMatrix::from_dense(&q)?)
            }
            _ => Err(invalid(format!("expected a glmm_poisson dataset, got {}", self.kind()))),
        }
    }

    pub fn bernoulli(&self) -> Result<BernoulliToyModel> {
        match self {
            Dataset::Bernoulli {
                trials,
                successes,
                prior_precision,
            } => BernoulliToyModel::new(*trials, *successes, *prior_precision),
            _ => Err(invalid(format!("expected a bernoulli dataset, got {}", self.kind()))),
        }
    }
}

fn poisson_draw(rng: &mut SimRng, log_rate: f64) -> Result<u64> {
    let rate = log_rate.exp();
    if !rate.is_finite() {
        return Err(invalid(format!("Poisson rate exp({log_rate}) overflows")));
    }
    if rate < 1e-300 {
        return Ok(0);
    }
    let d = Poisson::new(rate).map_err(|e| invalid(e.to_string()))?;
    Ok(d.sample(rng) as u64)
}

/// Stationary AR(1) path with mean zero. `sigma2 = 0` gives the zero path.
fn ar1_path(rng: &mut SimRng, phi: f64, sigma2: f64, len: usize) -> Result<Vec<f64>> {
    if !(phi.abs() < 1.0) || !(sigma2 >= 0.0) {
        return Err(invalid("need |phi| < 1 and sigma2 >= 0"));
    }
    if sigma2 == 0.0 {
        return Ok(vec![0.0; len]);
    }
    let eta = Normal::new(0.0, sigma2.sqrt()).map_err(|e| invalid(e.to_string()))?;
    let init = Normal::new(0.0, (sigma2 / (1.0 - phi * phi)).sqrt()).map_err(|e| invalid(e.to_string()))?;
    let mut a = init.sample(rng);
    let mut path = Vec::with_capacity(len);
    for _ in 0..len {
        path.push(a);
        a = phi * a + eta.sample(rng);
    }
    Ok(path)
}

/// `y_t ~ Poisson(exp(beta + alpha_t))` with a stationary AR(1) `alpha`.
pub fn simulate_poisson_ssm(params: SsmParams, len: usize, seed: u64) -> Result<Dataset> {
    if len == 0 {
        return Err(invalid("series length must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    let path = ar1_path(&mut rng, params.phi, params.sigma2, len)?;
    let y = path
        .iter()
        .map(|a| poisson_draw(&mut rng, params.beta + a))
        .collect::<Result<_>>()?;
    Ok(Dataset::PoissonSsm {
        y,
        params,
        seed: Some(seed),
    })
}

/// `m` panels of length `len` with `x_it = (1, z_it)`, `z_it ~ U[0, 1]`.
/// Panel `i` uses the stream `derive_seed(seed, &[i])`.
pub fn simulate_panel(params: PanelParams, panels: usize, len: usize, seed: u64) -> Result<Dataset> {
    if panels == 0 || len == 0 {
        return Err(invalid("need at least one panel and one time point"));
    }
    if params.beta.len() != 2 {
        return Err(invalid("panel design has an intercept and one covariate"));
    }
    let mut ys = Vec::with_capacity(panels);
    let mut xs = Vec::with_capacity(panels);
    for i in 0..panels {
        let mut rng = rng_from_seed(derive_seed(seed, &[i as u64]));
        let x: Vec<Vec<f64>> = (0..len).map(|_| vec![1.0, rng.random::<f64>()]).collect();
        let path = ar1_path(&mut rng, params.phi, params.sigma2, len)?;
        let y = x
            .iter()
            .zip(&path)
            .map(|(x, a)| poisson_draw(&mut rng, x[0] * params.beta[0] + x[1] * params.beta[1] + a))
            .collect::<Result<_>>()?;
        ys.push(y);
        xs.push(x);
    }
    Ok(Dataset::PanelAr1 {
        y: ys,
        x: xs,
        params,
        seed: Some(seed),
    })
}

/// Random-intercept Poisson GLMM: `x_ij = (1, U[0,1])`, `z_ij = 1`,
/// `alpha_i ~ N(0, 1 / precision)`.
pub fn simulate_glmm(beta: [f64; 2], precision: f64, clusters: usize, per_cluster: usize, seed: u64) -> Result<Dataset> {
    if clusters == 0 || per_cluster == 0 || !(precision > 0.0) {
        return Err(invalid("need clusters, observations and a positive precision"));
    }
    let re = Normal::new(0.0, precision.powf(-0.5)).map_err(|e| invalid(e.to_string()))?;
    let (mut ys, mut xs, mut zs) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..clusters {
        let mut rng = rng_from_seed(derive_seed(seed, &[i as u64]));
        let a = re.sample(&mut rng);
        let x: Vec<Vec<f64>> = (0..per_cluster).map(|_| vec![1.0, rng.random::<f64>()]).collect();
        let y = x
            .iter()
            .map(|x| poisson_draw(&mut rng, beta[0] * x[0] + beta[1] * x[1] + a))
            .collect::<Result<_>>()?;
        ys.push(y);
        xs.push(x);
        zs.push(vec![vec![1.0]; per_cluster]);
    }
    Ok(Dataset::GlmmPoisson {
        y: ys,
        x: xs,
        z: zs,
        params: GlmmParams {
            beta: beta.to_vec(),
            precision: vec![vec![precision]],
        },
        seed: Some(seed),
    })
}
