use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::{GaussianPrior, MeasurementModel};
use crate::band::SymBandMatrix;
use crate::error::{invalid, Error, Result};

/// Responses and design rows of one cluster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmmCluster {
    pub y: Vec<u64>,
    /// Fixed-effect design, one row per observation.
    pub x: Vec<Vec<f64>>,
    /// Random-effect design, one row per observation.
    pub z: Vec<Vec<f64>>,
}

/// Poisson GLMM with log link: `eta_ij = x_ij' beta + z_ij' alpha_i`,
/// `alpha_i ~ N(0, Q^{-1})` independently across clusters.
#[derive(Clone, Debug)]
pub struct GlmmPoissonModel {
    clusters: Vec<GlmmCluster>,
    beta: Vec<f64>,
    dispersion: f64,
    re_precision: SymBandMatrix,
}

impl GlmmPoissonModel {
    pub fn new(clusters: Vec<GlmmCluster>, beta: Vec<f64>, re_precision: SymBandMatrix) -> Result<Self> {
        Self::with_dispersion(clusters, beta, re_precision, 1.0)
    }

    pub fn with_dispersion(
        clusters: Vec<GlmmCluster>,
        beta: Vec<f64>,
        re_precision: SymBandMatrix,
        dispersion: f64,
    ) -> Result<Self> {
        if !(dispersion > 0.0 && dispersion.is_finite()) {
            return Err(invalid("dispersion must be positive"));
        }
        if clusters.is_empty() {
            return Err(invalid("GLMM needs at least one cluster"));
        }
        let u = re_precision.dim();
        for (i, c) in clusters.iter().enumerate() {
            if c.y.is_empty() || c.x.len() != c.y.len() || c.z.len() != c.y.len() {
                return Err(invalid(format!("cluster {i}: need one x and z row per response")));
            }
            if c.x.iter().any(|r| r.len() != beta.len()) {
                return Err(invalid(format!("cluster {i}: x rows must have {} columns", beta.len())));
            }
            if c.z.iter().any(|r| r.len() != u) {
                return Err(invalid(format!("cluster {i}: z rows must have {u} columns")));
            }
        }
        if !re_precision.is_positive_definite()? {
            return Err(Error::NotPositiveDefinite { block_row: 1 });
        }
        let dense = re_precision.to_dense();
        let re_precision = SymBandMatrix::from_dense(&dense)?;
        Ok(Self {
            clusters,
            beta,
            dispersion,
            re_precision,
        })
    }

    pub fn clusters(&self) -> &[GlmmCluster] {
        &self.clusters
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn dispersion(&self) -> f64 {
        self.dispersion
    }

    pub fn re_dim(&self) -> usize {
        self.re_precision.dim()
    }

    pub fn re_precision(&self) -> &SymBandMatrix {
        &self.re_precision
    }

    pub fn prior(&self) -> GaussianPrior {
        GaussianPrior::new(vec![0.0; self.re_dim()], self.re_precision.clone()).expect("validated PD")
    }

    pub fn cluster_measurement(&self, i: usize) -> GlmmClusterMeasurement {
        let c = &self.clusters[i];
        let fixed = c
            .x
            .iter()
            .map(|row| row.iter().zip(&self.beta).map(|(a, b)| a * b).sum())
            .collect();
        GlmmClusterMeasurement {
            y: c.y.clone(),
            z: c.z.clone(),
            fixed,
            dispersion: self.dispersion,
            log_fact: c.y.iter().map(|&v| ln_gamma(v as f64 + 1.0)).collect(),
            u: self.re_dim(),
        }
    }
}

/// `l_i(alpha_i)` for one GLMM cluster.
#[derive(Clone, Debug)]
pub struct GlmmClusterMeasurement {
    y: Vec<u64>,
    z: Vec<Vec<f64>>,
    fixed: Vec<f64>,
    dispersion: f64,
    log_fact: Vec<f64>,
    u: usize,
}

impl GlmmClusterMeasurement {
    fn eta(&self, alpha: &[f64]) -> impl Iterator<Item = f64> + '_ {
        let alpha = alpha.to_vec();
        self.z
            .iter()
            .zip(&self.fixed)
            .map(move |(z, f)| f + z.iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>())
    }
}

impl MeasurementModel for GlmmClusterMeasurement {
    fn dim(&self) -> usize {
        self.u
    }

    fn block_size(&self) -> usize {
        self.u
    }

    fn log_meas(&self, alpha: &[f64]) -> f64 {
        self.eta(alpha)
            .zip(&self.y)
            .zip(&self.log_fact)
            .map(|((eta, &y), lf)| (y as f64 * eta - eta.exp()) / self.dispersion - lf)
            .sum()
    }

    fn grad(&self, alpha: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.u];
        for ((eta, &y), z) in self.eta(alpha).zip(&self.y).zip(&self.z) {
            let r = (y as f64 - eta.exp()) / self.dispersion;
            for (gk, zk) in g.iter_mut().zip(z) {
                *gk += r * zk;
            }
        }
        g
    }

    fn hess(&self, alpha: &[f64]) -> SymBandMatrix {
        let u = self.u;
        let mut h = DMatrix::zeros(u, u);
        for (eta, z) in self.eta(alpha).zip(&self.z) {
            let w = eta.exp() / self.dispersion;
            for a in 0..u {
                for b in 0..u {
                    h[(a, b)] -= w * z[a] * z[b];
                }
            }
        }
        SymBandMatrix::from_dense(&h).expect("square")
    }

    fn is_concave(&self) -> bool {
        true
    }

    fn has_linear_bound(&self) -> bool {
        true
    }
}

/// Mode `alpha*_i` of `F_i = l_i + log p(alpha_i)` by Newton's method with
/// step halving, and `Q*_i = -H_i(alpha*_i)`.
pub fn glmm_newton_mode(
    model: &GlmmPoissonModel,
    cluster: usize,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SymBandMatrix)> {
    if !(tol > 0.0) {
        return Err(invalid("tolerance must be positive"));
    }
    if cluster >= model.num_clusters() {
        return Err(invalid(format!("cluster {cluster} out of range")));
    }
    let meas = model.cluster_measurement(cluster);
    let q = model.re_precision();
    let objective = |a: &[f64]| meas.log_meas(a) - 0.5 * q.quad_form(a);
    let neg_hessian = |a: &[f64]| SymBandMatrix::lin_comb(-1.0, &meas.hess(a), 1.0, q);

    let mut alpha = vec![0.0; model.re_dim()];
    let mut f = objective(&alpha);
    for _ in 0..max_iter {
        let qa = q.mul_vec(&alpha);
        let grad: Vec<f64> = meas.grad(&alpha).iter().zip(&qa).map(|(g, p)| g - p).collect();
        let q_star = neg_hessian(&alpha)?;
        if grad.iter().all(|g| g.abs() <= tol) {
            return Ok((alpha, q_star));
        }
        let step = q_star.factorize()?.solve(&grad)?;
        let mut scale = 1.0;
        let mut next = alpha.clone();
        for _ in 0..60 {
            for ((n, a), s) in next.iter_mut().zip(&alpha).zip(&step) {
                *n = a + scale * s;
            }
            let fn_ = objective(&next);
            if fn_.is_finite() && fn_ >= f - 1e-12 * f.abs().max(1.0) {
                f = fn_;
                break;
            }
            scale *= 0.5;
        }
        alpha.clone_from(&next);
    }
    Err(Error::Diverged {
        iterations: max_iter,
        last: alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::fd::check_derivatives;
    use crate::models::{log_joint, DEFAULT_NEWTON_MAX_ITER, DEFAULT_NEWTON_TOL};
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn random_model(seed: u64, u: usize, p: usize, clusters: usize) -> GlmmPoissonModel {
        let mut rng = rng_from_seed(seed);
        let cl = (0..clusters)
            .map(|_| {
                let n = rng.random_range(3..12);
                GlmmCluster {
                    y: (0..n).map(|_| rng.random_range(0..8)).collect(),
                    x: (0..n).map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
                    z: (0..n).map(|_| (0..u).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
                }
            })
            .collect();
        let beta = (0..p).map(|_| rng.random_range(-0.5..0.5)).collect();
        let mut q = DMatrix::<f64>::identity(u, u) * 2.0;
        for i in 1..u {
            q[(i, i - 1)] = 0.3;
            q[(i - 1, i)] = 0.3;
        }
        GlmmPoissonModel::new(cl, beta, SymBandMatrix::from_dense(&q).unwrap()).unwrap()
    }

    #[test]
    fn joint_matches_naive_summation() {
        let model = random_model(3, 3, 2, 4);
        let mut rng = rng_from_seed(4);
        let qd = model.re_precision().to_dense();
        for i in 0..model.num_clusters() {
            let a: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c = &model.clusters()[i];
            let mut naive = 0.0;
            for j in 0..c.y.len() {
                let mut eta = 0.0;
                for k in 0..2 {
                    eta += c.x[j][k] * model.beta()[k];
                }
                for k in 0..3 {
                    eta += c.z[j][k] * a[k];
                }
                let y = c.y[j] as f64;
                let mut lf = 0.0;
                for v in 1..=c.y[j] {
                    lf += (v as f64).ln();
                }
                naive += y * eta - eta.exp() - lf;
            }
            let av = nalgebra::DVector::from_vec(a.clone());
            let quad = (av.transpose() * &qd * &av)[(0, 0)];
            let logdet = qd.clone().cholesky().unwrap().l().diagonal().iter().map(|d| 2.0 * d.ln()).sum::<f64>();
            naive += -1.5 * (2.0 * std::f64::consts::PI).ln() + 0.5 * logdet - 0.5 * quad;
            let got = log_joint(&model.cluster_measurement(i), &model.prior(), &a);
            assert!((got - naive).abs() <= 1e-10 * naive.abs().max(1.0), "{got} vs {naive}");
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let model = random_model(5, 3, 2, 3);
        let mut rng = rng_from_seed(6);
        for _ in 0..100 {
            let i = rng.random_range(0..3);
            let a: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            check_derivatives(&model.cluster_measurement(i), &a);
        }
    }

    #[test]
    fn zero_design_returns_prior_mode() {
        let c = GlmmCluster {
            y: vec![3, 0, 5],
            x: vec![vec![1.0]; 3],
            z: vec![vec![0.0, 0.0]; 3],
        };
        let q = SymBandMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let model = GlmmPoissonModel::new(vec![c], vec![0.2], q.clone()).unwrap();
        let (a, qs) = glmm_newton_mode(&model, 0, DEFAULT_NEWTON_TOL, DEFAULT_NEWTON_MAX_ITER).unwrap();
        assert_eq!(a, vec![0.0, 0.0]);
        assert!((qs.to_dense() - q.to_dense()).abs().max() < 1e-15);
    }

    fn single_observation(y: u64) -> GlmmPoissonModel {
        let c = GlmmCluster {
            y: vec![y],
            x: vec![vec![0.0]],
            z: vec![vec![1.0]],
        };
        GlmmPoissonModel::new(vec![c], vec![0.0], SymBandMatrix::identity(1)).unwrap()
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn one_dimensional_root() {
        // Stationarity: y - e^a - a = 0.
        let (a, qs) = glmm_newton_mode(&single_observation(1), 0, 1e-12, 100).unwrap();
        assert!(a[0].abs() < 1e-12);
        assert!((qs.get(0, 0) - 2.0).abs() < 1e-12);

        let (a, qs) = glmm_newton_mode(&single_observation(2), 0, 1e-12, 100).unwrap();
        let root = bisect(|x| 2.0 - x.exp() - x, 0.0, 1.0);
        assert!((a[0] - root).abs() < 1e-10);
        assert!((a[0] - 0.4428544).abs() < 1e-7);
        assert!((qs.get(0, 0) - (a[0].exp() + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn mode_gradient_is_below_tolerance() {
        for seed in 0..20 {
            let model = random_model(100 + seed, 2, 3, 5);
            for i in 0..model.num_clusters() {
                let (a, qs) = glmm_newton_mode(&model, i, 1e-8, 100).unwrap();
                let m = model.cluster_measurement(i);
                let qa = model.re_precision().mul_vec(&a);
                for (g, p) in m.grad(&a).iter().zip(&qa) {
                    assert!((g - p).abs() <= 1e-8);
                }
                assert!(qs.is_positive_definite().unwrap());
            }
        }
    }

    #[test]
    fn extreme_counts_converge() {
        let c = GlmmCluster {
            y: vec![400, 0, 350],
            x: vec![vec![1.0]; 3],
            z: vec![vec![1.0]; 3],
        };
        let model = GlmmPoissonModel::new(vec![c], vec![-3.0], SymBandMatrix::identity(1)).unwrap();
        let (a, _) = glmm_newton_mode(&model, 0, 1e-8, 100).unwrap();
        assert!(a[0] > 5.0);
    }

    #[test]
    fn iteration_cap_reports_last_iterate() {
        let c = GlmmCluster {
            y: vec![400],
            x: vec![vec![0.0]],
            z: vec![vec![1.0]],
        };
        let model = GlmmPoissonModel::new(vec![c], vec![0.0], SymBandMatrix::identity(1)).unwrap();
        match glmm_newton_mode(&model, 0, 1e-8, 1) {
            Err(Error::Diverged { iterations, last }) => {
                assert_eq!(iterations, 1);
                assert_eq!(last.len(), 1);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
