use serde::Serialize;

use crate::error::{invalid, Error, Result};

pub const IACT_MAX_LAG: usize = 1000;
const MIN_CHAIN: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IactResult {
    pub estimate: f64,
    /// `L* = min(1000, L)`.
    pub cutoff: usize,
    /// First lag with `|rho_j| <= 2 / sqrt(K)`, or the last lag computed.
    pub first_small_lag: usize,
    /// `rho_1, ..., rho_{L*}`.
    pub autocorrelations: Vec<f64>,
}

/// Integrated autocorrelation time `1 + 2 sum_{j=1}^{L*} rho_j`, with `L` the
/// first lag whose sample autocorrelation is within `2 / sqrt(K)` of zero.
pub fn iact(chain: &[f64]) -> Result<IactResult> {
    let k = chain.len();
    if k < MIN_CHAIN {
        return Err(invalid(format!("chain of length {k} is shorter than {MIN_CHAIN}")));
    }
    let n = k as f64;
    let mean = chain.iter().sum::<f64>() / n;
    let centred: Vec<f64> = chain.iter().map(|x| x - mean).collect();
    let c0 = centred.iter().map(|x| x * x).sum::<f64>() / n;
    if !(c0 > 0.0) {
        return Err(Error::ConstantChain);
    }
    let bound = 2.0 / n.sqrt();
    let mut rho = Vec::new();
    let mut first_small = None;
    for j in 1..k.min(IACT_MAX_LAG + 1) {
        let cj = centred[..k - j].iter().zip(&centred[j..]).map(|(a, b)| a * b).sum::<f64>() / n;
        let r = cj / c0;
        rho.push(r);
        if r.abs() <= bound {
            first_small = Some(j);
            break;
        }
    }
    let l = first_small.unwrap_or(rho.len());
    let cutoff = l.min(IACT_MAX_LAG);
    rho.truncate(cutoff);
    Ok(IactResult {
        estimate: 1.0 + 2.0 * rho.iter().sum::<f64>(),
        cutoff,
        first_small_lag: l,
        autocorrelations: rho,
    })
}
