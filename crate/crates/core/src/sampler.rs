//! Importance densities built on a Gaussian approximation: the fitted normal
//! itself, a Student-t with the same location and scale, the general
//! moment-constrained mixture, and the state space mixture with imposed
//! approximating-model variances.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::{GaussianPrior, MeasurementModel, DEFAULT_NEWTON_MAX_ITER, DEFAULT_NEWTON_TOL};
use crate::proposal::{
    build_mixture, check_moment_condition, AnyProposal, Clamp, GaussianProposal, MomentOrder, StudentTProposal,
    DEFAULT_PI, DEFAULT_T_DOF,
};
use crate::statespace::{build_ssm_mixture, impose_scalar, spdk_fit, Ar1Spec, SpdkFit, DEFAULT_EPS_INFLATE};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerSpec {
    /// The fitted Gaussian.
    Normal,
    /// Student-t with the fitted location and scale.
    StudentT { nu: f64 },
    /// Mixture with the heavy component from the eigenvalue clamp.
    Moment { n: f64, pi: f64, clamp: Clamp },
    /// Scalar AR(1) state space mixture with inflated approximating-model
    /// variances in the heavy component.
    Imposed { n: f64, pi: f64, eps_inflate: f64 },
}

impl SamplerSpec {
    pub fn t_default() -> Self {
        SamplerSpec::StudentT { nu: DEFAULT_T_DOF }
    }

    pub fn moment(n: f64) -> Self {
        SamplerSpec::Moment {
            n,
            pi: DEFAULT_PI,
            clamp: Clamp::Hard,
        }
    }

    pub fn imposed(n: f64) -> Self {
        SamplerSpec::Imposed {
            n,
            pi: DEFAULT_PI,
            eps_inflate: DEFAULT_EPS_INFLATE,
        }
    }

    /// Short name used in reports.
    pub fn label(&self) -> String {
        match self {
            SamplerSpec::Normal => "normal".into(),
            SamplerSpec::StudentT { nu } => format!("t{nu}"),
            SamplerSpec::Moment { n, .. } => format!("moment{n}"),
            SamplerSpec::Imposed { n, .. } => format!("imposed{n}"),
        }
    }

    /// Moment order whose condition is reported for the fitted Gaussian.
    pub fn checked_order(&self) -> f64 {
        match self {
            SamplerSpec::Moment { n, .. } | SamplerSpec::Imposed { n, .. } => *n,
            _ => 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SamplerSpec::Normal => Ok(()),
            SamplerSpec::StudentT { nu } if nu > 0.0 && nu.is_finite() => Ok(()),
            SamplerSpec::StudentT { .. } => Err(invalid("t degrees of freedom must be positive")),
            SamplerSpec::Moment { n, pi, .. } | SamplerSpec::Imposed { n, pi, .. }
                if !(n >= 1.0 && n.is_finite() && pi > 0.0 && pi < 1.0) =>
            {
                Err(invalid("need n >= 1 and 0 < pi < 1"))
            }
            SamplerSpec::Imposed { eps_inflate, .. } if !(eps_inflate > 0.0) => {
                Err(invalid("inflation factor must be positive"))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for SamplerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Parses `normal`, `t` or `t:<nu>`, `moment` or `moment:<n>`, and
/// `imposed` or `imposed:<n>`; the other settings take their defaults.
impl FromStr for SamplerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((a, b)) => (a, Some(b)),
            None => (s, None),
        };
        let num = |default: f64| -> Result<f64> {
            arg.map_or(Ok(default), |a| a.parse().map_err(|_| invalid(format!("bad number in sampler `{s}`"))))
        };
        let spec = match name {
            "normal" => SamplerSpec::Normal,
            "t" => SamplerSpec::StudentT { nu: num(DEFAULT_T_DOF)? },
            "moment" | "nth" => SamplerSpec::moment(num(2.0)?),
            "imposed" => SamplerSpec::imposed(num(2.0)?),
            _ => return Err(invalid(format!("unknown sampler `{s}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// A proposal with the moment verdict for the Gaussian it was built from.
#[derive(Clone, Debug)]
pub struct BuiltProposal {
    pub proposal: AnyProposal,
    /// The fitted Gaussian satisfies the moment condition of order
    /// [`SamplerSpec::checked_order`].
    pub condition_holds: bool,
    /// Rounds of variance inflation, for [`SamplerSpec::Imposed`].
    pub imposition_rounds: Option<usize>,
}

/// Wrap a fitted Gaussian `g` according to `spec`. `Imposed` needs the state
/// space fit and is rejected here.
pub fn proposal_from_gaussian(g: &GaussianProposal, prior: &GaussianPrior, spec: &SamplerSpec) -> Result<BuiltProposal> {
    spec.validate()?;
    let order = MomentOrder::new(spec.checked_order())?;
    let condition_holds = check_moment_condition(g.precision(), prior.precision(), order)?;
    let proposal = match *spec {
        SamplerSpec::Normal => AnyProposal::Gaussian(g.clone()),
        SamplerSpec::StudentT { nu } => AnyProposal::StudentT(StudentTProposal::from_gaussian(g, nu)?),
        SamplerSpec::Moment { pi, clamp, .. } => {
            AnyProposal::Mixture(build_mixture(g.mean(), g.precision(), prior.precision(), order, clamp, pi)?)
        }
        SamplerSpec::Imposed { .. } => {
            return Err(invalid("the imposed sampler needs a state space fit"));
        }
    };
    Ok(BuiltProposal {
        proposal,
        condition_holds,
        imposition_rounds: None,
    })
}

/// Wrap an SPDK fit for a scalar AR(1) state.
pub fn proposal_from_fit(
    fit: &SpdkFit,
    prior: &GaussianPrior,
    ar: &Ar1Spec,
    spec: &SamplerSpec,
) -> Result<BuiltProposal> {
    let g = fit.proposal(prior)?;
    match *spec {
        SamplerSpec::Imposed { n, pi, eps_inflate } => {
            spec.validate()?;
            let imposed = impose_scalar(fit, ar, n, eps_inflate)?;
            let mix = build_ssm_mixture(fit, &imposed.fit.c, prior, pi)?;
            let condition_holds = check_moment_condition(g.precision(), prior.precision(), MomentOrder::new(n)?)?;
            Ok(BuiltProposal {
                proposal: AnyProposal::Mixture(mix),
                condition_holds,
                imposition_rounds: Some(imposed.k),
            })
        }
        _ => proposal_from_gaussian(&g, prior, spec),
    }
}

/// SPDK fit at default Newton settings followed by [`proposal_from_fit`].
pub fn ssm_proposal<M: MeasurementModel + ?Sized>(
    model: &M,
    prior: &GaussianPrior,
    ar: &Ar1Spec,
    spec: &SamplerSpec,
) -> Result<(SpdkFit, BuiltProposal)> {
    let fit = spdk_fit(model, prior, DEFAULT_NEWTON_TOL, DEFAULT_NEWTON_MAX_ITER)?;
    let built = proposal_from_fit(&fit, prior, ar, spec)?;
    Ok((fit, built))
}
