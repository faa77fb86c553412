//! Reparameterized sampling: a draw from a distribution written as a
//! deterministic, differentiable function of parameter-free noise.
//!
//! Three constructions are covered: inverse-CDF transforms of `U(0,1)` noise,
//! location-scale transforms of standard noise, and composition
//! (log-normal as `exp` of a Gaussian). Gamma sums, Dirichlet, Student's t and
//! the remaining named families are natural extension points but are not
//! needed by the Gaussian encoder path.

use std::f64::consts::PI;

use crate::error::{AevbError, Result};
use crate::numkit::{normal_quantile, RngState};

/// Distance kept from 0 and 1 before inverting a CDF.
pub const UNIFORM_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ReparamFamily {
    GaussianLocScale { loc: f64, scale: f64 },
    Exponential { rate: f64 },
    Cauchy { loc: f64, scale: f64 },
    Logistic { loc: f64, scale: f64 },
    Rayleigh { scale: f64 },
    Weibull { shape: f64, scale: f64 },
    Gumbel { loc: f64, scale: f64 },
    LogNormal { mu: f64, sigma: f64 },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(AevbError::Param(format!("{name} must be positive and finite, got {v}")))
    }
}

impl ReparamFamily {
    pub fn name(&self) -> &'static str {
        match self {
            Self::GaussianLocScale { .. } => "gaussian",
            Self::Exponential { .. } => "exponential",
            Self::Cauchy { .. } => "cauchy",
            Self::Logistic { .. } => "logistic",
            Self::Rayleigh { .. } => "rayleigh",
            Self::Weibull { .. } => "weibull",
            Self::Gumbel { .. } => "gumbel",
            Self::LogNormal { .. } => "lognormal",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::GaussianLocScale { scale, .. }
            | Self::Cauchy { scale, .. }
            | Self::Logistic { scale, .. }
            | Self::Gumbel { scale, .. }
            | Self::Rayleigh { scale } => positive("scale", scale),
            Self::Exponential { rate } => positive("rate", rate),
            Self::Weibull { shape, scale } => positive("shape", shape).and(positive("scale", scale)),
            Self::LogNormal { sigma, .. } => positive("sigma", sigma),
        }
    }

    /// Parameters in declaration order.
    pub fn params(&self) -> Vec<f64> {
        match *self {
            Self::GaussianLocScale { loc, scale }
            | Self::Cauchy { loc, scale }
            | Self::Logistic { loc, scale }
            | Self::Gumbel { loc, scale } => vec![loc, scale],
            Self::Exponential { rate } => vec![rate],
            Self::Rayleigh { scale } => vec![scale],
            Self::Weibull { shape, scale } => vec![shape, scale],
            Self::LogNormal { mu, sigma } => vec![mu, sigma],
        }
    }

    /// Same family with new parameter values (declaration order).
    pub fn with_params(&self, p: &[f64]) -> Result<Self> {
        let expected = self.params().len();
        if p.len() != expected {
            return Err(AevbError::shape(
                "ReparamFamily::with_params",
                format!("{expected} parameters"),
                format!("{} values", p.len()),
            ));
        }
        let out = match self {
            Self::GaussianLocScale { .. } => Self::GaussianLocScale { loc: p[0], scale: p[1] },
            Self::Exponential { .. } => Self::Exponential { rate: p[0] },
            Self::Cauchy { .. } => Self::Cauchy { loc: p[0], scale: p[1] },
            Self::Logistic { .. } => Self::Logistic { loc: p[0], scale: p[1] },
            Self::Rayleigh { .. } => Self::Rayleigh { scale: p[0] },
            Self::Weibull { .. } => Self::Weibull { shape: p[0], scale: p[1] },
            Self::Gumbel { .. } => Self::Gumbel { loc: p[0], scale: p[1] },
            Self::LogNormal { .. } => Self::LogNormal { mu: p[0], sigma: p[1] },
        };
        out.validate()?;
        Ok(out)
    }

    /// `F⁻¹(u)`. See [`sample_inverse_cdf`].
    pub fn inverse_cdf(&self, u: f64) -> Result<f64> {
        sample_inverse_cdf(self, u)
    }

    /// `∂F⁻¹(u)/∂params` at fixed `u`, in declaration order.
    pub fn inverse_cdf_param_grad(&self, u: f64) -> Result<Vec<f64>> {
        self.validate()?;
        let u = clamp_uniform(u)?;
        Ok(match *self {
            Self::GaussianLocScale { .. } => vec![1.0, normal_quantile(u)],
            Self::Exponential { rate } => vec![(1.0 - u).ln() / (rate * rate)],
            Self::Cauchy { .. } => vec![1.0, (PI * (u - 0.5)).tan()],
            Self::Logistic { .. } => vec![1.0, (u / (1.0 - u)).ln()],
            Self::Rayleigh { .. } => vec![(-2.0 * (1.0 - u).ln()).sqrt()],
            Self::Weibull { shape, scale } => {
                let w = -(1.0 - u).ln();
                let p = w.powf(1.0 / shape);
                vec![-scale * p * w.ln() / (shape * shape), p]
            }
            Self::Gumbel { .. } => vec![1.0, -(-u.ln()).ln()],
            Self::LogNormal { mu, sigma } => {
                let q = normal_quantile(u);
                let z = (mu + sigma * q).exp();
                vec![z, z * q]
            }
        })
    }

    /// One draw using the family's natural construction: location-scale for
    /// the Gaussian, composition for the log-normal, inverse CDF otherwise.
    pub fn sample(&self, rng: &mut RngState) -> Result<f64> {
        match *self {
            Self::GaussianLocScale { loc, scale } => {
                Ok(sample_loc_scale(&[loc], &[scale], &[rng.standard_normal()])?[0])
            }
            Self::LogNormal { mu, sigma } => sample_composed(mu, sigma, rng.standard_normal()),
            _ => sample_inverse_cdf(self, rng.uniform_open()),
        }
    }
}

fn clamp_uniform(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(AevbError::Param(format!("u must lie in the open interval (0, 1), got {u}")));
    }
    Ok(u.clamp(UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP))
}

/// `loc + scale ⊙ eps`.
pub fn sample_loc_scale(loc: &[f64], scale: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if loc.len() != scale.len() || loc.len() != eps.len() {
        return Err(AevbError::shape(
            "sample_loc_scale",
            format!("loc/scale of length {}/{}", loc.len(), scale.len()),
            format!("eps of length {}", eps.len()),
        ));
    }
    loc.iter()
        .zip(scale)
        .zip(eps)
        .map(|((&m, &s), &e)| {
            positive("scale", s)?;
            Ok(m + s * e)
        })
        .collect()
}

/// Inverse CDF of `family` at `u ∈ (0, 1)`; strictly increasing in `u`.
pub fn sample_inverse_cdf(family: &ReparamFamily, u: f64) -> Result<f64> {
    family.validate()?;
    let u = clamp_uniform(u)?;
    Ok(match *family {
        ReparamFamily::GaussianLocScale { loc, scale } => loc + scale * normal_quantile(u),
        ReparamFamily::Exponential { rate } => -(1.0 - u).ln() / rate,
        ReparamFamily::Cauchy { loc, scale } => loc + scale * (PI * (u - 0.5)).tan(),
        ReparamFamily::Logistic { loc, scale } => loc + scale * (u / (1.0 - u)).ln(),
        ReparamFamily::Rayleigh { scale } => scale * (-2.0 * (1.0 - u).ln()).sqrt(),
        ReparamFamily::Weibull { shape, scale } => scale * (-(1.0 - u).ln()).powf(1.0 / shape),
        ReparamFamily::Gumbel { loc, scale } => loc - scale * (-u.ln()).ln(),
        ReparamFamily::LogNormal { mu, sigma } => (mu + sigma * normal_quantile(u)).exp(),
    })
}

/// Log-normal by composition: `exp(mu + sigma·eps)` with standard-normal `eps`.
pub fn sample_composed(mu: f64, sigma: f64, eps: f64) -> Result<f64> {
    positive("sigma", sigma)?;
    Ok((mu + sigma * eps).exp())
}
