use rand::Rng;
use rand_distr::{Distribution as _, Exp, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

/// A univariate real distribution. Exponential and lognormal samples are
/// non-negative by construction; no other family is truncated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Distribution {
    Fixed {
        value: f64,
    },
    Normal {
        mean: f64,
        sd: f64,
    },
    Exponential {
        rate: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// `mu` and `sigma` describe the underlying normal.
    Lognormal {
        mu: f64,
        sigma: f64,
    },
}

impl Distribution {
    pub fn validate(&self) -> Result<(), String> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(format!("{name} must be finite, got {v}"))
            }
        };
        match *self {
            Distribution::Fixed { value } => finite("value", value),
            Distribution::Normal { mean, sd } => {
                finite("mean", mean)?;
                finite("sd", sd)?;
                if sd < 0.0 {
                    return Err(format!("normal sd must be >= 0, got {sd}"));
                }
                Ok(())
            }
            Distribution::Exponential { rate } => {
                finite("rate", rate)?;
                if rate <= 0.0 {
                    return Err(format!("exponential rate must be > 0, got {rate}"));
                }
                Ok(())
            }
            Distribution::Uniform { lo, hi } => {
                finite("lo", lo)?;
                finite("hi", hi)?;
                if lo > hi {
                    return Err(format!("uniform needs lo <= hi, got [{lo}, {hi}]"));
                }
                Ok(())
            }
            Distribution::Lognormal { mu, sigma } => {
                finite("mu", mu)?;
                finite("sigma", sigma)?;
                if sigma < 0.0 {
                    return Err(format!("lognormal sigma must be >= 0, got {sigma}"));
                }
                Ok(())
            }
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Distribution::Fixed { .. } => "fixed",
            Distribution::Normal { .. } => "normal",
            Distribution::Exponential { .. } => "exponential",
            Distribution::Uniform { .. } => "uniform",
            Distribution::Lognormal { .. } => "lognormal",
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Distribution::Fixed { .. } | Distribution::Exponential { .. } => 1,
            _ => 2,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Distribution::Fixed { value } => value,
            Distribution::Normal { mean, .. } => mean,
            Distribution::Exponential { rate } => 1.0 / rate,
            Distribution::Uniform { lo, hi } => 0.5 * (lo + hi),
            Distribution::Lognormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Distribution::Fixed { value } => value,
            Distribution::Normal { mean, sd } => Normal::new(mean, sd).map(|d| d.sample(rng)).unwrap_or(mean),
            Distribution::Exponential { rate } => Exp::new(rate).map(|d| d.sample(rng)).unwrap_or(0.0),
            Distribution::Uniform { lo, hi } => lo + (hi - lo) * rng.gen::<f64>(),
            Distribution::Lognormal { mu, sigma } => {
                LogNormal::new(mu, sigma).map(|d| d.sample(rng)).unwrap_or_else(|_| mu.exp()).max(0.0)
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let normal_cdf = |z: f64| 0.5 * erfc(-z / std::f64::consts::SQRT_2);
        match *self {
            Distribution::Fixed { value } => f64::from(u8::from(x >= value)),
            Distribution::Normal { mean, sd } => {
                if sd == 0.0 {
                    f64::from(u8::from(x >= mean))
                } else {
                    normal_cdf((x - mean) / sd)
                }
            }
            Distribution::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    1.0 - (-rate * x).exp()
                }
            }
            Distribution::Uniform { lo, hi } => {
                if x < lo {
                    0.0
                } else if x >= hi {
                    1.0
                } else {
                    (x - lo) / (hi - lo)
                }
            }
            Distribution::Lognormal { mu, sigma } => {
                if x <= 0.0 {
                    0.0
                } else if sigma == 0.0 {
                    f64::from(u8::from(x.ln() >= mu))
                } else {
                    normal_cdf((x.ln() - mu) / sigma)
                }
            }
        }
    }
}
