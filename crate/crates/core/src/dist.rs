//! Distribution terms for equation nodes.
//!
//! A [`DistTerm`] is `scale * X` where `X` is triangular or lognormal.
//! Lognormal parameters are the mean and standard deviation of `ln X`.
//! Multiplying a lognormal by `c` only shifts the log-mean by `ln c`
//! ([`scale_lognormal`]), so scaled lognormals can be folded into an
//! unscaled one without changing the distribution.

use std::f64::consts::PI;

use rand::Rng;
use thiserror::Error;

use crate::rng::standard_normal;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("degenerate data: {0}")]
    Degenerate(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    Triangular { min: f64, mode: f64, max: f64 },
    Lognormal { mu: f64, sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistTerm {
    pub family: Family,
    pub scale: f64,
}

impl DistTerm {
    pub fn triangular(min: f64, mode: f64, max: f64) -> Result<Self, DistError> {
        let term = DistTerm {
            family: Family::Triangular { min, mode, max },
            scale: 1.0,
        };
        term.validate()?;
        Ok(term)
    }

    pub fn lognormal(mu: f64, sigma: f64) -> Result<Self, DistError> {
        let term = DistTerm {
            family: Family::Lognormal { mu, sigma },
            scale: 1.0,
        };
        term.validate()?;
        Ok(term)
    }

    /// Multiplies the current scale by `c`.
    pub fn scaled(self, c: f64) -> Result<Self, DistError> {
        let term = DistTerm {
            scale: self.scale * c,
            ..self
        };
        term.validate()?;
        Ok(term)
    }

    pub fn validate(&self) -> Result<(), DistError> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(DistError::InvalidParameters(format!(
                "scale must be positive, got {}",
                self.scale
            )));
        }
        match self.family {
            Family::Triangular { min, mode, max } => {
                if ![min, mode, max].iter().all(|v| v.is_finite()) {
                    return Err(DistError::InvalidParameters(
                        "triangular parameters must be finite".into(),
                    ));
                }
                if !(min <= mode && mode <= max && min < max) {
                    return Err(DistError::InvalidParameters(format!(
                        "triangular needs min <= mode <= max and min < max, got ({min}, {mode}, {max})"
                    )));
                }
            }
            Family::Lognormal { mu, sigma } => {
                if !mu.is_finite() {
                    return Err(DistError::InvalidParameters(
                        "lognormal mu must be finite".into(),
                    ));
                }
                if !(sigma.is_finite() && sigma > 0.0) {
                    return Err(DistError::InvalidParameters(format!(
                        "lognormal sigma must be positive, got {sigma}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Draws one value. Triangular uses one uniform through the inverse CDF;
    /// lognormal uses `exp(mu + sigma * z)` with a Box-Muller normal.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let raw = match self.family {
            Family::Triangular { min, mode, max } => {
                triangular_inverse_cdf(min, mode, max, rng.random::<f64>())
            }
            Family::Lognormal { mu, sigma } => (mu + sigma * standard_normal(rng)).exp(),
        };
        self.scale * raw
    }

    /// Density of the scaled variable: `f(x / c) / c`.
    pub fn pdf(&self, x: f64) -> f64 {
        let c = self.scale;
        let u = x / c;
        let density = match self.family {
            Family::Triangular { min, mode, max } => {
                if u < min || u > max {
                    0.0
                } else if u < mode {
                    2.0 * (u - min) / ((max - min) * (mode - min))
                } else if u > mode {
                    2.0 * (max - u) / ((max - min) * (max - mode))
                } else {
                    2.0 / (max - min)
                }
            }
            Family::Lognormal { mu, sigma } => {
                if u <= 0.0 {
                    0.0
                } else {
                    let z = (u.ln() - mu) / sigma;
                    (-0.5 * z * z).exp() / (u * sigma * (2.0 * PI).sqrt())
                }
            }
        };
        density / c
    }

    pub fn mean_variance(&self) -> (f64, f64) {
        let (mean, var) = match self.family {
            Family::Triangular { min, mode, max } => (
                (min + mode + max) / 3.0,
                (min * min + mode * mode + max * max - min * mode - min * max - mode * max) / 18.0,
            ),
            Family::Lognormal { mu, sigma } => {
                let s2 = sigma * sigma;
                (
                    (mu + s2 / 2.0).exp(),
                    (s2.exp() - 1.0) * (2.0 * mu + s2).exp(),
                )
            }
        };
        (self.scale * mean, self.scale * self.scale * var)
    }

    pub fn mean(&self) -> f64 {
        self.mean_variance().0
    }

    pub fn sd(&self) -> f64 {
        self.mean_variance().1.sqrt()
    }

    /// Support of the scaled variable; the upper end is infinite for lognormals.
    pub fn support(&self) -> (f64, f64) {
        match self.family {
            Family::Triangular { min, max, .. } => (self.scale * min, self.scale * max),
            Family::Lognormal { .. } => (0.0, f64::INFINITY),
        }
    }

    /// Lognormal scale moved into `mu`. Triangular terms are returned as is.
    pub fn folded(&self) -> DistTerm {
        match self.family {
            Family::Lognormal { mu, sigma } => DistTerm {
                family: Family::Lognormal {
                    mu: mu + self.scale.ln(),
                    sigma,
                },
                scale: 1.0,
            },
            Family::Triangular { .. } => *self,
        }
    }
}

fn triangular_inverse_cdf(min: f64, mode: f64, max: f64, u: f64) -> f64 {
    let width = max - min;
    let split = (mode - min) / width;
    if u < split {
        min + (u * width * (mode - min)).sqrt()
    } else {
        max - ((1.0 - u) * width * (max - mode)).sqrt()
    }
}

/// Lognormal parameters of `c * X` for `X ~ Lognormal(mu, sigma)`.
pub fn scale_lognormal(mu: f64, sigma: f64, c: f64) -> Result<(f64, f64), DistError> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(DistError::Domain(format!(
            "scale factor must be positive, got {c}"
        )));
    }
    if !(sigma > 0.0) {
        return Err(DistError::Domain(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    Ok((mu + c.ln(), sigma))
}

fn sample_mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Mean and (n-1) standard deviation of `ln(samples)`.
pub fn fit_lognormal_log_moments(samples: &[f64]) -> Result<(f64, f64), DistError> {
    if samples.len() < 2 {
        return Err(DistError::InsufficientData {
            needed: 2,
            got: samples.len(),
        });
    }
    if let Some(bad) = samples.iter().find(|&&v| !(v > 0.0)) {
        return Err(DistError::Domain(format!(
            "lognormal fit needs positive samples, got {bad}"
        )));
    }
    let logs: Vec<f64> = samples.iter().map(|v| v.ln()).collect();
    let (mu, sigma) = sample_mean_sd(&logs);
    if !(sigma > 0.0) {
        return Err(DistError::Degenerate(
            "all samples are equal; sigma would be zero".into(),
        ));
    }
    Ok((mu, sigma))
}

/// `(min, mode, max)` from the sample extremes. Without a hint, the mode is
/// the most frequent value after rounding to whole units (smallest on ties).
pub fn fit_triangular(
    samples: &[f64],
    mode_hint: Option<f64>,
) -> Result<(f64, f64, f64), DistError> {
    if samples.len() < 3 {
        return Err(DistError::InsufficientData {
            needed: 3,
            got: samples.len(),
        });
    }
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(min < max) {
        return Err(DistError::Degenerate(format!("all samples equal {min}")));
    }
    let mode = match mode_hint {
        Some(m) if (min..=max).contains(&m) => m,
        Some(m) => {
            return Err(DistError::Domain(format!(
                "mode hint {m} outside the sample range [{min}, {max}]"
            )))
        }
        None => {
            let mut rounded: Vec<i64> = samples.iter().map(|v| v.round() as i64).collect();
            rounded.sort_unstable();
            let mut best = (rounded[0], 0usize);
            let mut i = 0;
            while i < rounded.len() {
                let j = i + rounded[i..]
                    .iter()
                    .take_while(|&&v| v == rounded[i])
                    .count();
                if j - i > best.1 {
                    best = (rounded[i], j - i);
                }
                i = j;
            }
            (best.0 as f64).clamp(min, max)
        }
    };
    Ok((min, mode, max))
}

/// Quantile of sorted data by linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Tukey fences `Q1 - 1.5 IQR` and `Q3 + 1.5 IQR`.
pub fn tukey_fences(samples: &[f64]) -> Result<(f64, f64), DistError> {
    if samples.len() < 4 {
        return Err(DistError::InsufficientData {
            needed: 4,
            got: samples.len(),
        });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    Ok((q1 - 1.5 * iqr, q3 + 1.5 * iqr))
}

/// Samples inside the Tukey fences, in their original order. Fences are
/// recomputed on the retained values until nothing more is removed (or
/// fewer than four values remain), so the result is a fixed point.
pub fn remove_outliers(samples: &[f64]) -> Result<Vec<f64>, DistError> {
    tukey_fences(samples)?;
    let mut kept = samples.to_vec();
    while kept.len() >= 4 {
        let (lower, upper) = tukey_fences(&kept)?;
        let next: Vec<f64> = kept
            .iter()
            .copied()
            .filter(|v| (lower..=upper).contains(v))
            .collect();
        if next.len() == kept.len() {
            break;
        }
        kept = next;
    }
    Ok(kept)
}
