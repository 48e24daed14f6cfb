//! Wilson score intervals for a binomial proportion.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::StatsError;

/// Which Wilson formula produced an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiVariant {
    Uncorrected,
    #[serde(alias = "corrected")]
    ContinuityCorrected,
}

impl CiVariant {
    pub fn from_corrected(corrected: bool) -> Self {
        if corrected {
            CiVariant::ContinuityCorrected
        } else {
            CiVariant::Uncorrected
        }
    }

    pub fn is_corrected(self) -> bool {
        self == CiVariant::ContinuityCorrected
    }
}

impl fmt::Display for CiVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CiVariant::Uncorrected => "Wilson score",
            CiVariant::ContinuityCorrected => "Wilson score, continuity-corrected",
        })
    }
}

/// A two-sided interval with the settings that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub confidence: f64,
    pub variant: CiVariant,
}

/// Inverse of the standard normal CDF (Acklam's rational approximation,
/// relative error below 1.2e-9).
#[allow(clippy::excessive_precision)]
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - P_LOW {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Two-sided critical value for a confidence level, e.g. 1.959964 for 0.95.
pub fn z_for_confidence(confidence: f64) -> f64 {
    normal_quantile(1.0 - (1.0 - confidence) / 2.0)
}

/// Wilson score interval for `successes` out of `n`, clamped to [0, 1].
pub fn wilson_interval(successes: u64, n: u64, confidence: f64, corrected: bool) -> Result<Interval, StatsError> {
    if n == 0 {
        return Err(StatsError::Invalid("interval needs n >= 1".into()));
    }
    if successes > n {
        return Err(StatsError::Invalid(format!("successes {successes} exceed n {n}")));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(StatsError::Invalid(format!("confidence {confidence} outside (0, 1)")));
    }
    let z = z_for_confidence(confidence);
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let (lower, upper) = if corrected {
        let denom = 2.0 * (nf + z2);
        let lower = if successes == 0 {
            0.0
        } else {
            let root = (z2 - 2.0 - 1.0 / nf + 4.0 * p * (nf * (1.0 - p) + 1.0)).max(0.0).sqrt();
            (2.0 * nf * p + z2 - 1.0 - z * root) / denom
        };
        let upper = if successes == n {
            1.0
        } else {
            let root = (z2 + 2.0 - 1.0 / nf + 4.0 * p * (nf * (1.0 - p) - 1.0)).max(0.0).sqrt();
            (2.0 * nf * p + z2 + 1.0 + z * root) / denom
        };
        (lower, upper)
    } else {
        let center = (p + z2 / (2.0 * nf)) / (1.0 + z2 / nf);
        let half = z / (1.0 + z2 / nf) * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
        (center - half, center + half)
    };
    Ok(Interval {
        lower: lower.clamp(0.0, 1.0),
        upper: upper.clamp(0.0, 1.0),
        confidence,
        variant: CiVariant::from_corrected(corrected),
    })
}
