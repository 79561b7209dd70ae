//! Reproduction angular error and its summary statistics.
//!
//! The reproduction error between a ground-truth illuminant `t` and an
//! estimate `p` is the angle between the element-wise quotient `p / t` and
//! the achromatic axis `(1, 1, 1)`. It is invariant to positive scaling of
//! either argument and is *not* symmetric in `t` and `p`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An illuminant color in linear sensor RGB, meaningful up to positive scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chromaticity {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl Chromaticity {
    pub fn new(r: f64, g: f64, b: f64) -> Result<Self> {
        let ok = [r, g, b].iter().all(|v| v.is_finite() && *v >= 0.0);
        if !ok || r + g + b <= 0.0 {
            return Err(Error::InvalidChromaticity(r, g, b));
        }
        Ok(Self { r, g, b })
    }

    pub fn from_array(v: [f64; 3]) -> Result<Self> {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.r, self.g, self.b]
    }

    /// Rescales to unit component sum.
    pub fn canonical(self) -> Self {
        let s = self.r + self.g + self.b;
        Self {
            r: self.r / s,
            g: self.g / s,
            b: self.b / s,
        }
    }

    pub fn is_strictly_positive(self) -> bool {
        self.r > 0.0 && self.g > 0.0 && self.b > 0.0
    }

    /// Element-wise product with a per-channel gain.
    pub fn scaled(self, gain: [f64; 3]) -> Self {
        Self {
            r: self.r * gain[0],
            g: self.g * gain[1],
            b: self.b * gain[2],
        }
    }
}

/// Reproduction angular error in degrees.
///
/// The arccos form loses about eight digits near zero, so the angle is taken
/// as `atan2(|u x 1|, u . 1)` with `u = p / t`; the cross-product norm comes
/// from the Lagrange identity `3|u|^2 - (u . 1)^2 = sum_{i<j} (u_i - u_j)^2`,
/// which is exactly zero when `u` is achromatic.
pub fn reproduction_error(t: &Chromaticity, p: &Chromaticity) -> Result<f64> {
    reproduction_error_raw(t.to_array(), p.to_array())
}

pub fn reproduction_error_raw(t: [f64; 3], p: [f64; 3]) -> Result<f64> {
    if t.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::DegenerateGroundTruth(t));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidChromaticity(p[0], p[1], p[2]));
    }
    if p.iter().all(|v| *v == 0.0) {
        return Err(Error::DegenerateEstimate);
    }
    let u = [p[0] / t[0], p[1] / t[1], p[2] / t[2]];
    // Scale out the magnitude so huge or tiny ratios cannot overflow.
    let m = u[0].max(u[1]).max(u[2]);
    let u = [u[0] / m, u[1] / m, u[2] / m];
    let cross = ((u[0] - u[1]).powi(2) + (u[1] - u[2]).powi(2) + (u[0] - u[2]).powi(2)).sqrt();
    let dot = u[0] + u[1] + u[2];
    Ok(cross.atan2(dot).to_degrees())
}

/// Summary of a list of angular errors, all in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub median: f64,
    pub trimean: f64,
    pub best25_mean: f64,
    pub worst25_mean: f64,
    pub count: usize,
}

/// Mean, median, trimean and quartile means.
///
/// For even counts the median is the lower of the two middle elements. The
/// quartiles used by the trimean follow the same rule: the first quartile is
/// `sorted[(n-1)/4]` and the third is its mirror `sorted[n-1-(n-1)/4]`.
/// The best/worst quartile means average the `ceil(n/4)` smallest/largest
/// values.
pub fn aggregate(errors: &[f64]) -> Result<ErrorStats> {
    if errors.is_empty() {
        return Err(Error::EmptyInput);
    }
    if errors.iter().any(|e| !e.is_finite() || *e < 0.0) {
        return Err(Error::NonFiniteInput);
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let median = sorted[(n - 1) / 2];
    let q = (n - 1) / 4;
    let trimean = (sorted[q] + 2.0 * median + sorted[n - 1 - q]) / 4.0;
    let k = n.div_ceil(4);
    let best25_mean = sorted[..k].iter().sum::<f64>() / k as f64;
    let worst25_mean = sorted[n - k..].iter().sum::<f64>() / k as f64;
    Ok(ErrorStats {
        mean,
        median,
        trimean,
        best25_mean,
        worst25_mean,
        count: n,
    })
}
