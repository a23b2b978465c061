use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldInterval {
    pub estimate: f64,
    pub se: f64,
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Two-sided standard normal critical value for `level`.
pub fn z_critical(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("confidence level {level} outside (0, 1)")));
    }
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(std.inverse_cdf(0.5 + level / 2.0))
}

impl WaldInterval {
    pub fn new(estimate: f64, se: f64, level: f64) -> Result<Self> {
        if !(se >= 0.0) {
            return Err(Error::invalid("standard error must be non-negative"));
        }
        let half = z_critical(level)? * se;
        Ok(Self {
            estimate,
            se,
            level,
            lower: estimate - half,
            upper: estimate + half,
        })
    }

    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}
