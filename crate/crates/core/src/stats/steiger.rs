use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

use super::fisher_z;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteigerResult {
    pub z: f64,
    pub p: f64,
}

/// Steiger's Z for H0: rho12 = rho13, where variables 2 and 3 share
/// variable 1 and correlate with each other at `r23`.
///
/// Uses the pooled r̄ = (r12 + r13)/2 in the asymptotic covariance of the
/// two Fisher-transformed correlations.
pub fn steiger_z(r12: f64, r13: f64, r23: f64, n: usize) -> Result<SteigerResult> {
    if n < 4 {
        return Err(Error::Domain(format!("Steiger test needs n >= 4, got {n}")));
    }
    for r in [r12, r13, r23] {
        if !(r.abs() < 1.0) {
            return Err(Error::Domain(format!("correlation {r} outside (-1, 1)")));
        }
    }
    let det = 1.0 - r12 * r12 - r13 * r13 - r23 * r23 + 2.0 * r12 * r13 * r23;
    if det < -1e-12 {
        return Err(Error::InvalidCorrelationMatrix { det });
    }
    let rbar = 0.5 * (r12 + r13);
    let rbar2 = rbar * rbar;
    let psi = r23 * (1.0 - 2.0 * rbar2) - 0.5 * rbar2 * (1.0 - 2.0 * rbar2 - r23 * r23);
    let s = psi / ((1.0 - rbar2) * (1.0 - rbar2));
    let dz = fisher_z(r12)? - fisher_z(r13)?;
    let z = dz * ((n as f64 - 3.0) / (2.0 - 2.0 * s)).sqrt();
    let p = (2.0 * Normal::standard().sf(z.abs())).min(1.0);
    Ok(SteigerResult { z, p })
}
