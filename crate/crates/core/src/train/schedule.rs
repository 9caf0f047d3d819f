use std::f64::consts::PI;

use crate::{Error, Result};

/// Learning rate for epoch `e` of `epochs`: half a cosine from `lr0` down
/// to zero.
pub fn cosine_lr(e: usize, epochs: usize, lr0: f64) -> Result<f64> {
    if epochs == 0 || e > epochs {
        return Err(Error::Config(format!("epoch {e} outside [0, {epochs}]")));
    }
    if 2 * e == epochs {
        // cos(π/2) is not exactly zero in floating point
        return Ok(0.5 * lr0);
    }
    Ok(0.5 * (1.0 + (e as f64 * PI / epochs as f64).cos()) * lr0)
}
