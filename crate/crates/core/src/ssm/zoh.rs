//! Zero-order-hold discretization of a diagonal state-space system.

use crate::error::{Error, Result};

/// Below this `|dt * a|` the ZOH input gain switches to its series form.
pub const SERIES_CUTOFF: f64 = 1e-6;

/// `phi(z) = (e^z - 1) / z`, the ZOH input gain per unit step, with
/// `phi(0) = 1`.
#[inline]
pub fn phi(z: f64) -> f64 {
    if z.abs() < SERIES_CUTOFF {
        1.0 + z * (0.5 + z / 6.0)
    } else {
        z.exp_m1() / z
    }
}

/// `phi'(z) = (e^z - phi(z)) / z`.
#[inline]
pub fn dphi(z: f64) -> f64 {
    if z.abs() < 0.05 {
        // sum_{k>=1} k z^(k-1) / (k+1)!
        const C: [f64; 8] = [
            1.0 / 2.0,
            2.0 / 6.0,
            3.0 / 24.0,
            4.0 / 120.0,
            5.0 / 720.0,
            6.0 / 5040.0,
            7.0 / 40320.0,
            8.0 / 362880.0,
        ];
        C.iter().rev().fold(0.0, |acc, &c| acc * z + c)
    } else {
        (z * z.exp() - z.exp_m1()) / (z * z)
    }
}

/// Discretize one diagonal entry: `(abar, bbar) = (e^(dt a), phi(dt a) dt b)`.
pub fn zoh_discretize(a: f64, b: f64, dt: f64) -> Result<(f64, f64)> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("step size must be positive, got {dt}")));
    }
    let z = dt * a;
    Ok((z.exp(), phi(z) * dt * b))
}
