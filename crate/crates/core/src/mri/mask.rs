//! 1D Cartesian undersampling masks: a fully sampled low-frequency block
//! around DC plus uniformly drawn phase-encode columns.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Conventional center fraction for an acceleration factor.
pub fn default_center_fraction(acceleration: f64) -> f64 {
    if acceleration >= 8.0 {
        0.04
    } else {
        0.08
    }
}

/// Column mask in DC-centered order: column `width / 2` is DC.
#[derive(Clone, Debug, PartialEq)]
pub struct CartesianMask {
    pub width: usize,
    pub acceleration: f64,
    pub center_fraction: f64,
    pub seed: u64,
    pub columns: Vec<bool>,
}

impl CartesianMask {
    pub fn generate(width: usize, acceleration: f64, center_fraction: f64, seed: u64) -> Result<Self> {
        if width == 0 {
            return Err(Error::Config("mask width must be positive".into()));
        }
        if !(acceleration >= 1.0) || !acceleration.is_finite() {
            return Err(Error::Config(format!("acceleration must be >= 1, got {acceleration}")));
        }
        if !(0.0..=1.0).contains(&center_fraction) {
            return Err(Error::Config(format!(
                "center fraction must lie in [0, 1], got {center_fraction}"
            )));
        }
        if 1.0 / acceleration < center_fraction {
            return Err(Error::Config(format!(
                "center fraction {center_fraction} exceeds the sampling budget 1/{acceleration}"
            )));
        }
        let center = center_block(width, center_fraction);
        let budget = sampled_columns(width, acceleration);
        let ncenter = center.len();
        if budget < ncenter {
            return Err(Error::Config(format!(
                "{ncenter} center columns exceed the budget of {budget} for width {width}"
            )));
        }
        let mut columns = vec![false; width];
        for c in center.clone() {
            columns[c] = true;
        }
        let outside: Vec<usize> = (0..width).filter(|c| !center.contains(c)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in rand::seq::index::sample(&mut rng, outside.len(), budget - ncenter) {
            columns[outside[i]] = true;
        }
        Ok(Self {
            width,
            acceleration,
            center_fraction,
            seed,
            columns,
        })
    }

    pub fn center(&self) -> std::ops::Range<usize> {
        center_block(self.width, self.center_fraction)
    }

    pub fn count(&self) -> usize {
        self.columns.iter().filter(|&&c| c).count()
    }

    /// 0/1 values, DC-centered.
    pub fn values(&self) -> Vec<f64> {
        self.columns.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect()
    }

    /// Mask with explicit columns; the acceleration is `width / count`.
    pub fn from_columns(columns: Vec<bool>) -> Result<Self> {
        let count = columns.iter().filter(|&&c| c).count();
        if count == 0 {
            return Err(Error::Config("mask samples no columns".into()));
        }
        Ok(Self {
            width: columns.len(),
            acceleration: columns.len() as f64 / count as f64,
            center_fraction: 0.0,
            seed: 0,
            columns,
        })
    }

    /// Fully sampled mask of the given width.
    pub fn full(width: usize) -> Self {
        Self {
            width,
            acceleration: 1.0,
            center_fraction: 1.0,
            seed: 0,
            columns: vec![true; width],
        }
    }
}

/// `round(width / acceleration)`.
pub fn sampled_columns(width: usize, acceleration: f64) -> usize {
    (width as f64 / acceleration).round() as usize
}

/// `round(center_fraction * width)` columns around index `width / 2`.
pub fn center_block(width: usize, center_fraction: f64) -> std::ops::Range<usize> {
    let n = ((center_fraction * width as f64).round() as usize).min(width);
    let start = (width / 2).saturating_sub(n / 2).min(width - n);
    start..start + n
}
