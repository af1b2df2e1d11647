//! Paired-contrast phantoms: one random geometry rendered twice with
//! different intensity transfer functions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::fastmath;
use crate::tensor::Tensor;

pub const MIN_SIZE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhantomSpec {
    pub seed: u64,
    pub size: usize,
    /// Shapes drawn inside the outer ellipse.
    pub num_shapes: usize,
    pub noise_sigma: f64,
    /// Exponent of the target transfer function `(1 - v)^gamma`.
    pub gamma: f64,
}

impl PhantomSpec {
    pub fn new(seed: u64, size: usize) -> Self {
        Self {
            seed,
            size,
            num_shapes: 6,
            noise_sigma: 0.01,
            gamma: 1.2,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Kind {
    Ellipse,
    Rect,
}

#[derive(Clone, Copy, Debug)]
struct Shape {
    kind: Kind,
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
    angle: f64,
    /// Tissue value in `[0, 1]`; the reference shows it directly.
    value: f64,
}

impl Shape {
    /// Fraction of the pixel at `(x, y)` covered, with a one-pixel ramp.
    fn coverage(&self, x: f64, y: f64) -> f64 {
        let (s, c) = fastmath::sin_cos::<fastmath::Plain>(self.angle);
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        // approximate signed distance in pixels
        let d = match self.kind {
            Kind::Ellipse => {
                let r = ((u / self.ax).powi(2) + (v / self.ay).powi(2)).sqrt();
                (r - 1.0) * self.ax.min(self.ay)
            }
            Kind::Rect => (u.abs() - self.ax).max(v.abs() - self.ay),
        };
        (0.5 - d).clamp(0.0, 1.0)
    }
}

/// Reference transfer: identity on tissue values.
pub fn reference_transfer(v: f64) -> f64 {
    v
}

/// Target transfer: inverted and gamma-warped.
pub fn target_transfer(v: f64, gamma: f64) -> f64 {
    (1.0 - v).max(0.0).powf(gamma)
}

fn layout(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Vec<Shape> {
    let n = spec.size as f64;
    let mid = (n - 1.0) / 2.0;
    let mut shapes = vec![Shape {
        kind: Kind::Ellipse,
        cx: mid + rng.random_range(-0.03..0.03) * n,
        cy: mid + rng.random_range(-0.03..0.03) * n,
        ax: rng.random_range(0.36..0.44) * n,
        ay: rng.random_range(0.30..0.42) * n,
        angle: rng.random_range(-0.3..0.3),
        value: rng.random_range(0.48..0.52),
    }];
    // tissue values on a grid so neighbouring regions stay distinguishable
    // in both contrasts
    const LEVELS: [f64; 4] = [0.05, 0.25, 0.75, 0.95];
    for _ in 0..spec.num_shapes {
        let kind = if rng.random_bool(0.6) { Kind::Ellipse } else { Kind::Rect };
        shapes.push(Shape {
            kind,
            cx: mid + rng.random_range(-0.22..0.22) * n,
            cy: mid + rng.random_range(-0.22..0.22) * n,
            ax: rng.random_range(0.05..0.16) * n,
            ay: rng.random_range(0.05..0.16) * n,
            angle: rng.random_range(0.0..std::f64::consts::PI),
            value: LEVELS[rng.random_range(0..LEVELS.len())],
        });
    }
    shapes
}

/// Render `(reference, target)`, each `[size, size]` in `[0, 1]`.
pub fn gen_phantom_pair(spec: &PhantomSpec) -> Result<(Tensor, Tensor)> {
    if spec.size < MIN_SIZE {
        return Err(Error::Config(format!(
            "phantom size must be at least {MIN_SIZE}, got {}",
            spec.size
        )));
    }
    if spec.num_shapes == 0 {
        return Err(Error::Config("phantom needs at least one shape".into()));
    }
    if !(spec.noise_sigma >= 0.0) || !spec.noise_sigma.is_finite() {
        return Err(Error::Config(format!("noise sigma must be >= 0, got {}", spec.noise_sigma)));
    }
    if !(spec.gamma > 0.0) {
        return Err(Error::Config(format!("gamma must be positive, got {}", spec.gamma)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let shapes = layout(spec, &mut rng);
    let n = spec.size;
    let mut reference = Tensor::zeros(&[n, n]);
    let mut target = Tensor::zeros(&[n, n]);
    for (i, (r, t)) in reference
        .data_mut()
        .iter_mut()
        .zip(target.data_mut().iter_mut())
        .enumerate()
    {
        let (x, y) = ((i % n) as f64, (i / n) as f64);
        // painter's algorithm; the background stays dark in both contrasts
        for s in &shapes {
            let a = s.coverage(x, y);
            if a > 0.0 {
                *r += a * (reference_transfer(s.value) - *r);
                *t += a * (target_transfer(s.value, spec.gamma) - *t);
            }
        }
    }
    for img in [&mut reference, &mut target] {
        let peak = img.max();
        if peak > 0.0 {
            img.data_mut().iter_mut().for_each(|v| *v /= peak);
        }
    }
    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
        for img in [&mut reference, &mut target] {
            for v in img.data_mut() {
                *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
    }
    Ok((reference, target))
}

/// Binary map of pixels whose central-difference gradient magnitude
/// exceeds `threshold`.
pub fn edge_map(img: &Tensor, threshold: f64) -> Vec<bool> {
    let (h, w) = (img.dim(0), img.dim(1));
    let at = |r: usize, c: usize| img.data()[r * w + c];
    let mut out = vec![false; h * w];
    for r in 1..h.saturating_sub(1) {
        for c in 1..w.saturating_sub(1) {
            let gx = (at(r, c + 1) - at(r, c - 1)) / 2.0;
            let gy = (at(r + 1, c) - at(r - 1, c)) / 2.0;
            out[r * w + c] = gx.hypot(gy) > threshold;
        }
    }
    out
}

pub fn iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
