//! Image-quality metrics: PSNR, SSIM and NMSE, plus mean/std summaries.
//!
//! The data range defaults to `max - min` of the ground truth.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// PSNR values are capped here when tabulated.
pub const PSNR_CAP: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_pair(op: &'static str, x_hat: &Tensor, x: &Tensor) -> Result<()> {
    if x_hat.shape() != x.shape() {
        return Err(Error::shape(op, x_hat.shape(), x.shape()));
    }
    if x.is_empty() {
        return Err(Error::invalid(op, "empty image"));
    }
    Ok(())
}

/// `max(x) - min(x)`.
pub fn data_range(x: &Tensor) -> f64 {
    x.max() - x.min()
}

fn resolve_range(op: &'static str, x: &Tensor, range: Option<f64>) -> Result<f64> {
    let r = range.unwrap_or_else(|| data_range(x));
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Domain(format!("{op}: data range must be positive, got {r}")));
    }
    Ok(r)
}

pub fn mse(x_hat: &Tensor, x: &Tensor) -> Result<f64> {
    check_pair("mse", x_hat, x)?;
    let s: f64 = x_hat.data().iter().zip(x.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / x.len() as f64)
}

/// `10 log10(range^2 / MSE)`; `+inf` for identical images.
pub fn psnr(x_hat: &Tensor, x: &Tensor, range: Option<f64>) -> Result<f64> {
    let r = resolve_range("psnr", x, range)?;
    let m = mse(x_hat, x)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (r * r / m).log10()
    })
}

/// `||x_hat - x||^2 / ||x||^2`.
pub fn nmse(x_hat: &Tensor, x: &Tensor) -> Result<f64> {
    check_pair("nmse", x_hat, x)?;
    let den = x.norm_sq();
    if den == 0.0 {
        return Err(Error::Domain("nmse: ground truth is identically zero".into()));
    }
    let num: f64 = x_hat.data().iter().zip(x.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(num / den)
}

/// Normalized 1D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let t: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = t.iter().sum();
    t.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of an `h x w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = taps.iter().enumerate().map(|(j, t)| t * x[r * w + c + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps.iter().enumerate().map(|(i, t)| t * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Mean local SSIM over every position where the 11x11 Gaussian window fits.
/// Inputs are `[..., H, W]`; leading planes are averaged.
pub fn ssim(x_hat: &Tensor, x: &Tensor, range: Option<f64>) -> Result<f64> {
    check_pair("ssim", x_hat, x)?;
    let s = x.shape();
    if s.len() < 2 {
        return Err(Error::invalid("ssim", format!("expected [..., H, W], got {s:?}")));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(
            "ssim",
            format!("{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let r = resolve_range("ssim", x, range)?;
    let (c1, c2) = ((SSIM_K1 * r).powi(2), (SSIM_K2 * r).powi(2));
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let plane = h * w;
    let mut total = 0.0;
    let mut count = 0usize;
    for (a, b) in x_hat.data().chunks_exact(plane).zip(x.data().chunks_exact(plane)) {
        let f = |v: &[f64]| filter_valid(v, h, w, &taps);
        let sq = |v: &[f64]| v.iter().map(|e| e * e).collect::<Vec<_>>();
        let ab: Vec<f64> = a.iter().zip(b).map(|(p, q)| p * q).collect();
        let (ma, mb) = (f(a), f(b));
        let (saa, sbb, sab) = (f(&sq(a)), f(&sq(b)), f(&ab));
        for i in 0..ma.len() {
            let (mx, my) = (ma[i], mb[i]);
            let vx = saa[i] - mx * mx;
            let vy = sbb[i] - my * my;
            let cxy = sab[i] - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// The three metrics for one reconstruction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub psnr: f64,
    pub ssim: f64,
    pub nmse: f64,
}

impl Metrics {
    /// Ground truth `x` sets the data range.
    pub fn compute(x_hat: &Tensor, x: &Tensor) -> Result<Self> {
        Ok(Self {
            psnr: psnr(x_hat, x, None)?,
            ssim: ssim(x_hat, x, None)?,
            nmse: nmse(x_hat, x)?,
        })
    }
}

/// Sample mean and (n - 1)-normalized standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Per-sample metrics over a set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub samples: Vec<Metrics>,
}

impl MetricReport {
    pub fn push(&mut self, m: Metrics) {
        self.samples.push(m);
    }

    /// PSNR is capped at [`PSNR_CAP`] before averaging.
    pub fn psnr(&self) -> (f64, f64) {
        mean_std(&self.samples.iter().map(|m| m.psnr.min(PSNR_CAP)).collect::<Vec<_>>())
    }

    pub fn ssim(&self) -> (f64, f64) {
        mean_std(&self.samples.iter().map(|m| m.ssim).collect::<Vec<_>>())
    }

    pub fn nmse(&self) -> (f64, f64) {
        mean_std(&self.samples.iter().map(|m| m.nmse).collect::<Vec<_>>())
    }

    /// Means of the three metrics.
    pub fn mean(&self) -> Metrics {
        Metrics {
            psnr: self.psnr().0,
            ssim: self.ssim().0,
            nmse: self.nmse().0,
        }
    }
}

/// Tab-separated `mean±std` table, one row per labelled report.
pub fn report_table(rows: &[(&str, &MetricReport)]) -> String {
    let mut out = String::from("method\tpsnr\tssim\tnmse\n");
    for (label, r) in rows {
        let (p, s, n) = (r.psnr(), r.ssim(), r.nmse());
        out.push_str(&format!(
            "{label}\t{:.3}±{:.3}\t{:.4}±{:.4}\t{:.5}±{:.5}\n",
            p.0, p.1, s.0, s.1, n.0, n.1
        ));
    }
    out
}
