//! Three interchangeable evaluations of the discretized diagonal recurrence
//!
//! ```text
//! h_k = abar_k * h_{k-1} + bbar_k * x_k,    y_k = C_k . h_k + D * x_k
//! ```
//!
//! over `x[L, D]` with `N` states per channel and `h_0 = 0`.
//! [`scan_sequential`] is the reference; [`scan_parallel`] composes the affine
//! step maps with a prefix scan; [`scan_conv_mode`] unrolls a time-invariant
//! system into a causal convolution kernel.

use rayon::prelude::*;

use super::zoh::zoh_discretize;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A per-step quantity that is either constant over the sequence (`[K]`) or
/// given per step (`[L, K]`).
#[derive(Clone, Debug, PartialEq)]
pub enum StepParam {
    Shared(Tensor),
    PerStep(Tensor),
}

impl StepParam {
    fn width(&self) -> usize {
        match self {
            StepParam::Shared(t) => t.len(),
            StepParam::PerStep(t) => t.shape().last().copied().unwrap_or(0),
        }
    }

    fn check(&self, name: &str, len: usize, width: usize) -> Result<()> {
        let ok = match self {
            StepParam::Shared(t) => t.shape() == [width],
            StepParam::PerStep(t) => t.shape() == [len, width],
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "ssm params",
                format!("{name} has the wrong shape for L={len}, width={width}"),
            ))
        }
    }

    fn row(&self, step: usize) -> &[f64] {
        match self {
            StepParam::Shared(t) => t.data(),
            StepParam::PerStep(t) => {
                let w = t.dim(1);
                &t.data()[step * w..(step + 1) * w]
            }
        }
    }

    fn is_shared(&self) -> bool {
        matches!(self, StepParam::Shared(_))
    }
}

/// Continuous-time parameters of a diagonal SSM with `D` channels and `N`
/// states per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmParams {
    /// `[D, N]`
    pub a: Tensor,
    /// width `N`
    pub b: StepParam,
    /// width `N`
    pub c: StepParam,
    /// width `D`, positive
    pub delta: StepParam,
    /// `[D]`
    pub d: Tensor,
}

impl SsmParams {
    pub fn channels(&self) -> usize {
        self.a.dim(0)
    }

    pub fn states(&self) -> usize {
        self.a.dim(1)
    }

    /// True when any of B, C or delta varies along the sequence.
    pub fn is_selective(&self) -> bool {
        !(self.b.is_shared() && self.c.is_shared() && self.delta.is_shared())
    }

    /// ZOH-discretize for a sequence of length `len`.
    pub fn discretize(&self, len: usize) -> Result<Discretized> {
        if self.a.rank() != 2 {
            return Err(Error::invalid("ssm params", "A must be [D, N]"));
        }
        let (d, n) = (self.channels(), self.states());
        self.b.check("B", len, n)?;
        self.c.check("C", len, n)?;
        self.delta.check("delta", len, d)?;
        if self.d.shape() != [d] {
            return Err(Error::invalid("ssm params", "D must be [D]"));
        }
        assert_eq!(self.b.width(), n);
        let mut abar = vec![0.0; len * d * n];
        let mut bbar = vec![0.0; len * d * n];
        let mut c = Vec::with_capacity(len * n);
        for l in 0..len {
            let (brow, drow) = (self.b.row(l), self.delta.row(l));
            for ch in 0..d {
                for s in 0..n {
                    let (ab, bb) = zoh_discretize(self.a.data()[ch * n + s], brow[s], drow[ch])?;
                    abar[(l * d + ch) * n + s] = ab;
                    bbar[(l * d + ch) * n + s] = bb;
                }
            }
            c.extend_from_slice(self.c.row(l));
        }
        Ok(Discretized {
            len,
            channels: d,
            states: n,
            abar,
            bbar,
            c,
            skip: self.d.data().to_vec(),
            time_invariant: !self.is_selective(),
        })
    }
}

/// Discrete-time parameters for every step of one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Discretized {
    pub len: usize,
    pub channels: usize,
    pub states: usize,
    /// `[L, D, N]`
    pub abar: Vec<f64>,
    /// `[L, D, N]`
    pub bbar: Vec<f64>,
    /// `[L, N]`
    pub c: Vec<f64>,
    /// `[D]`
    pub skip: Vec<f64>,
    pub time_invariant: bool,
}

impl Discretized {
    /// A time-invariant system from per-channel `abar, bbar [D, N]`, output
    /// weights `c [N]` and skip `[D]`, repeated over `len` steps.
    pub fn constant(len: usize, abar: &Tensor, bbar: &Tensor, c: &[f64], skip: &[f64]) -> Self {
        let (d, n) = (abar.dim(0), abar.dim(1));
        assert_eq!(bbar.shape(), abar.shape());
        assert_eq!((c.len(), skip.len()), (n, d));
        Self {
            len,
            channels: d,
            states: n,
            abar: abar.data().repeat(len),
            bbar: bbar.data().repeat(len),
            c: c.repeat(len),
            skip: skip.to_vec(),
            time_invariant: true,
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != [self.len, self.channels] {
            return Err(Error::shape("scan", x.shape(), &[self.len, self.channels]));
        }
        Ok(())
    }
}

/// Step-by-step recurrence; the reference the other modes are checked
/// against.
pub fn scan_sequential(p: &Discretized, x: &Tensor) -> Result<Tensor> {
    p.check_input(x)?;
    let (d, n) = (p.channels, p.states);
    let mut h = vec![0.0; d * n];
    let mut y = vec![0.0; p.len * d];
    for l in 0..p.len {
        let c = &p.c[l * n..(l + 1) * n];
        for ch in 0..d {
            let xv = x.data()[l * d + ch];
            let mut acc = p.skip[ch] * xv;
            for s in 0..n {
                let i = ch * n + s;
                let k = l * d * n + i;
                h[i] = p.abar[k] * h[i] + p.bbar[k] * xv;
                acc += c[s] * h[i];
            }
            y[l * d + ch] = acc;
        }
    }
    Ok(Tensor::from_parts(vec![p.len, d], y))
}

/// Inclusive prefix composition of affine maps `h -> a[i] h + b[i]`, in place.
///
/// Work-efficient pairwise tree: adjacent pairs are composed, the half-length
/// problem is solved recursively, and the results are expanded back. The
/// tree shape depends only on the length, so results are deterministic.
pub fn prefix_affine(a: &mut [f64], b: &mut [f64]) {
    let len = a.len();
    assert_eq!(len, b.len());
    if len <= 1 {
        return;
    }
    let half = len / 2;
    let mut ra = Vec::with_capacity(half);
    let mut rb = Vec::with_capacity(half);
    for i in 0..half {
        let (a1, b1, a2, b2) = (a[2 * i], b[2 * i], a[2 * i + 1], b[2 * i + 1]);
        ra.push(a2 * a1);
        rb.push(a2 * b1 + b2);
    }
    prefix_affine(&mut ra, &mut rb);
    for i in (0..len).rev() {
        if i % 2 == 1 {
            a[i] = ra[i / 2];
            b[i] = rb[i / 2];
        } else if i > 0 {
            let (pa, pb) = (ra[i / 2 - 1], rb[i / 2 - 1]);
            let (ea, eb) = (a[i], b[i]);
            a[i] = ea * pa;
            b[i] = ea * pb + eb;
        }
    }
}

/// Same result as [`scan_sequential`] via a prefix scan per state lane, with
/// channels processed in parallel.
pub fn scan_parallel(p: &Discretized, x: &Tensor) -> Result<Tensor> {
    p.check_input(x)?;
    let (len, d, n) = (p.len, p.channels, p.states);
    let columns: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|ch| {
            let mut y: Vec<f64> = (0..len).map(|l| p.skip[ch] * x.data()[l * d + ch]).collect();
            let mut a = vec![0.0; len];
            let mut b = vec![0.0; len];
            for s in 0..n {
                for l in 0..len {
                    let k = (l * d + ch) * n + s;
                    a[l] = p.abar[k];
                    b[l] = p.bbar[k] * x.data()[l * d + ch];
                }
                // with h_0 = 0 the composed offset is the state itself
                prefix_affine(&mut a, &mut b);
                for l in 0..len {
                    y[l] += p.c[l * n + s] * b[l];
                }
            }
            y
        })
        .collect();
    let mut y = vec![0.0; len * d];
    for (ch, col) in columns.iter().enumerate() {
        for (l, v) in col.iter().enumerate() {
            y[l * d + ch] = *v;
        }
    }
    Ok(Tensor::from_parts(vec![len, d], y))
}

/// Convolution kernel `K[k, d] = sum_n C_n abar^k bbar` of a time-invariant
/// system, `[L, D]`.
pub fn conv_kernel(p: &Discretized) -> Result<Tensor> {
    if !p.time_invariant {
        return Err(Error::Mode(
            "convolution mode needs time-invariant B, C and delta".into(),
        ));
    }
    let (d, n) = (p.channels, p.states);
    let mut k = vec![0.0; p.len * d];
    for ch in 0..d {
        for s in 0..n {
            let (ab, bb) = (p.abar[ch * n + s], p.bbar[ch * n + s]);
            let mut pow = p.c[s] * bb;
            for step in 0..p.len {
                k[step * d + ch] += pow;
                pow *= ab;
            }
        }
    }
    Ok(Tensor::from_parts(vec![p.len, d], k))
}

/// Causal convolution of `x` with [`conv_kernel`] plus the skip term.
pub fn scan_conv_mode(p: &Discretized, x: &Tensor) -> Result<Tensor> {
    p.check_input(x)?;
    let k = conv_kernel(p)?;
    let d = p.channels;
    let mut y = vec![0.0; p.len * d];
    for l in 0..p.len {
        for ch in 0..d {
            let mut acc = p.skip[ch] * x.data()[l * d + ch];
            for j in 0..=l {
                acc += k.data()[j * d + ch] * x.data()[(l - j) * d + ch];
            }
            y[l * d + ch] = acc;
        }
    }
    Ok(Tensor::from_parts(vec![p.len, d], y))
}
