use super::expect_rank;
use crate::autodiff::{RunningStats, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Weight of the current batch in the running-statistics moving average.
pub const BN_MOMENTUM: f64 = 0.1;

/// Normalize the last axis of `x[..., D]` then apply `gamma * xhat + beta`.
pub fn layer_norm<'t>(x: Var<'t>, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Result<Var<'t>> {
    let xs = x.shape();
    let d = *xs.last().ok_or_else(|| Error::invalid("layer_norm", "scalar input"))?;
    for p in [gamma, beta] {
        if p.shape() != [d] {
            return Err(Error::shape("layer_norm", &xs, &p.shape()));
        }
    }
    let (xv, gv, bv) = (x.value(), gamma.value(), beta.value());
    let rows = xv.len() / d.max(1);
    let mut xhat = vec![0.0; xv.len()];
    let mut rstd = vec![0.0; rows];
    let mut out = vec![0.0; xv.len()];
    for r in 0..rows {
        let row = &xv.data()[r * d..(r + 1) * d];
        let mu = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + eps).sqrt();
        rstd[r] = rs;
        for i in 0..d {
            let h = (row[i] - mu) * rs;
            xhat[r * d + i] = h;
            out[r * d + i] = gv.data()[i] * h + bv.data()[i];
        }
    }
    let y = Tensor::from_parts(xs.clone(), out);
    Ok(x.tape().push_op(y, &[x, gamma, beta], move |g, needs| {
        let g = g.data();
        let mut gx = needs[0].then(|| vec![0.0; g.len()]);
        let mut gg = vec![0.0; d];
        let mut gb = vec![0.0; d];
        let mut dxhat = vec![0.0; d];
        for r in 0..rows {
            let gr = &g[r * d..(r + 1) * d];
            let hr = &xhat[r * d..(r + 1) * d];
            for i in 0..d {
                gg[i] += gr[i] * hr[i];
                gb[i] += gr[i];
            }
            if let Some(gx) = &mut gx {
                let mut m1 = 0.0;
                let mut m2 = 0.0;
                for i in 0..d {
                    dxhat[i] = gr[i] * gv.data()[i];
                    m1 += dxhat[i];
                    m2 += dxhat[i] * hr[i];
                }
                m1 /= d as f64;
                m2 /= d as f64;
                for i in 0..d {
                    gx[r * d + i] = rstd[r] * (dxhat[i] - m1 - hr[i] * m2);
                }
            }
        }
        vec![
            gx.map(|v| Tensor::from_parts(xs.clone(), v)),
            needs[1].then(|| Tensor::from_parts(vec![d], gg)),
            needs[2].then(|| Tensor::from_parts(vec![d], gb)),
        ]
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Batch statistics; running statistics follow an exponential moving
    /// average with [`BN_MOMENTUM`].
    Train,
    /// Batch statistics; running statistics become the cumulative average
    /// over every batch seen since they were reset.
    Calibrate,
    /// Running statistics.
    Eval,
}

/// Per-channel normalization of `x[B, C, ...]`:
/// `y = omega * (x - mu) / sqrt(var + eps) + beta`.
///
/// Batch variance is biased; the running variance accumulates the unbiased
/// estimate.
pub fn batch_norm<'t>(
    x: Var<'t>,
    omega: Var<'t>,
    beta: Var<'t>,
    stats: &mut RunningStats,
    mode: BnMode,
    eps: f64,
) -> Result<Var<'t>> {
    let xs = x.shape();
    if xs.len() < 2 {
        return Err(Error::invalid("batch_norm", format!("expected [B, C, ...], got {xs:?}")));
    }
    let (b, c) = (xs[0], xs[1]);
    let inner: usize = xs[2..].iter().product();
    for p in [omega, beta] {
        if p.shape() != [c] {
            return Err(Error::shape("batch_norm", &xs, &p.shape()));
        }
    }
    if stats.channels() != c {
        return Err(Error::shape("batch_norm running stats", &xs, &[stats.channels()]));
    }
    let n = b * inner;
    let xv = x.value();
    let idx = move |bi: usize, ci: usize| (bi * c + ci) * inner;

    let (mean, var) = match mode {
        BnMode::Eval => {
            if !stats.is_initialized() {
                return Err(Error::Uninitialized("batch_norm".into()));
            }
            (stats.mean.clone(), stats.var.clone())
        }
        BnMode::Train | BnMode::Calibrate => {
            if n < 2 {
                return Err(Error::invalid(
                    "batch_norm",
                    format!("training needs at least 2 values per channel, got {n}"),
                ));
            }
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ci in 0..c {
                let mut s = 0.0;
                for bi in 0..b {
                    s += xv.data()[idx(bi, ci)..idx(bi, ci) + inner].iter().sum::<f64>();
                }
                let mu = s / n as f64;
                let mut ss = 0.0;
                for bi in 0..b {
                    ss += xv.data()[idx(bi, ci)..idx(bi, ci) + inner]
                        .iter()
                        .map(|v| (v - mu) * (v - mu))
                        .sum::<f64>();
                }
                mean[ci] = mu;
                var[ci] = ss / n as f64;
            }
            let m = match mode {
                BnMode::Train => BN_MOMENTUM,
                _ => 1.0 / (stats.tracked + 1) as f64,
            };
            let unbias = n as f64 / (n - 1) as f64;
            for ci in 0..c {
                stats.mean[ci] = (1.0 - m) * stats.mean[ci] + m * mean[ci];
                stats.var[ci] = (1.0 - m) * stats.var[ci] + m * var[ci] * unbias;
            }
            stats.tracked += 1;
            (mean, var)
        }
    };

    let rstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let (ov, bv) = (omega.value(), beta.value());
    let mut xhat = vec![0.0; xv.len()];
    let mut out = vec![0.0; xv.len()];
    for bi in 0..b {
        for ci in 0..c {
            let o = idx(bi, ci);
            for i in o..o + inner {
                let h = (xv.data()[i] - mean[ci]) * rstd[ci];
                xhat[i] = h;
                out[i] = ov.data()[ci] * h + bv.data()[ci];
            }
        }
    }
    let y = Tensor::from_parts(xs.clone(), out);
    let batch_stats = mode != BnMode::Eval;
    Ok(x.tape().push_op(y, &[x, omega, beta], move |g, needs| {
        let g = g.data();
        let mut go = vec![0.0; c];
        let mut gb = vec![0.0; c];
        for bi in 0..b {
            for ci in 0..c {
                let o = idx(bi, ci);
                for i in o..o + inner {
                    go[ci] += g[i] * xhat[i];
                    gb[ci] += g[i];
                }
            }
        }
        let gx = needs[0].then(|| {
            let mut d = vec![0.0; g.len()];
            for bi in 0..b {
                for ci in 0..c {
                    let k = ov.data()[ci] * rstd[ci];
                    let o = idx(bi, ci);
                    for i in o..o + inner {
                        d[i] = if batch_stats {
                            k * (g[i] - gb[ci] / n as f64 - xhat[i] * go[ci] / n as f64)
                        } else {
                            k * g[i]
                        };
                    }
                }
            }
            Tensor::from_parts(xs.clone(), d)
        });
        vec![
            gx,
            needs[1].then(|| Tensor::from_parts(vec![c], go)),
            needs[2].then(|| Tensor::from_parts(vec![c], gb)),
        ]
    }))
}

/// Numerically stable softmax along `axis`.
pub fn softmax(x: Var<'_>, axis: usize) -> Result<Var<'_>> {
    let xs = x.shape();
    if axis >= xs.len() {
        return Err(Error::invalid("softmax", format!("axis {axis} out of range for {xs:?}")));
    }
    let n = xs[axis];
    let inner: usize = xs[axis + 1..].iter().product();
    let outer: usize = xs[..axis].iter().product();
    let xv = x.value();
    let mut out = vec![0.0; xv.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            let m = (0..n).map(|k| xv.data()[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for k in 0..n {
                let e = (xv.data()[at(k)] - m).exp();
                out[at(k)] = e;
                z += e;
            }
            for k in 0..n {
                out[at(k)] /= z;
            }
        }
    }
    let y = std::rc::Rc::new(Tensor::from_parts(xs.clone(), out));
    let yk = y.clone();
    Ok(x.tape().push_op_rc(y, &[x], move |g, _| {
        let (g, y) = (g.data(), yk.data());
        let mut d = vec![0.0; g.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let dot: f64 = (0..n).map(|k| g[at(k)] * y[at(k)]).sum();
                for k in 0..n {
                    d[at(k)] = y[at(k)] * (g[at(k)] - dot);
                }
            }
        }
        vec![Some(Tensor::from_parts(xs.clone(), d))]
    }))
}

/// Spatial mean of `x[B, C, H, W]`, giving `[B, C]`.
pub fn global_avg_pool(x: Var<'_>) -> Result<Var<'_>> {
    let xs = x.shape();
    expect_rank("global_avg_pool", &xs, 4)?;
    let (b, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
    if hw == 0 {
        return Err(Error::invalid("global_avg_pool", "empty spatial extent"));
    }
    let xv = x.value();
    let out: Vec<f64> = xv
        .data()
        .chunks_exact(hw)
        .map(|p| p.iter().sum::<f64>() / hw as f64)
        .collect();
    let y = Tensor::from_parts(vec![b, c], out);
    Ok(x.tape().push_op(y, &[x], move |g, _| {
        let d: Vec<f64> = g
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v / hw as f64, hw))
            .collect();
        vec![Some(Tensor::from_parts(xs.clone(), d))]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::gradcheck::grad_check;
    use crate::ops::{mul, sum};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn weighted<'t>(y: Var<'t>, seed: u64) -> Var<'t> {
        let w = rand_tensor(&y.shape(), seed);
        sum(mul(y, y.tape().constant(w)).unwrap())
    }

    #[test]
    fn layer_norm_examples() {
        let tape = Tape::new();
        let ones = tape.constant(Tensor::ones(&[2]));
        let zeros = tape.constant(Tensor::zeros(&[2]));
        let y = layer_norm(tape.constant(t(&[1, 2], &[1.0, -1.0])), ones, zeros, 0.0).unwrap();
        assert_eq!(y.value().data(), &[1.0, -1.0]);

        let g = tape.constant(t(&[2], &[2.0, 2.0]));
        let b = tape.constant(t(&[2], &[3.0, 3.0]));
        let y = layer_norm(tape.constant(t(&[1, 2], &[1.0, -1.0])), g, b, 0.0).unwrap();
        assert_eq!(y.value().data(), &[5.0, 1.0]);

        let y = layer_norm(tape.constant(Tensor::full(&[1, 2], 4.0)), ones, b, 1e-5).unwrap();
        assert_eq!(y.value().data(), &[3.0, 3.0]);
    }

    #[test]
    fn layer_norm_rows_are_centred() {
        let tape = Tape::new();
        let x = tape.constant(rand_tensor(&[5, 7], 3).map(|v| 10.0 * v + 4.0));
        let y = layer_norm(
            x,
            tape.constant(Tensor::ones(&[7])),
            tape.constant(Tensor::zeros(&[7])),
            1e-5,
        )
        .unwrap();
        for row in y.value().data().chunks(7) {
            assert!(row.iter().sum::<f64>().abs() / 7.0 < 1e-10);
        }
    }

    #[test]
    fn layer_norm_gradients() {
        let x = rand_tensor(&[3, 6], 1);
        let gamma = rand_tensor(&[6], 2);
        let beta = rand_tensor(&[6], 3);
        let (gc, bc) = (gamma.clone(), beta.clone());
        let e = grad_check(
            |v| {
                let t = v.tape();
                weighted(layer_norm(v, t.constant(gc.clone()), t.constant(bc.clone()), 1e-5).unwrap(), 9)
            },
            &x,
            1e-6,
        );
        assert!(e < 1e-5, "{e}");
        let (xc, bc) = (x.clone(), beta.clone());
        let e = grad_check(
            |v| {
                let t = v.tape();
                weighted(layer_norm(t.constant(xc.clone()), v, t.constant(bc.clone()), 1e-5).unwrap(), 9)
            },
            &gamma,
            1e-6,
        );
        assert!(e < 1e-5, "{e}");
        let (xc, gc) = (x.clone(), gamma.clone());
        let e = grad_check(
            |v| {
                let t = v.tape();
                weighted(layer_norm(t.constant(xc.clone()), t.constant(gc.clone()), v, 1e-5).unwrap(), 9)
            },
            &beta,
            1e-6,
        );
        assert!(e < 1e-5, "{e}");
    }

    #[test]
    fn batch_norm_examples() {
        let tape = Tape::new();
        let mut stats = RunningStats::uninitialized(1);
        let x = tape.constant(t(&[2, 1], &[0.0, 2.0]));
        let y = batch_norm(
            x,
            tape.constant(t(&[1], &[3.0])),
            tape.constant(t(&[1], &[1.0])),
            &mut stats,
            BnMode::Train,
            0.0,
        )
        .unwrap();
        assert_eq!(y.value().data(), &[-2.0, 4.0]);
        // running stats: 0.9 * 0 + 0.1 * 1, 0.9 * 1 + 0.1 * 2 (unbiased)
        assert!((stats.mean[0] - 0.1).abs() < 1e-15);
        assert!((stats.var[0] - 1.1).abs() < 1e-15);
        assert_eq!(stats.tracked, 1);

        let mut stats = RunningStats::uninitialized(2);
        let x = tape.constant(rand_tensor(&[2, 2, 3, 3], 4));
        let y = batch_norm(
            x,
            tape.constant(Tensor::zeros(&[2])),
            tape.constant(t(&[2], &[0.5, -1.5])),
            &mut stats,
            BnMode::Train,
            1e-5,
        )
        .unwrap();
        for (i, v) in y.value().data().iter().enumerate() {
            assert_eq!(*v, if (i / 9) % 2 == 0 { 0.5 } else { -1.5 });
        }
    }

    #[test]
    fn batch_norm_standardized_batch_is_unchanged() {
        let tape = Tape::new();
        let mut stats = RunningStats::uninitialized(1);
        let x = t(&[4, 1], &[1.0, -1.0, 1.0, -1.0]);
        let y = batch_norm(
            tape.constant(x.clone()),
            tape.constant(Tensor::ones(&[1])),
            tape.constant(Tensor::zeros(&[1])),
            &mut stats,
            BnMode::Train,
            0.0,
        )
        .unwrap();
        assert_eq!(*y.value(), x);
    }

    #[test]
    fn eval_before_training_is_an_error() {
        let tape = Tape::new();
        let mut stats = RunningStats::uninitialized(2);
        let r = batch_norm(
            tape.constant(Tensor::zeros(&[1, 2, 2, 2])),
            tape.constant(Tensor::ones(&[2])),
            tape.constant(Tensor::zeros(&[2])),
            &mut stats,
            BnMode::Eval,
            1e-5,
        );
        assert!(matches!(r, Err(Error::Uninitialized(_))));
    }

    #[test]
    fn calibrate_mode_averages_batches() {
        let tape = Tape::new();
        let mut stats = RunningStats::uninitialized(1);
        for data in [[0.0, 2.0], [4.0, 6.0]] {
            batch_norm(
                tape.constant(t(&[2, 1], &data)),
                tape.constant(Tensor::ones(&[1])),
                tape.constant(Tensor::zeros(&[1])),
                &mut stats,
                BnMode::Calibrate,
                1e-5,
            )
            .unwrap();
        }
        assert_eq!(stats.mean, vec![3.0]);
        assert_eq!(stats.var, vec![2.0]);
    }

    #[test]
    fn batch_norm_gradients_in_both_modes() {
        let x = rand_tensor(&[2, 3, 2, 2], 5);
        let omega = rand_tensor(&[3], 6);
        let beta = rand_tensor(&[3], 7);
        let mut warm = RunningStats::uninitialized(3);
        warm.mean = vec![0.1, -0.2, 0.3];
        warm.var = vec![0.5, 1.5, 2.0];
        warm.tracked = 1;
        for mode in [BnMode::Train, BnMode::Eval] {
            for (which, at) in [&x, &omega, &beta].into_iter().enumerate() {
                let e = grad_check(
                    |v| {
                        let t = v.tape();
                        let mut s = warm.clone();
                        let mut args = [x.clone(), omega.clone(), beta.clone()].map(|a| t.constant(a));
                        args[which] = v;
                        weighted(batch_norm(args[0], args[1], args[2], &mut s, mode, 1e-5).unwrap(), 11)
                    },
                    at,
                    1e-6,
                );
                assert!(e < 1e-5, "{mode:?} input {which}: {e}");
            }
        }
    }

    #[test]
    fn softmax_examples() {
        let tape = Tape::new();
        let y = softmax(tape.constant(t(&[2], &[0.0, 0.0])), 0).unwrap();
        assert_eq!(y.value().data(), &[0.5, 0.5]);
        let y = softmax(tape.constant(Tensor::full(&[3], 123.4)), 0).unwrap();
        for v in y.value().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let logs = [1.0f64.ln(), 2.0f64.ln(), 3.0f64.ln()];
        let y = softmax(tape.constant(t(&[3], &logs)), 0).unwrap();
        for (v, want) in y.value().data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((v - want).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_gradient_on_inner_axis() {
        let x = rand_tensor(&[2, 3, 4], 8);
        let e = grad_check(|v| weighted(softmax(v, 1).unwrap(), 12), &x, 1e-6);
        assert!(e < 1e-5, "{e}");
    }

    #[test]
    fn global_avg_pool_examples_and_gradient() {
        let tape = Tape::new();
        let y = global_avg_pool(tape.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]))).unwrap();
        assert_eq!(y.value().data(), &[2.5]);
        let y = global_avg_pool(tape.constant(Tensor::full(&[2, 3, 4, 5], 1.75))).unwrap();
        assert!(y.value().data().iter().all(|&v| v == 1.75));
        let y = global_avg_pool(tape.constant(Tensor::zeros(&[1, 2, 3, 3]))).unwrap();
        assert!(y.value().data().iter().all(|&v| v == 0.0));

        let x = rand_tensor(&[2, 3, 3, 2], 13);
        let e = grad_check(|v| weighted(global_avg_pool(v).unwrap(), 14), &x, 1e-6);
        assert!(e < 1e-5, "{e}");
    }

    proptest! {
        #[test]
        fn softmax_normalizes_and_ignores_shifts(
            xs in prop::collection::vec(-30.0f64..30.0, 1..12),
            shift in -50.0f64..50.0,
        ) {
            let tape = Tape::new();
            let n = xs.len();
            let y = softmax(tape.constant(t(&[n], &xs)), 0).unwrap().value();
            prop_assert!((y.sum() - 1.0).abs() < 1e-12);
            prop_assert!(y.data().iter().all(|&v| v > 0.0));
            let shifted: Vec<f64> = xs.iter().map(|v| v + shift).collect();
            let ys = softmax(tape.constant(t(&[n], &shifted)), 0).unwrap().value();
            prop_assert!(y.max_abs_diff(&ys) < 1e-12);
        }
    }
}
