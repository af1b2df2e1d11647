//! Branch-free `exp`, `ln(1 + x)`, `sin`/`cos` and friends written so that
//! loops over them vectorize, plus slice kernels for the activations built on
//! them. None of them call into libm, so results do not depend on how the
//! compiler happens to lower or fuse library calls.
//!
//! Kernels are generic over [`Arith`] and [`multiversion!`] compiles each one
//! for AVX-512 and AVX2 with fused multiply-add, picking a build at runtime.
//! The portable build rounds `a * b + c` twice, so results can differ in the
//! last bit between machines but never between runs on one machine.

pub(crate) trait Arith {
    fn mul_add(a: f64, b: f64, c: f64) -> f64;
}

pub(crate) struct Fused;
pub(crate) struct Plain;

impl Arith for Fused {
    #[inline(always)]
    fn mul_add(a: f64, b: f64, c: f64) -> f64 {
        a.mul_add(b, c)
    }
}

impl Arith for Plain {
    #[inline(always)]
    fn mul_add(a: f64, b: f64, c: f64) -> f64 {
        a * b + c
    }
}

/// Define `$name` calling `$kernel::<Fused>` under the widest available
/// instruction set, or `$kernel::<Plain>` otherwise.
macro_rules! multiversion {
    ($vis:vis fn $name:ident($($arg:ident: $ty:ty),* $(,)?) $(-> $ret:ty)? = $kernel:ident;) => {
        $vis fn $name($($arg: $ty),*) $(-> $ret)? {
            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx512f,avx2,fma")]
                fn wide($($arg: $ty),*) $(-> $ret)? {
                    $kernel::<$crate::fastmath::Fused>($($arg),*)
                }
                #[target_feature(enable = "avx2,fma")]
                fn narrow($($arg: $ty),*) $(-> $ret)? {
                    $kernel::<$crate::fastmath::Fused>($($arg),*)
                }
                if std::is_x86_feature_detected!("avx512f") {
                    // SAFETY: the CPU supports every enabled feature.
                    return unsafe { wide($($arg),*) };
                }
                if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
                    // SAFETY: as above.
                    return unsafe { narrow($($arg),*) };
                }
            }
            $kernel::<$crate::fastmath::Plain>($($arg),*)
        }
    };
}
pub(crate) use multiversion;

const SHIFTER: f64 = 6755399441055744.0; // 1.5 * 2^52
const LN2_HI: f64 = 6.93147180369123816490e-01;
const LN2_LO: f64 = 1.90821492927058770002e-10;

/// `sum_{j<14} r^j / (j+1)!`, i.e. `(e^r - 1) / r`, by Estrin's scheme.
#[inline(always)]
fn phi_poly<M: Arith>(r: f64) -> f64 {
    const C: [f64; 14] = [
        1.0,
        1.0 / 2.0,
        1.0 / 6.0,
        1.0 / 24.0,
        1.0 / 120.0,
        1.0 / 720.0,
        1.0 / 5040.0,
        1.0 / 40320.0,
        1.0 / 362880.0,
        1.0 / 3628800.0,
        1.0 / 39916800.0,
        1.0 / 479001600.0,
        1.0 / 6227020800.0,
        1.0 / 87178291200.0,
    ];
    let r2 = r * r;
    let r4 = r2 * r2;
    let r8 = r4 * r4;
    let q = |i: usize| M::mul_add(C[i + 1], r, C[i]);
    let s0 = M::mul_add(q(2), r2, q(0));
    let s1 = M::mul_add(q(6), r2, q(4));
    let s2 = M::mul_add(q(10), r2, q(8));
    let t0 = M::mul_add(s1, r4, s0);
    let t1 = M::mul_add(q(12), r4, s2);
    M::mul_add(t1, r8, t0)
}

/// `z = k ln2 + r`, `|r| <= ln2 / 2`: returns `(r, 2^k, k == 0)`.
#[inline(always)]
fn reduce(z: f64) -> (f64, f64, bool) {
    let zc = z.clamp(-700.0, 700.0);
    let t = zc * std::f64::consts::LOG2_E + SHIFTER;
    let kf = t - SHIFTER;
    let r = (zc - kf * LN2_HI) - kf * LN2_LO;
    let k = t.to_bits().wrapping_sub(SHIFTER.to_bits());
    (r, f64::from_bits(k.wrapping_add(1023) << 52), kf == 0.0)
}

#[inline(always)]
pub(crate) fn exp<M: Arith>(z: f64) -> f64 {
    let (r, scale, _) = reduce(z);
    M::mul_add(r, phi_poly::<M>(r), 1.0) * scale
}

/// `(e^z, phi(z))` with `phi(z) = (e^z - 1) / z`. For `|z| <= ln2 / 2` the
/// polynomial is `phi(z)` itself, avoiding the cancellation in `e^z - 1`.
#[inline(always)]
pub(crate) fn exp_phi<M: Arith>(z: f64) -> (f64, f64) {
    let (r, scale, small) = reduce(z);
    let p = phi_poly::<M>(r);
    let ez = M::mul_add(r, p, 1.0) * scale;
    let ph = if small { p } else { (ez - 1.0) / z };
    (ez, ph)
}

/// `phi'(z)` given `ez = e^z` and `ph = phi(z)`.
#[inline(always)]
pub(crate) fn dphi<M: Arith>(z: f64, ez: f64, ph: f64) -> f64 {
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
    let z2 = z * z;
    let z4 = z2 * z2;
    let q = |i: usize| M::mul_add(C[i + 1], z, C[i]);
    let series = M::mul_add(M::mul_add(q(6), z2, q(4)), z4, M::mul_add(q(2), z2, q(0)));
    let exact = (ez - ph) / z;
    if z.abs() < 0.05 {
        series
    } else {
        exact
    }
}

/// `ln(1 + e)` for `e` in `[0, 1]`.
#[inline(always)]
fn ln_1p_unit<M: Arith>(e: f64) -> f64 {
    // ln(1 + e) = 2 atanh(s), s = e / (2 + e); above sqrt(2) - 1 use
    // ln 2 + 2 atanh((e - 1) / (e + 3)) instead, so |s| <= 0.1716
    const C: [f64; 12] = [
        1.0,
        1.0 / 3.0,
        1.0 / 5.0,
        1.0 / 7.0,
        1.0 / 9.0,
        1.0 / 11.0,
        1.0 / 13.0,
        1.0 / 15.0,
        1.0 / 17.0,
        1.0 / 19.0,
        1.0 / 21.0,
        1.0 / 23.0,
    ];
    let high = e > std::f64::consts::SQRT_2 - 1.0;
    let s = if high { (e - 1.0) / (e + 3.0) } else { e / (2.0 + e) };
    let w = s * s;
    let w2 = w * w;
    let w4 = w2 * w2;
    let q = |i: usize| M::mul_add(C[i + 1], w, C[i]);
    let a = M::mul_add(q(2), w2, q(0));
    let b = M::mul_add(q(6), w2, q(4));
    let c = M::mul_add(q(10), w2, q(8));
    let series = M::mul_add(M::mul_add(c, w4, b), w4, a);
    let base = if high { std::f64::consts::LN_2 } else { 0.0 };
    M::mul_add(2.0 * s, series, base)
}

const FRAC_2_PI: f64 = std::f64::consts::FRAC_2_PI;
const PIO2_1: f64 = 1.57079632673412561417e+00;
const PIO2_2: f64 = 6.07710050630396597660e-11;
const PIO2_3: f64 = 2.02226624879595063154e-21;

/// `(sin r, cos r)` for `|r| <= pi / 4`.
#[inline(always)]
fn sin_cos_kernel<M: Arith>(r: f64) -> (f64, f64) {
    const S: [f64; 6] = [
        -1.66666666666666324348e-01,
        8.33333333332248946124e-03,
        -1.98412698298579493134e-04,
        2.75573137070700676789e-06,
        -2.50507602534068634195e-08,
        1.58969099521155010221e-10,
    ];
    const C: [f64; 6] = [
        4.16666666666666019037e-02,
        -1.38888888888741095749e-03,
        2.48015872894767294178e-05,
        -2.75573143513906633035e-07,
        2.08757232129817482790e-09,
        -1.13596475577881948265e-11,
    ];
    let z = r * r;
    let ps = M::mul_add(z, M::mul_add(z, M::mul_add(z, M::mul_add(z, S[5], S[4]), S[3]), S[2]), S[1]);
    let sin = M::mul_add(r * z, M::mul_add(z, ps, S[0]), r);
    let pc = M::mul_add(z, M::mul_add(z, M::mul_add(z, M::mul_add(z, M::mul_add(z, C[5], C[4]), C[3]), C[2]), C[1]), C[0]);
    let hz = 0.5 * z;
    let w = 1.0 - hz;
    let cos = w + (((1.0 - w) - hz) + z * z * pc);
    (sin, cos)
}

/// `(sin x, cos x)` within a couple of ulps for `|x| < 2^28`. Larger
/// arguments lose accuracy in the reduction.
#[inline(always)]
pub(crate) fn sin_cos<M: Arith>(x: f64) -> (f64, f64) {
    let t = x * FRAC_2_PI + SHIFTER;
    let kf = t - SHIFTER;
    let r = ((x - kf * PIO2_1) - kf * PIO2_2) - kf * PIO2_3;
    let (s, c) = sin_cos_kernel::<M>(r);
    match t.to_bits() & 3 {
        0 => (s, c),
        1 => (c, -s),
        2 => (-s, -c),
        _ => (-c, s),
    }
}

#[inline(always)]
pub(crate) fn sigmoid<M: Arith>(v: f64) -> f64 {
    1.0 / (1.0 + exp::<M>(-v))
}

/// `max(v, 0) + ln(1 + e^(-|v|))`.
#[inline(always)]
pub(crate) fn softplus<M: Arith>(v: f64) -> f64 {
    v.max(0.0) + ln_1p_unit::<M>(exp::<M>(-v.abs()))
}

#[inline(always)]
fn map_kernel<M: Arith>(x: &[f64], out: &mut [f64], f: impl Fn(f64) -> f64) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = f(v);
    }
}

#[inline(always)]
fn exp_kernel<M: Arith>(x: &[f64], out: &mut [f64]) {
    map_kernel::<M>(x, out, exp::<M>)
}

#[inline(always)]
fn sigmoid_kernel<M: Arith>(x: &[f64], out: &mut [f64]) {
    map_kernel::<M>(x, out, sigmoid::<M>)
}

#[inline(always)]
fn softplus_kernel<M: Arith>(x: &[f64], out: &mut [f64]) {
    map_kernel::<M>(x, out, softplus::<M>)
}

#[inline(always)]
fn silu_kernel<M: Arith>(x: &[f64], out: &mut [f64]) {
    map_kernel::<M>(x, out, |v| v * sigmoid::<M>(v))
}

/// `g * silu'(x)` with `silu'(x) = s (1 + x (1 - s))`, `s = sigmoid(x)`.
#[inline(always)]
fn silu_grad_kernel<M: Arith>(g: &[f64], x: &[f64], out: &mut [f64]) {
    for ((o, &gv), &v) in out.iter_mut().zip(g).zip(x) {
        let s = sigmoid::<M>(v);
        *o = gv * (s * (1.0 + v * (1.0 - s)));
    }
}

/// `g * sigmoid(x)`.
#[inline(always)]
fn sigmoid_mul_kernel<M: Arith>(g: &[f64], x: &[f64], out: &mut [f64]) {
    for ((o, &gv), &v) in out.iter_mut().zip(g).zip(x) {
        *o = gv * sigmoid::<M>(v);
    }
}

#[inline(always)]
fn sin_cos_slice_kernel<M: Arith>(x: &[f64], sin: &mut [f64], cos: &mut [f64]) {
    for ((&v, s), c) in x.iter().zip(sin.iter_mut()).zip(cos.iter_mut()) {
        (*s, *c) = sin_cos::<M>(v);
    }
}

multiversion! { pub(crate) fn exp_slice(x: &[f64], out: &mut [f64]) = exp_kernel; }
multiversion! { pub(crate) fn sigmoid_slice(x: &[f64], out: &mut [f64]) = sigmoid_kernel; }
multiversion! { pub(crate) fn softplus_slice(x: &[f64], out: &mut [f64]) = softplus_kernel; }
multiversion! { pub(crate) fn silu_slice(x: &[f64], out: &mut [f64]) = silu_kernel; }
multiversion! { pub(crate) fn silu_grad_slice(g: &[f64], x: &[f64], out: &mut [f64]) = silu_grad_kernel; }
multiversion! { pub(crate) fn sigmoid_mul_slice(g: &[f64], x: &[f64], out: &mut [f64]) = sigmoid_mul_kernel; }
multiversion! {
    pub(crate) fn sin_cos_slice(x: &[f64], sin: &mut [f64], cos: &mut [f64]) = sin_cos_slice_kernel;
}
