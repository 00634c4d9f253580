//! One-hidden-layer tanh building blocks: squaring, multiplication and
//! identity, each with a certified sup-norm error on a given range.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use super::network::{Activation, FeedforwardNetwork, SparseAffine};
use crate::error::{Error, Result};

/// Shift of the second-difference stencil, `atanh √(2/3)`. `tanh″` is
/// nonzero there while `tanh⁗` vanishes, so the stencil error is `O(h⁴)`.
pub const SHIFT: f64 = 1.146_215_834_780_588_9;

/// Safety factor between the certified error and the requested one.
const SAFETY: f64 = 0.9;
const GRID: usize = 2048;
/// Bound on float64 rounding in units of `ε·|c|`; observed values stay
/// below 2.2 for both gadgets.
const ROUNDOFF_ULPS: f64 = 8.0;
/// Finer tolerance grid `2^{-j/QUANT}` for memoized steps.
const QUANT: f64 = 16.0;

pub(crate) fn tanh_second_derivative(b: f64) -> f64 {
    let t = b.tanh();
    -2.0 * t * (1.0 - t * t)
}

/// Coefficients of `g(x) = c·tanh(b + hx) + c·tanh(b − hx) + bias`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Stencil {
    pub h: f64,
    pub c: f64,
    pub bias: f64,
}

impl Stencil {
    fn new(h: f64) -> Self {
        let c = 1.0 / (h * h * tanh_second_derivative(SHIFT));
        Self {
            h,
            c,
            bias: -2.0 * c * SHIFT.tanh(),
        }
    }

    #[cfg(test)]
    fn eval(&self, x: f64) -> f64 {
        self.c * (SHIFT + self.h * x).tanh() + self.c * (SHIFT - self.h * x).tanh() + self.bias
    }
}

/// `tanh(u)/u − 1` without cancellation near 0.
fn tanh_ratio_m1(u: f64) -> f64 {
    if u.abs() < 0.05 {
        let u2 = u * u;
        u2 * (-1.0 / 3.0 + u2 * (2.0 / 15.0 + u2 * (-17.0 / 315.0 + u2 * 62.0 / 2835.0)))
    } else {
        u.tanh() / u - 1.0
    }
}

/// `|g_h(t) − t²|` in exact arithmetic, from the closed form
/// `g_h(t) = tanh²(ht) / (h²(1 − tanh²b·tanh²(ht)))`.
fn truncation_error(h: f64, t: f64) -> f64 {
    let u = h * t;
    let q = tanh_ratio_m1(u);
    let tb2 = SHIFT.tanh().powi(2);
    let tu2 = u.tanh().powi(2);
    (t * t * (2.0 * q + q * q + tb2 * tu2) / (1.0 - tb2 * tu2)).abs()
}

/// Certified `sup_{|t| ≤ 1} |g_h(t) − t²|` as evaluated in float64:
/// truncation on a uniform grid (the error is even and smooth) plus a
/// rounding bound.
fn unit_error(h: f64) -> f64 {
    let trunc = (0..=GRID)
        .map(|i| truncation_error(h, i as f64 / GRID as f64))
        .fold(0.0, f64::max);
    trunc + ROUNDOFF_ULPS * f64::EPSILON * Stencil::new(h).c.abs()
}

/// Step minimizing the unit-range error, and that minimal error.
fn unit_floor() -> (f64, f64) {
    static FLOOR: OnceLock<(f64, f64)> = OnceLock::new();
    *FLOOR.get_or_init(|| {
        (0..=240)
            .map(|i| 10f64.powf(-6.0 + 6.0 * i as f64 / 240.0))
            .map(|h| (h, unit_error(h)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("nonempty scan")
    })
}

/// Smallest sup error a squaring gadget can certify on `[-1, 1]`.
pub fn square_floor() -> f64 {
    unit_floor().1 / SAFETY
}

/// Largest unit-range step with certified error `≤ eps`.
///
/// Tolerances are rounded down to the grid `2^{-j/16}` and memoized, so a
/// network with many gadgets only runs a handful of searches.
fn unit_step(eps: f64) -> Result<f64> {
    static CACHE: OnceLock<Mutex<HashMap<i64, f64>>> = OnceLock::new();
    if !(eps > 0.0) {
        return Err(Error::domain(format!("tolerance must be positive, got {eps}")));
    }
    let key = (-QUANT * eps.log2()).ceil() as i64;
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(&h) = cache.lock().expect("cache lock").get(&key) {
        return Ok(h);
    }
    let target = SAFETY * 2f64.powf(-(key as f64) / QUANT);
    let (h_opt, floor) = unit_floor();
    if floor > target {
        return Err(Error::Numeric(format!(
            "squaring tolerance {eps:.3e} (relative to the range) is below the float64 floor {:.3e}",
            floor / SAFETY
        )));
    }
    let h = if unit_error(1.0) <= target {
        1.0
    } else {
        // Truncation dominates above the optimum; bisect in log h.
        let (mut lo, mut hi) = (h_opt.ln(), 0.0f64);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if unit_error(mid.exp()) <= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo.exp()
    };
    cache.lock().expect("cache lock").insert(key, h);
    Ok(h)
}

/// Stencil approximating `x²` on `[-range, range]` within `delta`, using
/// `g_h(Rt) = R² g_{hR}(t)`.
pub(crate) fn square_stencil(delta: f64, range: f64) -> Result<Stencil> {
    let h = unit_step(delta / (range * range))? / range;
    Ok(Stencil::new(h))
}

/// Step `h` of `tanh(hx)/h ≈ x` on `[-range, range]` within `delta`, from
/// `|tanh z − z| ≤ |z|³/3`.
pub(crate) fn identity_step(delta: f64, range: f64) -> f64 {
    (3.0 * delta / range.powi(3)).sqrt().min(1.0 / range)
}

fn check_args(delta: f64, m: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(m >= 1.0 && m.is_finite()) {
        return Err(Error::domain(format!("range must be >= 1, got {m}")));
    }
    Ok(())
}

/// `sup_{|x| ≤ M} |g(x) − x²| ≤ δ` with two hidden neurons.
pub fn square_gadget(delta: f64, m: f64) -> Result<FeedforwardNetwork> {
    check_args(delta, m)?;
    let s = square_stencil(delta, m)?;
    let hidden = SparseAffine::from_triplets(2, 1, vec![(0, 0, s.h), (1, 0, -s.h)], vec![SHIFT, SHIFT])?;
    let out = SparseAffine::from_triplets(1, 2, vec![(0, 0, s.c), (0, 1, s.c)], vec![s.bias])?;
    FeedforwardNetwork::new(1, Activation::Tanh, vec![hidden, out])
}

/// Square stencil used inside a multiplication gadget of tolerance `delta`
/// on `[-range, range]²`: both squares act on `[-2R, 2R]` and since
/// `xy = ((x+y)² − (x−y)²)/4` each may be off by `2δ`.
pub(crate) fn mult_stencil(delta: f64, range: f64) -> Result<Stencil> {
    square_stencil(2.0 * delta, 2.0 * range)
}

/// `sup_{|x|,|y| ≤ M} |g(x, y) − xy| ≤ δ` with four hidden neurons. The
/// constant terms of the two squares cancel.
pub fn mult_gadget(delta: f64, m: f64) -> Result<FeedforwardNetwork> {
    check_args(delta, m)?;
    let s = mult_stencil(delta, m)?;
    let h = s.h;
    let hidden = SparseAffine::from_triplets(
        4,
        2,
        vec![
            (0, 0, h),
            (0, 1, h),
            (1, 0, -h),
            (1, 1, -h),
            (2, 0, h),
            (2, 1, -h),
            (3, 0, -h),
            (3, 1, h),
        ],
        vec![SHIFT; 4],
    )?;
    let q = s.c / 4.0;
    let out = SparseAffine::from_triplets(1, 4, vec![(0, 0, q), (0, 1, q), (0, 2, -q), (0, 3, -q)], vec![0.0])?;
    FeedforwardNetwork::new(2, Activation::Tanh, vec![hidden, out])
}

/// `sup_{|x| ≤ M} |tanh(hx)/h − x| ≤ δ` with one hidden neuron.
pub fn identity_gadget(delta: f64, m: f64) -> Result<FeedforwardNetwork> {
    check_args(delta, m)?;
    let h = identity_step(delta, m);
    let hidden = SparseAffine::from_triplets(1, 1, vec![(0, 0, h)], vec![0.0])?;
    let out = SparseAffine::from_triplets(1, 1, vec![(0, 0, 1.0 / h)], vec![0.0])?;
    FeedforwardNetwork::new(1, Activation::Tanh, vec![hidden, out])
}
