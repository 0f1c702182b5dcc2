//! The smooth pruning function, its weak derivatives, the hard dead-zone map
//! it approximates, and a numeric inverse.
//!
//! For sharpness `alpha > 0` and threshold `t >= 0` the pruning function is
//!
//! ```text
//! theta(x) = relu(x - t) + t * sigmoid(alpha * (x - t))
//!          - relu(-x - t) - t * sigmoid(alpha * (-x - t))
//! ```
//!
//! It is odd and strictly increasing in `x` (for `t > 0`), squashes the band
//! `(-t, t)` towards zero, and is the identity when `t = 0`. As `alpha` grows
//! it converges to [`theta_bar`], which keeps `x` when `|x| >= t` and maps
//! everything else to zero.
//!
//! All scalar evaluation happens in `f64` regardless of the tensor dtype.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Largest magnitude passed to `exp` inside [`sigmoid`].
pub const SIGMOID_CLAMP: f64 = 500.0;

/// Default absolute tolerance of [`theta_inv`], in weight units.
pub const DEFAULT_INVERSE_TOL: f64 = 1e-10;

/// Bisection step limit for [`theta_inv`].
pub const MAX_BISECTION_STEPS: usize = 60;

/// Sharpness and threshold of the pruning function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneParams {
    alpha: f64,
    t: f64,
}

impl PruneParams {
    pub fn new(alpha: f64, t: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
        }
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::Config(format!("threshold must be non-negative, got {t}")));
        }
        Ok(PruneParams { alpha, t })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn threshold(&self) -> f64 {
        self.t
    }
}

/// Logistic sigmoid with its argument clamped to `[-500, 500]`.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    let z = z.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Heaviside step with `H(0) = 1`.
#[inline]
pub fn heaviside(u: f64) -> f64 {
    if u >= 0.0 {
        1.0
    } else {
        0.0
    }
}

fn check_finite(x: f64, what: &str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} must be finite, got {x}")))
    }
}

// Everything is evaluated on a = |x| with u = alpha (a - t) and
// w = alpha (a + t), then signed, so `eval(-x) == -eval(x)` bit for bit.
// Outside the band theta = a - t (s(-u) + s(-w)), which never exceeds a;
// inside it the sigmoid difference s(u) - s(-w) is rewritten as the product
// s(u) s(w) (1 - exp(-2 alpha a)) to avoid cancellation.
//
// Since w = u + 2 alpha t, exp(-|w|) is exp(-|u|) times or divided by the
// per-threshold constant exp(-2 alpha t), so one exponential per element
// suffices outside the band.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Kernel {
    alpha: f64,
    t: f64,
    // exp(-2 alpha t), or 0 when it underflows and the shortcut is unusable.
    ratio: f64,
}

impl Kernel {
    #[inline]
    pub(crate) fn new(alpha: f64, t: f64) -> Self {
        let ratio = (-2.0 * alpha * t).exp();
        let ratio = if ratio.is_normal() { ratio } else { 0.0 };
        Kernel { alpha, t, ratio }
    }

    #[inline]
    pub(crate) fn value(&self, x: f64) -> f64 {
        self.parts(x, false).0
    }

    /// Value together with the `x` and `t` partial derivatives.
    #[inline]
    pub(crate) fn with_grads(&self, x: f64) -> (f64, f64, f64) {
        self.parts(x, true)
    }

    #[inline(always)]
    fn parts(&self, x: f64, grads: bool) -> (f64, f64, f64) {
        let (alpha, t) = (self.alpha, self.t);
        let a = x.abs();
        let u = alpha * (a - t);
        let outside = u >= 0.0;
        // e_u = exp(-|u|) and e_w = exp(-w); w >= 0 always.
        let e_u = (-u.abs().min(SIGMOID_CLAMP)).exp();
        let e_w = if self.ratio == 0.0 {
            (-(alpha * (a + t)).min(SIGMOID_CLAMP)).exp()
        } else if outside {
            e_u * self.ratio
        } else {
            self.ratio / e_u
        };
        let inv_u = 1.0 / (1.0 + e_u);
        let inv_w = 1.0 / (1.0 + e_w);
        // s(w) and s(-w); s(u) and s(-u) depend on the sign of u.
        let (s_w, s_neg_w) = (inv_w, e_w * inv_w);
        let (s_u, s_neg_u) = if outside {
            (inv_u, e_u * inv_u)
        } else {
            (e_u * inv_u, inv_u)
        };
        let value = if outside {
            a - t * (s_neg_u + s_neg_w)
        } else {
            // 1 - exp(-2 alpha a); exp(-2 alpha a) = exp(-2 alpha t) / e_u^2
            // inside the band, and expm1 is only needed near a = 0.
            let two_alpha_a = 2.0 * alpha * a;
            let gap = if two_alpha_a < 0.5 || self.ratio == 0.0 {
                -(-two_alpha_a).exp_m1()
            } else {
                1.0 - self.ratio / (e_u * e_u)
            };
            t * s_u * s_w * gap
        };
        if !grads {
            return (value.copysign(x), 0.0, 0.0);
        }
        let p_u = alpha * t * (s_u * s_neg_u);
        let p_w = alpha * t * (s_w * s_neg_w);
        let dx = heaviside(a - t) + heaviside(-a - t) + p_u + p_w;
        // `-H(a - t) + s(u)` is `-s(-u)` outside the band; the derivative is odd.
        let linear = if outside { -s_neg_u } else { s_u };
        let dt_abs = linear - s_neg_w - p_u + p_w;
        let dt = if x > 0.0 {
            dt_abs
        } else if x < 0.0 {
            -dt_abs
        } else {
            0.0
        };
        (value.copysign(x), dx, dt)
    }
}

#[inline]
pub(crate) fn eval(x: f64, alpha: f64, t: f64) -> f64 {
    Kernel::new(alpha, t).value(x)
}

/// Value together with the `x` and `t` partial derivatives.
#[inline]
pub(crate) fn eval_with_grads(x: f64, alpha: f64, t: f64) -> (f64, f64, f64) {
    Kernel::new(alpha, t).with_grads(x)
}

#[inline]
pub(crate) fn eval_grad_t(x: f64, alpha: f64, t: f64) -> f64 {
    eval_with_grads(x, alpha, t).2
}

/// The pruning function.
pub fn theta(x: f64, p: PruneParams) -> Result<f64> {
    check_finite(x, "x")?;
    Ok(eval(x, p.alpha, p.t))
}

/// Weak partial derivative of [`theta`] with respect to `x`.
pub fn theta_grad_x(x: f64, p: PruneParams) -> Result<f64> {
    check_finite(x, "x")?;
    Ok(eval_with_grads(x, p.alpha, p.t).1)
}

/// Weak partial derivative of [`theta`] with respect to the threshold.
pub fn theta_grad_t(x: f64, p: PruneParams) -> Result<f64> {
    check_finite(x, "x")?;
    Ok(eval_grad_t(x, p.alpha, p.t))
}

/// Hard dead-zone map: `x` when `|x| >= t`, otherwise zero.
pub fn theta_bar(x: f64, t: f64) -> Result<f64> {
    check_finite(x, "x")?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::Domain(format!(
            "threshold must be finite and non-negative, got {t}"
        )));
    }
    Ok(theta_bar_unchecked(x, t))
}

#[inline]
pub(crate) fn theta_bar_unchecked(x: f64, t: f64) -> f64 {
    if heaviside(x - t) + heaviside(-x - t) > 0.0 {
        x
    } else {
        0.0
    }
}

/// Inverse of [`theta`] in `x` by bisection.
///
/// The search brackets `[0, |y| + 2t + 1]` on the side matching the sign of
/// `y` and halves it until it is narrower than `tol` and the residual is also
/// below `tol`, or the step limit is hit. Narrowing the bracket (not just the
/// residual) matters inside the dead zone, where `theta` is nearly flat.
pub fn theta_inv(y: f64, p: PruneParams, tol: f64) -> Result<f64> {
    check_finite(y, "y")?;
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    let target = y.abs();
    let mut lo = 0.0;
    let mut hi = target + 2.0 * p.t + 1.0;
    if eval(hi, p.alpha, p.t) < target {
        return Err(Error::Internal(format!(
            "inverse bracket [0, {hi}] does not contain {target}"
        )));
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..MAX_BISECTION_STEPS {
        mid = 0.5 * (lo + hi);
        let value = eval(mid, p.alpha, p.t);
        if hi - lo <= tol && (value - target).abs() <= tol {
            break;
        }
        if mid <= lo || mid >= hi {
            break;
        }
        if value < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(mid.copysign(y))
}

/// Element-wise [`theta`] over a tensor.
pub fn theta_map<T: Real>(w: &Tensor<T>, p: PruneParams) -> Tensor<T> {
    let k = Kernel::new(p.alpha, p.t);
    w.map(|x| T::from_f64(k.value(x.as_f64())))
}
