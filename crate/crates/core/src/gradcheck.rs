//! Finite-difference verification of the analytic derivatives.
//!
//! Errors are measured as `|a - b| / max(|a|, |b|, 1)`, which is relative for
//! large gradients and absolute below one.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Graph, NodeId, Variable};
use crate::error::Result;
use crate::pruning_math::{eval, eval_with_grads};
use crate::tensor::{DType, Real, Tensor};

/// Distance from `|x| = t` inside which samples are skipped.
pub const KINK_RADIUS: f64 = 1e-2;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub dtype: DType,
    pub samples: usize,
    pub max_err: f64,
    pub tol: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.max_err <= self.tol
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} {:?} samples={:<6} max_err={:.3e} tol={:.0e}",
            if self.passed() { "ok  " } else { "FAIL" },
            self.name,
            self.dtype,
            self.samples,
            self.max_err,
            self.tol
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed())
    }

    fn extend(&mut self, other: Report) {
        self.checks.extend(other.checks);
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Random `(x, alpha, t)` with `alpha` log-uniform in `[1, 1e3]`, `t`
/// log-uniform in `[1e-3, 5]` and `x` uniform in `[-10, 10]`, at least
/// [`KINK_RADIUS`] away from `|x| = t`.
pub fn sample_point(rng: &mut impl Rng) -> (f64, f64, f64) {
    loop {
        let alpha = 10f64.powf(rng.random_range(0.0..3.0));
        let t = (1e-3f64.ln() + rng.random_range(0.0..1.0) * (5f64.ln() - 1e-3f64.ln())).exp();
        let x: f64 = rng.random_range(-10.0..10.0);
        if (x.abs() - t).abs() > KINK_RADIUS {
            return (x, alpha, t);
        }
    }
}

/// Compares both weak derivatives of the pruning function with central
/// differences of step `1e-5` on `samples` random points.
pub fn pruning_math_suite(samples: usize, seed: u64) -> Report {
    const H: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut err_x, mut err_t) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let (x, alpha, t) = sample_point(&mut rng);
        let (_, dx, dt) = eval_with_grads(x, alpha, t);
        let fd_x = (eval(x + H, alpha, t) - eval(x - H, alpha, t)) / (2.0 * H);
        let fd_t = (eval(x, alpha, t + H) - eval(x, alpha, t - H)) / (2.0 * H);
        err_x = err_x.max(rel_err(dx, fd_x));
        err_t = err_t.max(rel_err(dt, fd_t));
    }
    let check = |name: &str, max_err| Check {
        name: name.into(),
        dtype: DType::F64,
        samples,
        max_err,
        tol: 1e-4,
    };
    Report {
        checks: vec![check("theta_grad_x", err_x), check("theta_grad_t", err_t)],
    }
}

/// Step and tolerance used for each precision.
pub fn fd_settings<T: Real>() -> (f64, f64) {
    match T::DTYPE {
        DType::F32 => (1e-3, 1e-3),
        DType::F64 => (1e-5, 1e-4),
    }
}

type Builder<'a, T> = dyn Fn(&mut Graph<T>, &[NodeId]) -> Result<NodeId> + 'a;

/// Checks the gradient of `build(inputs)` with respect to every input
/// element whose index is in `wrt` (all inputs when `None`). Non-scalar
/// outputs are reduced with fixed random weights.
pub fn check_op<T: Real>(
    name: &str,
    inputs: &[Tensor<T>],
    wrt: Option<&[usize]>,
    build: &Builder<'_, T>,
    seed: u64,
) -> Result<Check> {
    let (h, tol) = fd_settings::<T>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut weights: Option<Vec<T>> = None;
    let mut loss = |values: &[Tensor<T>], backward: bool| -> Result<(f64, Vec<Tensor<T>>)> {
        let mut g = Graph::new();
        let ids = values
            .iter()
            .map(|v| g.param(&Variable::new(v.clone())))
            .collect::<Result<Vec<_>>>()?;
        let mut out = build(&mut g, &ids)?;
        if g.value(out).len() != 1 {
            let n = g.value(out).len();
            let w = weights
                .get_or_insert_with(|| (0..n).map(|_| T::from_f64(rng.random_range(-1.0..1.0))).collect())
                .clone();
            out = g.weighted_sum(out, w)?;
        }
        let value = g.value(out).data()[0].as_f64();
        let grads = if backward {
            g.backward(out)?;
            ids.iter().map(|&id| g.grad_or_zeros(id)).collect()
        } else {
            Vec::new()
        };
        Ok((value, grads))
    };

    let (_, analytic) = loss(inputs, true)?;
    let mut values = inputs.to_vec();
    let mut max_err = 0.0f64;
    let mut samples = 0;
    for i in 0..inputs.len() {
        if wrt.is_some_and(|w| !w.contains(&i)) {
            continue;
        }
        for j in 0..inputs[i].len() {
            let orig = values[i].data()[j];
            values[i].data_mut()[j] = T::from_f64(orig.as_f64() + h);
            let (plus, _) = loss(&values, false)?;
            values[i].data_mut()[j] = T::from_f64(orig.as_f64() - h);
            let (minus, _) = loss(&values, false)?;
            values[i].data_mut()[j] = orig;
            let fd = (plus - minus) / (2.0 * h);
            max_err = max_err.max(rel_err(analytic[i].data()[j].as_f64(), fd));
            samples += 1;
        }
    }
    Ok(Check {
        name: name.into(),
        dtype: T::DTYPE,
        samples,
        max_err,
        tol,
    })
}

fn uniform<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(lo..hi)))
}

/// Values in `[-1, 1]` at least `gap` away from zero.
fn away_from_zero<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(gap..1.0);
        T::from_f64(if rng.random_bool(0.5) { m } else { -m })
    })
}

/// Distinct values spaced far apart relative to the step, so no max-pool
/// window changes its winner under perturbation.
fn spaced<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    Tensor::from_fn(shape, |i| T::from_f64(order[i] as f64 * 0.05 - 1.0))
}

/// Weights at least [`KINK_RADIUS`] away from `|w| = t` for every group.
fn off_kink<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], t: &[f64]) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let block = n / t.len();
    Tensor::from_fn(shape, |i| loop {
        let w: f64 = rng.random_range(-1.0..1.0);
        if (w.abs() - t[i / block]).abs() > 2.0 * KINK_RADIUS {
            return T::from_f64(w);
        }
    })
}

/// Runs every differentiable operation of the engine against central
/// differences in precision `T`.
pub fn autodiff_suite<T: Real>(seed: u64) -> Result<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    let a = uniform::<T>(&mut rng, &[3, 4], -1.0, 1.0);
    let b = uniform::<T>(&mut rng, &[4, 2], -1.0, 1.0);
    checks.push(check_op("matmul", &[a, b], None, &|g, x| g.matmul(x[0], x[1]), seed)?);

    let x = uniform::<T>(&mut rng, &[5, 4], -1.0, 1.0);
    let w = uniform::<T>(&mut rng, &[3, 4], -1.0, 1.0);
    checks.push(check_op("linear", &[x, w], None, &|g, x| g.linear(x[0], x[1]), seed)?);

    let input = uniform::<T>(&mut rng, &[2, 3, 8, 8], -1.0, 1.0);
    let kernels = uniform::<T>(&mut rng, &[4, 3, 3, 3], -0.5, 0.5);
    checks.push(check_op(
        "conv2d",
        &[input.clone(), kernels.clone()],
        None,
        &|g, x| g.conv2d(x[0], x[1], 1, 0),
        seed,
    )?);
    let small = uniform::<T>(&mut rng, &[1, 2, 5, 5], -1.0, 1.0);
    let k2 = uniform::<T>(&mut rng, &[3, 2, 3, 3], -0.5, 0.5);
    checks.push(check_op(
        "conv2d_stride2_pad1",
        &[small, k2],
        None,
        &|g, x| g.conv2d(x[0], x[1], 2, 1),
        seed,
    )?);

    let r = away_from_zero::<T>(&mut rng, &[4, 6], 0.05);
    checks.push(check_op("relu", &[r], None, &|g, x| g.relu(x[0]), seed)?);

    let y = uniform::<T>(&mut rng, &[3, 4, 2, 2], -1.0, 1.0);
    let bias = uniform::<T>(&mut rng, &[4], -1.0, 1.0);
    checks.push(check_op(
        "bias_add",
        &[y, bias],
        None,
        &|g, x| g.bias_add(x[0], x[1]),
        seed,
    )?);

    let f = uniform::<T>(&mut rng, &[2, 3, 2, 2], -1.0, 1.0);
    checks.push(check_op("flatten", &[f], None, &|g, x| g.flatten(x[0]), seed)?);

    let p = spaced::<T>(&mut rng, &[2, 2, 6, 6]);
    checks.push(check_op(
        "max_pool2d",
        &[p],
        None,
        &|g, x| g.max_pool2d(x[0], 2, 2),
        seed,
    )?);

    let logits = uniform::<T>(&mut rng, &[4, 10], -2.0, 2.0);
    let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..10)).collect();
    checks.push(check_op(
        "softmax_cross_entropy",
        &[logits],
        None,
        &|g, x| g.softmax_cross_entropy(x[0], &labels),
        seed,
    )?);

    let l1 = uniform::<T>(&mut rng, &[3, 3], -1.0, 1.0);
    let l2 = uniform::<T>(&mut rng, &[5], -1.0, 1.0);
    checks.push(check_op("l2_sum", &[l1, l2], None, &|g, x| g.l2_sum(x), seed)?);

    let thresholds = [0.3, 0.5];
    let t = Tensor::new([2], thresholds.iter().map(|&v| T::from_f64(v)).collect())?;
    let w = off_kink::<T>(&mut rng, &[2, 3, 2], &thresholds);
    checks.push(check_op(
        "theta_map",
        &[w.clone(), t.clone()],
        None,
        &|g, x| g.theta_map(x[0], x[1], 10.0),
        seed,
    )?);
    checks.push(check_op(
        "l1_sum_mapped_wrt_t",
        &[w.clone(), t.clone()],
        Some(&[1]),
        &|g, x| g.l1_sum_mapped(x[0], x[1], 10.0),
        seed,
    )?);
    checks.push(routing_check(&w, &t)?);

    let a = uniform::<T>(&mut rng, &[2, 3], -1.0, 1.0);
    let b = uniform::<T>(&mut rng, &[2, 3], -1.0, 1.0);
    checks.push(check_op(
        "add_scale",
        &[a, b],
        None,
        &|g, x| {
            let s = g.scale(x[1], T::from_f64(-2.5))?;
            g.add(x[0], s)
        },
        seed,
    )?);

    // A two-layer sibling block: theta-mapped weights, relu, cross-entropy.
    let x = uniform::<T>(&mut rng, &[3, 4], -1.0, 1.0);
    let w1 = off_kink::<T>(&mut rng, &[5, 4], &[0.2]);
    let w2 = off_kink::<T>(&mut rng, &[3, 5], &[0.1]);
    let t1 = Tensor::new([1], vec![T::from_f64(0.2)])?;
    let t2 = Tensor::new([1], vec![T::from_f64(0.1)])?;
    checks.push(check_op(
        "sibling_chain",
        &[x, w1, t1, w2, t2],
        None,
        &|g, v| {
            let m1 = g.theta_map(v[1], v[2], 10.0)?;
            let h = g.linear(v[0], m1)?;
            let h = g.relu(h)?;
            let m2 = g.theta_map(v[3], v[4], 10.0)?;
            let z = g.linear(h, m2)?;
            g.softmax_cross_entropy(z, &[0, 2, 1])
        },
        seed,
    )?);

    checks.push(determinism_check::<T>(seed)?);
    Ok(Report { checks })
}

/// The weight adjoint of the mapped L1 term must be exactly zero.
fn routing_check<T: Real>(w: &Tensor<T>, t: &Tensor<T>) -> Result<Check> {
    let mut g = Graph::new();
    let wn = g.param(&Variable::new(w.clone()))?;
    let tn = g.param(&Variable::new(t.clone()))?;
    let l = g.l1_sum_mapped(wn, tn, 10.0)?;
    g.backward(l)?;
    let max = g
        .grad_or_zeros(wn)
        .data()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.as_f64().abs()));
    Ok(Check {
        name: "l1_sum_mapped_zero_wrt_w".into(),
        dtype: T::DTYPE,
        samples: w.len(),
        max_err: max,
        tol: 0.0,
    })
}

/// Two identical forward/backward passes must agree bit for bit.
fn determinism_check<T: Real>(seed: u64) -> Result<Check> {
    let run = || -> Result<Vec<u64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = uniform::<T>(&mut rng, &[2, 3, 8, 8], -1.0, 1.0);
        let kernels = uniform::<T>(&mut rng, &[4, 3, 3, 3], -0.5, 0.5);
        let mut g = Graph::new();
        let x = g.input(input)?;
        let k = g.param(&Variable::new(kernels))?;
        let y = g.conv2d(x, k, 1, 0)?;
        let y = g.relu(y)?;
        let y = g.flatten(y)?;
        let l = g.l2_sum(&[y])?;
        g.backward(l)?;
        let mut bits = vec![g.value(l).data()[0].as_f64().to_bits()];
        bits.extend(g.grad_or_zeros(k).data().iter().map(|v| v.as_f64().to_bits()));
        Ok(bits)
    };
    let (a, b) = (run()?, run()?);
    let mismatches = a.iter().zip(&b).filter(|(x, y)| x != y).count();
    Ok(Check {
        name: "determinism".into(),
        dtype: T::DTYPE,
        samples: a.len(),
        max_err: mismatches as f64,
        tol: 0.0,
    })
}

/// Pruning-math suite followed by the autodiff suite in both precisions.
pub fn full_suite(samples: usize, seed: u64) -> Result<Report> {
    let mut report = pruning_math_suite(samples, seed);
    report.extend(autodiff_suite::<f64>(seed)?);
    report.extend(autodiff_suite::<f32>(seed)?);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pruning_math_passes() {
        let report = pruning_math_suite(2000, 1);
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn autodiff_passes_in_f64() {
        let report = autodiff_suite::<f64>(3).unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn autodiff_passes_in_f32() {
        let report = autodiff_suite::<f32>(3).unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn error_measure_has_unit_floor() {
        assert_eq!(rel_err(0.0, 0.0), 0.0);
        assert_eq!(rel_err(1e-9, 2e-9), 1e-9);
        assert_eq!(rel_err(100.0, 101.0), 1.0 / 101.0);
    }

    #[test]
    fn samples_avoid_kinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let (x, alpha, t) = sample_point(&mut rng);
            assert!((x.abs() - t).abs() > KINK_RADIUS);
            assert!((1.0..=1e3).contains(&alpha) && (1e-3..=5.0).contains(&t));
        }
    }
}
