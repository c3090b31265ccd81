//! Finite-difference checking of tape gradients.
//!
//! The checker reruns the full forward pass with one input coordinate
//! nudged by `+eps` and `-eps`, forms the central difference, and compares
//! it against the analytic gradient from [`Tape::backward`]. Checks always
//! run in f64; central differences in f32 lose too many digits to separate
//! a wrong adjoint from roundoff.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

/// Default perturbation for central differences.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error over all checked coordinates.
    pub max_rel_err: f64,
    /// `(input index, flat coordinate)` where the maximum occurred.
    pub worst_coord: (usize, usize),
    /// Analytic and numeric gradient at the worst coordinate.
    pub worst_pair: (f64, f64),
    /// Number of coordinates checked.
    pub checked: usize,
}

/// Relative error as used throughout the checks:
/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs())
}

/// All flat coordinates of a shape, for exhaustive single-op checks.
pub fn all_coords(input: usize, shape: Shape) -> Vec<(usize, usize)> {
    (0..shape.count()).map(|i| (input, i)).collect()
}

/// A deterministic subset of coordinates across several inputs, for checks
/// of large graphs where exhaustive differencing would take hours.
pub fn sample_coords(shapes: &[Shape], per_input: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut coords = Vec::new();
    for (i, s) in shapes.iter().enumerate() {
        let n = s.count();
        if n <= per_input {
            coords.extend((0..n).map(|j| (i, j)));
        } else {
            // Sample without replacement so no coordinate is double-counted.
            let mut seen = std::collections::HashSet::new();
            while seen.len() < per_input {
                seen.insert(rng.random_range(0..n));
            }
            let mut picked: Vec<usize> = seen.into_iter().collect();
            picked.sort_unstable();
            coords.extend(picked.into_iter().map(|j| (i, j)));
        }
    }
    coords
}

/// Check the tape gradient of a scalar-valued function at chosen coordinates.
///
/// `f` rebuilds the graph from leaf variables on every call; it must be a
/// pure function of its inputs for the finite differences to be meaningful.
pub fn grad_check<F>(
    inputs: &[Tensor<f64>],
    coords: &[(usize, usize)],
    eps: f64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect::<Result<_>>()?;
        let root = f(&mut tape, &vars)?;
        tape.value(root).item()
    };

    // Analytic gradients from one backward pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone()))
        .collect::<Result<_>>()?;
    let root = f(&mut tape, &vars)?;
    let grads = tape.backward(root)?;
    let analytic: Vec<Tensor<f64>> = inputs
        .iter()
        .zip(vars.iter())
        .map(|(t, &v)| grads.get_or_zeros(v, t.shape()))
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_coord: (0, 0),
        worst_pair: (0.0, 0.0),
        checked: 0,
    };
    for &(input, coord) in coords {
        let a = analytic[input].data()[coord];
        let mut bumped: Vec<Tensor<f64>> = inputs.to_vec();
        let perturb = |t: &Tensor<f64>, delta: f64| {
            let mut d = t.data().to_vec();
            d[coord] += delta;
            Tensor::from_vec(t.shape(), d)
        };
        bumped[input] = perturb(&inputs[input], eps)?;
        let up = eval(&bumped)?;
        bumped[input] = perturb(&inputs[input], -eps)?;
        let down = eval(&bumped)?;
        let n = (up - down) / (2.0 * eps);
        let e = rel_err(a, n);
        if e >= report.max_rel_err {
            report.max_rel_err = e;
            report.worst_coord = (input, coord);
            report.worst_pair = (a, n);
        }
        report.checked += 1;
    }
    Ok(report)
}
