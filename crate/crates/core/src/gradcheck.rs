//! Finite-difference gradient verification.
//!
//! Compares the tape's analytic gradients against central differences
//! `(f(x + h·eᵢ) − f(x − h·eᵢ)) / (x⁺ᵢ − x⁻ᵢ)` computed coordinate by
//! coordinate. The denominator is the actually-applied 32-bit perturbation, so
//! rounding of `x ± h` does not pollute the estimate. Errors are normalized by
//! the largest gradient magnitude over all checked coordinates:
//!
//! ```text
//! rel_err = max_i |analytic_i - numeric_i| / max(scale, 1e-12)
//! scale   = max_i max(|analytic_i|, |numeric_i|)
//! ```
//!
//! which makes the report meaningful for 32-bit forward passes where tiny
//! coordinates sit below the difference noise floor.
//!
//! Functions with kinks (ReLU, max-pool ties) are only piecewise smooth: a
//! check evaluated within `h` of a kink can report a spurious error, and the
//! caller is expected to resample the input rather than loosen the tolerance.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Tape, TensorId};

/// One differentiable input to the function under test.
#[derive(Debug, Clone)]
pub struct LeafSpec {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl LeafSpec {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Self {
        LeafSpec { shape: shape.to_vec(), data }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Pass threshold on the normalized max relative error.
    pub tolerance: f64,
    /// Cap on checked coordinates per leaf; `None` checks every coordinate.
    pub coords_per_leaf: Option<usize>,
    /// Seed for coordinate subsampling.
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { step: 1e-3, tolerance: 1e-3, coords_per_leaf: None, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Largest gradient magnitude seen; the normalization scale.
    pub grad_scale: f64,
    pub coords_checked: usize,
    pub tolerance: f64,
    /// (leaf index, coordinate) of the worst error.
    pub worst: Option<(usize, usize)>,
    pub pass: bool,
}

/// Check a scalar function of several tensor inputs.
///
/// `build` must construct the function on the given tape from the supplied
/// leaf ids and return the scalar loss id. It is called once for the analytic
/// pass and twice per checked coordinate.
pub fn grad_check_multi<F>(build: F, leaves: &[LeafSpec], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[TensorId]) -> Result<TensorId>,
{
    // Analytic pass.
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = leaves
        .iter()
        .map(|l| tape.leaf(&l.shape, l.data.clone(), true))
        .collect::<Result<_>>()?;
    let loss = build(&mut tape, &ids)?;
    if tape.data(loss).len() != 1 {
        return Err(Error::Contract("grad_check needs a scalar function".into()));
    }
    tape.backward(loss)?;
    let analytic: Vec<Vec<f32>> = ids
        .iter()
        .map(|&id| tape.grad(id).expect("leaf requires grad").to_vec())
        .collect();
    drop(tape);

    let eval = |datasets: &[Vec<f32>]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = leaves
            .iter()
            .zip(datasets)
            .map(|(l, d)| tape.leaf(&l.shape, d.clone(), false))
            .collect::<Result<_>>()?;
        let loss = build(&mut tape, &ids)?;
        Ok(tape.data(loss)[0] as f64)
    };

    let mut rng = Rng::for_stream(opts.seed, 0x6772_6164);
    let mut buffers: Vec<Vec<f32>> = leaves.iter().map(|l| l.data.clone()).collect();

    let mut scale = 0.0f64;
    let mut worst_abs = 0.0f64;
    let mut worst = None;
    let mut checked = 0usize;

    for (li, leaf) in leaves.iter().enumerate() {
        let n = leaf.data.len();
        let coords: Vec<usize> = match opts.coords_per_leaf {
            Some(k) if k < n => {
                let mut all: Vec<usize> = (0..n).collect();
                rng.shuffle(&mut all);
                all.truncate(k);
                all
            }
            _ => (0..n).collect(),
        };
        for ci in coords {
            let original = buffers[li][ci];
            let plus = (original as f64 + opts.step) as f32;
            let minus = (original as f64 - opts.step) as f32;
            let delta = plus as f64 - minus as f64;
            if delta == 0.0 {
                continue; // perturbation fully lost to rounding at this magnitude
            }
            buffers[li][ci] = plus;
            let f_plus = eval(&buffers)?;
            buffers[li][ci] = minus;
            let f_minus = eval(&buffers)?;
            buffers[li][ci] = original;

            let numeric = (f_plus - f_minus) / delta;
            let a = analytic[li][ci] as f64;
            let abs_err = (a - numeric).abs();
            scale = scale.max(a.abs()).max(numeric.abs());
            if abs_err > worst_abs {
                worst_abs = abs_err;
                worst = Some((li, ci));
            }
            checked += 1;
        }
    }

    let max_rel_err = if worst_abs == 0.0 { 0.0 } else { worst_abs / scale.max(1e-12) };
    Ok(GradCheckReport {
        max_rel_err,
        grad_scale: scale,
        coords_checked: checked,
        tolerance: opts.tolerance,
        worst,
        pass: max_rel_err <= opts.tolerance,
    })
}

/// Single-input convenience wrapper: checks every coordinate of `x`.
pub fn grad_check<F>(build: F, shape: &[usize], x: Vec<f32>, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, TensorId) -> Result<TensorId>,
{
    grad_check_multi(
        |tape, ids| build(tape, ids[0]),
        &[LeafSpec::new(shape, x)],
        &GradCheckOptions { step, tolerance, ..Default::default() },
    )
}
