use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{activation_pattern, init, loss_and_grad, Arch, ModelParams};
use crate::error::{Error, Result};
use crate::seed::substream;

/// Finite-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-5;
/// Number of coordinates sampled per check.
pub const GRAD_CHECK_COORDS: usize = 200;
/// Relative errors are measured against `max(|analytic|, |numeric|, floor)`.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates dropped because the difference stencil crossed a
    /// rectifier kink.
    pub skipped: usize,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
}

/// Gaussian inputs and uniform labels sized for `arch`.
pub fn random_batch(arch: &Arch, batch: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut rng = substream(seed, "grad-check-batch", &[]);
    let x = Array2::from_shape_simple_fn((batch, arch.input_width()), || rng.sample(StandardNormal));
    let n = arch.n_beams();
    let y = (0..batch).map(|_| rng.random_range(0..n)).collect();
    (x, y)
}

/// Sorted coordinate subset examined for a given seed.
pub fn check_coordinates(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = substream(seed, "grad-check-coords", &[]);
    let mut coords = sample(&mut rng, n, GRAD_CHECK_COORDS.min(n)).into_vec();
    coords.sort_unstable();
    coords
}

/// Compares `analytic` against central differences on a random coordinate
/// subset of `params`.
pub fn compare_gradients(
    params: &ModelParams,
    inputs: ArrayView2<f64>,
    labels: &[usize],
    analytic: &[f64],
    seed: u64,
) -> Result<GradCheckReport> {
    if inputs.nrows() == 0 {
        return Err(Error::validation("gradient check needs a nonempty batch"));
    }
    let coords = check_coordinates(params.param_count(), seed);

    let base_pattern = activation_pattern(params, inputs)?;
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
        skipped: 0,
        worst_index: coords.first().copied().unwrap_or(0),
    };
    for &i in &coords {
        let orig = probe.flat[i];
        probe.flat[i] = orig + GRAD_CHECK_STEP;
        let kink_up = activation_pattern(&probe, inputs)? != base_pattern;
        let (lp, _) = loss_and_grad(&probe, inputs, labels)?;
        probe.flat[i] = orig - GRAD_CHECK_STEP;
        let kink_down = activation_pattern(&probe, inputs)? != base_pattern;
        let (lm, _) = loss_and_grad(&probe, inputs, labels)?;
        probe.flat[i] = orig;
        if kink_up || kink_down {
            report.skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * GRAD_CHECK_STEP);
        let abs = (analytic[i] - numeric).abs();
        let rel = abs / analytic[i].abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        report.checked += 1;
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    Ok(report)
}

/// Freshly initialized model of `arch`, random batch, analytic gradient
/// checked against central differences.
pub fn grad_check(arch: &Arch, seed: u64, batch: usize) -> Result<GradCheckReport> {
    let params = init(arch, seed);
    let (x, y) = random_batch(arch, batch, seed);
    let (_, g) = loss_and_grad(&params, x.view(), &y)?;
    compare_gradients(&params, x.view(), &y, &g, seed)
}
