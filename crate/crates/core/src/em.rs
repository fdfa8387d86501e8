//! The explicit Euler scheme for SDEs: coefficients frozen at the left
//! endpoint of each step, driven by pre-sampled Brownian increments.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::brownian::BrownianGrid;
use crate::error::{CoreError, Result};
use crate::problem::{Path, SdeProblem};

/// One-step coefficients `(mu, sigma)` evaluated at the current state.
pub(crate) type CoeffFn<'a> = dyn FnMut(&DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> + 'a;

/// Runs the explicit scheme `X_{j+1} = X_j + mu(X_j) delta + sigma(X_j) dW_j`
/// over the given increments, invoking `on_state` for every grid value
/// including the initial one.
///
/// The additive update is performed in place (axpy/gemv), so a zero drift
/// and identity diffusion reproduce the raw increment sums exactly.
pub(crate) fn em_sweep(
    initial: &DVector<f64>,
    delta: f64,
    increments: &[f64],
    dim: usize,
    coeffs: &mut CoeffFn<'_>,
    mut on_state: impl FnMut(usize, &DVector<f64>),
) -> Result<()> {
    let step_count = increments.len() / dim;
    let mut x = initial.clone();
    on_state(0, &x);
    for j in 0..step_count {
        let (mu, sigma) = coeffs(&x)?;
        if !mu.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite {
                quantity: "drift",
                step: j,
                state: x.as_slice().to_vec(),
            });
        }
        if !sigma.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite {
                quantity: "diffusion",
                step: j,
                state: x.as_slice().to_vec(),
            });
        }
        let dw = DVectorView::from_slice(&increments[j * dim..(j + 1) * dim], dim);
        // x += delta * mu; x += sigma * dw
        x.axpy(delta, &mu, 1.0);
        x.gemv(1.0, &sigma, &dw, 1.0);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite {
                quantity: "state",
                step: j,
                state: x.as_slice().to_vec(),
            });
        }
        on_state(j + 1, &x);
    }
    Ok(())
}

/// Euler path of `problem` on `step_count` steps, driven by the coarsened
/// increments of `grid`. `step_count` must divide `2^grid.levels()`.
///
/// Pure in `(problem, grid, step_count)`: repeated calls return identical
/// paths.
pub fn euler_maruyama_path(
    problem: &SdeProblem,
    grid: &BrownianGrid,
    step_count: usize,
) -> Result<Path> {
    if grid.dim() != problem.dim {
        return Err(CoreError::Argument(format!(
            "grid dimension {} does not match problem dimension {}",
            grid.dim(),
            problem.dim
        )));
    }
    let increments = grid.increments_at(step_count)?;
    let delta = problem.horizon / step_count as f64;
    let mut path = Path::with_capacity(problem.dim, step_count + 1);
    let drift = problem.drift.clone();
    let diffusion = problem.diffusion.clone();
    let mut coeffs = move |x: &DVector<f64>| Ok((drift(x), diffusion(x)));
    em_sweep(
        &problem.initial,
        delta,
        &increments,
        problem.dim,
        &mut coeffs,
        |_, x| path.push(x),
    )?;
    Ok(path)
}
