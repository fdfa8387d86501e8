//! Built-in benchmark problems.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::brownian::BrownianGrid;
use crate::error::Result;
use crate::geometry::Hypersurface;
use crate::problem::{Path, SdeProblem};

/// Drift discontinuous on the unit circle with degenerate diffusion:
///
/// ```text
/// mu(x)    = (1, 1)         for |x|^2 > 1
///          = (-x1, x2)      for |x|^2 <= 1      (closed-region convention)
/// sigma(x) = [x1 0; x2 0] / (1 + |x|^2)
/// ```
///
/// Starts at `(0.5, 0.5)` with horizon 1, so the deterministic skeleton
/// crosses the circle around `t ~ 0.66` and paths genuinely interact
/// with the discontinuity. (The origin is a fixed point of these
/// coefficients — `mu(0) = 0`, `sigma(0) = 0` — and cannot serve as a
/// starting point.)
pub fn circle2d() -> SdeProblem {
    SdeProblem::new(
        "circle2d",
        2,
        Arc::new(|x: &DVector<f64>| {
            if x[0] * x[0] + x[1] * x[1] > 1.0 {
                DVector::from_vec(vec![1.0, 1.0])
            } else {
                DVector::from_vec(vec![-x[0], x[1]])
            }
        }),
        Arc::new(|x: &DVector<f64>| {
            let w = 1.0 / (1.0 + x[0] * x[0] + x[1] * x[1]);
            DMatrix::from_row_slice(2, 2, &[w * x[0], 0.0, w * x[1], 0.0])
        }),
        Some(Hypersurface::sphere(DVector::zeros(2), 1.0).expect("unit circle")),
        DVector::from_vec(vec![0.5, 0.5]),
        1.0,
    )
    .expect("circle2d is well formed")
}

/// Minimal 1D discontinuous-drift instance: `mu(x) = -sign(x)` (value -1
/// at 0 by the closed-region convention), unit diffusion, discontinuity
/// at the origin, start at 0.1, horizon 1. The jump offset is exactly 1.
pub fn step1d() -> SdeProblem {
    SdeProblem::new(
        "step1d",
        1,
        Arc::new(|x: &DVector<f64>| {
            DVector::from_element(1, if x[0] >= 0.0 { -1.0 } else { 1.0 })
        }),
        Arc::new(|x: &DVector<f64>| DMatrix::from_element(x.len(), x.len(), 1.0)),
        Some(Hypersurface::point_set_1d(vec![0.0]).expect("origin")),
        DVector::from_element(1, 0.1),
        1.0,
    )
    .expect("step1d is well formed")
}

/// Drift rate of [`gbm1d`].
pub const GBM_A: f64 = 0.5;
/// Volatility of [`gbm1d`].
pub const GBM_B: f64 = 0.2;
/// Initial value of [`gbm1d`].
pub const GBM_X0: f64 = 1.0;

/// Geometric Brownian motion `dX = a X dt + b X dW` with `a = 0.5`,
/// `b = 0.2`, `X_0 = 1`: the globally Lipschitz control problem with the
/// closed-form solution `X_t = X_0 exp((a - b^2/2) t + b W_t)`.
pub fn gbm1d() -> SdeProblem {
    SdeProblem::new(
        "gbm1d",
        1,
        Arc::new(|x: &DVector<f64>| x * GBM_A),
        Arc::new(|x: &DVector<f64>| DMatrix::from_element(1, 1, GBM_B * x[0])),
        None,
        DVector::from_element(1, GBM_X0),
        1.0,
    )
    .expect("gbm1d is well formed")
}

/// Exact GBM solution evaluated on the coupled Brownian path at every
/// finest grid time: `2^levels + 1` states. Serves as an independent
/// reference for convergence experiments on [`gbm1d`].
pub fn gbm1d_exact_path(grid: &BrownianGrid) -> Result<Path> {
    let n = grid.finest_steps();
    let dt = grid.finest_delta();
    let drift_part = GBM_A - GBM_B * GBM_B / 2.0;
    let mut path = Path::with_capacity(1, n + 1);
    let mut w = 0.0;
    let mut state = DVector::from_element(1, GBM_X0);
    path.push(&state);
    let inc = grid.finest_increments();
    for j in 0..n {
        w += inc[j];
        let t = dt * (j + 1) as f64;
        state[0] = GBM_X0 * (drift_part * t + GBM_B * w).exp();
        path.push(&state);
    }
    Ok(path)
}
