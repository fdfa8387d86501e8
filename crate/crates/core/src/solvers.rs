//! The two schemes: explicit Euler on the original SDE (EM), and the
//! transform scheme (GM) — Euler on the transformed SDE followed by
//! back-transformation of every grid value.

use nalgebra::DVector;

use crate::brownian::BrownianGrid;
use crate::em::em_sweep;
use crate::error::{CoreError, Result};
use crate::problem::{Path, SdeProblem};
use crate::transform::Transform;

/// Scheme selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Em,
    Gm,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scheme::Em => write!(f, "em"),
            Scheme::Gm => write!(f, "gm"),
        }
    }
}

/// Per-step diagnostics collected while solving.
#[derive(Debug, Clone, Default)]
pub struct StepDiagnostics {
    /// For each grid value: whether it lies in the band of half-width
    /// `eps` around the surface (empty when no band width was given).
    pub in_band: Vec<bool>,
    /// GM only: fixed-point iterations spent inverting each grid value.
    pub inversion_iters: Vec<u32>,
}

/// A solved path with its scheme, in original coordinates.
#[derive(Debug, Clone)]
pub struct SchemeOutput {
    pub scheme: Scheme,
    pub step_count: usize,
    /// Grid values of the approximation in original coordinates
    /// (`step_count + 1` states, the first equal to the initial value).
    pub path: Path,
    /// GM only: the path of the transformed state `Z`.
    pub transformed_path: Option<Path>,
    pub diagnostics: StepDiagnostics,
}

/// Euler on the original (possibly discontinuous-drift) coefficients.
///
/// `band_eps`, when given, records band membership of every grid value
/// (callers typically pass the transform's band half-width).
pub fn solve_em(
    problem: &SdeProblem,
    grid: &BrownianGrid,
    step_count: usize,
    band_eps: Option<f64>,
) -> Result<SchemeOutput> {
    let path = crate::em::euler_maruyama_path(problem, grid, step_count)?;
    let in_band = band_flags(problem, &path, band_eps);
    Ok(SchemeOutput {
        scheme: Scheme::Em,
        step_count,
        path,
        transformed_path: None,
        diagnostics: StepDiagnostics {
            in_band,
            inversion_iters: Vec::new(),
        },
    })
}

/// The transform scheme: start from `Z_0 = G(x)`, run Euler with the
/// transformed coefficients, and map every grid value back through
/// `G^{-1}`. Uses exactly the same Brownian increments as [`solve_em`]
/// would on this grid, so the two schemes are coupled.
pub fn solve_gm(
    problem: &SdeProblem,
    transform: &Transform,
    grid: &BrownianGrid,
    step_count: usize,
) -> Result<SchemeOutput> {
    if grid.dim() != problem.dim {
        return Err(CoreError::Argument(format!(
            "grid dimension {} does not match problem dimension {}",
            grid.dim(),
            problem.dim
        )));
    }
    let increments = grid.increments_at(step_count)?;
    let delta = problem.horizon / step_count as f64;
    let z0 = transform.forward(&problem.initial)?;

    let mut z_path = Path::with_capacity(problem.dim, step_count + 1);
    let mut x_path = Path::with_capacity(problem.dim, step_count + 1);
    let mut iters = Vec::with_capacity(step_count + 1);

    let mut coeffs = |z: &DVector<f64>| transform.transformed_coefficients(z);
    let mut invert_err: Option<CoreError> = None;
    em_sweep(
        &z0,
        delta,
        &increments,
        problem.dim,
        &mut coeffs,
        |_, z| {
            if invert_err.is_some() {
                return;
            }
            z_path.push(z);
            match transform.inverse_with_iters(z) {
                Ok((x, n)) => {
                    x_path.push(&x);
                    iters.push(n);
                }
                Err(e) => invert_err = Some(e),
            }
        },
    )?;
    if let Some(e) = invert_err {
        return Err(e);
    }

    let band_eps = transform.band_halfwidth();
    let in_band = band_flags(problem, &x_path, band_eps);
    Ok(SchemeOutput {
        scheme: Scheme::Gm,
        step_count,
        path: x_path,
        transformed_path: Some(z_path),
        diagnostics: StepDiagnostics {
            in_band,
            inversion_iters: iters,
        },
    })
}

/// Dispatches on the scheme; the transform is only consulted for GM.
pub fn solve(
    problem: &SdeProblem,
    transform: &Transform,
    scheme: Scheme,
    grid: &BrownianGrid,
    step_count: usize,
) -> Result<SchemeOutput> {
    match scheme {
        Scheme::Em => solve_em(problem, grid, step_count, transform.band_halfwidth()),
        Scheme::Gm => solve_gm(problem, transform, grid, step_count),
    }
}

fn band_flags(problem: &SdeProblem, path: &Path, band_eps: Option<f64>) -> Vec<bool> {
    match (&problem.surface, band_eps) {
        (Some(surface), Some(eps)) => path
            .states()
            .map(|s| surface.in_band(&DVector::from_row_slice(s), eps))
            .collect(),
        _ => Vec::new(),
    }
}
