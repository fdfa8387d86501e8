//! Problem definitions and path storage.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{CoreError, Result};
use crate::geometry::Hypersurface;

/// Drift coefficient: a total map from states to drift vectors.
pub type DriftFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Diffusion coefficient: a total map from states to d-by-d matrices.
pub type DiffusionFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// A time-homogeneous SDE `dX = mu(X) dt + sigma(X) dW` on `R^d`, with an
/// optional hypersurface across which the drift may jump.
///
/// `drift` and `diffusion` must be defined everywhere, including on the
/// surface itself; the value taken exactly on the surface is a
/// measure-zero convention left to the callable (the built-in problems
/// use closed-region conventions).
#[derive(Clone)]
pub struct SdeProblem {
    pub name: String,
    pub dim: usize,
    pub drift: DriftFn,
    pub diffusion: DiffusionFn,
    pub surface: Option<Hypersurface>,
    pub initial: DVector<f64>,
    pub horizon: f64,
}

impl SdeProblem {
    /// Validates dimensions and horizon and assembles the problem.
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        drift: DriftFn,
        diffusion: DiffusionFn,
        surface: Option<Hypersurface>,
        initial: DVector<f64>,
        horizon: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(CoreError::Argument("dim must be at least 1".into()));
        }
        if initial.len() != dim {
            return Err(CoreError::Argument(format!(
                "initial value has {} components, expected {dim}",
                initial.len()
            )));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(CoreError::Argument(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if let Some(surface) = &surface {
            let sd = surface.ambient_dim();
            if sd != dim {
                return Err(CoreError::Argument(format!(
                    "surface lives in dimension {sd}, problem in dimension {dim}"
                )));
            }
        }
        Ok(SdeProblem {
            name: name.into(),
            dim,
            drift,
            diffusion,
            surface,
            initial,
            horizon,
        })
    }

    /// Same problem with a different initial value.
    pub fn with_initial(mut self, initial: DVector<f64>) -> Result<Self> {
        if initial.len() != self.dim {
            return Err(CoreError::Argument(format!(
                "initial value has {} components, expected {}",
                initial.len(),
                self.dim
            )));
        }
        self.initial = initial;
        Ok(self)
    }

    /// Same problem with a different horizon.
    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(CoreError::Argument(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        self.horizon = horizon;
        Ok(self)
    }
}

impl std::fmt::Debug for SdeProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SdeProblem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("surface", &self.surface)
            .field("initial", &self.initial.as_slice())
            .field("horizon", &self.horizon)
            .finish()
    }
}

/// Grid values of one simulated path, stored flat: `step_count + 1`
/// states of `dim` components each.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    dim: usize,
    data: Vec<f64>,
}

impl Path {
    pub fn with_capacity(dim: usize, states: usize) -> Self {
        Path {
            dim,
            data: Vec::with_capacity(dim * states),
        }
    }

    pub fn push(&mut self, state: &DVector<f64>) {
        debug_assert_eq!(state.len(), self.dim);
        self.data.extend_from_slice(state.as_slice());
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of states stored (`step_count + 1` for a complete path).
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn step_count(&self) -> usize {
        self.len().saturating_sub(1)
    }

    /// State at grid index `j` as a borrowed slice.
    pub fn state(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    /// State at grid index `j` as a nalgebra view.
    pub fn state_view(&self, j: usize) -> DVectorView<'_, f64> {
        DVectorView::from_slice(self.state(j), self.dim)
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }
}

/// Squared Euclidean distance between two equally sized slices.
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
}
