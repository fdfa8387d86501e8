//! Named built-in problems and lookup with suggestions.

use nalgebra::DVector;
use pwsde_core::brownian::BrownianGrid;
use pwsde_core::problems;
use pwsde_core::{Path, Result as CoreResult, SdeProblem};

use crate::config::{ConfigError, ExperimentConfig};

/// A registered problem: builder plus an optional exact solution usable
/// as a convergence reference.
pub struct RegistryEntry {
    pub name: &'static str,
    pub summary: &'static str,
    pub build: fn() -> SdeProblem,
    pub exact_reference: Option<fn(&BrownianGrid) -> CoreResult<Path>>,
}

/// The built-in problems.
pub fn registry() -> &'static [RegistryEntry] {
    &[
        RegistryEntry {
            name: "circle2d",
            summary: "drift discontinuous on the unit circle, degenerate noise (2D)",
            build: problems::circle2d,
            exact_reference: None,
        },
        RegistryEntry {
            name: "step1d",
            summary: "drift -sign(x) with unit noise, jump at the origin (1D)",
            build: problems::step1d,
            exact_reference: None,
        },
        RegistryEntry {
            name: "gbm1d",
            summary: "geometric Brownian motion, Lipschitz control problem (1D)",
            build: problems::gbm1d,
            exact_reference: Some(problems::gbm1d_exact_path),
        },
    ]
}

fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Finds a registered problem by name; unknown names list the registry
/// and suggest the closest match.
pub fn lookup(name: &str) -> Result<&'static RegistryEntry, ConfigError> {
    if let Some(entry) = registry().iter().find(|e| e.name == name) {
        return Ok(entry);
    }
    let known: Vec<&str> = registry().iter().map(|e| e.name).collect();
    let suggestion = registry()
        .iter()
        .map(|e| (edit_distance(name, e.name), e.name))
        .min()
        .filter(|&(d, _)| d <= 3)
        .map(|(_, n)| format!(" — did you mean '{n}'?"))
        .unwrap_or_default();
    Err(ConfigError::new(format!(
        "unknown problem '{name}'{suggestion} (registered: {})",
        known.join(", ")
    )))
}

/// Builds the named problem and applies the config's overrides
/// (initial value, horizon, surface).
pub fn build_problem(config: &ExperimentConfig) -> Result<SdeProblem, ConfigError> {
    let name = config
        .problem
        .as_deref()
        .ok_or_else(|| ConfigError::new("no problem given (use --problem or problem = ...)"))?;
    let entry = lookup(name)?;
    let mut problem = (entry.build)();
    if let Some(initial) = &config.initial {
        problem = problem
            .with_initial(DVector::from_row_slice(initial))
            .map_err(|e| ConfigError::new(e.to_string()))?;
    }
    if let Some(horizon) = config.horizon {
        problem = problem
            .with_horizon(horizon)
            .map_err(|e| ConfigError::new(e.to_string()))?;
    }
    if let Some(spec) = &config.surface {
        let surface = spec.build()?;
        if surface.ambient_dim() != problem.dim {
            return Err(ConfigError::new(format!(
                "surface dimension {} does not match problem dimension {}",
                surface.ambient_dim(),
                problem.dim
            )));
        }
        problem.surface = Some(surface);
    }
    Ok(problem)
}
