//! Strong-error estimation on coupled Brownian paths, convergence-order
//! regression, and band diagnostics (occupation time, within-step
//! excursions).
//!
//! The strong error of a scheme at step size `delta` is estimated
//! pathwise against a high-resolution reference driven by the *same*
//! Brownian path (the grid's dyadic coarsening provides the coupling),
//! as `sqrt(mean over paths of max over grid points of the squared
//! deviation at coinciding times)`. The maximum runs over the coarse
//! scheme's own grid points; the continuous-time interpolation gap is
//! not measured, so the reported value is a grid-point lower bound for
//! the sup-norm error.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::brownian::{sample_brownian, BrownianGrid};
use crate::error::{CoreError, Result};
use crate::problem::{sq_dist, Path, SdeProblem};
use crate::rng::derive_key;
use crate::solvers::{solve, Scheme};
use crate::transform::Transform;

/// One step size's estimate in a convergence experiment.
#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub delta: f64,
    /// `E[max_grid |X - X_delta|^2]^{1/2}` against the coupled reference.
    pub error: f64,
    pub n_paths: usize,
    /// Half-width of the 95% normal CI on the mean squared maximum,
    /// propagated to the square-root scale.
    pub ci_half_width: f64,
}

/// Rows (sorted by decreasing step size) plus the fitted order.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub problem: String,
    pub scheme: Scheme,
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `log2 error` against `log2 delta`.
    pub fitted_order: Option<f64>,
    pub intercept: Option<f64>,
    pub reference_delta: f64,
}

/// Parameters of a strong-error experiment.
#[derive(Debug, Clone)]
pub struct StrongErrorConfig {
    /// Step sizes to test; each must be `horizon / N` with `N` dividing
    /// `2^ref_levels`.
    pub deltas: Vec<f64>,
    pub n_paths: usize,
    pub master_seed: u64,
    /// The reference runs at `2^ref_levels` steps.
    pub ref_levels: u32,
    /// Resolution of the sampled Brownian grid, `>= ref_levels`. Defaults
    /// to `ref_levels`; setting it finer keeps the driving paths fixed
    /// while the reference resolution varies, which isolates reference
    /// bias from Monte Carlo noise.
    pub grid_levels: Option<u32>,
}

impl StrongErrorConfig {
    pub fn new(deltas: Vec<f64>, n_paths: usize, master_seed: u64, ref_levels: u32) -> Self {
        StrongErrorConfig {
            deltas,
            n_paths,
            master_seed,
            ref_levels,
            grid_levels: None,
        }
    }

    pub fn with_grid_levels(mut self, levels: u32) -> Self {
        self.grid_levels = Some(levels);
        self
    }
}

/// Reference path used for the pathwise comparison.
pub enum ReferenceSpec<'a> {
    /// The transform scheme at the finest grid — the provably convergent
    /// scheme, hence the default reference.
    GmAtFinest,
    /// A caller-supplied path factory on the full grid (e.g. an exact
    /// solution evaluated on the coupled Brownian path). Must return a
    /// path whose step count every tested step count divides.
    Custom(&'a (dyn Fn(&BrownianGrid) -> Result<Path> + Sync)),
}

/// Strong-error experiment for one scheme with the GM reference.
pub fn strong_error(
    problem: &SdeProblem,
    transform: &Transform,
    scheme: Scheme,
    config: &StrongErrorConfig,
) -> Result<ConvergenceReport> {
    let mut reports = strong_error_multi(
        problem,
        transform,
        &[scheme],
        config,
        &ReferenceSpec::GmAtFinest,
    )?;
    Ok(reports.remove(0))
}

/// As [`strong_error`] with an explicit reference.
pub fn strong_error_with_reference(
    problem: &SdeProblem,
    transform: &Transform,
    scheme: Scheme,
    config: &StrongErrorConfig,
    reference: &ReferenceSpec<'_>,
) -> Result<ConvergenceReport> {
    let mut reports = strong_error_multi(problem, transform, &[scheme], config, reference)?;
    Ok(reports.remove(0))
}

/// Runs several schemes against one shared reference per path, so a
/// GM/EM comparison pays for the expensive reference only once.
///
/// Paths are simulated in parallel but accumulated in path-index order;
/// results are bit-stable across thread counts.
pub fn strong_error_multi(
    problem: &SdeProblem,
    transform: &Transform,
    schemes: &[Scheme],
    config: &StrongErrorConfig,
    reference: &ReferenceSpec<'_>,
) -> Result<Vec<ConvergenceReport>> {
    if schemes.is_empty() {
        return Err(CoreError::Argument("no schemes given".into()));
    }
    if config.n_paths == 0 {
        return Err(CoreError::Argument("n_paths must be at least 1".into()));
    }
    let ref_steps = 1usize
        .checked_shl(config.ref_levels)
        .ok_or_else(|| CoreError::Argument("ref_levels too large".into()))?;
    let grid_levels = config.grid_levels.unwrap_or(config.ref_levels);
    if grid_levels < config.ref_levels {
        return Err(CoreError::Argument(format!(
            "grid_levels {grid_levels} below ref_levels {}",
            config.ref_levels
        )));
    }
    let mut deltas = config.deltas.clone();
    if deltas.is_empty() {
        return Err(CoreError::Argument("no step sizes given".into()));
    }
    deltas.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut step_counts = Vec::with_capacity(deltas.len());
    for &delta in &deltas {
        let n = problem.horizon / delta;
        let n_round = n.round();
        if !(n_round >= 1.0) || (n - n_round).abs() > 1e-9 * n_round {
            return Err(CoreError::Argument(format!(
                "delta {delta} is not horizon/N for integer N"
            )));
        }
        let n = n_round as usize;
        if ref_steps % n != 0 {
            return Err(CoreError::Argument(format!(
                "step count {n} does not divide the reference count {ref_steps}"
            )));
        }
        step_counts.push(n);
    }
    let max_n = *step_counts.iter().max().unwrap();
    if ref_steps / max_n < 4 {
        log::warn!(
            "reference step is only {}x finer than the finest tested delta; \
             reference bias may be visible",
            ref_steps / max_n
        );
    }

    // Per path: squared max deviation for every (scheme, delta) pair.
    let cells = schemes.len() * deltas.len();
    let per_path: Vec<Vec<f64>> = (0..config.n_paths)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let grid = sample_brownian(
                derive_key(config.master_seed, i as u64),
                problem.dim,
                problem.horizon,
                grid_levels,
            )?;
            let ref_path = match reference {
                ReferenceSpec::GmAtFinest => {
                    solve(problem, transform, Scheme::Gm, &grid, ref_steps)?.path
                }
                ReferenceSpec::Custom(f) => f(&grid)?,
            };
            let ref_step_count = ref_path.step_count();
            let mut out = Vec::with_capacity(cells);
            for &scheme in schemes {
                for &n in &step_counts {
                    if ref_step_count == 0 || ref_step_count % n != 0 {
                        return Err(CoreError::Argument(format!(
                            "reference path with {ref_step_count} steps is not nested over \
                             step count {n}"
                        )));
                    }
                    let run = solve(problem, transform, scheme, &grid, n)?;
                    let stride = ref_step_count / n;
                    let mut max_sq = 0.0f64;
                    for j in 0..=n {
                        let sq = sq_dist(run.path.state(j), ref_path.state(j * stride));
                        if sq > max_sq {
                            max_sq = sq;
                        }
                    }
                    out.push(max_sq);
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    // Fixed-order reduction (path index order).
    let reference_delta = problem.horizon / ref_steps as f64;
    let mut reports = Vec::with_capacity(schemes.len());
    for (si, &scheme) in schemes.iter().enumerate() {
        let mut rows = Vec::with_capacity(deltas.len());
        for (di, &delta) in deltas.iter().enumerate() {
            let cell = si * deltas.len() + di;
            let n = config.n_paths as f64;
            let mut sum = 0.0;
            for path_vals in &per_path {
                sum += path_vals[cell];
            }
            let mean = sum / n;
            let mut var = 0.0;
            for path_vals in &per_path {
                let d = path_vals[cell] - mean;
                var += d * d;
            }
            var /= (n - 1.0).max(1.0);
            let ci_mean = 1.96 * (var / n).sqrt();
            let error = mean.sqrt();
            let ci_half_width =
                ((mean + ci_mean).max(0.0).sqrt() - (mean - ci_mean).max(0.0).sqrt()) / 2.0;
            rows.push(ConvergenceRow {
                delta,
                error,
                n_paths: config.n_paths,
                ci_half_width,
            });
        }
        let fit = fit_order_rows(&rows).ok();
        reports.push(ConvergenceReport {
            problem: problem.name.clone(),
            scheme,
            rows,
            fitted_order: fit.map(|f| f.0),
            intercept: fit.map(|f| f.1),
            reference_delta,
        });
    }
    Ok(reports)
}

/// Least-squares fit of `log2 error` on `log2 delta` over a report's
/// rows: `(slope, intercept)`. The slope is the empirical strong order.
pub fn fit_order(report: &ConvergenceReport) -> Result<(f64, f64)> {
    fit_order_rows(&report.rows)
}

/// [`fit_order`] on bare rows. Rows with non-positive error are excluded
/// with a warning; fewer than three usable rows is an error.
pub fn fit_order_rows(rows: &[ConvergenceRow]) -> Result<(f64, f64)> {
    let usable: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| {
            if r.error > 0.0 {
                Some((r.delta.log2(), r.error.log2()))
            } else {
                log::warn!("excluding non-positive error at delta {}", r.delta);
                None
            }
        })
        .collect();
    if usable.len() < 3 {
        return Err(CoreError::Argument(format!(
            "need at least 3 usable rows for a fit, have {}",
            usable.len()
        )));
    }
    let n = usable.len() as f64;
    let mean_x = usable.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = usable.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in &usable {
        num += (x - mean_x) * (y - mean_y);
        den += (x - mean_x) * (x - mean_x);
    }
    if den == 0.0 {
        return Err(CoreError::Argument(
            "all rows share one step size; no slope".into(),
        ));
    }
    let slope = num / den;
    Ok((slope, mean_y - slope * mean_x))
}

/// One band width's occupation estimate.
#[derive(Debug, Clone)]
pub struct OccupationRow {
    pub eps: f64,
    pub delta: f64,
    /// Estimate of the expected time the Euler path spends within
    /// distance `eps` of the surface; always in `[0, horizon]`.
    pub occupation: f64,
    pub n_paths: usize,
}

/// Occupation estimates over a family of band widths, with the
/// consecutive ratios (ascending `eps`) as a linearity diagnostic.
#[derive(Debug, Clone)]
pub struct OccupationReport {
    pub problem: String,
    pub rows: Vec<OccupationRow>,
    /// `occupation[i+1] / occupation[i]`; near 2 when widths double and
    /// the occupation bound is sharp.
    pub ratios: Vec<f64>,
}

/// Estimates the expected time the Euler path spends in the band of each
/// width in `eps_list`: mean over paths of `delta * #{j : X_j in band}`,
/// counting the left endpoint of every step.
pub fn occupation_time(
    problem: &SdeProblem,
    delta: f64,
    eps_list: &[f64],
    n_paths: usize,
    master_seed: u64,
) -> Result<OccupationReport> {
    let surface = problem
        .surface
        .as_ref()
        .ok_or_else(|| CoreError::Argument("problem has no exceptional surface".into()))?;
    if eps_list.is_empty() || n_paths == 0 {
        return Err(CoreError::Argument("need eps values and paths".into()));
    }
    let reach = surface.reach();
    for &eps in eps_list {
        if !(eps > 0.0) || eps > reach {
            return Err(CoreError::Argument(format!(
                "eps {eps} outside (0, reach = {reach}]"
            )));
        }
    }
    let levels = levels_for_delta(problem.horizon, delta)?;
    let steps = 1usize << levels;
    let mut eps_sorted: Vec<f64> = eps_list.to_vec();
    eps_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let per_path: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let grid = sample_brownian(
                derive_key(master_seed, i as u64),
                problem.dim,
                problem.horizon,
                levels,
            )?;
            let path = crate::em::euler_maruyama_path(problem, &grid, steps)?;
            let mut counts = vec![0usize; eps_sorted.len()];
            for j in 0..steps {
                let dist = surface.distance(&DVector::from_row_slice(path.state(j)));
                for (k, &eps) in eps_sorted.iter().enumerate() {
                    if dist < eps {
                        counts[k] += 1;
                    }
                }
            }
            Ok(counts.iter().map(|&c| delta * c as f64).collect())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(eps_sorted.len());
    for (k, &eps) in eps_sorted.iter().enumerate() {
        let mut sum = 0.0;
        for p in &per_path {
            sum += p[k];
        }
        rows.push(OccupationRow {
            eps,
            delta,
            occupation: sum / n_paths as f64,
            n_paths,
        });
    }
    let ratios = rows
        .windows(2)
        .map(|w| w[1].occupation / w[0].occupation)
        .collect();
    Ok(OccupationReport {
        problem: problem.name.clone(),
        rows,
        ratios,
    })
}

/// Probability that the continuous Euler interpolation, sub-sampled at 8
/// Brownian-bridge points per step, wanders further than `eps` from the
/// step's left endpoint at least once over the horizon.
pub fn excursion_probability(
    problem: &SdeProblem,
    delta: f64,
    eps: f64,
    n_paths: usize,
    master_seed: u64,
) -> Result<f64> {
    Ok(excursion_probabilities(problem, delta, &[eps], n_paths, master_seed)?[0])
}

/// [`excursion_probability`] for several thresholds on one set of paths;
/// the estimates are pathwise monotone (non-increasing in `eps`) by
/// construction.
pub fn excursion_probabilities(
    problem: &SdeProblem,
    delta: f64,
    eps_list: &[f64],
    n_paths: usize,
    master_seed: u64,
) -> Result<Vec<f64>> {
    if eps_list.is_empty() || n_paths == 0 {
        return Err(CoreError::Argument("need eps values and paths".into()));
    }
    for &eps in eps_list {
        if !(eps > 0.0) {
            return Err(CoreError::Argument(format!("eps must be positive, got {eps}")));
        }
    }
    const SUB: usize = 8;
    let coarse_levels = levels_for_delta(problem.horizon, delta)?;
    let levels = coarse_levels + 3; // 8 bridge points per step
    let steps = 1usize << coarse_levels;
    let d = problem.dim;

    // Largest within-step deviation of the interpolation, per path.
    let maxima: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let grid = sample_brownian(
                derive_key(master_seed, i as u64),
                problem.dim,
                problem.horizon,
                levels,
            )?;
            let fine = grid.finest_increments();
            let mut x = problem.initial.clone();
            let mut max_dev = 0.0f64;
            let mut w = DVector::zeros(d);
            for j in 0..steps {
                let mu = (problem.drift)(&x);
                let sigma = (problem.diffusion)(&x);
                if !mu.iter().all(|v| v.is_finite()) || !sigma.iter().all(|v| v.is_finite()) {
                    return Err(CoreError::NonFinite {
                        quantity: "coefficients",
                        step: j,
                        state: x.as_slice().to_vec(),
                    });
                }
                w.fill(0.0);
                for k in 0..SUB {
                    let idx = j * SUB + k;
                    for c in 0..d {
                        w[c] += fine[idx * d + c];
                    }
                    // X_s - X_j = mu (s - t_j) + sigma (W_s - W_{t_j})
                    let dt = delta * (k + 1) as f64 / SUB as f64;
                    let mut dev = &mu * dt;
                    dev.gemv(1.0, &sigma, &w, 1.0);
                    let norm = dev.norm();
                    if norm > max_dev {
                        max_dev = norm;
                    }
                }
                // Advance with the full-step increment (k = SUB partial sum).
                x.axpy(delta, &mu, 1.0);
                x.gemv(1.0, &sigma, &w, 1.0);
            }
            Ok(max_dev)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(eps_list
        .iter()
        .map(|&eps| {
            let hits = maxima.iter().filter(|&&m| m > eps).count();
            hits as f64 / n_paths as f64
        })
        .collect())
}

fn levels_for_delta(horizon: f64, delta: f64) -> Result<u32> {
    if !(delta > 0.0) || delta > horizon {
        return Err(CoreError::Argument(format!(
            "delta {delta} outside (0, horizon = {horizon}]"
        )));
    }
    let ratio = horizon / delta;
    let levels = ratio.log2().round() as u32;
    if (ratio - (1u64 << levels) as f64).abs() > 1e-9 * ratio {
        return Err(CoreError::Argument(format!(
            "delta {delta} is not a dyadic fraction of the horizon {horizon}"
        )));
    }
    Ok(levels)
}
