//! The drift-straightening transform.
//!
//! For a drift that jumps across a hypersurface, the map
//!
//! ```text
//! G(x) = x + alpha(p(x)) * phi_bar(s(x)),
//! phi_bar(s) = s * |s| * phi(s / c),
//! ```
//!
//! with `p` the nearest-point projection, `s` the signed distance, `phi`
//! a compactly supported C^2 bump, and `alpha` the jump-offset field,
//! produces an SDE in `Z = G(X)` whose drift is continuous: the jump of
//! the second normal derivative of `G` cancels the drift jump. `G` is the
//! identity outside the band of half-width `c` around the surface and a
//! near-identity contraction perturbation inside it, so it is globally
//! invertible and the inverse is computable by fixed-point iteration.
//!
//! `alpha` offsets the one-sided drift limits against the diffusion
//! pushed through the normal:
//!
//! ```text
//! alpha(xi) = lim_{h->0} ( mu(xi - h n) - mu(xi + h n) )
//!                        / ( 2 |sigma(xi)^T n(xi)|^2 ).
//! ```
//!
//! `alpha` flips sign with the normal orientation while `G` itself does
//! not; the orientation is therefore a free convention, fixed per surface
//! variant and testable via [`TransformOptions::flip_normal`].

use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, Result};
use crate::geometry::Hypersurface;
use crate::problem::SdeProblem;

/// Lower bound accepted for `|sigma^T n|^2` on the surface.
const SIGMA_NORMAL_FLOOR: f64 = 1e-8;

/// Base and halved step for the one-sided drift limit.
const ALPHA_RICHARDSON_H: f64 = 1e-4;

/// States closer to the surface than this are nudged before evaluating
/// transformed coefficients.
const NUDGE_BAND: f64 = 1e-10;
const NUDGE_SIZE: f64 = 1e-8;

/// Compactly supported bump `(1+u)^3 (1-u)^3` on `|u| <= 1`, zero
/// outside; value and first two derivatives vanish at the edges.
#[inline]
pub fn bump(u: f64) -> f64 {
    if u.abs() <= 1.0 {
        let w = 1.0 - u * u;
        w * w * w
    } else {
        0.0
    }
}

/// First derivative of [`bump`].
#[inline]
pub fn bump_d1(u: f64) -> f64 {
    if u.abs() <= 1.0 {
        let w = 1.0 - u * u;
        -6.0 * u * w * w
    } else {
        0.0
    }
}

/// Second derivative of [`bump`].
#[inline]
pub fn bump_d2(u: f64) -> f64 {
    if u.abs() <= 1.0 {
        let w = 1.0 - u * u;
        w * (30.0 * u * u - 6.0)
    } else {
        0.0
    }
}

/// The scalar profile `phi_bar(s) = s |s| phi(s/c)`.
#[inline]
pub fn phi_bar(s: f64, c: f64) -> f64 {
    s * s.abs() * bump(s / c)
}

/// d/ds of [`phi_bar`]; continuous, vanishes at `s = 0` and `|s| >= c`.
#[inline]
pub fn phi_bar_d1(s: f64, c: f64) -> f64 {
    2.0 * s.abs() * bump(s / c) + s * s.abs() * bump_d1(s / c) / c
}

/// d^2/ds^2 of [`phi_bar`]; jumps by 4 across `s = 0`
/// (`phi_bar_d2(0+) = 2`, `phi_bar_d2(0-) = -2`). The value exactly at
/// `s = 0` takes the positive side.
#[inline]
pub fn phi_bar_d2(s: f64, c: f64) -> f64 {
    let sign = if s >= 0.0 { 1.0 } else { -1.0 };
    2.0 * sign * bump(s / c) + 4.0 * s.abs() * bump_d1(s / c) / c
        + s * s.abs() * bump_d2(s / c) / (c * c)
}

/// Jump offset for a single 1D discontinuity from the one-sided drift
/// limits: `(mu_left - mu_right) / (2 sigma^2)`.
///
/// Requires nonzero diffusion at the jump; a genuine jump with
/// `sigma = 0` cannot be offset and is a model error.
pub fn alpha_1d(mu_left: f64, mu_right: f64, sigma_at_xi: f64) -> Result<f64> {
    if mu_left == mu_right {
        return Ok(0.0);
    }
    let s2 = sigma_at_xi * sigma_at_xi;
    if s2 < SIGMA_NORMAL_FLOOR {
        return Err(CoreError::Model(format!(
            "drift jumps ({mu_left} vs {mu_right}) but sigma^2 = {s2} at the discontinuity"
        )));
    }
    Ok((mu_left - mu_right) / (2.0 * s2))
}

/// Jump-offset vector at a surface point, by Richardson extrapolation of
/// the one-sided difference quotient at steps `1e-4` and `5e-5` (with a
/// third node at `2.5e-5` to bound the extrapolation residual).
pub fn alpha_surface(problem: &SdeProblem, xi: &DVector<f64>) -> Result<DVector<f64>> {
    let surface = problem.surface.as_ref().ok_or_else(|| {
        CoreError::Argument("problem has no exceptional surface".into())
    })?;
    alpha_surface_oriented(problem, surface, xi, 1.0)
}

fn alpha_surface_oriented(
    problem: &SdeProblem,
    surface: &Hypersurface,
    xi: &DVector<f64>,
    orientation: f64,
) -> Result<DVector<f64>> {
    let xi_on = if surface.distance(xi) > crate::geometry::ON_SURFACE_TOL {
        surface.project(xi)?
    } else {
        xi.clone()
    };
    let normal = surface.unit_normal(&xi_on)? * orientation;
    let sigma = (problem.diffusion)(&xi_on);
    let sigma_t_n = sigma.tr_mul(&normal);
    let denom_sq = sigma_t_n.norm_squared();
    if !(denom_sq >= SIGMA_NORMAL_FLOOR) {
        return Err(CoreError::Model(format!(
            "|sigma^T n|^2 = {denom_sq} below {SIGMA_NORMAL_FLOOR} at {:?}",
            xi_on.as_slice()
        )));
    }
    let mut mu_scale = 0.0f64;
    let mut quotient = |h: f64| -> DVector<f64> {
        let below = (problem.drift)(&(&xi_on - &normal * h));
        let above = (problem.drift)(&(&xi_on + &normal * h));
        mu_scale = mu_scale.max((below.norm() + above.norm()) / (2.0 * denom_sq));
        (below - above) / (2.0 * denom_sq)
    };
    let f1 = quotient(ALPHA_RICHARDSON_H);
    let f2 = quotient(ALPHA_RICHARDSON_H / 2.0);
    let f3 = quotient(ALPHA_RICHARDSON_H / 4.0);
    let estimate = &f2 * 2.0 - &f1;
    let refined = &f3 * 2.0 - &f2;
    let residual = (&refined - &estimate).norm();
    if !estimate.iter().all(|v| v.is_finite()) {
        return Err(CoreError::Numeric(format!(
            "non-finite drift limit at {:?}",
            xi_on.as_slice()
        )));
    }
    // A limit below double-precision resolvability is a continuous
    // drift; snap it so the transform degenerates to the exact identity.
    if estimate.norm() <= 1e-12 * (1.0 + mu_scale) {
        return Ok(DVector::zeros(estimate.len()));
    }
    if residual > 1e-5 * (1.0 + estimate.norm()) {
        return Err(CoreError::Numeric(format!(
            "one-sided drift limit did not converge at {:?} (residual {residual:.3e})",
            xi_on.as_slice()
        )));
    }
    Ok(estimate)
}

/// Construction knobs; defaults build the standard transform.
#[derive(Debug, Clone, Default)]
pub struct TransformOptions {
    /// Build with the reversed normal orientation. `alpha` flips sign,
    /// the transform itself must not change; exposed for that check.
    pub flip_normal: bool,
    /// Use this localization width instead of the derived one. Must not
    /// exceed the certified bound.
    pub c_override: Option<f64>,
}

/// Diagnostics recorded while building a transform.
#[derive(Debug, Clone)]
pub struct TransformSummary {
    /// Band half-width; `None` for the identity transform.
    pub c: Option<f64>,
    pub sup_alpha: f64,
    /// Largest operator norm of `dG - I` seen on the certification grid.
    pub certificate_norm: f64,
    /// Largest first-difference quotient of `alpha` along the surface.
    pub alpha_deriv_sup: f64,
    /// Smallest `|sigma^T n|^2` seen on the surface samples.
    pub min_sigma_normal_sq: f64,
}

enum AlphaField {
    /// One scalar per 1D discontinuity point, aligned with the surface's
    /// point list; precomputed at construction.
    PerPoint(Vec<f64>),
    /// Evaluated exactly on demand at the projected point. (Caching by
    /// quantized surface cell was tried and rejected: the cell-boundary
    /// jumps it injects into `G - id` exceed the inversion tolerance and
    /// stall the fixed-point iteration. Two extrapolated drift limits
    /// per lookup are cheap enough to pay every time.)
    OnSurface,
}

struct Localized {
    alpha: AlphaField,
    c: f64,
    sup_alpha: f64,
    orientation: f64,
    summary: TransformSummary,
}

enum Kind {
    /// No exceptional surface: `G` is the identity.
    Identity,
    Localized(Box<Localized>),
}

/// The transform built for one problem: `G`, its inverse, derivatives,
/// and the coefficients of the transformed SDE.
pub struct Transform {
    problem: SdeProblem,
    kind: Kind,
}

impl Transform {
    /// Builds and certifies the transform for `problem`.
    ///
    /// Validates the standing assumptions on a deterministic sample grid
    /// (non-degenerate `sigma^T n`, finite bounded coefficients near the
    /// surface, finite `alpha` with finite first differences along the
    /// surface), then derives the band width `c`:
    ///
    /// - 1D point sets: `0.9 * min(1/(6 max|alpha|), min_gap/2, reach)`,
    ///   falling back to unit scale when unconstrained;
    /// - otherwise: start at `0.9 * min(reach, 1/(6 sup|alpha|))` and
    ///   halve until the contraction certificate holds (operator norm of
    ///   `dG - I` at most 1/2 on a band grid of >= 10^3 points).
    pub fn build(problem: &SdeProblem) -> Result<Transform> {
        Transform::build_with(problem, TransformOptions::default())
    }

    pub fn build_with(problem: &SdeProblem, options: TransformOptions) -> Result<Transform> {
        let Some(surface) = problem.surface.clone() else {
            return Ok(Transform {
                problem: problem.clone(),
                kind: Kind::Identity,
            });
        };
        let orientation = if options.flip_normal { -1.0 } else { 1.0 };

        let extent = 4.0 * (1.0 + problem.initial.norm() + problem.horizon.sqrt());
        let samples = surface.surface_samples(96, extent)?;

        // alpha on the validation grid, plus the assumption checks.
        let mut alphas = Vec::with_capacity(samples.len());
        let mut min_sigma_normal_sq = f64::INFINITY;
        for xi in &samples {
            let normal = surface.unit_normal(xi)?;
            let sigma_t_n = (problem.diffusion)(xi).tr_mul(&normal);
            min_sigma_normal_sq = min_sigma_normal_sq.min(sigma_t_n.norm_squared());
            alphas.push(alpha_surface_oriented(problem, &surface, xi, orientation)?);
        }
        let sup_alpha = alphas.iter().map(|a| a.norm()).fold(0.0, f64::max);
        if !sup_alpha.is_finite() {
            return Err(CoreError::Model("alpha is unbounded on the surface".into()));
        }
        let mut alpha_deriv_sup = 0.0f64;
        for (i, a) in alphas.iter().enumerate() {
            let j = (i + 1) % alphas.len();
            let gap = (&samples[i] - &samples[j]).norm();
            if gap > 1e-9 {
                alpha_deriv_sup = alpha_deriv_sup.max((a - &alphas[j]).norm() / gap);
            }
        }
        if !alpha_deriv_sup.is_finite() {
            return Err(CoreError::Model(
                "alpha has unbounded variation along the surface".into(),
            ));
        }

        let alpha_field = match &surface {
            Hypersurface::PointSet1D { .. } => {
                AlphaField::PerPoint(alphas.iter().map(|a| a[0]).collect())
            }
            _ => AlphaField::OnSurface,
        };

        let make = |c: f64, summary: TransformSummary| Transform {
            problem: problem.clone(),
            kind: Kind::Localized(Box::new(Localized {
                alpha: match &alpha_field {
                    AlphaField::PerPoint(v) => AlphaField::PerPoint(v.clone()),
                    AlphaField::OnSurface => AlphaField::OnSurface,
                },
                c,
                sup_alpha,
                orientation,
                summary,
            })),
        };
        let base_summary = TransformSummary {
            c: None,
            sup_alpha,
            certificate_norm: 0.0,
            alpha_deriv_sup,
            min_sigma_normal_sq,
        };

        if let Hypersurface::PointSet1D { points } = &surface {
            let mut c_raw = surface.reach();
            if sup_alpha > 0.0 {
                c_raw = c_raw.min(1.0 / (6.0 * sup_alpha));
            }
            if points.len() > 1 {
                let min_gap = points
                    .windows(2)
                    .map(|w| w[1] - w[0])
                    .fold(f64::INFINITY, f64::min);
                c_raw = c_raw.min(min_gap / 2.0);
            }
            // Unconstrained (single point, alpha = 0): default to unit scale.
            let mut c = if c_raw.is_finite() { 0.9 * c_raw } else { 0.9 };
            if let Some(over) = options.c_override {
                if !(over > 0.0 && over <= c / 0.9) {
                    return Err(CoreError::Model(format!(
                        "c override {over} outside the certified range (0, {}]",
                        c / 0.9
                    )));
                }
                c = over;
            }
            let mut summary = base_summary.clone();
            summary.c = Some(c);
            let mut t = make(c, summary);
            let norm = t.certificate_norm_on_grid(&samples, c, 0x0)?;
            if let Kind::Localized(loc) = &mut t.kind {
                loc.summary.certificate_norm = norm;
            }
            // Guaranteed by c < 1/(6 |alpha|); recorded, not re-derived.
            debug_assert!(norm <= 0.5, "1D certificate norm {norm}");
            return Ok(t);
        }

        // Multi-dimensional: halve until the contraction certificate holds.
        let mut c_raw = surface.reach();
        if sup_alpha > 0.0 {
            c_raw = c_raw.min(1.0 / (6.0 * sup_alpha));
        }
        let mut c = if c_raw.is_finite() { 0.9 * c_raw } else { 0.9 };
        if let Some(over) = options.c_override {
            if !(over > 0.0 && over <= surface.reach()) {
                return Err(CoreError::Model(format!(
                    "c override {over} outside (0, reach]"
                )));
            }
            c = over;
        }
        for _ in 0..40 {
            let mut summary = base_summary.clone();
            summary.c = Some(c);
            let mut t = make(c, summary);
            let norm = t.certificate_norm_on_grid(&samples, c, 0x0)?;
            if norm <= 0.5 {
                if let Kind::Localized(loc) = &mut t.kind {
                    loc.summary.certificate_norm = norm;
                }
                return Ok(t);
            }
            c /= 2.0;
        }
        Err(CoreError::Model(
            "transform not certifiable: contraction certificate failed after 40 halvings".into(),
        ))
    }

    /// Max operator norm of `dG - I` over band points around the given
    /// surface samples; also checks coefficient finiteness there. The
    /// `salt` offsets the depth fractions so repeat runs can use a fresh
    /// grid.
    pub fn certificate_norm_on_grid(
        &self,
        surface_points: &[DVector<f64>],
        c: f64,
        salt: u64,
    ) -> Result<f64> {
        let surface = self.problem.surface.as_ref().ok_or_else(|| {
            CoreError::Argument("identity transform has no certificate".into())
        })?;
        let shift = (salt as f64 % 7.0) * 0.01;
        let depths = [0.1 + shift, 0.25, 0.4, 0.55, 0.7, 0.85 + shift / 2.0];
        let mut worst = 0.0f64;
        for xi in surface_points {
            let normal = surface.unit_normal(xi)?;
            for &f in &depths {
                for sign in [-1.0, 1.0] {
                    let x = xi + &normal * (sign * f * c);
                    let mu = (self.problem.drift)(&x);
                    let sigma = (self.problem.diffusion)(&x);
                    if !mu.iter().all(|v| v.is_finite()) || !sigma.iter().all(|v| v.is_finite())
                    {
                        return Err(CoreError::Model(format!(
                            "coefficients not finite near the surface at {:?}",
                            x.as_slice()
                        )));
                    }
                    let jac = self.jacobian(&x)?;
                    let dim = x.len();
                    let dev = &jac - DMatrix::<f64>::identity(dim, dim);
                    let op = dev.svd(false, false).singular_values[0];
                    worst = worst.max(op);
                }
            }
        }
        Ok(worst)
    }

    pub fn problem(&self) -> &SdeProblem {
        &self.problem
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, Kind::Identity)
    }

    /// Band half-width `c`; `None` for the identity transform.
    pub fn band_halfwidth(&self) -> Option<f64> {
        match &self.kind {
            Kind::Identity => None,
            Kind::Localized(loc) => Some(loc.c),
        }
    }

    pub fn sup_alpha(&self) -> f64 {
        match &self.kind {
            Kind::Identity => 0.0,
            Kind::Localized(loc) => loc.sup_alpha,
        }
    }

    pub fn summary(&self) -> TransformSummary {
        match &self.kind {
            Kind::Identity => TransformSummary {
                c: None,
                sup_alpha: 0.0,
                certificate_norm: 0.0,
                alpha_deriv_sup: 0.0,
                min_sigma_normal_sq: f64::INFINITY,
            },
            Kind::Localized(loc) => loc.summary.clone(),
        }
    }

    /// `alpha` at a surface point, with this transform's orientation;
    /// evaluated exactly (no memo).
    pub fn alpha_at(&self, xi: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.kind {
            Kind::Identity => Ok(DVector::zeros(self.problem.dim)),
            Kind::Localized(loc) => {
                let surface = self.problem.surface.as_ref().unwrap();
                alpha_surface_oriented(&self.problem, surface, xi, loc.orientation)
            }
        }
    }

    fn surface(&self) -> &Hypersurface {
        self.problem.surface.as_ref().expect("localized transform has a surface")
    }

    /// Oriented signed distance.
    fn sdist(&self, loc: &Localized, x: &DVector<f64>) -> f64 {
        loc.orientation * self.surface().signed_distance(x)
    }

    /// Exact `alpha(p(x))` for a point near the surface.
    fn alpha_exact_near(&self, loc: &Localized, x: &DVector<f64>) -> Result<DVector<f64>> {
        match &loc.alpha {
            AlphaField::PerPoint(values) => {
                let p = self.surface().project(x)?;
                Ok(DVector::from_element(1, values[self.point_index(p[0])]))
            }
            AlphaField::OnSurface => {
                let p = self.surface().project(x)?;
                alpha_surface_oriented(&self.problem, self.surface(), &p, loc.orientation)
            }
        }
    }

    fn point_index(&self, xi: f64) -> usize {
        let Hypersurface::PointSet1D { points } = self.surface() else {
            unreachable!("per-point alpha only for 1D point sets")
        };
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, &p) in points.iter().enumerate() {
            let d = (xi - p).abs();
            if d < best_d {
                best = k;
                best_d = d;
            }
        }
        best
    }

    /// Displacement `G(x) - x`; zero outside the band.
    fn displacement(&self, loc: &Localized, x: &DVector<f64>) -> Result<Option<DVector<f64>>> {
        let s = self.sdist(loc, x);
        if s.abs() >= loc.c || s == 0.0 {
            return Ok(None);
        }
        let alpha = self.alpha_exact_near(loc, x)?;
        Ok(Some(alpha * phi_bar(s, loc.c)))
    }

    /// `G(x)`. Total; exactly `x` whenever the distance to the surface is
    /// at least `c`.
    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.kind {
            Kind::Identity => Ok(x.clone()),
            Kind::Localized(loc) => Ok(match self.displacement(loc, x)? {
                None => x.clone(),
                Some(d) => x + d,
            }),
        }
    }

    /// `G^{-1}(z)` by fixed-point iteration `x <- z - (G - id)(x)`; the
    /// certificate bounds the contraction factor by 1/2. Points provably
    /// outside the image of the band pass through unchanged.
    pub fn inverse(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.inverse_with_iters(z)?.0)
    }

    /// As [`Transform::inverse`], also reporting the iteration count
    /// (0 for pass-through).
    pub fn inverse_with_iters(&self, z: &DVector<f64>) -> Result<(DVector<f64>, u32)> {
        let loc = match &self.kind {
            Kind::Identity => return Ok((z.clone(), 0)),
            Kind::Localized(loc) => loc,
        };
        let margin = loc.c * (1.0 + 6.0 * loc.sup_alpha * loc.c);
        if self.surface().distance(z) >= margin {
            return Ok((z.clone(), 0));
        }
        let tol = 1e-12 * (1.0 + z.norm());
        let mut x = z.clone();
        for it in 0..200u32 {
            let next = match self.displacement(loc, &x)? {
                None => z.clone(),
                Some(d) => z - d,
            };
            let step = (&next - &x).norm();
            if step <= tol {
                return Ok((next, it + 1));
            }
            x = next;
        }
        Err(CoreError::Numeric(format!(
            "inversion did not converge in 200 iterations at {:?}; certificate violated?",
            z.as_slice()
        )))
    }

    /// Jacobian `dG(x)`. Identity outside the band; undefined on the
    /// surface itself (`G''` jumps there), where callers nudge first.
    pub fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let d = self.problem.dim;
        match &self.kind {
            Kind::Identity => Ok(DMatrix::identity(d, d)),
            Kind::Localized(loc) => Ok(self.derivative_fields(loc, x)?.jac),
        }
    }

    /// `v_i = 1/2 sum_{j,k} d^2 G_i / dx_j dx_k * M_{jk}` — the second
    /// order (Ito) contraction of `G` against a matrix, typically
    /// `M = sigma sigma^T`.
    pub fn hessian_apply(&self, x: &DVector<f64>, m: &DMatrix<f64>) -> Result<DVector<f64>> {
        let d = self.problem.dim;
        match &self.kind {
            Kind::Identity => Ok(DVector::zeros(d)),
            Kind::Localized(loc) => {
                let fields = self.derivative_fields(loc, x)?;
                Ok(contract_hessian(&fields.hess, m))
            }
        }
    }

    /// Drift of the transformed SDE at `z`.
    pub fn transformed_drift(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.transformed_coefficients(z)?.0)
    }

    /// Diffusion of the transformed SDE at `z`.
    pub fn transformed_diffusion(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.transformed_coefficients(z)?.1)
    }

    /// Both transformed coefficients at once (the solver's hot call):
    /// `mu~ = dG mu + 1/2 d2G[sigma sigma^T]`, `sigma~ = dG sigma`,
    /// everything evaluated at `x = G^{-1}(z)`. In one dimension this is
    /// exactly `mu~ = G' mu + G'' sigma^2 / 2` and `sigma~ = G' sigma`.
    pub fn transformed_coefficients(
        &self,
        z: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let loc = match &self.kind {
            Kind::Identity => return Ok(((self.problem.drift)(z), (self.problem.diffusion)(z))),
            Kind::Localized(loc) => loc,
        };
        let margin = loc.c * (1.0 + 6.0 * loc.sup_alpha * loc.c);
        if self.surface().distance(z) >= margin {
            return Ok(((self.problem.drift)(z), (self.problem.diffusion)(z)));
        }
        let mut x = self.inverse(z)?;
        let s = self.sdist(loc, &x);
        if s.abs() < NUDGE_BAND {
            // On-surface states take the positive side by convention.
            let p = self.surface().project(&x)?;
            let n = self.surface().unit_normal(&p)? * loc.orientation;
            let side = if s < 0.0 { -1.0 } else { 1.0 };
            x += n * (side * NUDGE_SIZE);
        }
        if self.sdist(loc, &x).abs() >= loc.c {
            return Ok(((self.problem.drift)(&x), (self.problem.diffusion)(&x)));
        }
        let fields = self.derivative_fields(loc, &x)?;
        let mu = (self.problem.drift)(&x);
        let sigma = (self.problem.diffusion)(&x);
        let mut mu_t = &fields.jac * &mu;
        mu_t += contract_hessian(&fields.hess, &(&sigma * sigma.transpose()));
        let sigma_t = &fields.jac * sigma;
        Ok((mu_t, sigma_t))
    }

    /// First and second derivatives of `G` at a band point.
    ///
    /// The displacement factors as `A(x) * phi_bar(s(x))` with
    /// `A = alpha o p` and `grad s = n o p`; only `phi_bar` is
    /// non-smooth across the surface and its derivatives are known in
    /// closed form on either side. So the side-sensitive part is exact
    /// and central finite differences are applied only to the smooth
    /// fields `A` and `n o p`. In 1D those fields are locally constant
    /// and the result reduces to the analytic derivatives.
    fn derivative_fields(&self, loc: &Localized, x: &DVector<f64>) -> Result<DerivFields> {
        let d = self.problem.dim;
        let s = self.sdist(loc, x);
        if s.abs() >= loc.c {
            return Ok(DerivFields {
                jac: DMatrix::identity(d, d),
                hess: vec![DMatrix::zeros(d, d); d],
            });
        }
        if s.abs() < 1e-12 {
            return Err(CoreError::Domain(
                "second derivatives of G are one-sided on the surface; nudge off it first".into(),
            ));
        }
        let c = loc.c;
        let pb = phi_bar(s, c);
        let pb1 = phi_bar_d1(s, c);
        let pb2 = phi_bar_d2(s, c);
        let p = self.surface().project(x)?;
        let alpha = self.alpha_exact_near(loc, x)?;
        let nu = self.surface().unit_normal(&p)? * loc.orientation;
        let h = (1e-6f64).max(c * 1e-5);

        // Axis stencil: alpha and normal fields at x +- h e_j.
        let mut a_plus = Vec::with_capacity(d);
        let mut a_minus = Vec::with_capacity(d);
        let mut nu_plus = Vec::with_capacity(d);
        let mut nu_minus = Vec::with_capacity(d);
        for j in 0..d {
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            a_plus.push(self.alpha_exact_near(loc, &xp)?);
            a_minus.push(self.alpha_exact_near(loc, &xm)?);
            let pp = self.surface().project(&xp)?;
            let pm = self.surface().project(&xm)?;
            nu_plus.push(self.surface().unit_normal(&pp)? * loc.orientation);
            nu_minus.push(self.surface().unit_normal(&pm)? * loc.orientation);
        }
        let da: Vec<DVector<f64>> = (0..d)
            .map(|j| (&a_plus[j] - &a_minus[j]) / (2.0 * h))
            .collect();
        let dnu: Vec<DVector<f64>> = (0..d)
            .map(|j| (&nu_plus[j] - &nu_minus[j]) / (2.0 * h))
            .collect();

        // jac = I + dA phi_bar + A phi_bar' nu^T
        let mut jac = DMatrix::identity(d, d);
        for i in 0..d {
            for j in 0..d {
                jac[(i, j)] += da[j][i] * pb + alpha[i] * pb1 * nu[j];
            }
        }

        // Second differences of A: diagonal from the axis stencil,
        // mixed from the corner stencil.
        let mut d2a = vec![DMatrix::zeros(d, d); d]; // d2a[i][(j,k)] = d_jk A_i
        for j in 0..d {
            let diag = (&a_plus[j] + &a_minus[j] - &alpha * 2.0) / (h * h);
            for i in 0..d {
                d2a[i][(j, j)] = diag[i];
            }
        }
        for j in 0..d {
            for k in (j + 1)..d {
                let mut xpp = x.clone();
                xpp[j] += h;
                xpp[k] += h;
                let mut xpm = x.clone();
                xpm[j] += h;
                xpm[k] -= h;
                let mut xmp = x.clone();
                xmp[j] -= h;
                xmp[k] += h;
                let mut xmm = x.clone();
                xmm[j] -= h;
                xmm[k] -= h;
                let mixed = (self.alpha_exact_near(loc, &xpp)?
                    - self.alpha_exact_near(loc, &xpm)?
                    - self.alpha_exact_near(loc, &xmp)?
                    + self.alpha_exact_near(loc, &xmm)?)
                    / (4.0 * h * h);
                for i in 0..d {
                    d2a[i][(j, k)] = mixed[i];
                    d2a[i][(k, j)] = mixed[i];
                }
            }
        }

        // Symmetrized Hessian of the signed distance.
        let mut s_hess = DMatrix::zeros(d, d);
        for j in 0..d {
            for k in 0..d {
                s_hess[(j, k)] = 0.5 * (dnu[j][k] + dnu[k][j]);
            }
        }

        // hess[i][(j,k)] = d2A phi_bar + dA phi_bar' (nu outer) sym
        //               + A (phi_bar'' nu nu^T + phi_bar' hess s)
        let mut hess = vec![DMatrix::zeros(d, d); d];
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    hess[i][(j, k)] = d2a[i][(j, k)] * pb
                        + da[j][i] * pb1 * nu[k]
                        + da[k][i] * pb1 * nu[j]
                        + alpha[i] * (pb2 * nu[j] * nu[k] + pb1 * s_hess[(j, k)]);
                }
            }
        }
        Ok(DerivFields { jac, hess })
    }
}

struct DerivFields {
    jac: DMatrix<f64>,
    /// `hess[i][(j,k)] = d^2 G_i / dx_j dx_k`.
    hess: Vec<DMatrix<f64>>,
}

fn contract_hessian(hess: &[DMatrix<f64>], m: &DMatrix<f64>) -> DVector<f64> {
    let d = hess.len();
    let mut out = DVector::zeros(d);
    for i in 0..d {
        out[i] = 0.5 * hess[i].component_mul(m).sum();
    }
    out
}

impl std::fmt::Debug for Transform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut s = f.debug_struct("Transform");
        s.field("problem", &self.problem.name);
        match &self.kind {
            Kind::Identity => s.field("kind", &"identity"),
            Kind::Localized(loc) => s
                .field("c", &loc.c)
                .field("sup_alpha", &loc.sup_alpha)
                .field("orientation", &loc.orientation),
        };
        s.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{circle2d, gbm1d, step1d};
    use approx::assert_relative_eq;

    #[test]
    fn bump_hand_values() {
        assert_eq!(bump(0.0), 1.0);
        assert_eq!(bump(1.0), 0.0);
        assert_eq!(bump(-1.0), 0.0);
        assert_eq!(bump(2.0), 0.0);
        assert_eq!(bump(0.5), 0.421875);
        // C^2 at the support edge: value and both derivatives vanish.
        assert_eq!(bump_d1(1.0), 0.0);
        assert_eq!(bump_d2(1.0), 0.0);
        assert_eq!(bump_d2(0.0), -6.0);
    }

    #[test]
    fn alpha_1d_hand_values() {
        assert_eq!(alpha_1d(1.0, -1.0, 1.0).unwrap(), 1.0);
        assert_eq!(alpha_1d(0.0, 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(alpha_1d(2.0, 0.0, 0.5).unwrap(), 4.0);
        assert!(matches!(
            alpha_1d(1.0, -1.0, 0.0),
            Err(CoreError::Model(_))
        ));
        // No jump: zero sigma is fine, the transform is the identity.
        assert_eq!(alpha_1d(3.0, 3.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn alpha_surface_circle_hand_values() {
        let p = circle2d();
        let a = alpha_surface(&p, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_relative_eq!(a[0], -4.0, max_relative = 1e-12);
        assert_relative_eq!(a[1], -2.0, max_relative = 1e-12);
        let a = alpha_surface(&p, &DVector::from_vec(vec![0.0, 1.0])).unwrap();
        assert_relative_eq!(a[0], -2.0, max_relative = 1e-12);
        assert!(a[1].abs() < 1e-12);
    }

    #[test]
    fn alpha_surface_continuous_drift_is_exactly_zero() {
        let mut p = circle2d();
        p.drift = std::sync::Arc::new(|x: &DVector<f64>| DVector::from_vec(vec![-x[0], x[1]]));
        let a = alpha_surface(&p, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_eq!(a.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn c_rule_1d_single_point_unit_alpha() {
        // alpha = 1, reach infinite: 0.9 * 1/6 = 0.15.
        let t = Transform::build(&step1d()).unwrap();
        assert_relative_eq!(t.band_halfwidth().unwrap(), 0.15, max_relative = 1e-12);
    }

    #[test]
    fn c_rule_zero_alpha_uses_reach() {
        // Continuous drift on a sphere of radius 1: alpha = 0 everywhere,
        // the certificate passes immediately at 0.9 * reach.
        let mut p = circle2d();
        p.drift = std::sync::Arc::new(|x: &DVector<f64>| DVector::from_vec(vec![-x[0], x[1]]));
        let t = Transform::build(&p).unwrap();
        assert_relative_eq!(t.band_halfwidth().unwrap(), 0.9, max_relative = 1e-12);
    }

    #[test]
    fn circle_certificate_holds_and_reverifies_on_fresh_grid() {
        let p = circle2d();
        let t = Transform::build(&p).unwrap();
        let c = t.band_halfwidth().unwrap();
        assert!(c > 0.0 && c <= 0.9);
        assert!(t.summary().certificate_norm <= 0.5);
        // Re-verify on a fresh grid (different sample count and depth salt).
        let surface = p.surface.as_ref().unwrap();
        let fresh = surface.surface_samples(131, 6.0).unwrap();
        let norm = t.certificate_norm_on_grid(&fresh, c, 3).unwrap();
        assert!(norm <= 0.5, "fresh-grid certificate norm {norm}");
    }

    #[test]
    fn identity_transform_for_problems_without_surface() {
        let t = Transform::build(&gbm1d()).unwrap();
        assert!(t.is_identity());
        let z = DVector::from_element(1, 1.3);
        assert_eq!(t.forward(&z).unwrap(), z);
        assert_eq!(t.inverse(&z).unwrap(), z);
        let (mu, sigma) = t.transformed_coefficients(&z).unwrap();
        assert_eq!(mu[0], 0.5 * 1.3);
        assert_eq!(sigma[(0, 0)], 0.2 * 1.3);
    }

    /// step1d with the band width pinned to 0.1 reproduces the closed
    /// forms with alpha = 1, c = 0.1.
    fn pinned_step_transform() -> Transform {
        Transform::build_with(
            &step1d(),
            TransformOptions {
                flip_normal: false,
                c_override: Some(0.1),
            },
        )
        .unwrap()
    }

    #[test]
    fn forward_hand_value_1d() {
        let t = pinned_step_transform();
        // G(0.05) = 0.05 + (0.05*0.05) * bump(0.5)
        let g = t.forward(&DVector::from_element(1, 0.05)).unwrap();
        assert_relative_eq!(g[0], 0.0510546875, max_relative = 1e-12);
        // On the surface and outside the band: exact pass-through.
        assert_eq!(t.forward(&DVector::from_element(1, 0.0)).unwrap()[0], 0.0);
        assert_eq!(t.forward(&DVector::from_element(1, 0.2)).unwrap()[0], 0.2);
        assert_eq!(t.forward(&DVector::from_element(1, -0.1)).unwrap()[0], -0.1);
    }

    #[test]
    fn inverse_hand_value_1d() {
        let t = pinned_step_transform();
        let x = t.inverse(&DVector::from_element(1, 0.0510546875)).unwrap();
        assert!((x[0] - 0.05).abs() <= 1e-10, "{}", x[0]);
        // Pass-through far from the band.
        let z = DVector::from_element(1, 0.7);
        assert_eq!(t.inverse(&z).unwrap(), z);
    }

    #[test]
    fn jacobian_is_one_at_the_surface_and_curvature_jumps() {
        let t = pinned_step_transform();
        // G'(0+) = G'(0-) = 1 since phi_bar' vanishes at 0.
        for s in [1e-9, -1e-9] {
            let j = t.jacobian(&DVector::from_element(1, s)).unwrap();
            assert!((j[(0, 0)] - 1.0).abs() < 1e-7, "{}", j[(0, 0)]);
        }
        // G''(0+) = 2 alpha, G''(0-) = -2 alpha: hessian_apply with the
        // unit matrix returns G''/2 = +-1.
        let m = DMatrix::from_element(1, 1, 1.0);
        let hp = t.hessian_apply(&DVector::from_element(1, 1e-9), &m).unwrap();
        let hm = t.hessian_apply(&DVector::from_element(1, -1e-9), &m).unwrap();
        assert!((hp[0] - 1.0).abs() < 1e-6, "{}", hp[0]);
        assert!((hm[0] + 1.0).abs() < 1e-6, "{}", hm[0]);
        // Exactly on the surface the second derivative is one-sided.
        assert!(t.jacobian(&DVector::from_element(1, 0.0)).is_err());
    }

    #[test]
    fn transformed_drift_is_continuous_across_the_jump() {
        // mu = -sign(x), sigma = 1, alpha = 1: both one-sided limits of
        // the transformed drift at the origin are 0.
        let t = Transform::build(&step1d()).unwrap();
        for s in [1e-6, -1e-6] {
            let z = t.forward(&DVector::from_element(1, s)).unwrap();
            let (mu_t, sigma_t) = t.transformed_coefficients(&z).unwrap();
            assert!(mu_t[0].abs() <= 1e-3, "mu~({s}) = {}", mu_t[0]);
            assert!((sigma_t[(0, 0)] - 1.0).abs() <= 1e-3, "sigma~({s})");
        }
    }

    #[test]
    fn transformed_coefficients_identity_region() {
        let t = Transform::build(&step1d()).unwrap();
        let z = DVector::from_element(1, 0.5); // far outside the band
        let (mu_t, sigma_t) = t.transformed_coefficients(&z).unwrap();
        assert_eq!(mu_t[0], -1.0);
        assert_eq!(sigma_t[(0, 0)], 1.0);
    }

    #[test]
    fn c_override_cannot_exceed_certified_bound() {
        let r = Transform::build_with(
            &step1d(),
            TransformOptions {
                flip_normal: false,
                c_override: Some(0.2), // above 1/6
            },
        );
        assert!(matches!(r, Err(CoreError::Model(_))));
    }
}
