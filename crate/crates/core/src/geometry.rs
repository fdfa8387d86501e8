//! Hypersurfaces of positive reach: projection, unit normal, signed
//! distance, band membership, segment crossing counts, and a sampled
//! estimator for piecewise Lipschitz constants.
//!
//! Only analytic geometries ship: finite point sets on the line,
//! hyperplanes, and spheres. For each of them the nearest-point map is
//! available in closed form and the reach is known exactly, which is what
//! the transform construction needs. The contract a custom geometry would
//! have to satisfy is exactly the method set of [`Hypersurface`].

use nalgebra::DVector;

use crate::brownian::keyed_range;
use crate::error::{CoreError, Result};
use crate::rng::derive_key;

/// Tolerance for "is this point on the surface" checks (absolute; the
/// library targets problems at unit scale).
pub const ON_SURFACE_TOL: f64 = 1e-9;

/// A hypersurface with positive reach, orientable by a chosen unit
/// normal field.
///
/// Orientation conventions: outward for spheres, `+normal` for
/// hyperplanes, `+1` for 1D point sets.
#[derive(Debug, Clone, PartialEq)]
pub enum Hypersurface {
    /// Finitely many points `xi_1 < ... < xi_m` on the line.
    PointSet1D { points: Vec<f64> },
    /// `{x : a . x = b}` with unit normal `a`.
    Hyperplane { normal: DVector<f64>, offset: f64 },
    /// `{x : |x - center| = radius}`.
    Sphere { center: DVector<f64>, radius: f64 },
}

impl Hypersurface {
    /// Sorted, strictly increasing discontinuity points on the line.
    pub fn point_set_1d(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(CoreError::Argument("point set must be non-empty".into()));
        }
        if points.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(CoreError::Argument(
                "points must be strictly increasing".into(),
            ));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(CoreError::Argument("points must be finite".into()));
        }
        Ok(Hypersurface::PointSet1D { points })
    }

    /// Hyperplane `a . x = b`; `a` is normalized here.
    pub fn hyperplane(normal: DVector<f64>, offset: f64) -> Result<Self> {
        let n = normal.norm();
        if !(n > 0.0) || !n.is_finite() || !offset.is_finite() {
            return Err(CoreError::Argument(
                "hyperplane needs a nonzero finite normal and finite offset".into(),
            ));
        }
        Ok(Hypersurface::Hyperplane {
            normal: normal / n,
            offset: offset / n,
        })
    }

    pub fn sphere(center: DVector<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(CoreError::Argument(format!(
                "sphere radius must be positive, got {radius}"
            )));
        }
        Ok(Hypersurface::Sphere { center, radius })
    }

    /// Dimension of the ambient space the surface lives in.
    pub fn ambient_dim(&self) -> usize {
        match self {
            Hypersurface::PointSet1D { .. } => 1,
            Hypersurface::Hyperplane { normal, .. } => normal.len(),
            Hypersurface::Sphere { center, .. } => center.len(),
        }
    }

    /// Reach of the surface: below this distance the nearest point is
    /// unique. Infinite for hyperplanes and single points.
    pub fn reach(&self) -> f64 {
        match self {
            Hypersurface::PointSet1D { points } => {
                if points.len() == 1 {
                    f64::INFINITY
                } else {
                    points
                        .windows(2)
                        .map(|w| (w[1] - w[0]) / 2.0)
                        .fold(f64::INFINITY, f64::min)
                }
            }
            Hypersurface::Hyperplane { .. } => f64::INFINITY,
            Hypersurface::Sphere { radius, .. } => *radius,
        }
    }

    /// Nearest point on the surface.
    ///
    /// Errors only where the nearest point is genuinely undefined (the
    /// center of a sphere). Equidistant 1D ties resolve to the left
    /// point; exact ties are a measure-zero event.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Hypersurface::PointSet1D { points } => {
                let xi = nearest_point_1d(points, x[0]);
                Ok(DVector::from_element(1, xi))
            }
            Hypersurface::Hyperplane { normal, offset } => {
                let s = normal.dot(x) - offset;
                Ok(x - normal * s)
            }
            Hypersurface::Sphere { center, radius } => {
                let r = x - center;
                let n = r.norm();
                if n < 1e-12 {
                    return Err(CoreError::Domain(
                        "projection undefined at the center of the sphere".into(),
                    ));
                }
                Ok(center + r * (radius / n))
            }
        }
    }

    /// Unit normal at a surface point `xi`, in the orientation convention
    /// of the variant. Points further than [`ON_SURFACE_TOL`] from the
    /// surface are projected first.
    pub fn unit_normal(&self, xi: &DVector<f64>) -> Result<DVector<f64>> {
        let xi_on = if self.distance(xi) > ON_SURFACE_TOL {
            self.project(xi)?
        } else {
            xi.clone()
        };
        match self {
            Hypersurface::PointSet1D { .. } => Ok(DVector::from_element(1, 1.0)),
            Hypersurface::Hyperplane { normal, .. } => Ok(normal.clone()),
            Hypersurface::Sphere { center, .. } => {
                let r = &xi_on - center;
                let n = r.norm();
                if n < 1e-12 {
                    return Err(CoreError::Domain(
                        "normal undefined at the center of the sphere".into(),
                    ));
                }
                Ok(r / n)
            }
        }
    }

    /// Signed distance: magnitude `|x - p(x)|`, sign of `(x - p(x)) . n`.
    /// Outside the reach band the sign is that of the containing
    /// component (sphere: positive outside; hyperplane: sign of
    /// `a . x - b`; point sets: sign of `x - nearest`).
    pub fn signed_distance(&self, x: &DVector<f64>) -> f64 {
        match self {
            Hypersurface::PointSet1D { points } => x[0] - nearest_point_1d(points, x[0]),
            Hypersurface::Hyperplane { normal, offset } => normal.dot(x) - offset,
            Hypersurface::Sphere { center, radius } => {
                let mut sq = 0.0;
                for (a, b) in x.iter().zip(center.iter()) {
                    sq += (a - b) * (a - b);
                }
                sq.sqrt() - radius
            }
        }
    }

    /// Unsigned distance to the surface.
    pub fn distance(&self, x: &DVector<f64>) -> f64 {
        self.signed_distance(x).abs()
    }

    /// True iff `x` lies in the open band of half-width `eps`.
    pub fn in_band(&self, x: &DVector<f64>, eps: f64) -> bool {
        self.distance(x) < eps
    }

    /// Number of intersections of the straight segment `[x, y]` with the
    /// surface. Tangential touches count as one crossing.
    pub fn segment_crosses(&self, x: &DVector<f64>, y: &DVector<f64>) -> usize {
        match self {
            Hypersurface::PointSet1D { points } => {
                let (lo, hi) = if x[0] <= y[0] { (x[0], y[0]) } else { (y[0], x[0]) };
                points.iter().filter(|&&p| lo <= p && p <= hi).count()
            }
            Hypersurface::Hyperplane { normal, offset } => {
                let s1 = normal.dot(x) - offset;
                let s2 = normal.dot(y) - offset;
                usize::from(s1 == 0.0 || s2 == 0.0 || (s1 > 0.0) != (s2 > 0.0))
            }
            Hypersurface::Sphere { center, radius } => {
                // Roots of |x + t(y-x) - c|^2 = r^2 in [0, 1].
                let u = y - x;
                let w = x - center;
                let a = u.dot(&u);
                let c = w.dot(&w) - radius * radius;
                if a == 0.0 {
                    return usize::from(c == 0.0);
                }
                let b = 2.0 * u.dot(&w);
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return 0;
                }
                if disc == 0.0 {
                    let t = -b / (2.0 * a);
                    return usize::from((0.0..=1.0).contains(&t));
                }
                let sq = disc.sqrt();
                let t1 = (-b - sq) / (2.0 * a);
                let t2 = (-b + sq) / (2.0 * a);
                usize::from((0.0..=1.0).contains(&t1)) + usize::from((0.0..=1.0).contains(&t2))
            }
        }
    }

    /// Deterministic sample of surface points, used for validation grids
    /// and transform certification. `extent` bounds the patch sampled on
    /// unbounded surfaces.
    pub fn surface_samples(&self, count: usize, extent: f64) -> Result<Vec<DVector<f64>>> {
        let key = derive_key(0x5eed_5a5a, count as u64);
        match self {
            Hypersurface::PointSet1D { points } => Ok(points
                .iter()
                .cycle()
                .take(count.max(points.len()))
                .map(|&p| DVector::from_element(1, p))
                .collect()),
            Hypersurface::Hyperplane { normal, offset } => {
                let d = normal.len();
                let foot = normal * *offset;
                let basis = tangent_basis(normal);
                let mut out = Vec::with_capacity(count);
                for i in 0..count {
                    let mut p = foot.clone();
                    for (k, t) in basis.iter().enumerate() {
                        let u = keyed_range(key, (i * (d - 1) + k) as u64, -extent, extent);
                        p += t * u;
                    }
                    out.push(p);
                }
                Ok(out)
            }
            Hypersurface::Sphere { center, radius } => {
                let d = center.len();
                if d == 2 {
                    // Uniform angles cover the circle evenly.
                    let mut out = Vec::with_capacity(count);
                    for i in 0..count {
                        let th = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / count as f64;
                        out.push(DVector::from_vec(vec![
                            center[0] + radius * th.cos(),
                            center[1] + radius * th.sin(),
                        ]));
                    }
                    return Ok(out);
                }
                // Normalized Gaussian directions in higher dimension.
                let mut out = Vec::with_capacity(count);
                let mut counter = 0u64;
                for _ in 0..count {
                    loop {
                        let mut dir = DVector::zeros(d);
                        for k in 0..d {
                            dir[k] = crate::rng::keyed_normal(key, counter + k as u64);
                        }
                        counter += d as u64;
                        let n = dir.norm();
                        if n > 1e-6 {
                            out.push(center + dir * (radius / n));
                            break;
                        }
                    }
                }
                Ok(out)
            }
        }
    }
}

fn nearest_point_1d(points: &[f64], x: f64) -> f64 {
    // Ties (exact midpoints) resolve to the left point.
    let mut best = points[0];
    let mut best_d = (x - best).abs();
    for &p in &points[1..] {
        let d = (x - p).abs();
        if d < best_d {
            best = p;
            best_d = d;
        }
    }
    best
}

/// Orthonormal basis of the tangent space of a hyperplane with unit
/// normal `a`, via Gram-Schmidt against the standard basis.
fn tangent_basis(a: &DVector<f64>) -> Vec<DVector<f64>> {
    let d = a.len();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(d - 1);
    for k in 0..d {
        if basis.len() == d - 1 {
            break;
        }
        let mut v = DVector::zeros(d);
        v[k] = 1.0;
        v -= a * a.dot(&v);
        for b in &basis {
            let proj = b.dot(&v);
            v -= b * proj;
        }
        let n = v.norm();
        if n > 1e-8 {
            basis.push(v / n);
        }
    }
    basis
}

/// An axis-aligned sampling region for the Lipschitz estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SampleRegion {
    pub fn new_box(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(CoreError::Argument("box bounds must match".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(CoreError::Argument("box must have positive volume".into()));
        }
        Ok(SampleRegion { lo, hi })
    }

    fn sample(&self, key: u64, idx: u64) -> DVector<f64> {
        let d = self.lo.len();
        let mut x = DVector::zeros(d);
        for k in 0..d {
            x[k] = keyed_range(key, idx * d as u64 + k as u64, self.lo[k], self.hi[k]);
        }
        x
    }
}

/// Which sampled pairs the quotient estimator admits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairFilter {
    /// Only pairs whose connecting segment misses the surface; for those
    /// the intrinsic metric equals the Euclidean one.
    NonCrossing,
    /// Any pair (plain Euclidean quotient).
    Any,
}

/// Sampled estimate of `sup |f(x)-f(y)| / |x-y|` over admissible pairs in
/// `region` — a lower bound on the (piecewise) Lipschitz constant.
///
/// With [`PairFilter::NonCrossing`] the segment between admitted pairs
/// avoids the surface, so the Euclidean quotient coincides with the
/// intrinsic-metric quotient.
pub fn lipschitz_quotient_filtered(
    f: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    surface: &Hypersurface,
    region: &SampleRegion,
    n_pairs: usize,
    rng_seed: u64,
    filter: PairFilter,
) -> Result<f64> {
    if n_pairs == 0 {
        return Err(CoreError::Argument("n_pairs must be at least 1".into()));
    }
    let key = derive_key(rng_seed, 0x11b5);
    let budget = 100 * n_pairs;
    let mut found = 0usize;
    let mut best = 0.0f64;
    for attempt in 0..budget {
        if found == n_pairs {
            break;
        }
        let x = region.sample(key, 2 * attempt as u64);
        let y = region.sample(key, 2 * attempt as u64 + 1);
        let gap = (&x - &y).norm();
        if gap < 1e-12 {
            continue;
        }
        if filter == PairFilter::NonCrossing && surface.segment_crosses(&x, &y) != 0 {
            continue;
        }
        let q = (f(&x) - f(&y)).norm() / gap;
        best = best.max(q);
        found += 1;
    }
    if found == 0 {
        return Err(CoreError::Sampling(format!(
            "no admissible pair in {budget} attempts"
        )));
    }
    Ok(best)
}

/// Non-crossing quotient estimate (see [`lipschitz_quotient_filtered`]).
pub fn lipschitz_quotient_estimate(
    f: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    surface: &Hypersurface,
    region: &SampleRegion,
    n_pairs: usize,
    rng_seed: u64,
) -> Result<f64> {
    lipschitz_quotient_filtered(f, surface, region, n_pairs, rng_seed, PairFilter::NonCrossing)
}
