//! Space-time points, axis-aligned regions (cubes, cylinders, lateral and
//! Dirichlet boundaries), the boundary-adapted distance and its λ-rescaled
//! version, and the anisotropic ball family built from them.
//!
//! Conventions fixed here and used everywhere else:
//! * cubes are sup-norm boxes, closed on spatial faces;
//! * every time interval is half-open `(lo, hi]`;
//! * the ball case boundary `r = |y_n|` belongs to the boundary case.

use crate::Real;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("lambda {0} outside (0, 1]")]
    LambdaOutOfRange(f64),
    #[error("radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("spatial dimension must be at least 1, got {0}")]
    BadDimension(usize),
    #[error("region kind {0:?} has no lattice bounding box")]
    NoBoundingBox(RegionKind),
    #[error("unknown region kind {0:?}")]
    UnknownKind(String),
}

/// A point (x', x_n, t) in R^{n-1} x R x R. The tangential block may be
/// empty (n = 1) for the one-dimensional linear problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint<T> {
    /// Spatial coordinates; the last entry is the normal coordinate x_n.
    pub x: Vec<T>,
    pub t: T,
}

impl<T: Real> SpaceTimePoint<T> {
    pub fn new(x: Vec<T>, t: T) -> Result<Self, GeometryError> {
        if x.is_empty() {
            return Err(GeometryError::BadDimension(0));
        }
        Ok(Self { x, t })
    }

    /// Spatial dimension n.
    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Tangential coordinates x' (all but the last spatial entry).
    pub fn tangential(&self) -> &[T] {
        &self.x[..self.x.len() - 1]
    }

    /// Normal coordinate x_n.
    pub fn normal(&self) -> T {
        *self.x.last().unwrap()
    }

    fn check_dim(&self, other: &Self) -> Result<(), GeometryError> {
        if self.dim() != other.dim() {
            Err(GeometryError::DimensionMismatch(self.dim(), other.dim()))
        } else {
            Ok(())
        }
    }
}

fn euclid<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .fold(T::zero(), |acc, v| acc + v)
        .sqrt()
}

/// Distance interpolating the parabolic scaling away from {x_n = 0} and the
/// first-order scaling near it:
/// min{ |x'-y'| + |x_n-y_n| + |t-s|^(1/2),  |x'-y'| + |x_n| + |y_n| + |t-s| }.
pub fn distance<T: Real>(
    p: &SpaceTimePoint<T>,
    q: &SpaceTimePoint<T>,
) -> Result<T, GeometryError> {
    distance_scaled(p, q, T::one())
}

/// λ-rescaled distance d_λ(p, q) = (1/λ) d(λp, λq); coincides with
/// [`distance`] at λ = 1.
pub fn distance_scaled<T: Real>(
    p: &SpaceTimePoint<T>,
    q: &SpaceTimePoint<T>,
    lambda: T,
) -> Result<T, GeometryError> {
    p.check_dim(q)?;
    if lambda <= T::zero() || lambda > T::one() {
        return Err(GeometryError::LambdaOutOfRange(lambda.f64()));
    }
    let tang = euclid(p.tangential(), q.tangential());
    let dt = (p.t - q.t).abs();
    let parabolic = tang + (p.normal() - q.normal()).abs() + (dt / lambda).sqrt();
    let hyperbolic = tang + p.normal().abs() + q.normal().abs() + dt;
    Ok(parabolic.min(hyperbolic))
}

/// Region kinds quantified over by the estimates. `r` denotes the radius
/// stored with the region and `c` its center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    /// Sup-norm box Q_r(c) in space, time window (t_c - r, t_c].
    Cube,
    /// Q_r(c) ∩ {x_n >= c_n}, same time window.
    HalfCube,
    /// (Q_r(c) ∩ {x_n > c_n}) × (t_c - r, t_c].
    Cylinder,
    /// Lateral face {x_n = c_n} of the cylinder, time (t_c - r, t_c].
    LateralBoundary,
    /// Q_r(c) × (t_c - r², t_c].
    ParabolicCylinder,
    /// Closure of the cylinder intersected with {t = t_c - r} ∪ {x_n = c_n + r}
    /// ∪ {|x_i - c_i| = r, i < n}; excludes the lateral face.
    DirichletBoundary,
}

/// Axis-aligned space-time region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region<T> {
    pub kind: RegionKind,
    pub center: SpaceTimePoint<T>,
    pub radius: T,
}

/// Relative tolerance for face membership of floating-point grid nodes.
fn face_tol<T: Real>(r: T) -> T {
    (r.abs() + T::one()) * T::of(1e-9)
}

impl<T: Real> Region<T> {
    pub fn new(kind: RegionKind, center: SpaceTimePoint<T>, radius: T) -> Result<Self, GeometryError> {
        if radius <= T::zero() {
            return Err(GeometryError::NonPositiveRadius(radius.f64()));
        }
        Ok(Self { kind, center, radius })
    }

    /// Cylinder C_r centered at the space-time origin of dimension n.
    pub fn cylinder_at_origin(n: usize, r: T) -> Result<Self, GeometryError> {
        let center = SpaceTimePoint::new(vec![T::zero(); n], T::zero())?;
        Self::new(RegionKind::Cylinder, center, r)
    }

    pub fn contains(&self, p: &SpaceTimePoint<T>) -> Result<bool, GeometryError> {
        self.center.check_dim(p)?;
        let r = self.radius;
        let tol = face_tol(r);
        let n = p.dim();
        let in_cube = (0..n).all(|i| (p.x[i] - self.center.x[i]).abs() <= r + tol);
        let xn_rel = p.normal() - self.center.normal();
        let t_rel = p.t - self.center.t;
        // half-open (t_c - depth, t_c]: bottom slice excluded
        let in_time = |depth: T| t_rel + depth > tol && t_rel <= tol;
        Ok(match self.kind {
            RegionKind::Cube => in_cube && in_time(r),
            RegionKind::HalfCube => in_cube && xn_rel >= -tol && in_time(r),
            RegionKind::Cylinder => in_cube && xn_rel > tol && in_time(r),
            RegionKind::LateralBoundary => in_cube && xn_rel.abs() <= tol && in_time(r),
            RegionKind::ParabolicCylinder => in_cube && in_time(r * r),
            RegionKind::DirichletBoundary => {
                // closed in time: the bottom slice belongs to the boundary
                let in_closure =
                    in_cube && xn_rel >= -tol && t_rel + r >= -tol && t_rel <= tol;
                if !in_closure {
                    false
                } else {
                    let bottom = (t_rel + r).abs() <= tol;
                    let top_face = (xn_rel - r).abs() <= tol;
                    let lateral = (0..n - 1)
                        .any(|i| ((p.x[i] - self.center.x[i]).abs() - r).abs() <= tol);
                    bottom || top_face || lateral
                }
            }
        })
    }

    /// Spatial/time bounding intervals ([lo_i, hi_i] per axis, (t_lo, t_hi])
    /// used to clip lattices. Not defined for the Dirichlet boundary.
    pub fn bounding_box(&self) -> Result<(Vec<(T, T)>, (T, T)), GeometryError> {
        let r = self.radius;
        let n = self.center.dim();
        let mut sp: Vec<(T, T)> = (0..n)
            .map(|i| (self.center.x[i] - r, self.center.x[i] + r))
            .collect();
        let depth = match self.kind {
            RegionKind::ParabolicCylinder => r * r,
            RegionKind::DirichletBoundary => {
                return Err(GeometryError::NoBoundingBox(self.kind))
            }
            _ => r,
        };
        match self.kind {
            RegionKind::HalfCube | RegionKind::Cylinder => {
                sp[n - 1].0 = self.center.normal();
            }
            RegionKind::LateralBoundary => {
                sp[n - 1] = (self.center.normal(), self.center.normal());
            }
            _ => {}
        }
        Ok((sp, (self.center.t - depth, self.center.t)))
    }
}

/// Ball of the anisotropic family: parabolic box Q_r(y) × (s - λr², s] away
/// from the boundary (r < |y_n|), boundary box Q_r⁺(y) × (s - r, s] when
/// λ⁻¹ ≥ r ≥ |y_n|.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnisotropicBall<T> {
    pub center: SpaceTimePoint<T>,
    pub radius: T,
    pub lambda: T,
}

impl<T: Real> AnisotropicBall<T> {
    pub fn new(center: SpaceTimePoint<T>, radius: T, lambda: T) -> Result<Self, GeometryError> {
        if radius <= T::zero() {
            return Err(GeometryError::NonPositiveRadius(radius.f64()));
        }
        if lambda <= T::zero() || lambda > T::one() {
            return Err(GeometryError::LambdaOutOfRange(lambda.f64()));
        }
        Ok(Self { center, radius, lambda })
    }

    /// True when the radius falls in the interior (parabolic) case
    /// r < |y_n|; the tie r = |y_n| belongs to the boundary case.
    pub fn is_parabolic_case(&self) -> bool {
        self.radius < self.center.normal().abs()
    }

    /// Time depth of the ball's window: λr² in the parabolic case, r in the
    /// boundary case.
    pub fn time_depth(&self) -> T {
        if self.is_parabolic_case() {
            self.lambda * self.radius * self.radius
        } else {
            self.radius
        }
    }

    pub fn contains(&self, p: &SpaceTimePoint<T>) -> Result<bool, GeometryError> {
        self.center.check_dim(p)?;
        let r = self.radius;
        let tol = face_tol(r);
        let n = p.dim();
        let in_cube = (0..n).all(|i| (p.x[i] - self.center.x[i]).abs() <= r + tol);
        if !in_cube {
            return Ok(false);
        }
        if !self.is_parabolic_case() && p.normal() < -tol {
            return Ok(false); // Q_r^+ clips at the absolute hyperplane {x_n = 0}
        }
        let t_rel = p.t - self.center.t;
        // half-open window (s - depth, s]
        Ok(t_rel + self.time_depth() > tol && t_rel <= tol)
    }

    /// Spatial and time bounds analogous to [`Region::bounding_box`].
    pub fn bounding_box(&self) -> (Vec<(T, T)>, (T, T)) {
        let r = self.radius;
        let n = self.center.dim();
        let mut sp: Vec<(T, T)> = (0..n)
            .map(|i| (self.center.x[i] - r, self.center.x[i] + r))
            .collect();
        if !self.is_parabolic_case() {
            sp[n - 1].0 = sp[n - 1].0.max(T::zero());
        }
        (sp, (self.center.t - self.time_depth(), self.center.t))
    }
}

/// Plain JSON description for regions and balls:
/// `{kind, center: {x, t}, radius, lambda?}` with `kind: "ball"` selecting
/// the anisotropic family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionDescription {
    pub kind: String,
    pub center_x: Vec<f64>,
    pub center_t: f64,
    pub radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

impl RegionDescription {
    pub fn from_region<T: Real>(r: &Region<T>) -> Self {
        let kind = match r.kind {
            RegionKind::Cube => "cube",
            RegionKind::HalfCube => "half_cube",
            RegionKind::Cylinder => "cylinder",
            RegionKind::LateralBoundary => "lateral_boundary",
            RegionKind::ParabolicCylinder => "parabolic_cylinder",
            RegionKind::DirichletBoundary => "dirichlet_boundary",
        };
        Self {
            kind: kind.into(),
            center_x: r.center.x.iter().map(|v| v.f64()).collect(),
            center_t: r.center.t.f64(),
            radius: r.radius.f64(),
            lambda: None,
        }
    }

    pub fn from_ball<T: Real>(b: &AnisotropicBall<T>) -> Self {
        Self {
            kind: "ball".into(),
            center_x: b.center.x.iter().map(|v| v.f64()).collect(),
            center_t: b.center.t.f64(),
            radius: b.radius.f64(),
            lambda: Some(b.lambda.f64()),
        }
    }

    pub fn to_region<T: Real>(&self) -> Result<Region<T>, GeometryError> {
        let kind = match self.kind.as_str() {
            "cube" => RegionKind::Cube,
            "half_cube" => RegionKind::HalfCube,
            "cylinder" => RegionKind::Cylinder,
            "lateral_boundary" => RegionKind::LateralBoundary,
            "parabolic_cylinder" => RegionKind::ParabolicCylinder,
            "dirichlet_boundary" => RegionKind::DirichletBoundary,
            other => return Err(GeometryError::UnknownKind(other.to_string())),
        };
        let center =
            SpaceTimePoint::new(self.center_x.iter().map(|&v| T::of(v)).collect(), T::of(self.center_t))?;
        Region::new(kind, center, T::of(self.radius))
    }

    pub fn to_ball<T: Real>(&self) -> Result<AnisotropicBall<T>, GeometryError> {
        let center =
            SpaceTimePoint::new(self.center_x.iter().map(|&v| T::of(v)).collect(), T::of(self.center_t))?;
        AnisotropicBall::new(center, T::of(self.radius), T::of(self.lambda.unwrap_or(1.0)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(x: &[f64], t: f64) -> SpaceTimePoint<f64> {
        SpaceTimePoint::new(x.to_vec(), t).unwrap()
    }

    fn random_point(rng: &mut ChaCha8Rng, n: usize) -> SpaceTimePoint<f64> {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        pt(&x, rng.gen_range(-1.0..0.0))
    }

    #[test]
    fn distance_identical_points_is_zero() {
        let p = pt(&[0.3, 0.7], -0.2);
        assert_eq!(distance(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn distance_direct_evaluations() {
        // interior pair: parabolic branch wins
        let p = pt(&[0.0, 0.5], 0.0);
        let q = pt(&[0.0, 0.5], -0.04);
        assert!((distance(&p, &q).unwrap() - 0.2).abs() < 1e-15);
        // boundary pair: first-order branch wins for |t - s| <= 1
        let p = pt(&[0.0, 0.0], 0.0);
        let q = pt(&[0.0, 0.0], -0.25);
        assert!((distance(&p, &q).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn distance_scaled_direct_evaluation() {
        let p = pt(&[0.0, 0.5], 0.0);
        let q = pt(&[0.0, 0.5], -0.0001);
        let d = distance_scaled(&p, &q, 0.01).unwrap();
        assert!((d - 0.1).abs() < 1e-15);
    }

    #[test]
    fn distance_scaled_matches_unscaled_at_lambda_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let p = random_point(&mut rng, 2);
            let q = random_point(&mut rng, 2);
            let a = distance(&p, &q).unwrap();
            let b = distance_scaled(&p, &q, 1.0).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn distance_scaled_defining_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let lambda = rng.gen_range(0.05..1.0);
            let p = random_point(&mut rng, 3);
            let q = random_point(&mut rng, 3);
            let scaled = |r: &SpaceTimePoint<f64>| {
                pt(
                    &r.x.iter().map(|v| v * lambda).collect::<Vec<_>>(),
                    r.t * lambda,
                )
            };
            let lhs = distance_scaled(&p, &q, lambda).unwrap();
            let rhs = distance(&scaled(&p), &scaled(&q)).unwrap() / lambda;
            assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn triangle_inequality_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let n = rng.gen_range(1..4usize).max(2);
            let p = random_point(&mut rng, n);
            let q = random_point(&mut rng, n);
            let r = random_point(&mut rng, n);
            let dpr = distance(&p, &r).unwrap();
            let dpq = distance(&p, &q).unwrap();
            let dqr = distance(&q, &r).unwrap();
            assert!(dpr <= dpq + dqr + 1e-12, "triangle violated: {dpr} > {dpq} + {dqr}");
        }
    }

    #[test]
    fn scaled_distance_dominates_unscaled() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let lambda = rng.gen_range(0.01..1.0);
            let p = random_point(&mut rng, 2);
            let q = random_point(&mut rng, 2);
            let d1 = distance(&p, &q).unwrap();
            let dl = distance_scaled(&p, &q, lambda).unwrap();
            assert!(dl >= d1 - 1e-14);
        }
    }

    #[test]
    fn ball_parabolic_case_membership() {
        // r < |y_n|: box is Q_r(y) x (s - lambda r^2, s]
        let lambda = 0.5;
        let b = AnisotropicBall::new(pt(&[0.0, 0.3], 0.0), 0.2, lambda).unwrap();
        assert!(b.is_parabolic_case());
        let member = pt(&[0.0, 0.4], -0.5 * lambda * 0.04);
        assert!(b.contains(&member).unwrap());
    }

    #[test]
    fn ball_on_boundary_is_lambda_independent() {
        let center = pt(&[0.1, 0.0], 0.0);
        for r in [0.1, 0.5, 0.9] {
            let b1 = AnisotropicBall::new(center.clone(), r, 1.0).unwrap();
            let b2 = AnisotropicBall::new(center.clone(), r, 0.01).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for _ in 0..200 {
                let p = random_point(&mut rng, 2);
                assert_eq!(b1.contains(&p).unwrap(), b2.contains(&p).unwrap());
            }
            assert_eq!(b1.time_depth(), b2.time_depth());
        }
    }

    #[test]
    fn ball_time_window_open_at_bottom() {
        let b = AnisotropicBall::new(pt(&[0.0, 0.0], 0.0), 0.25, 1.0).unwrap();
        let bottom = pt(&[0.0, 0.0], -0.25);
        assert!(!b.contains(&bottom).unwrap());
        let inside = pt(&[0.0, 0.0], -0.2);
        assert!(b.contains(&inside).unwrap());
    }

    #[test]
    fn ball_case_split_tie_goes_to_boundary_case() {
        let b = AnisotropicBall::new(pt(&[0.0, 0.2], 0.0), 0.2, 0.5).unwrap();
        assert!(!b.is_parabolic_case());
        assert_eq!(b.time_depth(), 0.2);
    }

    #[test]
    fn ball_nesting_same_case_and_enlarged_across_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let yn: f64 = rng.gen_range(0.0..0.8);
            let s: f64 = rng.gen_range(-0.5..0.5);
            let lambda: f64 = rng.gen_range(0.05..1.0);
            let center = pt(&[rng.gen_range(-0.5..0.5), yn], s);
            let r: f64 = rng.gen_range(0.01..0.9f64.min(1.0 / lambda));
            let rr: f64 = rng.gen_range(r..1.0f64.min(1.0 / lambda));
            let small = AnisotropicBall::new(center.clone(), r, lambda).unwrap();
            let big = AnisotropicBall::new(center.clone(), rr, lambda).unwrap();
            let same_case = small.is_parabolic_case() == big.is_parabolic_case();
            let target = if same_case {
                big
            } else {
                AnisotropicBall::new(center.clone(), (2.0 * rr).min(1.0 / lambda), lambda).unwrap()
            };
            for _ in 0..50 {
                let p = pt(
                    &[
                        center.x[0] + rng.gen_range(-r..r),
                        (yn + rng.gen_range(-r..r)).max(if small.is_parabolic_case() { -10.0 } else { 0.0 }),
                    ],
                    s - rng.gen_range(0.0..small.time_depth() * 0.999) - 1e-9,
                );
                if small.contains(&p).unwrap() {
                    assert!(target.contains(&p).unwrap(), "nesting failed at {p:?}");
                }
            }
        }
    }

    #[test]
    fn annulus_points_have_comparable_scaled_distance() {
        // membership consistency: points of B_{2r} \ B_r sit at d_lambda
        // distance between r and a dimensional constant times r
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let n = 2;
            let lambda: f64 = rng.gen_range(0.05..1.0);
            let yn: f64 = rng.gen_range(0.0..0.9);
            let center = pt(&[rng.gen_range(-0.3..0.3), yn], rng.gen_range(-0.2..0.2));
            let r: f64 = rng.gen_range(0.05..0.4f64.min(0.5 / lambda));
            let inner = AnisotropicBall::new(center.clone(), r, lambda).unwrap();
            let outer = AnisotropicBall::new(center.clone(), 2.0 * r, lambda).unwrap();
            let cmax = 2.0 * ((n - 1) as f64).sqrt() + 8.0;
            for _ in 0..50 {
                let p = pt(
                    &[
                        center.x[0] + rng.gen_range(-2.0 * r..2.0 * r),
                        yn + rng.gen_range(-2.0 * r..2.0 * r),
                    ],
                    center.t - rng.gen_range(0.0..outer.time_depth()),
                );
                if outer.contains(&p).unwrap() && !inner.contains(&p).unwrap() {
                    let d = distance_scaled(&p, &center, lambda).unwrap();
                    assert!(
                        d >= r * (1.0 - 1e-6) && d <= cmax * r,
                        "annulus point at distance {d}, r = {r}"
                    );
                }
            }
        }
    }

    #[test]
    fn region_membership_matches_set_definitions() {
        // C_r excludes {x_n = 0}; F_r lives there; the Dirichlet boundary
        // excludes F_r
        let cyl = Region::cylinder_at_origin(2, 1.0f64).unwrap();
        let lat = Region::new(RegionKind::LateralBoundary, pt(&[0.0, 0.0], 0.0), 1.0).unwrap();
        let dir = Region::new(RegionKind::DirichletBoundary, pt(&[0.0, 0.0], 0.0), 1.0).unwrap();
        let on_face = pt(&[0.2, 0.0], -0.3);
        assert!(!cyl.contains(&on_face).unwrap());
        assert!(lat.contains(&on_face).unwrap());
        assert!(!dir.contains(&on_face).unwrap());
        let interior = pt(&[0.2, 0.5], -0.3);
        assert!(cyl.contains(&interior).unwrap());
        assert!(!dir.contains(&interior).unwrap());
        for p in [
            pt(&[0.2, 0.5], -1.0),  // bottom slice
            pt(&[0.2, 1.0], -0.3),  // top x_n face
            pt(&[1.0, 0.5], -0.3),  // lateral tangential face
            pt(&[1.0, 0.0], -0.3),  // rim of the lateral face
        ] {
            assert!(dir.contains(&p).unwrap(), "expected Dirichlet member {p:?}");
        }
    }

    #[test]
    fn region_json_roundtrip() {
        let reg = Region::new(RegionKind::ParabolicCylinder, pt(&[0.1, 0.2], -0.3), 0.5).unwrap();
        let desc = RegionDescription::from_region(&reg);
        let json = serde_json::to_string(&desc).unwrap();
        let back: RegionDescription = serde_json::from_str(&json).unwrap();
        let reg2: Region<f64> = back.to_region().unwrap();
        assert_eq!(reg, reg2);
        let ball = AnisotropicBall::new(pt(&[0.0, 0.4], 0.0), 0.2, 0.25).unwrap();
        let desc = RegionDescription::from_ball(&ball);
        let ball2: AnisotropicBall<f64> = desc.to_ball().unwrap();
        assert_eq!(ball, ball2);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = pt(&[0.0, 0.0], 0.0);
        let q = pt(&[0.0, 0.0, 0.0], 0.0);
        assert!(distance(&p, &q).is_err());
    }
}
