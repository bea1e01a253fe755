//! Solvers and estimate checkers for the linearized problem: the
//! n-dimensional oblique-derivative parabolic problem on the unit cylinder,
//! its one-dimensional specialization, Pucci extremal operators, and the
//! oscillation-decay / boundary-regularity measurements.

use crate::fields::{FieldError, GridSpec, Interval, ScalarField};
use crate::geometry::{AnisotropicBall, Region, RegionKind, SpaceTimePoint};
use crate::linalg::{BandMatrix, LinalgError, SymMatrix};
use crate::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObliqueError {
    #[error("coefficient bound violated: {0}")]
    CoefficientBound(String),
    #[error("grid too coarse for the boundary stencil: need at least {0} layers in x_n")]
    GridTooCoarse(usize),
    #[error("linear solve failed: {0}")]
    Linalg(#[from] LinalgError),
    #[error("field error: {0}")]
    Field(#[from] FieldError),
    #[error("geometry error: {0}")]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error("{0}")]
    Invalid(String),
}

/// Maximal Pucci operator: max of tr(A N) over K^{-1} I <= A <= K I,
/// i.e. K * (positive eigenvalues) + K^{-1} * (negative eigenvalues).
pub fn pucci_plus<T: Real>(n_mat: &SymMatrix<T>, k: T) -> T {
    n_mat.eigenvalues().into_iter().fold(T::zero(), |acc, e| {
        acc + if e > T::zero() { k * e } else { e / k }
    })
}

/// Minimal Pucci operator, the dual of [`pucci_plus`].
pub fn pucci_minus<T: Real>(n_mat: &SymMatrix<T>, k: T) -> T {
    n_mat.eigenvalues().into_iter().fold(T::zero(), |acc, e| {
        acc + if e > T::zero() { e / k } else { k * e }
    })
}

/// Time-dependent coefficients (A(t), gamma(t)) with the slab bounds
/// K^{-1} I <= A <= K I, K^{-1} <= gamma_n <= K, |gamma| <= K and the slopes
/// |A'|, |gamma'| <= lambda^{-1}. Bounds are validated on construction by
/// sampled finite differences.
#[derive(Debug, Clone)]
pub struct CoefficientPath<T> {
    k_bound: T,
    lambda: T,
    ts: Vec<T>,
    mats: Vec<SymMatrix<T>>,
    gammas: Vec<Vec<T>>,
}

impl<T: Real> CoefficientPath<T> {
    pub fn constant(
        a: SymMatrix<T>,
        gamma: Vec<T>,
        k_bound: T,
        lambda: T,
    ) -> Result<Self, ObliqueError> {
        Self::from_samples(
            vec![-T::one(), T::zero()],
            vec![a.clone(), a],
            vec![gamma.clone(), gamma],
            k_bound,
            lambda,
        )
    }

    pub fn from_samples(
        ts: Vec<T>,
        mats: Vec<SymMatrix<T>>,
        gammas: Vec<Vec<T>>,
        k_bound: T,
        lambda: T,
    ) -> Result<Self, ObliqueError> {
        if ts.len() < 2 || ts.len() != mats.len() || ts.len() != gammas.len() {
            return Err(ObliqueError::Invalid("need matching sample vectors (>= 2)".into()));
        }
        if lambda <= T::zero() || lambda > T::one() {
            return Err(ObliqueError::Invalid(format!("lambda {lambda} outside (0,1]")));
        }
        if k_bound < T::one() {
            return Err(ObliqueError::Invalid(format!("K = {k_bound} must be >= 1")));
        }
        let path = Self { k_bound, lambda, ts, mats, gammas };
        path.validate()?;
        Ok(path)
    }

    fn validate(&self) -> Result<(), ObliqueError> {
        let k = self.k_bound;
        let tol = T::of(1e-9);
        for (i, m) in self.mats.iter().enumerate() {
            let eig = m.eigenvalues();
            let lo = eig[0];
            let hi = *eig.last().unwrap();
            if lo < k.recip() - tol || hi > k + tol {
                return Err(ObliqueError::CoefficientBound(format!(
                    "A eigenvalues [{lo}, {hi}] escape [1/K, K] at sample {i}"
                )));
            }
            let g = &self.gammas[i];
            let gn = *g.last().unwrap();
            if gn < k.recip() - tol || gn > k + tol {
                return Err(ObliqueError::CoefficientBound(format!(
                    "gamma_n = {gn} outside [1/K, K] at sample {i}"
                )));
            }
            let norm = g.iter().map(|&v| v * v).fold(T::zero(), |a, b| a + b).sqrt();
            if norm > k + tol {
                return Err(ObliqueError::CoefficientBound(format!(
                    "|gamma| = {norm} exceeds K at sample {i}"
                )));
            }
        }
        let slope_cap = self.lambda.recip() + tol;
        for i in 1..self.ts.len() {
            let dt = self.ts[i] - self.ts[i - 1];
            if dt <= T::zero() {
                return Err(ObliqueError::Invalid("sample times must increase".into()));
            }
            let diff = self.mats[i].add(&self.mats[i - 1].scale(-T::one()));
            let spectral = diff
                .eigenvalues()
                .into_iter()
                .fold(T::zero(), |a, e| a.max(e.abs()));
            if spectral / dt > slope_cap {
                return Err(ObliqueError::CoefficientBound(format!(
                    "|A'| ~ {} exceeds 1/lambda between samples {} and {}",
                    (spectral / dt),
                    i - 1,
                    i
                )));
            }
            let gd: T = self.gammas[i]
                .iter()
                .zip(&self.gammas[i - 1])
                .map(|(&a, &b)| (a - b) * (a - b))
                .fold(T::zero(), |x, y| x + y)
                .sqrt();
            if gd / dt > slope_cap {
                return Err(ObliqueError::CoefficientBound(format!(
                    "|gamma'| ~ {} exceeds 1/lambda between samples {} and {}",
                    gd / dt,
                    i - 1,
                    i
                )));
            }
        }
        Ok(())
    }

    /// Smoothed random walk subject to all the slab bounds, kept diagonally
    /// dominant so the monotone cross-derivative stencil applies.
    pub fn random(
        n: usize,
        k_bound: T,
        lambda: T,
        seed: u64,
        samples: usize,
    ) -> Result<Self, ObliqueError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = samples.max(8);
        let ts: Vec<T> = (0..m)
            .map(|i| -T::one() + T::of(i as f64 / (m as f64 - 1.0)))
            .collect();
        let dt = 1.0 / (m as f64 - 1.0);
        let k = k_bound.f64();
        let (dlo, dhi) = (1.5 / k, 0.6 * k);
        // derivative budget shared between smoothing and the raw walk
        let step_cap = (0.2 / lambda.f64() * dt).min((dhi - dlo) * 0.2);
        let mut diag = vec![vec![0.0f64; m]; n];
        for row in diag.iter_mut() {
            let mut v = rng.gen_range(dlo..dhi);
            for s in row.iter_mut() {
                *s = v;
                v = (v + rng.gen_range(-step_cap..step_cap)).clamp(dlo, dhi);
            }
        }
        let theta = 1.0 / 3.0;
        let mut off = vec![vec![vec![0.0f64; m]; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let mut v = 0.0f64;
                for s in 0..m {
                    let cap = theta * diag[i][s].min(diag[j][s]) / (n as f64 - 1.0).max(1.0);
                    v = (v + rng.gen_range(-step_cap..step_cap)).clamp(-cap, cap);
                    off[i][j][s] = v;
                }
            }
        }
        let mats: Vec<SymMatrix<T>> = (0..m)
            .map(|s| {
                let mut a = SymMatrix::zeros(n);
                for i in 0..n {
                    a.set(i, i, T::of(diag[i][s]));
                    for j in (i + 1)..n {
                        a.set(i, j, T::of(off[i][j][s]));
                    }
                }
                a
            })
            .collect();
        let (glo, ghi) = (1.2 / k, 0.8 * k);
        let tang_cap = 0.5 * k / (n as f64).sqrt();
        let mut gam = vec![vec![0.0f64; m]; n];
        for (i, row) in gam.iter_mut().enumerate() {
            let mut v = if i == n - 1 { rng.gen_range(glo..ghi) } else { rng.gen_range(-tang_cap..tang_cap) };
            for s in row.iter_mut() {
                *s = v;
                let dv = rng.gen_range(-step_cap..step_cap);
                v = if i == n - 1 {
                    (v + dv).clamp(glo, ghi)
                } else {
                    (v + dv).clamp(-tang_cap, tang_cap)
                };
            }
        }
        let gammas: Vec<Vec<T>> = (0..m)
            .map(|s| (0..n).map(|i| T::of(gam[i][s])).collect())
            .collect();
        Self::from_samples(ts, mats, gammas, k_bound, lambda)
    }

    pub fn k_bound(&self) -> T {
        self.k_bound
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.mats[0].n()
    }

    fn segment(&self, t: T) -> (usize, T) {
        let last = self.ts.len() - 1;
        if t <= self.ts[0] {
            return (0, T::zero());
        }
        if t >= self.ts[last] {
            return (last - 1, T::one());
        }
        let mut i = 0;
        while i + 1 < self.ts.len() && self.ts[i + 1] < t {
            i += 1;
        }
        let f = (t - self.ts[i]) / (self.ts[i + 1] - self.ts[i]);
        (i, f)
    }

    pub fn a_at(&self, t: T) -> SymMatrix<T> {
        let (i, f) = self.segment(t);
        self.mats[i].scale(T::one() - f).add(&self.mats[i + 1].scale(f))
    }

    pub fn gamma_at(&self, t: T) -> Vec<T> {
        let (i, f) = self.segment(t);
        self.gammas[i]
            .iter()
            .zip(&self.gammas[i + 1])
            .map(|(&a, &b)| a * (T::one() - f) + b * f)
            .collect()
    }
}

/// Boundary-stencil choice for the oblique row on {x_n = 0}.
///
/// `Monotone` couples first-order one-sided/upwind differences, which keeps
/// the implicit system an M-matrix (exact discrete comparison). The
/// `SecondOrder` variant is available for accuracy studies and convergence
/// measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryStencil {
    Monotone,
    SecondOrder,
}

/// Implicit time integrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeScheme {
    BackwardEuler,
    CrankNicolson,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions<T> {
    pub boundary_stencil: BoundaryStencil,
    pub time_scheme: TimeScheme,
    /// Tolerance on the per-step linear residual before the solve is
    /// declared broken.
    pub residual_tol: T,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            boundary_stencil: BoundaryStencil::Monotone,
            time_scheme: TimeScheme::BackwardEuler,
            residual_tol: T::of(1e-8),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub max_linear_residual: f64,
    pub steps: usize,
    pub unknowns: usize,
    pub monotone_stencil: bool,
}

/// Grid of the unit cylinder: x_i in [-1,1] for i < n, x_n in [0,1],
/// t in [-1,0].
pub fn cylinder_grid<T: Real>(n: usize, h: T, dt: T) -> Result<GridSpec<T>, ObliqueError> {
    if n < 2 {
        return Err(ObliqueError::Invalid("cylinder grid needs n >= 2".into()));
    }
    let mut ext = vec![Interval::new(-T::one(), T::one()); n - 1];
    ext.push(Interval::new(T::zero(), T::one()));
    Ok(GridSpec::new(h, dt, ext, Interval::new(-T::one(), T::zero()))?)
}

/// Node classification on the cylinder grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NodeClass {
    Dirichlet,
    Oblique,
    Interior,
}

fn classify<T: Real>(spec: &GridSpec<T>, idx: &[usize]) -> NodeClass {
    let n = spec.n();
    let counts = spec.spatial_counts();
    for i in 0..n - 1 {
        if idx[i] == 0 || idx[i] == counts[i] - 1 {
            return NodeClass::Dirichlet;
        }
    }
    if idx[n - 1] == counts[n - 1] - 1 {
        return NodeClass::Dirichlet;
    }
    if idx[n - 1] == 0 {
        NodeClass::Oblique
    } else {
        NodeClass::Interior
    }
}

/// Monotone decomposition of tr(A D^2 v): axis second differences with
/// depleted weights plus diagonal second differences per off-diagonal
/// entry. Returns (axis weights, pair weights (i, j, w, sign)) where sign
/// +1 uses the e_i + e_j diagonal and -1 the e_i - e_j one. Falls back to
/// the centered cross stencil (monotone = false) when A is not diagonally
/// dominant.
fn cross_weights<T: Real>(a: &SymMatrix<T>) -> (Vec<T>, Vec<(usize, usize, T, i8)>, bool) {
    let n = a.n();
    let mut axis = vec![T::zero(); n];
    let mut offsum = vec![T::zero(); n];
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = a.get(i, j);
            if v != T::zero() {
                offsum[i] = offsum[i] + v.abs();
                offsum[j] = offsum[j] + v.abs();
                pairs.push((i, j, v.abs(), if v > T::zero() { 1i8 } else { -1i8 }));
            }
        }
    }
    let mut monotone = true;
    for i in 0..n {
        axis[i] = a.get(i, i) - offsum[i];
        if axis[i] < T::zero() {
            monotone = false;
        }
    }
    if !monotone {
        // centered cross differences: keep full diagonal weights
        for i in 0..n {
            axis[i] = a.get(i, i);
        }
    }
    (axis, pairs, monotone)
}

/// Solves the Dirichlet problem for the linearized oblique system
///   lambda v_t = tr(A(t) D^2 v)   in the cylinder interior,
///   v_t = gamma(t) . grad v       on {x_n = 0},
/// with data on the Dirichlet boundary (bottom slice, outer faces).
pub fn solve_dirichlet<T: Real>(
    coeffs: &CoefficientPath<T>,
    data: &(dyn Fn(&SpaceTimePoint<T>) -> T + Sync),
    spec: &GridSpec<T>,
    opts: SolverOptions<T>,
) -> Result<(ScalarField<T>, SolveReport), ObliqueError> {
    let n = spec.n();
    if coeffs.dim() != n {
        return Err(ObliqueError::Invalid("coefficient dimension disagrees with grid".into()));
    }
    let counts = spec.spatial_counts().to_vec();
    if counts[n - 1] < 4 {
        return Err(ObliqueError::GridTooCoarse(3));
    }
    let lambda = coeffs.lambda();
    let h = spec.h();
    let dt = spec.dt();
    let spatial_len = spec.spatial_len();
    let mut field = ScalarField::zeros(spec.clone());
    let strides: Vec<usize> = {
        let mut s = vec![1usize; n];
        for i in (0..n - 1).rev() {
            s[i] = s[i + 1] * counts[i + 1];
        }
        s
    };
    // initial slice is Dirichlet data
    let mut prev = vec![T::zero(); spatial_len];
    for flat in 0..spatial_len {
        let idx = field.unflatten(flat);
        let p = spec.point(&idx, 0);
        prev[flat] = data(&p);
        field.set(&idx, 0, prev[flat])?;
    }
    let kl = strides[0] + if n >= 3 { strides[1] } else { 1 };
    let mut max_res = T::zero();
    let mut monotone_all = true;
    let theta = match opts.time_scheme {
        TimeScheme::BackwardEuler => T::one(),
        TimeScheme::CrankNicolson => T::of(0.5),
    };
    for k in 1..spec.time_count() {
        let t_new = spec.time(k);
        let t_old = spec.time(k - 1);
        let a_new = coeffs.a_at(t_new);
        let gamma_new = coeffs.gamma_at(t_new);
        let a_old = coeffs.a_at(t_old);
        let gamma_old = coeffs.gamma_at(t_old);
        let (axis_new, pairs_new, mono1) = cross_weights(&a_new);
        let (axis_old, pairs_old, _) = cross_weights(&a_old);
        monotone_all &= mono1;
        let mut mat = BandMatrix::<T>::zeros(spatial_len, kl, kl);
        let mut rhs = vec![T::zero(); spatial_len];
        for flat in 0..spatial_len {
            let idx = field.unflatten(flat);
            match classify(spec, &idx) {
                NodeClass::Dirichlet => {
                    mat.set(flat, flat, T::one());
                    let p = spec.point(&idx, k);
                    rhs[flat] = data(&p);
                }
                NodeClass::Interior => {
                    // lambda (v - prev)/dt = theta L_new v + (1-theta) L_old prev
                    mat.set(flat, flat, lambda / dt);
                    rhs[flat] = lambda / dt * prev[flat];
                    let apply = |weights: &[T],
                                     pairs: &[(usize, usize, T, i8)],
                                     implicit: bool,
                                     w_time: T,
                                     mat: &mut BandMatrix<T>,
                                     rhs: &mut Vec<T>| {
                        let h2 = h * h;
                        let mut add = |target: usize, coef: T| {
                            if implicit {
                                mat.add_to(flat, target, -coef * w_time);
                            } else {
                                rhs[flat] = rhs[flat] + coef * w_time * prev[target];
                            }
                        };
                        for axis_i in 0..n {
                            let w = weights[axis_i] / h2;
                            if w != T::zero() {
                                add(flat + strides[axis_i], w);
                                add(flat - strides[axis_i], w);
                                add(flat, -T::of(2.0) * w);
                            }
                        }
                        for &(i, j, w, sign) in pairs {
                            let w = w / h2;
                            let (sp, sm) = if sign > 0 {
                                (strides[i] + strides[j], strides[i] + strides[j])
                            } else {
                                (strides[i] - strides[j], strides[i] - strides[j])
                            };
                            // second difference along e_i + e_j or e_i - e_j
                            if sign > 0 {
                                add(flat + sp, w);
                                add(flat - sm, w);
                            } else {
                                add(flat + sp, w);
                                add(flat - sm, w);
                            }
                            add(flat, -T::of(2.0) * w);
                        }
                    };
                    apply(&axis_new, &pairs_new, true, theta, &mut mat, &mut rhs);
                    if theta < T::one() {
                        apply(&axis_old, &pairs_old, false, T::one() - theta, &mut mat, &mut rhs);
                    }
                }
                NodeClass::Oblique => {
                    // (v - prev)/dt = theta B_new v + (1-theta) B_old prev
                    mat.set(flat, flat, T::one() / dt);
                    rhs[flat] = prev[flat] / dt;
                    let apply = |gamma: &Vec<T>,
                                     implicit: bool,
                                     w_time: T,
                                     mat: &mut BandMatrix<T>,
                                     rhs: &mut Vec<T>| {
                        let mut add = |target: usize, coef: T| {
                            if implicit {
                                mat.add_to(flat, target, -coef * w_time);
                            } else {
                                rhs[flat] = rhs[flat] + coef * w_time * prev[target];
                            }
                        };
                        let gn = gamma[n - 1];
                        match opts.boundary_stencil {
                            BoundaryStencil::Monotone => {
                                // first-order one-sided into the domain
                                add(flat + strides[n - 1], gn / h);
                                add(flat, -gn / h);
                                for i in 0..n - 1 {
                                    let gi = gamma[i];
                                    if gi == T::zero() {
                                        continue;
                                    }
                                    if gi > T::zero() {
                                        add(flat + strides[i], gi / h);
                                        add(flat, -gi / h);
                                    } else {
                                        add(flat, gi / h);
                                        add(flat - strides[i], -gi / h);
                                    }
                                }
                            }
                            BoundaryStencil::SecondOrder => {
                                // second-order one-sided normal, centered tangential
                                let c = gn / (T::of(2.0) * h);
                                add(flat, -T::of(3.0) * c);
                                add(flat + strides[n - 1], T::of(4.0) * c);
                                add(flat + 2 * strides[n - 1], -c);
                                for i in 0..n - 1 {
                                    let gi = gamma[i] / (T::of(2.0) * h);
                                    if gi != T::zero() {
                                        add(flat + strides[i], gi);
                                        add(flat - strides[i], -gi);
                                    }
                                }
                            }
                        }
                    };
                    apply(&gamma_new, true, theta, &mut mat, &mut rhs);
                    if theta < T::one() {
                        apply(&gamma_old, false, T::one() - theta, &mut mat, &mut rhs);
                    }
                }
            }
        }
        let lu = mat.clone().factor()?;
        let sol = lu.solve(&rhs);
        let prod = mat.matvec(&sol);
        for i in 0..spatial_len {
            max_res = max_res.max((prod[i] - rhs[i]).abs());
        }
        for flat in 0..spatial_len {
            let idx = field.unflatten(flat);
            field.set(&idx, k, sol[flat])?;
        }
        prev = sol;
    }
    if max_res > opts.residual_tol {
        return Err(ObliqueError::Invalid(format!(
            "linear residual {} exceeds tolerance",
            max_res.f64()
        )));
    }
    Ok((
        field,
        SolveReport {
            max_linear_residual: max_res.f64(),
            steps: spec.time_count() - 1,
            unknowns: spatial_len,
            monotone_stencil: monotone_all
                && matches!(opts.boundary_stencil, BoundaryStencil::Monotone)
                && matches!(opts.time_scheme, TimeScheme::BackwardEuler),
        },
    ))
}

/// One-dimensional problem on (0,1) x (-1,0]:
///   w_t = (A(t) w_xx + h(x,t)) / lambda     in the interior,
///   w_t = gamma(t) w_x + f(t)               on {x = 0},
/// with data on {x = 1} and the bottom slice.
#[derive(Clone)]
pub struct ObliqueProblem1D<T> {
    pub a: Arc<dyn Fn(T) -> T + Send + Sync>,
    pub gamma: Arc<dyn Fn(T) -> T + Send + Sync>,
    pub source: Arc<dyn Fn(T, T) -> T + Send + Sync>,
    pub boundary_source: Arc<dyn Fn(T) -> T + Send + Sync>,
    pub k_bound: T,
    pub lambda: T,
}

impl<T: Real> ObliqueProblem1D<T> {
    pub fn validate(&self) -> Result<(), ObliqueError> {
        let k = self.k_bound;
        let cap = k / self.lambda + T::of(1e-9);
        let m = 64;
        let mut prev_a = None;
        for i in 0..=m {
            let t = -T::one() + T::of(i as f64 / m as f64);
            let a = (self.a)(t);
            let g = (self.gamma)(t);
            if a < k.recip() - T::of(1e-12) || a > k + T::of(1e-12) {
                return Err(ObliqueError::CoefficientBound(format!("A({t}) = {a} escapes [1/K, K]")));
            }
            if g < k.recip() - T::of(1e-12) || g > k + T::of(1e-12) {
                return Err(ObliqueError::CoefficientBound(format!(
                    "gamma({t}) = {g} escapes [1/K, K]"
                )));
            }
            if let Some(pa) = prev_a {
                let rate = (a - pa).abs() * T::of(m as f64);
                if rate > cap {
                    return Err(ObliqueError::CoefficientBound(format!(
                        "|A'| ~ {rate} exceeds K/lambda"
                    )));
                }
            }
            prev_a = Some(a);
        }
        Ok(())
    }
}

/// Grid for the 1D problem: x in [0,1], t in [-1,0].
pub fn strip_grid_1d<T: Real>(h: T, dt: T) -> Result<GridSpec<T>, ObliqueError> {
    Ok(GridSpec::new(
        h,
        dt,
        vec![Interval::new(T::zero(), T::one())],
        Interval::new(-T::one(), T::zero()),
    )?)
}

pub fn solve_1d<T: Real>(
    prob: &ObliqueProblem1D<T>,
    data: &(dyn Fn(&SpaceTimePoint<T>) -> T + Sync),
    spec: &GridSpec<T>,
    opts: SolverOptions<T>,
) -> Result<(ScalarField<T>, SolveReport), ObliqueError> {
    prob.validate()?;
    if spec.n() != 1 {
        return Err(ObliqueError::Invalid("1D solver needs a 1D grid".into()));
    }
    let m = spec.spatial_counts()[0];
    if m < 4 {
        return Err(ObliqueError::GridTooCoarse(3));
    }
    let h = spec.h();
    let dt = spec.dt();
    let lambda = prob.lambda;
    let mut field = ScalarField::zeros(spec.clone());
    let mut prev = vec![T::zero(); m];
    for i in 0..m {
        let p = spec.point(&[i], 0);
        prev[i] = data(&p);
        field.set(&[i], 0, prev[i])?;
    }
    let theta = match opts.time_scheme {
        TimeScheme::BackwardEuler => T::one(),
        TimeScheme::CrankNicolson => T::of(0.5),
    };
    let kl = 2; // second-order boundary stencil reaches two nodes in
    let mut max_res = T::zero();
    for k in 1..spec.time_count() {
        let t_new = spec.time(k);
        let t_old = spec.time(k - 1);
        let mut mat = BandMatrix::<T>::zeros(m, kl, kl);
        let mut rhs = vec![T::zero(); m];
        // x = 0: oblique row
        {
            mat.set(0, 0, T::one() / dt);
            rhs[0] = prev[0] / dt;
            let apply = |t: T, implicit: bool, w: T, mat: &mut BandMatrix<T>, rhs: &mut Vec<T>| {
                let g = (prob.gamma)(t);
                let f = (prob.boundary_source)(t);
                rhs[0] = rhs[0] + w * f;
                let mut add = |j: usize, c: T| {
                    if implicit {
                        mat.add_to(0, j, -c * w);
                    } else {
                        rhs[0] = rhs[0] + c * w * prev[j];
                    }
                };
                match opts.boundary_stencil {
                    BoundaryStencil::Monotone => {
                        add(1, g / h);
                        add(0, -g / h);
                    }
                    BoundaryStencil::SecondOrder => {
                        let c = g / (T::of(2.0) * h);
                        add(0, -T::of(3.0) * c);
                        add(1, T::of(4.0) * c);
                        add(2, -c);
                    }
                }
            };
            apply(t_new, true, theta, &mut mat, &mut rhs);
            if theta < T::one() {
                apply(t_old, false, T::one() - theta, &mut mat, &mut rhs);
            }
        }
        // interior rows
        for i in 1..m - 1 {
            mat.set(i, i, lambda / dt);
            rhs[i] = lambda / dt * prev[i];
            let x = spec.coord(0, i);
            let apply = |t: T, implicit: bool, w: T, mat: &mut BandMatrix<T>, rhs: &mut Vec<T>| {
                let a = (prob.a)(t);
                rhs[i] = rhs[i] + w * (prob.source)(x, t);
                let c = a / (h * h);
                let mut add = |j: usize, coef: T| {
                    if implicit {
                        mat.add_to(i, j, -coef * w);
                    } else {
                        rhs[i] = rhs[i] + coef * w * prev[j];
                    }
                };
                add(i - 1, c);
                add(i, -T::of(2.0) * c);
                add(i + 1, c);
            };
            apply(t_new, true, theta, &mut mat, &mut rhs);
            if theta < T::one() {
                apply(t_old, false, T::one() - theta, &mut mat, &mut rhs);
            }
        }
        // x = 1: Dirichlet
        mat.set(m - 1, m - 1, T::one());
        rhs[m - 1] = data(&spec.point(&[m - 1], k));
        let lu = mat.clone().factor()?;
        let sol = lu.solve(&rhs);
        let prod = mat.matvec(&sol);
        for i in 0..m {
            max_res = max_res.max((prod[i] - rhs[i]).abs());
        }
        for i in 0..m {
            field.set(&[i], k, sol[i])?;
        }
        prev = sol;
    }
    Ok((
        field,
        SolveReport {
            max_linear_residual: max_res.f64(),
            steps: spec.time_count() - 1,
            unknowns: m,
            monotone_stencil: matches!(opts.boundary_stencil, BoundaryStencil::Monotone)
                && matches!(opts.time_scheme, TimeScheme::BackwardEuler),
        },
    ))
}

/// Configuration of the oscillation-decay measurement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayConfig {
    pub n: usize,
    pub h: f64,
    pub dt: f64,
    pub trials: usize,
    pub lambdas: Vec<f64>,
    pub k_bound: f64,
    pub seed: u64,
    /// gate: every ratio must stay below 1 - required_gap
    pub required_gap: f64,
    /// dyadic radii for the boundary-ball chain
    pub dyadic_radii: Vec<f64>,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self {
            n: 2,
            h: 1.0 / 16.0,
            dt: 1.0 / 64.0,
            trials: 50,
            lambdas: vec![1.0, 0.1, 0.01],
            k_bound: 2.0,
            seed: 0xa11ce,
            required_gap: 0.01,
            dyadic_radii: vec![0.5, 0.25],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayStatistics {
    pub per_lambda_worst: Vec<(f64, f64)>,
    pub worst_ratio: f64,
    pub dyadic_worst: Vec<(f64, f64)>,
    pub excluded_trials: usize,
    pub pass: bool,
}

/// Random continuous boundary data: a small random trigonometric expansion
/// evaluated on the whole cylinder and normalized to [0,1] over the
/// Dirichlet nodes it is read at.
fn random_smooth_data<T: Real>(rng: &mut ChaCha8Rng, n: usize) -> impl Fn(&SpaceTimePoint<T>) -> T + Sync {
    let modes = 4usize;
    let mut coefs = Vec::new();
    for _ in 0..modes {
        let amp: f64 = rng.gen_range(-1.0..1.0);
        let freqs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..3.0)).collect();
        let phases: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..6.28)).collect();
        let tf: f64 = rng.gen_range(0.5..2.5);
        let tp: f64 = rng.gen_range(0.0..6.28);
        coefs.push((amp, freqs, phases, tf, tp));
    }
    move |p: &SpaceTimePoint<T>| {
        let mut s = 0.0;
        for (amp, freqs, phases, tf, tp) in &coefs {
            let mut v = *amp;
            for i in 0..p.dim() {
                v *= (freqs[i] * p.x[i].f64() + phases[i]).sin();
            }
            v *= (tf * p.t.f64() + tp).cos();
            s += v;
        }
        T::of(s)
    }
}

/// Min/max of a data closure over the Dirichlet nodes of the grid, used to
/// normalize trials to [0, 1].
fn data_range_on_dirichlet<T: Real>(
    spec: &GridSpec<T>,
    data: &(dyn Fn(&SpaceTimePoint<T>) -> T + Sync),
) -> (T, T) {
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    let probe = ScalarField::zeros(spec.clone());
    for k in 0..spec.time_count() {
        for flat in 0..spec.spatial_len() {
            let idx = probe.unflatten(flat);
            if k == 0 || classify(spec, &idx) == NodeClass::Dirichlet {
                let v = data(&spec.point(&idx, k));
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    (lo, hi)
}

/// Measures the oscillation decay of solutions on the half cylinder and the
/// dyadic boundary-ball chain, over random admissible coefficients and
/// boundary data.
pub fn check_oscillation_decay<T: Real>(cfg: &DecayConfig) -> Result<DecayStatistics, ObliqueError> {
    let spec = cylinder_grid::<T>(cfg.n, T::of(cfg.h), T::of(cfg.dt))?;
    let origin = SpaceTimePoint::new(vec![T::zero(); cfg.n], T::zero())
        .map_err(ObliqueError::Geometry)?;
    let half = Region::new(RegionKind::Cylinder, origin.clone(), T::of(0.5))
        .map_err(ObliqueError::Geometry)?;
    let whole = Region::new(RegionKind::HalfCube, origin.clone(), T::of(1.0 + 1e-9))
        .map_err(ObliqueError::Geometry)?;
    let mut jobs = Vec::new();
    for &lambda in &cfg.lambdas {
        for trial in 0..cfg.trials {
            jobs.push((lambda, trial));
        }
    }
    let results: Vec<Result<(f64, f64, Vec<(f64, f64)>, bool), ObliqueError>> = jobs
        .par_iter()
        .map(|&(lambda, trial)| {
            let mut rng = ChaCha8Rng::seed_from_u64(
                cfg.seed ^ (trial as u64).wrapping_mul(0x9e3779b97f4a7c15) ^ lambda.to_bits(),
            );
            let coeffs = CoefficientPath::<T>::random(
                cfg.n,
                T::of(cfg.k_bound),
                T::of(lambda),
                rng.gen(),
                33,
            )?;
            let raw = random_smooth_data::<T>(&mut rng, cfg.n);
            let (lo, hi) = data_range_on_dirichlet(&spec, &raw);
            if (hi - lo).f64() < 1e-9 {
                return Ok((lambda, -1.0, Vec::new(), true));
            }
            let data = move |p: &SpaceTimePoint<T>| (raw(p) - lo) / (hi - lo);
            let (field, _) = solve_dirichlet(&coeffs, &data, &spec, SolverOptions::default())?;
            let osc_whole = field.oscillation(&whole)?;
            if osc_whole.f64() < 1e-9 {
                return Ok((lambda, -1.0, Vec::new(), true));
            }
            let osc_half = field.oscillation(&half)?;
            let ratio = (osc_half / osc_whole).f64();
            // dyadic chain at the boundary center (balls centered on
            // {x_n = 0} are lambda-independent)
            let mut chain = Vec::new();
            for &r in &cfg.dyadic_radii {
                let big = AnisotropicBall::new(origin.clone(), T::of(r), T::of(lambda))
                    .map_err(ObliqueError::Geometry)?;
                let small = AnisotropicBall::new(origin.clone(), T::of(r / 2.0), T::of(lambda))
                    .map_err(ObliqueError::Geometry)?;
                let ob = field.oscillation_in_ball(&big)?;
                if ob.f64() > 1e-9 {
                    let os = field.oscillation_in_ball(&small)?;
                    chain.push((r, (os / ob).f64()));
                }
            }
            Ok((lambda, ratio, chain, false))
        })
        .collect();
    let mut per_lambda: Vec<(f64, f64)> = cfg.lambdas.iter().map(|&l| (l, 0.0)).collect();
    let mut worst = 0.0f64;
    let mut dyadic: std::collections::BTreeMap<u64, f64> = Default::default();
    let mut excluded = 0usize;
    for r in results {
        let (lambda, ratio, chain, skipped) = r?;
        if skipped {
            excluded += 1;
            continue;
        }
        worst = worst.max(ratio);
        for entry in per_lambda.iter_mut() {
            if entry.0 == lambda {
                entry.1 = entry.1.max(ratio);
            }
        }
        for (radius, c) in chain {
            let key = radius.to_bits();
            let slot = dyadic.entry(key).or_insert(0.0);
            *slot = slot.max(c);
        }
    }
    let dyadic_worst: Vec<(f64, f64)> =
        dyadic.into_iter().map(|(k, v)| (f64::from_bits(k), v)).collect();
    let gate = 1.0 - cfg.required_gap;
    let pass = worst <= gate && dyadic_worst.iter().all(|&(_, v)| v <= gate);
    Ok(DecayStatistics { per_lambda_worst: per_lambda, worst_ratio: worst, dyadic_worst, excluded_trials: excluded, pass })
}

/// Columnwise boundary remainder |w(x,t) - w(0,t) - x w_x(0,t)| measured on
/// a 1D solution, with the slope extracted by a second-order one-sided
/// stencil; returns the log-log slope over [x_lo, x_hi] and the table.
pub fn boundary_remainder_exponent<T: Real>(
    field: &ScalarField<T>,
    x_lo: T,
    x_hi: T,
) -> Result<(f64, Vec<(f64, f64)>), ObliqueError> {
    if field.spec().n() != 1 {
        return Err(ObliqueError::Invalid("remainder fit expects a 1D field".into()));
    }
    let spec = field.spec();
    let m = spec.spatial_counts()[0];
    let h = spec.h();
    let kt0 = spec.time_count() / 2;
    let mut table = Vec::new();
    for i in 1..m {
        let x = spec.coord(0, i);
        if x < x_lo || x > x_hi {
            continue;
        }
        let mut worst = T::zero();
        for k in kt0..spec.time_count() {
            let w0 = field.get(&[0], k)?;
            let w1 = field.get(&[1], k)?;
            let w2 = field.get(&[2], k)?;
            let wx0 = (-T::of(3.0) * w0 + T::of(4.0) * w1 - w2) / (T::of(2.0) * h);
            let r = (field.get(&[i], k)? - w0 - x * wx0).abs();
            worst = worst.max(r);
        }
        if worst > T::of(1e-14) {
            table.push((x.f64(), worst.f64()));
        }
    }
    if table.len() < 4 {
        return Err(ObliqueError::Invalid("too few abscissae for the remainder fit".into()));
    }
    let exponent = log_log_slope(&table);
    Ok((exponent, table))
}

/// Least-squares slope of log(y) against log(x).
pub fn log_log_slope(table: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = table
        .iter()
        .filter(|&&(x, y)| x > 0.0 && y > 0.0)
        .map(|&(x, y)| (x.ln(), y.ln()))
        .collect();
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Central-difference Pucci sandwich check on a solver field: counts nodes
/// where lambda v_t escapes [M^-(D^2 v) - tol, M^+(D^2 v) + tol] with the
/// per-node tolerance taken from the measured defect between the centered
/// trace and the scheme's time derivative.
pub fn pucci_sandwich_violations<T: Real>(
    field: &ScalarField<T>,
    coeffs: &CoefficientPath<T>,
) -> Result<(usize, usize), ObliqueError> {
    let spec = field.spec().clone();
    let n = spec.n();
    let counts = spec.spatial_counts().to_vec();
    let k_bound = coeffs.k_bound();
    let lambda = coeffs.lambda();
    let mut checked = 0usize;
    let mut violations = 0usize;
    for k in 1..spec.time_count() {
        let a = coeffs.a_at(spec.time(k));
        for flat in 0..spec.spatial_len() {
            let idx = field.unflatten(flat);
            if (0..n).any(|ax| idx[ax] == 0 || idx[ax] == counts[ax] - 1) {
                continue;
            }
            let d = field.derivatives_at(&idx, k)?;
            let hess = SymMatrix::from_rows(n, &d.hess);
            let trace = a.trace_product(&hess);
            let vt = lambda * d.dt;
            let defect = (trace - vt).abs() + T::of(1e-10);
            let plus = pucci_plus(&hess, k_bound);
            let minus = pucci_minus(&hess, k_bound);
            checked += 1;
            if vt > plus + defect || vt < minus - defect {
                violations += 1;
            }
        }
    }
    Ok((checked, violations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sym(n: usize, entries: &[f64]) -> SymMatrix<f64> {
        SymMatrix::from_rows(n, entries)
    }

    #[test]
    fn pucci_closed_forms() {
        assert_eq!(pucci_plus(&SymMatrix::<f64>::zeros(3), 2.0), 0.0);
        let id = SymMatrix::<f64>::identity(2);
        assert!((pucci_plus(&id, 2.0) - 4.0).abs() < 1e-14);
        assert!((pucci_minus(&id, 2.0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn pucci_homogeneity_ordering_superadditivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..500 {
            let n = rng.gen_range(2..4usize);
            let k = rng.gen_range(1.5..4.0);
            let raw: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let raw2: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let m1 = sym(n, &raw);
            let m2 = sym(n, &raw2);
            let c: f64 = rng.gen_range(0.1..3.0);
            assert!((pucci_plus(&m1.scale(c), k) - c * pucci_plus(&m1, k)).abs() < 1e-10);
            assert!((pucci_minus(&m1.scale(c), k) - c * pucci_minus(&m1, k)).abs() < 1e-10);
            assert!(pucci_minus(&m1, k) <= pucci_plus(&m1, k) + 1e-12);
            let lhs = pucci_minus(&m1, k) + pucci_minus(&m2, k);
            let rhs = pucci_minus(&m1.add(&m2), k);
            assert!(lhs <= rhs + 1e-10, "superadditivity failed: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn coefficient_path_validation_rejects_bad_data() {
        // eigenvalue outside [1/K, K]
        let a = sym(2, &[3.0, 0.0, 0.0, 1.0]);
        assert!(CoefficientPath::constant(a, vec![0.0, 1.0], 2.0, 0.5).is_err());
        // gamma_n below 1/K
        let a = SymMatrix::<f64>::identity(2);
        assert!(CoefficientPath::constant(a.clone(), vec![0.0, 0.1], 2.0, 0.5).is_err());
        // slope violation: A jumps too fast for lambda
        let a1 = SymMatrix::<f64>::identity(2);
        let a2 = sym(2, &[1.9, 0.0, 0.0, 1.9]);
        assert!(CoefficientPath::from_samples(
            vec![-1.0, -0.9999],
            vec![a1, a2],
            vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            2.0,
            0.5,
        )
        .is_err());
    }

    #[test]
    fn random_paths_satisfy_bounds() {
        for seed in 0..20 {
            let p = CoefficientPath::<f64>::random(2, 3.0, 0.1, seed, 25).unwrap();
            let a = p.a_at(-0.33);
            let e = a.eigenvalues();
            assert!(e[0] >= 1.0 / 3.0 - 1e-9 && e[1] <= 3.0 + 1e-9);
        }
    }

    #[test]
    fn dirichlet_solver_keeps_constants() {
        let coeffs = CoefficientPath::constant(
            SymMatrix::<f64>::identity(2),
            vec![0.3, 1.0],
            2.0,
            0.5,
        )
        .unwrap();
        let spec = cylinder_grid::<f64>(2, 0.125, 0.125).unwrap();
        let c = 0.7;
        let (v, rep) =
            solve_dirichlet(&coeffs, &|_p| c, &spec, SolverOptions::default()).unwrap();
        assert!(rep.monotone_stencil);
        for &x in v.values() {
            assert!((x - c).abs() < 1e-11);
        }
    }

    #[test]
    fn dirichlet_solver_reproduces_stationary_linear_solution() {
        // v = a . x with gamma . a = 0 solves both equations exactly
        let gamma = vec![0.5, 1.0];
        let a_vec = [1.0, -0.5];
        let coeffs = CoefficientPath::constant(
            SymMatrix::<f64>::identity(2),
            gamma,
            2.0,
            0.25,
        )
        .unwrap();
        let spec = cylinder_grid::<f64>(2, 0.125, 0.0625).unwrap();
        let data = move |p: &SpaceTimePoint<f64>| a_vec[0] * p.x[0] + a_vec[1] * p.x[1];
        let (v, _) = solve_dirichlet(&coeffs, &data, &spec, SolverOptions::default()).unwrap();
        let spec2 = v.spec().clone();
        let mut worst = 0.0f64;
        for k in 0..spec2.time_count() {
            for flat in 0..spec2.spatial_len() {
                let idx = v.unflatten(flat);
                let p = spec2.point(&idx, k);
                worst = worst.max((v.get(&idx, k).unwrap() - data(&p)).abs());
            }
        }
        assert!(worst < 1e-10, "stationary linear solution error {worst}");
    }

    #[test]
    fn dirichlet_solver_comparison_and_max_principle() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for trial in 0..6 {
            let lambda = [1.0, 0.1, 0.01][trial % 3];
            let coeffs = CoefficientPath::<f64>::random(2, 2.0, lambda, 100 + trial as u64, 17).unwrap();
            let spec = cylinder_grid::<f64>(2, 0.125, 1.0 / 32.0).unwrap();
            let amp: f64 = rng.gen_range(0.2..1.0);
            let freq: f64 = rng.gen_range(0.5..2.0);
            let base = move |p: &SpaceTimePoint<f64>| {
                (freq * p.x[0] + 0.3).sin() * (freq * p.x[1] - 0.2).cos() * (p.t * 0.7).cos()
            };
            let bump = move |p: &SpaceTimePoint<f64>| {
                amp * ((p.x[0] * 1.3).cos() + 1.1) * ((p.x[1] - 0.4).sin() + 1.05)
            };
            let (v1, _) = solve_dirichlet(&coeffs, &base, &spec, SolverOptions::default()).unwrap();
            let data2 = move |p: &SpaceTimePoint<f64>| base(p) + bump(p);
            let (v2, _) = solve_dirichlet(&coeffs, &data2, &spec, SolverOptions::default()).unwrap();
            for (a, b) in v1.values().iter().zip(v2.values()) {
                assert!(*a <= *b + 1e-9, "comparison violated: {a} vs {b}");
            }
            // discrete maximum principle for the homogeneous problem
            let mut dmax = f64::NEG_INFINITY;
            let mut dmin = f64::INFINITY;
            let spec2 = v1.spec().clone();
            for k in 0..spec2.time_count() {
                for flat in 0..spec2.spatial_len() {
                    let idx = v1.unflatten(flat);
                    let boundary = k == 0
                        || idx[0] == 0
                        || idx[0] == spec2.spatial_counts()[0] - 1
                        || idx[1] == spec2.spatial_counts()[1] - 1;
                    if boundary {
                        let val = v1.get(&idx, k).unwrap();
                        dmax = dmax.max(val);
                        dmin = dmin.min(val);
                    }
                }
            }
            for &val in v1.values() {
                assert!(val <= dmax + 1e-10 && val >= dmin - 1e-10, "max principle violated");
            }
        }
    }

    #[test]
    fn dirichlet_solver_is_linear_in_data() {
        let coeffs = CoefficientPath::<f64>::random(2, 2.0, 0.5, 7, 17).unwrap();
        let spec = cylinder_grid::<f64>(2, 0.25, 0.125).unwrap();
        let f1 = |p: &SpaceTimePoint<f64>| (p.x[0] + p.t).sin();
        let f2 = |p: &SpaceTimePoint<f64>| (p.x[1] * 2.0).cos() * p.t;
        let combo = |p: &SpaceTimePoint<f64>| 2.0 * (p.x[0] + p.t).sin() - 0.5 * ((p.x[1] * 2.0).cos() * p.t);
        let (v1, _) = solve_dirichlet(&coeffs, &f1, &spec, SolverOptions::default()).unwrap();
        let (v2, _) = solve_dirichlet(&coeffs, &f2, &spec, SolverOptions::default()).unwrap();
        let (vc, _) = solve_dirichlet(&coeffs, &combo, &spec, SolverOptions::default()).unwrap();
        for i in 0..vc.values().len() {
            let lin = 2.0 * v1.values()[i] - 0.5 * v2.values()[i];
            assert!((vc.values()[i] - lin).abs() < 1e-9);
        }
    }

    #[test]
    fn pucci_sandwich_on_solver_output() {
        let coeffs = CoefficientPath::<f64>::random(2, 2.0, 0.5, 42, 17).unwrap();
        let spec = cylinder_grid::<f64>(2, 0.125, 1.0 / 32.0).unwrap();
        let data = |p: &SpaceTimePoint<f64>| (2.0 * p.x[0]).sin() + (1.5 * p.x[1]).cos() + 0.3 * p.t;
        let (v, _) = solve_dirichlet(&coeffs, &data, &spec, SolverOptions::default()).unwrap();
        let (checked, violations) = pucci_sandwich_violations(&v, &coeffs).unwrap();
        assert!(checked > 100);
        assert_eq!(violations, 0);
    }

    fn problem_1d(
        lambda: f64,
        k: f64,
        source: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        bsource: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> ObliqueProblem1D<f64> {
        ObliqueProblem1D {
            a: Arc::new(|t: f64| 1.3 + 0.4 * (3.0 * t).sin()),
            gamma: Arc::new(|t: f64| 1.2 + 0.3 * (2.0 * t).cos()),
            source: Arc::new(source),
            boundary_source: Arc::new(bsource),
            k_bound: k,
            lambda,
        }
    }

    #[test]
    fn solver_1d_exact_affine_fixture() {
        // w = x + t/lambda solves the system with h = 1 and f = 1/lambda - gamma
        let lambda = 0.5;
        let prob = problem_1d(
            lambda,
            2.0,
            |_x, _t| 1.0,
            move |t: f64| 1.0 / lambda - (1.2 + 0.3 * (2.0 * t).cos()),
        );
        let spec = strip_grid_1d::<f64>(1.0 / 32.0, 1.0 / 64.0).unwrap();
        let data = move |p: &SpaceTimePoint<f64>| p.x[0] + p.t / lambda;
        let (w, _) = solve_1d(&prob, &data, &spec, SolverOptions::default()).unwrap();
        let spec2 = w.spec().clone();
        let mut worst = 0.0f64;
        for kk in 0..spec2.time_count() {
            for i in 0..spec2.spatial_counts()[0] {
                let p = spec2.point(&[i], kk);
                worst = worst.max((w.get(&[i], kk).unwrap() - data(&p)).abs());
            }
        }
        assert!(worst < 1e-10, "affine fixture error {worst}");
    }

    #[test]
    fn solver_1d_constant_data_stays_constant() {
        let prob = problem_1d(0.5, 2.0, |_, _| 0.0, |_| 0.0);
        let spec = strip_grid_1d::<f64>(0.125, 0.125).unwrap();
        let (w, _) = solve_1d(&prob, &|_p| 1.5, &spec, SolverOptions::default()).unwrap();
        for &v in w.values() {
            assert!((v - 1.5).abs() < 1e-11);
        }
    }

    #[test]
    fn solver_1d_second_order_convergence_on_manufactured_solution() {
        // w* = cos(x) e^{t}: sources chosen so w* solves the system;
        // Crank-Nicolson + second-order boundary stencil give order ~2
        let lambda = 0.5f64;
        let exact = |x: f64, t: f64| x + (0.5 * x * x) * (0.3 * t).exp();
        let mut errs = Vec::new();
        for &m in &[16usize, 32, 64] {
            let h = 1.0 / m as f64;
            let dt = 1.0 / (2 * m) as f64;
            let a_fun = |t: f64| 1.3 + 0.4 * (3.0 * t).sin();
            let g_fun = |t: f64| 1.2 + 0.3 * (2.0 * t).cos();
            let prob = ObliqueProblem1D {
                a: Arc::new(a_fun),
                gamma: Arc::new(g_fun),
                // h(x,t) = lambda w*_t - A(t) w*_xx
                source: Arc::new(move |x: f64, t: f64| {
                    let wt = 0.5 * x * x * 0.3 * (0.3 * t).exp();
                    let wxx = (0.3 * t).exp();
                    lambda * wt - a_fun(t) * wxx
                }),
                // f(t) = w*_t(0) - gamma w*_x(0)
                boundary_source: Arc::new(move |t: f64| -g_fun(t)),
                k_bound: 2.0,
                lambda,
            };
            let spec = strip_grid_1d::<f64>(h, dt).unwrap();
            let data = move |p: &SpaceTimePoint<f64>| exact(p.x[0], p.t);
            let opts = SolverOptions {
                boundary_stencil: BoundaryStencil::SecondOrder,
                time_scheme: TimeScheme::CrankNicolson,
                residual_tol: 1e-7,
            };
            let (w, _) = solve_1d(&prob, &data, &spec, opts).unwrap();
            let spec2 = w.spec().clone();
            let mut worst = 0.0f64;
            for kk in 0..spec2.time_count() {
                for i in 0..spec2.spatial_counts()[0] {
                    worst = worst.max((w.get(&[i], kk).unwrap() - exact(spec2.coord(0, i), spec2.time(kk))).abs());
                }
            }
            errs.push(worst);
        }
        let o1 = (errs[0] / errs[1]).log2();
        let o2 = (errs[1] / errs[2]).log2();
        assert!(0.5 * (o1 + o2) >= 1.8, "orders {o1:.2} {o2:.2}, errors {errs:?}");
    }

    #[test]
    fn solver_1d_stays_below_decay_envelope() {
        // the envelope lives on the rescaled clock tau = t/lambda; on the
        // lambda-deep window the solver solution with |w| <= 1 and
        // w(0, -lambda) <= 0 stays below G(x, t/lambda)
        use crate::barriers::{DecayEnvelope1D, HeatKernelBarrier1D};
        use crate::fields::{GridSpec, Interval};
        let k = 2.0f64;
        let lambda = 0.02f64;
        let env = DecayEnvelope1D {
            kernel: HeatKernelBarrier1D::new(k).unwrap(),
            c1: 3.0,
            c2: 1.0,
            alpha: 0.5,
        };
        let a_fun = |t: f64| 1.0 + 0.3 * (2.0 * t).sin();
        let g_fun = |t: f64| 1.1 + 0.4 * (3.0 * t).cos();
        let prob = ObliqueProblem1D {
            a: Arc::new(a_fun),
            gamma: Arc::new(g_fun),
            source: Arc::new(|_, _| 0.0),
            boundary_source: Arc::new(|_| 0.0),
            k_bound: k,
            lambda,
        };
        let h = 1.0 / 64.0;
        let spec = GridSpec::new(
            h,
            lambda / 128.0,
            vec![Interval::new(0.0, 1.0)],
            Interval::new(-lambda, 0.0),
        )
        .unwrap();
        // |data| <= 1 with data(0, -lambda) = -1 <= 0
        let data = |p: &SpaceTimePoint<f64>| (2.0 * p.x[0] - 1.0).min(1.0);
        let (w, _) = solve_1d(&prob, &data, &spec, SolverOptions::default()).unwrap();
        let spec2 = w.spec().clone();
        for kk in 0..spec2.time_count() {
            for i in 0..spec2.spatial_counts()[0] {
                let x = spec2.coord(0, i);
                let tau = spec2.time(kk) / lambda;
                let bound = env.value(x, tau);
                let v = w.get(&[i], kk).unwrap();
                // continuum supersolution versus discrete solution: honor
                // it up to the boundary-stencil truncation near the steep
                // initial layer of the kernel
                assert!(v <= bound + 0.01, "v({x},{tau}) = {v} above envelope {bound}");
            }
        }
        // at the boundary footpoint the envelope forces genuine decay
        let v_origin = w.get(&[0], spec2.time_count() - 1).unwrap();
        assert!(v_origin <= env.value(0.0, 0.0) + 0.01);
        assert!(env.value(0.0, 0.0) <= 0.25 + 1e-12);
    }

    #[test]
    fn oscillation_decay_quick_batch() {
        let cfg = DecayConfig {
            trials: 4,
            lambdas: vec![1.0, 0.1],
            h: 1.0 / 8.0,
            dt: 1.0 / 32.0,
            ..DecayConfig::default()
        };
        let stats = check_oscillation_decay::<f64>(&cfg).unwrap();
        assert!(stats.pass, "{stats:?}");
        assert!(stats.worst_ratio > 0.0 && stats.worst_ratio <= 0.99);
        for &(_, r) in &stats.dyadic_worst {
            assert!(r <= 0.99);
        }
    }

    #[test]
    fn boundary_remainder_exponent_on_smooth_solution() {
        // smooth data: the solution is C^{2} up to the boundary, so the
        // columnwise remainder scales at least like x^{1.1}
        let lambda = 1.0f64;
        let prob = problem_1d(lambda, 2.0, |_, _| 0.0, |_| 0.0);
        let h = 1.0 / 256.0;
        let spec = strip_grid_1d::<f64>(h, 1.0 / 512.0).unwrap();
        let data = |p: &SpaceTimePoint<f64>| 0.5 + 0.4 * (1.7 * p.x[0] + 0.3).sin() * (0.9 * (p.t + 1.0)).cos();
        let opts = SolverOptions {
            boundary_stencil: BoundaryStencil::SecondOrder,
            time_scheme: TimeScheme::CrankNicolson,
            residual_tol: 1e-7,
        };
        let (w, _) = solve_1d(&prob, &data, &spec, opts).unwrap();
        let (expo, table) = boundary_remainder_exponent(&w, 4.0 * h, 0.5).unwrap();
        assert!(expo >= 1.1, "exponent {expo}, table head {:?}", &table[..4.min(table.len())]);
    }
}
