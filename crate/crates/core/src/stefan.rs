//! Front-tracking finite-difference simulator for the one-phase
//! free-boundary problem in the graphical regime: the temperature solves
//! the heat equation in the liquid, vanishes on the moving front
//! x_n = f(x', t), and the front advances with the scaled normal velocity.
//!
//! The free boundary is carried as a single-valued graph; loss of
//! graphicality is detected and reported as a hard failure.

use crate::barriers::{verify_stefan_barrier, BarrierReport, BarrierSide, StefanBarrier};
use crate::fields::{FieldError, GridSpec, Interval, ScalarField};
use crate::geometry::{Region, SpaceTimePoint};
use crate::linalg::BandMatrix;
use crate::Real;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StefanError {
    #[error("CFL violated: {0}")]
    Cfl(String),
    #[error("front left the computational box at column {0}")]
    FrontLeftBox(usize),
    #[error("front lost graphicality: tangential slope {0} exceeds the fold threshold")]
    FrontFolded(f64),
    #[error("initial data is degenerate: {0}")]
    DegenerateData(String),
    #[error("field error: {0}")]
    Field(#[from] FieldError),
    #[error("geometry error: {0}")]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error("linear algebra error: {0}")]
    Linalg(#[from] crate::linalg::LinalgError),
    #[error("barrier error: {0}")]
    Barrier(#[from] crate::barriers::BarrierError),
    #[error("ordering precondition failed on the region boundary at {point:?}: field {field}, barrier {barrier}")]
    OrderingPrecondition { point: Vec<f64>, field: f64, barrier: f64 },
    #[error("{0}")]
    Invalid(String),
}

/// Which rescaled form of the governing equations the state is written in.
///
/// * `Original`: u_t = lap u, front speed |grad u|.
/// * `DiffusionScaled(lambda)`: lambda u_t = lap u, front speed |grad u|.
/// * `SpeedScaled(lambda)`: u_t = lap u, front speed lambda |grad u|.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    Original,
    DiffusionScaled,
    SpeedScaled,
}

impl Scaling {
    /// Coefficient of u_t in the interior equation.
    pub fn time_coefficient<T: Real>(self, lambda: T) -> T {
        match self {
            Scaling::DiffusionScaled => lambda,
            _ => T::one(),
        }
    }

    /// Factor multiplying |grad u| in the front normal velocity.
    pub fn speed_factor<T: Real>(self, lambda: T) -> T {
        match self {
            Scaling::SpeedScaled => lambda,
            _ => T::one(),
        }
    }
}

/// Free boundary as a graph x_n = f(x', t) on the tangential lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontGraph<T> {
    tang_counts: Vec<usize>,
    tang_lo: Vec<T>,
    h: T,
    times: Vec<T>,
    values: Vec<T>, // time-major, tangential row-major
}

impl<T: Real> FrontGraph<T> {
    pub fn new(tang_counts: Vec<usize>, tang_lo: Vec<T>, h: T) -> Self {
        Self { tang_counts, tang_lo, h, times: Vec::new(), values: Vec::new() }
    }

    pub fn tangential_len(&self) -> usize {
        self.tang_counts.iter().product::<usize>().max(1)
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn push_slice(&mut self, t: T, values: &[T]) {
        assert_eq!(values.len(), self.tangential_len());
        self.times.push(t);
        self.values.extend_from_slice(values);
    }

    pub fn slice(&self, k: usize) -> &[T] {
        let m = self.tangential_len();
        &self.values[k * m..(k + 1) * m]
    }

    pub fn tang_counts(&self) -> &[usize] {
        &self.tang_counts
    }

    /// Tangential coordinates of flat index j.
    pub fn tang_point(&self, mut j: usize) -> Vec<T> {
        let d = self.tang_counts.len();
        let mut strides = vec![1usize; d];
        for i in (0..d.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.tang_counts[i + 1];
        }
        let mut out = Vec::with_capacity(d);
        for i in 0..d {
            let q = if d == 0 { 0 } else { j / strides[i] };
            j %= strides[i].max(1);
            out.push(self.tang_lo[i] + T::of(q as f64) * self.h);
        }
        out
    }

    /// CSV rows t, x', f.
    pub fn write_csv(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        let d = self.tang_counts.len();
        for i in 0..d {
            write!(w, "x{},", i + 1)?;
        }
        writeln!(w, "t,front")?;
        let m = self.tangential_len();
        for (k, &t) in self.times.iter().enumerate() {
            for j in 0..m {
                let xp = self.tang_point(j);
                for v in &xp {
                    write!(w, "{:.17e},", v.f64())?;
                }
                writeln!(w, "{:.17e},{:.17e}", t.f64(), self.values[k * m + j].f64())?;
            }
        }
        Ok(())
    }
}

/// Snapshot of the simulation at one time.
#[derive(Debug, Clone)]
pub struct StefanState<T> {
    /// Single-time-slice field, masked on the ice side (stored value 0).
    pub temperature: ScalarField<T>,
    /// Front height per tangential node (flat row-major index).
    pub front: Vec<T>,
    pub t: T,
    pub lambda: T,
    pub scaling: Scaling,
}

/// Interior stepping mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteppingMode {
    Implicit,
    Explicit,
}

/// Dirichlet data on the outer faces of the computational box.
#[derive(Clone)]
pub enum BoxBoundary<T> {
    Analytic(Arc<dyn Fn(&SpaceTimePoint<T>) -> T + Send + Sync>),
    Constant(T),
}

impl<T: Real> BoxBoundary<T> {
    fn eval(&self, p: &SpaceTimePoint<T>) -> T {
        match self {
            BoxBoundary::Analytic(f) => f(p),
            BoxBoundary::Constant(c) => *c,
        }
    }
}

/// Behavior when the nondegeneracy hypothesis fails on the initial data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegeneracyPolicy {
    Flag,
    Reject,
}

#[derive(Clone)]
pub struct StepConfig<T> {
    pub mode: SteppingMode,
    pub boundary: BoxBoundary<T>,
    /// tangential slope magnitude beyond which the graph is declared folded
    pub fold_slope: T,
    /// below this front-cell fraction the first liquid node is set by
    /// interpolation instead of the heat update
    pub theta_min: T,
    pub degeneracy: DegeneracyPolicy,
}

impl<T: Real> StepConfig<T> {
    pub fn implicit_with(boundary: BoxBoundary<T>) -> Self {
        Self {
            mode: SteppingMode::Implicit,
            boundary,
            fold_slope: T::of(10.0),
            theta_min: T::of(0.05),
            degeneracy: DegeneracyPolicy::Flag,
        }
    }

    pub fn explicit_with(boundary: BoxBoundary<T>) -> Self {
        Self { mode: SteppingMode::Explicit, ..Self::implicit_with(boundary) }
    }
}

/// Tangential strides of the spatial lattice (all axes but the last).
fn tang_strides(counts: &[usize]) -> (Vec<usize>, usize) {
    let d = counts.len() - 1;
    let mut strides = vec![1usize; d.max(1)];
    for i in (0..d.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * counts[i + 1];
    }
    (strides, counts[..d].iter().product::<usize>().max(1))
}

impl<T: Real> StefanState<T> {
    /// Builds a snapshot from a front graph and a liquid-side profile
    /// evaluated at grid nodes; ice nodes (x_n <= front) are masked at 0.
    pub fn from_profile(
        spec_spatial: &[Interval<T>],
        h: T,
        t: T,
        lambda: T,
        scaling: Scaling,
        front_of: impl Fn(&[T]) -> T,
        profile: impl Fn(&SpaceTimePoint<T>) -> T,
    ) -> Result<Self, StefanError> {
        let spec = GridSpec::new(h, T::one(), spec_spatial.to_vec(), Interval::new(t, t))?;
        let n = spec.n();
        let counts = spec.spatial_counts().to_vec();
        let (_, tang_len) = tang_strides(&counts);
        let mut field = ScalarField::zeros(spec);
        let mut front = vec![T::zero(); tang_len];
        let spatial_len = field.spec().spatial_len();
        for flat in 0..spatial_len {
            let idx = field.unflatten(flat);
            let p = field.spec().point(&idx, 0);
            let xp = &p.x[..n - 1];
            let f = front_of(xp);
            let tang_flat = tang_flat_index(&counts, &idx);
            front[tang_flat] = f;
            if p.normal() <= f {
                field.set_masked(&idx, 0, true)?;
                field.set(&idx, 0, T::zero())?;
            } else {
                field.set(&idx, 0, profile(&p).max(T::zero()))?;
            }
        }
        Ok(Self { temperature: field, front, t, lambda, scaling })
    }

    pub fn grid(&self) -> &GridSpec<T> {
        self.temperature.spec()
    }

    /// Checks the nondegeneracy hypothesis: some node at tangential center
    /// distance <= (3/4) radius carries at least threshold.
    pub fn is_nondegenerate(&self, threshold: T) -> bool {
        self.temperature.values().iter().any(|&v| v >= threshold)
    }

    /// Total enthalpy: integral of u plus (latent heat 1) times the liquid
    /// volume. The volume uses the sub-grid front position so the latent
    /// term varies continuously as the front crosses lattice nodes.
    pub fn enthalpy(&self) -> T {
        let spec = self.grid();
        let n = spec.n();
        let cell = spec.h().powi(n as i32);
        let mut total = T::zero();
        let spatial_len = spec.spatial_len();
        for flat in 0..spatial_len {
            let idx = self.temperature.unflatten(flat);
            if !self.temperature.is_masked(&idx, 0).unwrap_or(true) {
                total = total + self.temperature.get(&idx, 0).unwrap() * cell;
            }
        }
        let column = spec.h().powi(n as i32 - 1);
        let top = spec.spatial_extent()[n - 1].hi;
        for &f in &self.front {
            total = total + (top - f.min(top)) * column;
        }
        total
    }

    /// Outward heat flux through the outer faces of the box (one-sided
    /// differences on the liquid part).
    pub fn boundary_flux(&self) -> T {
        let spec = self.grid();
        let n = spec.n();
        let h = spec.h();
        let counts = spec.spatial_counts();
        let face = h.powi((n as i32) - 1);
        let mut flux = T::zero();
        let spatial_len = spec.spatial_len();
        for flat in 0..spatial_len {
            let idx = self.temperature.unflatten(flat);
            if self.temperature.is_masked(&idx, 0).unwrap_or(true) {
                continue;
            }
            for a in 0..n {
                let on_lo = idx[a] == 0;
                let on_hi = idx[a] == counts[a] - 1;
                if !(on_lo || on_hi) {
                    continue;
                }
                let mut inner = idx.clone();
                inner[a] = if on_lo { 1 } else { counts[a] - 2 };
                if self.temperature.is_masked(&inner, 0).unwrap_or(true) {
                    continue;
                }
                let u0 = self.temperature.get(&idx, 0).unwrap();
                let u1 = self.temperature.get(&inner, 0).unwrap();
                // outward normal derivative ~ (u_face - u_inner)/h
                flux = flux + (u0 - u1) / h * face;
            }
        }
        flux
    }
}

fn tang_flat_index(counts: &[usize], idx: &[usize]) -> usize {
    let d = counts.len() - 1;
    let mut flat = 0usize;
    let mut stride = 1usize;
    for i in (0..d).rev() {
        flat += idx[i] * stride;
        stride *= counts[i];
    }
    flat
}

/// Row-major spatial flat index, last axis fastest (matches ScalarField).
fn spatial_flat(counts: &[usize], idx: &[usize]) -> usize {
    let mut flat = 0usize;
    for (a, &i) in idx.iter().enumerate() {
        flat = flat * counts[a] + i;
    }
    flat
}

fn spatial_idx(counts: &[usize], mut flat: usize) -> Vec<usize> {
    let n = counts.len();
    let mut idx = vec![0usize; n];
    for a in (0..n).rev() {
        idx[a] = flat % counts[a];
        flat /= counts[a];
    }
    idx
}

/// Front-cell geometry for one tangential column: index of the first
/// liquid node strictly above the front and the cell fraction theta.
fn first_liquid_index<T: Real>(spec: &GridSpec<T>, f: T) -> Option<(usize, T)> {
    let n = spec.n();
    let lo = spec.spatial_extent()[n - 1].lo;
    let h = spec.h();
    let count = spec.spatial_counts()[n - 1];
    let raw = ((f - lo) / h).f64();
    let i0 = raw.floor() as isize + 1;
    if i0 < 0 {
        return Some((0, T::one()));
    }
    if i0 as usize >= count {
        return None;
    }
    let mut i0 = i0 as usize;
    let mut theta = (spec.coord(n - 1, i0) - f) / h;
    if theta <= T::of(1e-12) {
        // front sits on a node: that node is ice, next one is liquid
        i0 += 1;
        if i0 >= count {
            return None;
        }
        theta = T::one();
    }
    Some((i0, theta.min(T::one())))
}

/// One-sided derivative of u at the front along x_n from two liquid nodes
/// at distances d1 < d2 (quadratic through the front where u = 0).
fn front_gradient<T: Real>(u1: T, u2: T, d1: T, d2: T) -> T {
    (u1 * d2 * d2 - u2 * d1 * d1) / (d1 * d2 * (d2 - d1))
}

/// Per-column front data: normal derivative estimate and tangential slope.
struct FrontColumn<T> {
    grad_n: T,
    slope_sq: T,
}

fn front_columns<T: Real>(state: &StefanState<T>, cfg: &StepConfig<T>) -> Result<Vec<FrontColumn<T>>, StefanError> {
    let spec = state.grid();
    let n = spec.n();
    let h = spec.h();
    let counts = spec.spatial_counts().to_vec();
    let (tstrides, tang_len) = tang_strides(&counts);
    let d = n - 1;
    let mut out = Vec::with_capacity(tang_len);
    for j in 0..tang_len {
        let f = state.front[j];
        let Some((i0, theta)) = first_liquid_index(spec, f) else {
            return Err(StefanError::FrontLeftBox(j));
        };
        // gradient from the first two usable liquid nodes; skip the
        // closest node when the front cell is very thin
        let (ia, ib, da, db) = if theta < cfg.theta_min && i0 + 2 < counts[n - 1] {
            (i0 + 1, i0 + 2, (theta + T::one()) * h, (theta + T::of(2.0)) * h)
        } else if i0 + 1 < counts[n - 1] {
            (i0, i0 + 1, theta * h, (theta + T::one()) * h)
        } else {
            return Err(StefanError::FrontLeftBox(j));
        };
        let mut idx = unflatten_tang(&counts, j);
        idx.push(ia);
        let u1 = state.temperature.get(&idx, 0)?;
        *idx.last_mut().unwrap() = ib;
        let u2 = state.temperature.get(&idx, 0)?;
        let grad = front_gradient(u1, u2, da, db).max(T::zero());
        // tangential slope of the front graph
        let mut slope_sq = T::zero();
        for a in 0..d {
            let ja = (j / tstrides[a]) % counts[a];
            let (fp, fm) = if ja == 0 {
                (state.front[j + tstrides[a]], f)
            } else if ja == counts[a] - 1 {
                (f, state.front[j - tstrides[a]])
            } else {
                (state.front[j + tstrides[a]], state.front[j - tstrides[a]])
            };
            let denom = if ja == 0 || ja == counts[a] - 1 { h } else { T::of(2.0) * h };
            let s = (fp - fm) / denom;
            if s.abs() > cfg.fold_slope {
                return Err(StefanError::FrontFolded(s.f64()));
            }
            slope_sq = slope_sq + s * s;
        }
        out.push(FrontColumn { grad_n: grad, slope_sq });
    }
    Ok(out)
}

fn unflatten_tang(counts: &[usize], mut j: usize) -> Vec<usize> {
    let d = counts.len() - 1;
    let mut idx = vec![0usize; d];
    for i in (0..d).rev() {
        idx[i] = j % counts[i];
        j /= counts[i];
    }
    // row-major with last tangential axis fastest: recompute properly
    idx
}

/// Advances the state by one time step: the front moves explicitly with
/// the scaled one-sided gradient, then the interior is updated with the
/// front frozen at its new position (operator splitting).
pub fn step<T: Real>(
    state: &StefanState<T>,
    dt: T,
    cfg: &StepConfig<T>,
) -> Result<StefanState<T>, StefanError> {
    let spec = state.grid().clone();
    let n = spec.n();
    let h = spec.h();
    let counts = spec.spatial_counts().to_vec();
    let (_, tang_len) = tang_strides(&counts);
    let columns = front_columns(state, cfg)?;
    let speed_factor = state.scaling.speed_factor(state.lambda);
    // front CFL: displacement per step at most half a cell
    let mut vmax = T::zero();
    for c in &columns {
        let v = speed_factor * c.grad_n * (T::one() + c.slope_sq);
        vmax = vmax.max(v.abs());
    }
    if vmax * dt > h * T::of(0.5) + T::of(1e-15) {
        return Err(StefanError::Cfl(format!(
            "front displacement {} exceeds h/2 = {}",
            (vmax * dt).f64(),
            (h * T::of(0.5)).f64()
        )));
    }
    let time_coef = state.scaling.time_coefficient(state.lambda);
    if matches!(cfg.mode, SteppingMode::Explicit) {
        // ghost distances are floored at h/2 in explicit mode, so the
        // sharpest stencil weight is 2/((h/2)(3h/2)) and neighbors add ~2/h^2
        let stable = T::of(0.125) * time_coef * h * h;
        if dt > stable {
            return Err(StefanError::Cfl(format!(
                "explicit step {} exceeds 0.125 lambda_eff h^2 = {}",
                dt.f64(),
                stable.f64()
            )));
        }
    }
    // new front, clamped monotone (the support never shrinks: f never rises)
    let mut new_front = vec![T::zero(); tang_len];
    for j in 0..tang_len {
        let v = speed_factor * columns[j].grad_n * (T::one() + columns[j].slope_sq);
        new_front[j] = (state.front[j] - dt * v).min(state.front[j]);
    }
    let xn_ext = spec.spatial_extent()[n - 1];
    for (j, &f) in new_front.iter().enumerate() {
        if f > xn_ext.hi - T::of(2.0) * h {
            return Err(StefanError::FrontLeftBox(j));
        }
        // the front may sink below the box: the whole column turns liquid
    }
    let t_new = state.t + dt;
    let new_spec = GridSpec::new(
        h,
        T::one(),
        spec.spatial_extent().to_vec(),
        Interval::new(t_new, t_new),
    )?;
    let mut field = ScalarField::zeros(new_spec);
    let spatial_len = spec.spatial_len();
    // classify nodes against the new front
    let theta_fill = match cfg.mode {
        SteppingMode::Implicit => cfg.theta_min,
        SteppingMode::Explicit => cfg.theta_min.max(T::of(0.5)),
    };
    let mut masked = vec![false; spatial_len];
    let mut interp_row = vec![false; spatial_len];
    for flat in 0..spatial_len {
        let idx = spatial_idx(&counts, flat);
        let xn = spec.coord(n - 1, idx[n - 1]);
        let j = tang_flat_index(&counts, &idx);
        let f = new_front[j];
        if xn <= f + T::of(1e-14) {
            masked[flat] = true;
        } else if (xn - f) / h < theta_fill {
            interp_row[flat] = true;
        }
    }
    let on_outer_face = |idx: &[usize]| -> bool {
        (0..n).any(|a| idx[a] == 0 || idx[a] == counts[a] - 1)
    };
    let prev_field = &state.temperature;
    let prev_u = |flat: usize| -> T {
        let idx = spatial_idx(&counts, flat);
        prev_field.get(&idx, 0).unwrap()
    };
    // Shortley-Weller neighbor distances against the new front
    let masked_ref = &masked;
    let spec_ref = &spec;
    let counts_ref = &counts;
    let front_ref = &new_front;
    let neighbor_distance = move |idx: &[usize], axis: usize, dir: isize| -> Option<(Option<usize>, T)> {
        // returns (neighbor flat if liquid, distance); ghost at the front
        // crossing carries value 0
        let cur = idx[axis] as isize + dir;
        if cur < 0 || cur as usize >= counts_ref[axis] {
            return None;
        }
        let mut nb = idx.to_vec();
        nb[axis] = cur as usize;
        let nb_flat = spatial_flat(counts_ref, &nb);
        if !masked_ref[nb_flat] {
            return Some((Some(nb_flat), h));
        }
        let j = tang_flat_index(counts_ref, idx);
        if axis == n - 1 {
            // crossing along the column at the front height
            let xn = spec_ref.coord(n - 1, idx[n - 1]);
            let dist = (xn - front_ref[j]).max(T::of(1e-3) * h).min(h);
            return Some((None, dist));
        }
        // tangential crossing: linear front between the two columns
        let jn = tang_flat_index(counts_ref, &nb);
        let f0 = front_ref[j];
        let f1 = front_ref[jn];
        let xn = spec_ref.coord(n - 1, idx[n - 1]);
        let denom = f1 - f0;
        let frac = if denom.abs() < T::of(1e-14) {
            T::one()
        } else {
            ((xn - f0) / denom).max(T::of(1e-3)).min(T::one())
        };
        Some((None, frac * h))
    };
    match cfg.mode {
        SteppingMode::Implicit => {
            let kl = counts[1..].iter().product::<usize>().max(1);
            let mut mat = BandMatrix::<T>::zeros(spatial_len, kl, kl);
            let mut rhs = vec![T::zero(); spatial_len];
            for flat in 0..spatial_len {
                let idx = spatial_idx(&counts, flat);
                if masked[flat] {
                    mat.set(flat, flat, T::one());
                    rhs[flat] = T::zero();
                } else if on_outer_face(&idx) {
                    mat.set(flat, flat, T::one());
                    let p = spec.point(&idx, 0);
                    rhs[flat] = cfg
                        .boundary
                        .eval(&SpaceTimePoint { x: p.x.clone(), t: t_new })
                        .max(T::zero());
                } else if interp_row[flat] {
                    // node hugs the front: interpolate between the front
                    // (value 0) and the node above
                    let j = tang_flat_index(&counts, &idx);
                    let theta = (spec.coord(n - 1, idx[n - 1]) - new_front[j]) / h;
                    let mut up = idx.clone();
                    up[n - 1] += 1;
                    let upf = spatial_flat(&counts, &up);
                    mat.set(flat, flat, T::one());
                    mat.set(flat, upf, -(theta / (theta + T::one())));
                    rhs[flat] = T::zero();
                } else {
                    mat.set(flat, flat, time_coef / dt);
                    rhs[flat] = time_coef / dt * prev_u(flat);
                    for a in 0..n {
                        let Some((nb_p, dp)) = neighbor_distance(&idx, a, 1) else {
                            return Err(StefanError::Invalid(
                                "interior node lost its + neighbor".into(),
                            ));
                        };
                        let Some((nb_m, dm)) = neighbor_distance(&idx, a, -1) else {
                            return Err(StefanError::Invalid(
                                "interior node lost its - neighbor".into(),
                            ));
                        };
                        let two = T::of(2.0);
                        let cp = two / (dp * (dp + dm));
                        let cm = two / (dm * (dp + dm));
                        mat.add_to(flat, flat, cp + cm);
                        if let Some(p) = nb_p {
                            mat.add_to(flat, p, -cp);
                        }
                        if let Some(m) = nb_m {
                            mat.add_to(flat, m, -cm);
                        }
                    }
                }
            }
            let lu = mat.factor()?;
            let sol = lu.solve(&rhs);
            for flat in 0..spatial_len {
                let idx = spatial_idx(&counts, flat);
                if masked[flat] {
                    field.set_masked(&idx, 0, true)?;
                    field.set(&idx, 0, T::zero())?;
                } else {
                    let v = sol[flat];
                    field.set(&idx, 0, if v.abs() < T::of(1e-13) { T::zero() } else { v.max(T::zero()) })?;
                }
            }
        }
        SteppingMode::Explicit => {
            // the data lives on the old front, so the diffusion ghosts are
            // taken against it; newly melted and front-hugging nodes are
            // filled afterwards by interpolation against the new front
            let masked_old: Vec<bool> = (0..spatial_len)
                .map(|flat| {
                    let idx = spatial_idx(&counts, flat);
                    prev_field.is_masked(&idx, 0).unwrap()
                })
                .collect();
            let old_front = &state.front;
            let neighbor_old = |idx: &[usize], axis: usize, dir: isize| -> Option<(Option<usize>, T)> {
                let cur = idx[axis] as isize + dir;
                if cur < 0 || cur as usize >= counts[axis] {
                    return None;
                }
                let mut nb = idx.to_vec();
                nb[axis] = cur as usize;
                let nb_flat = spatial_flat(&counts, &nb);
                if !masked_old[nb_flat] {
                    return Some((Some(nb_flat), h));
                }
                let j = tang_flat_index(&counts, idx);
                if axis == n - 1 {
                    let xn = spec.coord(n - 1, idx[n - 1]);
                    let dist = (xn - old_front[j]).max(T::of(0.5) * h).min(h);
                    return Some((None, dist));
                }
                let jn = tang_flat_index(&counts, &nb);
                let f0 = old_front[j];
                let f1 = old_front[jn];
                let xn = spec.coord(n - 1, idx[n - 1]);
                let denom = f1 - f0;
                let frac = if denom.abs() < T::of(1e-14) {
                    T::one()
                } else {
                    ((xn - f0) / denom).max(T::of(0.5)).min(T::one())
                };
                Some((None, frac * h))
            };
            let mut interp_later = Vec::new();
            for flat in 0..spatial_len {
                let idx = spatial_idx(&counts, flat);
                if masked[flat] {
                    field.set_masked(&idx, 0, true)?;
                    field.set(&idx, 0, T::zero())?;
                } else if on_outer_face(&idx) {
                    let p = spec.point(&idx, 0);
                    let v = cfg
                        .boundary
                        .eval(&SpaceTimePoint { x: p.x.clone(), t: t_new })
                        .max(T::zero());
                    field.set(&idx, 0, v)?;
                } else if interp_row[flat] || masked_old[flat] {
                    interp_later.push(flat);
                } else {
                    let mut lap = T::zero();
                    let u0 = prev_u(flat);
                    for a in 0..n {
                        let (nb_p, dp) = neighbor_old(&idx, a, 1).unwrap();
                        let (nb_m, dm) = neighbor_old(&idx, a, -1).unwrap();
                        let up = nb_p.map(prev_u).unwrap_or(T::zero());
                        let um = nb_m.map(prev_u).unwrap_or(T::zero());
                        let two = T::of(2.0);
                        lap = lap + two * (up / (dp * (dp + dm)) + um / (dm * (dp + dm))
                            - u0 / (dp * dm));
                    }
                    let v = u0 + dt / time_coef * lap;
                    field.set(&idx, 0, v.max(T::zero()))?;
                }
            }
            // fill front-adjacent rows from the node above (top-down order
            // resolves interpolation chains)
            interp_later.sort_by_key(|&flat| std::cmp::Reverse(spatial_idx(&counts, flat)[n - 1]));
            for flat in interp_later {
                let idx = spatial_idx(&counts, flat);
                let j = tang_flat_index(&counts, &idx);
                let theta = ((spec.coord(n - 1, idx[n - 1]) - new_front[j]) / h).max(T::zero());
                let mut up = idx.clone();
                up[n - 1] += 1;
                let uv = field.get(&up, 0)?;
                field.set(&idx, 0, (theta / (theta + T::one())) * uv)?;
            }
        }
    }
    Ok(StefanState {
        temperature: field,
        front: new_front,
        t: t_new,
        lambda: state.lambda,
        scaling: state.scaling,
    })
}

/// Full simulation record: space-time field, front history, enthalpy trace.
pub struct StefanRun<T> {
    pub field: ScalarField<T>,
    pub front: FrontGraph<T>,
    pub states: Vec<StefanState<T>>,
    pub enthalpy: Vec<T>,
    pub flux: Vec<T>,
}

/// Runs `steps` uniform steps of size dt and assembles the space-time field.
pub fn simulate<T: Real>(
    initial: StefanState<T>,
    dt: T,
    steps: usize,
    cfg: &StepConfig<T>,
) -> Result<StefanRun<T>, StefanError> {
    if matches!(cfg.degeneracy, DegeneracyPolicy::Reject)
        && !initial.is_nondegenerate(T::of(1e-12))
    {
        return Err(StefanError::DegenerateData("initial temperature vanishes identically".into()));
    }
    let spec0 = initial.grid().clone();
    let n = spec0.n();
    let run_spec = GridSpec::new(
        spec0.h(),
        dt,
        spec0.spatial_extent().to_vec(),
        Interval::new(initial.t, initial.t + dt * T::of(steps as f64)),
    )?;
    let mut field = ScalarField::zeros(run_spec);
    let counts = spec0.spatial_counts().to_vec();
    let (_, _tang_len) = tang_strides(&counts);
    let mut front = FrontGraph::new(
        counts[..n - 1].to_vec(),
        spec0.spatial_extent()[..n - 1].iter().map(|e| e.lo).collect(),
        spec0.h(),
    );
    let mut states = Vec::with_capacity(steps + 1);
    let mut enthalpy = Vec::with_capacity(steps + 1);
    let mut flux = Vec::with_capacity(steps + 1);
    let record = |state: &StefanState<T>, k: usize, field: &mut ScalarField<T>| {
        let spatial_len = state.grid().spatial_len();
        for flat in 0..spatial_len {
            let idx = state.temperature.unflatten(flat);
            let v = state.temperature.get(&idx, 0).unwrap();
            field.set(&idx, k, v).unwrap();
            if state.temperature.is_masked(&idx, 0).unwrap() {
                field.set_masked(&idx, k, true).unwrap();
            }
        }
    };
    record(&initial, 0, &mut field);
    front.push_slice(initial.t, &initial.front);
    enthalpy.push(initial.enthalpy());
    flux.push(initial.boundary_flux());
    states.push(initial);
    for k in 1..=steps {
        let next = step(states.last().unwrap(), dt, cfg)?;
        record(&next, k, &mut field);
        front.push_slice(next.t, &next.front);
        enthalpy.push(next.enthalpy());
        flux.push(next.boundary_flux());
        states.push(next);
    }
    Ok(StefanRun { field, front, states, enthalpy, flux })
}

/// Applies the coordinate/value rescaling between the supported forms of
/// the equations and resamples onto an equally-sized grid.
pub fn rescale<T: Real>(
    state: &StefanState<T>,
    target: Scaling,
    lambda_new: T,
) -> Result<StefanState<T>, StefanError> {
    if lambda_new <= T::zero() || lambda_new > T::one() {
        return Err(StefanError::Invalid(format!("lambda {lambda_new} outside (0,1]")));
    }
    // source -> original: U(X, T0) = s_v * u(X / s_x, T0 / s_t)
    let (sv, sx, st) = scaling_factors(state.scaling, state.lambda);
    // original -> target
    let (tv, tx, tt) = scaling_factors(target, lambda_new);
    // u'(x, t) = (1/tv) U(tx x, tt t) = (sv/tv) u(tx x / sx, tt t / st)
    let space_ratio = tx / sx;
    let time_ratio = tt / st;
    let value_ratio = sv / tv;
    let spec = state.grid();
    let _n = spec.n();
    let new_ext: Vec<Interval<T>> = spec
        .spatial_extent()
        .iter()
        .map(|e| Interval::new(e.lo / space_ratio, e.hi / space_ratio))
        .collect();
    let new_h = spec.h() / space_ratio;
    let t_new = state.t / time_ratio;
    if new_ext.iter().any(|e| e.len() <= T::zero()) {
        return Err(StefanError::Invalid("empty target grid".into()));
    }
    let counts = spec.spatial_counts().to_vec();
    let (_, tang_len) = tang_strides(&counts);
    let mut front = vec![T::zero(); tang_len];
    for (j, f) in front.iter_mut().enumerate() {
        *f = state.front[j] / space_ratio;
    }
    let front_interp = front.clone();
    let src = state.temperature.clone();
    let out = StefanState::from_profile(
        &new_ext,
        new_h,
        t_new,
        lambda_new,
        target,
        |xp| {
            // fronts live on matching tangential lattices: nearest column
            let mut flat = 0usize;
            let d = xp.len();
            let mut stride = 1usize;
            for i in (0..d).rev() {
                let q = (((xp[i] - new_ext[i].lo) / new_h).f64()).round() as usize;
                flat += q.min(counts[i] - 1) * stride;
                stride *= counts[i];
            }
            front_interp[flat.min(tang_len - 1)]
        },
        |p| {
            let sp = SpaceTimePoint {
                x: p.x.iter().map(|&v| v * space_ratio).collect(),
                t: state.t,
            };
            value_ratio * src.interpolate(&sp).unwrap_or(T::zero())
        },
    )?;
    Ok(out)
}

fn scaling_factors<T: Real>(s: Scaling, lambda: T) -> (T, T, T) {
    // (value, space, time) factors mapping the state to original variables
    match s {
        Scaling::Original => (T::one(), T::one(), T::one()),
        Scaling::DiffusionScaled => (lambda, lambda, lambda),
        Scaling::SpeedScaled => (lambda, lambda, lambda * lambda),
    }
}

/// Interior and front residual sampling of a run against its own scaling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualReport {
    pub interior_max: f64,
    pub front_max: f64,
    pub interior_samples: usize,
    pub front_samples: usize,
}

pub fn pde_residuals<T: Real>(run: &StefanRun<T>) -> Result<ResidualReport, StefanError> {
    let state0 = &run.states[0];
    let time_coef = state0.scaling.time_coefficient(state0.lambda);
    let speed = state0.scaling.speed_factor(state0.lambda);
    let spec = run.field.spec();
    let n = spec.n();
    let counts = spec.spatial_counts().to_vec();
    let mut interior_max = T::zero();
    let mut interior_samples = 0usize;
    let spatial_len = spec.spatial_len();
    for k in 1..spec.time_count() {
        for flat in 0..spatial_len {
            let idx = run.field.unflatten(flat);
            if (0..n).any(|a| idx[a] == 0 || idx[a] == counts[a] - 1) {
                continue;
            }
            if run.field.is_masked(&idx, k)? || run.field.is_masked(&idx, k - 1)? {
                continue;
            }
            // stay two cells clear of the front for clean central stencils
            let clear = (0..n).all(|a| {
                let mut p = idx.clone();
                let mut m = idx.clone();
                p[a] += 1;
                m[a] -= 1;
                !run.field.is_masked(&p, k).unwrap_or(true)
                    && !run.field.is_masked(&m, k).unwrap_or(true)
            });
            if !clear {
                continue;
            }
            let d = run.field.derivatives_at(&idx, k)?;
            let lap = (0..n).fold(T::zero(), |acc, a| acc + d.hess_at(a, a));
            interior_max = interior_max.max((time_coef * d.dt - lap).abs());
            interior_samples += 1;
        }
    }
    // front law: f_t = -speed * grad_n * (1 + |grad' f|^2)
    let mut front_max = T::zero();
    let mut front_samples = 0usize;
    let m = run.front.tangential_len();
    for k in 1..run.front.times().len() {
        let dt = run.front.times()[k] - run.front.times()[k - 1];
        let cfg = StepConfig::implicit_with(BoxBoundary::Constant(T::zero()));
        let cols = front_columns(&run.states[k], &cfg)?;
        for j in 0..m {
            let ft = (run.front.slice(k)[j] - run.front.slice(k - 1)[j]) / dt;
            let rhs = -speed * cols[j].grad_n * (T::one() + cols[j].slope_sq);
            front_max = front_max.max((ft - rhs).abs());
            front_samples += 1;
        }
    }
    Ok(ResidualReport {
        interior_max: interior_max.f64(),
        front_max: front_max.f64(),
        interior_samples,
        front_samples,
    })
}

/// Result of comparing a run against a certified barrier on a region.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub certificate: BarrierReport,
    pub ordering_checked_nodes: usize,
    pub interior_checked_nodes: usize,
    pub violations: usize,
    pub first_violation: Option<(Vec<f64>, f64, f64, f64)>,
    pub max_excess: f64,
    pub pass: bool,
}

/// Asserts u <= barrier (supersolution side) or u >= barrier (subsolution
/// side) at the grid nodes of the region, given ordering on the region's
/// parabolic boundary. The barrier is re-certified on the region first.
pub fn compare_with_barrier<T: Real>(
    run: &StefanRun<T>,
    barrier: &dyn StefanBarrier<T>,
    region: &Region<T>,
    side: BarrierSide,
    margin: T,
    tol: T,
) -> Result<ComparisonReport, StefanError> {
    let state0 = &run.states[0];
    let lambda_speed = state0.scaling.speed_factor(state0.lambda);
    let certificate = verify_stefan_barrier(barrier, region, lambda_speed, side, margin, 12)?;
    let sign = match side {
        BarrierSide::Supersolution => T::one(),
        BarrierSide::Subsolution => -T::one(),
    };
    let (sp_box, (t_lo, _)) = region.bounding_box()?;
    let spec = run.field.spec();
    let h = spec.h();
    let dt = spec.dt();
    // the usable parabolic bottom is the earliest grid slice in the region
    let t_bottom = t_lo.max(spec.time_extent().lo);
    let mut ordering_checked = 0usize;
    let mut interior_checked = 0usize;
    let mut violations = 0usize;
    let mut first_violation = None;
    let mut max_excess = T::zero();
    let mut precondition: Option<StefanError> = None;
    run.field.for_each_in_region(region, |idx, k, v, _| {
        let p = spec.point(idx, k);
        let on_parabolic = {
            let bottom = (p.t - t_bottom).abs() <= dt * T::of(1.01);
            let lateral = (0..spec.n()).any(|a| {
                (p.x[a] - sp_box[a].0).abs() <= h * T::of(0.51)
                    || (p.x[a] - sp_box[a].1).abs() <= h * T::of(0.51)
            });
            bottom || lateral
        };
        let b = barrier.value(&p);
        let excess = sign * (v - b);
        if on_parabolic {
            ordering_checked += 1;
            if excess > tol && precondition.is_none() {
                precondition = Some(StefanError::OrderingPrecondition {
                    point: p.x.iter().map(|q| q.f64()).collect(),
                    field: v.f64(),
                    barrier: b.f64(),
                });
            }
        } else {
            interior_checked += 1;
            if excess > tol {
                violations += 1;
                if first_violation.is_none() {
                    let mut coords: Vec<f64> = p.x.iter().map(|q| q.f64()).collect();
                    coords.push(p.t.f64());
                    first_violation = Some((coords, v.f64(), b.f64(), excess.f64()));
                }
                max_excess = max_excess.max(excess);
            }
        }
    })?;
    if let Some(err) = precondition {
        return Err(err);
    }
    Ok(ComparisonReport {
        certificate: certificate.clone(),
        ordering_checked_nodes: ordering_checked,
        interior_checked_nodes: interior_checked,
        violations,
        first_violation,
        max_excess: max_excess.f64(),
        pass: certificate.pass && violations == 0,
    })
}

/// Outcome of the flatness-extension measurement: the tightest two-sided
/// envelope a_n(t) (x_n - b(t) ∓ w)^+ around the solution over a window,
/// with b integrated from b' = -lambda a_n.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlatnessExtensionReport {
    pub envelope_width: f64,
    /// gate eta^{1+beta}
    pub threshold: f64,
    pub slope_drift_max: f64,
    /// gate eta^{beta-2}
    pub slope_drift_cap: f64,
    pub hypothesis_violated: bool,
    pub initial_front_oscillation: f64,
    pub slope_samples: Vec<(f64, f64)>,
    pub offset_samples: Vec<(f64, f64)>,
    pub window: (f64, f64),
    pub pass: bool,
}

/// Fits the moving-plane envelope of a run over the window of width
/// eta / lambda ending at the final time and measures whether the whole
/// solution is eta^{1+beta}-flat there. The initial front must be
/// eps0-flat or the hypothesis flag is raised.
pub fn flatness_extension<T: Real>(
    run: &StefanRun<T>,
    eta: T,
    eps0: T,
    beta: T,
) -> Result<FlatnessExtensionReport, StefanError> {
    let state0 = &run.states[0];
    let lambda = state0.lambda;
    let speed = state0.scaling.speed_factor(lambda);
    let m = run.front.tangential_len();
    // hypothesis: the initial front is trapped in a strip of width eps0
    let f0 = run.front.slice(0);
    let osc0 = f0.iter().cloned().fold(T::neg_infinity(), T::max)
        - f0.iter().cloned().fold(T::infinity(), T::min);
    let hypothesis_violated = osc0 > eps0;
    let t_end = *run.front.times().last().unwrap();
    let window_lo = t_end - eta / lambda.max(T::of(1e-12));
    let ks: Vec<usize> = (0..run.front.times().len())
        .filter(|&k| run.front.times()[k] >= window_lo - T::of(1e-12))
        .collect();
    if ks.len() < 2 {
        return Err(StefanError::Invalid("window shorter than two recorded slices".into()));
    }
    // per-slice raw front offset (tangential mean near the center) and
    // least-squares slope over the first eta above the front
    let spec = run.field.spec().clone();
    let n = spec.n();
    let counts = spec.spatial_counts().to_vec();
    let mut ts = Vec::new();
    let mut b_raw = Vec::new();
    let mut a_raw = Vec::new();
    for &k in &ks {
        let t = run.front.times()[k];
        let mut bsum = T::zero();
        let mut bcnt = 0usize;
        for j in 0..m {
            let xp = run.front.tang_point(j);
            if xp.iter().map(|v| v.abs()).fold(T::zero(), T::max) <= eta {
                bsum = bsum + run.front.slice(k)[j];
                bcnt += 1;
            }
        }
        if bcnt == 0 {
            return Err(StefanError::Invalid("no front columns inside the window".into()));
        }
        let b = bsum / T::of(bcnt as f64);
        let mut num = T::zero();
        let mut den = T::zero();
        for flat in 0..spec.spatial_len() {
            let idx = run.field.unflatten(flat);
            let p = spec.point(&idx, k);
            if p.tangential().iter().map(|v| v.abs()).fold(T::zero(), T::max) > eta {
                continue;
            }
            let d = p.normal() - b;
            if d <= T::zero() || d > eta || run.field.is_masked(&idx, k)? {
                continue;
            }
            let v = run.field.get(&idx, k)?;
            num = num + v * d;
            den = den + d * d;
        }
        if den == T::zero() {
            return Err(StefanError::Invalid("no liquid nodes above the fitted front".into()));
        }
        ts.push(t);
        b_raw.push(b);
        a_raw.push(num / den);
    }
    // smooth the slope path over eta^2 windows and integrate the offset ODE
    let a_smooth = crate::linalg::mollify_path(&ts, &a_raw, eta * eta);
    let kcount = ts.len();
    let mut b_ode = vec![T::zero(); kcount];
    for i in (0..kcount - 1).rev() {
        let dt = ts[i + 1] - ts[i];
        b_ode[i] = b_ode[i + 1] + dt * speed * (a_smooth[i] + a_smooth[i + 1]) * T::of(0.5);
    }
    // envelope width for a given terminal offset, minimized by a ternary
    // search (the width is a convex piecewise-linear function of it)
    let width_for = |b_last: T| -> T {
        let mut width = T::zero();
        for (wi, &k) in ks.iter().enumerate() {
            let b = b_ode[wi] + b_last;
            let a = a_smooth[wi].max(T::of(1e-9));
            for flat in 0..spec.spatial_len() {
                let idx = run.field.unflatten(flat);
                let p = spec.point(&idx, k);
                if p.tangential().iter().map(|v| v.abs()).fold(T::zero(), T::max) > eta {
                    continue;
                }
                if (p.normal() - b).abs() > eta {
                    continue;
                }
                let masked = run.field.is_masked(&idx, k).unwrap_or(true);
                let v = if masked { T::zero() } else { run.field.get(&idx, k).unwrap() };
                let need = if v > T::zero() {
                    (p.normal() - b - v / a).abs()
                } else {
                    (p.normal() - b).max(T::zero())
                };
                width = width.max(need);
            }
        }
        width
    };
    let mut lo = b_raw[kcount - 1] - eta;
    let mut hi = b_raw[kcount - 1] + eta;
    for _ in 0..48 {
        let m1 = lo + (hi - lo) / T::of(3.0);
        let m2 = hi - (hi - lo) / T::of(3.0);
        if width_for(m1) <= width_for(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let b_last = (lo + hi) * T::of(0.5);
    let envelope = width_for(b_last);
    let mut drift = T::zero();
    for i in 1..kcount {
        let dt = ts[i] - ts[i - 1];
        if dt > T::zero() {
            drift = drift.max((a_smooth[i] - a_smooth[i - 1]).abs() / dt);
        }
    }
    let threshold = eta.powf(T::one() + beta);
    let drift_cap = eta.powf(beta - T::of(2.0));
    let pass = !hypothesis_violated && envelope <= threshold && drift <= drift_cap;
    Ok(FlatnessExtensionReport {
        envelope_width: envelope.f64(),
        threshold: threshold.f64(),
        slope_drift_max: drift.f64(),
        slope_drift_cap: drift_cap.f64(),
        hypothesis_violated,
        initial_front_oscillation: osc0.f64(),
        slope_samples: ts.iter().zip(&a_smooth).map(|(&t, &a)| (t.f64(), a.f64())).collect(),
        offset_samples: ts
            .iter()
            .enumerate()
            .map(|(i, &t)| (t.f64(), (b_ode[i] + b_last).f64()))
            .collect(),
        window: (ts[0].f64(), ts[kcount - 1].f64()),
        pass,
    })
}

/// Measured containment constant for a shrinking convex ice region: the
/// largest (1 - |front point|) / (lambda t) observed over the run.
pub fn containment_constant<T: Real>(run: &StefanRun<T>, lambda: T) -> f64 {
    let m = run.front.tangential_len();
    let t0 = run.front.times()[0];
    let mut c = 0.0f64;
    for k in 1..run.front.times().len() {
        let t = (run.front.times()[k] - t0).f64();
        if t <= 0.0 {
            continue;
        }
        for j in 0..m {
            let xp = run.front.tang_point(j);
            let f = run.front.slice(k)[j];
            let r2: f64 = xp.iter().map(|v| v.f64().powi(2)).sum::<f64>() + f.f64().powi(2);
            let shrink = 1.0 - r2.sqrt();
            if shrink > 0.0 {
                c = c.max(shrink / (lambda.f64() * t));
            }
        }
    }
    c
}
