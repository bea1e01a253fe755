//! Discrete space-time scalar fields on uniform tensor grids: stencil
//! derivatives, restriction, oscillation queries, binary dumps and CSV
//! slices. These fields carry the temperature, the hodograph unknown and
//! the linear-problem solutions.

use crate::geometry::{AnisotropicBall, Region, SpaceTimePoint};
use crate::Real;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("extent length {len} is not an integer multiple of step {step} (axis {axis})")]
    ExtentNotMultiple { axis: String, len: f64, step: f64 },
    #[error("step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("spatial dimension must be at least 1, got {0}")]
    BadDimension(usize),
    #[error("node index {0:?} out of bounds")]
    IndexOutOfBounds(Vec<usize>),
    #[error("node is masked (outside the positivity set)")]
    MaskedNode,
    #[error("not enough neighbors for a stencil on axis {0}")]
    InsufficientNeighbors(usize),
    #[error("region does not intersect the grid")]
    EmptyIntersection,
    #[error("region is not aligned with the lattice")]
    OffLattice,
    #[error("geometry: {0}")]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed field file: {0}")]
    Malformed(String),
}

/// Closed interval, used for grid extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Real> Interval<T> {
    pub fn new(lo: T, hi: T) -> Self {
        Self { lo, hi }
    }

    pub fn len(&self) -> T {
        self.hi - self.lo
    }
}

/// Uniform tensor grid: equal spatial step on every axis, separate time step.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec<T> {
    n: usize,
    h: T,
    dt: T,
    spatial_extent: Vec<Interval<T>>,
    time_extent: Interval<T>,
    spatial_counts: Vec<usize>, // node counts per axis
    time_count: usize,
}

fn node_count<T: Real>(len: T, step: T, axis: &str) -> Result<usize, FieldError> {
    if step <= T::zero() {
        return Err(FieldError::NonPositiveStep(step.f64()));
    }
    if len < T::zero() {
        return Err(FieldError::ExtentNotMultiple {
            axis: axis.into(),
            len: len.f64(),
            step: step.f64(),
        });
    }
    let ratio = (len / step).f64();
    let k = ratio.round();
    if (ratio - k).abs() > 1e-12 * (1.0 + ratio.abs()) {
        return Err(FieldError::ExtentNotMultiple {
            axis: axis.into(),
            len: len.f64(),
            step: step.f64(),
        });
    }
    Ok(k as usize + 1)
}

impl<T: Real> GridSpec<T> {
    pub fn new(
        h: T,
        dt: T,
        spatial_extent: Vec<Interval<T>>,
        time_extent: Interval<T>,
    ) -> Result<Self, FieldError> {
        let n = spatial_extent.len();
        if n == 0 {
            return Err(FieldError::BadDimension(0));
        }
        let mut spatial_counts = Vec::with_capacity(n);
        for (i, ext) in spatial_extent.iter().enumerate() {
            spatial_counts.push(node_count(ext.len(), h, &format!("x{}", i + 1))?);
        }
        let time_count = node_count(time_extent.len(), dt, "t")?;
        Ok(Self { n, h, dt, spatial_extent, time_extent, spatial_counts, time_count })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn h(&self) -> T {
        self.h
    }
    pub fn dt(&self) -> T {
        self.dt
    }
    pub fn spatial_extent(&self) -> &[Interval<T>] {
        &self.spatial_extent
    }
    pub fn time_extent(&self) -> Interval<T> {
        self.time_extent
    }
    pub fn spatial_counts(&self) -> &[usize] {
        &self.spatial_counts
    }
    pub fn time_count(&self) -> usize {
        self.time_count
    }

    pub fn spatial_len(&self) -> usize {
        self.spatial_counts.iter().product()
    }

    pub fn coord(&self, axis: usize, idx: usize) -> T {
        self.spatial_extent[axis].lo + T::of(idx as f64) * self.h
    }

    pub fn time(&self, k: usize) -> T {
        self.time_extent.lo + T::of(k as f64) * self.dt
    }

    /// Nearest node index on `axis`, if the coordinate lies on the lattice
    /// within a relative tolerance.
    pub fn index_of(&self, axis: usize, x: T) -> Option<usize> {
        let raw = ((x - self.spatial_extent[axis].lo) / self.h).f64();
        let k = raw.round();
        if (raw - k).abs() > 1e-6 || k < 0.0 || k as usize >= self.spatial_counts[axis] {
            None
        } else {
            Some(k as usize)
        }
    }

    pub fn point(&self, spatial: &[usize], k: usize) -> SpaceTimePoint<T> {
        let x = spatial
            .iter()
            .enumerate()
            .map(|(a, &i)| self.coord(a, i))
            .collect();
        SpaceTimePoint { x, t: self.time(k) }
    }
}

/// Stencil accuracy actually used at a node, reported per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StencilMode {
    Central,
    ForwardOneSided,
    BackwardOneSided,
}

/// Time stencil actually used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeMode {
    Backward,
    Forward,
}

/// First and second space derivatives plus a one-sided time derivative at a
/// grid node, with the accuracy mode of every stencil.
#[derive(Debug, Clone)]
pub struct StencilDerivatives<T> {
    pub grad: Vec<T>,
    /// Row-major n x n symmetric matrix.
    pub hess: Vec<T>,
    pub dt: T,
    pub spatial_modes: Vec<StencilMode>,
    pub time_mode: TimeMode,
}

impl<T: Real> StencilDerivatives<T> {
    pub fn hess_at(&self, i: usize, j: usize) -> T {
        let n = self.grad.len();
        self.hess[i * n + j]
    }
}

/// Dense space-time grid function. Nodes can be masked as lying outside the
/// positivity set; by convention the stored value at a masked node is the
/// constrained phase value (0 for temperature fields).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField<T> {
    spec: GridSpec<T>,
    values: Vec<T>,      // time-major, then row-major over spatial axes
    mask: Option<Vec<bool>>, // true = masked (outside positivity set)
    strides: Vec<usize>, // spatial strides, last axis fastest
}

fn spatial_strides(counts: &[usize]) -> Vec<usize> {
    let n = counts.len();
    let mut s = vec![1usize; n];
    for i in (0..n - 1).rev() {
        s[i] = s[i + 1] * counts[i + 1];
    }
    s
}

impl<T: Real> ScalarField<T> {
    pub fn zeros(spec: GridSpec<T>) -> Self {
        let len = spec.spatial_len() * spec.time_count();
        let strides = spatial_strides(spec.spatial_counts());
        Self { spec, values: vec![T::zero(); len], mask: None, strides }
    }

    /// Fills from a function of the space-time point.
    pub fn from_fn(spec: GridSpec<T>, f: impl Fn(&SpaceTimePoint<T>) -> T + Sync) -> Self {
        let mut field = Self::zeros(spec);
        let spatial_len = field.spec.spatial_len();
        for k in 0..field.spec.time_count() {
            for flat in 0..spatial_len {
                let idx = field.unflatten(flat);
                let p = field.spec.point(&idx, k);
                field.values[k * spatial_len + flat] = f(&p);
            }
        }
        field
    }

    pub fn spec(&self) -> &GridSpec<T> {
        &self.spec
    }

    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0usize; self.spec.n];
        for a in 0..self.spec.n {
            idx[a] = flat / self.strides[a];
            flat %= self.strides[a];
        }
        idx
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(&i, &s)| i * s).sum()
    }

    #[inline]
    fn slot(&self, idx: &[usize], k: usize) -> Result<usize, FieldError> {
        if k >= self.spec.time_count() || idx.len() != self.spec.n {
            return Err(FieldError::IndexOutOfBounds(idx.to_vec()));
        }
        for (a, &i) in idx.iter().enumerate() {
            if i >= self.spec.spatial_counts[a] {
                return Err(FieldError::IndexOutOfBounds(idx.to_vec()));
            }
        }
        Ok(k * self.spec.spatial_len() + self.flatten(idx))
    }

    pub fn get(&self, idx: &[usize], k: usize) -> Result<T, FieldError> {
        Ok(self.values[self.slot(idx, k)?])
    }

    pub fn set(&mut self, idx: &[usize], k: usize, v: T) -> Result<(), FieldError> {
        let s = self.slot(idx, k)?;
        self.values[s] = v;
        Ok(())
    }

    pub fn is_masked(&self, idx: &[usize], k: usize) -> Result<bool, FieldError> {
        let s = self.slot(idx, k)?;
        Ok(self.mask.as_ref().map_or(false, |m| m[s]))
    }

    pub fn set_masked(&mut self, idx: &[usize], k: usize, masked: bool) -> Result<(), FieldError> {
        let s = self.slot(idx, k)?;
        let len = self.values.len();
        self.mask.get_or_insert_with(|| vec![false; len])[s] = masked;
        Ok(())
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn has_mask(&self) -> bool {
        self.mask.is_some()
    }

    /// Finite-difference derivatives at a grid node. Central differences
    /// where both neighbors are available and unmasked, first-order
    /// one-sided next to masked nodes or domain faces.
    pub fn derivatives_at(&self, idx: &[usize], k: usize) -> Result<StencilDerivatives<T>, FieldError> {
        if self.is_masked(idx, k)? {
            return Err(FieldError::MaskedNode);
        }
        let n = self.spec.n;
        let h = self.spec.h;
        let usable = |idx: &[usize]| -> bool {
            self.slot(idx, k)
                .map(|s| !self.mask.as_ref().map_or(false, |m| m[s]))
                .unwrap_or(false)
        };
        let shift = |idx: &[usize], axis: usize, by: isize| -> Option<Vec<usize>> {
            let cur = idx[axis] as isize + by;
            if cur < 0 || cur as usize >= self.spec.spatial_counts[axis] {
                return None;
            }
            let mut out = idx.to_vec();
            out[axis] = cur as usize;
            Some(out)
        };
        let center = self.get(idx, k)?;
        let mut grad = vec![T::zero(); n];
        let mut hess = vec![T::zero(); n * n];
        let mut modes = vec![StencilMode::Central; n];
        for a in 0..n {
            let plus = shift(idx, a, 1).filter(|i| usable(i));
            let minus = shift(idx, a, -1).filter(|i| usable(i));
            match (plus, minus) {
                (Some(p), Some(m)) => {
                    let vp = self.get(&p, k)?;
                    let vm = self.get(&m, k)?;
                    grad[a] = (vp - vm) / (T::of(2.0) * h);
                    hess[a * n + a] = (vp - T::of(2.0) * center + vm) / (h * h);
                    modes[a] = StencilMode::Central;
                }
                (Some(p), None) => {
                    let vp = self.get(&p, k)?;
                    grad[a] = (vp - center) / h;
                    modes[a] = StencilMode::ForwardOneSided;
                    let pp = shift(idx, a, 2).filter(|i| usable(i));
                    match pp {
                        Some(pp) => {
                            let vpp = self.get(&pp, k)?;
                            hess[a * n + a] = (center - T::of(2.0) * vp + vpp) / (h * h);
                        }
                        None => return Err(FieldError::InsufficientNeighbors(a)),
                    }
                }
                (None, Some(m)) => {
                    let vm = self.get(&m, k)?;
                    grad[a] = (center - vm) / h;
                    modes[a] = StencilMode::BackwardOneSided;
                    let mm = shift(idx, a, -2).filter(|i| usable(i));
                    match mm {
                        Some(mm) => {
                            let vmm = self.get(&mm, k)?;
                            hess[a * n + a] = (center - T::of(2.0) * vm + vmm) / (h * h);
                        }
                        None => return Err(FieldError::InsufficientNeighbors(a)),
                    }
                }
                (None, None) => return Err(FieldError::InsufficientNeighbors(a)),
            }
        }
        // mixed second derivatives: centered cross stencil when all four
        // diagonal neighbors exist, otherwise nested one-sided differences
        for a in 0..n {
            for b in (a + 1)..n {
                let corner = |da: isize, db: isize| -> Option<T> {
                    shift(idx, a, da)
                        .and_then(|i| shift(&i, b, db))
                        .filter(|i| usable(i))
                        .map(|i| self.get(&i, k).unwrap())
                };
                let v = match (corner(1, 1), corner(1, -1), corner(-1, 1), corner(-1, -1)) {
                    (Some(pp), Some(pm), Some(mp), Some(mm)) => {
                        (pp - pm - mp + mm) / (T::of(4.0) * h * h)
                    }
                    _ => {
                        // fall back to one-sided difference of one-sided grads
                        let da: isize = match modes[a] {
                            StencilMode::BackwardOneSided => -1,
                            _ => 1,
                        };
                        let db: isize = match modes[b] {
                            StencilMode::BackwardOneSided => -1,
                            _ => 1,
                        };
                        let va = corner(da, 0).ok_or(FieldError::InsufficientNeighbors(a))?;
                        let vb = corner(0, db).ok_or(FieldError::InsufficientNeighbors(b))?;
                        let vab = corner(da, db).ok_or(FieldError::InsufficientNeighbors(b))?;
                        let sa = T::of(da as f64);
                        let sb = T::of(db as f64);
                        sa * sb * (vab - va - vb + center) / (h * h)
                    }
                };
                hess[a * n + b] = v;
                hess[b * n + a] = v;
            }
        }
        // time derivative: backward by default, forward on the first slice
        let (dt_val, time_mode) = if self.spec.time_count() < 2 {
            return Err(FieldError::InsufficientNeighbors(n));
        } else if k > 0 {
            let prev = self.get(idx, k - 1)?;
            ((center - prev) / self.spec.dt, TimeMode::Backward)
        } else {
            let next = self.get(idx, k + 1)?;
            ((next - center) / self.spec.dt, TimeMode::Forward)
        };
        Ok(StencilDerivatives { grad, hess, dt: dt_val, spatial_modes: modes, time_mode: time_mode })
    }

    /// Visits every in-region node (unmasked and masked alike).
    pub fn for_each_in_region(
        &self,
        region: &Region<T>,
        mut f: impl FnMut(&[usize], usize, T, bool),
    ) -> Result<usize, FieldError> {
        let mut visited = 0usize;
        let spatial_len = self.spec.spatial_len();
        for k in 0..self.spec.time_count() {
            for flat in 0..spatial_len {
                let idx = self.unflatten(flat);
                let p = self.spec.point(&idx, k);
                if region.contains(&p)? {
                    let s = k * spatial_len + flat;
                    let masked = self.mask.as_ref().map_or(false, |m| m[s]);
                    f(&idx, k, self.values[s], masked);
                    visited += 1;
                }
            }
        }
        Ok(visited)
    }

    /// max - min of finite values over grid nodes in the region. Masked
    /// nodes participate through their stored (phase-constrained) values;
    /// non-finite entries are skipped.
    pub fn oscillation(&self, region: &Region<T>) -> Result<T, FieldError> {
        let mut lo = T::infinity();
        let mut hi = T::neg_infinity();
        let visited = self.for_each_in_region(region, |_, _, v, _| {
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        })?;
        if visited == 0 || !lo.is_finite() {
            return Err(FieldError::EmptyIntersection);
        }
        Ok(hi - lo)
    }

    /// Same oscillation query over an anisotropic ball.
    pub fn oscillation_in_ball(&self, ball: &AnisotropicBall<T>) -> Result<T, FieldError> {
        let mut lo = T::infinity();
        let mut hi = T::neg_infinity();
        let spatial_len = self.spec.spatial_len();
        let mut visited = 0usize;
        for k in 0..self.spec.time_count() {
            for flat in 0..spatial_len {
                let idx = self.unflatten(flat);
                let p = self.spec.point(&idx, k);
                if ball.contains(&p)? {
                    let v = self.values[k * spatial_len + flat];
                    if v.is_finite() {
                        lo = lo.min(v);
                        hi = hi.max(v);
                        visited += 1;
                    }
                }
            }
        }
        if visited == 0 {
            return Err(FieldError::EmptyIntersection);
        }
        Ok(hi - lo)
    }

    /// Sub-grid copy over the lattice nodes inside the region's bounding
    /// box, clipped to the region membership ranges.
    pub fn restrict(&self, region: &Region<T>) -> Result<ScalarField<T>, FieldError> {
        let (sp_box, (t_lo, t_hi)) = region.bounding_box()?;
        let n = self.spec.n;
        let mut lo_idx = vec![0usize; n];
        let mut hi_idx = vec![0usize; n];
        for a in 0..n {
            let ext = self.spec.spatial_extent[a];
            let h = self.spec.h;
            let lo = sp_box[a].0.max(ext.lo);
            let hi = sp_box[a].1.min(ext.hi);
            if hi < lo {
                return Err(FieldError::EmptyIntersection);
            }
            let li = ((lo - ext.lo) / h).f64().ceil() - 1e-9;
            let hi_i = ((hi - ext.lo) / h).f64().floor() + 1e-9;
            lo_idx[a] = li.max(0.0) as usize;
            hi_idx[a] = (hi_i as usize).min(self.spec.spatial_counts[a] - 1);
            if lo_idx[a] > hi_idx[a] {
                return Err(FieldError::EmptyIntersection);
            }
        }
        // honor strict-positivity and half-space clipping through membership
        // of the first candidate layer on the normal axis
        let axis_n = n - 1;
        while lo_idx[axis_n] <= hi_idx[axis_n] {
            let mut probe = lo_idx.clone();
            probe[axis_n] = lo_idx[axis_n];
            let p = self.spec.point(&probe, self.spec.time_count() - 1);
            let mut q = p.clone();
            q.t = region.center.t; // probe membership at the anchor time
            if region.contains(&q)? {
                break;
            }
            lo_idx[axis_n] += 1;
        }
        if lo_idx[axis_n] > hi_idx[axis_n] {
            return Err(FieldError::EmptyIntersection);
        }
        let te = self.spec.time_extent;
        let dt = self.spec.dt;
        let k_lo_raw = ((t_lo - te.lo) / dt).f64();
        // strictly above the open bottom of (t_lo, t_hi]
        let mut k_lo = k_lo_raw.ceil() as isize;
        if (k_lo_raw - k_lo_raw.round()).abs() < 1e-9 {
            k_lo = k_lo_raw.round() as isize + 1;
        }
        let k_lo = k_lo.max(0) as usize;
        let k_hi_raw = ((t_hi - te.lo) / dt).f64();
        let k_hi = (k_hi_raw.floor() + 1e-9).min((self.spec.time_count - 1) as f64) as usize;
        if k_lo > k_hi {
            return Err(FieldError::EmptyIntersection);
        }
        let new_spatial: Vec<Interval<T>> = (0..n)
            .map(|a| Interval::new(self.spec.coord(a, lo_idx[a]), self.spec.coord(a, hi_idx[a])))
            .collect();
        let new_time = Interval::new(self.spec.time(k_lo), self.spec.time(k_hi));
        let new_spec = GridSpec::new(self.spec.h, self.spec.dt, new_spatial, new_time)?;
        let mut out = ScalarField::zeros(new_spec);
        let out_spatial_len = out.spec.spatial_len();
        for k in 0..out.spec.time_count() {
            for flat in 0..out_spatial_len {
                let oidx = out.unflatten(flat);
                let sidx: Vec<usize> = oidx.iter().zip(&lo_idx).map(|(&i, &l)| i + l).collect();
                let sk = k + k_lo;
                let v = self.get(&sidx, sk)?;
                out.values[k * out_spatial_len + flat] = v;
                if self.is_masked(&sidx, sk)? {
                    out.set_masked(&oidx, k, true)?;
                }
            }
        }
        Ok(out)
    }

    /// Multilinear interpolation in space and time; clamps to the grid hull.
    pub fn interpolate(&self, p: &SpaceTimePoint<T>) -> Result<T, FieldError> {
        let n = self.spec.n;
        if p.dim() != n {
            return Err(FieldError::IndexOutOfBounds(vec![]));
        }
        let mut base = vec![0usize; n];
        let mut frac = vec![T::zero(); n];
        for a in 0..n {
            let raw = ((p.x[a] - self.spec.spatial_extent[a].lo) / self.spec.h).f64();
            let clamped = raw.max(0.0).min((self.spec.spatial_counts[a] - 1) as f64);
            let b = clamped.floor().min((self.spec.spatial_counts[a] - 2).max(0) as f64);
            base[a] = b as usize;
            frac[a] = T::of(clamped - b);
        }
        let raw_t = ((p.t - self.spec.time_extent.lo) / self.spec.dt).f64();
        let clamped_t = raw_t.max(0.0).min((self.spec.time_count - 1) as f64);
        let bt = clamped_t.floor().min((self.spec.time_count as f64 - 2.0).max(0.0));
        let kt = bt as usize;
        let ft = T::of(clamped_t - bt);
        let corners = 1usize << n;
        let mut acc = T::zero();
        for c in 0..corners {
            let mut idx = base.clone();
            let mut w = T::one();
            for a in 0..n {
                if (c >> a) & 1 == 1 {
                    idx[a] = (idx[a] + 1).min(self.spec.spatial_counts[a] - 1);
                    w = w * frac[a];
                } else {
                    w = w * (T::one() - frac[a]);
                }
            }
            if w == T::zero() {
                continue;
            }
            let v0 = self.get(&idx, kt)?;
            let v = if self.spec.time_count > 1 && ft > T::zero() {
                let v1 = self.get(&idx, (kt + 1).min(self.spec.time_count - 1))?;
                v0 * (T::one() - ft) + v1 * ft
            } else {
                v0
            };
            acc = acc + w * v;
        }
        Ok(acc)
    }

    /// Binary dump. Little-endian layout:
    /// magic "SLFD", version u32, n u64, per-axis node counts u64,
    /// time count u64, h f64, dt f64, per-axis (lo, hi) f64, time (lo, hi)
    /// f64, payload f64 (time-major, spatial row-major), mask flag u8 and
    /// mask bytes when present.
    pub fn write_to(&self, w: &mut impl Write) -> Result<(), FieldError> {
        w.write_all(b"SLFD")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.spec.n as u64).to_le_bytes())?;
        for &c in &self.spec.spatial_counts {
            w.write_all(&(c as u64).to_le_bytes())?;
        }
        w.write_all(&(self.spec.time_count as u64).to_le_bytes())?;
        w.write_all(&self.spec.h.f64().to_le_bytes())?;
        w.write_all(&self.spec.dt.f64().to_le_bytes())?;
        for ext in &self.spec.spatial_extent {
            w.write_all(&ext.lo.f64().to_le_bytes())?;
            w.write_all(&ext.hi.f64().to_le_bytes())?;
        }
        w.write_all(&self.spec.time_extent.lo.f64().to_le_bytes())?;
        w.write_all(&self.spec.time_extent.hi.f64().to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.f64().to_le_bytes())?;
        }
        match &self.mask {
            Some(m) => {
                w.write_all(&[1u8])?;
                for &b in m {
                    w.write_all(&[b as u8])?;
                }
            }
            None => w.write_all(&[0u8])?,
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<ScalarField<T>, FieldError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"SLFD" {
            return Err(FieldError::Malformed("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != 1 {
            return Err(FieldError::Malformed("unsupported version".into()));
        }
        let mut b8 = [0u8; 8];
        let mut read_u64 = |r: &mut dyn Read| -> Result<u64, FieldError> {
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let n = read_u64(r)? as usize;
        if n == 0 || n > 16 {
            return Err(FieldError::Malformed(format!("bad dimension {n}")));
        }
        let mut counts = Vec::with_capacity(n);
        for _ in 0..n {
            counts.push(read_u64(r)? as usize);
        }
        let time_count = read_u64(r)? as usize;
        let mut b8v = [0u8; 8];
        let mut read_f64 = |r: &mut dyn Read| -> Result<f64, FieldError> {
            r.read_exact(&mut b8v)?;
            Ok(f64::from_le_bytes(b8v))
        };
        let h = read_f64(r)?;
        let dt = read_f64(r)?;
        let mut spatial_extent = Vec::with_capacity(n);
        for _ in 0..n {
            let lo = read_f64(r)?;
            let hi = read_f64(r)?;
            spatial_extent.push(Interval::new(T::of(lo), T::of(hi)));
        }
        let t_lo = read_f64(r)?;
        let t_hi = read_f64(r)?;
        let spec = GridSpec::new(T::of(h), T::of(dt), spatial_extent, Interval::new(T::of(t_lo), T::of(t_hi)))?;
        if spec.spatial_counts() != counts.as_slice() || spec.time_count() != time_count {
            return Err(FieldError::Malformed("node counts disagree with extents".into()));
        }
        let len = spec.spatial_len() * spec.time_count();
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(T::of(read_f64(r)?));
        }
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let mask = if flag[0] == 1 {
            let mut m = vec![0u8; len];
            r.read_exact(&mut m)?;
            Some(m.into_iter().map(|b| b != 0).collect())
        } else {
            None
        };
        let strides = spatial_strides(spec.spatial_counts());
        Ok(ScalarField { spec, values, mask, strides })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FieldError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ScalarField<T>, FieldError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }

    /// CSV export of one time slice: x1,..,xn,value,masked.
    pub fn write_slice_csv(&self, k: usize, w: &mut impl Write) -> Result<(), FieldError> {
        let n = self.spec.n;
        for a in 0..n {
            write!(w, "x{},", a + 1)?;
        }
        writeln!(w, "value,masked")?;
        let spatial_len = self.spec.spatial_len();
        for flat in 0..spatial_len {
            let idx = self.unflatten(flat);
            for a in 0..n {
                write!(w, "{:.17e},", self.spec.coord(a, idx[a]).f64())?;
            }
            let s = k * spatial_len + flat;
            let masked = self.mask.as_ref().map_or(false, |m| m[s]);
            writeln!(w, "{:.17e},{}", self.values[s].f64(), masked as u8)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RegionKind;

    fn grid2(h: f64, dt: f64) -> GridSpec<f64> {
        GridSpec::new(
            h,
            dt,
            vec![Interval::new(-1.0, 1.0), Interval::new(0.0, 1.0)],
            Interval::new(-1.0, 0.0),
        )
        .unwrap()
    }

    #[test]
    fn counts_must_be_integer_multiples() {
        assert!(GridSpec::<f64>::new(
            0.3,
            0.1,
            vec![Interval::new(0.0, 1.0)],
            Interval::new(0.0, 1.0)
        )
        .is_err());
        let g = grid2(0.25, 0.5);
        assert_eq!(g.spatial_counts(), &[9, 5]);
        assert_eq!(g.time_count(), 3);
    }

    #[test]
    fn derivatives_exact_on_linear_field() {
        let g = grid2(0.25, 0.25);
        let f = ScalarField::from_fn(g, |p| p.normal());
        let d = f.derivatives_at(&[4, 2], 2).unwrap();
        assert_eq!(d.grad, vec![0.0, 1.0]);
        assert!(d.hess.iter().all(|&v| v == 0.0));
        assert_eq!(d.dt, 0.0);
    }

    #[test]
    fn derivatives_exact_on_quadratic_normal_coordinate() {
        let g = grid2(0.25, 0.25);
        let f = ScalarField::from_fn(g, |p| p.normal() * p.normal());
        let d = f.derivatives_at(&[4, 2], 1).unwrap();
        assert!((d.hess_at(1, 1) - 2.0).abs() < 1e-13);
        assert_eq!(d.dt, 0.0);
    }

    #[test]
    fn derivatives_taylor_error_on_exponential() {
        // e^{x_n + t}: central gradient error is O(h^2/6), backward time
        // difference error is O(dt/2)
        let h = 1e-3f64;
        let g = GridSpec::new(
            h,
            h,
            vec![Interval::new(-5e-3, 5e-3), Interval::new(-5e-3, 5e-3)],
            Interval::new(-5e-3, 0.0),
        )
        .unwrap();
        let f = ScalarField::from_fn(g, |p| (p.normal() + p.t).exp());
        let d = f.derivatives_at(&[5, 5], 5).unwrap();
        assert!((d.grad[1] - 1.0).abs() < 1e-5, "grad_n error {}", (d.grad[1] - 1.0).abs());
        assert!((d.dt - 1.0).abs() < 1e-2, "dt error {}", (d.dt - 1.0).abs());
        assert!((d.grad[0]).abs() < 1e-12);
    }

    #[test]
    fn one_sided_next_to_mask_and_faces() {
        let g = grid2(0.25, 0.25);
        let mut f = ScalarField::from_fn(g, |p| p.normal());
        // mask the column below x_n = 0.5 at one tangential index
        f.set_masked(&[4, 1], 2, true).unwrap();
        let d = f.derivatives_at(&[4, 2], 2).unwrap();
        assert_eq!(d.spatial_modes[1], StencilMode::ForwardOneSided);
        assert!((d.grad[1] - 1.0).abs() < 1e-13); // still exact on linear data
        assert!(f.derivatives_at(&[4, 1], 2).is_err()); // masked node errors
        let d_face = f.derivatives_at(&[0, 2], 2).unwrap();
        assert_eq!(d_face.spatial_modes[0], StencilMode::ForwardOneSided);
    }

    #[test]
    fn derivative_linearity() {
        let g = grid2(0.25, 0.25);
        let f1 = ScalarField::from_fn(g.clone(), |p| (p.x[0] + 2.0 * p.normal() + p.t).sin());
        let f2 = ScalarField::from_fn(g.clone(), |p| (p.x[0] * p.normal()).cos());
        let combo = ScalarField::from_fn(g, |p| {
            3.0 * (p.x[0] + 2.0 * p.normal() + p.t).sin() - 1.5 * (p.x[0] * p.normal()).cos()
        });
        let d1 = f1.derivatives_at(&[4, 2], 1).unwrap();
        let d2 = f2.derivatives_at(&[4, 2], 1).unwrap();
        let dc = combo.derivatives_at(&[4, 2], 1).unwrap();
        for a in 0..2 {
            assert!((dc.grad[a] - (3.0 * d1.grad[a] - 1.5 * d2.grad[a])).abs() < 1e-12);
        }
        for e in 0..4 {
            assert!((dc.hess[e] - (3.0 * d1.hess[e] - 1.5 * d2.hess[e])).abs() < 1e-10);
        }
        assert!((dc.dt - (3.0 * d1.dt - 1.5 * d2.dt)).abs() < 1e-12);
    }

    #[test]
    fn oscillation_queries() {
        let g = grid2(0.25, 0.25);
        let constant = ScalarField::from_fn(g.clone(), |_| 4.2);
        let half_cube = Region::new(
            RegionKind::HalfCube,
            SpaceTimePoint::new(vec![0.0, 0.0], 0.0).unwrap(),
            1.0,
        )
        .unwrap();
        assert_eq!(constant.oscillation(&half_cube).unwrap(), 0.0);
        let linear = ScalarField::from_fn(g.clone(), |p| p.normal());
        assert!((linear.oscillation(&half_cube).unwrap() - 1.0).abs() < 1e-14);
        let checker = ScalarField::from_fn(g, |p| {
            let i = (p.x[0] / 0.25).round() as i64 + (p.normal() / 0.25).round() as i64;
            if i % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        });
        assert_eq!(checker.oscillation(&half_cube).unwrap(), 2.0);
    }

    #[test]
    fn oscillation_monotone_under_inclusion() {
        let g = grid2(0.125, 0.25);
        let f = ScalarField::from_fn(g, |p| (3.0 * p.x[0]).sin() + p.normal() * p.t);
        let center = SpaceTimePoint::new(vec![0.0, 0.0], 0.0).unwrap();
        let mut prev = 0.0;
        for r in [0.25, 0.5, 0.75, 1.0] {
            let reg = Region::new(RegionKind::HalfCube, center.clone(), r).unwrap();
            let osc = f.oscillation(&reg).unwrap();
            assert!(osc >= prev - 1e-14);
            prev = osc;
        }
    }

    #[test]
    fn restrict_identity_and_half_domain() {
        let g = grid2(0.25, 0.25);
        let f = ScalarField::from_fn(g, |p| p.x[0] + 10.0 * p.normal() + 100.0 * p.t);
        let whole = Region::new(
            RegionKind::Cube,
            SpaceTimePoint::new(vec![0.0, 0.5], 0.0).unwrap(),
            1.0001,
        )
        .unwrap();
        // covering cube leaves the spatial lattice intact and trims the
        // open bottom time slice
        let r = f.restrict(&whole).unwrap();
        assert_eq!(r.spec().spatial_counts(), f.spec().spatial_counts());
        assert_eq!(r.spec().time_count(), f.spec().time_count());
        let half = Region::new(
            RegionKind::Cube,
            SpaceTimePoint::new(vec![-0.5, 0.5], 0.0).unwrap(),
            0.5,
        )
        .unwrap();
        let rh = f.restrict(&half).unwrap();
        assert_eq!(rh.spec().spatial_counts()[0], 5);
        // restriction then oscillation equals oscillation over the region
        let direct = f.oscillation(&half).unwrap();
        let whole_of_restricted = Region::new(
            RegionKind::Cube,
            SpaceTimePoint::new(vec![-0.5, 0.5], 0.0).unwrap(),
            0.5001,
        )
        .unwrap();
        let indirect = rh.oscillation(&whole_of_restricted).unwrap();
        assert!((direct - indirect).abs() < 1e-14);
    }

    #[test]
    fn binary_roundtrip_preserves_everything() {
        let g = grid2(0.5, 0.5);
        let mut f = ScalarField::from_fn(g, |p| p.x[0] * p.normal() + p.t);
        f.set_masked(&[1, 1], 1, true).unwrap();
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        let back = ScalarField::<f64>::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(f, back);
    }

    #[test]
    fn csv_slice_has_header_and_rows() {
        let g = grid2(0.5, 0.5);
        let f = ScalarField::from_fn(g, |p| p.normal());
        let mut buf = Vec::new();
        f.write_slice_csv(0, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x1,x2,value,masked");
        assert_eq!(lines.len(), 1 + f.spec().spatial_len());
    }

    #[test]
    fn interpolation_exact_on_multilinear_data() {
        let g = grid2(0.25, 0.25);
        let f = ScalarField::from_fn(g, |p| 2.0 + p.x[0] + 3.0 * p.normal() + 0.5 * p.t);
        let p = SpaceTimePoint::new(vec![0.13, 0.61], -0.37).unwrap();
        let exact = 2.0 + 0.13 + 3.0 * 0.61 + 0.5 * (-0.37);
        assert!((f.interpolate(&p).unwrap() - exact).abs() < 1e-13);
    }
}
