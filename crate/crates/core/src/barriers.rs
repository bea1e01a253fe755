//! Closed-form sub/supersolution families for the Stefan problem and the
//! linearized oblique problem, together with samplers that certify a
//! candidate as a strict classical barrier on a region.
//!
//! Every family carries analytic derivatives; the verifiers never use
//! finite differences. Universal constants are constructor arguments and
//! the reports carry the worst margins actually attained.

use crate::fields::{FieldError, ScalarField};
use crate::geometry::{Region, RegionDescription, SpaceTimePoint};
use crate::linalg::SymMatrix;
use crate::Real;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BarrierError {
    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),
    #[error("vanishing gradient on the candidate free boundary at {0:?}")]
    DegenerateTouching(Vec<f64>),
    #[error("no sample points found in the region")]
    EmptyRegion,
    #[error("geometry: {0}")]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error("field: {0}")]
    Field(#[from] FieldError),
}

/// A space-time function with analytic value and derivatives.
pub trait AnalyticField<T: Real>: Sync {
    fn name(&self) -> String;
    fn value(&self, p: &SpaceTimePoint<T>) -> T;
    fn gradient(&self, p: &SpaceTimePoint<T>) -> Vec<T>;
    fn hessian(&self, p: &SpaceTimePoint<T>) -> SymMatrix<T>;
    fn time_derivative(&self, p: &SpaceTimePoint<T>) -> T;

    fn laplacian(&self, p: &SpaceTimePoint<T>) -> T {
        let h = self.hessian(p);
        (0..h.n()).fold(T::zero(), |acc, i| acc + h.get(i, i))
    }
}

/// A barrier for the free-boundary problem: an analytic field that also
/// knows how to parametrize its own free boundary.
pub trait StefanBarrier<T: Real>: AnalyticField<T> {
    /// Points of the candidate free boundary inside the region, produced by
    /// an explicit parametrization (not by root-finding on samples).
    fn front_points(&self, region: &Region<T>, samples: usize) -> Vec<SpaceTimePoint<T>>;
}

/// Exact solution (e^{a x_n + a^2 t} - 1)^+ with front x_n = -a t; the
/// slope doubles as the front speed.
#[derive(Debug, Clone)]
pub struct TravelingWave<T> {
    pub a: T,
}

impl<T: Real> TravelingWave<T> {
    /// `a` must respect the prescribed slope window [1/K, K].
    pub fn new(a: T, k_bound: T) -> Result<Self, BarrierError> {
        if a < k_bound.recip() || a > k_bound {
            return Err(BarrierError::ParameterOutOfRange(format!(
                "slope {a} outside [1/{k_bound}, {k_bound}]"
            )));
        }
        Ok(Self { a })
    }

    fn phase(&self, p: &SpaceTimePoint<T>) -> T {
        let s = self.a * p.normal() + self.a * self.a * p.t;
        // snap rounding-level phases so front identities stay bit-exact
        if s.abs() <= T::of(1e-12) {
            T::zero()
        } else {
            s
        }
    }

    /// Front height at time t.
    pub fn front(&self, t: T) -> T {
        -self.a * t
    }
}

impl<T: Real> AnalyticField<T> for TravelingWave<T> {
    fn name(&self) -> String {
        format!("traveling_wave(a={})", self.a)
    }

    fn value(&self, p: &SpaceTimePoint<T>) -> T {
        let s = self.phase(p);
        if s > T::zero() {
            s.exp() - T::one()
        } else {
            T::zero()
        }
    }

    // Derivatives are the positive-side analytic continuation: on the ice
    // side they are zero, on the front they are taken from the liquid.
    fn gradient(&self, p: &SpaceTimePoint<T>) -> Vec<T> {
        let n = p.dim();
        let mut g = vec![T::zero(); n];
        let s = self.phase(p);
        if s >= -T::of(1e-12) {
            g[n - 1] = self.a * s.max(T::zero()).exp();
        }
        g
    }

    fn hessian(&self, p: &SpaceTimePoint<T>) -> SymMatrix<T> {
        let n = p.dim();
        let mut h = SymMatrix::zeros(n);
        let s = self.phase(p);
        if s >= -T::of(1e-12) {
            h.set(n - 1, n - 1, self.a * self.a * s.max(T::zero()).exp());
        }
        h
    }

    fn time_derivative(&self, p: &SpaceTimePoint<T>) -> T {
        let s = self.phase(p);
        if s >= -T::of(1e-12) {
            self.a * self.a * s.max(T::zero()).exp()
        } else {
            T::zero()
        }
    }
}

impl<T: Real> StefanBarrier<T> for TravelingWave<T> {
    fn front_points(&self, region: &Region<T>, samples: usize) -> Vec<SpaceTimePoint<T>> {
        let mut pts = Vec::new();
        let Ok((sp, (t_lo, t_hi))) = region.bounding_box() else {
            return pts;
        };
        let n = region.center.dim();
        let m = samples.max(2);
        let lattice = tangential_lattice(&sp[..n - 1], m);
        for k in 0..m {
            let t = t_lo + (t_hi - t_lo) * T::of((k as f64 + 0.5) / m as f64);
            for xp in &lattice {
                let mut x = xp.clone();
                x.push(self.front(t));
                let p = SpaceTimePoint { x, t };
                if region.contains(&p).unwrap_or(false) {
                    pts.push(p);
                }
            }
        }
        pts
    }
}

/// Moving plane (x_n + speed t)^+; strict supersolution of the scaled
/// problem when speed exceeds the scaled square gradient.
#[derive(Debug, Clone)]
pub struct MovingPlane<T> {
    pub speed: T,
}

impl<T: Real> AnalyticField<T> for MovingPlane<T> {
    fn name(&self) -> String {
        format!("moving_plane(speed={})", self.speed)
    }

    fn value(&self, p: &SpaceTimePoint<T>) -> T {
        (p.normal() + self.speed * p.t).max(T::zero())
    }

    fn gradient(&self, p: &SpaceTimePoint<T>) -> Vec<T> {
        let n = p.dim();
        let mut g = vec![T::zero(); n];
        if p.normal() + self.speed * p.t >= -T::of(1e-12) {
            g[n - 1] = T::one();
        }
        g
    }

    fn hessian(&self, p: &SpaceTimePoint<T>) -> SymMatrix<T> {
        SymMatrix::zeros(p.dim())
    }

    fn time_derivative(&self, p: &SpaceTimePoint<T>) -> T {
        if p.normal() + self.speed * p.t >= -T::of(1e-12) {
            self.speed
        } else {
            T::zero()
        }
    }
}

impl<T: Real> StefanBarrier<T> for MovingPlane<T> {
    fn front_points(&self, region: &Region<T>, samples: usize) -> Vec<SpaceTimePoint<T>> {
        let wave = TravelingWave { a: self.speed };
        // same planar front parametrization x_n = -speed * t
        wave.front_points(region, samples)
    }
}

/// Radial supersolution C0 g(|x| - r(t)) with r(t) = 1 - C0 lambda t and g
/// the bounded increasing solution of g'' + 2 n g' = 0, g(0) = 0, g'(0) = 1.
#[derive(Debug, Clone)]
pub struct RadialSupersolution<T> {
    pub c0: T,
    pub lambda: T,
    pub n: usize,
}

impl<T: Real> RadialSupersolution<T> {
    pub fn new(c0: T, lambda: T, n: usize) -> Result<Self, BarrierError> {
        if c0 <= T::zero() {
            return Err(BarrierError::ParameterOutOfRange(format!("C0 = {c0} must be positive")));
        }
        if lambda <= T::zero() || lambda > T::one() {
            return Err(BarrierError::ParameterOutOfRange(format!("lambda = {lambda} outside (0,1]")));
        }
        if n < 2 {
            return Err(BarrierError::ParameterOutOfRange(format!("dimension {n} < 2")));
        }
        Ok(Self { c0, lambda, n })
    }

    /// Profile g: closed form (1 - e^{-2 n s}) / (2 n) for s > 0.
    pub fn g(&self, s: T) -> T {
        if s <= T::zero() {
            T::zero()
        } else {
            let two_n = T::of(2.0 * self.n as f64);
            (T::one() - (-two_n * s).exp()) / two_n
        }
    }

    /// g' with the one-sided value 1 at s = 0; rounding-level negative
    /// arguments are treated as the front itself.
    pub fn g_prime(&self, s: T) -> T {
        let s = if s.abs() <= T::of(1e-12) { T::zero() } else { s };
        if s < T::zero() {
            T::zero()
        } else {
            (-T::of(2.0 * self.n as f64) * s).exp()
        }
    }

    pub fn g_second(&self, s: T) -> T {
        let s = if s.abs() <= T::of(1e-12) { T::zero() } else { s };
        if s < T::zero() {
            T::zero()
        } else {
            let two_n = T::of(2.0 * self.n as f64);
            -two_n * (-two_n * s).exp()
        }
    }

    pub fn front_radius(&self, t: T) -> T {
        T::one() - self.c0 * self.lambda * t
    }
}

fn radius<T: Real>(x: &[T]) -> T {
    x.iter().map(|&v| v * v).fold(T::zero(), |a, b| a + b).sqrt()
}

impl<T: Real> AnalyticField<T> for RadialSupersolution<T> {
    fn name(&self) -> String {
        format!("radial_supersolution(C0={}, lambda={}, n={})", self.c0, self.lambda, self.n)
    }

    fn value(&self, p: &SpaceTimePoint<T>) -> T {
        let s = radius(&p.x) - self.front_radius(p.t);
        let s = if s.abs() <= T::of(1e-12) { T::zero() } else { s };
        self.c0 * self.g(s)
    }

    fn gradient(&self, p: &SpaceTimePoint<T>) -> Vec<T> {
        let r = radius(&p.x);
        let s = r - self.front_radius(p.t);
        let gp = self.c0 * self.g_prime(s);
        if r == T::zero() {
            return vec![T::zero(); p.dim()];
        }
        p.x.iter().map(|&v| gp * v / r).collect()
    }

    fn hessian(&self, p: &SpaceTimePoint<T>) -> SymMatrix<T> {
        let n = p.dim();
        let r = radius(&p.x);
        let s = r - self.front_radius(p.t);
        let mut h = SymMatrix::zeros(n);
        if r == T::zero() {
            return h;
        }
        let gp = self.g_prime(s);
        let gpp = self.g_second(s);
        for i in 0..n {
            for j in i..n {
                let xi = p.x[i] / r;
                let xj = p.x[j] / r;
                let delta = if i == j { T::one() } else { T::zero() };
                let v = self.c0 * (gpp * xi * xj + gp * (delta - xi * xj) / r);
                h.set(i, j, v);
            }
        }
        h
    }

    fn time_derivative(&self, p: &SpaceTimePoint<T>) -> T {
        let s = radius(&p.x) - self.front_radius(p.t);
        // dr/dt = -C0 lambda, so w_t = C0^2 lambda g'(s)
        self.c0 * self.c0 * self.lambda * self.g_prime(s)
    }
}

impl<T: Real> StefanBarrier<T> for RadialSupersolution<T> {
    fn front_points(&self, region: &Region<T>, samples: usize) -> Vec<SpaceTimePoint<T>> {
        let mut pts = Vec::new();
        let Ok((_, (t_lo, t_hi))) = region.bounding_box() else {
            return pts;
        };
        let m = samples.max(2);
        let n = region.center.dim();
        for k in 0..m {
            let t = t_lo + (t_hi - t_lo) * T::of((k as f64 + 0.5) / m as f64);
            let r = self.front_radius(t);
            for dir in unit_directions::<T>(n, m * m) {
                let x: Vec<T> = dir.iter().map(|&d| d * r).collect();
                let p = SpaceTimePoint { x, t };
                if region.contains(&p).unwrap_or(false) {
                    pts.push(p);
                }
            }
        }
        pts
    }
}

/// Tilted-plane subsolution used to pin the free boundary location:
/// v = (1 - C2 eta^beta) a_n(t) (h(x - d(t) e_n))^+ with
/// h(x) = x_n - eta^{beta-1} (|x'|^2 - 2 n x_n^2) and
/// d(t) = b(t) + C1 eta^beta lambda t, b' = -lambda a_n, b(0) = 0.
#[derive(Debug, Clone)]
pub struct PerturbedPlaneSubsolution<T> {
    pub eta: T,
    pub beta: T,
    pub c1: T,
    pub c2: T,
    /// slope path a_n(t) = a0 + rate * t
    pub a0: T,
    pub rate: T,
    pub lambda: T,
    pub n: usize,
}

impl<T: Real> PerturbedPlaneSubsolution<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        eta: T,
        beta: T,
        c1: T,
        c2: T,
        a0: T,
        rate: T,
        lambda: T,
        n: usize,
    ) -> Result<Self, BarrierError> {
        if eta <= T::zero() || beta <= T::zero() || beta >= T::one() {
            return Err(BarrierError::ParameterOutOfRange(
                "need eta > 0 and beta in (0,1)".into(),
            ));
        }
        if c2 * eta.powf(beta) >= T::one() {
            return Err(BarrierError::ParameterOutOfRange(
                "C2 eta^beta must stay below 1".into(),
            ));
        }
        if n < 2 {
            return Err(BarrierError::ParameterOutOfRange(format!("dimension {n} < 2")));
        }
        Ok(Self { eta, beta, c1, c2, a0, rate, lambda, n })
    }

    pub fn slope(&self, t: T) -> T {
        self.a0 + self.rate * t
    }

    fn slope_rate(&self) -> T {
        self.rate
    }

    /// d(t) with b integrated in closed form from b' = -lambda a_n.
    pub fn shift(&self, t: T) -> T {
        let b = -self.lambda * (self.a0 * t + self.rate * t * t * T::of(0.5));
        b + self.c1 * self.eta.powf(self.beta) * self.lambda * t
    }

    fn shift_rate(&self, t: T) -> T {
        -self.lambda * self.slope(t) + self.c1 * self.eta.powf(self.beta) * self.lambda
    }

    fn eta_pow(&self) -> (T, T) {
        (self.eta.powf(self.beta), self.eta.powf(self.beta - T::one()))
    }

    /// h evaluated in shifted coordinates.
    pub fn h(&self, xi: &[T]) -> T {
        let (_, em1) = self.eta_pow();
        let n = xi.len();
        let tang: T = xi[..n - 1].iter().map(|&v| v * v).fold(T::zero(), |a, b| a + b);
        let xn = xi[n - 1];
        xn - em1 * (tang - T::of(2.0 * self.n as f64) * xn * xn)
    }

    pub fn grad_h(&self, xi: &[T]) -> Vec<T> {
        let (_, em1) = self.eta_pow();
        let n = xi.len();
        let mut g: Vec<T> = xi[..n - 1].iter().map(|&v| -T::of(2.0) * em1 * v).collect();
        g.push(T::one() + T::of(4.0 * self.n as f64) * em1 * xi[n - 1]);
        g
    }

    fn shifted(&self, p: &SpaceTimePoint<T>) -> Vec<T> {
        let mut xi = p.x.clone();
        let last = xi.len() - 1;
        xi[last] = xi[last] - self.shift(p.t);
        xi
    }

    fn amplitude(&self, t: T) -> T {
        let (eb, _) = self.eta_pow();
        (T::one() - self.c2 * eb) * self.slope(t)
    }

    /// Envelope majorant a_n(t) (x_n - d(t))^+ that the subsolution must
    /// stay below.
    pub fn envelope(&self, p: &SpaceTimePoint<T>) -> T {
        (self.slope(p.t) * (p.normal() - self.shift(p.t))).max(T::zero())
    }
}

impl<T: Real> AnalyticField<T> for PerturbedPlaneSubsolution<T> {
    fn name(&self) -> String {
        format!(
            "perturbed_plane_subsolution(eta={}, beta={}, C1={}, C2={})",
            self.eta, self.beta, self.c1, self.c2
        )
    }

    fn value(&self, p: &SpaceTimePoint<T>) -> T {
        let xi = self.shifted(p);
        (self.amplitude(p.t) * self.h(&xi)).max(T::zero())
    }

    fn gradient(&self, p: &SpaceTimePoint<T>) -> Vec<T> {
        let xi = self.shifted(p);
        let amp = self.amplitude(p.t);
        self.grad_h(&xi).into_iter().map(|g| amp * g).collect()
    }

    fn hessian(&self, p: &SpaceTimePoint<T>) -> SymMatrix<T> {
        let n = p.dim();
        let (_, em1) = self.eta_pow();
        let amp = self.amplitude(p.t);
        let mut h = SymMatrix::zeros(n);
        for i in 0..n - 1 {
            h.set(i, i, -T::of(2.0) * em1 * amp);
        }
        h.set(n - 1, n - 1, T::of(4.0 * self.n as f64) * em1 * amp);
        h
    }

    fn time_derivative(&self, p: &SpaceTimePoint<T>) -> T {
        let (eb, _) = self.eta_pow();
        let xi = self.shifted(p);
        let hval = self.h(&xi);
        let hn = self.grad_h(&xi)[p.dim() - 1];
        (T::one() - self.c2 * eb)
            * (self.slope_rate() * hval + self.slope(p.t) * (-self.shift_rate(p.t)) * hn)
    }
}

impl<T: Real> StefanBarrier<T> for PerturbedPlaneSubsolution<T> {
    fn front_points(&self, region: &Region<T>, samples: usize) -> Vec<SpaceTimePoint<T>> {
        // h = 0 is a quadratic in xi_n: 2 n eta^{beta-1} xi_n^2 + xi_n
        //   - eta^{beta-1} |xi'|^2 = 0; keep both sheets.
        let mut pts = Vec::new();
        let Ok((sp, (t_lo, t_hi))) = region.bounding_box() else {
            return pts;
        };
        let (_, em1) = self.eta_pow();
        let n = region.center.dim();
        let m = samples.max(2);
        let lattice = tangential_lattice(&sp[..n - 1], m);
        let a = T::of(2.0 * self.n as f64) * em1;
        for k in 0..m {
            let t = t_lo + (t_hi - t_lo) * T::of((k as f64 + 0.5) / m as f64);
            let d = self.shift(t);
            for xp in &lattice {
                let tang: T = xp.iter().map(|&v| v * v).fold(T::zero(), |x, y| x + y);
                let c = -em1 * tang;
                let disc = T::one() - T::of(4.0) * a * c;
                if disc < T::zero() {
                    continue;
                }
                let sq = disc.sqrt();
                for root in [(-T::one() + sq) / (T::of(2.0) * a), (-T::one() - sq) / (T::of(2.0) * a)] {
                    let mut x = xp.clone();
                    x.push(root + d);
                    let p = SpaceTimePoint { x, t };
                    if region.contains(&p).unwrap_or(false) {
                        pts.push(p);
                    }
                }
            }
        }
        pts
    }
}

/// Quadratic replacement for a C^1 touching function of the oblique
/// boundary condition: w(0) + (w_t(0)-eps) t + (grad w(0) + eps e_n)·x
/// + M (|x'|^2 - n K^2 x_n^2).
#[derive(Debug, Clone)]
pub struct TouchingPolynomial<T> {
    pub base_value: T,
    pub base_dt: T,
    pub base_grad: Vec<T>,
    pub eps: T,
    pub m: T,
    pub k_bound: T,
}

impl<T: Real> TouchingPolynomial<T> {
    pub fn new(
        base_value: T,
        base_dt: T,
        base_grad: Vec<T>,
        eps: T,
        m: T,
        k_bound: T,
    ) -> Result<Self, BarrierError> {
        if eps <= T::zero() || m <= T::zero() || k_bound < T::one() {
            return Err(BarrierError::ParameterOutOfRange(
                "need eps > 0, M > 0, K >= 1".into(),
            ));
        }
        Ok(Self { base_value, base_dt, base_grad, eps, m, k_bound })
    }
}

impl<T: Real> AnalyticField<T> for TouchingPolynomial<T> {
    fn name(&self) -> String {
        format!("touching_polynomial(eps={}, M={}, K={})", self.eps, self.m, self.k_bound)
    }

    fn value(&self, p: &SpaceTimePoint<T>) -> T {
        let n = p.dim();
        let mut v = self.base_value + (self.base_dt - self.eps) * p.t;
        for i in 0..n {
            let gi = self.base_grad[i] + if i == n - 1 { self.eps } else { T::zero() };
            v = v + gi * p.x[i];
        }
        let tang: T = p.tangential().iter().map(|&x| x * x).fold(T::zero(), |a, b| a + b);
        let xn = p.normal();
        v + self.m * (tang - T::of(n as f64) * self.k_bound * self.k_bound * xn * xn)
    }

    fn gradient(&self, p: &SpaceTimePoint<T>) -> Vec<T> {
        let n = p.dim();
        (0..n)
            .map(|i| {
                let base = self.base_grad[i] + if i == n - 1 { self.eps } else { T::zero() };
                if i == n - 1 {
                    base - T::of(2.0 * n as f64) * self.m * self.k_bound * self.k_bound * p.x[i]
                } else {
                    base + T::of(2.0) * self.m * p.x[i]
                }
            })
            .collect()
    }

    fn hessian(&self, p: &SpaceTimePoint<T>) -> SymMatrix<T> {
        let n = p.dim();
        let mut h = SymMatrix::zeros(n);
        for i in 0..n - 1 {
            h.set(i, i, T::of(2.0) * self.m);
        }
        h.set(
            n - 1,
            n - 1,
            -T::of(2.0 * n as f64) * self.m * self.k_bound * self.k_bound,
        );
        h
    }

    fn time_derivative(&self, _p: &SpaceTimePoint<T>) -> T {
        self.base_dt - self.eps
    }
}

/// Solution of g_t = K^{-1} g_xx on the line with step data
/// chi_{(0,inf)} - chi_{(-inf,0)}; evaluated through the error function.
#[derive(Debug, Clone)]
pub struct HeatKernelBarrier1D<T> {
    pub k_bound: T,
}

impl<T: Real> HeatKernelBarrier1D<T> {
    pub fn new(k_bound: T) -> Result<Self, BarrierError> {
        if k_bound < T::one() {
            return Err(BarrierError::ParameterOutOfRange(format!("K = {k_bound} < 1")));
        }
        Ok(Self { k_bound })
    }

    /// g(x, t) = erf(x sqrt(K) / (2 sqrt(t))) for t > 0, sign(x) at t = 0.
    pub fn value(&self, x: T, t: T) -> T {
        if t <= T::zero() {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        } else {
            (x * self.k_bound.sqrt() / (T::of(2.0) * t.sqrt())).erf()
        }
    }

    pub fn dx(&self, x: T, t: T) -> T {
        let pi = T::of(std::f64::consts::PI);
        let arg = x * self.k_bound.sqrt() / (T::of(2.0) * t.sqrt());
        (self.k_bound / (pi * t)).sqrt() * (-arg * arg).exp()
    }

    pub fn dt(&self, x: T, t: T) -> T {
        let pi = T::of(std::f64::consts::PI);
        let arg = x * self.k_bound.sqrt() / (T::of(2.0) * t.sqrt());
        -x * self.k_bound.sqrt() / (T::of(2.0) * pi.sqrt()) * t.powf(-T::of(1.5))
            * (-arg * arg).exp()
    }

    pub fn dxx(&self, x: T, t: T) -> T {
        self.k_bound * self.dt(x, t)
    }
}

/// Supersolution envelope for the 1D oblique problem built on the heat
/// kernel barrier: C1 g(x, t+1) + (t+1)^{1/2}/4 - C2 x^{1+alpha}.
#[derive(Debug, Clone)]
pub struct DecayEnvelope1D<T> {
    pub kernel: HeatKernelBarrier1D<T>,
    pub c1: T,
    pub c2: T,
    pub alpha: T,
}

impl<T: Real> DecayEnvelope1D<T> {
    pub fn value(&self, x: T, t: T) -> T {
        self.c1 * self.kernel.value(x, t + T::one())
            + T::of(0.25) * (t + T::one()).sqrt()
            - self.c2 * x.powf(T::one() + self.alpha)
    }

    pub fn dx(&self, x: T, t: T) -> T {
        self.c1 * self.kernel.dx(x, t + T::one())
            - self.c2 * (T::one() + self.alpha) * x.powf(self.alpha)
    }

    pub fn dxx(&self, x: T, t: T) -> T {
        let a = self.alpha;
        self.c1 * self.kernel.dxx(x, t + T::one())
            - self.c2 * (T::one() + a) * a * x.powf(a - T::one())
    }

    pub fn dt(&self, x: T, t: T) -> T {
        self.c1 * self.kernel.dt(x, t + T::one())
            + T::of(0.125) / (t + T::one()).sqrt()
    }
}

/// Which side of the comparison a barrier certifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierSide {
    Supersolution,
    Subsolution,
}

/// Verification report; `pass` holds when both worst margins meet the
/// requested one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BarrierReport {
    pub candidate: String,
    pub side: BarrierSide,
    pub region: RegionDescription,
    pub requested_margin: f64,
    pub interior_margin: f64,
    pub boundary_margin: f64,
    pub interior_samples: usize,
    pub boundary_samples: usize,
    pub pass: bool,
}

fn tangential_lattice<T: Real>(bounds: &[(T, T)], m: usize) -> Vec<Vec<T>> {
    if bounds.is_empty() {
        return vec![vec![]];
    }
    let rest = tangential_lattice(&bounds[1..], m);
    let mut out = Vec::with_capacity(m * rest.len());
    for k in 0..m {
        let x = bounds[0].0
            + (bounds[0].1 - bounds[0].0) * T::of(k as f64 / (m as f64 - 1.0).max(1.0));
        for tail in &rest {
            let mut v = Vec::with_capacity(bounds.len());
            v.push(x);
            v.extend_from_slice(tail);
            out.push(v);
        }
    }
    out
}

fn unit_directions<T: Real>(n: usize, count: usize) -> Vec<Vec<T>> {
    if n == 2 {
        return (0..count)
            .map(|k| {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                vec![T::of(theta.cos()), T::of(theta.sin())]
            })
            .collect();
    }
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x0ddba11);
    (0..count)
        .map(|_| {
            loop {
                let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let r = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if r > 1e-3 {
                    return v.into_iter().map(|x| T::of(x / r)).collect();
                }
            }
        })
        .collect()
}

/// Samples the region's bounding box on a `samples`-per-axis lattice and
/// keeps points inside the region where the candidate is strictly positive.
fn interior_samples<T: Real>(
    barrier: &dyn AnalyticField<T>,
    region: &Region<T>,
    samples: usize,
) -> Result<Vec<SpaceTimePoint<T>>, BarrierError> {
    let (sp, (t_lo, t_hi)) = region.bounding_box()?;
    let m = samples.max(2);
    let lattice = tangential_lattice(&sp, m);
    let mut pts = Vec::new();
    for k in 0..m {
        let t = t_lo + (t_hi - t_lo) * T::of((k as f64 + 0.5) / m as f64);
        for x in &lattice {
            let p = SpaceTimePoint { x: x.clone(), t };
            if region.contains(&p)? && barrier.value(&p) > T::zero() {
                pts.push(p);
            }
        }
    }
    Ok(pts)
}

/// Certifies a strict classical supersolution (or subsolution) of the
/// free-boundary problem with scaled boundary law u_t = lambda |grad u|^2:
/// interior residual u_t - lap u, boundary residual u_t - lambda |grad u|^2,
/// both signed so that positive is good for a supersolution. PASS when both
/// worst residuals are at least `margin`.
pub fn verify_stefan_barrier<T: Real>(
    barrier: &dyn StefanBarrier<T>,
    region: &Region<T>,
    lambda: T,
    side: BarrierSide,
    margin: T,
    samples: usize,
) -> Result<BarrierReport, BarrierError> {
    let sign = match side {
        BarrierSide::Supersolution => T::one(),
        BarrierSide::Subsolution => -T::one(),
    };
    let interior = interior_samples(barrier, region, samples)?;
    let front = barrier.front_points(region, samples);
    if interior.is_empty() && front.is_empty() {
        return Err(BarrierError::EmptyRegion);
    }
    for p in &front {
        let g = barrier.gradient(p);
        let norm = radius(&g);
        if norm < T::of(1e-10) {
            return Err(BarrierError::DegenerateTouching(
                p.x.iter().map(|v| v.f64()).collect(),
            ));
        }
    }
    let interior_margin = interior
        .par_iter()
        .map(|p| sign * (barrier.time_derivative(p) - barrier.laplacian(p)))
        .reduce(|| T::infinity(), |a, b| a.min(b));
    let boundary_margin = front
        .par_iter()
        .map(|p| {
            let g = barrier.gradient(p);
            let g2 = g.iter().map(|&v| v * v).fold(T::zero(), |a, b| a + b);
            sign * (barrier.time_derivative(p) - lambda * g2)
        })
        .reduce(|| T::infinity(), |a, b| a.min(b));
    // residuals are certified up to f64 rounding of the closed forms
    let slack = T::of(1e-12);
    let pass = interior_margin >= margin - slack && boundary_margin >= margin - slack;
    Ok(BarrierReport {
        candidate: barrier.name(),
        side,
        region: RegionDescription::from_region(region),
        requested_margin: margin.f64(),
        interior_margin: interior_margin.f64(),
        boundary_margin: boundary_margin.f64(),
        interior_samples: interior.len(),
        boundary_samples: front.len(),
        pass,
    })
}

/// Certifies a classical subsolution of the linearized oblique problem with
/// slack: lambda v_t <= tr(A(t) D^2 v) - C delta in the region interior
/// ({x_n > 0}) and v_t <= gamma(t)·grad v - delta on {x_n = 0}. The
/// supersolution variant flips both inequalities.
#[allow(clippy::too_many_arguments)]
pub fn verify_linear_barrier<T: Real>(
    candidate: &dyn AnalyticField<T>,
    a_of_t: &(dyn Fn(T) -> SymMatrix<T> + Sync),
    gamma_of_t: &(dyn Fn(T) -> Vec<T> + Sync),
    lambda: T,
    delta: T,
    c_slack: T,
    side: BarrierSide,
    region: &Region<T>,
    derivative_bound: T,
    samples: usize,
) -> Result<BarrierReport, BarrierError> {
    let sign = match side {
        BarrierSide::Subsolution => T::one(),
        BarrierSide::Supersolution => -T::one(),
    };
    let (sp, (t_lo, t_hi)) = region.bounding_box()?;
    let m = samples.max(2);
    let lattice = tangential_lattice(&sp, m);
    let mut interior = Vec::new();
    let mut boundary = Vec::new();
    for k in 0..m {
        let t = t_lo + (t_hi - t_lo) * T::of((k as f64 + 0.5) / m as f64);
        for x in &lattice {
            let p = SpaceTimePoint { x: x.clone(), t };
            if !region.contains(&p)? {
                continue;
            }
            if p.normal().abs() <= T::of(1e-12) {
                boundary.push(p);
            } else if p.normal() > T::zero() {
                interior.push(p);
            }
        }
    }
    if interior.is_empty() && boundary.is_empty() {
        return Err(BarrierError::EmptyRegion);
    }
    // declared derivative bounds must actually hold on the samples
    for p in interior.iter().chain(&boundary) {
        let g = radius(&candidate.gradient(p));
        let hmax = candidate.hessian(p).max_abs();
        if g > derivative_bound || hmax > derivative_bound {
            return Err(BarrierError::ParameterOutOfRange(format!(
                "derivatives exceed the declared bound {derivative_bound} at {:?}",
                p.x.iter().map(|v| v.f64()).collect::<Vec<_>>()
            )));
        }
    }
    // the slack tightens the inequality on either side:
    // subsolution    tr(A D^2 v) - lambda v_t >= C delta,
    // supersolution  lambda v_t - tr(A D^2 v) >= C delta.
    let interior_margin = interior
        .par_iter()
        .map(|p| {
            let tr = a_of_t(p.t).trace_product(&candidate.hessian(p));
            sign * (tr - lambda * candidate.time_derivative(p)) - c_slack * delta
        })
        .reduce(|| T::infinity(), |a, b| a.min(b));
    let boundary_margin = boundary
        .par_iter()
        .map(|p| {
            let g = candidate.gradient(p);
            let gamma = gamma_of_t(p.t);
            let adv: T = g.iter().zip(&gamma).map(|(&x, &y)| x * y).fold(T::zero(), |a, b| a + b);
            sign * (adv - candidate.time_derivative(p)) - delta
        })
        .reduce(|| T::infinity(), |a, b| a.min(b));
    let slack = T::of(1e-12);
    let pass = interior_margin >= -slack && boundary_margin >= -slack;
    Ok(BarrierReport {
        candidate: candidate.name(),
        side,
        region: RegionDescription::from_region(region),
        requested_margin: delta.f64(),
        interior_margin: interior_margin.f64(),
        boundary_margin: boundary_margin.f64(),
        interior_samples: interior.len(),
        boundary_samples: boundary.len(),
        pass,
    })
}

/// Tangential sup-convolution on the grid:
/// out(x', x_n, t) = max_{y'} f(y', x_n, t) - |y' - x'|^2 / (2 eps).
/// Computed axis by axis; the quadratic penalty separates exactly.
pub fn sup_convolution<T: Real>(f: &ScalarField<T>, eps: T) -> Result<ScalarField<T>, FieldError> {
    assert!(eps > T::zero(), "eps must be positive");
    let mut out = f.clone();
    let n = f.spec().n();
    let h = f.spec().h();
    let counts = f.spec().spatial_counts().to_vec();
    for axis in 0..n - 1 {
        let prev = out.clone();
        let spatial_len = f.spec().spatial_len();
        for k in 0..f.spec().time_count() {
            for flat in 0..spatial_len {
                let idx = prev.unflatten(flat);
                let mut best = T::neg_infinity();
                let mut probe = idx.clone();
                for j in 0..counts[axis] {
                    probe[axis] = j;
                    let dj = T::of(j as f64) - T::of(idx[axis] as f64);
                    let dist = dj * h;
                    let v = prev.get(&probe, k)? - dist * dist / (T::of(2.0) * eps);
                    best = best.max(v);
                }
                out.set(&idx, k, best)?;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{GridSpec, Interval};
    use crate::geometry::RegionKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(x: &[f64], t: f64) -> SpaceTimePoint<f64> {
        SpaceTimePoint::new(x.to_vec(), t).unwrap()
    }

    #[test]
    fn wave_vanishes_on_front_with_unit_gradient() {
        let w = TravelingWave::new(1.0, 2.0).unwrap();
        let p = pt(&[0.3, 0.0], 0.0);
        assert_eq!(w.value(&p), 0.0);
        assert_eq!(w.gradient(&p), vec![0.0, 1.0]);
    }

    #[test]
    fn wave_solves_heat_equation_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &a in &[0.5, 1.0, 2.0] {
            let w = TravelingWave::new(a, 2.0).unwrap();
            for _ in 0..10_000 {
                let p = pt(
                    &[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                    rng.gen_range(-1.0..0.0),
                );
                if w.value(&p) <= 0.0 {
                    continue;
                }
                let res = (w.time_derivative(&p) - w.laplacian(&p)).abs();
                assert!(res <= 1e-12, "interior residual {res}");
            }
            // on the front: u_t = |grad u|^2 = a^2 exactly
            for k in 0..100 {
                let t = -0.7 * k as f64 / 100.0;
                let p = pt(&[0.1, w.front(t)], t);
                let g = w.gradient(&p);
                let g2: f64 = g.iter().map(|v| v * v).sum();
                assert_eq!(w.time_derivative(&p), a * a);
                assert_eq!(g2, a * a);
            }
        }
    }

    #[test]
    fn radial_profile_matches_ode_oracle() {
        // integrate g'' + 2n g' = 0, g(0)=0, g'(0)=1 with RK4 and compare
        // against the closed form; freeze the n=2, s=1 value
        let b = RadialSupersolution::new(4.0, 0.5, 2).unwrap();
        let mut g = 0.0f64;
        let mut gp = 1.0f64;
        let ds = 1e-5;
        let n = 2.0;
        let mut s = 0.0;
        while s < 1.0 - ds / 2.0 {
            // y' = (gp, -2n gp)
            let k1 = (gp, -2.0 * n * gp);
            let k2 = (gp + 0.5 * ds * k1.1, -2.0 * n * (gp + 0.5 * ds * k1.1));
            let k3 = (gp + 0.5 * ds * k2.1, -2.0 * n * (gp + 0.5 * ds * k2.1));
            let k4 = (gp + ds * k3.1, -2.0 * n * (gp + ds * k3.1));
            g += ds / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            gp += ds / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
            s += ds;
        }
        assert!((b.g(1.0) - g).abs() < 1e-10, "closed form {} vs ODE {}", b.g(1.0), g);
        assert!((b.g(1.0) - 0.24542).abs() < 1e-5);
        assert_eq!(b.g(0.0), 0.0);
        assert_eq!(b.g_prime(0.0), 1.0);
    }

    #[test]
    fn radial_g_prime_bounded_and_laplacian_negative_outside_half_radius() {
        let b = RadialSupersolution::new(3.0, 0.25, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..2000 {
            let s = rng.gen_range(-1.0..3.0);
            let gp = b.g_prime(s);
            assert!((0.0..=1.0).contains(&gp));
            // sample points with |x| >= 1/2 inside the positivity set
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = rng.gen_range(0.5..2.5);
            let t = rng.gen_range(0.0..0.5);
            let p = pt(&[r * theta.cos(), r * theta.sin()], t);
            if b.value(&p) > 0.0 {
                assert!(b.laplacian(&p) < 0.0, "laplacian must be negative at |x|={r}");
            }
        }
    }

    #[test]
    fn heat_kernel_barrier_identities() {
        let k = HeatKernelBarrier1D::<f64>::new(2.0).unwrap();
        // frozen erf reference values
        assert!((1.0f64.erf_oracle() - 0.8427007929497149).abs() < 1e-15);
        for &(x, t) in &[(0.3f64, 0.5f64), (1.0, 0.1), (0.05, 2.0)] {
            assert_eq!(k.value(0.0, t), 0.0);
            // PDE identity g_t = K^{-1} g_xx holds analytically
            assert!((k.dt(x, t) - k.dxx(x, t) / 2.0).abs() < 1e-14);
            assert!(k.dt(x, t) <= 0.0);
            // finite-difference cross-check of dx and dt
            let fd_x = (k.value(x + 1e-6, t) - k.value(x - 1e-6, t)) / 2e-6;
            assert!((fd_x - k.dx(x, t)).abs() < 1e-7);
            let fd_t = (k.value(x, t + 1e-6) - k.value(x, t - 1e-6)) / 2e-6;
            assert!((fd_t - k.dt(x, t)).abs() < 1e-7);
        }
        // g_x(0,t) = sqrt(K/(pi t)) <= C t^{-1/2}
        for &t in &[0.1f64, 0.5, 1.0, 3.0] {
            let bound = (2.0f64 / std::f64::consts::PI).sqrt() * t.powf(-0.5);
            assert!((k.dx(0.0, t) - bound).abs() < 1e-14);
        }
    }

    #[test]
    fn verify_wave_is_exact_solution_not_strict() {
        let w = TravelingWave::new(1.0, 2.0).unwrap();
        let region = Region::new(RegionKind::Cube, pt(&[0.0, 0.0], 0.0), 0.5).unwrap();
        let rep =
            verify_stefan_barrier(&w, &region, 1.0, BarrierSide::Supersolution, 0.0, 12).unwrap();
        assert!(rep.pass, "exact solution passes at margin 0: {rep:?}");
        assert!(rep.interior_margin.abs() < 1e-12);
        assert!(rep.boundary_margin.abs() < 1e-12);
        let strict =
            verify_stefan_barrier(&w, &region, 1.0, BarrierSide::Supersolution, 1e-6, 12).unwrap();
        assert!(!strict.pass, "exact solution is not strict");
    }

    #[test]
    fn verify_moving_plane_strict_supersolution() {
        // phi = x_n + 2t on its positivity set with lambda = 1:
        // interior phi_t - lap phi = 2, front phi_t - |grad phi|^2 = 1
        let phi = MovingPlane { speed: 2.0 };
        let region = Region::new(RegionKind::Cube, pt(&[0.0, 0.0], 0.0), 0.5).unwrap();
        let rep =
            verify_stefan_barrier(&phi, &region, 1.0, BarrierSide::Supersolution, 0.5, 12).unwrap();
        assert!(rep.pass);
        assert!((rep.interior_margin - 2.0).abs() < 1e-12);
        assert!((rep.boundary_margin - 1.0).abs() < 1e-12);
    }

    #[test]
    fn verify_radial_supersolution_margins() {
        let lambda = 0.25;
        let b = RadialSupersolution::new(4.0, lambda, 2).unwrap();
        // keep r(t) >= 1/2: t <= 1/(2 C0 lambda) = 0.5
        let region = Region::new(RegionKind::Cube, pt(&[0.0, 0.0], 0.5), 0.5).unwrap();
        let rep =
            verify_stefan_barrier(&b, &region, lambda, BarrierSide::Supersolution, 0.0, 16).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.interior_margin > 0.0, "interior strictly positive");
        assert!(rep.boundary_margin.abs() < 1e-10, "boundary residual is exactly zero");
        // negative control: flipping the side must fail
        let flipped =
            verify_stefan_barrier(&b, &region, lambda, BarrierSide::Subsolution, 0.0, 16).unwrap();
        assert!(!flipped.pass);
    }

    #[test]
    fn sup_convolution_properties() {
        let g = GridSpec::new(
            0.1,
            0.5,
            vec![Interval::new(-1.0, 1.0), Interval::new(0.0, 0.5)],
            Interval::new(-0.5, 0.0),
        )
        .unwrap();
        let eps = 0.05f64;
        let f = ScalarField::from_fn(g.clone(), |p| -(p.x[0] * p.x[0]) / (2.0 * eps));
        let out = sup_convolution(&f, eps).unwrap();
        // vertex column of the concave quadratic flattens to 0
        let i0 = f.spec().index_of(0, 0.0).unwrap();
        assert!((out.get(&[i0, 2], 1).unwrap() - 0.0).abs() < 1e-12);
        // output dominates input
        for (a, b) in f.values().iter().zip(out.values()) {
            assert!(b >= a);
        }
        // monotone in eps
        let out2 = sup_convolution(&f, 2.0 * eps).unwrap();
        for (a, b) in out.values().iter().zip(out2.values()) {
            assert!(b + 1e-14 >= *a);
        }
        // tiny eps leaves the field unchanged
        let osc = 2.0 / (2.0 * eps); // data range
        let tiny = 0.1 * 0.1 / (2.0 * osc);
        let out3 = sup_convolution(&f, tiny * 0.5).unwrap();
        for (a, b) in f.values().iter().zip(out3.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        // discrete tangential second difference stays above -1/eps
        let h = 0.1;
        for i in 1..f.spec().spatial_counts()[0] - 1 {
            let vm = out.get(&[i - 1, 2], 1).unwrap();
            let v0 = out.get(&[i, 2], 1).unwrap();
            let vp = out.get(&[i + 1, 2], 1).unwrap();
            assert!((vp - 2.0 * v0 + vm) / (h * h) >= -1.0 / eps - 1e-9);
        }
    }

    #[test]
    fn sup_convolution_composes_on_quadratics() {
        // applying twice with eps equals once with 2 eps on a concave
        // quadratic (within grid-localization error)
        let g = GridSpec::new(
            0.05,
            1.0,
            vec![Interval::new(-1.0, 1.0), Interval::new(0.0, 0.1)],
            Interval::new(-1.0, 0.0),
        )
        .unwrap();
        let q = 3.0f64;
        let f = ScalarField::from_fn(g, |p| -q * p.x[0] * p.x[0]);
        let eps = 0.04;
        let twice = sup_convolution(&sup_convolution(&f, eps).unwrap(), eps).unwrap();
        let once = sup_convolution(&f, 2.0 * eps).unwrap();
        let tol = 0.05 * 0.05 / eps; // one-cell localization of the argmax
        for (a, b) in twice.values().iter().zip(once.values()) {
            assert!((a - b).abs() <= tol, "{a} vs {b}");
        }
    }

    trait ErfOracle {
        fn erf_oracle(self) -> f64;
    }
    impl ErfOracle for f64 {
        fn erf_oracle(self) -> f64 {
            libm::erf(self)
        }
    }
}
