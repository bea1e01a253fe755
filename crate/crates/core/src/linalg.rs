//! Small dense/banded linear algebra used by the solvers: band LU with
//! partial pivoting, Jacobi eigenvalues for symmetric matrices, and monotone
//! cubic (Fritsch–Carlson) interpolation for the hodograph inversion.

use crate::Real;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is singular to working precision at pivot {0}")]
    Singular(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("interpolation abscissae must be strictly increasing")]
    NotIncreasing,
    #[error("value {0} outside the tabulated range")]
    OutOfRange(f64),
}

/// Dense symmetric matrix stored row-major with an n×n backing buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> SymMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![T::zero(); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, T::one());
        }
        m
    }

    /// Builds from a row-major buffer, symmetrizing (A + Aᵀ)/2.
    pub fn from_rows(n: usize, rows: &[T]) -> Self {
        assert_eq!(rows.len(), n * n, "row buffer must be n*n");
        let mut m = Self::zeros(n);
        let half = T::of(0.5);
        for i in 0..n {
            for j in 0..n {
                m.data[i * n + j] = (rows[i * n + j] + rows[j * n + i]) * half;
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    pub fn scale(&self, c: T) -> Self {
        Self { n: self.n, data: self.data.iter().map(|&v| v * c).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        Self {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect(),
        }
    }

    /// Maximum absolute entry; used as a cheap matrix magnitude.
    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    /// tr(A·B) for symmetric A, B.
    pub fn trace_product(&self, other: &Self) -> T {
        assert_eq!(self.n, other.n);
        let mut s = T::zero();
        for i in 0..self.n {
            for j in 0..self.n {
                s = s + self.get(i, j) * other.get(j, i);
            }
        }
        s
    }

    /// Eigenvalues by cyclic Jacobi rotations. Converges quadratically for
    /// symmetric input; tolerance is scaled to the matrix magnitude.
    pub fn eigenvalues(&self) -> Vec<T> {
        let n = self.n;
        if n == 1 {
            return vec![self.get(0, 0)];
        }
        let mut a = self.data.clone();
        let idx = |i: usize, j: usize| i * n + j;
        let magnitude = self.max_abs().max(T::of(1e-300));
        let tol = magnitude * T::of(1e-15);
        for _sweep in 0..60 {
            let mut off = T::zero();
            for i in 0..n {
                for j in (i + 1)..n {
                    off = off.max(a[idx(i, j)].abs());
                }
            }
            if off <= tol {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[idx(p, q)];
                    if apq.abs() <= tol * T::of(1e-2) {
                        continue;
                    }
                    let app = a[idx(p, p)];
                    let aqq = a[idx(q, q)];
                    let theta = (aqq - app) / (T::of(2.0) * apq);
                    // Stable tangent of the rotation angle.
                    let t = {
                        let s = if theta >= T::zero() { T::one() } else { -T::one() };
                        s / (theta.abs() + (T::one() + theta * theta).sqrt())
                    };
                    let c = T::one() / (T::one() + t * t).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[idx(k, p)];
                        let akq = a[idx(k, q)];
                        a[idx(k, p)] = c * akp - s * akq;
                        a[idx(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[idx(p, k)];
                        let aqk = a[idx(q, k)];
                        a[idx(p, k)] = c * apk - s * aqk;
                        a[idx(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut eig: Vec<T> = (0..n).map(|i| a[idx(i, i)]).collect();
        eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
        eig
    }
}

/// Band matrix in LAPACK-style storage with `kl` sub- and `ku`
/// super-diagonals plus `kl` extra rows for pivoting fill-in.
///
/// Entry (i, j) with |i-j| within the band lives at `ab[kl + ku + i - j][j]`.
#[derive(Debug, Clone)]
pub struct BandMatrix<T> {
    n: usize,
    kl: usize,
    ku: usize,
    ab: Vec<T>, // (2*kl + ku + 1) x n, row-major
}

impl<T: Real> BandMatrix<T> {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self { n, kl, ku, ab: vec![T::zero(); (2 * kl + ku + 1) * n] }
    }

    // Entry (i, j) lives at row kl+ku+i-j of the storage; rows 0..kl hold
    // the fill-in superdiagonals created by pivoting.
    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(
            i + self.ku + self.kl >= j && j + self.kl >= i,
            "entry outside widened band"
        );
        (self.kl + self.ku + i - j) * self.n + j
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: T) {
        let s = self.slot(i, j);
        self.ab[s] = self.ab[s] + v;
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let s = self.slot(i, j);
        self.ab[s] = v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        if i + self.ku >= j && j + self.kl >= i {
            self.ab[(self.kl + self.ku + i - j) * self.n + j]
        } else {
            T::zero()
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// y = A·x for residual checks.
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n];
        for i in 0..self.n {
            let jlo = i.saturating_sub(self.kl);
            let jhi = (i + self.ku).min(self.n - 1);
            let mut s = T::zero();
            for j in jlo..=jhi {
                s = s + self.get(i, j) * x[j];
            }
            y[i] = s;
        }
        y
    }

    /// LU factorization with partial pivoting; row swaps stay inside the
    /// widened band (the reason for the extra `kl` storage rows).
    pub fn factor(mut self) -> Result<BandLu<T>, LinalgError> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let kv = kl + ku; // super-band width after fill-in
        let mut piv = vec![0usize; n];
        for k in 0..n {
            let imax = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.ab[self.slot(k, k)].abs();
            for i in (k + 1)..=imax {
                let v = self.ab[self.slot(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == T::zero() {
                return Err(LinalgError::Singular(k));
            }
            piv[k] = p;
            let jhi = (k + kv).min(n - 1);
            if p != k {
                for j in k..=jhi {
                    let a = self.slot(k, j);
                    let b = self.slot(p, j);
                    self.ab.swap(a, b);
                }
            }
            let pivot = self.ab[self.slot(k, k)];
            for i in (k + 1)..=imax {
                let s = self.slot(i, k);
                let m = self.ab[s] / pivot;
                self.ab[s] = m;
                if m != T::zero() {
                    for j in (k + 1)..=jhi {
                        let t = self.ab[self.slot(k, j)];
                        if t != T::zero() {
                            let d = self.slot(i, j);
                            self.ab[d] = self.ab[d] - m * t;
                        }
                    }
                }
            }
        }
        Ok(BandLu { n, kl, ku, ab: self.ab, piv })
    }
}

/// Factored band matrix ready for repeated solves.
#[derive(Debug, Clone)]
pub struct BandLu<T> {
    n: usize,
    kl: usize,
    ku: usize,
    ab: Vec<T>,
    piv: Vec<usize>,
}

impl<T: Real> BandLu<T> {
    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        (self.kl + self.ku + i - j) * self.n + j
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        assert_eq!(b.len(), self.n);
        let mut x = b.to_vec();
        let kv = self.kl + self.ku;
        // forward: apply pivots and L
        for k in 0..self.n {
            let p = self.piv[k];
            if p != k {
                x.swap(k, p);
            }
            let imax = (k + self.kl).min(self.n - 1);
            for i in (k + 1)..=imax {
                let m = self.ab[self.slot(i, k)];
                if m != T::zero() {
                    x[i] = x[i] - m * x[k];
                }
            }
        }
        // back substitution with U (bandwidth kv)
        for k in (0..self.n).rev() {
            let jhi = (k + kv).min(self.n - 1);
            let mut s = x[k];
            for j in (k + 1)..=jhi {
                s = s - self.ab[self.slot(k, j)] * x[j];
            }
            x[k] = s / self.ab[self.slot(k, k)];
        }
        x
    }
}

/// Monotone cubic Hermite interpolant (Fritsch–Carlson slopes). Preserves
/// monotonicity of the data, which the hodograph inversion relies on.
#[derive(Debug, Clone)]
pub struct MonotoneCubic<T> {
    xs: Vec<T>,
    ys: Vec<T>,
    slopes: Vec<T>,
}

impl<T: Real> MonotoneCubic<T> {
    pub fn new(xs: &[T], ys: &[T]) -> Result<Self, LinalgError> {
        if xs.len() != ys.len() {
            return Err(LinalgError::Dimension(format!(
                "xs ({}) vs ys ({})",
                xs.len(),
                ys.len()
            )));
        }
        if xs.len() < 2 {
            return Err(LinalgError::Dimension("need at least two nodes".into()));
        }
        for w in xs.windows(2) {
            if w[1] <= w[0] {
                return Err(LinalgError::NotIncreasing);
            }
        }
        let n = xs.len();
        let mut d = vec![T::zero(); n - 1];
        for i in 0..n - 1 {
            d[i] = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]);
        }
        let mut m = vec![T::zero(); n];
        m[0] = edge_slope(xs[1] - xs[0], xs[2].min(*xs.last().unwrap()) - xs[1], d[0], *d.get(1).unwrap_or(&d[0]));
        m[n - 1] = edge_slope(
            xs[n - 1] - xs[n - 2],
            xs[n - 2] - xs[if n >= 3 { n - 3 } else { 0 }],
            d[n - 2],
            if n >= 3 { d[n - 3] } else { d[n - 2] },
        );
        for i in 1..n - 1 {
            if d[i - 1] * d[i] <= T::zero() {
                m[i] = T::zero();
            } else {
                // harmonic-mean style average keeps the interpolant monotone
                let w1 = T::of(2.0) * (xs[i + 1] - xs[i]) + (xs[i] - xs[i - 1]);
                let w2 = (xs[i + 1] - xs[i]) + T::of(2.0) * (xs[i] - xs[i - 1]);
                m[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
            }
        }
        // Fritsch–Carlson limiter
        for i in 0..n - 1 {
            if d[i] == T::zero() {
                m[i] = T::zero();
                m[i + 1] = T::zero();
            } else {
                let a = m[i] / d[i];
                let b = m[i + 1] / d[i];
                let r = (a * a + b * b).sqrt();
                if r > T::of(3.0) {
                    let s = T::of(3.0) / r;
                    m[i] = s * a * d[i];
                    m[i + 1] = s * b * d[i];
                }
            }
        }
        Ok(Self { xs: xs.to_vec(), ys: ys.to_vec(), slopes: m })
    }

    pub fn domain(&self) -> (T, T) {
        (self.xs[0], *self.xs.last().unwrap())
    }

    fn segment(&self, x: T) -> usize {
        match self.xs.binary_search_by(|a| a.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(self.xs.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.xs.len() - 2),
        }
    }

    pub fn eval(&self, x: T) -> Result<T, LinalgError> {
        let (lo, hi) = self.domain();
        let tol = (hi - lo) * T::of(1e-12);
        if x < lo - tol || x > hi + tol {
            return Err(LinalgError::OutOfRange(x.f64()));
        }
        let x = x.max(lo).min(hi);
        let i = self.segment(x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = T::of(2.0) * t3 - T::of(3.0) * t2 + T::one();
        let h10 = t3 - T::of(2.0) * t2 + t;
        let h01 = -T::of(2.0) * t3 + T::of(3.0) * t2;
        let h11 = t3 - t2;
        Ok(h00 * self.ys[i]
            + h10 * h * self.slopes[i]
            + h01 * self.ys[i + 1]
            + h11 * h * self.slopes[i + 1])
    }

    /// Solves `self(x) = y` for strictly monotone data by bisection on the
    /// bracketing segment; the limiter guarantees no interior extrema.
    pub fn invert(&self, y: T) -> Result<T, LinalgError> {
        let increasing = *self.ys.last().unwrap() > self.ys[0];
        let (ylo, yhi) = if increasing {
            (self.ys[0], *self.ys.last().unwrap())
        } else {
            (*self.ys.last().unwrap(), self.ys[0])
        };
        let tol = (yhi - ylo).abs() * T::of(1e-12);
        if y < ylo - tol || y > yhi + tol {
            return Err(LinalgError::OutOfRange(y.f64()));
        }
        let y = y.max(ylo).min(yhi);
        let (mut a, mut b) = self.domain();
        for _ in 0..200 {
            let mid = (a + b) * T::of(0.5);
            let v = self.eval(mid)?;
            let below = if increasing { v < y } else { v > y };
            if below {
                a = mid;
            } else {
                b = mid;
            }
            if b - a <= (b.abs() + T::one()) * T::of(1e-15) {
                break;
            }
        }
        Ok((a + b) * T::of(0.5))
    }
}

/// Three-point one-sided endpoint slope with the shape-preserving guard.
fn edge_slope<T: Real>(h0: T, h1: T, d0: T, d1: T) -> T {
    let m = ((T::of(2.0) * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if m * d0 <= T::zero() {
        T::zero()
    } else if d0 * d1 <= T::zero() && m.abs() > T::of(3.0) * d0.abs() {
        T::of(3.0) * d0
    } else {
        m
    }
}

/// Compactly supported smoothing kernel average of a sampled path. The
/// window is clamped to the sample range so endpoints stay defined.
pub fn mollify_path<T: Real>(ts: &[T], ys: &[T], window: T) -> Vec<T> {
    assert_eq!(ts.len(), ys.len());
    let n = ts.len();
    if n == 0 {
        return Vec::new();
    }
    let half = (window * T::of(0.5)).max(T::zero());
    if half == T::zero() {
        return ys.to_vec();
    }
    let mut out = vec![T::zero(); n];
    for i in 0..n {
        let c = ts[i];
        let mut wsum = T::zero();
        let mut vsum = T::zero();
        for j in 0..n {
            let u = (ts[j] - c) / half;
            if u.abs() < T::one() {
                // quadratic bump 1 - u^2
                let w = T::one() - u * u;
                wsum = wsum + w;
                vsum = vsum + w * ys[j];
            }
        }
        out[i] = if wsum > T::zero() { vsum / wsum } else { ys[i] };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m: Vec<Vec<f64>> = a.to_vec();
        let mut x = b.to_vec();
        for k in 0..n {
            let mut p = k;
            for i in k + 1..n {
                if m[i][k].abs() > m[p][k].abs() {
                    p = i;
                }
            }
            m.swap(k, p);
            x.swap(k, p);
            for i in k + 1..n {
                let f = m[i][k] / m[k][k];
                for j in k..n {
                    m[i][j] -= f * m[k][j];
                }
                x[i] -= f * x[k];
            }
        }
        for k in (0..n).rev() {
            for j in k + 1..n {
                let t = m[k][j] * x[j];
                x[k] -= t;
            }
            x[k] /= m[k][k];
        }
        x
    }

    #[test]
    fn band_lu_matches_dense_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n = rng.gen_range(4..30);
            let kl = rng.gen_range(1..4.min(n));
            let ku = rng.gen_range(1..4.min(n));
            let mut band = BandMatrix::<f64>::zeros(n, kl, ku);
            let mut dense = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    let v = if i == j { v + 5.0 } else { v };
                    band.set(i, j, v);
                    dense[i][j] = v;
                }
            }
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lu = band.factor().unwrap();
            let x = lu.solve(&b);
            let y = dense_solve(&dense, &b);
            for i in 0..n {
                assert!((x[i] - y[i]).abs() < 1e-10, "mismatch at {i}: {} vs {}", x[i], y[i]);
            }
        }
    }

    #[test]
    fn band_lu_needs_pivoting_case() {
        // zero on the diagonal forces a row swap
        let mut m = BandMatrix::<f64>::zeros(3, 1, 1);
        m.set(0, 0, 0.0);
        m.set(0, 1, 2.0);
        m.set(1, 0, 1.0);
        m.set(1, 1, 1.0);
        m.set(1, 2, 1.0);
        m.set(2, 1, 3.0);
        m.set(2, 2, 1.0);
        let lu = m.clone().factor().unwrap();
        let b = vec![2.0, 3.0, 4.0];
        let x = lu.solve(&b);
        let r = m.matvec(&x);
        for i in 0..3 {
            assert!((r[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobi_eigenvalues_2x2() {
        let mut m = SymMatrix::<f64>::zeros(2);
        m.set(0, 0, 2.0);
        m.set(1, 1, 1.0);
        m.set(0, 1, 0.5);
        let e = m.eigenvalues();
        // characteristic roots of [[2, .5], [.5, 1]]
        let disc = (0.5f64.powi(2) + 0.25).sqrt();
        assert!((e[0] - (1.5 - disc)).abs() < 1e-12);
        assert!((e[1] - (1.5 + disc)).abs() < 1e-12);
    }

    #[test]
    fn monotone_cubic_roundtrip() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| (2.0 * x).exp() - 1.0).collect();
        let c = MonotoneCubic::new(&xs, &ys).unwrap();
        for k in 0..200 {
            let y = (ys.last().unwrap() - ys[0]) * k as f64 / 199.0 + ys[0];
            let x = c.invert(y).unwrap();
            let y2 = c.eval(x).unwrap();
            assert!((y2 - y).abs() < 1e-10);
        }
        // interpolation error of smooth data is O(h^3)-small
        for k in 0..100 {
            let x = k as f64 / 99.0;
            let exact = (2.0 * x).exp() - 1.0;
            assert!((c.eval(x).unwrap() - exact).abs() < 1e-4);
        }
    }

    #[test]
    fn mollify_preserves_constants() {
        let ts: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let ys = vec![3.25; 20];
        let out = mollify_path(&ts, &ys, 4.0);
        for v in out {
            assert!((v - 3.25).abs() < 1e-14);
        }
    }
}
