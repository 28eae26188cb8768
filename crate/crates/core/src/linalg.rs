//! Small dense complex linear algebra and a radix-2 FFT.
//!
//! Matrices here are at most a few dozen rows (operator backends are built
//! from prescribed spectra), so plain LU with partial pivoting is all that
//! is needed. The FFT handles power-of-two lengths only, which the periodic
//! grid constructors enforce.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Row-major square complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    n: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(n: usize) -> Self {
        CMatrix { n, data: vec![Complex64::ZERO; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMatrix::zeros(n);
        for i in 0..n {
            m[(i, i)] = Complex64::ONE;
        }
        m
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> Complex64) -> Self {
        let mut m = CMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn diagonal(diag: &[Complex64]) -> Self {
        let mut m = CMatrix::zeros(diag.len());
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = *d;
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.n);
        let mut out = vec![Complex64::ZERO; self.n];
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.n)) {
            let mut acc = Complex64::ZERO;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *o = acc;
        }
        out
    }

    /// `Q^* x` (conjugate-transpose application).
    pub fn matvec_adjoint(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.n);
        let mut out = vec![Complex64::ZERO; self.n];
        for (i, xv) in x.iter().enumerate() {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a.conj() * xv;
            }
        }
        out
    }

    pub fn matmul(&self, other: &CMatrix) -> CMatrix {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = CMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == Complex64::ZERO {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn add(&self, other: &CMatrix) -> CMatrix {
        assert_eq!(self.n, other.n);
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        out
    }

    pub fn scale(&self, c: Complex64) -> CMatrix {
        let mut out = self.clone();
        for a in out.data.iter_mut() {
            *a *= c;
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// LU factorization with partial pivoting.
    pub fn lu(&self) -> Result<LuFactors> {
        let n = self.n;
        let mut lu = self.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut max_pivot = 0.0_f64;
        let mut min_pivot = f64::INFINITY;
        for col in 0..n {
            let mut pivot_row = col;
            let mut pivot_mag = lu[col * n + col].norm();
            for row in col + 1..n {
                let mag = lu[row * n + col].norm();
                if mag > pivot_mag {
                    pivot_mag = mag;
                    pivot_row = row;
                }
            }
            max_pivot = max_pivot.max(pivot_mag);
            min_pivot = min_pivot.min(pivot_mag);
            if pivot_mag == 0.0 {
                return Err(Error::SingularSolve { cond: f64::INFINITY });
            }
            if pivot_row != col {
                perm.swap(col, pivot_row);
                for j in 0..n {
                    lu.swap(col * n + j, pivot_row * n + j);
                }
            }
            let pivot = lu[col * n + col];
            for row in col + 1..n {
                let factor = lu[row * n + col] / pivot;
                lu[row * n + col] = factor;
                for j in col + 1..n {
                    let sub = factor * lu[col * n + j];
                    lu[row * n + j] -= sub;
                }
            }
        }
        let cond_estimate = if min_pivot > 0.0 { max_pivot / min_pivot } else { f64::INFINITY };
        if !cond_estimate.is_finite() || cond_estimate > 1e14 {
            return Err(Error::SingularSolve { cond: cond_estimate });
        }
        Ok(LuFactors { n, lu, perm, cond_estimate })
    }

    /// Inverse via LU solves against the identity columns.
    pub fn inverse(&self) -> Result<CMatrix> {
        let lu = self.lu()?;
        let n = self.n;
        let mut out = CMatrix::zeros(n);
        for j in 0..n {
            let mut e = vec![Complex64::ZERO; n];
            e[j] = Complex64::ONE;
            let col = lu.solve(&e);
            for i in 0..n {
                out[(i, j)] = col[i];
            }
        }
        Ok(out)
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.n + j]
    }
}

pub struct LuFactors {
    n: usize,
    lu: Vec<Complex64>,
    perm: Vec<usize>,
    cond_estimate: f64,
}

impl LuFactors {
    /// Pivot-ratio condition estimate (coarse, for diagnostics only).
    pub fn cond_estimate(&self) -> f64 {
        self.cond_estimate
    }

    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut y: Vec<Complex64> = self.perm.iter().map(|&p| b[p]).collect();
        // forward substitution, unit lower triangle
        for i in 1..n {
            let mut acc = y[i];
            for (l, v) in self.lu[i * n..i * n + i].iter().zip(&y[..i]) {
                acc -= l * v;
            }
            y[i] = acc;
        }
        // back substitution
        for i in (0..n).rev() {
            let mut acc = y[i];
            for (l, v) in self.lu[i * n + i + 1..(i + 1) * n].iter().zip(&y[i + 1..]) {
                acc -= l * v;
            }
            y[i] = acc / self.lu[i * n + i];
        }
        y
    }
}

/// Unitary Hessenberg reduction `M = Q H Q^*`; shifted solves against `H`
/// then cost O(n^2) per factorization instead of O(n^3).
pub struct Hessenberg {
    q: CMatrix,
    h: CMatrix,
}

pub fn hessenberg(m: &CMatrix) -> Hessenberg {
    let n = m.n();
    let mut h = m.clone();
    let mut q = CMatrix::identity(n);
    for k in 0..n.saturating_sub(2) {
        let len = n - k - 1;
        let mut v: Vec<Complex64> = (k + 1..n).map(|i| h[(i, k)]).collect();
        let norm_x = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm_x == 0.0 {
            continue;
        }
        let alpha = if v[0] == Complex64::ZERO {
            Complex64::new(norm_x, 0.0)
        } else {
            v[0] / v[0].norm() * norm_x
        };
        v[0] += alpha;
        let vnorm2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        let scale = 2.0 / vnorm2;
        // left: rows k+1.. of H
        for j in 0..n {
            let mut c = Complex64::ZERO;
            for i in 0..len {
                c += v[i].conj() * h[(k + 1 + i, j)];
            }
            c *= scale;
            for i in 0..len {
                let sub = c * v[i];
                h[(k + 1 + i, j)] -= sub;
            }
        }
        // right: columns k+1.. of H
        for i in 0..n {
            let mut c = Complex64::ZERO;
            for j in 0..len {
                c += h[(i, k + 1 + j)] * v[j];
            }
            c *= scale;
            for j in 0..len {
                let sub = c * v[j].conj();
                h[(i, k + 1 + j)] -= sub;
            }
        }
        // accumulate Q (right multiplication by the reflector)
        for i in 0..n {
            let mut c = Complex64::ZERO;
            for j in 0..len {
                c += q[(i, k + 1 + j)] * v[j];
            }
            c *= scale;
            for j in 0..len {
                let sub = c * v[j].conj();
                q[(i, k + 1 + j)] -= sub;
            }
        }
        for i in k + 2..n {
            h[(i, k)] = Complex64::ZERO;
        }
    }
    Hessenberg { q, h }
}

/// Factored `lambda - H` with adjacent-row pivoting; O(n^2) build and solve.
pub struct HessenbergShift {
    n: usize,
    upper: Vec<Complex64>,
    steps: Vec<(bool, Complex64)>,
    cond_estimate: f64,
}

impl Hessenberg {
    pub fn h(&self) -> &CMatrix {
        &self.h
    }

    pub fn shifted(&self, lambda: Complex64) -> Result<HessenbergShift> {
        let n = self.h.n();
        let mut b = self.h.scale(-Complex64::ONE);
        for i in 0..n {
            b[(i, i)] += lambda;
        }
        let mut steps = Vec::with_capacity(n.saturating_sub(1));
        let mut max_pivot = 0.0_f64;
        let mut min_pivot = f64::INFINITY;
        for k in 0..n.saturating_sub(1) {
            let swap = b[(k + 1, k)].norm() > b[(k, k)].norm();
            if swap {
                for j in k..n {
                    let tmp = b[(k, j)];
                    b[(k, j)] = b[(k + 1, j)];
                    b[(k + 1, j)] = tmp;
                }
            }
            let pivot = b[(k, k)];
            max_pivot = max_pivot.max(pivot.norm());
            min_pivot = min_pivot.min(pivot.norm());
            if pivot.norm() == 0.0 {
                return Err(Error::SingularSolve { cond: f64::INFINITY });
            }
            let mult = b[(k + 1, k)] / pivot;
            for j in k..n {
                let sub = mult * b[(k, j)];
                b[(k + 1, j)] -= sub;
            }
            steps.push((swap, mult));
        }
        let last = b[(n - 1, n - 1)].norm();
        max_pivot = max_pivot.max(last);
        min_pivot = min_pivot.min(last);
        if last == 0.0 {
            return Err(Error::SingularSolve { cond: f64::INFINITY });
        }
        let cond_estimate = if min_pivot > 0.0 { max_pivot / min_pivot } else { f64::INFINITY };
        if !cond_estimate.is_finite() || cond_estimate > 1e14 {
            return Err(Error::SingularSolve { cond: cond_estimate });
        }
        let mut upper = vec![Complex64::ZERO; n * n];
        for i in 0..n {
            for j in i..n {
                upper[i * n + j] = b[(i, j)];
            }
        }
        Ok(HessenbergShift { n, upper, steps, cond_estimate })
    }

    /// `y = Q (lambda - H)^{-1} Q^* x`, i.e. the resolvent against the
    /// original matrix.
    pub fn solve_resolvent(&self, shift: &HessenbergShift, x: &[Complex64]) -> Vec<Complex64> {
        let w = self.q.matvec_adjoint(x);
        let z = shift.solve(&w);
        self.q.matvec(&z)
    }
}

impl HessenbergShift {
    pub fn cond_estimate(&self) -> f64 {
        self.cond_estimate
    }

    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut y = b.to_vec();
        for (k, (swap, mult)) in self.steps.iter().enumerate() {
            if *swap {
                y.swap(k, k + 1);
            }
            let sub = mult * y[k];
            y[k + 1] -= sub;
        }
        for i in (0..n).rev() {
            let mut acc = y[i];
            for (u, v) in self.upper[i * n + i + 1..(i + 1) * n].iter().zip(&y[i + 1..]) {
                acc -= u * v;
            }
            y[i] = acc / self.upper[i * n + i];
        }
        y
    }
}

/// In-place radix-2 Cooley-Tukey FFT; `values.len()` must be a power of two.
fn fft_in_place(values: &mut [Complex64], inverse: bool) {
    let n = values.len();
    assert!(n.is_power_of_two(), "fft length must be a power of two");
    // bit reversal permutation
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            values.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let angle = sign * 2.0 * std::f64::consts::PI / len as f64;
        let w_len = Complex64::new(angle.cos(), angle.sin());
        for chunk in values.chunks_mut(len) {
            let mut w = Complex64::ONE;
            for k in 0..len / 2 {
                let u = chunk[k];
                let v = chunk[k + len / 2] * w;
                chunk[k] = u + v;
                chunk[k + len / 2] = u - v;
                w *= w_len;
            }
        }
        len <<= 1;
    }
    if inverse {
        let scale = 1.0 / n as f64;
        for v in values.iter_mut() {
            *v *= scale;
        }
    }
}

pub fn fft(values: &[Complex64]) -> Vec<Complex64> {
    let mut out = values.to_vec();
    fft_in_place(&mut out, false);
    out
}

pub fn ifft(values: &[Complex64]) -> Vec<Complex64> {
    let mut out = values.to_vec();
    fft_in_place(&mut out, true);
    out
}

/// Principal branch power `z^alpha` with the cut on `(-inf, 0]`.
pub fn principal_pow(z: Complex64, alpha: f64) -> Complex64 {
    if z == Complex64::ZERO {
        return if alpha == 0.0 { Complex64::ONE } else { Complex64::ZERO };
    }
    (alpha * z.ln()).exp()
}


#[cfg(test)]
mod hessenberg_tests {
    use super::*;

    fn sample_matrix(n: usize, seed: u64) -> CMatrix {
        CMatrix::from_fn(n, |i, j| {
            let t = (i * n + j) as f64 + seed as f64 * 0.37;
            let mut v = Complex64::new((t * 0.61).sin(), (t * 1.13).cos()) * 0.6;
            if i == j {
                v += Complex64::new(3.0 + i as f64 * 0.2, 0.4);
            }
            v
        })
    }

    #[test]
    fn reduction_is_unitary_similarity_to_hessenberg_form() {
        for n in [1usize, 2, 3, 8, 17] {
            let m = sample_matrix(n, 3);
            let hess = hessenberg(&m);
            // below-subdiagonal entries vanish
            for i in 0..n {
                for j in 0..i.saturating_sub(1) {
                    assert!(hess.h()[(i, j)].norm() < 1e-12, "n={n} ({i},{j})");
                }
            }
            // Q H Q^* reproduces M on random vectors
            let x: Vec<Complex64> =
                (0..n).map(|i| Complex64::new((i as f64).cos(), (i as f64 * 0.7).sin())).collect();
            let via = {
                let qhx = hess.q.matvec_adjoint(&x);
                let hqx = hess.h().matvec(&qhx);
                hess.q.matvec(&hqx)
            };
            let direct = m.matvec(&x);
            for (a, b) in via.iter().zip(&direct) {
                assert!((a - b).norm() < 1e-10, "n={n}");
            }
        }
    }

    #[test]
    fn shifted_solves_match_plain_lu() {
        for n in [1usize, 2, 5, 12, 24] {
            let m = sample_matrix(n, 9);
            let hess = hessenberg(&m);
            let lambda = Complex64::new(-1.7, 2.3);
            let shift = hess.shifted(lambda).unwrap();
            let x: Vec<Complex64> =
                (0..n).map(|i| Complex64::new((i as f64 * 0.9).sin(), 0.5 - i as f64 * 0.1)).collect();
            let fast = hess.solve_resolvent(&shift, &x);
            let mut shifted = m.scale(-Complex64::ONE);
            for i in 0..n {
                shifted[(i, i)] += lambda;
            }
            let slow = shifted.lu().unwrap().solve(&x);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).norm() < 1e-10, "n={n}: {a} vs {b}");
            }
        }
    }
}
