//! Small dense linear algebra: a generic 3×3 matrix, Gaussian elimination and
//! a damped Gauss-Newton (Levenberg-Marquardt) driver.

use std::ops::{Add, Mul, Sub};

use crate::geometry::FieldVector;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3<T> {
    pub rows: [[T; 3]; 3],
}

impl<T: Real> Mat3<T> {
    pub fn from_rows(rows: [[T; 3]; 3]) -> Self {
        Self { rows }
    }

    pub fn zeros() -> Self {
        Self::from_rows([[T::zero(); 3]; 3])
    }

    pub fn identity() -> Self {
        let mut m = Self::zeros();
        for i in 0..3 {
            m.rows[i][i] = T::one();
        }
        m
    }

    pub fn diagonal(d: [T; 3]) -> Self {
        let mut m = Self::zeros();
        for i in 0..3 {
            m.rows[i][i] = d[i];
        }
        m
    }

    pub fn outer(a: FieldVector<T>, b: FieldVector<T>) -> Self {
        let (a, b) = (a.to_array(), b.to_array());
        let mut m = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                m.rows[i][j] = a[i] * b[j];
            }
        }
        m
    }

    /// Right-handed rotation by `angle` radians about `axis` (Rodrigues).
    pub fn rotation(axis: FieldVector<T>, angle: T) -> Self {
        let k = axis.normalized().unwrap_or(FieldVector::new(T::zero(), T::zero(), T::one()));
        let (s, c) = angle.sin_cos();
        let cross = Self::from_rows([
            [T::zero(), -k.bz, k.by],
            [k.bz, T::zero(), -k.bx],
            [-k.by, k.bx, T::zero()],
        ]);
        Self::identity() * c + cross * s + Self::outer(k, k) * (T::one() - c)
    }

    pub fn transpose(&self) -> Self {
        let mut m = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                m.rows[i][j] = self.rows[j][i];
            }
        }
        m
    }

    pub fn mul_vec(&self, v: FieldVector<T>) -> FieldVector<T> {
        let v = v.to_array();
        let r = |i: usize| self.rows[i][0] * v[0] + self.rows[i][1] * v[1] + self.rows[i][2] * v[2];
        FieldVector::new(r(0), r(1), r(2))
    }

    pub fn trace(&self) -> T {
        self.rows[0][0] + self.rows[1][1] + self.rows[2][2]
    }

    pub fn diag(&self) -> [T; 3] {
        [self.rows[0][0], self.rows[1][1], self.rows[2][2]]
    }

    pub fn det(&self) -> T {
        let m = &self.rows;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Inverse via the adjugate; `None` when the matrix is numerically singular
    /// relative to its own scale.
    pub fn inverse(&self) -> Option<Self> {
        let m = &self.rows;
        let det = self.det();
        let scale = self
            .rows
            .iter()
            .flatten()
            .fold(T::zero(), |acc, v| acc.max(v.abs()));
        if !det.is_finite() || scale == T::zero() || det.abs() <= T::epsilon() * T::lit(64.0) * scale.powi(3) {
            return None;
        }
        let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
        let adj = [
            [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
            [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
            [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
        ];
        Some(Self::from_rows(adj) * (T::one() / det))
    }

    /// Eigenvalues of a symmetric matrix in ascending order (trigonometric
    /// closed form).
    pub fn symmetric_eigenvalues(&self) -> [T; 3] {
        let m = &self.rows;
        let p1 = m[0][1].powi(2) + m[0][2].powi(2) + m[1][2].powi(2);
        if p1 <= T::epsilon() * self.trace().abs().max(T::min_positive_value()) {
            let mut d = self.diag();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            return d;
        }
        let three = T::lit(3.0);
        let two = T::lit(2.0);
        let q = self.trace() / three;
        let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + two * p1;
        let p = (p2 / T::lit(6.0)).sqrt();
        let b = (*self - Self::identity() * q) * (T::one() / p);
        let r = (b.det() / two).max(-T::one()).min(T::one());
        let phi = r.acos() / three;
        let e_max = q + two * p * phi.cos();
        let e_min = q + two * p * (phi + two * T::PI() / three).cos();
        let e_mid = three * q - e_max - e_min;
        [e_min, e_mid, e_max]
    }
}

impl<T: Real> Add for Mat3<T> {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        for i in 0..3 {
            for j in 0..3 {
                self.rows[i][j] += rhs.rows[i][j];
            }
        }
        self
    }
}

impl<T: Real> Sub for Mat3<T> {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        for i in 0..3 {
            for j in 0..3 {
                self.rows[i][j] -= rhs.rows[i][j];
            }
        }
        self
    }
}

impl<T: Real> Mul<T> for Mat3<T> {
    type Output = Self;
    fn mul(mut self, s: T) -> Self {
        for row in &mut self.rows {
            for v in row {
                *v *= s;
            }
        }
        self
    }
}

impl<T: Real> Mul for Mat3<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut m = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                m.rows[i][j] = (0..3).fold(T::zero(), |acc, k| acc + self.rows[i][k] * rhs.rows[k][j]);
            }
        }
        m
    }
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting. Returns
/// `None` for a numerically singular system.
pub fn solve_dense<T: Real>(mut a: Vec<Vec<T>>, mut b: Vec<T>) -> Option<Vec<T>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(T::zero(), |acc, v| acc.max(v.abs()));
    if scale == T::zero() || !scale.is_finite() {
        return None;
    }
    let tiny = scale * T::epsilon() * T::lit(n as f64 * 4.0);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i][col]
                .abs()
                .partial_cmp(&a[j][col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if a[pivot][col].abs() <= tiny {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == T::zero() {
                continue;
            }
            for k in col..n {
                let v = a[col][k];
                a[row][k] -= f * v;
            }
            let v = b[col];
            b[row] -= f * v;
        }
    }
    let mut x = vec![T::zero(); n];
    for row in (0..n).rev() {
        let s = (row + 1..n).fold(b[row], |acc, k| acc - a[row][k] * x[k]);
        x[row] = s / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Inverse of a small dense matrix, column by column.
pub fn invert_dense<T: Real>(a: &[Vec<T>]) -> Option<Vec<Vec<T>>> {
    let n = a.len();
    let mut inv = vec![vec![T::zero(); n]; n];
    for c in 0..n {
        let mut e = vec![T::zero(); n];
        e[c] = T::one();
        let col = solve_dense(a.to_vec(), e)?;
        for r in 0..n {
            inv[r][c] = col[r];
        }
    }
    Some(inv)
}

#[derive(Clone, Copy, Debug)]
pub struct LmOptions<T> {
    pub lambda0: T,
    pub lambda_up: T,
    pub lambda_down: T,
    pub max_iterations: usize,
    /// Converged once an accepted step is shorter than
    /// `step_tol + rel_step_tol * |params|`.
    pub step_tol: T,
    pub rel_step_tol: T,
    /// Marquardt scaling (`JᵀJ + λ diag(JᵀJ)`) instead of `JᵀJ + λ I`.
    pub scaled_damping: bool,
}

impl<T: Real> Default for LmOptions<T> {
    fn default() -> Self {
        Self {
            lambda0: T::lit(1e-3),
            lambda_up: T::lit(10.0),
            lambda_down: T::lit(10.0),
            max_iterations: 200,
            step_tol: T::lit(1e-10),
            rel_step_tol: T::zero(),
            scaled_damping: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LmOutcome<T> {
    pub params: Vec<T>,
    pub residuals: Vec<T>,
    /// `JᵀJ` evaluated at the returned parameters.
    pub jtj: Vec<Vec<T>>,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Real> LmOutcome<T> {
    pub fn residual_norm(&self) -> T {
        self.residuals.iter().fold(T::zero(), |a, r| a + *r * *r).sqrt()
    }
}

/// Minimizes `½|r(p)|²`. The callback returns the residual vector and the
/// Jacobian as `m` rows of length `n`.
pub fn levenberg_marquardt<T, F>(p0: Vec<T>, mut model: F, opts: &LmOptions<T>) -> LmOutcome<T>
where
    T: Real,
    F: FnMut(&[T]) -> (Vec<T>, Vec<Vec<T>>),
{
    let n = p0.len();
    let mut p = p0;
    let (mut r, mut j) = model(&p);
    let mut cost = half_sq(&r);
    let mut lambda = opts.lambda0;
    let lambda_cap = T::lit(1e16);

    for it in 0..opts.max_iterations {
        let jtj = normal_matrix(&j, n);
        let jtr: Vec<T> = (0..n)
            .map(|c| j.iter().zip(&r).fold(T::zero(), |acc, (row, ri)| acc + row[c] * *ri))
            .collect();
        loop {
            let mut a = jtj.clone();
            for d in 0..n {
                let damp = if opts.scaled_damping {
                    jtj[d][d].max(T::epsilon())
                } else {
                    T::one()
                };
                a[d][d] += lambda * damp;
            }
            let step = solve_dense(a, jtr.iter().map(|v| -*v).collect());
            if let Some(step) = step {
                let trial: Vec<T> = p.iter().zip(&step).map(|(a, b)| *a + *b).collect();
                let (r_new, j_new) = model(&trial);
                let cost_new = half_sq(&r_new);
                if cost_new.is_finite() && cost_new <= cost {
                    let step_norm = norm(&step);
                    let tol = opts.step_tol + opts.rel_step_tol * norm(&trial);
                    p = trial;
                    r = r_new;
                    j = j_new;
                    cost = cost_new;
                    lambda = (lambda / opts.lambda_down).max(T::lit(1e-12));
                    if step_norm <= tol {
                        return finish(p, r, &j, n, it + 1, true);
                    }
                    break;
                }
            }
            lambda *= opts.lambda_up;
            if lambda > lambda_cap {
                // No descent left at machine precision: stationary point.
                return finish(p, r, &j, n, it + 1, true);
            }
        }
    }
    finish(p, r, &j, n, opts.max_iterations, false)
}

fn finish<T: Real>(p: Vec<T>, r: Vec<T>, j: &[Vec<T>], n: usize, iterations: usize, converged: bool) -> LmOutcome<T> {
    LmOutcome {
        jtj: normal_matrix(j, n),
        params: p,
        residuals: r,
        iterations,
        converged,
    }
}

fn normal_matrix<T: Real>(j: &[Vec<T>], n: usize) -> Vec<Vec<T>> {
    let mut m = vec![vec![T::zero(); n]; n];
    for row in j {
        for a in 0..n {
            for b in a..n {
                m[a][b] += row[a] * row[b];
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            m[a][b] = m[b][a];
        }
    }
    m
}

fn half_sq<T: Real>(r: &[T]) -> T {
    r.iter().fold(T::zero(), |a, v| a + *v * *v) * T::lit(0.5)
}

fn norm<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, x| a + *x * *x).sqrt()
}
