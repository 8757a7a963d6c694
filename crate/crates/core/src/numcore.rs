//! Dense linear algebra and special functions used throughout the crate.
//!
//! Matrices here are small (the basis dimension K rarely exceeds a few
//! dozen), so everything is plain row-major storage with straightforward
//! loops. The Hermitian eigensolver is a cyclic complex Jacobi method,
//! which is deterministic and accurate to machine precision on such sizes.

use std::ops::{Index, IndexMut};

use log::warn;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidInput("ragged matrix rows".into()));
        }
        Self::from_row_major(n, m, rows.concat())
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &RealMatrix) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::InvalidInput(format!(
                "shape mismatch {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &RealMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for RealMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for RealMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Square complex matrix that is Hermitian up to rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl HermitianMatrix {
    /// Builds the matrix from row-major entries and symmetrizes it as
    /// `(A + A^H) / 2`.
    pub fn new(dim: usize, entries: Vec<Complex64>) -> Result<Self> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(Error::InvalidInput(format!(
                "expected {} entries for a {dim}x{dim} Hermitian matrix, got {}",
                dim * dim,
                entries.len()
            )));
        }
        if entries
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::InvalidInput("non-finite matrix entry".into()));
        }
        let mut m = Self { dim, data: entries };
        m.symmetrize();
        Ok(m)
    }

    pub fn from_real(a: &RealMatrix) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::InvalidInput("matrix is not square".into()));
        }
        let entries = a
            .as_slice()
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        Self::new(a.rows(), entries)
    }

    fn symmetrize(&mut self) {
        let n = self.dim;
        for i in 0..n {
            let d = self.data[i * n + i].re;
            self.data[i * n + i] = Complex64::new(d, 0.0);
            for j in (i + 1)..n {
                let avg = (self.data[i * n + j] + self.data[j * n + i].conj()) * 0.5;
                self.data[i * n + j] = avg;
                self.data[j * n + i] = avg.conj();
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i].re).sum()
    }

    pub fn conj(&self) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        let n = self.dim;
        (0..n)
            .map(|i| (0..n).map(|j| self.data[i * n + j] * x[j]).sum())
            .collect()
    }
}

/// Eigenvalues in descending order with matching unit-norm eigenvectors.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub eigenvalues: Vec<f64>,
    /// `eigenvectors[m]` belongs to `eigenvalues[m]`.
    pub eigenvectors: Vec<Vec<Complex64>>,
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Full eigendecomposition of a Hermitian matrix by cyclic complex Jacobi
/// rotations.
pub fn hermitian_eigen(a: &HermitianMatrix) -> Result<EigenSystem> {
    let n = a.dim;
    let mut m = a.data.clone();
    let mut v = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        v[i * n + i] = Complex64::new(1.0, 0.0);
    }
    let scale = a.frobenius_norm();
    if scale == 0.0 {
        return Ok(sorted_system(n, &m, &v));
    }
    let tol = f64::EPSILON * scale;

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut m, &mut v, n, p, q, tol / n as f64);
            }
        }
    }
    if !converged {
        return Err(Error::Numerical(
            "Jacobi eigensolver did not converge".into(),
        ));
    }
    Ok(sorted_system(n, &m, &v))
}

/// One Jacobi rotation annihilating entry (p, q).
fn rotate(m: &mut [Complex64], v: &mut [Complex64], n: usize, p: usize, q: usize, skip: f64) {
    let apq = m[p * n + q];
    let g = apq.norm();
    if g <= skip * 1e-3 {
        return;
    }
    let phase = apq / g;
    let app = m[p * n + p].re;
    let aqq = m[q * n + q].re;
    let tau = (aqq - app) / (2.0 * g);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    // U = I except U_pp = c, U_pq = s, U_qp = -s e^{-i phi}, U_qq = c e^{-i phi}
    let e = phase.conj();
    let upq = Complex64::new(s, 0.0);
    let uqp = -e * s;
    let uqq = e * c;

    // A <- A U
    for k in 0..n {
        let akp = m[k * n + p];
        let akq = m[k * n + q];
        m[k * n + p] = akp * c + akq * uqp;
        m[k * n + q] = akp * upq + akq * uqq;
    }
    // A <- U^H A
    for k in 0..n {
        let apk = m[p * n + k];
        let aqk = m[q * n + k];
        m[p * n + k] = apk * c + aqk * uqp.conj();
        m[q * n + k] = apk * upq + aqk * uqq.conj();
    }
    m[p * n + q] = Complex64::new(0.0, 0.0);
    m[q * n + p] = Complex64::new(0.0, 0.0);
    m[p * n + p].im = 0.0;
    m[q * n + q].im = 0.0;
    // V <- V U
    for k in 0..n {
        let vkp = v[k * n + p];
        let vkq = v[k * n + q];
        v[k * n + p] = vkp * c + vkq * uqp;
        v[k * n + q] = vkp * upq + vkq * uqq;
    }
}

fn sorted_system(n: usize, m: &[Complex64], v: &[Complex64]) -> EigenSystem {
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps first occurrence first on ties
    order.sort_by(|&i, &j| m[j * n + j].re.total_cmp(&m[i * n + i].re));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| m[i * n + i].re).collect();
    let scale = eigenvalues.iter().map(|l| l.abs()).fold(0.0, f64::max);
    if eigenvalues
        .windows(2)
        .any(|w| (w[0] - w[1]).abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE))
        && n > 1
        && scale > 0.0
    {
        warn!("eigenvalue tie detected; eigenvectors of the tied block are not unique");
    }
    let eigenvectors = order
        .iter()
        .map(|&j| (0..n).map(|i| v[i * n + j]).collect())
        .collect();
    EigenSystem {
        eigenvalues,
        eigenvectors,
    }
}

/// Largest singular value of a real matrix.
pub fn operator_norm(a: &RealMatrix) -> Result<f64> {
    if !a.is_finite() {
        return Err(Error::InvalidInput("non-finite matrix entry".into()));
    }
    if a.rows() == 0 || a.cols() == 0 {
        return Ok(0.0);
    }
    let gram = a.transpose().matmul(a)?;
    let eig = hermitian_eigen(&HermitianMatrix::from_real(&gram)?)?;
    Ok(eig.eigenvalues[0].max(0.0).sqrt())
}

/// Survival function of the chi-squared distribution for even degrees of
/// freedom: `exp(-x/2) * sum_{k < df/2} (x/2)^k / k!`.
pub fn chisq_sf(x: f64, df: usize) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "chi-squared argument must be nonnegative, got {x}"
        )));
    }
    if df == 0 || !df.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "closed-form chi-squared survival needs a positive even df, got {df}"
        )));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    let half = x / 2.0;
    let ln_half = half.ln();
    let mut ln_fact = 0.0;
    let mut total = 0.0;
    for k in 0..df / 2 {
        if k > 0 {
            ln_fact += (k as f64).ln();
        }
        total += (k as f64 * ln_half - half - ln_fact).exp();
    }
    Ok(total.min(1.0))
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &RealMatrix) -> Result<RealMatrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::InvalidInput("matrix is not square".into()));
    }
    let mut l = RealMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return Err(Error::Numerical("matrix is not positive definite".into()));
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solves `A x = b` for symmetric positive definite `A`.
pub fn solve_spd(a: &RealMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let l = cholesky(a)?;
    let n = l.rows();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[(i, k)] * y[k]).sum();
        y[i] = (b[i] - s) / l[(i, i)];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = ((i + 1)..n).map(|k| l[(k, i)] * x[k]).sum();
        x[i] = (y[i] - s) / l[(i, i)];
    }
    Ok(x)
}
