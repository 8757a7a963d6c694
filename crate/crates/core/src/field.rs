//! Functional random fields on rectangular grids and their sample lag
//! autocovariance operators.
//!
//! Curves are never reconstructed inside the estimators: every inner
//! product is taken in coefficient space. For bases that are not
//! orthonormal the coefficients are first mapped through the Cholesky
//! factor of the Gram matrix, after which the Euclidean inner product
//! equals the L2 one.

use std::borrow::Cow;

use rayon::prelude::*;

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::numcore::RealMatrix;

/// Spatial lag or frequency-grid offset, one entry per grid dimension.
pub type Lag = Vec<i64>;

pub const MAX_GRID_DIM: usize = 3;

/// Shape of a rectangular grid `1 <= s_i <= n_i`, stored row-major with the
/// last dimension varying fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridShape {
    dims: Vec<usize>,
    strides: Vec<usize>,
}

impl GridShape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_GRID_DIM {
            return Err(Error::InvalidConfig(format!(
                "grid dimension must be between 1 and {MAX_GRID_DIM}, got {}",
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "grid sizes must be positive: {dims:?}"
            )));
        }
        let mut strides = vec![1; dims.len()];
        for i in (0..dims.len() - 1).rev() {
            strides[i] = strides[i + 1] * dims[i + 1];
        }
        Ok(Self {
            dims: dims.to_vec(),
            strides,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn linear(&self, index: &[usize]) -> usize {
        index.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn multi(&self, mut linear: usize) -> Vec<usize> {
        self.strides
            .iter()
            .map(|&s| {
                let i = linear / s;
                linear %= s;
                i
            })
            .collect()
    }

    /// Linear offset of a lag, valid whenever both endpoints are inside.
    pub fn offset(&self, h: &[i64]) -> i64 {
        h.iter()
            .zip(&self.strides)
            .map(|(&hi, &s)| hi * s as i64)
            .sum()
    }

    /// Number of locations `s` with `s` and `s + h` both in the grid.
    pub fn overlap_len(&self, h: &[i64]) -> usize {
        self.dims
            .iter()
            .zip(h)
            .map(|(&n, &hi)| n.saturating_sub(hi.unsigned_abs() as usize))
            .product()
    }

    /// Calls `f(s, s + h)` with linear indices for every `s` in `M_{h,n}`.
    pub fn for_each_overlap(&self, h: &[i64], mut f: impl FnMut(usize, usize)) {
        debug_assert_eq!(h.len(), self.ndim());
        if self.overlap_len(h) == 0 {
            return;
        }
        let lo: Vec<usize> = h.iter().map(|&hi| (-hi).max(0) as usize).collect();
        let hi: Vec<usize> = self
            .dims
            .iter()
            .zip(h)
            .map(|(&n, &hv)| n - hv.max(0) as usize)
            .collect();
        let off = self.offset(h);
        for_each_in_box(&lo, &hi, &self.strides, |s| {
            f(s, (s as i64 + off) as usize);
        });
    }
}

/// Visits linear indices of the half-open box `lo <= s < hi`.
pub(crate) fn for_each_in_box(
    lo: &[usize],
    hi: &[usize],
    strides: &[usize],
    mut f: impl FnMut(usize),
) {
    match lo.len() {
        1 => (lo[0]..hi[0]).for_each(|i| f(i * strides[0])),
        2 => {
            for i in lo[0]..hi[0] {
                let base = i * strides[0];
                for j in lo[1]..hi[1] {
                    f(base + j * strides[1]);
                }
            }
        }
        3 => {
            for i in lo[0]..hi[0] {
                for j in lo[1]..hi[1] {
                    let base = i * strides[0] + j * strides[1];
                    for k in lo[2]..hi[2] {
                        f(base + k * strides[2]);
                    }
                }
            }
        }
        _ => unreachable!("grid dimension is capped at {MAX_GRID_DIM}"),
    }
}

/// All lags with `|h_i| <= radius_i`, in lexicographic order.
pub fn lag_box(radius: &[usize]) -> Vec<Lag> {
    let mut out: Vec<Lag> = vec![Vec::new()];
    for &r in radius {
        let r = r as i64;
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (-r..=r).map(move |v| {
                    let mut next = prefix.clone();
                    next.push(v);
                    next
                })
            })
            .collect();
    }
    out
}

/// A real-valued field on a rectangular grid, e.g. one level of scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    shape: GridShape,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(dims: &[usize], values: Vec<f64>) -> Result<Self> {
        let shape = GridShape::new(dims)?;
        if values.len() != shape.len() {
            return Err(Error::InvalidInput(format!(
                "grid {dims:?} has {} locations but {} values were given",
                shape.len(),
                values.len()
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Curves observed on a rectangular grid, one coefficient row per location.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalGridSample {
    shape: GridShape,
    coeffs: RealMatrix,
    basis: BasisSpec,
}

impl FunctionalGridSample {
    pub fn new(dims: &[usize], coeffs: RealMatrix, basis: BasisSpec) -> Result<Self> {
        let shape = GridShape::new(dims)?;
        if coeffs.rows() != shape.len() {
            return Err(Error::InvalidInput(format!(
                "grid {dims:?} has {} locations but {} coefficient rows were given",
                shape.len(),
                coeffs.rows()
            )));
        }
        if coeffs.cols() != basis.dimension() {
            return Err(Error::InvalidInput(format!(
                "basis has dimension {} but coefficient rows have length {}",
                basis.dimension(),
                coeffs.cols()
            )));
        }
        if !coeffs.is_finite() {
            return Err(Error::InvalidInput("non-finite coefficient".into()));
        }
        Ok(Self {
            shape,
            coeffs,
            basis,
        })
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn len(&self) -> usize {
        self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn basis_dim(&self) -> usize {
        self.basis.dimension()
    }

    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }

    pub fn coeffs(&self) -> &RealMatrix {
        &self.coeffs
    }

    pub fn curve(&self, s: usize) -> &[f64] {
        self.coeffs.row(s)
    }

    /// Grid-wide mean coefficient vector.
    pub fn mean(&self) -> Vec<f64> {
        let k = self.basis_dim();
        let mut mean = vec![0.0; k];
        for s in 0..self.len() {
            for (m, v) in mean.iter_mut().zip(self.curve(s)) {
                *m += v;
            }
        }
        let n = self.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Coefficients in coordinates where the L2 inner product is Euclidean.
    pub fn orthonormal_coeffs(&self) -> Cow<'_, RealMatrix> {
        if self.basis.is_orthonormal() {
            return Cow::Borrowed(&self.coeffs);
        }
        let k = self.basis_dim();
        let mut out = RealMatrix::zeros(self.len(), k);
        for s in 0..self.len() {
            let w = self.basis.to_orthonormal(self.curve(s));
            out.as_mut_slice()[s * k..(s + 1) * k].copy_from_slice(&w);
        }
        Cow::Owned(out)
    }
}

/// Subtracts the grid-wide mean curve from every location.
pub fn center(sample: &FunctionalGridSample) -> FunctionalGridSample {
    let mean = sample.mean();
    let mut coeffs = sample.coeffs.clone();
    let k = sample.basis_dim();
    for row in coeffs.as_mut_slice().chunks_mut(k) {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    FunctionalGridSample {
        shape: sample.shape.clone(),
        coeffs,
        basis: sample.basis.clone(),
    }
}

/// Linear indices of the locations `s` with `s` and `s + h` in the grid.
pub fn lag_sets(dims: &[usize], h: &[i64]) -> Result<Vec<usize>> {
    let shape = GridShape::new(dims)?;
    if h.len() != shape.ndim() {
        return Err(Error::InvalidInput(format!(
            "lag {h:?} does not match grid dimension {}",
            shape.ndim()
        )));
    }
    let mut out = Vec::with_capacity(shape.overlap_len(h));
    shape.for_each_overlap(h, |s, _| out.push(s));
    Ok(out)
}

/// Sample lag-`h` autocovariance operator in (orthonormalized) coefficient
/// form.
#[derive(Debug, Clone, PartialEq)]
pub struct LagCovariance {
    pub lag: Lag,
    pub matrix: RealMatrix,
}

/// `C_h = (1/N) sum_{s in M_h} x_{s+h} x_s^T`, divided by the full grid size N.
pub fn autocovariance(sample: &FunctionalGridSample, h: &[i64]) -> Result<LagCovariance> {
    if h.len() != sample.shape.ndim() {
        return Err(Error::InvalidInput(format!(
            "lag {h:?} does not match grid dimension {}",
            sample.shape.ndim()
        )));
    }
    let x = sample.orthonormal_coeffs();
    Ok(autocovariance_raw(&sample.shape, &x, h))
}

pub(crate) fn autocovariance_raw(shape: &GridShape, x: &RealMatrix, h: &[i64]) -> LagCovariance {
    let k = x.cols();
    let data = x.as_slice();
    let mut acc = vec![0.0; k * k];
    shape.for_each_overlap(h, |s, t| {
        let xs = &data[s * k..(s + 1) * k];
        let xt = &data[t * k..(t + 1) * k];
        for (i, &a) in xt.iter().enumerate() {
            let row = &mut acc[i * k..(i + 1) * k];
            for (r, &b) in row.iter_mut().zip(xs) {
                *r += a * b;
            }
        }
    });
    let n = shape.len() as f64;
    acc.iter_mut().for_each(|v| *v /= n);
    LagCovariance {
        lag: h.to_vec(),
        matrix: RealMatrix::from_row_major(k, k, acc).expect("square accumulator"),
    }
}

/// Autocovariances for a list of lags, computed in parallel.
pub fn autocovariance_bank(
    sample: &FunctionalGridSample,
    lags: &[Lag],
) -> Result<Vec<LagCovariance>> {
    if let Some(bad) = lags.iter().find(|h| h.len() != sample.shape.ndim()) {
        return Err(Error::InvalidInput(format!(
            "lag {bad:?} does not match grid dimension {}",
            sample.shape.ndim()
        )));
    }
    let x = sample.orthonormal_coeffs();
    Ok(lags
        .par_iter()
        .map(|h| autocovariance_raw(&sample.shape, &x, h))
        .collect())
}
