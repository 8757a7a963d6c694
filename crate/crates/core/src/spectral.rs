//! Lag-window estimation of the spectral density operator on an
//! equidistant frequency grid.
//!
//! The estimator is
//!
//! ```text
//! f(theta) = (2 pi)^{-d} sum_h w_q(h) C_h exp(-i h . theta)
//! ```
//!
//! evaluated at the `T^d` nodes `theta_k = 2 pi (k - (T-1)/2) / T`. With odd
//! `T` the node set is symmetric about the origin and contains `theta = 0`.
//! Transforms between lag space and the node grid are separable
//! one-dimensional DFTs; the rectangle rule on this grid integrates the
//! resulting trigonometric polynomials exactly as long as no aliasing
//! occurs.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{autocovariance_bank, lag_box, FunctionalGridSample, Lag};
use crate::numcore::{HermitianMatrix, RealMatrix};

/// Minimum number of frequency nodes per dimension.
pub const MIN_GRID_POINTS: usize = 41;

/// Norm used inside the Bartlett window `(1 - |z/q|)_+`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    /// Euclidean norm of `z/q`.
    #[default]
    Bartlett,
    /// Product of one-dimensional triangles `prod_i (1 - |z_i/q_i|)_+`.
    BartlettProduct,
}

impl std::str::FromStr for WeightKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bartlett" => Ok(WeightKind::Bartlett),
            "bartlett-product" | "product" => Ok(WeightKind::BartlettProduct),
            other => Err(Error::InvalidConfig(format!(
                "unknown weight kind '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for WeightKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WeightKind::Bartlett => f.write_str("bartlett"),
            WeightKind::BartlettProduct => f.write_str("bartlett-product"),
        }
    }
}

/// Bartlett lag window `(1 - ||z/q||_2)_+`.
pub fn bartlett_weight(z: &[i64], q: &[f64]) -> f64 {
    weight(WeightKind::Bartlett, z, q)
}

pub fn weight(kind: WeightKind, z: &[i64], q: &[f64]) -> f64 {
    debug_assert_eq!(z.len(), q.len());
    match kind {
        WeightKind::Bartlett => {
            let norm = z
                .iter()
                .zip(q)
                .map(|(&zi, &qi)| (zi as f64 / qi).powi(2))
                .sum::<f64>()
                .sqrt();
            (1.0 - norm).max(0.0)
        }
        WeightKind::BartlettProduct => z
            .iter()
            .zip(q)
            .map(|(&zi, &qi)| (1.0 - (zi as f64 / qi).abs()).max(0.0))
            .product(),
    }
}

/// Window sizes `q_i = sqrt(n_i)`.
pub fn window_rule_of_thumb(dims: &[usize]) -> Vec<f64> {
    dims.iter().map(|&n| (n as f64).sqrt()).collect()
}

/// Per-dimension lag radius outside of which the window vanishes.
pub fn bartlett_support(q: &[f64]) -> Vec<usize> {
    q.iter().map(|&qi| qi.ceil().max(0.0) as usize).collect()
}

/// Equidistant frequency grid with `points` nodes per dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyGrid {
    ndim: usize,
    points: usize,
}

impl FrequencyGrid {
    pub fn new(ndim: usize, points: usize) -> Result<Self> {
        if ndim == 0 || ndim > crate::field::MAX_GRID_DIM {
            return Err(Error::InvalidConfig(format!(
                "unsupported dimension {ndim}"
            )));
        }
        if points == 0 || points.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "frequency grid size must be odd and positive, got {points}"
            )));
        }
        Ok(Self { ndim, points })
    }

    /// Smallest odd grid with at least `MIN_GRID_POINTS` nodes that
    /// resolves the lag window without aliasing.
    pub fn for_window(ndim: usize, q: &[f64]) -> Result<Self> {
        let support = bartlett_support(q).into_iter().max().unwrap_or(0);
        let mut t = (2 * support + 1).max(MIN_GRID_POINTS);
        if t.is_multiple_of(2) {
            t += 1;
        }
        Self::new(ndim, t)
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn points_per_dim(&self) -> usize {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.pow(self.ndim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Frequency of node `k` along one axis.
    pub fn axis_frequency(&self, k: usize) -> f64 {
        let c = (self.points - 1) as f64 / 2.0;
        2.0 * PI * (k as f64 - c) / self.points as f64
    }

    pub fn node_index(&self, mut linear: usize) -> Vec<usize> {
        let mut idx = vec![0; self.ndim];
        for slot in idx.iter_mut().rev() {
            *slot = linear % self.points;
            linear /= self.points;
        }
        idx
    }

    pub fn node(&self, linear: usize) -> Vec<f64> {
        self.node_index(linear)
            .into_iter()
            .map(|k| self.axis_frequency(k))
            .collect()
    }

    /// Linear index of the node at `-theta`.
    pub fn mirror(&self, linear: usize) -> usize {
        self.node_index(linear)
            .into_iter()
            .fold(0, |acc, k| acc * self.points + (self.points - 1 - k))
    }

    /// Rectangle-rule weight of every node; the weights sum to `(2 pi)^d`.
    pub fn cell_weight(&self) -> f64 {
        (2.0 * PI / self.points as f64).powi(self.ndim as i32)
    }

    /// Largest lag radius that avoids aliasing on this grid.
    pub fn max_lag(&self) -> usize {
        (self.points - 1) / 2
    }

    /// `T x (2r+1)` matrix of `exp(sign * i * h * theta_k)` for `|h| <= r`.
    fn phase_matrix(&self, radius: usize, sign: f64) -> Vec<Complex64> {
        let width = 2 * radius + 1;
        let mut out = Vec::with_capacity(self.points * width);
        for k in 0..self.points {
            let theta = self.axis_frequency(k);
            for c in 0..width {
                let h = c as f64 - radius as f64;
                out.push(Complex64::from_polar(1.0, sign * h * theta));
            }
        }
        out
    }

    /// Evaluates `sum_h a_h exp(-i h . theta)` at every node, where `values`
    /// holds `payload` numbers per lag of the box `|h_i| <= radius_i`.
    pub(crate) fn lags_to_nodes(
        &self,
        values: Vec<Complex64>,
        radius: &[usize],
        payload: usize,
    ) -> Vec<Complex64> {
        let mut shape: Vec<usize> = radius.iter().map(|r| 2 * r + 1).collect();
        let mut data = values;
        for (axis, &r) in radius.iter().enumerate() {
            let m = self.phase_matrix(r, -1.0);
            data = apply_along_axis(&data, &shape, axis, payload, &m, self.points);
            shape[axis] = self.points;
        }
        data
    }

    /// Evaluates `sum_theta g(theta) exp(sign * i * l . theta)` for every lag
    /// of the box `|l_i| <= radius`.
    pub(crate) fn nodes_to_lags(
        &self,
        values: Vec<Complex64>,
        radius: usize,
        payload: usize,
        sign: f64,
    ) -> Vec<Complex64> {
        let width = 2 * radius + 1;
        // transpose of the phase matrix: (2r+1) x T
        let fwd = self.phase_matrix(radius, sign);
        let mut m = vec![Complex64::new(0.0, 0.0); width * self.points];
        for k in 0..self.points {
            for c in 0..width {
                m[c * self.points + k] = fwd[k * width + c];
            }
        }
        let mut shape = vec![self.points; self.ndim];
        let mut data = values;
        for axis in 0..self.ndim {
            data = apply_along_axis(&data, &shape, axis, payload, &m, width);
            shape[axis] = width;
        }
        data
    }
}

/// `out[o, r, i] = sum_c m[r, c] * data[o, c, i]` along one axis.
fn apply_along_axis(
    data: &[Complex64],
    shape: &[usize],
    axis: usize,
    payload: usize,
    m: &[Complex64],
    out_len: usize,
) -> Vec<Complex64> {
    let in_len = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product::<usize>() * payload;
    let mut out = vec![Complex64::new(0.0, 0.0); outer * out_len * inner];
    for o in 0..outer {
        let src = &data[o * in_len * inner..(o + 1) * in_len * inner];
        let dst = &mut out[o * out_len * inner..(o + 1) * out_len * inner];
        for r in 0..out_len {
            let row = &mut dst[r * inner..(r + 1) * inner];
            for c in 0..in_len {
                let w = m[r * in_len + c];
                let col = &src[c * inner..(c + 1) * inner];
                for (d, s) in row.iter_mut().zip(col) {
                    *d += w * s;
                }
            }
        }
    }
    out
}

/// Estimated spectral density operators at every node of a frequency grid.
#[derive(Debug, Clone)]
pub struct SpectralDensityField {
    pub grid: FrequencyGrid,
    pub matrices: Vec<HermitianMatrix>,
    pub q: Vec<f64>,
    pub weight_kind: WeightKind,
}

impl SpectralDensityField {
    pub fn basis_dim(&self) -> usize {
        self.matrices[0].dim()
    }

    /// Rectangle-rule integral of `trace f(theta)` over `[-pi, pi]^d`.
    pub fn trace_integral(&self) -> f64 {
        self.grid.cell_weight()
            * self
                .matrices
                .iter()
                .map(HermitianMatrix::trace)
                .sum::<f64>()
    }
}

/// Lags entering the estimator: inside the window support, with positive
/// weight, and with a nonempty overlap set on the sample grid.
pub fn window_lags(dims: &[usize], q: &[f64], kind: WeightKind) -> Vec<Lag> {
    let radius: Vec<usize> = bartlett_support(q)
        .into_iter()
        .zip(dims)
        .map(|(r, &n)| r.min(n - 1))
        .collect();
    lag_box(&radius)
        .into_iter()
        .filter(|h| weight(kind, h, q) > 0.0)
        .collect()
}

pub fn estimate_spectral_density(
    sample: &FunctionalGridSample,
    q: &[f64],
    grid: &FrequencyGrid,
) -> Result<SpectralDensityField> {
    estimate_spectral_density_with(sample, q, grid, WeightKind::Bartlett)
}

/// Lag-window spectral density estimate. `sample` is expected to be centered.
pub fn estimate_spectral_density_with(
    sample: &FunctionalGridSample,
    q: &[f64],
    grid: &FrequencyGrid,
    kind: WeightKind,
) -> Result<SpectralDensityField> {
    let dims = sample.dims();
    let d = dims.len();
    if q.len() != d || grid.ndim() != d {
        return Err(Error::InvalidConfig(format!(
            "window {q:?} and frequency grid of dimension {} do not match a {d}-dimensional sample",
            grid.ndim()
        )));
    }
    if let Some((qi, ni)) = q
        .iter()
        .zip(dims)
        .find(|(&qi, &ni)| !(qi > 0.0) || qi >= ni as f64)
    {
        return Err(Error::InvalidConfig(format!(
            "window size {qi} must be positive and smaller than the grid size {ni}"
        )));
    }

    let k = sample.basis_dim();
    let radius: Vec<usize> = bartlett_support(q)
        .into_iter()
        .zip(dims)
        .map(|(r, &n)| r.min(n - 1))
        .collect();
    let lags = window_lags(dims, q, kind);
    // only half of the lags are needed: C_{-h} = C_h^T
    let half: Vec<Lag> = lags.iter().filter(|h| !is_negative(h)).cloned().collect();
    let bank = autocovariance_bank(sample, &half)?;

    let widths: Vec<usize> = radius.iter().map(|r| 2 * r + 1).collect();
    let box_len: usize = widths.iter().product();
    let payload = k * k;
    let mut values = vec![Complex64::new(0.0, 0.0); box_len * payload];
    let box_index = |h: &[i64]| {
        h.iter()
            .zip(&radius)
            .zip(&widths)
            .fold(0usize, |acc, ((&hi, &r), &w)| {
                acc * w + (hi + r as i64) as usize
            })
    };
    for cov in &bank {
        let w = weight(kind, &cov.lag, q);
        let pos = box_index(&cov.lag);
        let m = &cov.matrix;
        for i in 0..k {
            for j in 0..k {
                values[pos * payload + i * k + j] = Complex64::new(w * m[(i, j)], 0.0);
            }
        }
        if cov.lag.iter().any(|&v| v != 0) {
            let neg: Lag = cov.lag.iter().map(|v| -v).collect();
            let pos = box_index(&neg);
            for i in 0..k {
                for j in 0..k {
                    values[pos * payload + i * k + j] = Complex64::new(w * m[(j, i)], 0.0);
                }
            }
        }
    }

    let nodes = grid.lags_to_nodes(values, &radius, payload);
    let prefactor = (2.0 * PI).powi(-(d as i32));
    let mut matrices: Vec<Option<HermitianMatrix>> = vec![None; grid.len()];
    for idx in 0..grid.len() {
        let mirror = grid.mirror(idx);
        if idx < mirror {
            continue;
        }
        let entries = nodes[idx * payload..(idx + 1) * payload]
            .iter()
            .map(|z| z * prefactor)
            .collect();
        let f = HermitianMatrix::new(k, entries)?;
        if mirror != idx {
            matrices[mirror] = Some(f.conj());
        }
        matrices[idx] = Some(f);
    }
    Ok(SpectralDensityField {
        grid: grid.clone(),
        matrices: matrices
            .into_iter()
            .map(|m| m.expect("every node filled"))
            .collect(),
        q: q.to_vec(),
        weight_kind: kind,
    })
}

/// Lexicographically negative lag (first nonzero entry below zero).
pub(crate) fn is_negative(h: &[i64]) -> bool {
    h.iter().find(|&&v| v != 0).is_some_and(|&v| v < 0)
}

/// Rectangle-rule evaluation of `int f(theta) exp(i h . theta) d theta`.
pub fn invert_to_lag(spec: &SpectralDensityField, h: &[i64]) -> Result<RealMatrix> {
    let grid = &spec.grid;
    if h.len() != grid.ndim() {
        return Err(Error::InvalidInput(format!(
            "lag {h:?} has the wrong dimension"
        )));
    }
    if h.iter()
        .any(|&v| 2 * v.unsigned_abs() as usize >= grid.points_per_dim())
    {
        return Err(Error::InvalidConfig(format!(
            "lag {h:?} aliases on a frequency grid with {} points per dimension",
            grid.points_per_dim()
        )));
    }
    let k = spec.basis_dim();
    let mut acc = vec![Complex64::new(0.0, 0.0); k * k];
    for (idx, f) in spec.matrices.iter().enumerate() {
        let theta = grid.node(idx);
        let phase: f64 = h.iter().zip(&theta).map(|(&hi, t)| hi as f64 * t).sum();
        let e = Complex64::from_polar(grid.cell_weight(), phase);
        for (a, z) in acc.iter_mut().zip(f.as_slice()) {
            *a += z * e;
        }
    }
    RealMatrix::from_row_major(k, k, acc.iter().map(|z| z.re).collect())
}
