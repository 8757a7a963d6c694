//! Spatial functional principal components.
//!
//! At every frequency node the estimated spectral density operator is
//! diagonalized. The eigenvector fields are phase-normalized, transformed
//! back to lag space to give real filter coefficients, and the filters are
//! convolved with the field to produce score fields `Y_{m,s}`.
//!
//! Phase convention: at each node the eigenvector is rotated so that its
//! largest-modulus coefficient is real and positive. Only nodes in one
//! half of the grid are diagonalized; their mirror images get the complex
//! conjugate, so the filters come out real by construction.

use log::warn;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{lag_box, FunctionalGridSample, GridShape, Lag, ScalarField};
use crate::numcore::{hermitian_eigen, HermitianMatrix};
use crate::spectral::{FrequencyGrid, SpectralDensityField};

/// Eigenvalues and leading eigenvectors at every frequency node.
#[derive(Debug, Clone)]
pub struct EigenField {
    pub grid: FrequencyGrid,
    /// Number of eigenvectors kept per node.
    pub levels: usize,
    /// All `K` eigenvalues per node, descending.
    pub eigenvalues: Vec<Vec<f64>>,
    /// `eigenvectors[node][m]`, unit norm, for `m < levels`.
    pub eigenvectors: Vec<Vec<Vec<Complex64>>>,
}

impl EigenField {
    pub fn basis_dim(&self) -> usize {
        self.eigenvalues[0].len()
    }

    /// Keeps only the first `p` eigenvectors at every node.
    pub fn truncated(mut self, p: usize) -> Self {
        let p = p.min(self.levels);
        for node in &mut self.eigenvectors {
            node.truncate(p);
        }
        self.levels = p;
        self
    }

    /// Rectangle-rule integral of each eigenvalue function.
    pub fn integrated_eigenvalues(&self) -> Vec<f64> {
        let k = self.basis_dim();
        let w = self.grid.cell_weight();
        (0..k)
            .map(|m| w * self.eigenvalues.iter().map(|ev| ev[m]).sum::<f64>())
            .collect()
    }

    /// Proportion of total variance carried by each of the `K` levels.
    pub fn variance_proportions(&self) -> Vec<f64> {
        let integrals = self.integrated_eigenvalues();
        let total: f64 = integrals.iter().sum();
        if total <= 0.0 {
            return vec![0.0; integrals.len()];
        }
        integrals.iter().map(|v| v / total).collect()
    }
}

/// Rotates `v` so its largest-modulus entry is real and positive.
pub(crate) fn fix_phase(v: &mut [Complex64]) {
    let mut best = 0;
    let mut best_norm = -1.0;
    for (i, z) in v.iter().enumerate() {
        let n = z.norm();
        // ties keep the first index
        if n > best_norm * (1.0 + 1e-12) {
            best = i;
            best_norm = n;
        }
    }
    if best_norm > 0.0 {
        let rot = v[best].conj() / best_norm;
        v.iter_mut().for_each(|z| *z *= rot);
        v[best].im = 0.0;
    }
}

/// Top-`p` eigensystem at every node of the spectral density field.
pub fn eigendecompose_field(spec: &SpectralDensityField, p: usize) -> Result<EigenField> {
    let k = spec.basis_dim();
    if p == 0 || p > k {
        return Err(Error::InvalidConfig(format!(
            "number of components must be between 1 and {k}, got {p}"
        )));
    }
    let grid = &spec.grid;
    let half: Vec<usize> = (0..grid.len()).filter(|&i| grid.mirror(i) >= i).collect();
    let solved: Vec<(Vec<f64>, Vec<Vec<Complex64>>)> = half
        .par_iter()
        .map(|&idx| {
            let sys = hermitian_eigen(&spec.matrices[idx])?;
            let vectors = sys
                .eigenvectors
                .into_iter()
                .take(p)
                .map(|mut v| {
                    fix_phase(&mut v);
                    v
                })
                .collect();
            Ok((sys.eigenvalues, vectors))
        })
        .collect::<Result<_>>()?;

    let mut eigenvalues = vec![Vec::new(); grid.len()];
    let mut eigenvectors = vec![Vec::new(); grid.len()];
    let mut gap_warned = false;
    for (&idx, (vals, vecs)) in half.iter().zip(solved) {
        if !gap_warned {
            let scale = vals[0].abs().max(f64::MIN_POSITIVE);
            let upto = p.min(k - 1);
            if (0..upto).any(|m| vals[m] - vals[m + 1] < 1e-12 * scale) {
                warn!("spectral gap below 1e-12 among the leading {p} eigenvalues; eigenvectors are not identifiable");
                gap_warned = true;
            }
        }
        let mirror = grid.mirror(idx);
        if mirror != idx {
            eigenvalues[mirror] = vals.clone();
            eigenvectors[mirror] = vecs
                .iter()
                .map(|v: &Vec<Complex64>| v.iter().map(|z| z.conj()).collect())
                .collect();
        }
        eigenvalues[idx] = vals;
        eigenvectors[idx] = vecs;
    }
    Ok(EigenField {
        grid: grid.clone(),
        levels: p,
        eigenvalues,
        eigenvectors,
    })
}

/// Share of total variance explained by each of the first `p` levels.
pub fn variance_explained(spec: &SpectralDensityField, p: usize) -> Result<Vec<f64>> {
    let k = spec.basis_dim();
    if p == 0 || p > k {
        return Err(Error::InvalidConfig(format!(
            "number of components must be between 1 and {k}, got {p}"
        )));
    }
    let eig = eigendecompose_field(spec, 1)?;
    Ok(eig.variance_proportions().into_iter().take(p).collect())
}

/// Smallest `p` whose cumulative proportion reaches `threshold`.
pub fn select_p(proportions: &[f64], threshold: f64) -> usize {
    let mut cum = 0.0;
    for (i, v) in proportions.iter().enumerate() {
        cum += v;
        if cum >= threshold {
            return i + 1;
        }
    }
    warn!(
        "variance threshold {threshold} not reached with all {} components; using all of them",
        proportions.len()
    );
    proportions.len()
}

/// Real filter coefficients `phi_{m,l}` for levels `m < p` and lags
/// `|l|_inf <= L`.
#[derive(Debug, Clone, PartialEq)]
pub struct SfpcFilterBank {
    p: usize,
    max_lag: usize,
    ndim: usize,
    basis_dim: usize,
    lags: Vec<Lag>,
    /// `[level][lag][k]`, flattened.
    coeffs: Vec<f64>,
    /// `sum_l |phi_{m,l}|^2` per level.
    pub captured_weight: Vec<f64>,
}

impl SfpcFilterBank {
    /// Builds a bank from explicit coefficients laid out `[level][lag][k]`
    /// over `lag_box` order.
    pub fn from_coeffs(
        p: usize,
        max_lag: usize,
        ndim: usize,
        basis_dim: usize,
        coeffs: Vec<f64>,
    ) -> Result<Self> {
        let lags = lag_box(&vec![max_lag; ndim]);
        if coeffs.len() != p * lags.len() * basis_dim {
            return Err(Error::InvalidInput(format!(
                "filter bank needs {} coefficients, got {}",
                p * lags.len() * basis_dim,
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite filter coefficient".into()));
        }
        let per_level = lags.len() * basis_dim;
        let captured_weight = coeffs
            .chunks(per_level)
            .map(|c| c.iter().map(|v| v * v).sum())
            .collect();
        Ok(Self {
            p,
            max_lag,
            ndim,
            basis_dim,
            lags,
            coeffs,
            captured_weight,
        })
    }

    pub fn levels(&self) -> usize {
        self.p
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    pub fn basis_dim(&self) -> usize {
        self.basis_dim
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn lags(&self) -> &[Lag] {
        &self.lags
    }

    /// Coefficients of level `m` at the `j`-th lag of [`Self::lags`].
    pub fn filter_at(&self, m: usize, j: usize) -> &[f64] {
        let start = (m * self.lags.len() + j) * self.basis_dim;
        &self.coeffs[start..start + self.basis_dim]
    }

    pub fn filter(&self, m: usize, lag: &[i64]) -> Option<&[f64]> {
        let r = self.max_lag as i64;
        if lag.iter().any(|v| v.abs() > r) {
            return None;
        }
        let w = 2 * self.max_lag + 1;
        let j = lag
            .iter()
            .fold(0usize, |acc, &v| acc * w + (v + r) as usize);
        Some(self.filter_at(m, j))
    }

    /// Same bank with every level multiplied by its own factor.
    pub fn scaled(&self, factors: &[f64]) -> Self {
        let per_level = self.lags.len() * self.basis_dim;
        let coeffs: Vec<f64> = self
            .coeffs
            .chunks(per_level)
            .zip(factors)
            .flat_map(|(c, f)| c.iter().map(move |v| v * f))
            .collect();
        Self::from_coeffs(self.p, self.max_lag, self.ndim, self.basis_dim, coeffs)
            .expect("scaling keeps the layout")
    }
}

/// Fourier coefficients of the eigenvector fields, complex, laid out
/// `[lag][level][k]` over the box `|l|_inf <= radius`.
fn filter_transform(eig: &EigenField, levels: usize, radius: usize) -> Vec<Complex64> {
    let k = eig.basis_dim();
    let payload = levels * k;
    let mut values = Vec::with_capacity(eig.grid.len() * payload);
    for node in &eig.eigenvectors {
        for v in node.iter().take(levels) {
            values.extend_from_slice(v);
        }
    }
    let scale = 1.0 / eig.grid.len() as f64;
    eig.grid
        .nodes_to_lags(values, radius, payload, -1.0)
        .into_iter()
        .map(|z| z * scale)
        .collect()
}

/// Filter coefficients by rectangle-rule quadrature of the eigenvector
/// fields.
pub fn compute_filters(eig: &EigenField, max_lag: usize) -> Result<SfpcFilterBank> {
    if max_lag > eig.grid.max_lag() {
        return Err(Error::InvalidConfig(format!(
            "filter lag {max_lag} aliases on a frequency grid with {} points per dimension",
            eig.grid.points_per_dim()
        )));
    }
    let p = eig.levels;
    let k = eig.basis_dim();
    let raw = filter_transform(eig, p, max_lag);
    let nlags = raw.len() / (p * k);
    let max_imag = raw.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if max_imag > 1e-8 {
        warn!("filter coefficients carry an imaginary residue of {max_imag:.3e}");
    }
    let mut coeffs = vec![0.0; p * nlags * k];
    for j in 0..nlags {
        for m in 0..p {
            for i in 0..k {
                coeffs[(m * nlags + j) * k + i] = raw[(j * p + m) * k + i].re;
            }
        }
    }
    SfpcFilterBank::from_coeffs(p, max_lag, eig.grid.ndim(), k, coeffs)
}

/// Cumulative filter weight `sum_{|l|_inf <= L} |phi_{1,l}|^2` for
/// `L = 0..=max_lag`.
pub fn weight_profile(eig: &EigenField, max_lag: usize) -> Result<Vec<f64>> {
    if max_lag > eig.grid.max_lag() {
        return Err(Error::InvalidConfig(format!(
            "filter lag {max_lag} aliases on a frequency grid with {} points per dimension",
            eig.grid.points_per_dim()
        )));
    }
    let k = eig.basis_dim();
    let raw = filter_transform(eig, 1, max_lag);
    let lags = lag_box(&vec![max_lag; eig.grid.ndim()]);
    let mut by_radius = vec![0.0; max_lag + 1];
    for (j, lag) in lags.iter().enumerate() {
        let r = lag
            .iter()
            .map(|v| v.unsigned_abs() as usize)
            .max()
            .unwrap_or(0);
        by_radius[r] += raw[j * k..(j + 1) * k]
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>();
    }
    let mut cum = 0.0;
    Ok(by_radius
        .into_iter()
        .map(|w| {
            cum += w;
            cum
        })
        .collect())
}

/// Smallest truncation lag whose level-1 filters hold `threshold` of the
/// total weight, capped at `max_lag`.
pub fn select_l(eig: &EigenField, threshold: f64, max_lag: usize) -> Result<usize> {
    let profile = weight_profile(eig, max_lag)?;
    match profile.iter().position(|&w| w >= threshold) {
        Some(l) => Ok(l),
        None => {
            warn!(
                "filters reach only {:.4} of their weight at the lag cap {max_lag}",
                profile.last().copied().unwrap_or(0.0)
            );
            Ok(max_lag)
        }
    }
}

/// How filter terms that fall outside the observed grid are handled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum BoundaryMode {
    /// Drop out-of-grid terms; scores are defined at every location.
    #[default]
    Omit,
    /// Keep only locations whose whole filter support lies in the grid.
    Strict,
}

/// Score fields `Y_{m,s}` for `m < p` over the sample grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreField {
    shape: GridShape,
    /// `scores[m][s]`.
    pub scores: Vec<Vec<f64>>,
    pub valid_mask: Vec<bool>,
    valid_lo: Vec<usize>,
    valid_hi: Vec<usize>,
}

impl ScoreField {
    pub fn new(dims: &[usize], scores: Vec<Vec<f64>>) -> Result<Self> {
        let shape = GridShape::new(dims)?;
        if scores.iter().any(|l| l.len() != shape.len()) {
            return Err(Error::InvalidInput(
                "score level length does not match the grid".into(),
            ));
        }
        let n = shape.len();
        Ok(Self {
            valid_lo: vec![0; dims.len()],
            valid_hi: dims.to_vec(),
            shape,
            scores,
            valid_mask: vec![true; n],
        })
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn levels(&self) -> usize {
        self.scores.len()
    }

    pub fn valid_dims(&self) -> Vec<usize> {
        self.valid_lo
            .iter()
            .zip(&self.valid_hi)
            .map(|(l, h)| h - l)
            .collect()
    }

    /// Level `m` restricted to the valid rectangle.
    pub fn level_field(&self, m: usize) -> ScalarField {
        let dims = self.valid_dims();
        let mut values = Vec::with_capacity(dims.iter().product());
        crate::field::for_each_in_box(&self.valid_lo, &self.valid_hi, self.shape.strides(), |s| {
            values.push(self.scores[m][s]);
        });
        ScalarField::new(&dims, values).expect("valid rectangle is nonempty")
    }

    /// Same field with each level multiplied by its own factor.
    pub fn scaled(&self, factors: &[f64]) -> Self {
        let mut out = self.clone();
        for (level, f) in out.scores.iter_mut().zip(factors) {
            level.iter_mut().for_each(|v| *v *= f);
        }
        out
    }
}

/// `Y_{m,s} = sum_{|l|_inf <= L} <X_{s-l}, phi_{m,l}>`.
pub fn compute_scores(
    sample: &FunctionalGridSample,
    bank: &SfpcFilterBank,
    boundary: BoundaryMode,
) -> Result<ScoreField> {
    if bank.basis_dim() != sample.basis_dim() {
        return Err(Error::InvalidInput(format!(
            "filter bank has basis dimension {} but the sample has {}",
            bank.basis_dim(),
            sample.basis_dim()
        )));
    }
    if bank.ndim() != sample.shape().ndim() {
        return Err(Error::InvalidInput(
            "filter bank and sample grid dimensions differ".into(),
        ));
    }
    let shape = sample.shape().clone();
    let dims = shape.dims().to_vec();
    let n = shape.len();
    let k = sample.basis_dim();
    let x = sample.orthonormal_coeffs();
    let data = x.as_slice();

    let scores: Vec<Vec<f64>> = (0..bank.levels())
        .into_par_iter()
        .map(|m| {
            let mut y = vec![0.0; n];
            let mut proj = vec![0.0; n];
            for (j, lag) in bank.lags().iter().enumerate() {
                let phi = bank.filter_at(m, j);
                if phi.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for (t, p) in proj.iter_mut().enumerate() {
                    *p = data[t * k..(t + 1) * k]
                        .iter()
                        .zip(phi)
                        .map(|(a, b)| a * b)
                        .sum();
                }
                // s - l = t, i.e. t ranges over M_{l} and s = t + l
                shape.for_each_overlap(lag, |t, s| y[s] += proj[t]);
            }
            y
        })
        .collect();

    let (valid_lo, valid_hi) = match boundary {
        BoundaryMode::Omit => (vec![0; dims.len()], dims.clone()),
        BoundaryMode::Strict => {
            let l = bank.max_lag();
            if dims.iter().any(|&ni| ni <= 2 * l) {
                return Err(Error::InvalidConfig(format!(
                    "strict boundary handling with filter lag {l} leaves no interior locations in grid {dims:?}"
                )));
            }
            (vec![l; dims.len()], dims.iter().map(|&ni| ni - l).collect())
        }
    };
    let valid_mask = (0..n)
        .map(|s| {
            shape
                .multi(s)
                .iter()
                .zip(valid_lo.iter().zip(&valid_hi))
                .all(|(&i, (&lo, &hi))| i >= lo && i < hi)
        })
        .collect();
    Ok(ScoreField {
        shape,
        scores,
        valid_mask,
        valid_lo,
        valid_hi,
    })
}

/// Ordinary FPC scores `<X_s, v_m>` from the eigenvectors of `C_0`.
pub fn ordinary_fpca_scores(sample: &FunctionalGridSample, p: usize) -> Result<ScoreField> {
    let k = sample.basis_dim();
    if p == 0 || p > k {
        return Err(Error::InvalidConfig(format!(
            "number of components must be between 1 and {k}, got {p}"
        )));
    }
    let ndim = sample.shape().ndim();
    let c0 = crate::field::autocovariance(sample, &vec![0; ndim])?.matrix;
    let sys = hermitian_eigen(&HermitianMatrix::from_real(&c0)?)?;
    let x = sample.orthonormal_coeffs();
    let scores = sys
        .eigenvectors
        .into_iter()
        .take(p)
        .map(|mut v| {
            fix_phase(&mut v);
            let real: Vec<f64> = v.iter().map(|z| z.re).collect();
            (0..sample.len())
                .map(|s| x.row(s).iter().zip(&real).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    ScoreField::new(sample.dims(), scores)
}
