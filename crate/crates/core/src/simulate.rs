//! Data-generating processes for size and power studies.
//!
//! Fields follow the spatial autoregression
//! `X_{s,t} = A X_{s-1,t} + B X_{s,t-1} + e_{s,t}` in a Fourier basis, with
//! independent coefficients of variance `2^{-i}` in the innovations. Under
//! the null the coefficients are Gaussian; alternatives use Johnson S_U
//! coefficients with the same mean and variance but prescribed skewness
//! and kurtosis.
//!
//! Randomness comes from ChaCha8 streams: the operators use a dedicated
//! stream of the master seed and replication `r` of grid `g` uses its own
//! stream, shared by all distributions, so a study is a pure function of
//! its configuration regardless of thread scheduling.

use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::field::FunctionalGridSample;
use crate::numcore::{operator_norm, RealMatrix};
use crate::pipeline::{run_test_pipeline, TestConfig};
use crate::sfpca::BoundaryMode;

pub const DEFAULT_BASIS_DIM: usize = 15;
pub const DEFAULT_NORMS: (f64, f64) = (0.6, 0.35);
pub const DEFAULT_BURNIN: usize = 50;
/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 2021;

const OPERATOR_STREAM: u64 = u64::MAX;

/// Autoregression operators in coefficient form.
#[derive(Debug, Clone, PartialEq)]
pub struct SarOperators {
    pub a: RealMatrix,
    pub b: RealMatrix,
    pub target_norms: (f64, f64),
}

impl SarOperators {
    pub fn zero(k: usize) -> Self {
        Self {
            a: RealMatrix::zeros(k, k),
            b: RealMatrix::zeros(k, k),
            target_norms: (0.0, 0.0),
        }
    }

    pub fn basis_dim(&self) -> usize {
        self.a.rows()
    }
}

/// Random operators with entry `(i, j)` drawn from `N(0, (i^2 + j^2)^{-1/2})`
/// (1-based indices), rescaled to the target operator norms.
pub fn generate_operators_with<R: Rng>(
    k: usize,
    norms: (f64, f64),
    rng: &mut R,
) -> Result<SarOperators> {
    if k == 0 {
        return Err(Error::InvalidConfig(
            "basis dimension must be positive".into(),
        ));
    }
    let mut draw = |target: f64| -> Result<RealMatrix> {
        let mut m = RealMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                let var = (((i + 1).pow(2) + (j + 1).pow(2)) as f64).powf(-0.5);
                m[(i, j)] = var.sqrt() * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let norm = operator_norm(&m)?;
        if norm == 0.0 {
            return Err(Error::Numerical("drew a zero operator".into()));
        }
        Ok(m.scale(target / norm))
    };
    let a = draw(norms.0)?;
    let b = draw(norms.1)?;
    Ok(SarOperators {
        a,
        b,
        target_norms: norms,
    })
}

/// Default `15 x 15` operators with norms 0.6 and 0.35.
pub fn generate_operators(seed: u64) -> Result<SarOperators> {
    seeded_operators(seed, DEFAULT_BASIS_DIM, DEFAULT_NORMS)
}

/// Operators drawn from the dedicated operator stream of `seed`.
pub fn seeded_operators(seed: u64, k: usize, norms: (f64, f64)) -> Result<SarOperators> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(OPERATOR_STREAM);
    generate_operators_with(k, norms, &mut rng)
}

/// First four moments of a distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentTarget {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

/// Parameters of `X = xi + lambda sinh((Z - gamma) / delta)`, `Z ~ N(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JohnsonSuParams {
    pub xi: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub delta: f64,
    pub target: MomentTarget,
}

impl JohnsonSuParams {
    pub fn transform(&self, z: f64) -> f64 {
        self.xi + self.lambda * ((z - self.gamma) / self.delta).sinh()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        self.transform(rng.sample(StandardNormal))
    }

    /// Moments implied by the parameters.
    pub fn moments(&self) -> MomentTarget {
        let shape = su_shape_moments(self.gamma, self.delta);
        MomentTarget {
            mean: self.xi + self.lambda * shape.mean,
            variance: self.lambda * self.lambda * shape.variance,
            skewness: shape.skewness,
            kurtosis: shape.kurtosis,
        }
    }
}

/// Moments of `sinh((Z - gamma) / delta)`.
pub fn su_shape_moments(gamma: f64, delta: f64) -> MomentTarget {
    let w_minus_1 = (1.0 / (delta * delta)).exp_m1();
    let w = 1.0 + w_minus_1;
    let om = gamma / delta;
    let c2 = w * (2.0 * om).cosh() + 1.0;
    let mean = -w.sqrt() * om.sinh();
    let variance = 0.5 * w_minus_1 * c2;
    let skewness = -(w * w_minus_1).sqrt() * (w * (w + 2.0) * (3.0 * om).sinh() + 3.0 * om.sinh())
        / (2f64.sqrt() * c2.powf(1.5));
    let kurtosis = (w * w * (w.powi(4) + 2.0 * w.powi(3) + 3.0 * w * w - 3.0) * (4.0 * om).cosh()
        + 4.0 * w * w * (w + 2.0) * (2.0 * om).cosh()
        + 3.0 * (2.0 * w + 1.0))
        / (2.0 * c2 * c2);
    MomentTarget {
        mean,
        variance,
        skewness,
        kurtosis,
    }
}

/// `omega` on the lognormal boundary with squared skewness `tau^2`:
/// `(w - 1)(w + 2)^2 = tau^2`.
fn lognormal_omega(tau: f64) -> f64 {
    let target = tau * tau;
    let f = |w: f64| (w - 1.0) * (w + 2.0).powi(2) - target;
    let (mut lo, mut hi) = (1.0, 2.0);
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Smallest kurtosis an S_U law can have for the given skewness (attained
/// only in the lognormal limit).
pub fn su_kurtosis_boundary(tau: f64) -> f64 {
    let w = lognormal_omega(tau);
    w.powi(4) + 2.0 * w.powi(3) + 3.0 * w * w - 3.0
}

/// Fits the S_U law with the requested four moments.
pub fn fit_johnson_su(
    skewness: f64,
    kurtosis: f64,
    mean: f64,
    variance: f64,
) -> Result<JohnsonSuParams> {
    if !(variance > 0.0) || !mean.is_finite() || !skewness.is_finite() || !kurtosis.is_finite() {
        return Err(Error::Domain(format!(
            "S_U fit needs finite moments and positive variance (mean {mean}, variance {variance})"
        )));
    }
    let boundary = su_kurtosis_boundary(skewness);
    if !(kurtosis > boundary) || !(kurtosis > 3.0) {
        return Err(Error::Domain(format!(
            "kurtosis {kurtosis} with skewness {skewness} is outside the S_U region: \
             kurtosis must exceed the lognormal boundary {boundary:.6}"
        )));
    }
    let (gamma, delta) = match newton_shape(skewness, kurtosis) {
        Some(sol) => sol,
        None => bisection_shape(skewness, kurtosis)?,
    };
    let shape = su_shape_moments(gamma, delta);
    let lambda = (variance / shape.variance).sqrt();
    let xi = mean - lambda * shape.mean;
    let params = JohnsonSuParams {
        xi,
        lambda,
        gamma,
        delta,
        target: MomentTarget {
            mean,
            variance,
            skewness,
            kurtosis,
        },
    };
    let got = params.moments();
    let resid = [
        (got.mean - mean) / variance.sqrt(),
        got.variance / variance - 1.0,
        got.skewness - skewness,
        got.kurtosis - kurtosis,
    ];
    if resid.iter().any(|r| r.abs() > 1e-8) {
        return Err(Error::Numerical(format!(
            "S_U fit did not converge, residuals {resid:?}"
        )));
    }
    Ok(params)
}

/// Symmetric case: `kurtosis(gamma = 0)` as a function of `delta` is
/// decreasing, so bisection gives the starting `delta`.
fn symmetric_delta(kurtosis: f64) -> f64 {
    let f = |delta: f64| su_shape_moments(0.0, delta).kurtosis - kurtosis;
    let (mut lo, mut hi) = (0.05, 1.0);
    while f(hi) > 0.0 && hi < 1e6 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Damped Newton on `(gamma, delta)` with a central-difference Jacobian.
fn newton_shape(tau: f64, kappa: f64) -> Option<(f64, f64)> {
    let resid = |g: f64, d: f64| {
        let m = su_shape_moments(g, d);
        [m.skewness - tau, m.kurtosis - kappa]
    };
    let mut g = 0.0;
    let mut d = symmetric_delta(kappa);
    if tau == 0.0 {
        return Some((0.0, d));
    }
    let mut r = resid(g, d);
    for _ in 0..200 {
        let norm = r[0].hypot(r[1]);
        if norm < 1e-13 {
            return Some((g, d));
        }
        let hg = 1e-6 * (1.0 + g.abs());
        let hd = 1e-6 * d;
        let rgp = resid(g + hg, d);
        let rgm = resid(g - hg, d);
        let rdp = resid(g, d + hd);
        let rdm = resid(g, d - hd);
        let j = [
            [
                (rgp[0] - rgm[0]) / (2.0 * hg),
                (rdp[0] - rdm[0]) / (2.0 * hd),
            ],
            [
                (rgp[1] - rgm[1]) / (2.0 * hg),
                (rdp[1] - rdm[1]) / (2.0 * hd),
            ],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if !det.is_finite() || det.abs() < 1e-300 {
            return None;
        }
        let step_g = (j[1][1] * r[0] - j[0][1] * r[1]) / det;
        let step_d = (-j[1][0] * r[0] + j[0][0] * r[1]) / det;
        let mut t = 1.0;
        loop {
            let ng = g - t * step_g;
            let nd = d - t * step_d;
            if nd > 0.0 {
                let nr = resid(ng, nd);
                if nr[0].hypot(nr[1]) < norm {
                    g = ng;
                    d = nd;
                    r = nr;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-10 {
                return None;
            }
        }
    }
    None
}

/// Nested bisection: for fixed `omega` skewness is monotone in `gamma/delta`,
/// and along the resulting constant-skewness curve kurtosis increases with
/// `omega`.
fn bisection_shape(tau: f64, kappa: f64) -> Result<(f64, f64)> {
    let skew_at = |w: f64, om: f64| {
        let delta = 1.0 / w.ln().sqrt();
        su_shape_moments(om * delta, delta).skewness
    };
    let solve_om = |w: f64| -> f64 {
        if tau == 0.0 {
            return 0.0;
        }
        // skewness decreases in om
        let (mut lo, mut hi) = (-1.0, 1.0);
        while skew_at(w, lo) < tau && lo > -50.0 {
            lo *= 2.0;
        }
        while skew_at(w, hi) > tau && hi < 50.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if skew_at(w, mid) > tau {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let kurt_at = |w: f64| {
        let om = solve_om(w);
        let delta = 1.0 / w.ln().sqrt();
        su_shape_moments(om * delta, delta).kurtosis
    };
    let mut lo = lognormal_omega(tau) * (1.0 + 1e-12) + 1e-15;
    let mut hi = lo + 0.5;
    while kurt_at(hi) < kappa {
        hi = 1.0 + 2.0 * (hi - 1.0);
        if hi > 1e6 {
            return Err(Error::Numerical(
                "S_U bisection failed to bracket the kurtosis".into(),
            ));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kurt_at(mid) < kappa {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w = 0.5 * (lo + hi);
    let delta = 1.0 / w.ln().sqrt();
    Ok((solve_om(w) * delta, delta))
}

/// Distribution of the innovation coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Gaussian,
    /// Johnson S_U with the given skewness and kurtosis.
    Su {
        skewness: f64,
        kurtosis: f64,
    },
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distribution::Gaussian => f.write_str("gaussian"),
            Distribution::Su { skewness, kurtosis } => write!(f, "su({skewness},{kurtosis})"),
        }
    }
}

impl FromStr for Distribution {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t: String = s
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect::<String>()
            .to_ascii_lowercase();
        if t == "gaussian" || t == "normal" {
            return Ok(Distribution::Gaussian);
        }
        let inner = t
            .strip_prefix("su(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown distribution '{s}' (use gaussian or su(tau,kappa))"
                ))
            })?;
        let parts: Vec<&str> = inner.split(',').collect();
        if parts.len() != 2 {
            return Err(Error::InvalidConfig(format!(
                "expected su(tau,kappa), got '{s}'"
            )));
        }
        let parse = |p: &str| {
            p.parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("bad number '{p}' in '{s}'")))
        };
        Ok(Distribution::Su {
            skewness: parse(parts[0])?,
            kurtosis: parse(parts[1])?,
        })
    }
}

/// Innovation law ready for sampling: coefficient `i` (1-based) is a
/// standardized draw scaled to variance `2^{-i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct InnovationSpec {
    pub distribution: Distribution,
    standardized: Option<JohnsonSuParams>,
    sd: Vec<f64>,
}

impl InnovationSpec {
    pub fn new(distribution: Distribution, k: usize) -> Result<Self> {
        let standardized = match distribution {
            Distribution::Gaussian => None,
            Distribution::Su { skewness, kurtosis } => {
                Some(fit_johnson_su(skewness, kurtosis, 0.0, 1.0)?)
            }
        };
        let sd = (1..=k).map(|i| 0.5f64.powi(i as i32).sqrt()).collect();
        Ok(Self {
            distribution,
            standardized,
            sd,
        })
    }

    pub fn basis_dim(&self) -> usize {
        self.sd.len()
    }

    /// Writes one innovation coefficient vector into `out`.
    pub fn fill<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        for (o, sd) in out.iter_mut().zip(&self.sd) {
            let z: f64 = rng.sample(StandardNormal);
            let x = match &self.standardized {
                None => z,
                Some(p) => p.transform(z),
            };
            *o = sd * x;
        }
    }
}

pub fn sample_innovation<R: Rng>(spec: &InnovationSpec, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; spec.basis_dim()];
    spec.fill(rng, &mut out);
    out
}

/// Simulates the autoregression on an `(n1 + burnin) x (n2 + burnin)` grid
/// in raster order from a zero boundary and keeps the last `n1 x n2` block.
pub fn simulate_sar<R: Rng>(
    dims: &[usize],
    ops: &SarOperators,
    innovations: &InnovationSpec,
    burnin: usize,
    rng: &mut R,
) -> Result<FunctionalGridSample> {
    if dims.len() != 2 || dims.contains(&0) {
        return Err(Error::InvalidConfig(format!(
            "the autoregression is simulated on two-dimensional grids, got {dims:?}"
        )));
    }
    let k = ops.basis_dim();
    if innovations.basis_dim() != k {
        return Err(Error::InvalidConfig(format!(
            "operators are {k}x{k} but innovations have dimension {}",
            innovations.basis_dim()
        )));
    }
    let total = operator_norm(&ops.a)? + operator_norm(&ops.b)?;
    if total >= 1.0 {
        warn!("operator norms sum to {total:.4} >= 1; the field may not be stationary");
    }
    let (r, c) = (dims[0] + burnin, dims[1] + burnin);
    let mut x = vec![0.0; r * c * k];
    let mut eps = vec![0.0; k];
    for i in 0..r {
        for j in 0..c {
            innovations.fill(rng, &mut eps);
            let here = (i * c + j) * k;
            for a in 0..k {
                let mut v = eps[a];
                if i > 0 {
                    let up = ((i - 1) * c + j) * k;
                    v += (0..k).map(|b| ops.a[(a, b)] * x[up + b]).sum::<f64>();
                }
                if j > 0 {
                    let left = (i * c + j - 1) * k;
                    v += (0..k).map(|b| ops.b[(a, b)] * x[left + b]).sum::<f64>();
                }
                x[here + a] = v;
            }
        }
    }
    let mut coeffs = Vec::with_capacity(dims[0] * dims[1] * k);
    for i in burnin..r {
        let start = (i * c + burnin) * k;
        coeffs.extend_from_slice(&x[start..start + dims[1] * k]);
    }
    FunctionalGridSample::new(
        dims,
        RealMatrix::from_row_major(dims[0] * dims[1], k, coeffs)?,
        BasisSpec::fourier(k)?,
    )
}

/// RNG for replication `rep` on grid `grid_index` of a study.
pub fn replication_rng(seed: u64, grid_index: usize, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((grid_index as u64) << 40) | rep as u64);
    rng
}

/// Design of a size/power study.
#[derive(Debug, Clone, PartialEq)]
pub struct McStudyConfig {
    pub dims: Vec<Vec<usize>>,
    pub distributions: Vec<Distribution>,
    pub p_values: Vec<usize>,
    pub replications: usize,
    pub alpha: f64,
    pub seed: u64,
    pub burnin: usize,
    pub basis_dim: usize,
    pub norms: (f64, f64),
    /// Tuning overrides; `p` is ignored (taken from `p_values`).
    pub tuning: TestConfig,
}

impl Default for McStudyConfig {
    fn default() -> Self {
        Self {
            dims: vec![vec![12, 12], vec![25, 25], vec![50, 50]],
            distributions: vec![Distribution::Gaussian],
            p_values: vec![1, 2, 3, 4],
            replications: 500,
            alpha: 0.05,
            seed: DEFAULT_SEED,
            burnin: DEFAULT_BURNIN,
            basis_dim: DEFAULT_BASIS_DIM,
            norms: DEFAULT_NORMS,
            tuning: TestConfig::default(),
        }
    }
}

impl McStudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidConfig(
                "replications must be at least 1".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.dims.is_empty() || self.distributions.is_empty() || self.p_values.is_empty() {
            return Err(Error::InvalidConfig(
                "dims, distributions and p must be nonempty".into(),
            ));
        }
        if let Some(d) = self
            .dims
            .iter()
            .find(|d| d.len() != 2 || d.iter().any(|&n| n < 2))
        {
            return Err(Error::InvalidConfig(format!(
                "study grids must be n1 x n2 with n_i >= 2, got {d:?}"
            )));
        }
        if let Some(p) = self
            .p_values
            .iter()
            .find(|&&p| p == 0 || p > self.basis_dim)
        {
            return Err(Error::InvalidConfig(format!(
                "p = {p} is outside 1..={}",
                self.basis_dim
            )));
        }
        Ok(())
    }
}

/// On-disk form of a study configuration.
///
/// ```toml
/// dims = [[12, 12], [25, 25]]
/// distributions = ["gaussian", "su(0,3.2)"]
/// p = [1, 2, 3, 4]
/// replications = 500
/// alpha = 0.05
/// seed = 2021
/// burnin = 50
/// k = 15
///
/// [tuning]
/// var_threshold = 0.85
/// weight_threshold = 0.95
/// ```
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct StudyFile {
    dims: Option<Vec<Vec<usize>>>,
    distributions: Option<Vec<String>>,
    p: Option<Vec<usize>>,
    replications: Option<usize>,
    alpha: Option<f64>,
    seed: Option<u64>,
    burnin: Option<usize>,
    k: Option<usize>,
    norms: Option<(f64, f64)>,
    #[serde(default)]
    tuning: TuningFile,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TuningFile {
    q: Option<Vec<f64>>,
    grid_t: Option<usize>,
    l: Option<usize>,
    l_prime: Option<usize>,
    var_threshold: Option<f64>,
    weight_threshold: Option<f64>,
    strict_boundary: Option<bool>,
    weight: Option<String>,
}

impl McStudyConfig {
    /// Reads a TOML study description; absent keys keep their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: StudyFile = toml::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("study config: {}", e.message())))?;
        let mut cfg = McStudyConfig::default();
        if let Some(d) = file.dims {
            cfg.dims = d;
        }
        if let Some(d) = file.distributions {
            cfg.distributions = d.iter().map(|s| s.parse()).collect::<Result<Vec<_>>>()?;
        }
        if let Some(p) = file.p {
            cfg.p_values = p;
        }
        if let Some(r) = file.replications {
            cfg.replications = r;
        }
        if let Some(a) = file.alpha {
            cfg.alpha = a;
        }
        if let Some(s) = file.seed {
            cfg.seed = s;
        }
        if let Some(b) = file.burnin {
            cfg.burnin = b;
        }
        if let Some(k) = file.k {
            cfg.basis_dim = k;
        }
        if let Some(n) = file.norms {
            cfg.norms = n;
        }
        let t = file.tuning;
        cfg.tuning.q = t.q;
        cfg.tuning.grid_t = t.grid_t;
        cfg.tuning.l = t.l;
        cfg.tuning.l_prime = t.l_prime;
        if let Some(v) = t.var_threshold {
            cfg.tuning.var_threshold = v;
        }
        if let Some(v) = t.weight_threshold {
            cfg.tuning.weight_threshold = v;
        }
        if t.strict_boundary == Some(true) {
            cfg.tuning.boundary = BoundaryMode::Strict;
        }
        if let Some(w) = t.weight {
            cfg.tuning.weight_kind = w.parse()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Rejection rate of one (grid, distribution, p) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McCell {
    pub dims: Vec<usize>,
    pub distribution: String,
    pub p: usize,
    pub rejections: usize,
    /// Replications that completed.
    pub completed: usize,
    pub failures: usize,
    pub rate: f64,
    /// Monte Carlo standard error `sqrt(r (1 - r) / R)`.
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McStudyTable {
    pub config: McStudyConfig,
    pub cells: Vec<McCell>,
    /// Raw statistics per (grid, distribution): `stats[g][d][rep]` holds
    /// `T_p` for each requested `p`, or `None` if the replication failed.
    pub statistics: Vec<Vec<Vec<Option<Vec<f64>>>>>,
}

impl McStudyTable {
    pub fn cell(&self, dims: &[usize], distribution: &Distribution, p: usize) -> Option<&McCell> {
        let name = distribution.to_string();
        self.cells
            .iter()
            .find(|c| c.dims == dims && c.distribution == name && c.p == p)
    }

    /// Wide CSV: one row per distribution, a rate and an s.e. column per
    /// (grid, p) pair.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# replications={} alpha={} seed={} burnin={} k={}\n",
            self.config.replications,
            self.config.alpha,
            self.config.seed,
            self.config.burnin,
            self.config.basis_dim
        );
        let mut header = vec!["distribution".to_string()];
        for d in &self.config.dims {
            let tag = d
                .iter()
                .map(|n| n.to_string())
                .collect::<Vec<_>>()
                .join("x");
            for p in &self.config.p_values {
                header.push(format!("{tag}_p{p}"));
                header.push(format!("{tag}_p{p}_se"));
            }
        }
        header.push("failures".into());
        out.push_str(&header.join(","));
        out.push('\n');
        for dist in &self.config.distributions {
            let mut row = vec![dist.to_string()];
            let mut failures = 0;
            for d in &self.config.dims {
                for &p in &self.config.p_values {
                    let cell = self.cell(d, dist, p).expect("every cell is filled");
                    row.push(format!("{:.4}", cell.rate));
                    row.push(format!("{:.4}", cell.se));
                    if p == self.config.p_values[0] {
                        failures += cell.failures;
                    }
                }
            }
            row.push(failures.to_string());
            // distribution names contain commas
            row[0] = format!("\"{}\"", row[0]);
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Runs one replication and returns `T_p` for every requested `p`.
fn replicate(
    dims: &[usize],
    ops: &SarOperators,
    innovations: &InnovationSpec,
    cfg: &McStudyConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let sample = simulate_sar(dims, ops, innovations, cfg.burnin, rng)?;
    let p_max = *cfg.p_values.iter().max().expect("validated nonempty");
    let tuning = TestConfig {
        p: Some(p_max),
        ..cfg.tuning.clone()
    };
    let report = run_test_pipeline(&sample, &tuning)?;
    Ok(cfg
        .p_values
        .iter()
        .map(|&p| report.statistic_for(p))
        .collect())
}

/// Runs the study. The table is a deterministic function of `config`.
pub fn run_mc_study(config: &McStudyConfig) -> Result<McStudyTable> {
    config.validate()?;
    let ops = seeded_operators(config.seed, config.basis_dim, config.norms)?;
    let specs = config
        .distributions
        .iter()
        .map(|&d| InnovationSpec::new(d, config.basis_dim))
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    let mut statistics = Vec::new();
    for (gi, dims) in config.dims.iter().enumerate() {
        let mut per_grid = Vec::new();
        for (dist, spec) in config.distributions.iter().zip(&specs) {
            let stats: Vec<Option<Vec<f64>>> = (0..config.replications)
                .into_par_iter()
                .map(|rep| {
                    let mut rng = replication_rng(config.seed, gi, rep);
                    match replicate(dims, &ops, spec, config, &mut rng) {
                        Ok(t) => Some(t),
                        Err(e) => {
                            warn!("replication {rep} for {dist} on {dims:?} failed: {e}");
                            None
                        }
                    }
                })
                .collect();
            let failures = stats.iter().filter(|s| s.is_none()).count();
            let completed = stats.len() - failures;
            for (pi, &p) in config.p_values.iter().enumerate() {
                let rejections = stats
                    .iter()
                    .flatten()
                    .filter(|t| {
                        crate::numcore::chisq_sf(t[pi], 2 * p).is_ok_and(|pv| pv < config.alpha)
                    })
                    .count();
                let rate = if completed > 0 {
                    rejections as f64 / completed as f64
                } else {
                    f64::NAN
                };
                let se = (rate * (1.0 - rate) / completed.max(1) as f64).sqrt();
                cells.push(McCell {
                    dims: dims.clone(),
                    distribution: dist.to_string(),
                    p,
                    rejections,
                    completed,
                    failures,
                    rate,
                    se,
                });
            }
            per_grid.push(stats);
        }
        statistics.push(per_grid);
    }
    Ok(McStudyTable {
        config: config.clone(),
        cells,
        statistics,
    })
}
