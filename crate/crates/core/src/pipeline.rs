//! The full test procedure: spectral estimate, SFPC filters and scores,
//! then the score-based normality test, with automatic tuning.

use crate::error::{Result, StageExt};
use crate::field::{center, FunctionalGridSample};
use crate::normtest::{jb_test, NormalityTestReport, VariancePolicy};
use crate::sfpca::{
    compute_filters, compute_scores, eigendecompose_field, select_l, select_p, BoundaryMode,
    EigenField, ScoreField, SfpcFilterBank,
};
use crate::spectral::{
    estimate_spectral_density_with, window_rule_of_thumb, FrequencyGrid, SpectralDensityField,
    WeightKind,
};
use crate::Error;

pub const DEFAULT_VAR_THRESHOLD: f64 = 0.85;
pub const DEFAULT_WEIGHT_THRESHOLD: f64 = 0.95;

/// Tuning of the test. `None` fields are chosen automatically.
#[derive(Debug, Clone, PartialEq)]
pub struct TestConfig {
    /// Lag window sizes, default `sqrt(n_i)`.
    pub q: Option<Vec<f64>>,
    /// Frequency nodes per dimension.
    pub grid_t: Option<usize>,
    /// Filter truncation lag, default from the weight threshold.
    pub l: Option<usize>,
    /// Lag range of the score autocovariances, default `ceil(max q_i)`.
    pub l_prime: Option<usize>,
    /// Number of levels, default from the variance threshold.
    pub p: Option<usize>,
    pub var_threshold: f64,
    pub weight_threshold: f64,
    pub boundary: BoundaryMode,
    pub variance_policy: VariancePolicy,
    pub weight_kind: WeightKind,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            q: None,
            grid_t: None,
            l: None,
            l_prime: None,
            p: None,
            var_threshold: DEFAULT_VAR_THRESHOLD,
            weight_threshold: DEFAULT_WEIGHT_THRESHOLD,
            boundary: BoundaryMode::Omit,
            variance_policy: VariancePolicy::Floor,
            weight_kind: WeightKind::Bartlett,
        }
    }
}

/// Every intermediate product of a pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub spectrum: SpectralDensityField,
    pub eigen: EigenField,
    /// Variance share of every level, `K` entries.
    pub proportions: Vec<f64>,
    pub filters: SfpcFilterBank,
    pub scores: ScoreField,
    pub report: NormalityTestReport,
}

/// Window and frequency grid for a sample under the given configuration.
pub fn resolve_window(dims: &[usize], cfg: &TestConfig) -> Result<(Vec<f64>, FrequencyGrid)> {
    let q = cfg.q.clone().unwrap_or_else(|| window_rule_of_thumb(dims));
    if q.len() != dims.len() {
        return Err(Error::InvalidConfig(format!(
            "window {q:?} does not match the {}-dimensional grid",
            dims.len()
        )));
    }
    let grid = match cfg.grid_t {
        Some(t) => FrequencyGrid::new(dims.len(), t)?,
        None => FrequencyGrid::for_window(dims.len(), &q)?,
    };
    Ok((q, grid))
}

/// Spectral density estimate of the centered sample.
pub fn estimate_spectrum(
    sample: &FunctionalGridSample,
    cfg: &TestConfig,
) -> Result<SpectralDensityField> {
    let centered = center(sample);
    let (q, grid) = resolve_window(sample.dims(), cfg).stage("window selection")?;
    estimate_spectral_density_with(&centered, &q, &grid, cfg.weight_kind)
        .stage("spectral density estimation")
}

pub fn run_pipeline(sample: &FunctionalGridSample, cfg: &TestConfig) -> Result<PipelineOutput> {
    let centered = center(sample);
    let k = sample.basis_dim();

    // (1) spectral density on an equidistant grid
    let (q, grid) = resolve_window(sample.dims(), cfg).stage("window selection")?;
    let spectrum = estimate_spectral_density_with(&centered, &q, &grid, cfg.weight_kind)
        .stage("spectral density estimation")?;

    // (2) number of levels from the explained variance
    let full = eigendecompose_field(&spectrum, k).stage("eigendecomposition")?;
    let proportions = full.variance_proportions();
    let p = match cfg.p {
        Some(p) if p == 0 || p > k => {
            return Err(
                Error::InvalidConfig(format!("p must be between 1 and {k}, got {p}"))
                    .at_stage("level selection"),
            )
        }
        Some(p) => p,
        None => select_p(&proportions, cfg.var_threshold),
    };
    let eigen = full.truncated(p);

    // (3) filter truncation lag from the captured filter weight
    let l = match cfg.l {
        Some(l) => l,
        None => {
            select_l(&eigen, cfg.weight_threshold, grid.max_lag()).stage("filter lag selection")?
        }
    };
    let filters = compute_filters(&eigen, l).stage("filter computation")?;

    // (4) score fields
    let scores = compute_scores(&centered, &filters, cfg.boundary).stage("score computation")?;

    // (5) the test
    let l_prime = cfg
        .l_prime
        .unwrap_or_else(|| q.iter().fold(0.0f64, |a, &b| a.max(b)).ceil() as usize);
    let mut report = jb_test(&scores, l_prime, cfg.variance_policy).stage("normality test")?;
    let echo = &mut report.tuning;
    echo.dims = sample.dims().to_vec();
    echo.basis = sample.basis().kind().to_string();
    echo.k = k;
    echo.q = q;
    echo.grid_t = grid.points_per_dim();
    echo.weight = cfg.weight_kind.to_string();
    echo.l = l;
    echo.var_threshold = cfg.var_threshold;
    echo.weight_threshold = cfg.weight_threshold;
    echo.strict_boundary = cfg.boundary == BoundaryMode::Strict;
    echo.explained = proportions.iter().take(p).sum();

    Ok(PipelineOutput {
        spectrum,
        eigen,
        proportions,
        filters,
        scores,
        report,
    })
}

/// Runs the whole procedure and returns only the report.
pub fn run_test_pipeline(
    sample: &FunctionalGridSample,
    cfg: &TestConfig,
) -> Result<NormalityTestReport> {
    run_pipeline(sample, cfg).map(|out| out.report)
}
