//! Jarque-Bera type test on SFPC score fields.
//!
//! For each level the scores are centered, the skewness and excess kurtosis
//! statistics `S = sqrt(N) m3` and `K = sqrt(N) (m4 - 3 m2^2)` are formed,
//! and each is standardized by a long-run variance built from the score
//! autocovariances: `var_S = sum_l gamma_l^3` and `var_K = sum_l gamma_l^4`
//! over the lag box `|l|_inf <= L'`. Because distinct levels are
//! uncorrelated at all lags, the per-level statistics add up to a
//! chi-squared limit with `2p` degrees of freedom.

use std::fmt::Write as _;

use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{lag_box, ScalarField};
use crate::numcore::chisq_sf;
use crate::sfpca::ScoreField;

/// `(1/N) sum_s z_s^k`.
pub fn sample_moment(values: &[f64], k: i32) -> f64 {
    values.iter().map(|v| v.powi(k)).sum::<f64>() / values.len() as f64
}

/// Skewness and kurtosis statistics `(S, K)` of a scalar field.
pub fn sk_statistics(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "skewness and kurtosis need at least 2 observations, got {n}"
        )));
    }
    let mean = sample_moment(values, 1);
    let z: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let m2 = sample_moment(&z, 2);
    let m3 = sample_moment(&z, 3);
    let m4 = sample_moment(&z, 4);
    let root_n = (n as f64).sqrt();
    Ok((root_n * m3, root_n * (m4 - 3.0 * m2 * m2)))
}

fn check_lag_range(field: &ScalarField, l_prime: usize) -> Result<()> {
    let min_dim = field.shape().dims().iter().copied().min().unwrap_or(0);
    if l_prime >= min_dim {
        return Err(Error::InvalidConfig(format!(
            "autocovariance lag range {l_prime} must be smaller than the smallest grid size {min_dim}"
        )));
    }
    Ok(())
}

/// Centered values and the lag-`h` autocovariance with divisor `N`.
fn autocov_centered(field: &ScalarField, z: &[f64], h: &[i64]) -> f64 {
    let mut acc = 0.0;
    field.shape().for_each_overlap(h, |s, t| acc += z[t] * z[s]);
    acc / field.len() as f64
}

fn centered(field: &ScalarField) -> Vec<f64> {
    let mean = sample_moment(field.values(), 1);
    field.values().iter().map(|v| v - mean).collect()
}

/// `gamma_h = (1/N) sum_{s in M_h} (Y_{s+h} - m1)(Y_s - m1)` for `|h|_inf <= L'`.
pub fn score_autocovariance(field: &ScalarField, h: &[i64], l_prime: usize) -> Result<f64> {
    check_lag_range(field, l_prime)?;
    if h.len() != field.shape().ndim() {
        return Err(Error::InvalidInput(format!(
            "lag {h:?} has the wrong dimension"
        )));
    }
    if h.iter().any(|v| v.unsigned_abs() as usize > l_prime) {
        return Err(Error::InvalidConfig(format!(
            "lag {h:?} exceeds the lag range {l_prime}"
        )));
    }
    Ok(autocov_centered(field, &centered(field), h))
}

/// What to do when the skewness long-run variance is not positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VariancePolicy {
    /// Replace it by `max(var_S, gamma_0^3 * 1e-6)` and warn.
    #[default]
    Floor,
    /// Fail with a numerical error.
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LongRunVariance {
    pub var_s: f64,
    pub var_k: f64,
    /// Whether `var_s` was floored.
    pub floored: bool,
}

/// `(sum gamma_l^3, sum gamma_l^4)` over the lag box `|l|_inf <= L'`.
pub fn longrun_variances(
    field: &ScalarField,
    l_prime: usize,
    policy: VariancePolicy,
) -> Result<LongRunVariance> {
    check_lag_range(field, l_prime)?;
    let z = centered(field);
    let ndim = field.shape().ndim();
    let mut gamma0 = 0.0;
    let (mut var_s, mut var_k) = (0.0, 0.0);
    for h in lag_box(&vec![l_prime; ndim]) {
        let g = autocov_centered(field, &z, &h);
        if h.iter().all(|&v| v == 0) {
            gamma0 = g;
        }
        var_s += g.powi(3);
        var_k += g.powi(4);
    }
    if !(gamma0 > 0.0) {
        return Err(Error::Numerical(
            "score field has zero variance; skewness and kurtosis are undefined".into(),
        ));
    }
    let mut floored = false;
    if !(var_s > 0.0) {
        if policy == VariancePolicy::Strict {
            return Err(Error::Numerical(format!(
                "long-run variance of the skewness statistic is {var_s:.3e} <= 0"
            )));
        }
        warn!("long-run variance of the skewness statistic is {var_s:.3e} <= 0; flooring it");
        var_s = var_s.max(gamma0.powi(3) * 1e-6);
        floored = true;
    }
    Ok(LongRunVariance {
        var_s,
        var_k,
        floored,
    })
}

/// Statistics of one score level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelStatistics {
    pub level: usize,
    #[serde(rename = "S")]
    pub s_hat: f64,
    #[serde(rename = "K")]
    pub k_hat: f64,
    #[serde(rename = "varS")]
    pub var_s: f64,
    #[serde(rename = "varK")]
    pub var_k: f64,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(skip)]
    pub floored: bool,
}

impl LevelStatistics {
    pub fn compute(
        level: usize,
        field: &ScalarField,
        l_prime: usize,
        policy: VariancePolicy,
    ) -> Result<Self> {
        let (s_hat, k_hat) = sk_statistics(field.values())?;
        let lrv = longrun_variances(field, l_prime, policy)?;
        let j = s_hat * s_hat / (6.0 * lrv.var_s) + k_hat * k_hat / (24.0 * lrv.var_k);
        Ok(Self {
            level,
            s_hat,
            k_hat,
            var_s: lrv.var_s,
            var_k: lrv.var_k,
            j,
            floored: lrv.floored,
        })
    }
}

/// Every tuning parameter that determined a test run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TuningEcho {
    pub dims: Vec<usize>,
    pub basis: String,
    pub k: usize,
    pub q: Vec<f64>,
    pub grid_t: usize,
    pub weight: String,
    pub p: usize,
    pub l: usize,
    pub l_prime: usize,
    pub var_threshold: f64,
    pub weight_threshold: f64,
    pub strict_boundary: bool,
    pub variance_policy: String,
    /// Share of variance explained by the retained levels.
    pub explained: f64,
}

impl TuningEcho {
    pub fn header_lines(&self) -> String {
        let list = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let dims = self
            .dims
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let mut out = String::new();
        let _ = writeln!(out, "# dims={dims} basis={} k={}", self.basis, self.k);
        let _ = writeln!(
            out,
            "# q={} grid_t={} weight={} p={} l={} l_prime={}",
            list(&self.q),
            self.grid_t,
            self.weight,
            self.p,
            self.l,
            self.l_prime
        );
        let _ = writeln!(
            out,
            "# var_threshold={} weight_threshold={} strict_boundary={} variance_policy={} explained={:.6}",
            self.var_threshold, self.weight_threshold, self.strict_boundary, self.variance_policy, self.explained
        );
        out
    }
}

/// Result of the normality test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalityTestReport {
    pub p: usize,
    pub levels: Vec<LevelStatistics>,
    #[serde(rename = "T")]
    pub t_hat: f64,
    pub df: usize,
    #[serde(rename = "pvalue")]
    pub p_value: f64,
    pub tuning: TuningEcho,
}

impl NormalityTestReport {
    /// Statistic using only the first `p` levels.
    pub fn statistic_for(&self, p: usize) -> f64 {
        self.levels.iter().take(p).map(|l| l.j).sum()
    }

    /// p-value of the test based on the first `p` levels.
    pub fn p_value_for(&self, p: usize) -> Result<f64> {
        if p == 0 || p > self.levels.len() {
            return Err(Error::InvalidInput(format!(
                "report has {} levels, asked for {p}",
                self.levels.len()
            )));
        }
        chisq_sf(self.statistic_for(p), 2 * p)
    }

    /// `RESULT T=... df=... p=...`
    pub fn result_line(&self) -> String {
        format!(
            "RESULT T={:.10} df={} p={:.10}",
            self.t_hat, self.df, self.p_value
        )
    }

    pub fn to_table(&self) -> String {
        let mut out = self.tuning.header_lines();
        let _ = writeln!(
            out,
            "{:>5} {:>12} {:>12} {:>12} {:>12} {:>12}",
            "level", "S", "K", "varS", "varK", "J"
        );
        for l in &self.levels {
            let _ = writeln!(
                out,
                "{:>5} {:>12.5} {:>12.5} {:>12.5e} {:>12.5e} {:>12.5}",
                l.level, l.s_hat, l.k_hat, l.var_s, l.var_k, l.j
            );
        }
        let _ = writeln!(
            out,
            "T = {:.6}, df = {}, p-value = {:.6}",
            self.t_hat, self.df, self.p_value
        );
        out.push_str(&self.result_line());
        out.push('\n');
        out
    }

    /// CSV with one row per level; `T`, `df` and `pvalue` are for the test
    /// using levels `1..=level`, so the last row is the full test.
    pub fn to_csv(&self) -> String {
        let mut out = self.tuning.header_lines();
        out.push_str("level,S,K,varS,varK,J,T,df,pvalue\n");
        let mut t = 0.0;
        for l in &self.levels {
            t += l.j;
            let df = 2 * l.level;
            let pv = chisq_sf(t, df).unwrap_or(f64::NAN);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                l.level, l.s_hat, l.k_hat, l.var_s, l.var_k, l.j, t, df, pv
            );
        }
        out
    }

    /// One JSON object per level with the same fields as the CSV.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        let mut t = 0.0;
        for l in &self.levels {
            t += l.j;
            let df = 2 * l.level;
            let row = serde_json::json!({
                "level": l.level,
                "S": l.s_hat,
                "K": l.k_hat,
                "varS": l.var_s,
                "varK": l.var_k,
                "J": l.j,
                "T": t,
                "df": df,
                "pvalue": chisq_sf(t, df).unwrap_or(f64::NAN),
            });
            out.push_str(&row.to_string());
            out.push('\n');
        }
        out
    }
}

/// Runs the test on all levels of a score field.
pub fn jb_test(
    scores: &ScoreField,
    l_prime: usize,
    policy: VariancePolicy,
) -> Result<NormalityTestReport> {
    let p = scores.levels();
    if p == 0 {
        return Err(Error::InvalidInput("score field has no levels".into()));
    }
    let levels = (0..p)
        .map(|m| LevelStatistics::compute(m + 1, &scores.level_field(m), l_prime, policy))
        .collect::<Result<Vec<_>>>()?;
    let t_hat: f64 = levels.iter().map(|l| l.j).sum();
    let df = 2 * p;
    let p_value = chisq_sf(t_hat, df)?;
    Ok(NormalityTestReport {
        p,
        levels,
        t_hat,
        df,
        p_value,
        tuning: TuningEcho {
            dims: scores.valid_dims(),
            l_prime,
            p,
            variance_policy: match policy {
                VariancePolicy::Floor => "floor".into(),
                VariancePolicy::Strict => "strict".into(),
            },
            ..TuningEcho::default()
        },
    })
}
