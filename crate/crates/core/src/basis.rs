//! Finite bases on [0, 1] in which curves are stored as coefficient vectors.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{cholesky, RealMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Fourier,
    Bspline,
}

impl std::fmt::Display for BasisKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BasisKind::Fourier => f.write_str("fourier"),
            BasisKind::Bspline => f.write_str("bspline"),
        }
    }
}

impl std::str::FromStr for BasisKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fourier" => Ok(BasisKind::Fourier),
            "bspline" | "b-spline" => Ok(BasisKind::Bspline),
            other => Err(Error::InvalidConfig(format!(
                "unknown basis kind '{other}'"
            ))),
        }
    }
}

const BSPLINE_ORDER: usize = 4;

/// A K-dimensional basis on [0, 1] together with its Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec {
    kind: BasisKind,
    dimension: usize,
    gram: RealMatrix,
    /// Lower Cholesky factor of the Gram matrix, `None` when orthonormal.
    gram_factor: Option<RealMatrix>,
}

impl BasisSpec {
    pub fn new(kind: BasisKind, dimension: usize) -> Result<Self> {
        match kind {
            BasisKind::Fourier => Self::fourier(dimension),
            BasisKind::Bspline => Self::bspline(dimension),
        }
    }

    /// Orthonormal Fourier basis `1, sqrt2 sin(2 pi u), sqrt2 cos(2 pi u), ...`.
    pub fn fourier(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidConfig(
                "basis dimension must be positive".into(),
            ));
        }
        Ok(Self {
            kind: BasisKind::Fourier,
            dimension,
            gram: RealMatrix::identity(dimension),
            gram_factor: None,
        })
    }

    /// Cubic B-splines with clamped, uniformly spaced knots.
    pub fn bspline(dimension: usize) -> Result<Self> {
        if dimension < BSPLINE_ORDER {
            return Err(Error::InvalidConfig(format!(
                "cubic B-spline basis needs at least {BSPLINE_ORDER} functions, got {dimension}"
            )));
        }
        let knots = clamped_knots(dimension);
        let gram = bspline_gram(&knots, dimension);
        let factor = cholesky(&gram)?;
        Ok(Self {
            kind: BasisKind::Bspline,
            dimension,
            gram,
            gram_factor: Some(factor),
        })
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn gram(&self) -> &RealMatrix {
        &self.gram
    }

    pub fn is_orthonormal(&self) -> bool {
        self.gram_factor.is_none()
    }

    /// Maps coefficients `c` to coordinates `L^T c` in which the L2 inner
    /// product becomes the Euclidean one (`G = L L^T`).
    pub fn to_orthonormal(&self, coeffs: &[f64]) -> Vec<f64> {
        match &self.gram_factor {
            None => coeffs.to_vec(),
            Some(l) => (0..self.dimension)
                .map(|i| (i..self.dimension).map(|k| l[(k, i)] * coeffs[k]).sum())
                .collect(),
        }
    }

    /// Values of all basis functions at `u`.
    pub fn evaluate(&self, u: f64) -> Vec<f64> {
        match self.kind {
            BasisKind::Fourier => fourier_values(u, self.dimension),
            BasisKind::Bspline => bspline_values(u, &clamped_knots(self.dimension), self.dimension),
        }
    }

    /// `M x K` design matrix at the given evaluation points.
    pub fn design_matrix(&self, points: &[f64]) -> RealMatrix {
        let mut out = RealMatrix::zeros(points.len(), self.dimension);
        let knots = match self.kind {
            BasisKind::Bspline => Some(clamped_knots(self.dimension)),
            BasisKind::Fourier => None,
        };
        for (r, &u) in points.iter().enumerate() {
            let vals = match &knots {
                None => fourier_values(u, self.dimension),
                Some(k) => bspline_values(u, k, self.dimension),
            };
            for (c, v) in vals.into_iter().enumerate() {
                out[(r, c)] = v;
            }
        }
        out
    }
}

fn fourier_values(u: f64, k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(k);
    out.push(1.0);
    let mut freq = 1;
    while out.len() < k {
        let arg = 2.0 * PI * freq as f64 * u;
        out.push(2f64.sqrt() * arg.sin());
        if out.len() < k {
            out.push(2f64.sqrt() * arg.cos());
        }
        freq += 1;
    }
    out
}

fn clamped_knots(dimension: usize) -> Vec<f64> {
    let interior = dimension - BSPLINE_ORDER;
    let spans = interior + 1;
    let mut knots = vec![0.0; BSPLINE_ORDER];
    knots.extend((1..spans).map(|i| i as f64 / spans as f64));
    knots.extend(std::iter::repeat_n(1.0, BSPLINE_ORDER));
    knots
}

/// Cox-de Boor recursion; the right end point belongs to the last span.
fn bspline_values(u: f64, knots: &[f64], dimension: usize) -> Vec<f64> {
    let u = u.clamp(0.0, 1.0);
    let nspans = knots.len() - 1;
    let mut b = vec![0.0; nspans];
    let last = knots
        .iter()
        .rposition(|&k| k < 1.0)
        .expect("knot vector has interior spans");
    for j in 0..nspans {
        let inside = if j == last {
            u >= knots[j] && u <= knots[j + 1]
        } else {
            u >= knots[j] && u < knots[j + 1]
        };
        if inside {
            b[j] = 1.0;
            break;
        }
    }
    for order in 2..=BSPLINE_ORDER {
        let mut next = vec![0.0; knots.len() - order];
        for j in 0..next.len() {
            let d1 = knots[j + order - 1] - knots[j];
            let d2 = knots[j + order] - knots[j + 1];
            let left = if d1 > 0.0 {
                (u - knots[j]) / d1 * b[j]
            } else {
                0.0
            };
            let right = if d2 > 0.0 {
                (knots[j + order] - u) / d2 * b[j + 1]
            } else {
                0.0
            };
            next[j] = left + right;
        }
        b = next;
    }
    b.truncate(dimension);
    b
}

/// Gauss-Legendre with 4 nodes per knot span is exact for products of cubics.
fn bspline_gram(knots: &[f64], dimension: usize) -> RealMatrix {
    const NODES: [f64; 4] = [
        -0.861_136_311_594_052_6,
        -0.339_981_043_584_856_3,
        0.339_981_043_584_856_3,
        0.861_136_311_594_052_6,
    ];
    const WEIGHTS: [f64; 4] = [
        0.347_854_845_137_453_9,
        0.652_145_154_862_546_1,
        0.652_145_154_862_546_1,
        0.347_854_845_137_453_9,
    ];
    let mut gram = RealMatrix::zeros(dimension, dimension);
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let half = (b - a) / 2.0;
        let mid = (a + b) / 2.0;
        for (x, wt) in NODES.iter().zip(WEIGHTS) {
            let vals = bspline_values(mid + half * x, knots, dimension);
            for i in 0..dimension {
                for j in 0..dimension {
                    gram[(i, j)] += wt * half * vals[i] * vals[j];
                }
            }
        }
    }
    gram
}
