//! Univariate orthogonal polynomial families used as PCE bases.
//!
//! Every family is evaluated by its classical three-term recurrence with the
//! conventional (unnormalized) leading coefficients, so `phi_0 = 1`.
//! Orthogonality is with respect to a probability density:
//!
//! | family                  | support    | density                        |
//! |-------------------------|------------|--------------------------------|
//! | probabilists' Hermite   | R          | N(0, 1)                        |
//! | Legendre                | [-1, 1]    | 1/2                            |
//! | shifted Legendre        | [0, 1]     | 1                              |
//! | Jacobi(alpha, beta)     | [-1, 1]    | normalized (1-x)^a (1+x)^b     |
//! | Laguerre                | [0, inf)   | exp(-x)                        |

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BasisKind {
    HermiteProbabilists,
    #[default]
    #[serde(rename = "legendre_shifted_01")]
    LegendreShifted01,
    LegendreStandard,
    Jacobi { alpha: f64, beta: f64 },
    Laguerre,
}

impl fmt::Display for BasisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisKind::HermiteProbabilists => write!(f, "hermite_probabilists"),
            BasisKind::LegendreShifted01 => write!(f, "legendre_shifted_01"),
            BasisKind::LegendreStandard => write!(f, "legendre_standard"),
            BasisKind::Jacobi { alpha, beta } => write!(f, "jacobi({alpha},{beta})"),
            BasisKind::Laguerre => write!(f, "laguerre"),
        }
    }
}

impl BasisKind {
    /// Jacobi with the default parameters alpha = beta = 0.
    pub fn jacobi_default() -> Self {
        BasisKind::Jacobi {
            alpha: 0.0,
            beta: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let BasisKind::Jacobi { alpha, beta } = *self {
            if !(alpha > -1.0 && beta > -1.0) {
                return Err(Error::InvalidArgument(format!(
                    "jacobi parameters must exceed -1, got alpha={alpha}, beta={beta}"
                )));
            }
        }
        Ok(())
    }

    /// Writes `phi_0(x) ..= phi_{out.len()-1}(x)` into `out`.
    ///
    /// Assumes a validated kind.
    pub fn fill(&self, x: f64, out: &mut [f64]) {
        let n = out.len();
        if n == 0 {
            return;
        }
        out[0] = 1.0;
        if n == 1 {
            return;
        }
        match *self {
            BasisKind::HermiteProbabilists => {
                out[1] = x;
                for k in 1..n - 1 {
                    out[k + 1] = x * out[k] - k as f64 * out[k - 1];
                }
            }
            BasisKind::LegendreStandard => legendre(x, out),
            BasisKind::LegendreShifted01 => legendre(2.0 * x - 1.0, out),
            BasisKind::Laguerre => {
                out[1] = 1.0 - x;
                for k in 1..n - 1 {
                    let kf = k as f64;
                    out[k + 1] = ((2.0 * kf + 1.0 - x) * out[k] - kf * out[k - 1]) / (kf + 1.0);
                }
            }
            BasisKind::Jacobi { alpha: a, beta: b } => {
                out[1] = (a + 1.0) + (a + b + 2.0) * (x - 1.0) / 2.0;
                for m in 2..n {
                    let mf = m as f64;
                    let s = 2.0 * mf + a + b;
                    let c0 = 2.0 * mf * (mf + a + b) * (s - 2.0);
                    let c1 = (s - 1.0) * (s * (s - 2.0) * x + a * a - b * b);
                    let c2 = 2.0 * (mf + a - 1.0) * (mf + b - 1.0) * s;
                    out[m] = (c1 * out[m - 1] - c2 * out[m - 2]) / c0;
                }
            }
        }
    }

    /// Monic recurrence coefficients `(a_k, b_k)` of the family's orthogonal
    /// polynomials under its probability density, `k < n`.
    fn monic_recurrence(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        for k in 0..n {
            let kf = k as f64;
            match *self {
                BasisKind::HermiteProbabilists => b[k] = kf,
                BasisKind::LegendreStandard => b[k] = kf * kf / (4.0 * kf * kf - 1.0),
                BasisKind::LegendreShifted01 => {
                    a[k] = 0.5;
                    b[k] = kf * kf / (4.0 * (4.0 * kf * kf - 1.0));
                }
                BasisKind::Laguerre => {
                    a[k] = 2.0 * kf + 1.0;
                    b[k] = kf * kf;
                }
                BasisKind::Jacobi { alpha, beta } => {
                    let s = 2.0 * kf + alpha + beta;
                    a[k] = if k == 0 {
                        (beta - alpha) / (alpha + beta + 2.0)
                    } else {
                        (beta * beta - alpha * alpha) / (s * (s + 2.0))
                    };
                    b[k] = match k {
                        0 => 0.0,
                        1 => {
                            4.0 * (1.0 + alpha) * (1.0 + beta)
                                / ((2.0 + alpha + beta).powi(2) * (3.0 + alpha + beta))
                        }
                        _ => {
                            4.0 * kf * (kf + alpha) * (kf + beta) * (kf + alpha + beta)
                                / (s * s * (s + 1.0) * (s - 1.0))
                        }
                    };
                }
            }
        }
        b[0] = 0.0;
        (a, b)
    }
}

fn legendre(t: f64, out: &mut [f64]) {
    out[1] = t;
    for k in 1..out.len() - 1 {
        let kf = k as f64;
        out[k + 1] = ((2.0 * kf + 1.0) * t * out[k] - kf * out[k - 1]) / (kf + 1.0);
    }
}

/// Basis values: row `i` holds `phi_i` at every point.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisEval {
    pub kind: BasisKind,
    pub max_degree: usize,
    pub values: DMatrix<f64>,
}

pub fn eval_basis(kind: BasisKind, max_degree: usize, points: &[f64]) -> Result<BasisEval> {
    kind.validate()?;
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidArgument("non-finite evaluation point".into()));
    }
    let mut values = DMatrix::zeros(max_degree + 1, points.len());
    let mut buf = vec![0.0; max_degree + 1];
    for (j, &x) in points.iter().enumerate() {
        kind.fill(x, &mut buf);
        values.column_mut(j).copy_from_slice(&buf);
    }
    Ok(BasisEval {
        kind,
        max_degree,
        values,
    })
}

/// One basis family with its expansion coefficients; degree = `coefficients.len() - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PceTerm {
    pub basis: BasisKind,
    pub coefficients: Vec<f64>,
}

impl PceTerm {
    pub fn new(basis: BasisKind, coefficients: Vec<f64>) -> Self {
        Self {
            basis,
            coefficients,
        }
    }
}

/// `sum_b sum_i coeff[b][i] * phi_{i,b}(point)` over a superposition of bases.
pub fn eval_combination(terms: &[PceTerm], point: f64) -> Result<f64> {
    if terms.is_empty() {
        return Err(Error::InvalidArgument("empty basis combination".into()));
    }
    let mut total = 0.0;
    let mut buf = Vec::new();
    for term in terms {
        term.basis.validate()?;
        if term.coefficients.is_empty() {
            return Err(Error::InvalidArgument(
                "basis term needs at least one coefficient".into(),
            ));
        }
        buf.resize(term.coefficients.len(), 0.0);
        term.basis.fill(point, &mut buf);
        total += term
            .coefficients
            .iter()
            .zip(&buf)
            .map(|(c, p)| c * p)
            .sum::<f64>();
    }
    Ok(total)
}

/// Gauss rule with `n` nodes for the family's probability density
/// (weights sum to one). Exact for polynomials of degree `2n - 1`.
pub fn gauss_rule(kind: BasisKind, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    kind.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("gauss rule needs at least one node".into()));
    }
    let (a, b) = kind.monic_recurrence(n + 1);
    let jacobi = DMatrix::from_fn(n, n, |r, c| {
        if r == c {
            a[r]
        } else if r + 1 == c {
            b[c].sqrt()
        } else if c + 1 == r {
            b[r].sqrt()
        } else {
            0.0
        }
    });
    let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);

    // Christoffel weights 1 / sum_k p_k(x)^2 from the orthonormal recurrence:
    // accurate in the relative sense even where weights underflow-adjacent.
    let weights = nodes
        .iter()
        .map(|&x| {
            let mut prev = 0.0;
            let mut cur = 1.0;
            let mut sum = 1.0;
            for k in 0..n - 1 {
                let next = ((x - a[k]) * cur - b[k].sqrt() * prev) / b[k + 1].sqrt();
                prev = cur;
                cur = next;
                sum += cur * cur;
            }
            1.0 / sum
        })
        .collect();
    Ok((nodes, weights))
}

/// `integral phi_i phi_j p dx` by a Gauss rule matched to the family's density.
pub fn orthogonality_defect(kind: BasisKind, i: usize, j: usize, quad_points: usize) -> Result<f64> {
    let needed = (i + j) / 2 + 1;
    if quad_points < needed {
        return Err(Error::QuadratureTooSmall {
            points: quad_points,
            degree: i + j,
        });
    }
    let (nodes, weights) = gauss_rule(kind, quad_points)?;
    let deg = i.max(j);
    let mut buf = vec![0.0; deg + 1];
    Ok(nodes
        .iter()
        .zip(&weights)
        .map(|(&x, &w)| {
            kind.fill(x, &mut buf);
            w * buf[i] * buf[j]
        })
        .sum())
}
