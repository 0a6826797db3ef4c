//! Stationary covariance profiles, their warped non-stationary forms and the
//! summed kernel used by the GP.
//!
//! Every form is written as `variance * profile(r^2)` where `r` is the distance
//! between (possibly warped) inputs. The non-stationary forms evaluate the
//! profile at `||l(x) ⊙ x - l(x') ⊙ x'||` with the lengthscale field inside the
//! norm, so no division by a lengthscale occurs there.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyper::{LengthscaleField, NoiseField};

pub const DEFAULT_RQ_SHAPE: f64 = 1.0;

/// Diagonal jitter tried in order until the Cholesky factorization succeeds.
pub const JITTER_LADDER: [f64; 5] = [0.0, 1e-10, 1e-8, 1e-6, 1e-4];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum KernelForm {
    SquaredExponential,
    AbsoluteExponential,
    #[serde(rename = "matern_3_2")]
    Matern32,
    RationalQuadratic { shape: f64 },
}

impl fmt::Display for KernelForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelForm::SquaredExponential => write!(f, "squared_exponential"),
            KernelForm::AbsoluteExponential => write!(f, "absolute_exponential"),
            KernelForm::Matern32 => write!(f, "matern_3_2"),
            KernelForm::RationalQuadratic { shape } => write!(f, "rational_quadratic({shape})"),
        }
    }
}

const SQRT3: f64 = 1.732_050_807_568_877_2;

impl KernelForm {
    pub fn rational_quadratic() -> Self {
        KernelForm::RationalQuadratic {
            shape: DEFAULT_RQ_SHAPE,
        }
    }

    /// The four forms used by the default model, in stack order.
    pub fn all() -> [KernelForm; 4] {
        [
            KernelForm::SquaredExponential,
            KernelForm::AbsoluteExponential,
            KernelForm::Matern32,
            KernelForm::rational_quadratic(),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if let KernelForm::RationalQuadratic { shape } = *self {
            if !(shape > 0.0 && shape.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "rational quadratic shape must be positive, got {shape}"
                )));
            }
        }
        Ok(())
    }

    /// Unit-variance kernel value at squared distance `r2`.
    #[inline]
    pub fn profile(&self, r2: f64) -> f64 {
        match *self {
            KernelForm::SquaredExponential => (-0.5 * r2).exp(),
            KernelForm::AbsoluteExponential => (-r2.sqrt()).exp(),
            KernelForm::Matern32 => {
                let s = SQRT3 * r2.sqrt();
                (1.0 + s) * (-s).exp()
            }
            KernelForm::RationalQuadratic { shape } => (1.0 + r2 / (2.0 * shape)).powf(-shape),
        }
    }

    /// Profile value `f` and `g` with `d f / d diff_m = g * diff_m`, where
    /// `diff` is the coordinate difference whose squared norm is `r2`.
    ///
    /// The absolute exponential is not differentiable at `r = 0`; `g` is set to
    /// zero there (every `diff_m` vanishes anyway).
    #[inline]
    pub fn profile_and_slope(&self, r2: f64) -> (f64, f64) {
        match *self {
            KernelForm::SquaredExponential => {
                let f = (-0.5 * r2).exp();
                (f, -f)
            }
            KernelForm::AbsoluteExponential => {
                let r = r2.sqrt();
                let f = (-r).exp();
                (f, if r > 0.0 { -f / r } else { 0.0 })
            }
            KernelForm::Matern32 => {
                let s = SQRT3 * r2.sqrt();
                let e = (-s).exp();
                ((1.0 + s) * e, -3.0 * e)
            }
            KernelForm::RationalQuadratic { shape } => {
                let base = 1.0 + r2 / (2.0 * shape);
                let f = base.powf(-shape);
                (f, -f / base)
            }
        }
    }
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            got: b,
        });
    }
    Ok(())
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Stationary kernel with amplitude `scale` (so `k(x, x) = scale^2`).
pub fn kernel_stationary(
    form: KernelForm,
    scale: f64,
    lengthscale: f64,
    x: &[f64],
    x2: &[f64],
) -> Result<f64> {
    check_dims(x.len(), x2.len())?;
    form.validate()?;
    if !(lengthscale > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lengthscale must be positive, got {lengthscale}"
        )));
    }
    let r2 = squared_distance(x, x2) / (lengthscale * lengthscale);
    Ok(scale * scale * form.profile(r2))
}

/// Non-stationary kernel with amplitude `scale`: the stationary profile at the
/// warped points `l(x) ⊙ x` and `l(x') ⊙ x'`.
pub fn kernel_nonstationary(
    form: KernelForm,
    scale: f64,
    field: &LengthscaleField,
    x: &[f64],
    x2: &[f64],
) -> Result<f64> {
    check_dims(x.len(), x2.len())?;
    form.validate()?;
    let w1 = field.warp(x)?;
    let w2 = field.warp(x2)?;
    Ok(scale * scale * form.profile(squared_distance(&w1, &w2)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackEntry {
    pub form: KernelForm,
    /// Signal variance sigma_f^2 multiplying the profile.
    pub variance: f64,
    pub lengthscale: LengthscaleField,
}

/// Sum of non-stationary kernels `k_1 + ... + k_nk`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelStack {
    pub entries: Vec<StackEntry>,
}

impl KernelStack {
    pub fn new(entries: Vec<StackEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("kernel stack needs at least one entry".into()));
        }
        let n_inputs = entries[0].lengthscale.n_inputs;
        for e in &entries {
            e.form.validate()?;
            if !(e.variance > 0.0 && e.variance.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "output scale must be positive, got {}",
                    e.variance
                )));
            }
            check_dims(n_inputs, e.lengthscale.n_inputs)?;
        }
        Ok(Self { entries })
    }

    pub fn n_inputs(&self) -> usize {
        self.entries[0].lengthscale.n_inputs
    }

    /// `k(x, x)` for any x: the sum of signal variances.
    pub fn prior_variance(&self) -> f64 {
        self.entries.iter().map(|e| e.variance).sum()
    }

    pub fn describe(&self) -> String {
        self.entries
            .iter()
            .map(|e| {
                format!(
                    "{}(var={}, coeffs={:?})",
                    e.form,
                    e.variance,
                    e.lengthscale.coefficients()
                )
            })
            .collect::<Vec<_>>()
            .join(" + ")
    }

    pub fn kernel_sum(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        check_dims(self.n_inputs(), x.len())?;
        check_dims(self.n_inputs(), x2.len())?;
        let mut total = 0.0;
        for e in &self.entries {
            let w1 = e.lengthscale.warp(x)?;
            let w2 = e.lengthscale.warp(x2)?;
            total += e.variance * e.form.profile(squared_distance(&w1, &w2));
        }
        Ok(total)
    }

    /// Warped points of entry `k` for every row of `xs`, as an n_x x N matrix.
    pub fn warped_points(&self, k: usize, xs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut w = self.entries[k].lengthscale.eval_batch(xs)?;
        for i in 0..xs.nrows() {
            for j in 0..xs.ncols() {
                w[(j, i)] *= xs[(i, j)];
            }
        }
        Ok(w)
    }

    /// Noise-free covariance matrix of the rows of `xs`.
    pub fn covariance(&self, xs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dims(self.n_inputs(), xs.ncols())?;
        let n = xs.nrows();
        let mut k = DMatrix::zeros(n, n);
        for (idx, e) in self.entries.iter().enumerate() {
            let w = self.warped_points(idx, xs)?;
            for j in 0..n {
                let wj = w.column(j);
                for i in j..n {
                    let r2 = squared_distance(w.column(i).as_slice(), wj.as_slice());
                    let v = e.variance * e.form.profile(r2);
                    k[(i, j)] += v;
                    if i != j {
                        k[(j, i)] += v;
                    }
                }
            }
        }
        Ok(k)
    }

    /// Cross-covariance vector between the rows of `xs` and `x_star`.
    pub fn cross_vector(&self, xs: &DMatrix<f64>, x_star: &[f64]) -> Result<DVector<f64>> {
        check_dims(self.n_inputs(), xs.ncols())?;
        check_dims(self.n_inputs(), x_star.len())?;
        let n = xs.nrows();
        let mut out = DVector::zeros(n);
        for (idx, e) in self.entries.iter().enumerate() {
            let w = self.warped_points(idx, xs)?;
            let ws = e.lengthscale.warp(x_star)?;
            for i in 0..n {
                let r2 = squared_distance(w.column(i).as_slice(), &ws);
                out[i] += e.variance * e.form.profile(r2);
            }
        }
        Ok(out)
    }
}

pub struct GramResult {
    /// Gram matrix including noise and jitter.
    pub matrix: DMatrix<f64>,
    pub jitter_used: f64,
    pub factor: Cholesky<f64, Dyn>,
}

impl fmt::Debug for GramResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GramResult")
            .field("n", &self.matrix.nrows())
            .field("jitter_used", &self.jitter_used)
            .finish()
    }
}

/// Noise diagonal `sigma_n^2(x_i)` for every row.
pub fn noise_diagonal(noise: &NoiseField, xs: &DMatrix<f64>) -> DVector<f64> {
    let mut row = vec![0.0; xs.ncols()];
    DVector::from_iterator(
        xs.nrows(),
        (0..xs.nrows()).map(|i| {
            for (j, r) in row.iter_mut().enumerate() {
                *r = xs[(i, j)];
            }
            noise.eval(&row)
        }),
    )
}

/// Factorizes `k` after adding increasing diagonal jitter from [`JITTER_LADDER`].
pub fn factorize_with_jitter(
    mut k: DMatrix<f64>,
    context: impl FnOnce() -> String,
) -> Result<GramResult> {
    let mut applied = 0.0;
    for &jitter in &JITTER_LADDER {
        if jitter > applied {
            for i in 0..k.nrows() {
                k[(i, i)] += jitter - applied;
            }
            applied = jitter;
        }
        if let Some(factor) = Cholesky::new(k.clone()) {
            let diag_ok = factor.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0);
            if diag_ok {
                return Ok(GramResult {
                    matrix: k,
                    jitter_used: jitter,
                    factor,
                });
            }
        }
    }
    Err(Error::Factorization {
        jitter: applied,
        context: context(),
    })
}

/// `K(X) + diag(sigma_n^2(X))`, factorized.
pub fn gram_matrix(
    stack: &KernelStack,
    noise: &NoiseField,
    xs: &DMatrix<f64>,
) -> Result<GramResult> {
    if xs.nrows() == 0 {
        return Err(Error::InvalidArgument("gram matrix of zero points".into()));
    }
    let mut k = stack.covariance(xs)?;
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::Factorization {
            jitter: 0.0,
            context: format!("non-finite covariance entries; stack: {}", stack.describe()),
        });
    }
    let diag = noise_diagonal(noise, xs);
    for i in 0..k.nrows() {
        k[(i, i)] += diag[i];
    }
    factorize_with_jitter(k, || format!("stack: {}; noise: {:?}", stack.describe(), noise.mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::{BasisKind, PceTerm};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn field(coeffs: Vec<f64>, n: usize) -> LengthscaleField {
        LengthscaleField::new(vec![PceTerm::new(BasisKind::LegendreShifted01, coeffs)], n).unwrap()
    }

    fn stack_of(forms: &[KernelForm], coeffs: Vec<f64>, n: usize) -> KernelStack {
        KernelStack::new(
            forms
                .iter()
                .map(|&form| StackEntry {
                    form,
                    variance: 1.0,
                    lengthscale: field(coeffs.clone(), n),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn stationary_values() {
        for form in KernelForm::all() {
            assert_eq!(kernel_stationary(form, 1.0, 0.7, &[0.3, 0.1], &[0.3, 0.1]).unwrap(), 1.0);
            assert_relative_eq!(
                kernel_stationary(form, 2.0, 0.7, &[0.3], &[0.3]).unwrap(),
                4.0
            );
        }
        assert_relative_eq!(
            kernel_stationary(KernelForm::SquaredExponential, 1.0, 1.0, &[0.0], &[1.0]).unwrap(),
            0.6065306597126334,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            kernel_stationary(KernelForm::Matern32, 1.0, 1.0, &[0.0], &[1.0]).unwrap(),
            (1.0 + 3f64.sqrt()) * (-(3f64.sqrt())).exp(),
            epsilon = 1e-15
        );
        assert_relative_eq!(
            kernel_stationary(KernelForm::Matern32, 1.0, 1.0, &[0.0], &[1.0]).unwrap(),
            0.48335,
            epsilon = 1e-5
        );
        assert_relative_eq!(
            kernel_stationary(KernelForm::AbsoluteExponential, 1.0, 2.0, &[0.0], &[1.0]).unwrap(),
            (-0.5f64).exp(),
            epsilon = 1e-15
        );
        let rq = kernel_stationary(
            KernelForm::RationalQuadratic { shape: 1e4 },
            1.0,
            1.0,
            &[0.0],
            &[1.3],
        )
        .unwrap();
        let se = kernel_stationary(KernelForm::SquaredExponential, 1.0, 1.0, &[0.0], &[1.3]).unwrap();
        assert!((rq - se).abs() < 1e-3);
        assert!(kernel_stationary(KernelForm::SquaredExponential, 1.0, 1.0, &[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn nonstationary_examples() {
        for form in KernelForm::all() {
            let f = field(vec![0.4, -1.2, 0.3], 2);
            assert_relative_eq!(
                kernel_nonstationary(form, 1.5, &f, &[0.2, 0.9], &[0.2, 0.9]).unwrap(),
                2.25
            );
            let zero = field(vec![0.0; 3], 1);
            assert_eq!(kernel_nonstationary(form, 1.0, &zero, &[0.1], &[0.95]).unwrap(), 1.0);
        }
        let c2 = LengthscaleField::constant(2.0, 1);
        assert_relative_eq!(
            kernel_nonstationary(KernelForm::SquaredExponential, 1.0, &c2, &[0.0], &[1.0]).unwrap(),
            0.1353352832366127,
            epsilon = 1e-15
        );
    }

    #[test]
    fn stack_sums() {
        let one = stack_of(&[KernelForm::Matern32], vec![1.0, 0.5], 2);
        let two = stack_of(&[KernelForm::Matern32, KernelForm::Matern32], vec![1.0, 0.5], 2);
        let x = [0.1, 0.6];
        let y = [0.4, 0.2];
        let single = kernel_nonstationary(KernelForm::Matern32, 1.0, &one.entries[0].lengthscale, &x, &y)
            .unwrap();
        assert_relative_eq!(one.kernel_sum(&x, &y).unwrap(), single, epsilon = 1e-15);
        assert_relative_eq!(two.kernel_sum(&x, &y).unwrap(), 2.0 * single, epsilon = 1e-15);
        let four = stack_of(&KernelForm::all(), vec![0.3, 0.2, 0.1, 0.6, 0.2, 0.9], 3);
        assert_eq!(four.kernel_sum(&[0.5, 0.2, 0.1], &[0.5, 0.2, 0.1]).unwrap(), 4.0);
    }

    #[test]
    fn gram_single_point() {
        let s = stack_of(&KernelForm::all(), vec![1.0, 0.2], 2);
        let noise = NoiseField::fixed(1e-4).unwrap();
        let x = DMatrix::from_row_slice(1, 2, &[0.3, 0.7]);
        let g = gram_matrix(&s, &noise, &x).unwrap();
        assert_eq!(g.matrix.shape(), (1, 1));
        assert_relative_eq!(g.matrix[(0, 0)], 4.0 + 1e-4, epsilon = 1e-15);
        assert_eq!(g.jitter_used, 0.0);
    }

    #[test]
    fn jitter_rescues_duplicates() {
        let s = stack_of(&[KernelForm::SquaredExponential], vec![2.0], 1);
        let noise = NoiseField::fixed(1e-300).unwrap();
        let x = DMatrix::from_row_slice(3, 1, &[0.5, 0.5, 0.5]);
        let g = gram_matrix(&s, &noise, &x).unwrap();
        assert!(g.jitter_used > 0.0);
        assert!(JITTER_LADDER.contains(&g.jitter_used));
    }

    #[test]
    fn factorization_failure_reports_stack() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 1.0]);
        match factorize_with_jitter(k, || "stack: test".into()) {
            Err(Error::Factorization { jitter, context }) => {
                assert_eq!(jitter, 1e-4);
                assert!(context.contains("stack: test"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cross_vector_matches_loop() {
        let s = stack_of(&KernelForm::all(), vec![0.8, -0.4, 0.3], 2);
        let xs = DMatrix::from_fn(6, 2, |r, c| ((r + 2 * c) as f64 * 0.29).cos().abs());
        let star = [0.33, 0.81];
        let v = s.cross_vector(&xs, &star).unwrap();
        for i in 0..6 {
            let row: Vec<f64> = xs.row(i).iter().copied().collect();
            assert!((v[i] - s.kernel_sum(&row, &star).unwrap()).abs() <= 1e-14);
        }
        let row3: Vec<f64> = xs.row(3).iter().copied().collect();
        let at_row = s.cross_vector(&xs, &row3).unwrap();
        assert_eq!(at_row[3], s.kernel_sum(&row3, &row3).unwrap());
        let one = xs.rows(0, 1).into_owned();
        let row0: Vec<f64> = xs.row(0).iter().copied().collect();
        assert_eq!(
            s.cross_vector(&one, &star).unwrap()[0],
            s.kernel_sum(&row0, &star).unwrap()
        );
        assert!(s.cross_vector(&xs, &[0.1]).is_err());
    }

    #[test]
    fn slope_matches_finite_difference() {
        for form in KernelForm::all() {
            for &r2 in &[0.01f64, 0.3, 1.7, 5.0] {
                let d = r2.sqrt();
                let h = 1e-6;
                let fd = (form.profile((d + h) * (d + h)) - form.profile((d - h) * (d - h))) / (2.0 * h);
                let (_, g) = form.profile_and_slope(r2);
                assert_relative_eq!(g * d, fd, max_relative = 1e-6);
            }
        }
    }

    proptest! {
        #[test]
        fn symmetric_kernels(
            coeffs in prop::collection::vec(-2.0f64..2.0, 1..5),
            x in prop::collection::vec(0.0f64..1.0, 2),
            y in prop::collection::vec(0.0f64..1.0, 2),
        ) {
            let s = stack_of(&KernelForm::all(), coeffs, 2);
            prop_assert_eq!(s.kernel_sum(&x, &y).unwrap(), s.kernel_sum(&y, &x).unwrap());
            prop_assert_eq!(s.kernel_sum(&x, &x).unwrap(), s.prior_variance());
        }

        #[test]
        fn gram_symmetric(
            coeffs in prop::collection::vec(-2.0f64..2.0, 1..6),
            pts in prop::collection::vec(0.0f64..1.0, 30),
        ) {
            let s = stack_of(&KernelForm::all(), coeffs, 3);
            let xs = DMatrix::from_row_slice(10, 3, &pts);
            let g = gram_matrix(&s, &NoiseField::fixed(1e-4).unwrap(), &xs).unwrap();
            let asym = (&g.matrix - g.matrix.transpose()).amax();
            prop_assert!(asym <= 1e-12);
        }
    }
}
