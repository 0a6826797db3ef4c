//! Exact GP inference: marginal log likelihood, its gradient in expansion
//! coefficient space, and posterior prediction.
//!
//! All solves reuse one Cholesky factor of the (jittered) Gram matrix.

mod ard;
mod io;
mod params;

pub use ard::{ArdGp, ArdSettings};
pub use io::{parse_inspect_report, InspectedModel, ModelDocument, TrainingData};
pub use params::{ModelSpec, NoiseSpec, Theta};

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::data::ScalerState;
use crate::error::{Error, Result};
use crate::hyper::NoiseField;
use crate::kernel::{gram_matrix, KernelStack};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn check_training(stack: &KernelStack, xs: &DMatrix<f64>, ys: &DVector<f64>) -> Result<()> {
    if xs.nrows() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.nrows(),
            got: ys.len(),
        });
    }
    if xs.ncols() != stack.n_inputs() {
        return Err(Error::DimensionMismatch {
            expected: stack.n_inputs(),
            got: xs.ncols(),
        });
    }
    Ok(())
}

fn log_det(factor: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * factor.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// `-1/2 y^T K^-1 y - 1/2 log|K| - N/2 log(2 pi)` on scaled data.
pub fn mll(stack: &KernelStack, noise: &NoiseField, xs: &DMatrix<f64>, ys: &DVector<f64>) -> Result<f64> {
    check_training(stack, xs, ys)?;
    let gram = gram_matrix(stack, noise, xs)?;
    let alpha = gram.factor.solve(ys);
    Ok(-0.5 * ys.dot(&alpha) - 0.5 * log_det(&gram.factor) - 0.5 * ys.len() as f64 * LN_2PI)
}

/// MLL and its partial derivatives.
///
/// `lengthscale[k][c]` is the derivative with respect to coefficient `c` of
/// kernel `k`, `noise[c]` with respect to noise coefficient `c` (empty for
/// fixed noise) and `variance[k]` with respect to sigma_f^2 of kernel `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MllGradient {
    pub mll: f64,
    pub lengthscale: Vec<Vec<f64>>,
    pub noise: Vec<f64>,
    pub variance: Vec<f64>,
}

impl MllGradient {
    /// Flattened in the order lengthscale (kernel-major), noise, variance.
    pub fn flat(&self) -> Vec<f64> {
        self.lengthscale
            .iter()
            .flatten()
            .chain(&self.noise)
            .chain(&self.variance)
            .copied()
            .collect()
    }
}

/// Gradient of the MLL through the warp `l(x) ⊙ x`:
/// `dMLL/dθ = 1/2 tr((α αᵀ - K⁻¹) ∂K/∂θ)`.
pub fn mll_gradient(
    stack: &KernelStack,
    noise: &NoiseField,
    xs: &DMatrix<f64>,
    ys: &DVector<f64>,
) -> Result<MllGradient> {
    check_training(stack, xs, ys)?;
    let n = xs.nrows();
    let nx = xs.ncols();
    let gram = gram_matrix(stack, noise, xs)?;
    let alpha = gram.factor.solve(ys);
    let value = -0.5 * ys.dot(&alpha) - 0.5 * log_det(&gram.factor) - 0.5 * n as f64 * LN_2PI;

    let mut w = gram.factor.inverse();
    w.neg_mut();
    w.ger(1.0, &alpha, &alpha, 1.0);

    let mut lengthscale = Vec::with_capacity(stack.entries.len());
    let mut variance = Vec::with_capacity(stack.entries.len());
    let mut g = DMatrix::<f64>::zeros(nx, n);
    let mut diff = vec![0.0; nx];
    for (k, entry) in stack.entries.iter().enumerate() {
        let warped = stack.warped_points(k, xs)?;
        g.fill(0.0);
        let mut dvar = 0.0;
        for j in 0..n {
            dvar += 0.5 * w[(j, j)];
            for i in (j + 1)..n {
                let mut r2 = 0.0;
                for m in 0..nx {
                    diff[m] = warped[(m, i)] - warped[(m, j)];
                    r2 += diff[m] * diff[m];
                }
                let (f, slope) = entry.form.profile_and_slope(r2);
                let wij = w[(i, j)];
                dvar += wij * f;
                let c = wij * entry.variance * slope;
                if c != 0.0 {
                    for m in 0..nx {
                        g[(m, i)] += c * diff[m];
                        g[(m, j)] -= c * diff[m];
                    }
                }
            }
        }
        variance.push(dvar);

        let field = &entry.lengthscale;
        let mut grad = vec![0.0; field.n_coefficients()];
        let mut feats = vec![0.0; grad.len()];
        for i in 0..n {
            for m in 0..nx {
                let gim = g[(m, i)];
                if gim == 0.0 {
                    continue;
                }
                let x = xs[(i, m)];
                field.features(x, &mut feats);
                for (gc, phi) in grad.iter_mut().zip(&feats) {
                    *gc += gim * phi * x;
                }
            }
        }
        lengthscale.push(grad);
    }

    let mut noise_grad = vec![0.0; noise.n_coefficients()];
    if !noise_grad.is_empty() {
        let mut row = vec![0.0; nx];
        for i in 0..n {
            for (m, r) in row.iter_mut().enumerate() {
                *r = xs[(i, m)];
            }
            if noise.is_clamped(&row) {
                continue;
            }
            let half_wii = 0.5 * w[(i, i)];
            for (gc, f) in noise_grad.iter_mut().zip(noise.features(&row)) {
                *gc += half_wii * f;
            }
        }
    }

    Ok(MllGradient {
        mll: value,
        lengthscale,
        noise: noise_grad,
        variance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

impl Prediction {
    /// Gaussian negative log predictive density of `y`.
    pub fn neg_log_density(&self, y: f64) -> f64 {
        let var = self.variance.max(f64::MIN_POSITIVE);
        0.5 * ((2.0 * PI * var).ln() + (y - self.mean).powi(2) / var)
    }
}

/// A fitted model: scaled training data plus the factorized Gram matrix.
#[derive(Clone)]
pub struct PcegpModel {
    pub stack: KernelStack,
    pub noise: NoiseField,
    pub input_scaler: ScalerState,
    pub output_scaler: ScalerState,
    pub xs: DMatrix<f64>,
    pub ys: DVector<f64>,
    pub chol: Cholesky<f64, Dyn>,
    pub alpha_solve: DVector<f64>,
    pub jitter_used: f64,
}

impl std::fmt::Debug for PcegpModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PcegpModel")
            .field("stack", &self.stack)
            .field("noise", &self.noise)
            .field("n_train", &self.xs.nrows())
            .field("jitter_used", &self.jitter_used)
            .finish()
    }
}

impl PcegpModel {
    /// Scales the raw training data with the given fitted scalers and
    /// precomputes the Cholesky factor and `K^-1 y_s`.
    pub fn fit(
        stack: KernelStack,
        noise: NoiseField,
        input_scaler: ScalerState,
        output_scaler: ScalerState,
        x_raw: &DMatrix<f64>,
        y_raw: &DVector<f64>,
    ) -> Result<Self> {
        if input_scaler.dim() != x_raw.ncols() || output_scaler.dim() != 1 {
            return Err(Error::InvalidArgument(format!(
                "scalers fitted for {} inputs / {} outputs, data has {} inputs",
                input_scaler.dim(),
                output_scaler.dim(),
                x_raw.ncols()
            )));
        }
        let xs = input_scaler.apply_matrix(x_raw)?;
        let ys = output_scaler.apply_vector(y_raw)?;
        check_training(&stack, &xs, &ys)?;
        let gram = gram_matrix(&stack, &noise, &xs)?;
        let alpha_solve = gram.factor.solve(&ys);
        Ok(Self {
            stack,
            noise,
            input_scaler,
            output_scaler,
            xs,
            ys,
            chol: gram.factor,
            alpha_solve,
            jitter_used: gram.jitter_used,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.xs.ncols()
    }

    pub fn mll(&self) -> f64 {
        -0.5 * self.ys.dot(&self.alpha_solve)
            - 0.5 * log_det(&self.chol)
            - 0.5 * self.ys.len() as f64 * LN_2PI
    }

    /// Posterior mean and latent variance (without the noise term) at a scaled point.
    pub fn posterior_scaled(&self, x_s: &[f64]) -> Result<(f64, f64)> {
        let k = self.stack.cross_vector(&self.xs, x_s)?;
        let kss = self.stack.kernel_sum(x_s, x_s)?;
        let mean = k.dot(&self.alpha_solve);
        let v = self.chol.l_dirty().solve_lower_triangular(&k).ok_or_else(|| {
            Error::Factorization {
                jitter: self.jitter_used,
                context: "triangular solve in prediction".into(),
            }
        })?;
        Ok((mean, (kss - v.norm_squared()).max(0.0)))
    }

    /// Predictive mean and variance (noise included) in scaled output units.
    pub fn predict_scaled(&self, x_s: &[f64]) -> Result<Prediction> {
        let (mean, latent) = self.posterior_scaled(x_s)?;
        Ok(Prediction {
            mean,
            variance: latent + self.noise.eval(x_s),
        })
    }

    /// Prediction at a raw input point, returned in raw output units.
    pub fn predict(&self, x_raw: &[f64]) -> Result<Prediction> {
        let x_s = self.input_scaler.apply(x_raw)?;
        let p = self.predict_scaled(&x_s)?;
        let (mean, variance) = self.output_scaler.inverse_scale_prediction(p.mean, p.variance)?;
        Ok(Prediction { mean, variance })
    }

    pub fn predict_rows(&self, x_raw: &DMatrix<f64>) -> Result<Vec<Prediction>> {
        (0..x_raw.nrows())
            .map(|i| {
                let row: Vec<f64> = x_raw.row(i).iter().copied().collect();
                self.predict(&row)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ScalerKind, ScalerState};
    use crate::hyper::LengthscaleField;
    use crate::kernel::{KernelForm, StackEntry};
    use approx::assert_relative_eq;

    fn single(form: KernelForm, ls: f64, var: f64, nx: usize) -> KernelStack {
        KernelStack::new(vec![StackEntry {
            form,
            variance: var,
            lengthscale: LengthscaleField::constant(ls, nx),
        }])
        .unwrap()
    }

    #[test]
    fn mll_closed_forms() {
        // A zero field makes k(x, x') = variance for every pair; one point gives K = [var + noise].
        let stack = single(KernelForm::SquaredExponential, 0.0, 1.0 - 1e-12, 1);
        let noise = NoiseField::fixed(1e-12).unwrap();
        let x = DMatrix::from_row_slice(1, 1, &[0.3]);
        let v0 = mll(&stack, &noise, &x, &DVector::from_vec(vec![0.0])).unwrap();
        assert_relative_eq!(v0, -0.9189385332046727, epsilon = 1e-12);
        let v1 = mll(&stack, &noise, &x, &DVector::from_vec(vec![1.0])).unwrap();
        assert_relative_eq!(v1, -1.4189385332046727, epsilon = 1e-12);
    }

    #[test]
    fn zero_targets_drop_data_fit() {
        let stack = single(KernelForm::Matern32, 2.0, 0.8, 2);
        let noise = NoiseField::fixed(1e-2).unwrap();
        let x = DMatrix::from_row_slice(3, 2, &[0.1, 0.2, 0.5, 0.9, 0.8, 0.4]);
        let y0 = DVector::zeros(3);
        let g = gram_matrix(&stack, &noise, &x).unwrap();
        let expect = -0.5 * log_det(&g.factor) - 1.5 * LN_2PI;
        assert_relative_eq!(mll(&stack, &noise, &x, &y0).unwrap(), expect, epsilon = 1e-14);

        // d/d sigma_f^2 at y = 0 is -1/2 tr(K^-1 dK/dsigma_f^2).
        let grad = mll_gradient(&stack, &noise, &x, &y0).unwrap();
        let kf = stack.covariance(&x).unwrap() / 0.8;
        let tr = (g.factor.inverse() * kf).trace();
        assert_relative_eq!(grad.variance[0], -0.5 * tr, epsilon = 1e-12);
    }

    #[test]
    fn constant_kernel_has_no_lengthscale_gradient() {
        let stack = single(KernelForm::SquaredExponential, 0.0, 1.0, 2);
        let noise = NoiseField::fixed(1e-2).unwrap();
        let x = DMatrix::from_row_slice(4, 2, &[0.1, 0.2, 0.5, 0.9, 0.8, 0.4, 0.3, 0.3]);
        let grad = mll_gradient(&stack, &noise, &x, &DVector::zeros(4)).unwrap();
        assert!(grad.lengthscale[0].iter().all(|g| g.abs() < 1e-14));
    }

    #[test]
    fn one_point_prediction() {
        let stack = single(KernelForm::SquaredExponential, 1.0, 1.0, 1);
        let noise = NoiseField::fixed(1e-300).unwrap();
        let x = DMatrix::from_row_slice(2, 1, &[0.5, 0.5]);
        let model = PcegpModel::fit(
            stack,
            noise,
            ScalerState::identity(1),
            ScalerState::identity(1),
            &x.rows(0, 1).into_owned(),
            &DVector::from_vec(vec![2.0]),
        )
        .unwrap();
        let p = model.predict_scaled(&[0.5]).unwrap();
        assert_relative_eq!(p.mean, 2.0, epsilon = 1e-12);
        assert!(p.variance.abs() < 1e-12);
    }

    #[test]
    fn far_field_reverts_to_prior() {
        let stack = single(KernelForm::SquaredExponential, 1.0, 1.3, 1);
        let noise = NoiseField::fixed(1e-4).unwrap();
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 0.5, 1.0]);
        let y = DVector::from_vec(vec![1.0, 3.0, 2.0]);
        let out = ScalerState::fit_vector(ScalerKind::ZNormalize, &y, "y").unwrap();
        let mean_y = out.params[0].0;
        let std_y = out.params[0].1;
        let model = PcegpModel::fit(stack, noise, ScalerState::identity(1), out, &x, &y).unwrap();
        let p = model.predict(&[1e3]).unwrap();
        assert_relative_eq!(p.mean, mean_y, epsilon = 1e-12);
        assert_relative_eq!(p.variance, (1.3 + 1e-4) * std_y * std_y, epsilon = 1e-10);
    }

    #[test]
    fn duplicate_points_with_noise() {
        let stack = single(KernelForm::AbsoluteExponential, 1.0, 1.0, 2);
        let noise = NoiseField::fixed(1e-4).unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[0.2, 0.4, 0.2, 0.4]);
        let y = DVector::from_vec(vec![1.0, 1.1]);
        let m = PcegpModel::fit(
            stack,
            noise,
            ScalerState::identity(2),
            ScalerState::identity(1),
            &x,
            &y,
        )
        .unwrap();
        assert_eq!(m.jitter_used, 0.0);
    }
}
