//! Stationary ARD squared-exponential GP used as the comparison baseline.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::{log_det, Prediction, LN_2PI};
use crate::data::ScalerState;
use crate::error::{Error, Result};
use crate::kernel::factorize_with_jitter;
use crate::optim::{AdamConfig, AdamState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArdSettings {
    pub n_iterations: usize,
    pub adam: AdamConfig,
    pub init_lengthscale: f64,
    pub init_variance: f64,
    pub init_noise: f64,
    /// Lower bound on the learned noise variance (scaled units).
    pub min_noise: f64,
}

impl Default for ArdSettings {
    fn default() -> Self {
        Self {
            n_iterations: 300,
            adam: AdamConfig {
                step_size: 0.05,
                ..AdamConfig::default()
            },
            init_lengthscale: 0.5,
            init_variance: 1.0,
            init_noise: 1e-2,
            min_noise: 1e-6,
        }
    }
}

/// `k(x, x') = v exp(-1/2 sum_m (x_m - x'_m)^2 / l_m^2) + noise * [x = x']`.
#[derive(Clone)]
pub struct ArdGp {
    pub lengthscales: Vec<f64>,
    pub variance: f64,
    pub noise: f64,
    pub input_scaler: ScalerState,
    pub output_scaler: ScalerState,
    xs: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

struct Evaluation {
    mll: f64,
    /// Derivatives with respect to ln l_m, ln v and ln noise.
    grad: Vec<f64>,
}

fn se_cov(xs: &DMatrix<f64>, ls: &[f64], var: f64) -> DMatrix<f64> {
    let n = xs.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        let r2: f64 = ls
            .iter()
            .enumerate()
            .map(|(m, l)| ((xs[(i, m)] - xs[(j, m)]) / l).powi(2))
            .sum();
        var * (-0.5 * r2).exp()
    })
}

fn factor(xs: &DMatrix<f64>, ls: &[f64], var: f64, noise: f64) -> Result<Cholesky<f64, Dyn>> {
    let mut k = se_cov(xs, ls, var);
    for i in 0..k.nrows() {
        k[(i, i)] += noise;
    }
    Ok(factorize_with_jitter(k, || format!("ard baseline ls={ls:?} var={var} noise={noise}"))?.factor)
}

fn evaluate(xs: &DMatrix<f64>, ys: &DVector<f64>, ls: &[f64], var: f64, noise: f64) -> Result<Evaluation> {
    let n = xs.nrows();
    let kf = se_cov(xs, ls, var);
    let mut k = kf.clone();
    for i in 0..n {
        k[(i, i)] += noise;
    }
    let chol = factorize_with_jitter(k, || "ard baseline".into())?.factor;
    let alpha = chol.solve(ys);
    let mll = -0.5 * ys.dot(&alpha) - 0.5 * log_det(&chol) - 0.5 * n as f64 * LN_2PI;
    let mut w = chol.inverse();
    w.neg_mut();
    w.ger(1.0, &alpha, &alpha, 1.0);
    let mut grad = vec![0.0; ls.len() + 2];
    for j in 0..n {
        for i in 0..n {
            let c = 0.5 * w[(i, j)] * kf[(i, j)];
            for (m, l) in ls.iter().enumerate() {
                grad[m] += c * ((xs[(i, m)] - xs[(j, m)]) / l).powi(2);
            }
            grad[ls.len()] += c;
        }
        grad[ls.len() + 1] += 0.5 * w[(j, j)] * noise;
    }
    Ok(Evaluation { mll, grad })
}

impl ArdGp {
    /// Fits scalers on the raw data and maximizes the MLL over log
    /// lengthscales, log signal variance and log noise with Adam.
    pub fn train(
        x_raw: &DMatrix<f64>,
        y_raw: &DVector<f64>,
        input_scaler: ScalerState,
        output_scaler: ScalerState,
        settings: &ArdSettings,
    ) -> Result<Self> {
        if x_raw.nrows() != y_raw.len() || x_raw.nrows() == 0 {
            return Err(Error::InvalidArgument("baseline needs matching, non-empty data".into()));
        }
        let xs = input_scaler.apply_matrix(x_raw)?;
        let ys = output_scaler.apply_vector(y_raw)?;
        let d = xs.ncols();
        let mut params: Vec<f64> = std::iter::repeat_n(settings.init_lengthscale.ln(), d)
            .chain([settings.init_variance.ln(), settings.init_noise.ln()])
            .collect();
        let min_log_noise = settings.min_noise.ln();
        let unpack = |p: &[f64]| {
            let ls: Vec<f64> = p[..d].iter().map(|v| v.exp()).collect();
            (ls, p[d].exp(), p[d + 1].exp())
        };
        let mut adam = AdamState::new(settings.adam, params.len());
        for _ in 0..settings.n_iterations {
            let (ls, var, noise) = unpack(&params);
            let eval = evaluate(&xs, &ys, &ls, var, noise)?;
            let neg: Vec<f64> = eval.grad.iter().map(|g| -g).collect();
            adam.step(&mut params, &neg);
            params[d + 1] = params[d + 1].max(min_log_noise);
            log::trace!("ard mll {}", eval.mll);
        }
        let (lengthscales, variance, noise) = unpack(&params);
        let chol = factor(&xs, &lengthscales, variance, noise)?;
        let alpha = chol.solve(&ys);
        Ok(Self {
            lengthscales,
            variance,
            noise,
            input_scaler,
            output_scaler,
            xs,
            chol,
            alpha,
        })
    }

    pub fn mll_and_gradient(&self, ys: &DVector<f64>) -> Result<(f64, Vec<f64>)> {
        let e = evaluate(&self.xs, ys, &self.lengthscales, self.variance, self.noise)?;
        Ok((e.mll, e.grad))
    }

    pub fn predict(&self, x_raw: &[f64]) -> Result<Prediction> {
        let x = self.input_scaler.apply(x_raw)?;
        let n = self.xs.nrows();
        let k = DVector::from_fn(n, |i, _| {
            let r2: f64 = self
                .lengthscales
                .iter()
                .enumerate()
                .map(|(m, l)| ((self.xs[(i, m)] - x[m]) / l).powi(2))
                .sum();
            self.variance * (-0.5 * r2).exp()
        });
        let mean = k.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&k)
            .ok_or_else(|| Error::Factorization {
                jitter: 0.0,
                context: "baseline prediction".into(),
            })?;
        let var_s = (self.variance - v.norm_squared()).max(0.0) + self.noise;
        let (mean, variance) = self.output_scaler.inverse_scale_prediction(mean, var_s)?;
        Ok(Prediction { mean, variance })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ScalerKind;

    #[test]
    fn gradient_matches_finite_differences() {
        let xs = DMatrix::from_fn(8, 2, |r, c| ((r * 2 + c) as f64 * 0.77).sin() * 0.5 + 0.5);
        let ys = DVector::from_fn(8, |i, _| (3.0 * xs[(i, 0)]).sin() + xs[(i, 1)]);
        let p = [0.4f64.ln(), 0.7f64.ln(), 1.2f64.ln(), 0.05f64.ln()];
        let f = |p: &[f64]| {
            evaluate(&xs, &ys, &[p[0].exp(), p[1].exp()], p[2].exp(), p[3].exp())
                .unwrap()
                .mll
        };
        let e = evaluate(&xs, &ys, &[0.4, 0.7], 1.2, 0.05).unwrap();
        for i in 0..4 {
            let h = 1e-5;
            let mut a = p;
            a[i] += h;
            let mut b = p;
            b[i] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            assert!((fd - e.grad[i]).abs() <= 1e-6 * fd.abs().max(1.0), "{i}: {fd} vs {}", e.grad[i]);
        }
    }

    #[test]
    fn fits_linear_data() {
        let n = 50;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 / (n - 1) as f64 * 4.0);
        let y = DVector::from_fn(n, |i, _| 2.0 * x[(i, 0)] - 1.0);
        let input = ScalerState::fit(ScalerKind::MinMax, &x, &[]).unwrap();
        let output = ScalerState::fit_vector(ScalerKind::ZNormalize, &y, "y").unwrap();
        let gp = ArdGp::train(&x, &y, input, output, &ArdSettings::default()).unwrap();
        let p = gp.predict(&[1.37]).unwrap();
        assert!((p.mean - (2.0 * 1.37 - 1.0)).abs() < 0.05);
    }
}
