//! Input-dependent hyperparameter fields driven by polynomial chaos expansions.
//!
//! A [`LengthscaleField`] maps a scaled input point to a lengthscale vector by
//! applying one shared expansion to every coordinate; a [`NoiseField`] maps it
//! to a noise variance by averaging an expansion over the coordinates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::PceTerm;

/// Fills `out` with every basis value of `terms` at `x`, concatenated in term order.
fn fill_features(terms: &[PceTerm], x: f64, out: &mut [f64]) {
    let mut offset = 0;
    for t in terms {
        let len = t.coefficients.len();
        t.basis.fill(x, &mut out[offset..offset + len]);
        offset += len;
    }
}

fn validate_terms(terms: &[PceTerm]) -> Result<()> {
    if terms.is_empty() {
        return Err(Error::InvalidArgument("expansion needs at least one basis".into()));
    }
    for t in terms {
        t.basis.validate()?;
        if t.coefficients.is_empty() {
            return Err(Error::InvalidArgument(
                "expansion term needs at least one coefficient".into(),
            ));
        }
        if t.coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite expansion coefficient".into()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthscaleField {
    pub terms: Vec<PceTerm>,
    pub n_inputs: usize,
}

impl LengthscaleField {
    pub fn new(terms: Vec<PceTerm>, n_inputs: usize) -> Result<Self> {
        validate_terms(&terms)?;
        if n_inputs == 0 {
            return Err(Error::InvalidArgument("lengthscale field needs n_inputs >= 1".into()));
        }
        Ok(Self { terms, n_inputs })
    }

    /// A single-basis field with only the constant coefficient set.
    pub fn constant(value: f64, n_inputs: usize) -> Self {
        Self {
            terms: vec![PceTerm::new(Default::default(), vec![value])],
            n_inputs,
        }
    }

    pub fn n_coefficients(&self) -> usize {
        self.terms.iter().map(|t| t.coefficients.len()).sum()
    }

    pub fn coefficients(&self) -> Vec<f64> {
        self.terms
            .iter()
            .flat_map(|t| t.coefficients.iter().copied())
            .collect()
    }

    pub fn set_coefficients(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in &mut self.terms {
            let len = t.coefficients.len();
            t.coefficients.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
    }

    fn check(&self, got: usize) -> Result<()> {
        if got != self.n_inputs {
            return Err(Error::DimensionMismatch {
                expected: self.n_inputs,
                got,
            });
        }
        Ok(())
    }

    /// Basis values of every coefficient at scalar `x`.
    pub fn features(&self, x: f64, out: &mut [f64]) {
        fill_features(&self.terms, x, out);
    }

    fn eval_unchecked(&self, point: &[f64], buf: &mut [f64], out: &mut [f64]) {
        let coeffs = self.terms.iter().flat_map(|t| t.coefficients.iter());
        for (o, &x) in out.iter_mut().zip(point) {
            self.features(x, buf);
            *o = coeffs.clone().zip(buf.iter()).map(|(c, p)| c * p).sum();
        }
    }

    pub fn eval(&self, point: &[f64]) -> Result<Vec<f64>> {
        self.check(point.len())?;
        let mut buf = vec![0.0; self.n_coefficients()];
        let mut out = vec![0.0; self.n_inputs];
        self.eval_unchecked(point, &mut buf, &mut out);
        Ok(out)
    }

    /// Lengthscales for every row of `points` (N x n_x), returned as n_x x N.
    pub fn eval_batch(&self, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(points.ncols())?;
        let mut buf = vec![0.0; self.n_coefficients()];
        let mut out = DMatrix::zeros(self.n_inputs, points.nrows());
        let mut row = vec![0.0; self.n_inputs];
        for (i, mut col) in out.column_iter_mut().enumerate() {
            for (j, r) in row.iter_mut().enumerate() {
                *r = points[(i, j)];
            }
            self.eval_unchecked(&row, &mut buf, col.as_mut_slice());
        }
        Ok(out)
    }

    /// `l(x) ⊙ x`, the warped point fed to a stationary profile.
    pub fn warp(&self, point: &[f64]) -> Result<Vec<f64>> {
        let mut l = self.eval(point)?;
        for (v, x) in l.iter_mut().zip(point) {
            *v *= x;
        }
        Ok(l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NoiseMode {
    Fixed { value: f64 },
    Pce { terms: Vec<PceTerm> },
}

pub const DEFAULT_NOISE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseField {
    pub mode: NoiseMode,
    pub floor: f64,
}

impl NoiseField {
    pub fn fixed(value: f64) -> Result<Self> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "fixed noise must be positive, got {value}"
            )));
        }
        Ok(Self {
            mode: NoiseMode::Fixed { value },
            floor: DEFAULT_NOISE_FLOOR.min(value),
        })
    }

    pub fn pce(terms: Vec<PceTerm>, floor: f64) -> Result<Self> {
        validate_terms(&terms)?;
        if !(floor > 0.0) {
            return Err(Error::InvalidArgument("noise floor must be positive".into()));
        }
        Ok(Self {
            mode: NoiseMode::Pce { terms },
            floor,
        })
    }

    pub fn n_coefficients(&self) -> usize {
        match &self.mode {
            NoiseMode::Fixed { .. } => 0,
            NoiseMode::Pce { terms } => terms.iter().map(|t| t.coefficients.len()).sum(),
        }
    }

    /// Coordinate-averaged basis values `(1/n_x) sum_j phi_c(x_j)` for each coefficient.
    pub fn features(&self, point: &[f64]) -> Vec<f64> {
        let NoiseMode::Pce { terms } = &self.mode else {
            return Vec::new();
        };
        let n = self.n_coefficients();
        let mut acc = vec![0.0; n];
        let mut buf = vec![0.0; n];
        for &x in point {
            fill_features(terms, x, &mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += b;
            }
        }
        let inv = 1.0 / point.len() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        acc
    }

    /// Noise before clamping; equals the fixed value in fixed mode.
    pub fn eval_raw(&self, point: &[f64]) -> f64 {
        match &self.mode {
            NoiseMode::Fixed { value } => *value,
            NoiseMode::Pce { terms } => {
                let coeffs = terms.iter().flat_map(|t| t.coefficients.iter());
                coeffs
                    .zip(self.features(point))
                    .map(|(c, f)| c * f)
                    .sum()
            }
        }
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        match &self.mode {
            NoiseMode::Fixed { value } => *value,
            NoiseMode::Pce { .. } => self.eval_raw(point).max(self.floor),
        }
    }

    /// Whether the floor is active at `point` (the noise gradient vanishes there).
    pub fn is_clamped(&self, point: &[f64]) -> bool {
        matches!(self.mode, NoiseMode::Pce { .. }) && self.eval_raw(point) <= self.floor
    }
}
