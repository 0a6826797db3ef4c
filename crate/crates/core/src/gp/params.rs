use serde::{Deserialize, Serialize};

use crate::data::ScalerKind;
use crate::error::{Error, Result};
use crate::hyper::{LengthscaleField, NoiseField, DEFAULT_NOISE_FLOOR};
use crate::kernel::{KernelForm, KernelStack, StackEntry};
use crate::poly::{BasisKind, PceTerm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NoiseSpec {
    Fixed { value: f64 },
    Pce { bases: Vec<BasisKind>, floor: f64 },
}

impl NoiseSpec {
    pub fn pce(bases: Vec<BasisKind>) -> Self {
        NoiseSpec::Pce {
            bases,
            floor: DEFAULT_NOISE_FLOOR,
        }
    }
}

/// Structural choices fixed before hyperparameter search: kernels, bases,
/// noise mode and scalers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub kernels: Vec<KernelForm>,
    pub lengthscale_bases: Vec<BasisKind>,
    pub noise: NoiseSpec,
    pub input_scaler: ScalerKind,
    pub output_scaler: ScalerKind,
}

impl Default for ModelSpec {
    /// Four kernels, shifted Legendre lengthscales, noise fixed to 1e-4,
    /// min-max inputs and z-normalized output.
    fn default() -> Self {
        Self {
            kernels: KernelForm::all().to_vec(),
            lengthscale_bases: vec![BasisKind::LegendreShifted01],
            noise: NoiseSpec::Fixed { value: 1e-4 },
            input_scaler: ScalerKind::MinMax,
            output_scaler: ScalerKind::ZNormalize,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kernels.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one kernel".into()));
        }
        if self.lengthscale_bases.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one lengthscale basis".into()));
        }
        self.kernels.iter().try_for_each(KernelForm::validate)?;
        self.lengthscale_bases.iter().try_for_each(BasisKind::validate)?;
        match &self.noise {
            NoiseSpec::Fixed { value } if !(*value > 0.0) => {
                return Err(Error::InvalidArgument("fixed noise must be positive".into()))
            }
            NoiseSpec::Pce { bases, floor } => {
                if bases.is_empty() || !(*floor > 0.0) {
                    return Err(Error::InvalidArgument(
                        "noise expansion needs a basis and a positive floor".into(),
                    ));
                }
                bases.iter().try_for_each(BasisKind::validate)?;
            }
            _ => {}
        }
        Ok(())
    }

    pub fn n_kernels(&self) -> usize {
        self.kernels.len()
    }

    pub fn noise_bases(&self) -> &[BasisKind] {
        match &self.noise {
            NoiseSpec::Fixed { .. } => &[],
            NoiseSpec::Pce { bases, .. } => bases,
        }
    }

    pub fn has_noise_pce(&self) -> bool {
        matches!(self.noise, NoiseSpec::Pce { .. })
    }

    /// Coefficients per kernel for lengthscale degree `q`.
    pub fn lengthscale_len(&self, q: usize) -> usize {
        self.lengthscale_bases.len() * (q + 1)
    }

    pub fn noise_len(&self, r: Option<usize>) -> usize {
        match r {
            Some(r) => self.noise_bases().len() * (r + 1),
            None => 0,
        }
    }

    pub fn check_theta(&self, theta: &Theta) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if theta.lengthscale.len() != self.n_kernels() || theta.variances.len() != self.n_kernels() {
            return bad(format!(
                "theta describes {} kernels, model has {}",
                theta.lengthscale.len(),
                self.n_kernels()
            ));
        }
        let per_kernel = self.lengthscale_len(theta.q);
        if theta.lengthscale.iter().any(|c| c.len() != per_kernel) {
            return bad(format!("each kernel needs {per_kernel} lengthscale coefficients"));
        }
        if self.has_noise_pce() != theta.r.is_some() {
            return bad("noise degree must be present exactly when noise is an expansion".into());
        }
        if theta.noise.len() != self.noise_len(theta.r) {
            return bad(format!(
                "noise expansion needs {} coefficients, got {}",
                self.noise_len(theta.r),
                theta.noise.len()
            ));
        }
        if theta.variances.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("output scales must be positive".into());
        }
        Ok(())
    }

    fn split_terms(bases: &[BasisKind], coeffs: &[f64], degree: usize) -> Vec<PceTerm> {
        bases
            .iter()
            .zip(coeffs.chunks(degree + 1))
            .map(|(&b, c)| PceTerm::new(b, c.to_vec()))
            .collect()
    }

    /// Kernel stack and noise field for `theta` on `n_inputs`-dimensional data.
    pub fn build(&self, theta: &Theta, n_inputs: usize) -> Result<(KernelStack, NoiseField)> {
        self.check_theta(theta)?;
        let entries = self
            .kernels
            .iter()
            .zip(&theta.lengthscale)
            .zip(&theta.variances)
            .map(|((&form, coeffs), &variance)| {
                Ok(StackEntry {
                    form,
                    variance,
                    lengthscale: LengthscaleField::new(
                        Self::split_terms(&self.lengthscale_bases, coeffs, theta.q),
                        n_inputs,
                    )?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let stack = KernelStack::new(entries)?;
        let noise = match (&self.noise, theta.r) {
            (NoiseSpec::Fixed { value }, _) => NoiseField::fixed(*value)?,
            (NoiseSpec::Pce { bases, floor }, Some(r)) => {
                NoiseField::pce(Self::split_terms(bases, &theta.noise, r), *floor)?
            }
            (NoiseSpec::Pce { .. }, None) => unreachable!("checked by check_theta"),
        };
        Ok((stack, noise))
    }
}

/// Hyperparameters of one model: degrees, expansion coefficients and signal variances.
///
/// `lengthscale[k]` holds kernel `k`'s coefficients, basis-major with `q + 1`
/// entries per basis; `noise` is laid out the same way with `r + 1` per basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub q: usize,
    pub r: Option<usize>,
    pub lengthscale: Vec<Vec<f64>>,
    pub noise: Vec<f64>,
    pub variances: Vec<f64>,
}

impl Theta {
    /// Constant lengthscale `value` in every kernel (only the degree-0
    /// coefficient of the first basis set), unit variances, and a constant
    /// noise expansion `noise_value` when the model has one.
    pub fn constant(spec: &ModelSpec, q: usize, r: Option<usize>, value: f64, noise_value: f64) -> Self {
        let mut ls = vec![0.0; spec.lengthscale_len(q)];
        ls[0] = value;
        let r = if spec.has_noise_pce() { Some(r.unwrap_or(0)) } else { None };
        let mut noise = vec![0.0; spec.noise_len(r)];
        if let Some(first) = noise.first_mut() {
            *first = noise_value;
        }
        Self {
            q,
            r,
            lengthscale: vec![ls; spec.n_kernels()],
            noise,
            variances: vec![1.0; spec.n_kernels()],
        }
    }

    /// Number of continuous parameters refined by gradient descent.
    pub fn n_trainable(&self) -> usize {
        self.lengthscale.iter().map(Vec::len).sum::<usize>() + self.noise.len() + self.variances.len()
    }

    /// `[lengthscale coefficients..., noise coefficients..., ln(variance)...]`.
    pub fn to_trainable(&self) -> Vec<f64> {
        self.lengthscale
            .iter()
            .flatten()
            .chain(&self.noise)
            .copied()
            .chain(self.variances.iter().map(|v| v.ln()))
            .collect()
    }

    pub fn set_trainable(&mut self, params: &[f64]) {
        let mut it = params.iter().copied();
        for c in self.lengthscale.iter_mut().flatten() {
            *c = it.next().expect("trainable vector too short");
        }
        for c in &mut self.noise {
            *c = it.next().expect("trainable vector too short");
        }
        for v in &mut self.variances {
            *v = it.next().expect("trainable vector too short").exp();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_shapes() {
        let spec = ModelSpec {
            lengthscale_bases: vec![BasisKind::LegendreShifted01, BasisKind::HermiteProbabilists],
            noise: NoiseSpec::pce(vec![BasisKind::LegendreShifted01]),
            ..ModelSpec::default()
        };
        let theta = Theta::constant(&spec, 3, Some(2), 1.5, 0.01);
        assert_eq!(theta.lengthscale[0].len(), 8);
        assert_eq!(theta.noise.len(), 3);
        let (stack, noise) = spec.build(&theta, 5).unwrap();
        assert_eq!(stack.entries.len(), 4);
        assert_eq!(stack.entries[0].lengthscale.terms.len(), 2);
        assert_eq!(stack.entries[0].lengthscale.n_coefficients(), 8);
        assert_eq!(noise.n_coefficients(), 3);
        assert_eq!(stack.entries[2].lengthscale.eval(&[0.3; 5]).unwrap(), vec![1.5; 5]);
    }

    #[test]
    fn trainable_round_trip() {
        let spec = ModelSpec::default();
        let mut theta = Theta::constant(&spec, 2, None, 0.5, 0.0);
        theta.variances = vec![0.5, 1.0, 2.0, 4.0];
        let flat = theta.to_trainable();
        assert_eq!(flat.len(), theta.n_trainable());
        let mut back = Theta::constant(&spec, 2, None, 0.0, 0.0);
        back.set_trainable(&flat);
        assert_eq!(back.lengthscale, theta.lengthscale);
        for (a, b) in back.variances.iter().zip(&theta.variances) {
            assert!((a - b).abs() < 1e-15 * b);
        }
    }

    #[test]
    fn rejects_inconsistent_theta() {
        let spec = ModelSpec::default();
        let mut theta = Theta::constant(&spec, 2, None, 0.5, 0.0);
        theta.lengthscale[1].pop();
        assert!(spec.build(&theta, 2).is_err());
        let mut theta = Theta::constant(&spec, 2, None, 0.5, 0.0);
        theta.r = Some(1);
        assert!(spec.build(&theta, 2).is_err());
    }
}
