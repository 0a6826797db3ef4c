use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{ModelSpec, Theta};
use crate::poly::BasisKind;

/// Highest polynomial degree the search may propose.
pub const MAX_SEARCH_DEGREE: usize = 16;

/// Bounds of the hyperparameter search, as read from configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpaceBounds {
    /// Inclusive range of the shared lengthscale degree q.
    pub q_range: (usize, usize),
    /// Inclusive range of the noise degree r (used only with a noise expansion).
    pub r_range: (usize, usize),
    /// Interval for every lengthscale coefficient.
    pub coeff_range: (f64, f64),
    /// Interval for every noise coefficient (scaled output units).
    pub noise_coeff_range: (f64, f64),
    /// Interval for sigma_f^2, sampled log-uniformly.
    pub scale_range: (f64, f64),
}

impl Default for SpaceBounds {
    fn default() -> Self {
        Self {
            q_range: (5, 10),
            r_range: (0, 2),
            coeff_range: (-2.0, 2.0),
            noise_coeff_range: (0.0, 0.1),
            scale_range: (1e-3, 10.0),
        }
    }
}

/// What one slot of the fixed-length search vector holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// Lengthscale coefficient of the given degree.
    Lengthscale { degree: usize },
    /// Noise coefficient of the given degree.
    Noise { degree: usize },
    /// Natural log of one kernel's sigma_f^2.
    LogScale,
}

/// The search space over `Theta` for one model structure.
///
/// Thetas are mapped onto a fixed-length vector laid out for the largest
/// admissible degrees; entries above the sampled degree are inactive.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub q_range: (usize, usize),
    pub r_range: Option<(usize, usize)>,
    pub coeff_range: (f64, f64),
    pub noise_coeff_range: (f64, f64),
    pub scale_range: (f64, f64),
    pub n_kernels: usize,
    pub bases: Vec<BasisKind>,
    pub noise_bases: Vec<BasisKind>,
}

fn check_interval(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if lo.is_finite() && hi.is_finite() && lo < hi {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must satisfy lo < hi, got ({lo}, {hi})")))
    }
}

fn check_degrees(name: &str, (lo, hi): (usize, usize)) -> Result<()> {
    if lo <= hi && hi <= MAX_SEARCH_DEGREE {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{name} must satisfy lo <= hi <= {MAX_SEARCH_DEGREE}, got ({lo}, {hi})"
        )))
    }
}

impl SearchSpace {
    pub fn new(spec: &ModelSpec, bounds: &SpaceBounds) -> Result<Self> {
        spec.validate()?;
        check_degrees("q_range", bounds.q_range)?;
        check_interval("coeff_range", bounds.coeff_range)?;
        check_interval("scale_range", bounds.scale_range)?;
        if bounds.scale_range.0 <= 0.0 {
            return Err(Error::InvalidArgument("scale_range must be positive".into()));
        }
        let r_range = if spec.has_noise_pce() {
            check_degrees("r_range", bounds.r_range)?;
            check_interval("noise_coeff_range", bounds.noise_coeff_range)?;
            Some(bounds.r_range)
        } else {
            None
        };
        Ok(Self {
            q_range: bounds.q_range,
            r_range,
            coeff_range: bounds.coeff_range,
            noise_coeff_range: bounds.noise_coeff_range,
            scale_range: bounds.scale_range,
            n_kernels: spec.n_kernels(),
            bases: spec.lengthscale_bases.clone(),
            noise_bases: spec.noise_bases().to_vec(),
        })
    }

    fn q_max(&self) -> usize {
        self.q_range.1
    }

    fn r_max(&self) -> Option<usize> {
        self.r_range.map(|r| r.1)
    }

    /// Slot kinds of the fixed-length vector: per kernel, per basis,
    /// degrees 0..=q_max; then per noise basis, degrees 0..=r_max; then one
    /// log scale per kernel.
    pub fn slots(&self) -> Vec<Slot> {
        let mut out = Vec::new();
        for _ in 0..self.n_kernels {
            for _ in &self.bases {
                out.extend((0..=self.q_max()).map(|degree| Slot::Lengthscale { degree }));
            }
        }
        if let Some(r_max) = self.r_max() {
            for _ in &self.noise_bases {
                out.extend((0..=r_max).map(|degree| Slot::Noise { degree }));
            }
        }
        out.extend(std::iter::repeat_n(Slot::LogScale, self.n_kernels));
        out
    }

    pub fn slot_range(&self, slot: Slot) -> (f64, f64) {
        match slot {
            Slot::Lengthscale { .. } => self.coeff_range,
            Slot::Noise { .. } => self.noise_coeff_range,
            Slot::LogScale => (self.scale_range.0.ln(), self.scale_range.1.ln()),
        }
    }

    pub fn slot_active(slot: Slot, q: usize, r: Option<usize>) -> bool {
        match slot {
            Slot::Lengthscale { degree } => degree <= q,
            Slot::Noise { degree } => r.is_some_and(|r| degree <= r),
            Slot::LogScale => true,
        }
    }

    /// Fixed-length vector for `theta`; inactive slots are NaN.
    pub fn encode(&self, theta: &Theta) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.slots().len());
        let q = theta.q;
        for coeffs in &theta.lengthscale {
            for chunk in coeffs.chunks(q + 1) {
                out.extend_from_slice(chunk);
                out.extend(std::iter::repeat_n(f64::NAN, self.q_max() - q));
            }
        }
        if let (Some(r_max), Some(r)) = (self.r_max(), theta.r) {
            for chunk in theta.noise.chunks(r + 1) {
                out.extend_from_slice(chunk);
                out.extend(std::iter::repeat_n(f64::NAN, r_max - r));
            }
        }
        out.extend(theta.variances.iter().map(|v| v.ln()));
        out
    }

    /// Inverse of [`encode`](Self::encode) for the given degrees.
    pub fn decode(&self, q: usize, r: Option<usize>, values: &[f64]) -> Theta {
        let mut it = values.iter().copied();
        let mut lengthscale = Vec::with_capacity(self.n_kernels);
        for _ in 0..self.n_kernels {
            let mut coeffs = Vec::with_capacity(self.bases.len() * (q + 1));
            for _ in &self.bases {
                let block: Vec<f64> = it.by_ref().take(self.q_max() + 1).collect();
                coeffs.extend_from_slice(&block[..=q]);
            }
            lengthscale.push(coeffs);
        }
        let mut noise = Vec::new();
        if let (Some(r_max), Some(r)) = (self.r_max(), r) {
            for _ in &self.noise_bases {
                let block: Vec<f64> = it.by_ref().take(r_max + 1).collect();
                noise.extend_from_slice(&block[..=r]);
            }
        }
        let variances = it.map(f64::exp).collect();
        Theta {
            q,
            r,
            lengthscale,
            noise,
            variances,
        }
    }

    /// Whether every degree and active coefficient of `theta` lies inside the bounds.
    pub fn contains(&self, theta: &Theta) -> bool {
        let (qlo, qhi) = self.q_range;
        if theta.q < qlo || theta.q > qhi {
            return false;
        }
        match (self.r_range, theta.r) {
            (Some((lo, hi)), Some(r)) if r >= lo && r <= hi => {}
            (None, None) => {}
            _ => return false,
        }
        self.slots()
            .into_iter()
            .zip(self.encode(theta))
            .filter(|(slot, _)| Self::slot_active(*slot, theta.q, theta.r))
            .all(|(slot, v)| {
                let (lo, hi) = self.slot_range(slot);
                // Log scales round-trip through exp/ln; allow for that.
                let tol = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
                v >= lo - tol && v <= hi + tol
            })
    }
}

/// Uniform degrees and coefficients, log-uniform output scales.
pub fn random_suggest<R: Rng + ?Sized>(space: &SearchSpace, rng: &mut R) -> Theta {
    let q = rng.random_range(space.q_range.0..=space.q_range.1);
    let r = space.r_range.map(|(lo, hi)| rng.random_range(lo..=hi));
    let values: Vec<f64> = space
        .slots()
        .into_iter()
        .map(|slot| {
            if SearchSpace::slot_active(slot, q, r) {
                let (lo, hi) = space.slot_range(slot);
                rng.random_range(lo..hi)
            } else {
                f64::NAN
            }
        })
        .collect();
    space.decode(q, r, &values)
}
