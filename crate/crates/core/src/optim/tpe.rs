//! Tree-structured Parzen estimator over the fixed-length search vector.

use rand::Rng;
use rand_distr::{Distribution, Normal as NormalDist};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::space::{SearchSpace, Slot};
use super::TrialRecord;
use crate::error::{Error, Result};
use crate::gp::Theta;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TpeConfig {
    /// Fraction of completed trials forming the "good" set.
    pub gamma: f64,
    /// Candidates drawn from the good-set density per suggestion.
    pub n_candidates: usize,
}

impl Default for TpeConfig {
    fn default() -> Self {
        Self {
            gamma: 0.25,
            n_candidates: 24,
        }
    }
}

impl TpeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma > 0.0 && self.gamma < 1.0 && self.n_candidates > 0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid TPE settings {self:?}")))
        }
    }
}

/// Mixture of a uniform prior and truncated Gaussians centred on observations,
/// each with weight `1 / (n + 1)`.
struct Parzen {
    lo: f64,
    hi: f64,
    centers: Vec<f64>,
    bandwidth: f64,
}

impl Parzen {
    fn new(lo: f64, hi: f64, centers: Vec<f64>) -> Self {
        let width = hi - lo;
        let n = centers.len();
        let bandwidth = if n < 2 {
            0.1 * width
        } else {
            let mean = centers.iter().sum::<f64>() / n as f64;
            let var = centers.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            // Scott's rule.
            (var.sqrt() * (n as f64).powf(-0.2)).clamp(0.02 * width, width)
        };
        Self {
            lo,
            hi,
            centers,
            bandwidth,
        }
    }

    fn weight(&self) -> f64 {
        1.0 / (self.centers.len() + 1) as f64
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let pick = rng.random_range(0..=self.centers.len());
        if pick == self.centers.len() {
            return rng.random_range(self.lo..self.hi);
        }
        let normal = NormalDist::new(self.centers[pick], self.bandwidth).expect("positive bandwidth");
        for _ in 0..64 {
            let v = normal.sample(rng);
            if v >= self.lo && v < self.hi {
                return v;
            }
        }
        self.centers[pick].clamp(self.lo, self.hi)
    }

    fn log_pdf(&self, x: f64) -> f64 {
        let w = self.weight();
        let mut p = w / (self.hi - self.lo);
        for &c in &self.centers {
            let n = Normal::new(c, self.bandwidth).expect("positive bandwidth");
            let mass = n.cdf(self.hi) - n.cdf(self.lo);
            p += w * n.pdf(x) / mass.max(f64::MIN_POSITIVE);
        }
        p.ln()
    }
}

/// Categorical density over an integer range with add-one smoothing.
struct Categorical {
    lo: usize,
    weights: Vec<f64>,
}

impl Categorical {
    fn new((lo, hi): (usize, usize), observed: impl Iterator<Item = usize>) -> Self {
        let mut counts = vec![1.0; hi - lo + 1];
        for v in observed {
            counts[v - lo] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        Self {
            lo,
            weights: counts.into_iter().map(|c| c / total).collect(),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let mut u: f64 = rng.random();
        for (i, w) in self.weights.iter().enumerate() {
            if u < *w {
                return self.lo + i;
            }
            u -= w;
        }
        self.lo + self.weights.len() - 1
    }

    fn log_pmf(&self, v: usize) -> f64 {
        self.weights[v - self.lo].ln()
    }
}

struct Model {
    q: Categorical,
    r: Option<Categorical>,
    slots: Vec<Parzen>,
}

impl Model {
    fn fit(space: &SearchSpace, slots: &[Slot], trials: &[(&Theta, Vec<f64>)]) -> Self {
        let q = Categorical::new(space.q_range, trials.iter().map(|(t, _)| t.q));
        let r = space
            .r_range
            .map(|range| Categorical::new(range, trials.iter().filter_map(|(t, _)| t.r)));
        let slots = slots
            .iter()
            .enumerate()
            .map(|(i, &slot)| {
                let (lo, hi) = space.slot_range(slot);
                let centers = trials
                    .iter()
                    .filter(|(t, _)| SearchSpace::slot_active(slot, t.q, t.r))
                    .map(|(_, v)| v[i].clamp(lo, hi))
                    .collect();
                Parzen::new(lo, hi, centers)
            })
            .collect();
        Self { q, r, slots }
    }
}

/// Suggests the candidate maximizing `l(θ) / g(θ)` among `n_candidates`
/// draws from `l`, where `l` and `g` are fitted to the best `gamma` fraction
/// of completed trials and to the rest.
pub fn tpe_suggest<R: Rng + ?Sized>(
    history: &[TrialRecord],
    space: &SearchSpace,
    config: &TpeConfig,
    rng: &mut R,
) -> Result<Theta> {
    config.validate()?;
    let mut done: Vec<(&TrialRecord, f64)> = history
        .iter()
        .filter_map(|t| t.loss.map(|l| (t, l)))
        .collect();
    if done.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "TPE needs at least 2 completed trials, have {}",
            done.len()
        )));
    }
    done.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.trial_index.cmp(&b.0.trial_index)));
    let n_good = ((config.gamma * done.len() as f64).ceil() as usize).clamp(1, done.len() - 1);
    let encoded: Vec<(&Theta, Vec<f64>)> = done
        .iter()
        .map(|(t, _)| (&t.theta, space.encode(&t.theta)))
        .collect();
    let slots = space.slots();
    let good = Model::fit(space, &slots, &encoded[..n_good]);
    let bad = Model::fit(space, &slots, &encoded[n_good..]);

    let mut best: Option<(f64, Theta)> = None;
    for _ in 0..config.n_candidates {
        let q = good.q.sample(rng);
        let r = good.r.as_ref().map(|c| c.sample(rng));
        let mut score = good.q.log_pmf(q) - bad.q.log_pmf(q);
        if let (Some(gr), Some(br), Some(r)) = (&good.r, &bad.r, r) {
            score += gr.log_pmf(r) - br.log_pmf(r);
        }
        let values: Vec<f64> = slots
            .iter()
            .enumerate()
            .map(|(i, &slot)| {
                if SearchSpace::slot_active(slot, q, r) {
                    let v = good.slots[i].sample(rng);
                    score += good.slots[i].log_pdf(v) - bad.slots[i].log_pdf(v);
                    v
                } else {
                    f64::NAN
                }
            })
            .collect();
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, space.decode(q, r, &values)));
        }
    }
    Ok(best.expect("at least one candidate").1)
}
