//! The k-fold hyperparameter search loop and Adam fine-tuning.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::space::{random_suggest, SearchSpace, SpaceBounds};
use super::tpe::{tpe_suggest, TpeConfig};
use super::stream_seed;
use crate::data::{make_folds, select_xy, ScalerState};
use crate::error::{Error, Result};
use crate::gp::{mll_gradient, ModelSpec, PcegpModel, Theta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Random,
    Tpe,
}

/// One evaluated hyperparameter suggestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_index: usize,
    pub stage: Stage,
    /// The suggested (not fine-tuned) hyperparameters.
    pub theta: Theta,
    /// Mean held-out negative log predictive density; `None` if the trial failed.
    pub loss: Option<f64>,
    pub fold_losses: Vec<f64>,
    pub failure: Option<String>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub n_trials: usize,
    /// Trials suggested by random search before TPE takes over.
    pub n_initial: usize,
    /// Adam iterations per fold and trial.
    pub n_iterations: usize,
    pub n_folds: usize,
    /// Fit scalers once on all search data instead of per training split.
    pub global_scaling: bool,
    pub bounds: SpaceBounds,
    pub tpe: TpeConfig,
    pub adam: AdamConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            n_trials: 100,
            n_initial: 20,
            n_iterations: 100,
            n_folds: 10,
            global_scaling: false,
            bounds: SpaceBounds::default(),
            tpe: TpeConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 || self.n_initial == 0 || self.n_initial > self.n_trials {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= n_initial <= n_trials, got {} and {}",
                self.n_initial, self.n_trials
            )));
        }
        if self.n_folds < 2 {
            return Err(Error::InvalidArgument("n_folds must be at least 2".into()));
        }
        self.tpe.validate()?;
        self.adam.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    /// Fine-tuned hyperparameters of the best trial (from its best fold).
    pub best_theta: Theta,
    pub best_loss: f64,
    pub best_trial: usize,
    pub history: Vec<TrialRecord>,
}

/// Runs `n_iterations` Adam steps on the negative MLL of scaled data.
///
/// Coefficients are optimized directly and sigma_f^2 through its logarithm;
/// degrees stay fixed. Returns the iterate with the lowest negative MLL seen
/// (the starting point included) and that value.
pub fn fine_tune(
    spec: &ModelSpec,
    theta: &Theta,
    xs: &DMatrix<f64>,
    ys: &DVector<f64>,
    n_iterations: usize,
    adam: &AdamConfig,
) -> Result<(Theta, f64)> {
    if xs.nrows() == 0 {
        return Err(Error::InvalidArgument("fine_tune needs training data".into()));
    }
    let mut params = theta.to_trainable();
    let mut state = AdamState::new(*adam, params.len());
    let mut work = theta.clone();
    let mut best: Option<(Theta, f64)> = None;
    for it in 0..=n_iterations {
        work.set_trainable(&params);
        let (stack, noise) = spec.build(&work, xs.ncols())?;
        let g = mll_gradient(&stack, &noise, xs, ys)?;
        let loss = -g.mll;
        if !loss.is_finite() {
            return Err(Error::Model(format!("non-finite MLL at iteration {it}")));
        }
        if best.as_ref().is_none_or(|(_, b)| loss < *b) {
            best = Some((work.clone(), loss));
        }
        if it == n_iterations {
            break;
        }
        let mut grad = g.flat();
        let n_var = work.variances.len();
        let offset = grad.len() - n_var;
        for (k, v) in work.variances.iter().enumerate() {
            grad[offset + k] *= v;
        }
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model(format!("non-finite gradient at iteration {it}")));
        }
        grad.iter_mut().for_each(|v| *v = -*v);
        state.step(&mut params, &grad);
    }
    Ok(best.expect("at least one evaluation"))
}

/// Fine-tunes `theta` on the training rows and scores the validation rows.
/// Returns the mean raw-unit negative log predictive density and the tuned theta.
pub fn evaluate_split(
    spec: &ModelSpec,
    theta: &Theta,
    x_raw: &DMatrix<f64>,
    y_raw: &DVector<f64>,
    train: &[usize],
    validation: &[usize],
    config: &SearchConfig,
    scalers: Option<&(ScalerState, ScalerState)>,
) -> Result<(f64, Theta)> {
    debug_assert!(train.iter().all(|i| !validation.contains(i)));
    let (xt, yt) = select_xy(x_raw, y_raw, train);
    let (in_s, out_s) = match scalers {
        Some((a, b)) => (a.clone(), b.clone()),
        None => fit_scalers(spec, &xt, &yt)?,
    };
    let xs = in_s.apply_matrix(&xt)?;
    let ys = out_s.apply_vector(&yt)?;
    let (tuned, _) = fine_tune(spec, theta, &xs, &ys, config.n_iterations, &config.adam)?;
    let (stack, noise) = spec.build(&tuned, xt.ncols())?;
    let model = PcegpModel::fit(stack, noise, in_s, out_s, &xt, &yt)?;
    let mut total = 0.0;
    for &i in validation {
        let row: Vec<f64> = x_raw.row(i).iter().copied().collect();
        total += model.predict(&row)?.neg_log_density(y_raw[i]);
    }
    let loss = total / validation.len() as f64;
    if !loss.is_finite() {
        return Err(Error::Model("non-finite validation loss".into()));
    }
    Ok((loss, tuned))
}

pub fn fit_scalers(
    spec: &ModelSpec,
    x_raw: &DMatrix<f64>,
    y_raw: &DVector<f64>,
) -> Result<(ScalerState, ScalerState)> {
    Ok((
        ScalerState::fit(spec.input_scaler, x_raw, &[])?,
        ScalerState::fit_vector(spec.output_scaler, y_raw, "target")?,
    ))
}

/// Random search for `n_initial` trials, then TPE, each trial scored by
/// k-fold cross-validation with per-fold Adam fine-tuning.
///
/// `on_trial` sees every record as soon as it is complete.
pub fn run_search(
    x_raw: &DMatrix<f64>,
    y_raw: &DVector<f64>,
    spec: &ModelSpec,
    config: &SearchConfig,
    seed: u64,
    on_trial: &mut dyn FnMut(&TrialRecord) -> Result<()>,
) -> Result<SearchOutcome> {
    config.validate()?;
    let space = SearchSpace::new(spec, &config.bounds)?;
    if x_raw.nrows() != y_raw.len() {
        return Err(Error::DimensionMismatch {
            expected: x_raw.nrows(),
            got: y_raw.len(),
        });
    }
    let plan = make_folds(x_raw.nrows(), config.n_folds, stream_seed(seed, 1))?;
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..config.n_folds).map(|k| plan.split(k)).collect();
    let global = if config.global_scaling {
        Some(fit_scalers(spec, x_raw, y_raw)?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 2));

    let mut history: Vec<TrialRecord> = Vec::with_capacity(config.n_trials);
    let mut best: Option<(f64, usize, Theta)> = None;
    for trial in 0..config.n_trials {
        let started = Instant::now();
        let completed = history.iter().filter(|t| t.loss.is_some()).count();
        let (stage, theta) = if trial < config.n_initial || completed < 2 {
            (Stage::Random, random_suggest(&space, &mut rng))
        } else {
            (Stage::Tpe, tpe_suggest(&history, &space, &config.tpe, &mut rng)?)
        };
        let results: Vec<Result<(f64, Theta)>> = splits
            .par_iter()
            .map(|(train, val)| evaluate_split(spec, &theta, x_raw, y_raw, train, val, config, global.as_ref()))
            .collect();
        let mut record = TrialRecord {
            trial_index: trial,
            stage,
            theta,
            loss: None,
            fold_losses: Vec::new(),
            failure: None,
            wall_time_s: 0.0,
        };
        match results.into_iter().collect::<Result<Vec<_>>>() {
            Ok(folds) => {
                record.fold_losses = folds.iter().map(|f| f.0).collect();
                let mean = record.fold_losses.iter().sum::<f64>() / folds.len() as f64;
                record.loss = Some(mean);
                if best.as_ref().is_none_or(|(b, _, _)| mean < *b) {
                    let (_, tuned) = folds
                        .into_iter()
                        .min_by(|a, b| a.0.total_cmp(&b.0))
                        .expect("at least two folds");
                    best = Some((mean, trial, tuned));
                }
            }
            Err(e) => {
                log::warn!("trial {trial} failed: {e}");
                record.failure = Some(e.to_string());
            }
        }
        record.wall_time_s = started.elapsed().as_secs_f64();
        log::info!(
            "trial {trial} ({:?}) q={} loss={:?}",
            record.stage,
            record.theta.q,
            record.loss
        );
        on_trial(&record)?;
        history.push(record);
    }
    match best {
        Some((best_loss, best_trial, best_theta)) => Ok(SearchOutcome {
            best_theta,
            best_loss,
            best_trial,
            history,
        }),
        None => Err(Error::AllTrialsFailed {
            n_trials: config.n_trials,
            last: history
                .last()
                .and_then(|t| t.failure.clone())
                .unwrap_or_default(),
        }),
    }
}

/// Appends one JSON line per record.
pub fn write_history_line(out: &mut impl Write, record: &TrialRecord) -> Result<()> {
    serde_json::to_writer(&mut *out, record)?;
    out.write_all(b"\n").map_err(|e| Error::io("<history>", e))
}

pub fn read_history(path: &Path) -> Result<Vec<TrialRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelForm;

    fn synthetic(n: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 / (n - 1) as f64);
        let y = DVector::from_fn(n, |i, _| {
            let t = x[(i, 0)];
            (6.0 * t).sin() + (0.05 + 0.2 * t) * (rng.random::<f64>() - 0.5)
        });
        (x, y)
    }

    fn small_spec() -> ModelSpec {
        ModelSpec {
            kernels: vec![KernelForm::SquaredExponential, KernelForm::Matern32],
            ..ModelSpec::default()
        }
    }

    fn small_config(n_trials: usize, n_initial: usize) -> SearchConfig {
        SearchConfig {
            n_trials,
            n_initial,
            n_iterations: 10,
            n_folds: 3,
            bounds: SpaceBounds {
                q_range: (0, 3),
                ..SpaceBounds::default()
            },
            ..SearchConfig::default()
        }
    }

    #[test]
    fn fine_tune_zero_iterations_is_identity() {
        let (x, y) = synthetic(20, 1);
        let spec = small_spec();
        let theta = Theta::constant(&spec, 2, None, 3.0, 0.0);
        let (out, _) = fine_tune(&spec, &theta, &x, &y, 0, &AdamConfig::default()).unwrap();
        assert_eq!(out, theta);
    }

    #[test]
    fn fine_tune_does_not_increase_loss_and_keeps_degrees() {
        let (x, y) = synthetic(30, 2);
        let spec = small_spec();
        let theta = Theta::constant(&spec, 2, None, 2.0, 0.0);
        let (stack, noise) = spec.build(&theta, 1).unwrap();
        let before = -crate::gp::mll(&stack, &noise, &x, &y).unwrap();
        let (out, after) = fine_tune(&spec, &theta, &x, &y, 50, &AdamConfig::default()).unwrap();
        assert!(after <= before + 1e-6, "{after} > {before}");
        assert!(after < before, "expected some progress");
        assert_eq!(out.q, theta.q);
        assert_eq!(out.r, theta.r);
    }

    #[test]
    fn single_random_trial() {
        let (x, y) = synthetic(24, 3);
        let out = run_search(&x, &y, &small_spec(), &small_config(1, 1), 7, &mut |_| Ok(())).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.history[0].stage, Stage::Random);
    }

    #[test]
    fn bookkeeping_and_determinism() {
        let (x, y) = synthetic(24, 4);
        let cfg = small_config(6, 3);
        let mut seen = Vec::new();
        let a = run_search(&x, &y, &small_spec(), &cfg, 11, &mut |r| {
            seen.push(r.trial_index);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, (0..6).collect::<Vec<_>>());
        assert_eq!(a.history.len(), 6);
        assert!(a.history[3..].iter().all(|t| t.stage == Stage::Tpe));
        let min = a
            .history
            .iter()
            .filter_map(|t| t.loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(a.best_loss, min);
        let b = run_search(&x, &y, &small_spec(), &cfg, 11, &mut |_| Ok(())).unwrap();
        let strip = |h: &[TrialRecord]| {
            h.iter()
                .map(|t| TrialRecord { wall_time_s: 0.0, ..t.clone() })
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a.history), strip(&b.history));
        assert_eq!(a.best_theta, b.best_theta);
    }

    #[test]
    fn history_file_round_trip() {
        let (x, y) = synthetic(20, 5);
        let out = run_search(&x, &y, &small_spec(), &small_config(3, 2), 1, &mut |_| Ok(())).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.jsonl");
        let mut f = std::fs::File::create(&path).unwrap();
        for r in &out.history {
            write_history_line(&mut f, r).unwrap();
        }
        drop(f);
        assert_eq!(read_history(&path).unwrap(), out.history);
    }

    #[test]
    fn rejects_bad_config() {
        let (x, y) = synthetic(20, 6);
        let cfg = SearchConfig {
            n_initial: 5,
            n_trials: 2,
            ..SearchConfig::default()
        };
        assert!(run_search(&x, &y, &small_spec(), &cfg, 0, &mut |_| Ok(())).is_err());
    }
}
