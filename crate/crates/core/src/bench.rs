//! k-fold RMSE benchmark harness for the PCE-GP and the stationary baseline.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_csv, make_folds, read_table, select_xy, Dataset, ScalerState};
use crate::error::{Error, Result};
use crate::gp::{ArdGp, ArdSettings, ModelSpec, PcegpModel, Theta};
use crate::optim::{fine_tune, fit_scalers, run_search, stream_seed, SearchConfig};

/// Root mean squared error.
pub fn rmse(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: truths.len(),
            got: predictions.len(),
        });
    }
    if truths.is_empty() {
        return Err(Error::InvalidArgument("rmse of empty vectors".into()));
    }
    let mse = predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / truths.len() as f64;
    Ok(mse.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    pub target: String,
    /// Columns excluded from the inputs (e.g. other targets of a multi-output file).
    pub drop: Vec<String>,
}

impl DataConfig {
    pub fn load(&self) -> Result<Dataset> {
        if self.target.is_empty() {
            return Err(Error::InvalidArgument("data.target is not set".into()));
        }
        let mut columns = vec![self.target.as_str()];
        columns.extend(self.drop.iter().map(String::as_str));
        Ok(load_csv(&self.path, &columns)?.swap_remove(0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkMode {
    /// Hyperparameter search inside every outer fold, on its training portion only.
    #[default]
    Nested,
    /// One search over the whole dataset, then per-fold refinement and scoring.
    Single,
}

/// Everything a fit or benchmark run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub data: DataConfig,
    /// Outer folds.
    pub n_folds: usize,
    pub mode: BenchmarkMode,
    pub seed: u64,
    pub model: ModelSpec,
    pub search: SearchConfig,
    pub baseline: ArdSettings,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            n_folds: 10,
            mode: BenchmarkMode::Nested,
            seed: 0,
            model: ModelSpec::default(),
            search: SearchConfig::default(),
            baseline: ArdSettings::default(),
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_folds < 2 {
            return Err(Error::InvalidArgument("n_folds must be at least 2".into()));
        }
        self.model.validate()?;
        self.search.validate()
    }
}

/// Identity of a dataset file: name, shape and content hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub file_name: String,
    pub rows: usize,
    pub columns: usize,
    pub sha256: String,
}

impl DatasetManifest {
    pub fn for_file(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let table = read_table(path)?;
        Ok(Self {
            file_name: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            rows: table.rows.len(),
            columns: table.header.len(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pcegp,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineParams {
    pub lengthscales: Vec<f64>,
    pub variance: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Test RMSE in raw output units.
    pub rmse: f64,
    /// Cross-validated loss of the selected hyperparameters (nested mode).
    pub search_loss: Option<f64>,
    pub theta: Option<Theta>,
    pub baseline: Option<BaselineParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub method: Method,
    pub dataset: DatasetManifest,
    pub target: String,
    pub mode: BenchmarkMode,
    pub seed: u64,
    pub per_fold_rmse: Vec<f64>,
    pub mean_rmse: f64,
    /// Sample standard deviation across folds.
    pub std_rmse: f64,
    /// Search loss of the single global search (single mode only).
    pub global_search_loss: Option<f64>,
    pub folds: Vec<FoldResult>,
    pub config: BenchmarkConfig,
    /// Elapsed time; kept out of the serialized report so reruns compare byte-for-byte.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl BenchmarkReport {
    fn assemble(
        method: Method,
        config: &BenchmarkConfig,
        dataset: DatasetManifest,
        target: String,
        folds: Vec<FoldResult>,
        global_search_loss: Option<f64>,
        wall_time_s: f64,
    ) -> Self {
        let per_fold_rmse: Vec<f64> = folds.iter().map(|f| f.rmse).collect();
        let n = per_fold_rmse.len() as f64;
        let mean_rmse = per_fold_rmse.iter().sum::<f64>() / n;
        let std_rmse = if per_fold_rmse.len() > 1 {
            (per_fold_rmse.iter().map(|r| (r - mean_rmse).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            method,
            dataset,
            target,
            mode: config.mode,
            seed: config.seed,
            per_fold_rmse,
            mean_rmse,
            std_rmse,
            global_search_loss,
            folds,
            config: config.clone(),
            wall_time_s,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let method = match self.method {
            Method::Pcegp => "pcegp",
            Method::Baseline => "baseline (stationary ARD squared exponential)",
        };
        let _ = writeln!(out, "method:  {method}");
        let _ = writeln!(
            out,
            "dataset: {} ({} rows x {} columns, sha256 {})",
            self.dataset.file_name,
            self.dataset.rows,
            self.dataset.columns,
            &self.dataset.sha256[..self.dataset.sha256.len().min(12)]
        );
        let _ = writeln!(out, "target:  {}   seed: {}   mode: {:?}", self.target, self.seed, self.mode);
        let _ = writeln!(out, "{:>5} {:>8} {:>7} {:>12}", "fold", "n_train", "n_test", "rmse");
        for f in &self.folds {
            let _ = writeln!(out, "{:>5} {:>8} {:>7} {:>12.5}", f.fold, f.n_train, f.n_test, f.rmse);
        }
        let _ = writeln!(out, "mean rmse {:.5}  std {:.5}", self.mean_rmse, self.std_rmse);
        out
    }
}

/// Completed folds of an interrupted run, keyed by a hash of everything the
/// result depends on.
struct Checkpoint {
    path: PathBuf,
    done: BTreeMap<usize, FoldResult>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    resume_token: String,
}

fn resume_token(method: Method, config: &BenchmarkConfig, dataset: &DatasetManifest) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&(method, config, dataset))?);
    Ok(hex::encode(h.finalize()))
}

impl Checkpoint {
    fn open(path: &Path, token: &str) -> Result<Self> {
        let mut done = BTreeMap::new();
        if let Ok(file) = File::open(path) {
            let mut lines = BufReader::new(file).lines();
            let header: Option<CheckpointHeader> = lines
                .next()
                .and_then(|l| l.ok())
                .and_then(|l| serde_json::from_str(&l).ok());
            if header.is_some_and(|h| h.resume_token == token) {
                for line in lines.map_while(|l| l.ok()) {
                    // A torn final line from an interrupted write is ignored.
                    if let Ok(f) = serde_json::from_str::<FoldResult>(&line) {
                        done.insert(f.fold, f);
                    }
                }
                log::info!("resuming with {} completed folds from {}", done.len(), path.display());
            }
        }
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        let header = CheckpointHeader {
            resume_token: token.to_string(),
        };
        writeln!(file, "{}", serde_json::to_string(&header)?).map_err(|e| Error::io(path, e))?;
        for f in done.values() {
            writeln!(file, "{}", serde_json::to_string(f)?).map_err(|e| Error::io(path, e))?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            done,
        })
    }

    fn record(&mut self, fold: &FoldResult) -> Result<()> {
        let mut file = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        writeln!(file, "{}", serde_json::to_string(fold)?).map_err(|e| Error::io(&self.path, e))?;
        self.done.insert(fold.fold, fold.clone());
        Ok(())
    }
}

fn predict_rmse(model_predict: impl Fn(&[f64]) -> Result<f64>, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    let preds = (0..x.nrows())
        .map(|i| {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            model_predict(&row)
        })
        .collect::<Result<Vec<f64>>>()?;
    rmse(&preds, y.as_slice())
}

fn scalers_for(
    config: &BenchmarkConfig,
    data: &Dataset,
    x_train: &DMatrix<f64>,
    y_train: &DVector<f64>,
) -> Result<(ScalerState, ScalerState)> {
    if config.search.global_scaling {
        fit_scalers(&config.model, &data.inputs, &data.outputs)
    } else {
        fit_scalers(&config.model, x_train, y_train)
    }
}

/// Refines `theta` on the training portion and returns the fitted model.
pub fn refit(
    spec: &ModelSpec,
    theta: &Theta,
    scalers: (ScalerState, ScalerState),
    x_train: &DMatrix<f64>,
    y_train: &DVector<f64>,
    search: &SearchConfig,
) -> Result<(PcegpModel, Theta)> {
    let (in_s, out_s) = scalers;
    let xs = in_s.apply_matrix(x_train)?;
    let ys = out_s.apply_vector(y_train)?;
    let (tuned, _) = fine_tune(spec, theta, &xs, &ys, search.n_iterations, &search.adam)?;
    let (stack, noise) = spec.build(&tuned, x_train.ncols())?;
    Ok((PcegpModel::fit(stack, noise, in_s, out_s, x_train, y_train)?, tuned))
}

struct Prepared {
    started: Instant,
    data: Dataset,
    manifest: DatasetManifest,
    checkpoint: Option<Checkpoint>,
}

fn prepare(method: Method, config: &BenchmarkConfig, checkpoint: Option<&Path>) -> Result<Prepared> {
    config.validate()?;
    let started = Instant::now();
    let data = config.data.load()?;
    let manifest = DatasetManifest::for_file(&config.data.path)?;
    let checkpoint = match checkpoint {
        Some(p) => Some(Checkpoint::open(p, &resume_token(method, config, &manifest)?)?),
        None => None,
    };
    Ok(Prepared {
        started,
        data,
        manifest,
        checkpoint,
    })
}

fn run_folds(
    method: Method,
    config: &BenchmarkConfig,
    mut prep: Prepared,
    global_search_loss: Option<f64>,
    mut fold_fn: impl FnMut(&Dataset, usize, &[usize], &[usize]) -> Result<FoldResult>,
) -> Result<BenchmarkReport> {
    let plan = make_folds(prep.data.len(), config.n_folds, stream_seed(config.seed, 0))?;
    let mut folds = Vec::with_capacity(config.n_folds);
    for k in 0..config.n_folds {
        if let Some(f) = prep.checkpoint.as_ref().and_then(|c| c.done.get(&k)) {
            folds.push(f.clone());
            continue;
        }
        let (train, test) = plan.split(k);
        let result = fold_fn(&prep.data, k, &train, &test)?;
        log::info!("fold {k}: rmse {:.5}", result.rmse);
        if let Some(c) = prep.checkpoint.as_mut() {
            c.record(&result)?;
        }
        folds.push(result);
    }
    Ok(BenchmarkReport::assemble(
        method,
        config,
        prep.manifest,
        prep.data.target_name.clone(),
        folds,
        global_search_loss,
        prep.started.elapsed().as_secs_f64(),
    ))
}

/// Outer k-fold evaluation of the PCE-GP. Each completed fold is appended to
/// `checkpoint` (if given); a rerun with identical inputs resumes from it.
pub fn run_benchmark(config: &BenchmarkConfig, checkpoint: Option<&Path>) -> Result<BenchmarkReport> {
    let prep = prepare(Method::Pcegp, config, checkpoint)?;
    let global = match config.mode {
        BenchmarkMode::Nested => None,
        BenchmarkMode::Single => {
            let out = run_search(
                &prep.data.inputs,
                &prep.data.outputs,
                &config.model,
                &config.search,
                stream_seed(config.seed, 1),
                &mut |_| Ok(()),
            )?;
            Some((out.best_theta, out.best_loss))
        }
    };
    let global_loss = global.as_ref().map(|g| g.1);
    run_folds(Method::Pcegp, config, prep, global_loss, |data, k, train, test| {
        let (x_tr, y_tr) = select_xy(&data.inputs, &data.outputs, train);
        let (x_te, y_te) = select_xy(&data.inputs, &data.outputs, test);
        let (theta, search_loss) = match &global {
            Some((theta, _)) => (theta.clone(), None),
            None => {
                let out = run_search(
                    &x_tr,
                    &y_tr,
                    &config.model,
                    &config.search,
                    stream_seed(config.seed, 100 + k as u64),
                    &mut |_| Ok(()),
                )?;
                (out.best_theta, Some(out.best_loss))
            }
        };
        let scalers = scalers_for(config, data, &x_tr, &y_tr)?;
        let (model, tuned) = refit(&config.model, &theta, scalers, &x_tr, &y_tr, &config.search)?;
        let rmse = predict_rmse(|x| Ok(model.predict(x)?.mean), &x_te, &y_te)?;
        Ok(FoldResult {
            fold: k,
            n_train: train.len(),
            n_test: test.len(),
            rmse,
            search_loss,
            theta: Some(tuned),
            baseline: None,
        })
    })
}

/// Outer k-fold evaluation of the stationary ARD squared-exponential GP.
pub fn run_baseline(config: &BenchmarkConfig, checkpoint: Option<&Path>) -> Result<BenchmarkReport> {
    let prep = prepare(Method::Baseline, config, checkpoint)?;
    run_folds(Method::Baseline, config, prep, None, |data, k, train, test| {
            let (x_tr, y_tr) = select_xy(&data.inputs, &data.outputs, train);
            let (x_te, y_te) = select_xy(&data.inputs, &data.outputs, test);
            let (in_s, out_s) = scalers_for(config, data, &x_tr, &y_tr)?;
            let gp = ArdGp::train(&x_tr, &y_tr, in_s, out_s, &config.baseline)?;
            let rmse = predict_rmse(|x| Ok(gp.predict(x)?.mean), &x_te, &y_te)?;
            Ok(FoldResult {
                fold: k,
                n_train: train.len(),
                n_test: test.len(),
                rmse,
                search_loss: None,
                theta: None,
                baseline: Some(BaselineParams {
                    lengthscales: gp.lengthscales.clone(),
                    variance: gp.variance,
                    noise: gp.noise,
                }),
            })
    })
}
