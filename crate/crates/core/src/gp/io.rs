//! Model persistence and the human-readable hyperparameter report.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ModelSpec, NoiseSpec, PcegpModel, Theta};
use crate::data::ScalerState;
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "pcegp-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingData {
    /// Where the data was loaded from, if anywhere.
    pub source: Option<String>,
    pub column_names: Vec<String>,
    pub target_name: String,
    /// Raw inputs, one row per point.
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<f64>,
}

impl TrainingData {
    pub fn matrices(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let n = self.inputs.len();
        let d = self.column_names.len();
        if self.outputs.len() != n || self.inputs.iter().any(|r| r.len() != d) {
            return Err(Error::Model("training data shape is inconsistent".into()));
        }
        Ok((
            DMatrix::from_fn(n, d, |r, c| self.inputs[r][c]),
            DVector::from_vec(self.outputs.clone()),
        ))
    }
}

/// Everything needed to rebuild a fitted model. Floats are written with
/// shortest round-trip formatting, so save/load is exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    pub spec: ModelSpec,
    pub theta: Theta,
    pub input_scaler: ScalerState,
    pub output_scaler: ScalerState,
    pub training: TrainingData,
}

impl ModelDocument {
    pub fn new(
        spec: ModelSpec,
        theta: Theta,
        input_scaler: ScalerState,
        output_scaler: ScalerState,
        training: TrainingData,
    ) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            spec,
            theta,
            input_scaler,
            output_scaler,
            training,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text)?;
        if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
            return Err(Error::Model(format!(
                "unsupported model format {} v{}",
                doc.format, doc.version
            )));
        }
        doc.spec.validate()?;
        doc.spec.check_theta(&doc.theta)?;
        Ok(doc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Rebuilds the fitted model (refactorizes the Gram matrix).
    pub fn to_model(&self) -> Result<PcegpModel> {
        let (x, y) = self.training.matrices()?;
        let (stack, noise) = self.spec.build(&self.theta, x.ncols())?;
        PcegpModel::fit(
            stack,
            noise,
            self.input_scaler.clone(),
            self.output_scaler.clone(),
            &x,
            &y,
        )
    }

    fn terms_line(out: &mut String, label: &str, coeffs: &[f64]) {
        let terms: Vec<String> = coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{c:?} · φ_{i}"))
            .collect();
        let _ = writeln!(out, "{label} = {}", terms.join(" + "));
    }

    /// Lists every expansion as explicit `coefficient · φ_i` terms.
    pub fn inspect_report(&self) -> String {
        let mut out = String::new();
        let t = &self.theta;
        let _ = writeln!(
            out,
            "inputs: {} ({}) -> {}",
            self.training.column_names.len(),
            self.training.column_names.join(", "),
            self.training.target_name
        );
        let _ = writeln!(out, "training points: {}", self.training.outputs.len());
        let _ = writeln!(out, "lengthscale degree q: {}", t.q);
        for (k, form) in self.spec.kernels.iter().enumerate() {
            let _ = writeln!(out, "kernel {k}: {form}");
            let _ = writeln!(out, "  output scale sigma_f^2: {:?}", t.variances[k]);
            for (b, basis) in self.spec.lengthscale_bases.iter().enumerate() {
                let chunk = &t.lengthscale[k][b * (t.q + 1)..(b + 1) * (t.q + 1)];
                Self::terms_line(&mut out, &format!("  lengthscale[{basis}]"), chunk);
            }
        }
        match (&self.spec.noise, t.r) {
            (NoiseSpec::Fixed { value }, _) => {
                let _ = writeln!(out, "noise: fixed {value:e}");
            }
            (NoiseSpec::Pce { bases, floor }, Some(r)) => {
                let _ = writeln!(out, "noise: expansion degree r: {r}, floor {floor:e}");
                for (b, basis) in bases.iter().enumerate() {
                    let chunk = &t.noise[b * (r + 1)..(b + 1) * (r + 1)];
                    Self::terms_line(&mut out, &format!("  noise[{basis}]"), chunk);
                }
            }
            (NoiseSpec::Pce { .. }, None) => {}
        }
        out
    }
}

/// Coefficients recovered from an inspect report.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InspectedModel {
    /// Per kernel: signal variance and the coefficient lists of each basis.
    pub kernels: Vec<(f64, Vec<Vec<f64>>)>,
    pub fixed_noise: Option<f64>,
    pub noise: Vec<Vec<f64>>,
}

fn parse_terms(rhs: &str) -> Result<Vec<f64>> {
    rhs.split(" + ")
        .enumerate()
        .map(|(i, term)| {
            let (coef, phi) = term
                .split_once(" · ")
                .ok_or_else(|| Error::Model(format!("bad term {term:?}")))?;
            if phi.trim() != format!("φ_{i}") {
                return Err(Error::Model(format!("term {i} labelled {phi:?}")));
            }
            coef.trim()
                .parse::<f64>()
                .map_err(|_| Error::Model(format!("bad coefficient {coef:?}")))
        })
        .collect()
}

pub fn parse_inspect_report(report: &str) -> Result<InspectedModel> {
    let mut model = InspectedModel::default();
    for line in report.lines() {
        let trimmed = line.trim();
        if trimmed.starts_with("kernel ") {
            model.kernels.push((f64::NAN, Vec::new()));
        } else if let Some(v) = trimmed.strip_prefix("output scale sigma_f^2: ") {
            let k = model
                .kernels
                .last_mut()
                .ok_or_else(|| Error::Model("output scale before kernel".into()))?;
            k.0 = v.parse().map_err(|_| Error::Model(format!("bad scale {v:?}")))?;
        } else if trimmed.starts_with("lengthscale[") {
            let (_, rhs) = trimmed
                .split_once(" = ")
                .ok_or_else(|| Error::Model(format!("bad line {line:?}")))?;
            let k = model
                .kernels
                .last_mut()
                .ok_or_else(|| Error::Model("lengthscale before kernel".into()))?;
            k.1.push(parse_terms(rhs)?);
        } else if let Some(v) = trimmed.strip_prefix("noise: fixed ") {
            model.fixed_noise = Some(v.parse().map_err(|_| Error::Model(format!("bad noise {v:?}")))?);
        } else if trimmed.starts_with("noise[") {
            let (_, rhs) = trimmed
                .split_once(" = ")
                .ok_or_else(|| Error::Model(format!("bad line {line:?}")))?;
            model.noise.push(parse_terms(rhs)?);
        }
    }
    Ok(model)
}
