//! Evaluation metrics and the structured report produced by held-out
//! evaluation: per-dimension and aggregate MSE/NMSE, active component count,
//! and mean predictive log density.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::MixturePosterior;
use crate::predict::{PredictOptions, Predictor};

/// Per-dimension mean squared error between prediction rows and target rows.
pub fn mse_per_dim(predictions: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<Vec<f64>> {
    if predictions.shape() != targets.shape() {
        return Err(Error::invalid(format!(
            "prediction shape {:?} differs from target shape {:?}",
            predictions.shape(),
            targets.shape()
        )));
    }
    if predictions.nrows() == 0 {
        return Err(Error::invalid("mse needs at least one row"));
    }
    let n = predictions.nrows() as f64;
    Ok((0..predictions.ncols())
        .map(|j| {
            (0..predictions.nrows())
                .map(|i| (predictions[(i, j)] - targets[(i, j)]).powi(2))
                .sum::<f64>()
                / n
        })
        .collect())
}

/// Per-dimension normalized MSE: MSE divided by the population variance of
/// the targets in that dimension. A zero-variance target dimension makes the
/// metric undefined and is reported as an error rather than silently scaled.
pub fn nmse_per_dim(predictions: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<Vec<f64>> {
    let mse = mse_per_dim(predictions, targets)?;
    let n = targets.nrows() as f64;
    let mut out = Vec::with_capacity(mse.len());
    for (j, &m) in mse.iter().enumerate() {
        let mean = targets.column(j).sum() / n;
        let var = targets
            .column(j)
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n;
        if var <= 0.0 {
            return Err(Error::data(format!(
                "nmse undefined: target dimension {j} has zero variance"
            )));
        }
        out.push(m / var);
    }
    Ok(out)
}

/// Held-out evaluation summary. Aggregate `mse` and `nmse` are the means of
/// the per-dimension values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_dim_mse: Vec<f64>,
    pub per_dim_nmse: Vec<f64>,
    pub mse: f64,
    pub nmse: f64,
    pub active_components: usize,
    pub mean_log_density: f64,
    pub n_test: usize,
    pub seed: u64,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::MalformedPayload(format!("report serialization failed: {e}")))
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let vec_str = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:.6e}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        writeln!(f, "{:<22} {}", "n_test", self.n_test)?;
        writeln!(f, "{:<22} {}", "active_components", self.active_components)?;
        writeln!(f, "{:<22} {:.6e}", "mse", self.mse)?;
        writeln!(f, "{:<22} {:.6e}", "nmse", self.nmse)?;
        writeln!(f, "{:<22} {:.6}", "mean_log_density", self.mean_log_density)?;
        writeln!(f, "{:<22} [{}]", "per_dim_mse", vec_str(&self.per_dim_mse))?;
        writeln!(f, "{:<22} [{}]", "per_dim_nmse", vec_str(&self.per_dim_nmse))?;
        write!(f, "{:<22} {}", "seed", self.seed)
    }
}

/// Evaluates a model on held-out data. Deterministic: `seed` is recorded in
/// the report for bookkeeping but no randomness is used.
pub fn evaluate(
    model: &MixturePosterior,
    test: &Dataset,
    active_threshold: f64,
    seed: u64,
) -> Result<EvalReport> {
    test.validate()?;
    if test.is_empty() {
        return Err(Error::invalid("evaluation needs a non-empty test set"));
    }
    let dims = model.dims();
    if test.input_dim() != dims.input_dim || test.output_dim() != dims.output_dim {
        return Err(Error::invalid(format!(
            "test set is {}-in/{}-out but the model expects {}-in/{}-out",
            test.input_dim(),
            test.output_dim(),
            dims.input_dim,
            dims.output_dim
        )));
    }
    let predictor = Predictor::new(model, PredictOptions::default())?;
    let preds = predictor.predict_batch(&test.inputs, Some(&test.targets))?;
    let mut pred_means = DMatrix::zeros(test.len(), dims.output_dim);
    let mut log_density_sum = 0.0;
    for (i, pred) in preds.iter().enumerate() {
        for j in 0..dims.output_dim {
            pred_means[(i, j)] = pred.mean[j];
        }
        log_density_sum += pred
            .log_density
            .expect("targets were supplied to predict_batch");
    }
    let per_dim_mse = mse_per_dim(&pred_means, &test.targets)?;
    let per_dim_nmse = nmse_per_dim(&pred_means, &test.targets)?;
    let d = dims.output_dim as f64;
    Ok(EvalReport {
        mse: per_dim_mse.iter().sum::<f64>() / d,
        nmse: per_dim_nmse.iter().sum::<f64>() / d,
        per_dim_mse,
        per_dim_nmse,
        active_components: model.active_components(active_threshold),
        mean_log_density: log_density_sum / test.len() as f64,
        n_test: test.len(),
        seed,
    })
}
