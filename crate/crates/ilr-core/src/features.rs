//! Feature maps applied to gate inputs before the linear experts, and the
//! standardizer that whitens inputs and outputs ahead of fitting.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::serde_mat::vec_f64;

/// Deterministic map from an input vector to the expert feature vector.
/// `Affine` appends a bias term; `Polynomial` adds per-dimension powers up to
/// `degree` (no cross terms) plus a bias term, so a 1-D degree-p map is
/// [x, x², …, x^p, 1].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMap {
    Affine { input_dim: usize },
    Polynomial { input_dim: usize, degree: usize },
}

impl FeatureMap {
    pub fn affine(input_dim: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("feature map needs input_dim >= 1"));
        }
        Ok(FeatureMap::Affine { input_dim })
    }

    pub fn polynomial(input_dim: usize, degree: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("feature map needs input_dim >= 1"));
        }
        if degree == 0 {
            return Err(Error::invalid("polynomial feature map needs degree >= 1"));
        }
        Ok(FeatureMap::Polynomial { input_dim, degree })
    }

    pub fn input_dim(&self) -> usize {
        match *self {
            FeatureMap::Affine { input_dim } => input_dim,
            FeatureMap::Polynomial { input_dim, .. } => input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match *self {
            FeatureMap::Affine { input_dim } => input_dim + 1,
            FeatureMap::Polynomial { input_dim, degree } => input_dim * degree + 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            FeatureMap::Affine { input_dim } => {
                if input_dim == 0 {
                    return Err(Error::invalid("feature map needs input_dim >= 1"));
                }
            }
            FeatureMap::Polynomial { input_dim, degree } => {
                if input_dim == 0 {
                    return Err(Error::invalid("feature map needs input_dim >= 1"));
                }
                if degree == 0 {
                    return Err(Error::invalid("polynomial feature map needs degree >= 1"));
                }
            }
        }
        Ok(())
    }

    /// Writes the feature vector for `x` into `out`; `out.len()` must equal
    /// `self.output_dim()`.
    pub fn apply_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) -> Result<()> {
        if x.len() != self.input_dim() || out.len() != self.output_dim() {
            return Err(Error::invalid("feature map dimension mismatch"));
        }
        match *self {
            FeatureMap::Affine { input_dim } => {
                out.rows_mut(0, input_dim).copy_from(x);
                out[input_dim] = 1.0;
            }
            FeatureMap::Polynomial { input_dim, degree } => {
                out.rows_mut(0, input_dim).copy_from(x);
                for p in 2..=degree {
                    for j in 0..input_dim {
                        let prev = out[(p - 2) * input_dim + j];
                        out[(p - 1) * input_dim + j] = prev * x[j];
                    }
                }
                out[input_dim * degree] = 1.0;
            }
        }
        Ok(())
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.output_dim());
        self.apply_into(x, &mut out)?;
        Ok(out)
    }

    /// Maps every column of `x` (inputs as columns) to a feature matrix with
    /// features as columns.
    pub fn apply_columns(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.input_dim() {
            return Err(Error::invalid("feature map dimension mismatch"));
        }
        let mut out = DMatrix::zeros(self.output_dim(), x.ncols());
        let mut xi = DVector::zeros(x.nrows());
        let mut fi = DVector::zeros(self.output_dim());
        for n in 0..x.ncols() {
            xi.copy_from(&x.column(n));
            self.apply_into(&xi, &mut fi)?;
            out.column_mut(n).copy_from(&fi);
        }
        Ok(out)
    }
}

/// Per-dimension affine whitening of inputs and outputs. Uses population
/// standard deviations; a zero-variance dimension keeps scale 1 so the
/// transform stays invertible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    #[serde(with = "vec_f64")]
    pub x_mean: DVector<f64>,
    #[serde(with = "vec_f64")]
    pub x_std: DVector<f64>,
    #[serde(with = "vec_f64")]
    pub y_mean: DVector<f64>,
    #[serde(with = "vec_f64")]
    pub y_std: DVector<f64>,
}

fn column_stats(m: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = m.ncols() as f64;
    let mean = DVector::from_fn(m.nrows(), |i, _| m.row(i).sum() / n);
    let std = DVector::from_fn(m.nrows(), |i, _| {
        let mu = mean[i];
        let var = m.row(i).iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        let s = var.sqrt();
        if s > 0.0 {
            s
        } else {
            1.0
        }
    });
    (mean, std)
}

impl Standardizer {
    /// Fits to data stored as columns: `x` is input_dim x N, `y` is
    /// output_dim x N.
    pub fn fit(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Self> {
        if x.ncols() == 0 || x.ncols() != y.ncols() {
            return Err(Error::data("standardizer needs matching, non-empty data"));
        }
        let (x_mean, x_std) = column_stats(x);
        let (y_mean, y_std) = column_stats(y);
        Ok(Self { x_mean, x_std, y_mean, y_std })
    }

    pub fn identity(input_dim: usize, output_dim: usize) -> Self {
        Self {
            x_mean: DVector::zeros(input_dim),
            x_std: DVector::from_element(input_dim, 1.0),
            y_mean: DVector::zeros(output_dim),
            y_std: DVector::from_element(output_dim, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_mean.len() != self.x_std.len() || self.y_mean.len() != self.y_std.len() {
            return Err(Error::invalid("standardizer shape mismatch"));
        }
        let finite = self
            .x_mean
            .iter()
            .chain(self.x_std.iter())
            .chain(self.y_mean.iter())
            .chain(self.y_std.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("standardizer entries must be finite"));
        }
        if self.x_std.iter().chain(self.y_std.iter()).any(|&s| s <= 0.0) {
            return Err(Error::invalid("standardizer scales must be positive"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.x_mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.y_mean.len()
    }

    pub fn transform_x(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| (x[i] - self.x_mean[i]) / self.x_std[i])
    }

    pub fn transform_y(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(y.len(), |i, _| (y[i] - self.y_mean[i]) / self.y_std[i])
    }

    pub fn inverse_x(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| x[i] * self.x_std[i] + self.x_mean[i])
    }

    pub fn inverse_y(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(y.len(), |i, _| y[i] * self.y_std[i] + self.y_mean[i])
    }

    /// Standardizes a matrix of column vectors in place.
    pub fn transform_x_columns(&self, x: &mut DMatrix<f64>) {
        for mut col in x.column_iter_mut() {
            for i in 0..col.len() {
                col[i] = (col[i] - self.x_mean[i]) / self.x_std[i];
            }
        }
    }

    pub fn transform_y_columns(&self, y: &mut DMatrix<f64>) {
        for mut col in y.column_iter_mut() {
            for i in 0..col.len() {
                col[i] = (col[i] - self.y_mean[i]) / self.y_std[i];
            }
        }
    }
}
