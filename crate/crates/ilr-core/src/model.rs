//! Mixture state: hyperparameters, per-component posteriors, sufficient
//! statistics, and the serialized model format.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dist::{BetaParams, MatrixNormalWishart, NormalWishart};
use crate::error::{Error, Result};
use crate::features::{FeatureMap, Standardizer};

/// Serialized model format version accepted by [`MixturePosterior::from_json`].
pub const FORMAT_VERSION: u32 = 1;

/// Occupancy threshold below which a component is considered inactive.
pub const DEFAULT_ACTIVE_THRESHOLD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input_dim: usize,
    pub feature_dim: usize,
    pub output_dim: usize,
}

/// Prior over mixture weights: truncated stick-breaking with concentration α
/// (Beta(1, α) sticks, last stick pinned to 1), or a symmetric
/// Dirichlet(α / k_max) kept as per-component marginal Beta parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatingPriorKind {
    StickBreaking,
    FiniteDirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub k_max: usize,
    pub gating_kind: GatingPriorKind,
    pub concentration: f64,
    pub stick_prior: BetaParams,
    pub gating_prior: NormalWishart,
    pub expert_prior: MatrixNormalWishart,
}

impl Hyperparams {
    /// Broad defaults: zero means, weak mean precision λ₀ = 1e-2 and column
    /// precision K₀ = 1e-2 I, identity Wishart scales, minimal valid degrees
    /// of freedom (input_dim + 1 and output_dim + 1).
    pub fn default_for(
        dims: ModelDims,
        k_max: usize,
        gating_kind: GatingPriorKind,
        concentration: f64,
    ) -> Result<Self> {
        if k_max == 0 {
            return Err(Error::invalid("k_max must be >= 1"));
        }
        if !(concentration > 0.0 && concentration.is_finite()) {
            return Err(Error::invalid(format!(
                "concentration must be positive and finite, got {concentration}"
            )));
        }
        let ModelDims { input_dim, feature_dim, output_dim } = dims;
        let stick_prior = match gating_kind {
            GatingPriorKind::StickBreaking => BetaParams::new(1.0, concentration)?,
            GatingPriorKind::FiniteDirichlet => {
                let a = concentration / k_max as f64;
                if k_max == 1 {
                    // Degenerate single-weight case; keep a valid Beta.
                    BetaParams::new(a, a)?
                } else {
                    BetaParams::new(a, a * (k_max as f64 - 1.0))?
                }
            }
        };
        let gating_prior = NormalWishart::new(
            DVector::zeros(input_dim),
            1e-2,
            DMatrix::identity(input_dim, input_dim),
            input_dim as f64 + 1.0,
        )?;
        let expert_prior = MatrixNormalWishart::new(
            DMatrix::zeros(output_dim, feature_dim),
            DMatrix::identity(feature_dim, feature_dim) * 1e-2,
            DMatrix::identity(output_dim, output_dim),
            output_dim as f64 + 1.0,
        )?;
        Ok(Self {
            k_max,
            gating_kind,
            concentration,
            stick_prior,
            gating_prior,
            expert_prior,
        })
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            input_dim: self.gating_prior.dim(),
            feature_dim: self.expert_prior.feat_dim(),
            output_dim: self.expert_prior.out_dim(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.gating_prior.dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.expert_prior.feat_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.expert_prior.out_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 {
            return Err(Error::invalid("k_max must be >= 1"));
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return Err(Error::invalid("concentration must be positive and finite"));
        }
        self.stick_prior.validate()?;
        self.gating_prior.validate()?;
        self.expert_prior.validate()?;
        Ok(())
    }
}

/// One mixture component: stick parameters, Normal-Wishart gate posterior,
/// Matrix-Normal-Wishart expert posterior, and the responsibility mass it
/// absorbed during fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentPosterior {
    pub stick: BetaParams,
    pub gating: NormalWishart,
    pub expert: MatrixNormalWishart,
    pub occupancy: f64,
}

impl ComponentPosterior {
    pub fn from_prior(hyper: &Hyperparams) -> Self {
        Self {
            stick: hyper.stick_prior.clone(),
            gating: hyper.gating_prior.clone(),
            expert: hyper.expert_prior.clone(),
            occupancy: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stick.validate()?;
        self.gating.validate()?;
        self.expert.validate()?;
        if !(self.occupancy >= 0.0 && self.occupancy.is_finite()) {
            return Err(Error::invalid("occupancy must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub iterations: usize,
    pub final_elbo: f64,
    pub seed: u64,
    pub converged: bool,
    pub elbo_trace: Vec<f64>,
}

impl Default for FitMeta {
    fn default() -> Self {
        Self {
            iterations: 0,
            final_elbo: 0.0,
            seed: 0,
            converged: false,
            elbo_trace: Vec::new(),
        }
    }
}

/// Full fitted model: everything needed to evaluate the posterior predictive
/// or to act as the prior for the next data batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePosterior {
    pub format_version: u32,
    pub hyperparams: Hyperparams,
    pub components: Vec<ComponentPosterior>,
    pub feature_map: FeatureMap,
    pub standardizer: Standardizer,
    pub fit_meta: FitMeta,
}

impl MixturePosterior {
    /// Model with every component at the prior; its posterior predictive is
    /// the prior predictive.
    pub fn from_prior(
        hyper: Hyperparams,
        feature_map: FeatureMap,
        standardizer: Standardizer,
    ) -> Result<Self> {
        let model = Self {
            format_version: FORMAT_VERSION,
            components: (0..hyper.k_max)
                .map(|_| ComponentPosterior::from_prior(&hyper))
                .collect(),
            hyperparams: hyper,
            feature_map,
            standardizer,
            fit_meta: FitMeta::default(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn k_max(&self) -> usize {
        self.hyperparams.k_max
    }

    pub fn dims(&self) -> ModelDims {
        self.hyperparams.dims()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        self.hyperparams.validate()?;
        if self.components.len() != self.hyperparams.k_max {
            return Err(Error::InvariantViolation(format!(
                "expected {} components, found {}",
                self.hyperparams.k_max,
                self.components.len()
            )));
        }
        let dims = self.hyperparams.dims();
        for (k, comp) in self.components.iter().enumerate() {
            comp.validate()
                .map_err(|e| Error::InvariantViolation(format!("component {k}: {e}")))?;
            if comp.gating.dim() != dims.input_dim
                || comp.expert.feat_dim() != dims.feature_dim
                || comp.expert.out_dim() != dims.output_dim
            {
                return Err(Error::InvariantViolation(format!(
                    "component {k} dimensions disagree with the hyperparameters"
                )));
            }
        }
        self.feature_map.validate()?;
        self.standardizer.validate()?;
        if self.feature_map.input_dim() != dims.input_dim
            || self.feature_map.output_dim() != dims.feature_dim
        {
            return Err(Error::InvariantViolation(
                "feature map dimensions disagree with the hyperparameters".into(),
            ));
        }
        if self.standardizer.input_dim() != dims.input_dim
            || self.standardizer.output_dim() != dims.output_dim
        {
            return Err(Error::InvariantViolation(
                "standardizer dimensions disagree with the hyperparameters".into(),
            ));
        }
        Ok(())
    }

    /// E[ln π_k] under the gating posterior. Stick-breaking pins the last
    /// stick to 1, so the list always describes an exact distribution over
    /// the k_max components.
    pub fn expected_log_weights(&self) -> Result<Vec<f64>> {
        expected_log_weights_of(&self.components, self.hyperparams.gating_kind)
    }

    /// E[π_k]; sums to one exactly in both gating parameterizations.
    pub fn expected_weights(&self) -> Vec<f64> {
        expected_weights_of(&self.components, self.hyperparams.gating_kind)
    }

    /// Number of components whose absorbed responsibility mass exceeds
    /// `threshold`.
    pub fn active_components(&self, threshold: f64) -> usize {
        self.components
            .iter()
            .filter(|c| c.occupancy > threshold)
            .count()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::MalformedPayload(format!("serialization failed: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct VersionProbe {
            format_version: u32,
        }
        let probe: VersionProbe = serde_json::from_str(text)
            .map_err(|e| Error::MalformedPayload(format!("{e}")))?;
        if probe.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: probe.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let model: MixturePosterior =
            serde_json::from_str(text).map_err(|e| Error::MalformedPayload(format!("{e}")))?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?)
            .map_err(|e| Error::data(format!("cannot write {}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// E[ln π_k] for a bare component list; see
/// [`MixturePosterior::expected_log_weights`].
pub fn expected_log_weights_of(
    components: &[ComponentPosterior],
    kind: GatingPriorKind,
) -> Result<Vec<f64>> {
    let k_max = components.len();
    if k_max == 1 {
        return Ok(vec![0.0]);
    }
    let mut out = Vec::with_capacity(k_max);
    match kind {
        GatingPriorKind::StickBreaking => {
            let mut prefix = 0.0;
            for (k, comp) in components.iter().enumerate() {
                if k + 1 == k_max {
                    out.push(prefix);
                } else {
                    out.push(prefix + comp.stick.expected_log()?);
                    prefix += comp.stick.expected_log_complement()?;
                }
            }
        }
        GatingPriorKind::FiniteDirichlet => {
            for comp in components {
                out.push(comp.stick.expected_log()?);
            }
        }
    }
    Ok(out)
}

/// E[π_k] for a bare component list; see
/// [`MixturePosterior::expected_weights`].
pub fn expected_weights_of(components: &[ComponentPosterior], kind: GatingPriorKind) -> Vec<f64> {
    let k_max = components.len();
    if k_max == 1 {
        return vec![1.0];
    }
    let mut out = Vec::with_capacity(k_max);
    match kind {
        GatingPriorKind::StickBreaking => {
            let mut remainder = 1.0;
            for (k, comp) in components.iter().enumerate() {
                if k + 1 == k_max {
                    out.push(remainder);
                } else {
                    let v = comp.stick.mean();
                    out.push(remainder * v);
                    remainder *= 1.0 - v;
                }
            }
        }
        GatingPriorKind::FiniteDirichlet => {
            for comp in components {
                out.push(comp.stick.mean());
            }
        }
    }
    out
}

/// Responsibility-weighted moments of one pass over (x, features, y), stored
/// in raw additive form so that minibatch estimates can be blended by scaling
/// and convex combination in natural-parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub n: Vec<f64>,
    pub sum_x: Vec<DVector<f64>>,
    pub sum_xx: Vec<DMatrix<f64>>,
    pub sum_ff: Vec<DMatrix<f64>>,
    pub sum_yf: Vec<DMatrix<f64>>,
    pub sum_yy: Vec<DMatrix<f64>>,
    pub count: f64,
}

impl SufficientStats {
    pub fn zeros(k: usize, dims: ModelDims) -> Self {
        let ModelDims { input_dim, feature_dim, output_dim } = dims;
        Self {
            n: vec![0.0; k],
            sum_x: vec![DVector::zeros(input_dim); k],
            sum_xx: vec![DMatrix::zeros(input_dim, input_dim); k],
            sum_ff: vec![DMatrix::zeros(feature_dim, feature_dim); k],
            sum_yf: vec![DMatrix::zeros(output_dim, feature_dim); k],
            sum_yy: vec![DMatrix::zeros(output_dim, output_dim); k],
            count: 0.0,
        }
    }

    pub fn k(&self) -> usize {
        self.n.len()
    }

    /// Adds one observation with per-component weights `r` (a responsibility
    /// row). Zero weights are skipped, which keeps converged passes cheap.
    pub fn add_point(&mut self, r: &[f64], x: &DVector<f64>, f: &DVector<f64>, y: &DVector<f64>) {
        debug_assert_eq!(r.len(), self.k());
        self.count += 1.0;
        for (k, &w) in r.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            self.n[k] += w;
            self.sum_x[k].axpy(w, x, 1.0);
            self.sum_xx[k].ger(w, x, x, 1.0);
            self.sum_ff[k].ger(w, f, f, 1.0);
            self.sum_yf[k].ger(w, y, f, 1.0);
            self.sum_yy[k].ger(w, y, y, 1.0);
        }
    }

    /// Responsibility mass assigned to components after `k`, used by the
    /// stick updates.
    pub fn tail(&self, k: usize) -> f64 {
        self.n[k + 1..].iter().sum()
    }

    pub fn mean_x(&self, k: usize) -> Option<DVector<f64>> {
        if self.n[k] > 0.0 {
            Some(&self.sum_x[k] / self.n[k])
        } else {
            None
        }
    }

    /// Centered input scatter Σ r (x - x̄)(x - x̄)ᵀ.
    pub fn scatter_x(&self, k: usize) -> Option<DMatrix<f64>> {
        let mean = self.mean_x(k)?;
        let mut s = self.sum_xx[k].clone();
        s.ger(-self.n[k], &mean, &mean, 1.0);
        Some(s)
    }

    /// Natural-parameter blend for stochastic updates:
    /// self ← (1 - rho) · self + rho · scale · minibatch.
    pub fn blend(&mut self, minibatch: &SufficientStats, rho: f64, scale: f64) {
        let s = rho * scale;
        let keep = 1.0 - rho;
        self.count = keep * self.count + s * minibatch.count;
        for k in 0..self.k() {
            self.n[k] = keep * self.n[k] + s * minibatch.n[k];
            self.sum_x[k].axpy(s, &minibatch.sum_x[k], keep);
            self.sum_xx[k].zip_apply(&minibatch.sum_xx[k], |a, b| *a = keep * *a + s * b);
            self.sum_ff[k].zip_apply(&minibatch.sum_ff[k], |a, b| *a = keep * *a + s * b);
            self.sum_yf[k].zip_apply(&minibatch.sum_yf[k], |a, b| *a = keep * *a + s * b);
            self.sum_yy[k].zip_apply(&minibatch.sum_yy[k], |a, b| *a = keep * *a + s * b);
        }
    }
}
