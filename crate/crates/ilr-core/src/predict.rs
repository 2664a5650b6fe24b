//! Posterior predictive evaluation. Gating weights come from Student-t input
//! densities (parameter uncertainty marginalized in closed form); outputs are
//! a mixture of Student-t distributions whose mean, mode, and covariance are
//! reported in the original data units.

use nalgebra::{DMatrix, DVector};

use crate::dist::{chol_ln_det, ln_gamma, spd_cholesky};
use crate::error::{Error, Result};
use crate::features::{FeatureMap, Standardizer};
use crate::model::{MixturePosterior, ModelDims};

/// How gate densities treat parameter uncertainty. `Marginal` integrates the
/// Normal-Wishart posterior analytically (Student-t); `PlugIn` freezes the
/// gate at its expected parameters (Gaussian), an ablation that understates
/// uncertainty away from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GatingKind {
    #[default]
    Marginal,
    PlugIn,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PredictOptions {
    pub gating: GatingKind,
}

/// One posterior predictive query, all in original data units.
#[derive(Debug, Clone)]
pub struct Prediction {
    /// Mixture mean E[y | x].
    pub mean: DVector<f64>,
    /// Mean of the highest-weight component; under multimodality this tracks
    /// one branch instead of averaging across branches.
    pub mode: DVector<f64>,
    /// Mixture covariance by the law of total variance. Component Student-t
    /// covariances use scale · dof / (dof - 2); when dof <= 2 (prior-like
    /// components) the scale matrix itself is used as a finite stand-in.
    pub covariance: DMatrix<f64>,
    /// Gating weights; a simplex.
    pub weights: Vec<f64>,
    /// Per-component predictive means.
    pub component_means: Vec<DVector<f64>>,
    /// Log posterior predictive density of the supplied target, if one was.
    pub log_density: Option<f64>,
}

impl Prediction {
    /// Per-dimension predictive standard deviations.
    pub fn std(&self) -> DVector<f64> {
        DVector::from_fn(self.mean.len(), |i, _| self.covariance[(i, i)].max(0.0).sqrt())
    }
}

/// Per-component gate evaluation state. Densities are evaluated from the
/// stored precision-like scale matrix directly; no inverses at query time.
struct GateCache {
    mean: DVector<f64>,
    scale: DMatrix<f64>,
    /// ln E[π_k], kept separately so the bare density can be recovered.
    log_epi: f64,
    /// ln E[π_k] plus the density normalizer.
    log_norm: f64,
    /// Marginal: 1 / (scale factor · dof); plug-in: ν / 2.
    quad_coeff: f64,
    /// Marginal: (dof + m) / 2; unused for plug-in.
    tail_coeff: f64,
}

struct ExpertCache {
    mean: DMatrix<f64>,
    /// Lower Cholesky factor of K_k for the feature quadratic.
    chol_col_l: DMatrix<f64>,
    precision: DMatrix<f64>,
    precision_inv: DMatrix<f64>,
    /// Query-independent part of the output t normalizer.
    log_norm_const: f64,
    dof_t: f64,
}

/// Immutable query engine over a fitted model. Construction performs all
/// factorizations; each query is a few small matrix-vector products per
/// component.
pub struct Predictor {
    dims: ModelDims,
    feature_map: FeatureMap,
    standardizer: Standardizer,
    gating: GatingKind,
    gates: Vec<GateCache>,
    experts: Vec<ExpertCache>,
    /// Σ ln σ_y, the log Jacobian of the output standardization.
    ln_jacobian: f64,
}

impl Predictor {
    pub fn new(model: &MixturePosterior, options: PredictOptions) -> Result<Self> {
        model.validate()?;
        let dims = model.dims();
        let m = dims.input_dim as f64;
        let d = dims.output_dim as f64;
        let ln_pi = std::f64::consts::PI.ln();
        let e_pi = model.expected_weights();

        let mut gates = Vec::with_capacity(model.k_max());
        let mut experts = Vec::with_capacity(model.k_max());
        for (k, comp) in model.components.iter().enumerate() {
            let annotate = |e: Error| Error::InvariantViolation(format!("component {k}: {e}"));
            let g = &comp.gating;
            let ln_det_l = chol_ln_det(&spd_cholesky(&g.scale, "gating scale").map_err(annotate)?);
            let log_epi = e_pi[k].ln();
            let (log_norm, quad_coeff, tail_coeff) = match options.gating {
                GatingKind::Marginal => {
                    let dof_t = g.dof - m + 1.0;
                    let factor = (g.mean_precision + 1.0) / (g.mean_precision * dof_t);
                    // Σ = factor · L⁻¹, so ln|Σ| = m ln factor - ln|L|.
                    let log_norm = log_epi + ln_gamma(0.5 * (dof_t + m))?
                        - ln_gamma(0.5 * dof_t)?
                        - 0.5 * m * (dof_t.ln() + ln_pi)
                        - 0.5 * (m * factor.ln() - ln_det_l);
                    (log_norm, 1.0 / (factor * dof_t), 0.5 * (dof_t + m))
                }
                GatingKind::PlugIn => {
                    // Gaussian with the expected precision ν L.
                    let log_norm = log_epi + 0.5 * (m * g.dof.ln() + ln_det_l)
                        - 0.5 * m * (2.0 * std::f64::consts::PI).ln();
                    (log_norm, 0.5 * g.dof, 0.0)
                }
            };
            gates.push(GateCache {
                mean: g.mean.clone(),
                scale: g.scale.clone(),
                log_epi,
                log_norm,
                quad_coeff,
                tail_coeff,
            });

            let e = &comp.expert;
            let dof_t = e.dof - d + 1.0;
            let ln_det_p =
                chol_ln_det(&spd_cholesky(&e.scale, "expert scale").map_err(annotate)?);
            let chol_k = spd_cholesky(&e.col_precision, "expert column precision")
                .map_err(annotate)?;
            experts.push(ExpertCache {
                mean: e.mean.clone(),
                chol_col_l: chol_k.l(),
                precision: e.scale.clone(),
                precision_inv: spd_cholesky(&e.scale, "expert scale")
                    .map_err(annotate)?
                    .inverse(),
                log_norm_const: ln_gamma(0.5 * (dof_t + d))?
                    - ln_gamma(0.5 * dof_t)?
                    - 0.5 * d * (dof_t.ln() + ln_pi)
                    + 0.5 * ln_det_p,
                dof_t,
            });
        }
        let ln_jacobian = model.standardizer.y_std.iter().map(|s| s.ln()).sum();
        Ok(Self {
            dims,
            feature_map: model.feature_map.clone(),
            standardizer: model.standardizer.clone(),
            gating: options.gating,
            gates,
            experts,
            ln_jacobian,
        })
    }

    pub fn k(&self) -> usize {
        self.gates.len()
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    fn check_input(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dims.input_dim {
            return Err(Error::invalid(format!(
                "query has {} dimensions, model expects {}",
                x.len(),
                self.dims.input_dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("query inputs must be finite"));
        }
        Ok(())
    }

    /// Unnormalized log gate masses ln E[π_k] + ln t_k(x) for a standardized
    /// input, written into `out`.
    fn gate_log_masses(&self, x_std: &DVector<f64>, out: &mut [f64]) {
        let mut dx = DVector::zeros(self.dims.input_dim);
        let mut tx = DVector::zeros(self.dims.input_dim);
        for (k, gate) in self.gates.iter().enumerate() {
            dx.copy_from(x_std);
            dx -= &gate.mean;
            tx.gemv(1.0, &gate.scale, &dx, 0.0);
            let quad = dx.dot(&tx);
            out[k] = match self.gating {
                GatingKind::Marginal => {
                    gate.log_norm - gate.tail_coeff * (gate.quad_coeff * quad).ln_1p()
                }
                GatingKind::PlugIn => gate.log_norm - gate.quad_coeff * quad,
            };
        }
    }

    /// Log input density ln t_k(x) of one gate (no mixture weight), a
    /// diagnostic for how familiar an input looks to that component.
    pub fn gate_log_density(&self, k: usize, x: &DVector<f64>) -> Result<f64> {
        self.check_input(x)?;
        if k >= self.k() {
            return Err(Error::invalid(format!("component index {k} out of range")));
        }
        let x_std = self.standardizer.transform_x(x);
        let mut masses = vec![0.0; self.k()];
        self.gate_log_masses(&x_std, &mut masses);
        // Remove the mixture weight and the standardization Jacobian.
        let ln_x_jacobian: f64 = self.standardizer.x_std.iter().map(|s| s.ln()).sum();
        Ok(masses[k] - self.gates[k].log_epi - ln_x_jacobian)
    }

    /// Normalized gating weights at an input; always a simplex.
    pub fn gating_weights(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let x_std = self.standardizer.transform_x(x);
        let mut masses = vec![0.0; self.k()];
        self.gate_log_masses(&x_std, &mut masses);
        softmax_in_place(&mut masses);
        Ok(masses)
    }

    pub fn predict(&self, x: &DVector<f64>) -> Result<Prediction> {
        self.predict_full(x, None)
    }

    /// Like [`Predictor::predict`] but also scores `y` under the posterior
    /// predictive density.
    pub fn predict_with_target(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<Prediction> {
        if y.len() != self.dims.output_dim {
            return Err(Error::invalid(format!(
                "target has {} dimensions, model expects {}",
                y.len(),
                self.dims.output_dim
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("targets must be finite"));
        }
        self.predict_full(x, Some(y))
    }

    /// Queries every row of `xs` (N x input_dim); `ys` adds log densities.
    pub fn predict_batch(
        &self,
        xs: &DMatrix<f64>,
        ys: Option<&DMatrix<f64>>,
    ) -> Result<Vec<Prediction>> {
        if xs.ncols() != self.dims.input_dim {
            return Err(Error::invalid(format!(
                "queries have {} columns, model expects {}",
                xs.ncols(),
                self.dims.input_dim
            )));
        }
        if let Some(ys) = ys {
            if ys.nrows() != xs.nrows() || ys.ncols() != self.dims.output_dim {
                return Err(Error::invalid("target matrix shape mismatch"));
            }
        }
        let mut out = Vec::with_capacity(xs.nrows());
        for i in 0..xs.nrows() {
            let x = xs.row(i).transpose();
            let pred = match ys {
                Some(ys) => self.predict_with_target(&x, &ys.row(i).transpose())?,
                None => self.predict_full(&x, None)?,
            };
            out.push(pred);
        }
        Ok(out)
    }

    fn predict_full(&self, x: &DVector<f64>, y: Option<&DVector<f64>>) -> Result<Prediction> {
        self.check_input(x)?;
        let ModelDims { input_dim: _, feature_dim, output_dim: d } = self.dims;
        let x_std = self.standardizer.transform_x(x);
        let feat = self.feature_map.apply(&x_std)?;

        let mut log_w = vec![0.0; self.k()];
        self.gate_log_masses(&x_std, &mut log_w);
        let lse_w = log_sum_exp_slice(&log_w);
        for w in log_w.iter_mut() {
            *w -= lse_w;
        }
        let weights: Vec<f64> = log_w.iter().map(|lw| lw.exp()).collect();

        // Component moments in standardized space.
        let mut mean_std = DVector::zeros(d);
        let mut cov_std = DMatrix::zeros(d, d);
        let mut comp_means_std = Vec::with_capacity(self.k());
        let mut comp_scales: Vec<(f64, f64)> = Vec::with_capacity(self.k());
        let mut z = DVector::zeros(feature_dim);
        for (k, expert) in self.experts.iter().enumerate() {
            let mut mu = DVector::zeros(d);
            mu.gemv(1.0, &expert.mean, &feat, 0.0);
            z.copy_from(&feat);
            let solved = expert.chol_col_l.solve_lower_triangular_mut(&mut z);
            debug_assert!(solved);
            let q_feat = z.norm_squared();
            // Component t: scale matrix c · P⁻¹ with c = (1 + q) / dof.
            let c = (1.0 + q_feat) / expert.dof_t;
            let cov_factor = if expert.dof_t > 2.0 {
                c * expert.dof_t / (expert.dof_t - 2.0)
            } else {
                c
            };
            let w = weights[k];
            mean_std.axpy(w, &mu, 1.0);
            cov_std.zip_apply(&expert.precision_inv, |a, b| *a += w * cov_factor * b);
            cov_std.ger(w, &mu, &mu, 1.0);
            comp_means_std.push(mu);
            comp_scales.push((c, q_feat));
        }
        cov_std.ger(-1.0, &mean_std, &mean_std, 1.0);

        // Mode: the highest-weight component's mean.
        let argmax = weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(k, _)| k)
            .unwrap_or(0);

        let log_density = match y {
            Some(y) => {
                let y_std = self.standardizer.transform_y(y);
                let mut terms = Vec::with_capacity(self.k());
                let mut res = DVector::zeros(d);
                let mut tr = DVector::zeros(d);
                for (k, expert) in self.experts.iter().enumerate() {
                    let (c, _) = comp_scales[k];
                    res.copy_from(&y_std);
                    res -= &comp_means_std[k];
                    tr.gemv(1.0, &expert.precision, &res, 0.0);
                    let quad = res.dot(&tr) / c;
                    let log_t = expert.log_norm_const - 0.5 * d as f64 * c.ln()
                        - 0.5 * (expert.dof_t + d as f64) * (quad / expert.dof_t).ln_1p();
                    terms.push(log_w[k] + log_t);
                }
                Some(log_sum_exp_slice(&terms) - self.ln_jacobian)
            }
            None => None,
        };

        // Back to data units.
        let inv_y = |v: &DVector<f64>| self.standardizer.inverse_y(v);
        let mean = inv_y(&mean_std);
        let mode = inv_y(&comp_means_std[argmax]);
        let component_means = comp_means_std.iter().map(inv_y).collect();
        let sy = &self.standardizer.y_std;
        let covariance = DMatrix::from_fn(d, d, |i, j| cov_std[(i, j)] * sy[i] * sy[j]);

        Ok(Prediction {
            mean,
            mode,
            covariance,
            weights,
            component_means,
            log_density,
        })
    }
}

fn log_sum_exp_slice(vals: &[f64]) -> f64 {
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + vals.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn softmax_in_place(vals: &mut [f64]) {
    let lse = log_sum_exp_slice(vals);
    for v in vals.iter_mut() {
        *v = (*v - lse).exp();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::dist::{MatrixNormalWishart, NormalWishart};
    use crate::model::{GatingPriorKind, Hyperparams};
    use crate::vbem::{fit, FitConfig};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{ChiSquared, Distribution, StandardNormal};

    fn dims(mx: usize, mf: usize, d: usize) -> ModelDims {
        ModelDims { input_dim: mx, feature_dim: mf, output_dim: d }
    }

    fn prior_model(mx: usize, d: usize, k: usize) -> MixturePosterior {
        let hyper = Hyperparams::default_for(
            dims(mx, mx + 1, d),
            k,
            GatingPriorKind::StickBreaking,
            1.0,
        )
        .unwrap();
        MixturePosterior::from_prior(
            hyper,
            FeatureMap::affine(mx).unwrap(),
            Standardizer::identity(mx, d),
        )
        .unwrap()
    }

    fn linear_fit(n: usize, noise: f64, k_max: usize) -> MixturePosterior {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inputs = DMatrix::from_fn(n, 1, |_, _| -3.0 + 6.0 * rng.random::<f64>());
        let targets = DMatrix::from_fn(n, 1, |i, _| {
            2.0 * inputs[(i, 0)] + 1.0
                + noise * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        let ds = Dataset::new(inputs, targets, "lin").unwrap();
        let hyper = Hyperparams::default_for(
            dims(1, 2, 1),
            k_max,
            GatingPriorKind::StickBreaking,
            1.0,
        )
        .unwrap();
        let cfg = FitConfig { restarts: 2, max_iters: 50, ..Default::default() };
        fit(&ds, &FeatureMap::affine(1).unwrap(), &hyper, &cfg).unwrap()
    }

    #[test]
    fn prior_model_prediction_is_prior_predictive() {
        let model = prior_model(1, 1, 3);
        let p = Predictor::new(&model, PredictOptions::default()).unwrap();
        let pred = p.predict(&DVector::from_element(1, 0.5)).unwrap();
        // Zero prior means everywhere: predictive mean and mode are 0.
        assert_abs_diff_eq!(pred.mean[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pred.mode[0], 0.0, epsilon = 1e-12);
        // Identical components: weights equal the expected stick weights.
        assert_abs_diff_eq!(pred.weights[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(pred.weights[1], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(pred.weights[2], 0.25, epsilon = 1e-12);
        // Broad prior: predictive variance is large.
        assert!(pred.covariance[(0, 0)] > 10.0);
        assert_eq!(pred.component_means.len(), 3);
    }

    #[test]
    fn weights_form_a_simplex_everywhere() {
        let model = linear_fit(200, 0.4, 5);
        let p = Predictor::new(&model, PredictOptions::default()).unwrap();
        for i in 0..50 {
            let x = DVector::from_element(1, -10.0 + 0.4 * i as f64);
            let w = p.gating_weights(&x).unwrap();
            let sum: f64 = w.iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-10);
            assert!(w.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let pred = p.predict(&x).unwrap();
            let psum: f64 = pred.weights.iter().sum();
            assert_abs_diff_eq!(psum, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn noiseless_linear_recovery() {
        let model = linear_fit(300, 0.0, 1);
        let p = Predictor::new(&model, PredictOptions::default()).unwrap();
        // Prior shrinkage (K₀ = 1e-2 I) leaves an O(1e-4) pull toward zero.
        for x in [-2.0, -0.5, 0.0, 1.5, 2.5] {
            let pred = p.predict(&DVector::from_element(1, x)).unwrap();
            let truth = 2.0 * x + 1.0;
            assert!(
                (pred.mean[0] - truth).abs() < 1e-3,
                "mean {} vs {truth}",
                pred.mean[0]
            );
            assert!((pred.mode[0] - truth).abs() < 1e-3);
            // The identity prior scale P₀ floors the noise estimate near
            // var(y) / η_N, so the variance is small but not zero.
            assert!(pred.covariance[(0, 0)] < 0.1);
        }
    }

    #[test]
    fn batch_of_one_equals_single_prediction() {
        let model = linear_fit(100, 0.3, 3);
        let p = Predictor::new(&model, PredictOptions::default()).unwrap();
        let x = DVector::from_element(1, 0.7);
        let y = DVector::from_element(1, 2.3);
        let single = p.predict_with_target(&x, &y).unwrap();
        let xs = DMatrix::from_element(1, 1, 0.7);
        let ys = DMatrix::from_element(1, 1, 2.3);
        let batch = p.predict_batch(&xs, Some(&ys)).unwrap();
        assert_eq!(batch.len(), 1);
        assert_eq!(batch[0].mean, single.mean);
        assert_eq!(batch[0].covariance, single.covariance);
        assert_eq!(batch[0].weights, single.weights);
        assert_eq!(batch[0].log_density, single.log_density);
    }

    #[test]
    fn log_density_integrates_to_one() {
        // Trapezoid quadrature of exp(log density) over y for a fixed x must
        // give 1; this exercises weights, t normalizers, and the Jacobian of
        // the standardizer together.
        let model = linear_fit(200, 0.5, 4);
        let p = Predictor::new(&model, PredictOptions::default()).unwrap();
        let x = DVector::from_element(1, 0.8);
        let pred = p.predict(&x).unwrap();
        let center = pred.mean[0];
        let width = 40.0 * pred.std()[0].max(0.1);
        let steps = 4000;
        let h = width / steps as f64;
        let mut integral = 0.0;
        for i in 0..=steps {
            let y = center - width / 2.0 + i as f64 * h;
            let ld = p
                .predict_with_target(&x, &DVector::from_element(1, y))
                .unwrap()
                .log_density
                .unwrap();
            let weight = if i == 0 || i == steps { 0.5 } else { 1.0 };
            integral += weight * ld.exp() * h;
        }
        assert!((integral - 1.0).abs() < 1e-3, "integral {integral}");
    }

    /// Samples Λ ~ W(scale, dof) with the Bartlett decomposition.
    fn sample_wishart(
        scale_chol_l: &DMatrix<f64>,
        dof: f64,
        rng: &mut ChaCha8Rng,
    ) -> DMatrix<f64> {
        let m = scale_chol_l.nrows();
        let mut t = DMatrix::zeros(m, m);
        for i in 0..m {
            let chi = ChiSquared::new(dof - i as f64).unwrap();
            t[(i, i)] = chi.sample(rng).sqrt();
            for j in 0..i {
                t[(i, j)] = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
            }
        }
        let a = scale_chol_l * t;
        &a * a.transpose()
    }

    #[test]
    fn gate_density_matches_monte_carlo_marginalization() {
        // Student-t gate density vs brute force: draw (μ, Λ) from the
        // Normal-Wishart posterior, average N(x; μ, Λ⁻¹).
        let nw = NormalWishart::new(
            DVector::from_vec(vec![0.4, -0.2]),
            3.0,
            DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.2, 1.4]),
            6.0,
        )
        .unwrap();
        let mut model = prior_model(2, 1, 1);
        model.hyperparams.gating_prior = nw.clone();
        model.components[0].gating = nw.clone();
        let p = Predictor::new(&model, PredictOptions::default()).unwrap();
        let x = DVector::from_vec(vec![1.1, 0.3]);
        let analytic = p.gate_log_density(0, &x).unwrap().exp();

        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let chol_l = spd_cholesky(&nw.scale, "test").unwrap().l();
        let samples = 200_000;
        let mut acc = 0.0;
        for _ in 0..samples {
            let lam = sample_wishart(&chol_l, nw.dof, &mut rng);
            let prec = &lam * nw.mean_precision;
            let chol_prec = spd_cholesky(&prec, "test").unwrap();
            // μ = m + chol(λΛ)⁻ᵀ z
            let z = DVector::from_fn(2, |_, _| {
                <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            });
            let mu = &nw.mean
                + chol_prec
                    .l()
                    .transpose()
                    .solve_upper_triangular(&z)
                    .unwrap();
            let dx = &x - &mu;
            let quad = dx.dot(&(&lam * &dx));
            let ln_det = chol_ln_det(&spd_cholesky(&lam, "test").unwrap());
            acc += (0.5 * ln_det - (2.0 * std::f64::consts::PI).ln() - 0.5 * quad).exp();
        }
        let mc = acc / samples as f64;
        assert!(
            (analytic - mc).abs() / mc < 0.03,
            "analytic {analytic} vs monte carlo {mc}"
        );
    }

    #[test]
    fn output_density_matches_monte_carlo_marginalization() {
        // Mixture predictive density for a single-component model vs brute
        // force over the Matrix-Normal-Wishart posterior: draw output
        // precision λ ~ W₁(p, η) and coefficients M | λ ~ MN, average
        // N(y; M X, 1/λ).
        let mnw = MatrixNormalWishart::new(
            DMatrix::from_row_slice(1, 2, &[1.2, -0.5]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.5]),
            DMatrix::from_element(1, 1, 0.7),
            5.0,
        )
        .unwrap();
        let mut model = prior_model(1, 1, 1);
        model.hyperparams.expert_prior = mnw.clone();
        model.components[0].expert = mnw.clone();
        let p = Predictor::new(&model, PredictOptions::default()).unwrap();
        let x = DVector::from_element(1, 0.9);
        let y = DVector::from_element(1, 1.4);
        let analytic = p
            .predict_with_target(&x, &y)
            .unwrap()
            .log_density
            .unwrap()
            .exp();

        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let feat = DVector::from_vec(vec![0.9, 1.0]);
        let k_inv = mnw.col_precision.clone().try_inverse().unwrap();
        let b = spd_cholesky(&k_inv, "test").unwrap().l();
        let chi = ChiSquared::new(mnw.dof).unwrap();
        let w_scale = mnw.scale[(0, 0)];
        let samples = 200_000;
        let mut acc = 0.0;
        for _ in 0..samples {
            let lam = w_scale * chi.sample(&mut rng);
            let z = DVector::from_fn(2, |_, _| {
                <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            });
            let coeff_noise = (&b * z) / lam.sqrt();
            let m0 = mnw.mean[(0, 0)] + coeff_noise[0];
            let m1 = mnw.mean[(0, 1)] + coeff_noise[1];
            let mean = m0 * feat[0] + m1 * feat[1];
            let resid = y[0] - mean;
            acc += (lam / (2.0 * std::f64::consts::PI)).sqrt()
                * (-0.5 * lam * resid * resid).exp();
        }
        let mc = acc / samples as f64;
        assert!(
            (analytic - mc).abs() / mc < 0.03,
            "analytic {analytic} vs monte carlo {mc}"
        );
    }

    #[test]
    fn predictive_covariance_uses_t_variance_when_dof_allows() {
        // Single component, dof > 2: covariance = scale · dof / (dof - 2)
        // exactly (no mixture spread).
        let mnw = MatrixNormalWishart::new(
            DMatrix::from_row_slice(1, 2, &[0.5, 0.1]),
            DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 2.0]),
            DMatrix::from_element(1, 1, 1.1),
            7.0,
        )
        .unwrap();
        let mut model = prior_model(1, 1, 1);
        model.hyperparams.expert_prior = mnw.clone();
        model.components[0].expert = mnw.clone();
        let p = Predictor::new(&model, PredictOptions::default()).unwrap();
        let x = DVector::from_element(1, 0.3);
        let pred = p.predict(&x).unwrap();
        let (dof_t, _, scale) = mnw.predictive_t(&DVector::from_vec(vec![0.3, 1.0])).unwrap();
        let want = scale[(0, 0)] * dof_t / (dof_t - 2.0);
        assert_abs_diff_eq!(pred.covariance[(0, 0)], want, epsilon = 1e-12);
    }

    #[test]
    fn low_dof_covariance_falls_back_to_scale() {
        // Prior model in 1-D: η₀ = 2 gives predictive dof exactly 2, where
        // the t variance is undefined; the scale matrix stands in.
        let model = prior_model(1, 1, 1);
        let p = Predictor::new(&model, PredictOptions::default()).unwrap();
        let x = DVector::from_element(1, 0.0);
        let pred = p.predict(&x).unwrap();
        let (_, _, scale) = model.components[0]
            .expert
            .predictive_t(&DVector::from_vec(vec![0.0, 1.0]))
            .unwrap();
        assert_abs_diff_eq!(pred.covariance[(0, 0)], scale[(0, 0)], epsilon = 1e-12);
        assert!(pred.covariance[(0, 0)] > 0.0);
    }

    #[test]
    fn gating_localizes_between_separated_clusters() {
        // Two clusters with different slopes; queries inside each cluster
        // should route almost all weight to that cluster's component, and the
        // mode should follow the local branch, not the global average.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 300;
        let mut inputs = DMatrix::zeros(n, 1);
        let mut targets = DMatrix::zeros(n, 1);
        for i in 0..n {
            let left = i % 2 == 0;
            let x = if left {
                -4.0 + rng.random::<f64>()
            } else {
                3.0 + rng.random::<f64>()
            };
            let noise: f64 =
                <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            inputs[(i, 0)] = x;
            targets[(i, 0)] = if left { 2.0 * x } else { -1.5 * x + 4.0 } + 0.05 * noise;
        }
        let ds = Dataset::new(inputs, targets, "two_clusters").unwrap();
        let hyper = Hyperparams::default_for(
            dims(1, 2, 1),
            6,
            GatingPriorKind::StickBreaking,
            1.0,
        )
        .unwrap();
        let cfg = FitConfig { restarts: 4, max_iters: 80, seed: 3, ..Default::default() };
        let model = fit(&ds, &FeatureMap::affine(1).unwrap(), &hyper, &cfg).unwrap();
        let p = Predictor::new(&model, PredictOptions::default()).unwrap();

        let x_left = DVector::from_element(1, -3.5);
        let pred = p.predict(&x_left).unwrap();
        assert!(
            (pred.mode[0] - 2.0 * -3.5).abs() < 0.15,
            "left mode {} truth {}",
            pred.mode[0],
            2.0 * -3.5
        );
        let x_right = DVector::from_element(1, 3.5);
        let pred = p.predict(&x_right).unwrap();
        assert!(
            (pred.mode[0] - (-1.5 * 3.5 + 4.0)).abs() < 0.15,
            "right mode {}",
            pred.mode[0]
        );
        // Max weight is concentrated at both query points.
        let wmax = p
            .gating_weights(&x_left)
            .unwrap()
            .into_iter()
            .fold(f64::MIN, f64::max);
        assert!(wmax > 0.9, "left max weight {wmax}");
    }

    #[test]
    fn uncertainty_grows_away_from_data() {
        let model = linear_fit(200, 0.2, 3);
        let p = Predictor::new(&model, PredictOptions::default()).unwrap();
        let inside = p.predict(&DVector::from_element(1, 0.0)).unwrap().std()[0];
        let outside = p.predict(&DVector::from_element(1, 30.0)).unwrap().std()[0];
        assert!(
            outside > 3.0 * inside,
            "inside std {inside}, outside std {outside}"
        );
    }

    #[test]
    fn plug_in_gating_is_valid_but_different() {
        let model = linear_fit(150, 0.3, 4);
        let marginal = Predictor::new(&model, PredictOptions::default()).unwrap();
        let plug = Predictor::new(
            &model,
            PredictOptions { gating: GatingKind::PlugIn },
        )
        .unwrap();
        let x = DVector::from_element(1, 4.0);
        let wm = marginal.gating_weights(&x).unwrap();
        let wp = plug.gating_weights(&x).unwrap();
        assert_abs_diff_eq!(wp.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
        assert!(
            wm.iter()
                .zip(&wp)
                .any(|(a, b)| (a - b).abs() > 1e-6),
            "plug-in weights should differ away from the data"
        );
        // Both yield finite, positive predictive variances.
        assert!(plug.predict(&x).unwrap().covariance[(0, 0)] > 0.0);
    }

    #[test]
    fn standardized_and_raw_fits_agree_after_inverse_transform() {
        // The same data fit with and without standardization should give
        // nearly identical predictive means in data units.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 250;
        let inputs = DMatrix::from_fn(n, 1, |_, _| 50.0 + 10.0 * rng.random::<f64>());
        let targets = DMatrix::from_fn(n, 1, |i, _| {
            -3.0 * inputs[(i, 0)] + 100.0
                + 0.5 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        let ds = Dataset::new(inputs, targets, "shifted").unwrap();
        let hyper = Hyperparams::default_for(
            dims(1, 2, 1),
            1,
            GatingPriorKind::StickBreaking,
            1.0,
        )
        .unwrap();
        let std_cfg = FitConfig { restarts: 1, max_iters: 40, ..Default::default() };
        let raw_cfg = FitConfig { standardize: false, ..std_cfg.clone() };
        let fmap = FeatureMap::affine(1).unwrap();
        let m_std = fit(&ds, &fmap, &hyper, &std_cfg).unwrap();
        let m_raw = fit(&ds, &fmap, &hyper, &raw_cfg).unwrap();
        let p_std = Predictor::new(&m_std, PredictOptions::default()).unwrap();
        let p_raw = Predictor::new(&m_raw, PredictOptions::default()).unwrap();
        for x in [52.0, 55.0, 58.0] {
            let a = p_std.predict(&DVector::from_element(1, x)).unwrap().mean[0];
            let b = p_raw.predict(&DVector::from_element(1, x)).unwrap().mean[0];
            assert!((a - b).abs() < 0.2, "std {a} vs raw {b} at {x}");
        }
    }

    #[test]
    fn dimension_and_finiteness_errors() {
        let model = prior_model(2, 1, 2);
        let p = Predictor::new(&model, PredictOptions::default()).unwrap();
        assert!(matches!(
            p.predict(&DVector::from_element(3, 0.0)),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            p.predict(&DVector::from_vec(vec![f64::NAN, 0.0])),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            p.predict_with_target(
                &DVector::from_element(2, 0.0),
                &DVector::from_element(2, 0.0)
            ),
            Err(Error::InvalidArgument(_))
        ));
        assert!(p.gate_log_density(5, &DVector::from_element(2, 0.0)).is_err());
    }
}
