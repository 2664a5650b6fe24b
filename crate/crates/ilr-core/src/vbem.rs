//! Variational Bayes EM for the truncated mixture: E-step responsibilities,
//! closed-form M-step, ELBO assembly, convergence control with restarts, the
//! stochastic minibatch variant, and Bayesian sequential updates where the
//! posterior of earlier batches becomes the prior for the next.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::dist::{dirichlet_kl, spd_cholesky};
use crate::error::{Error, Result};
use crate::features::{FeatureMap, Standardizer};
use crate::model::{
    expected_log_weights_of, ComponentPosterior, FitMeta, GatingPriorKind, Hyperparams,
    MixturePosterior, ModelDims, SufficientStats,
};

/// Below this responsibility mass a component is treated as empty and its
/// posterior snaps exactly to the prior.
pub const EMPTY_COMPONENT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    /// Responsibility rows drawn from a flat Dirichlet.
    Random,
    /// Hard assignments from k-means++ on the gating inputs, clusters
    /// relabeled by descending size.
    KMeans,
}

/// Fitting controls. `minibatch = 0` runs full-batch coordinate ascent;
/// a positive value runs stochastic updates with step size
/// ρ_t = (t + step_tau)^(-step_kappa).
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub max_iters: usize,
    pub elbo_rel_tol: f64,
    pub seed: u64,
    pub init: InitKind,
    pub restarts: usize,
    pub minibatch: usize,
    pub step_tau: f64,
    pub step_kappa: f64,
    /// Omits the output-dimension factor on the E-step feature quadratic
    /// term (identical when d = 1). The scaled default is the exact
    /// expectation of the regression residual under the coefficient prior.
    pub unscaled_feature_quadratic: bool,
    /// Standardize inputs and targets before fitting (population moments).
    /// Identity standardization is useful when comparing against conjugate
    /// closed forms in raw units.
    pub standardize: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            elbo_rel_tol: 1e-6,
            seed: 0,
            init: InitKind::KMeans,
            restarts: 10,
            minibatch: 0,
            step_tau: 1.0,
            step_kappa: 0.7,
            unscaled_feature_quadratic: false,
            standardize: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be >= 1"));
        }
        if !(self.elbo_rel_tol > 0.0) {
            return Err(Error::invalid("elbo_rel_tol must be positive"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be >= 1"));
        }
        if self.minibatch > 0 {
            if !(self.step_kappa > 0.5 && self.step_kappa <= 1.0) {
                return Err(Error::invalid(
                    "step_kappa must lie in (0.5, 1] for stochastic updates",
                ));
            }
            if !(self.step_tau >= 0.0) {
                return Err(Error::invalid("step_tau must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Posterior assignment probabilities, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub r: DMatrix<f64>,
}

impl Responsibilities {
    pub fn validate(&self) -> Result<()> {
        for n in 0..self.r.nrows() {
            let mut sum = 0.0;
            for k in 0..self.r.ncols() {
                let v = self.r[(n, k)];
                if !(0.0..=1.0 + 1e-12).contains(&v) {
                    return Err(Error::InvariantViolation(format!(
                        "responsibility ({n}, {k}) = {v} outside [0, 1]"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-10 {
                return Err(Error::InvariantViolation(format!(
                    "responsibility row {n} sums to {sum}"
                )));
            }
        }
        Ok(())
    }
}

/// Data in fitting layout: observations as columns, gate inputs and targets
/// already standardized, features already mapped.
pub(crate) struct Design {
    pub gate: DMatrix<f64>,
    pub feat: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl Design {
    fn len(&self) -> usize {
        self.gate.ncols()
    }

    fn from_dataset(
        ds: &Dataset,
        fmap: &FeatureMap,
        standardizer: &Standardizer,
    ) -> Result<Design> {
        let mut gate = ds.inputs.transpose();
        let mut y = ds.targets.transpose();
        standardizer.transform_x_columns(&mut gate);
        standardizer.transform_y_columns(&mut y);
        let feat = fmap.apply_columns(&gate)?;
        Ok(Design { gate, feat, y })
    }

    fn select(&self, idx: &[usize]) -> Design {
        Design {
            gate: self.gate.select_columns(idx),
            feat: self.feat.select_columns(idx),
            y: self.y.select_columns(idx),
        }
    }
}

/// Per-component prior precomputations reused every M-step.
struct PriorPrecomp {
    gate_scale_inv: DMatrix<f64>,
    expert_scale_inv: DMatrix<f64>,
    /// M₀ K₀
    mean_colprec: DMatrix<f64>,
    /// M₀ K₀ M₀ᵀ
    mean_colprec_meant: DMatrix<f64>,
}

impl PriorPrecomp {
    fn build(prior: &ComponentPosterior) -> Result<Self> {
        let gate_scale_inv = spd_cholesky(&prior.gating.scale, "prior gating scale")?.inverse();
        let expert_scale_inv = spd_cholesky(&prior.expert.scale, "prior expert scale")?.inverse();
        let mean_colprec = &prior.expert.mean * &prior.expert.col_precision;
        let mean_colprec_meant = &mean_colprec * prior.expert.mean.transpose();
        Ok(Self {
            gate_scale_inv,
            expert_scale_inv,
            mean_colprec,
            mean_colprec_meant,
        })
    }
}

/// Everything a fit run needs besides the evolving component posteriors.
struct Ctx<'a> {
    design: &'a Design,
    priors: &'a [ComponentPosterior],
    precomp: Vec<PriorPrecomp>,
    kind: GatingPriorKind,
    dims: ModelDims,
    /// Output-dimension factor on the feature quadratic E-step term; 1.0
    /// when the unscaled variant is requested.
    d_factor: f64,
}

impl<'a> Ctx<'a> {
    fn new(
        design: &'a Design,
        priors: &'a [ComponentPosterior],
        kind: GatingPriorKind,
        dims: ModelDims,
        unscaled_feature_quadratic: bool,
    ) -> Result<Self> {
        let precomp = priors.iter().map(PriorPrecomp::build).collect::<Result<Vec<_>>>()?;
        let d_factor = if unscaled_feature_quadratic { 1.0 } else { dims.output_dim as f64 };
        Ok(Self { design, priors, precomp, kind, dims, d_factor })
    }

    fn k(&self) -> usize {
        self.priors.len()
    }

    /// Fills `out[(n, k)]` with the unnormalized log responsibility:
    /// E[ln π_k] + ½E[ln|Λ_k|] + ½E[ln|V_k|] - m_x/(2λ_k) - ½(m_x + d)ln 2π
    /// - ½[ν_k (x-m_k)ᵀL_k(x-m_k) + d·XᵀK_k⁻¹X + η_k (y-M_kX)ᵀP_k(y-M_kX)].
    fn log_resp_into(&self, comps: &[ComponentPosterior], out: &mut DMatrix<f64>) -> Result<()> {
        let ModelDims { input_dim, feature_dim, output_dim } = self.dims;
        let n = self.design.len();
        debug_assert_eq!(out.nrows(), n);
        debug_assert_eq!(out.ncols(), comps.len());

        let elogpi = expected_log_weights_of(comps, self.kind)?;
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        let mut log_const = Vec::with_capacity(comps.len());
        let mut chol_feat_l = Vec::with_capacity(comps.len());
        for (k, comp) in comps.iter().enumerate() {
            let eld_gate = comp.gating.expected_log_det_precision()?;
            let eld_out = comp.expert.expected_log_det_precision()?;
            let chol = spd_cholesky(&comp.expert.col_precision, "expert column precision")
                .map_err(|e| Error::InvariantViolation(format!("component {k}: {e}")))?;
            chol_feat_l.push(chol.l());
            log_const.push(
                elogpi[k] + 0.5 * (eld_gate + eld_out)
                    - input_dim as f64 / (2.0 * comp.gating.mean_precision)
                    - 0.5 * (input_dim + output_dim) as f64 * ln_2pi,
            );
        }

        let mut x = DVector::zeros(input_dim);
        let mut f = DVector::zeros(feature_dim);
        let mut y = DVector::zeros(output_dim);
        let mut dx = DVector::zeros(input_dim);
        let mut tx = DVector::zeros(input_dim);
        let mut z = DVector::zeros(feature_dim);
        let mut res = DVector::zeros(output_dim);
        let mut ty = DVector::zeros(output_dim);
        for i in 0..n {
            x.copy_from(&self.design.gate.column(i));
            f.copy_from(&self.design.feat.column(i));
            y.copy_from(&self.design.y.column(i));
            for (k, comp) in comps.iter().enumerate() {
                dx.copy_from(&x);
                dx -= &comp.gating.mean;
                tx.gemv(1.0, &comp.gating.scale, &dx, 0.0);
                let q_gate = dx.dot(&tx);

                z.copy_from(&f);
                // K_k = L Lᵀ, so XᵀK_k⁻¹X = ‖L⁻¹X‖².
                let ok = chol_feat_l[k].solve_lower_triangular_mut(&mut z);
                debug_assert!(ok);
                let q_feat = z.norm_squared();

                res.copy_from(&y);
                res.gemv(-1.0, &comp.expert.mean, &f, 1.0);
                ty.gemv(1.0, &comp.expert.scale, &res, 0.0);
                let q_out = res.dot(&ty);

                out[(i, k)] = log_const[k]
                    - 0.5
                        * (comp.gating.dof * q_gate
                            + self.d_factor * q_feat
                            + comp.expert.dof * q_out);
            }
        }
        Ok(())
    }

    /// Accumulates responsibility-weighted statistics from a matrix of
    /// responsibilities (rows aligned with the design).
    fn stats(&self, r: &DMatrix<f64>) -> SufficientStats {
        let ModelDims { input_dim, feature_dim, output_dim } = self.dims;
        let mut stats = SufficientStats::zeros(r.ncols(), self.dims);
        let mut x = DVector::zeros(input_dim);
        let mut f = DVector::zeros(feature_dim);
        let mut y = DVector::zeros(output_dim);
        let mut row = vec![0.0; r.ncols()];
        for i in 0..self.design.len() {
            x.copy_from(&self.design.gate.column(i));
            f.copy_from(&self.design.feat.column(i));
            y.copy_from(&self.design.y.column(i));
            for (k, slot) in row.iter_mut().enumerate() {
                *slot = r[(i, k)];
            }
            stats.add_point(&row, &x, &f, &y);
        }
        stats
    }

    fn m_step(&self, stats: &SufficientStats) -> Result<Vec<ComponentPosterior>> {
        m_step_core(stats, self.priors, &self.precomp, self.kind)
    }

    /// Sum of KL(q || prior) over sticks, gates, and experts. Stick-breaking
    /// sums Beta KLs over the first k_max - 1 sticks (the last is pinned);
    /// the finite-Dirichlet variant uses a single Dirichlet KL.
    fn kl_total(&self, comps: &[ComponentPosterior]) -> Result<f64> {
        let mut total = 0.0;
        match self.kind {
            GatingPriorKind::StickBreaking => {
                for (comp, prior) in comps.iter().zip(self.priors).take(comps.len() - 1) {
                    total += comp.stick.kl(&prior.stick)?;
                }
            }
            GatingPriorKind::FiniteDirichlet => {
                let aq: Vec<f64> = comps.iter().map(|c| c.stick.a).collect();
                let ap: Vec<f64> = self.priors.iter().map(|c| c.stick.a).collect();
                total += dirichlet_kl(&aq, &ap)?;
            }
        }
        for (comp, prior) in comps.iter().zip(self.priors) {
            total += comp.gating.kl(&prior.gating)?;
            total += comp.expert.kl(&prior.expert)?;
        }
        Ok(total)
    }
}

/// Converts log responsibilities to responsibilities in place, returning the
/// summed per-row log normalizers. Because every row becomes an exact
/// softmax of its log densities, Σ_n lse_n equals the expected log-likelihood
/// plus gating plus entropy part of the ELBO for the current parameters.
fn normalize_rows_in_place(log_r: &mut DMatrix<f64>) -> f64 {
    let mut total = 0.0;
    for n in 0..log_r.nrows() {
        let mut max = f64::NEG_INFINITY;
        for k in 0..log_r.ncols() {
            max = max.max(log_r[(n, k)]);
        }
        let mut sum = 0.0;
        for k in 0..log_r.ncols() {
            sum += (log_r[(n, k)] - max).exp();
        }
        let lse = max + sum.ln();
        total += lse;
        for k in 0..log_r.ncols() {
            let v = (log_r[(n, k)] - lse).exp();
            log_r[(n, k)] = v;
        }
    }
    total
}

fn m_step_core(
    stats: &SufficientStats,
    priors: &[ComponentPosterior],
    precomp: &[PriorPrecomp],
    kind: GatingPriorKind,
) -> Result<Vec<ComponentPosterior>> {
    let k_max = priors.len();
    if stats.k() != k_max {
        return Err(Error::invalid("statistics and prior component counts differ"));
    }
    // Stick parameters first: the Dirichlet variant needs all updated
    // concentrations before the marginal Betas can be formed.
    let occupied: Vec<f64> = stats
        .n
        .iter()
        .map(|&nk| if nk < EMPTY_COMPONENT_EPS { 0.0 } else { nk })
        .collect();
    let sticks: Vec<crate::dist::BetaParams> = match kind {
        GatingPriorKind::StickBreaking => (0..k_max)
            .map(|k| {
                crate::dist::BetaParams::new(
                    priors[k].stick.a + occupied[k],
                    priors[k].stick.b + stats.tail(k),
                )
            })
            .collect::<Result<_>>()?,
        GatingPriorKind::FiniteDirichlet => {
            if k_max == 1 {
                vec![priors[0].stick.clone()]
            } else {
                let a: Vec<f64> = (0..k_max).map(|k| priors[k].stick.a + occupied[k]).collect();
                let total: f64 = a.iter().sum();
                a.iter()
                    .map(|&ak| crate::dist::BetaParams::new(ak, total - ak))
                    .collect::<Result<_>>()?
            }
        }
    };

    let mut out = Vec::with_capacity(k_max);
    for k in 0..k_max {
        let prior = &priors[k];
        let nk = stats.n[k];
        let (gating, expert) = if nk < EMPTY_COMPONENT_EPS {
            (prior.gating.clone(), prior.expert.clone())
        } else {
            let lam0 = prior.gating.mean_precision;
            let lam = lam0 + nk;
            let mean = (&stats.sum_x[k] + &prior.gating.mean * lam0) / lam;
            let dof = prior.gating.dof + nk;
            let xbar = &stats.sum_x[k] / nk;
            // L_k⁻¹ = L₀⁻¹ + Σ r (x - x̄)(x - x̄)ᵀ
            //        + (λ₀ n_k / (λ₀ + n_k)) (x̄ - m₀)(x̄ - m₀)ᵀ
            let mut l_inv = precomp[k].gate_scale_inv.clone();
            l_inv += &stats.sum_xx[k];
            l_inv.ger(-nk, &xbar, &xbar, 1.0);
            let dxm = &xbar - &prior.gating.mean;
            l_inv.ger(lam0 * nk / (lam0 + nk), &dxm, &dxm, 1.0);
            let scale = spd_cholesky(&l_inv, "updated gating precision scale")
                .map_err(|e| Error::InvariantViolation(format!("component {k}: {e}")))?
                .inverse();
            let gating = crate::dist::NormalWishart {
                mean,
                mean_precision: lam,
                scale,
                dof,
            };

            // K_k = K₀ + Σ r X Xᵀ; M_k K_k = M₀ K₀ + Σ r y Xᵀ;
            // P_k⁻¹ = P₀⁻¹ + M₀K₀M₀ᵀ + Σ r y yᵀ - M_k K_k M_kᵀ.
            let mut col_precision = prior.expert.col_precision.clone();
            col_precision += &stats.sum_ff[k];
            let rhs = &precomp[k].mean_colprec + &stats.sum_yf[k];
            let chol_k = spd_cholesky(&col_precision, "updated expert column precision")
                .map_err(|e| Error::InvariantViolation(format!("component {k}: {e}")))?;
            let mean_t = chol_k.solve(&rhs.transpose());
            let mean = mean_t.transpose();
            let mut p_inv = precomp[k].expert_scale_inv.clone();
            p_inv += &precomp[k].mean_colprec_meant;
            p_inv += &stats.sum_yy[k];
            p_inv -= &rhs * &mean_t;
            let scale = spd_cholesky(&p_inv, "updated expert precision scale")
                .map_err(|e| Error::InvariantViolation(format!("component {k}: {e}")))?
                .inverse();
            let expert = crate::dist::MatrixNormalWishart {
                mean,
                col_precision,
                scale,
                dof: prior.expert.dof + nk,
            };
            (gating, expert)
        };
        out.push(ComponentPosterior {
            stick: sticks[k].clone(),
            gating,
            expert,
            occupancy: prior.occupancy + nk,
        });
    }
    Ok(out)
}

fn rel_change(current: f64, previous: f64) -> f64 {
    (current - previous).abs() / previous.abs().max(1.0)
}

struct RunOutcome {
    comps: Vec<ComponentPosterior>,
    trace: Vec<f64>,
    converged: bool,
}

impl RunOutcome {
    fn final_elbo(&self) -> f64 {
        *self.trace.last().expect("at least one iteration runs")
    }
}

/// Full-batch coordinate ascent from initial responsibilities. The ELBO is
/// evaluated after each E-step with the responsibilities it just produced;
/// that sequence is monotone under coordinate ascent.
fn ascend(ctx: &Ctx, r0: DMatrix<f64>, cfg: &FitConfig) -> Result<RunOutcome> {
    let mut stats = ctx.stats(&r0);
    let mut comps = ctx.m_step(&stats)?;
    let mut log_r = DMatrix::zeros(ctx.design.len(), ctx.k());
    let mut trace = Vec::new();
    let mut prev: Option<f64> = None;
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        ctx.log_resp_into(&comps, &mut log_r)?;
        let lse_sum = normalize_rows_in_place(&mut log_r);
        let elbo = lse_sum - ctx.kl_total(&comps)?;
        trace.push(elbo);
        stats = ctx.stats(&log_r);
        comps = ctx.m_step(&stats)?;
        if let Some(p) = prev {
            if rel_change(elbo, p) < cfg.elbo_rel_tol {
                converged = true;
                break;
            }
        }
        prev = Some(elbo);
    }
    Ok(RunOutcome { comps, trace, converged })
}

/// Stochastic variant: each step E-steps a uniform minibatch and blends its
/// scaled statistics into the running global statistics in natural-parameter
/// space. Runs a fixed number of steps (the objective estimate is noisy).
fn ascend_minibatch(
    ctx: &Ctx,
    r0: DMatrix<f64>,
    cfg: &FitConfig,
    rng: &mut ChaCha8Rng,
) -> Result<RunOutcome> {
    let n = ctx.design.len();
    let m = cfg.minibatch;
    if m > n {
        return Err(Error::invalid(format!(
            "minibatch size {m} exceeds the dataset size {n}"
        )));
    }
    let scale = n as f64 / m as f64;
    let mut global = ctx.stats(&r0);
    let mut comps = ctx.m_step(&global)?;
    let mut log_r = DMatrix::zeros(m, ctx.k());
    let mut trace = Vec::new();
    for t in 0..cfg.max_iters {
        let mut idx = rand::seq::index::sample(rng, n, m).into_vec();
        idx.sort_unstable();
        let sub = ctx.design.select(&idx);
        let sub_ctx = Ctx {
            design: &sub,
            priors: ctx.priors,
            precomp: ctx.priors.iter().map(PriorPrecomp::build).collect::<Result<Vec<_>>>()?,
            kind: ctx.kind,
            dims: ctx.dims,
            d_factor: ctx.d_factor,
        };
        sub_ctx.log_resp_into(&comps, &mut log_r)?;
        let lse_sum = normalize_rows_in_place(&mut log_r);
        trace.push(scale * lse_sum - ctx.kl_total(&comps)?);
        let mb_stats = sub_ctx.stats(&log_r);
        let rho = (t as f64 + cfg.step_tau).powf(-cfg.step_kappa);
        global.blend(&mb_stats, rho.min(1.0), scale);
        comps = ctx.m_step(&global)?;
    }
    let converged = trace
        .len()
        .checked_sub(2)
        .map(|i| rel_change(trace[i + 1], trace[i]) < cfg.elbo_rel_tol)
        .unwrap_or(false);
    Ok(RunOutcome { comps, trace, converged })
}

fn check_dims(
    dataset: &Dataset,
    feature_map: &FeatureMap,
    hyper: &Hyperparams,
) -> Result<()> {
    let dims = hyper.dims();
    if dataset.input_dim() != dims.input_dim || dataset.output_dim() != dims.output_dim {
        return Err(Error::invalid(format!(
            "dataset is {}-in/{}-out but the hyperparameters expect {}-in/{}-out",
            dataset.input_dim(),
            dataset.output_dim(),
            dims.input_dim,
            dims.output_dim
        )));
    }
    if feature_map.input_dim() != dims.input_dim || feature_map.output_dim() != dims.feature_dim {
        return Err(Error::invalid(
            "feature map dimensions disagree with the hyperparameters",
        ));
    }
    Ok(())
}

fn init_responsibilities(
    gate: &DMatrix<f64>,
    k_max: usize,
    kind: InitKind,
    rng: &mut ChaCha8Rng,
) -> DMatrix<f64> {
    let n = gate.ncols();
    match kind {
        InitKind::Random => {
            let mut r = DMatrix::zeros(n, k_max);
            for i in 0..n {
                let mut sum = 0.0;
                for k in 0..k_max {
                    let e = -(1.0 - rng.random::<f64>()).ln();
                    r[(i, k)] = e;
                    sum += e;
                }
                for k in 0..k_max {
                    r[(i, k)] /= sum;
                }
            }
            r
        }
        InitKind::KMeans => {
            let k_eff = k_max.min(n);
            let assign = kmeans_assignments(gate, k_eff, rng);
            let mut r = DMatrix::zeros(n, k_max);
            for (i, &a) in assign.iter().enumerate() {
                r[(i, a)] = 1.0;
            }
            r
        }
    }
}

/// k-means++ seeding plus a short Lloyd refinement; returns assignments with
/// clusters relabeled by descending size so initialization favors putting
/// large clusters on early sticks.
fn kmeans_assignments(points: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = points.ncols();
    debug_assert!(k >= 1 && k <= n);
    let mut centers: Vec<DVector<f64>> = Vec::with_capacity(k);
    centers.push(points.column(rng.random_range(0..n)).into_owned());
    let mut d2 = vec![f64::INFINITY; n];
    while centers.len() < k {
        let last = centers.last().unwrap();
        let mut total = 0.0;
        for i in 0..n {
            let dist = (points.column(i) - last).norm_squared();
            if dist < d2[i] {
                d2[i] = dist;
            }
            total += d2[i];
        }
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(points.column(next).into_owned());
    }

    let mut assign = vec![0usize; n];
    for _ in 0..25 {
        let mut changed = false;
        for i in 0..n {
            let mut best = (f64::INFINITY, 0usize);
            for (c, center) in centers.iter().enumerate() {
                let dist = (points.column(i) - center).norm_squared();
                if dist < best.0 {
                    best = (dist, c);
                }
            }
            if assign[i] != best.1 {
                assign[i] = best.1;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        let mut sums = vec![DVector::<f64>::zeros(points.nrows()); k];
        for i in 0..n {
            counts[assign[i]] += 1;
            sums[assign[i]] += points.column(i);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = &sums[c] / counts[c] as f64;
            } else {
                // Reseed an empty cluster at the point farthest from its
                // current center.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = (points.column(a) - &centers[assign[a]]).norm_squared();
                        let db = (points.column(b) - &centers[assign[b]]).norm_squared();
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                centers[c] = points.column(far).into_owned();
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    // Relabel by descending cluster size (stable on ties).
    let mut counts = vec![0usize; k];
    for &a in &assign {
        counts[a] += 1;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&c| std::cmp::Reverse(counts[c]));
    let mut relabel = vec![0usize; k];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new;
    }
    for a in assign.iter_mut() {
        *a = relabel[*a];
    }
    assign
}

/// How `run_fits` seeds the restart loop.
enum InitPlan {
    /// `cfg.restarts` runs with `cfg.init`.
    Standard,
    /// One run from the given responsibilities, no restarts.
    Fixed(DMatrix<f64>),
    /// The given warm start as one extra candidate ahead of the
    /// `cfg.restarts` standard runs.
    WarmPlusStandard(DMatrix<f64>),
}

/// Runs the planned initializations and keeps the best final ELBO.
fn run_fits(
    design: &Design,
    priors: &[ComponentPosterior],
    hyper: &Hyperparams,
    feature_map: FeatureMap,
    standardizer: Standardizer,
    cfg: &FitConfig,
    plan: InitPlan,
) -> Result<MixturePosterior> {
    let ctx = Ctx::new(design, priors, hyper.gating_kind, hyper.dims(), cfg.unscaled_feature_quadratic)?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (warm, restarts) = match plan {
        InitPlan::Standard => (None, cfg.restarts),
        InitPlan::Fixed(r) => (Some(r), 0),
        InitPlan::WarmPlusStandard(r) => (Some(r), cfg.restarts),
    };
    let runs = restarts + warm.is_some() as usize;
    let mut best: Option<RunOutcome> = None;
    for run in 0..runs {
        let child_seed = master.random::<u64>();
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed);
        let r0 = match (&warm, run) {
            (Some(r), 0) => r.clone(),
            _ => init_responsibilities(&design.gate, ctx.k(), cfg.init, &mut rng),
        };
        if r0.nrows() != design.len() || r0.ncols() != ctx.k() {
            return Err(Error::invalid("initial responsibilities have the wrong shape"));
        }
        let outcome = if cfg.minibatch > 0 {
            ascend_minibatch(&ctx, r0, cfg, &mut rng)?
        } else {
            ascend(&ctx, r0, cfg)?
        };
        if best.as_ref().is_none_or(|b| outcome.final_elbo() > b.final_elbo()) {
            best = Some(outcome);
        }
    }
    let best = best.expect("at least one restart runs");
    let final_elbo = best.final_elbo();
    let model = MixturePosterior {
        format_version: crate::model::FORMAT_VERSION,
        hyperparams: hyper.clone(),
        components: best.comps,
        feature_map,
        standardizer,
        fit_meta: FitMeta {
            iterations: best.trace.len(),
            final_elbo,
            seed: cfg.seed,
            converged: best.converged,
            elbo_trace: best.trace,
        },
    };
    model.validate()?;
    Ok(model)
}

/// Fits the mixture to a dataset. `config.minibatch = 0` runs full-batch
/// variational EM; a positive value runs the stochastic variant.
pub fn fit(
    dataset: &Dataset,
    feature_map: &FeatureMap,
    hyper: &Hyperparams,
    config: &FitConfig,
) -> Result<MixturePosterior> {
    config.validate()?;
    hyper.validate()?;
    dataset.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("fit needs a non-empty dataset"));
    }
    check_dims(dataset, feature_map, hyper)?;
    let standardizer = if config.standardize {
        Standardizer::fit(&dataset.inputs.transpose(), &dataset.targets.transpose())?
    } else {
        Standardizer::identity(dataset.input_dim(), dataset.output_dim())
    };
    let design = Design::from_dataset(dataset, feature_map, &standardizer)?;
    let priors: Vec<ComponentPosterior> = (0..hyper.k_max)
        .map(|_| ComponentPosterior::from_prior(hyper))
        .collect();
    run_fits(&design, &priors, hyper, feature_map.clone(), standardizer, config, InitPlan::Standard)
}

/// Stochastic minibatch fit; requires `config.minibatch > 0`.
pub fn fit_minibatch(
    dataset: &Dataset,
    feature_map: &FeatureMap,
    hyper: &Hyperparams,
    config: &FitConfig,
) -> Result<MixturePosterior> {
    if config.minibatch == 0 {
        return Err(Error::invalid("fit_minibatch needs config.minibatch > 0"));
    }
    fit(dataset, feature_map, hyper, config)
}

/// Single fit from caller-supplied initial responsibilities (no restarts).
/// Useful for reproducibility studies: permuting dataset rows together with
/// the responsibility rows leaves the result unchanged.
pub fn fit_from_responsibilities(
    dataset: &Dataset,
    feature_map: &FeatureMap,
    hyper: &Hyperparams,
    config: &FitConfig,
    init: &Responsibilities,
) -> Result<MixturePosterior> {
    config.validate()?;
    hyper.validate()?;
    dataset.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("fit needs a non-empty dataset"));
    }
    check_dims(dataset, feature_map, hyper)?;
    let standardizer = if config.standardize {
        Standardizer::fit(&dataset.inputs.transpose(), &dataset.targets.transpose())?
    } else {
        Standardizer::identity(dataset.input_dim(), dataset.output_dim())
    };
    let design = Design::from_dataset(dataset, feature_map, &standardizer)?;
    let priors: Vec<ComponentPosterior> = (0..hyper.k_max)
        .map(|_| ComponentPosterior::from_prior(hyper))
        .collect();
    run_fits(
        &design,
        &priors,
        hyper,
        feature_map.clone(),
        standardizer,
        config,
        InitPlan::Fixed(init.r.clone()),
    )
}

/// Bayesian sequential update: the model's posterior becomes the
/// per-component prior for the new batch, which is fit on its own. The
/// feature map and the standardizer are carried over frozen from the
/// original fit. The fit uses the usual restart machinery plus one warm
/// start from an E-step under the carried model; a warm start alone cannot
/// split a new input region that the carried model lumps onto one
/// component.
pub fn sequential_update(
    model: &MixturePosterior,
    new_batch: &Dataset,
    config: &FitConfig,
) -> Result<MixturePosterior> {
    config.validate()?;
    model.validate()?;
    new_batch.validate()?;
    if new_batch.is_empty() {
        return Ok(model.clone());
    }
    let dims = model.dims();
    if new_batch.input_dim() != dims.input_dim || new_batch.output_dim() != dims.output_dim {
        return Err(Error::invalid(format!(
            "new batch is {}-in/{}-out but the model expects {}-in/{}-out",
            new_batch.input_dim(),
            new_batch.output_dim(),
            dims.input_dim,
            dims.output_dim
        )));
    }
    let design = Design::from_dataset(new_batch, &model.feature_map, &model.standardizer)?;
    let priors = model.components.clone();
    let ctx = Ctx::new(
        &design,
        &priors,
        model.hyperparams.gating_kind,
        dims,
        config.unscaled_feature_quadratic,
    )?;
    let mut log_r = DMatrix::zeros(design.len(), ctx.k());
    ctx.log_resp_into(&model.components, &mut log_r)?;
    normalize_rows_in_place(&mut log_r);
    run_fits(
        &design,
        &priors,
        &model.hyperparams,
        model.feature_map.clone(),
        model.standardizer.clone(),
        config,
        InitPlan::WarmPlusStandard(log_r),
    )
}

/// E-step against caller-prepared matrices in model (standardized) space:
/// `x_gate` is N x m_x, `x_feat` is N x m_f, `y` is N x d, rows aligned.
pub fn e_step(
    model: &MixturePosterior,
    x_gate: &DMatrix<f64>,
    x_feat: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> Result<Responsibilities> {
    let dims = model.dims();
    let n = x_gate.nrows();
    if x_feat.nrows() != n || y.nrows() != n {
        return Err(Error::invalid("e_step: row counts differ"));
    }
    if x_gate.ncols() != dims.input_dim
        || x_feat.ncols() != dims.feature_dim
        || y.ncols() != dims.output_dim
    {
        return Err(Error::invalid("e_step: column counts disagree with the model"));
    }
    if x_gate
        .iter()
        .chain(x_feat.iter())
        .chain(y.iter())
        .any(|v| !v.is_finite())
    {
        return Err(Error::data("e_step: non-finite inputs"));
    }
    let design = Design {
        gate: x_gate.transpose(),
        feat: x_feat.transpose(),
        y: y.transpose(),
    };
    let priors: Vec<ComponentPosterior> = (0..model.k_max())
        .map(|_| ComponentPosterior::from_prior(&model.hyperparams))
        .collect();
    let ctx = Ctx::new(&design, &priors, model.hyperparams.gating_kind, dims, false)?;
    let mut log_r = DMatrix::zeros(n, model.k_max());
    ctx.log_resp_into(&model.components, &mut log_r)?;
    normalize_rows_in_place(&mut log_r);
    Ok(Responsibilities { r: log_r })
}

/// M-step from accumulated statistics against the fresh prior in `hyper`.
pub fn m_step(stats: &SufficientStats, hyper: &Hyperparams) -> Result<Vec<ComponentPosterior>> {
    hyper.validate()?;
    if stats.k() != hyper.k_max {
        return Err(Error::invalid("statistics and hyperparameter component counts differ"));
    }
    let priors: Vec<ComponentPosterior> = (0..hyper.k_max)
        .map(|_| ComponentPosterior::from_prior(hyper))
        .collect();
    let precomp = priors.iter().map(PriorPrecomp::build).collect::<Result<Vec<_>>>()?;
    m_step_core(stats, &priors, &precomp, hyper.gating_kind)
}

/// Evidence lower bound of `model` against its hyperparameter prior for the
/// given responsibilities: E_q[log joint] - E_q[log q], with data matrices in
/// model (standardized) space as in [`e_step`]. Zero rows of data give 0 for
/// a prior model.
pub fn elbo(
    model: &MixturePosterior,
    x_gate: &DMatrix<f64>,
    x_feat: &DMatrix<f64>,
    y: &DMatrix<f64>,
    resp: &Responsibilities,
) -> Result<f64> {
    let dims = model.dims();
    let n = x_gate.nrows();
    if resp.r.nrows() != n || resp.r.ncols() != model.k_max() {
        return Err(Error::invalid("elbo: responsibility shape mismatch"));
    }
    if x_feat.nrows() != n || y.nrows() != n {
        return Err(Error::invalid("elbo: row counts differ"));
    }
    let design = Design {
        gate: x_gate.transpose(),
        feat: x_feat.transpose(),
        y: y.transpose(),
    };
    let priors: Vec<ComponentPosterior> = (0..model.k_max())
        .map(|_| ComponentPosterior::from_prior(&model.hyperparams))
        .collect();
    let ctx = Ctx::new(&design, &priors, model.hyperparams.gating_kind, dims, false)?;
    let mut log_r = DMatrix::zeros(n, model.k_max());
    ctx.log_resp_into(&model.components, &mut log_r)?;
    let mut data_part = 0.0;
    for i in 0..n {
        for k in 0..model.k_max() {
            let r = resp.r[(i, k)];
            if r > 0.0 {
                data_part += r * (log_r[(i, k)] - r.ln());
            }
        }
    }
    Ok(data_part - ctx.kl_total(&model.components)?)
}
