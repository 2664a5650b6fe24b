//! Special functions, exponential-family expectations, and the conjugate
//! parameter blocks used by the mixture: Beta sticks, Normal-Wishart gates,
//! and Matrix-Normal-Wishart experts.
//!
//! Domain violations (non-SPD scales, out-of-range degrees of freedom,
//! nonpositive special-function arguments) are reported as errors, never as
//! NaN. SPD factorizations symmetrize first and go through Cholesky; a failed
//! factorization is an error, there is no jitter fallback.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::serde_mat::{mat_f64, vec_f64};

pub(crate) type CholDyn = Cholesky<f64, Dyn>;

/// Digamma via upward recurrence into the asymptotic regime, then the
/// Bernoulli-series expansion. Absolute error below 1e-10 on [1e-8, 1e8].
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::invalid(format!("digamma domain requires x > 0, got {x}")));
    }
    let mut value = 0.0;
    let mut x = x;
    while x < 6.0 {
        value -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // ln x - 1/(2x) - sum_{n>=1} B_{2n} / (2n x^{2n})
    let series = inv2
        * (1.0 / 12.0
            + inv2
                * (-1.0 / 120.0
                    + inv2
                        * (1.0 / 252.0
                            + inv2
                                * (-1.0 / 240.0
                                    + inv2
                                        * (1.0 / 132.0
                                            + inv2 * (-691.0 / 32760.0 + inv2 / 12.0))))));
    Ok(value + x.ln() - 0.5 * inv - series)
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Log-gamma for positive arguments (Lanczos, g = 7, 9 terms; reflection
/// below 1/2). Relative error is near machine precision over our domain.
pub fn ln_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::invalid(format!("ln_gamma domain requires x > 0, got {x}")));
    }
    if x < 0.5 {
        // ln Γ(x) = ln(π / sin(πx)) - ln Γ(1 - x)
        let reflected = ln_gamma_core(1.0 - x);
        return Ok((std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - reflected);
    }
    Ok(ln_gamma_core(x))
}

fn ln_gamma_core(x: f64) -> f64 {
    let z = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
}

/// Multivariate log-gamma ln Γ_p(a); requires a > (p - 1) / 2.
pub fn ln_multigamma(p: usize, a: f64) -> Result<f64> {
    if p == 0 {
        return Err(Error::invalid("ln_multigamma requires dimension >= 1"));
    }
    if !(a > 0.5 * (p as f64 - 1.0)) {
        return Err(Error::invalid(format!(
            "ln_multigamma domain requires a > (p-1)/2, got a = {a}, p = {p}"
        )));
    }
    let mut acc = 0.25 * (p * (p - 1)) as f64 * std::f64::consts::PI.ln();
    for j in 0..p {
        acc += ln_gamma(a - 0.5 * j as f64)?;
    }
    Ok(acc)
}

/// Stable log(sum(exp(v))). Errors on an empty slice; -inf entries are
/// handled exactly.
pub fn log_sum_exp(vals: &[f64]) -> Result<f64> {
    let max = vals
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if vals.is_empty() {
        return Err(Error::invalid("log_sum_exp of an empty slice"));
    }
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let sum: f64 = vals.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

pub(crate) fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = m.transpose();
    s += m;
    s *= 0.5;
    s
}

/// Cholesky of (A + Aᵀ)/2. Failure means the matrix is not positive definite
/// and is reported with the caller-supplied label.
pub(crate) fn spd_cholesky(m: &DMatrix<f64>, what: &str) -> Result<CholDyn> {
    if m.nrows() != m.ncols() {
        return Err(Error::invalid(format!("{what}: expected a square matrix")));
    }
    Cholesky::new(symmetrized(m))
        .ok_or_else(|| Error::numerical(format!("{what}: matrix is not positive definite")))
}

pub(crate) fn chol_ln_det(chol: &CholDyn) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// E[ln |Λ|] for Λ ~ Wishart(scale, dof): Σ_j ψ((dof + 1 - j)/2) + p ln 2
/// + ln |scale|, j = 1..p.
pub fn expected_log_det_wishart(scale: &DMatrix<f64>, dof: f64) -> Result<f64> {
    let p = scale.nrows();
    if !(dof > p as f64 - 1.0) {
        return Err(Error::invalid(format!(
            "wishart dof must exceed dim - 1, got dof = {dof}, dim = {p}"
        )));
    }
    let chol = spd_cholesky(scale, "wishart scale")?;
    let mut acc = p as f64 * std::f64::consts::LN_2 + chol_ln_det(&chol);
    for j in 1..=p {
        acc += digamma(0.5 * (dof + 1.0 - j as f64))?;
    }
    Ok(acc)
}

/// KL(W(scale_q, dof_q) || W(scale_p, dof_p)) for Wisharts of equal dimension.
pub fn wishart_kl(
    scale_q: &DMatrix<f64>,
    dof_q: f64,
    scale_p: &DMatrix<f64>,
    dof_p: f64,
) -> Result<f64> {
    let p = scale_q.nrows();
    if scale_p.nrows() != p || scale_p.ncols() != p || scale_q.ncols() != p {
        return Err(Error::invalid("wishart_kl: dimension mismatch"));
    }
    let d = p as f64;
    let chol_q = spd_cholesky(scale_q, "wishart_kl q scale")?;
    let chol_p = spd_cholesky(scale_p, "wishart_kl p scale")?;
    let ln_det_q = chol_ln_det(&chol_q);
    let ln_det_p = chol_ln_det(&chol_p);
    let e_log_det = expected_log_det_wishart(scale_q, dof_q)?;
    // tr(scale_p⁻¹ scale_q)
    let tr = chol_p.solve(scale_q).trace();
    Ok(0.5 * (dof_q - dof_p) * e_log_det + 0.5 * dof_q * (tr - d)
        - 0.5 * dof_q * ln_det_q
        + 0.5 * dof_p * ln_det_p
        - 0.5 * (dof_q - dof_p) * d * std::f64::consts::LN_2
        - ln_multigamma(p, 0.5 * dof_q)?
        + ln_multigamma(p, 0.5 * dof_p)?)
}

/// KL(Dir(aq) || Dir(ap)) for Dirichlet concentration vectors of equal length.
pub fn dirichlet_kl(aq: &[f64], ap: &[f64]) -> Result<f64> {
    if aq.len() != ap.len() || aq.is_empty() {
        return Err(Error::invalid("dirichlet_kl: concentration lengths must match"));
    }
    let sq: f64 = aq.iter().sum();
    let sp: f64 = ap.iter().sum();
    let mut acc = ln_gamma(sq)? - ln_gamma(sp)?;
    let psi_sq = digamma(sq)?;
    for (&q, &p) in aq.iter().zip(ap) {
        acc += ln_gamma(p)? - ln_gamma(q)? + (q - p) * (digamma(q)? - psi_sq);
    }
    Ok(acc)
}

/// Multivariate Student-t log density with location `mean`, positive definite
/// `scale`, and `dof` degrees of freedom.
pub fn student_t_logpdf(
    x: &DVector<f64>,
    mean: &DVector<f64>,
    scale: &DMatrix<f64>,
    dof: f64,
) -> Result<f64> {
    let p = x.len();
    if mean.len() != p || scale.nrows() != p || scale.ncols() != p {
        return Err(Error::invalid("student_t_logpdf: dimension mismatch"));
    }
    if !(dof > 0.0) {
        return Err(Error::invalid(format!("student t dof must be positive, got {dof}")));
    }
    let chol = spd_cholesky(scale, "student t scale")?;
    let delta = x - mean;
    let quad = delta.dot(&chol.solve(&delta));
    let d = p as f64;
    Ok(ln_gamma(0.5 * (dof + d))? - ln_gamma(0.5 * dof)?
        - 0.5 * d * (dof * std::f64::consts::PI).ln()
        - 0.5 * chol_ln_det(&chol)
        - 0.5 * (dof + d) * (quad / dof).ln_1p())
}

/// Beta stick parameters (γ₁, γ₂).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
}

impl BetaParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        let p = Self { a, b };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite() && self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::invalid(format!(
                "beta parameters must be positive and finite, got ({}, {})",
                self.a, self.b
            )));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    /// E[ln v] for v ~ Beta(a, b).
    pub fn expected_log(&self) -> Result<f64> {
        Ok(digamma(self.a)? - digamma(self.a + self.b)?)
    }

    /// E[ln (1 - v)] for v ~ Beta(a, b).
    pub fn expected_log_complement(&self) -> Result<f64> {
        Ok(digamma(self.b)? - digamma(self.a + self.b)?)
    }

    pub fn kl(&self, prior: &BetaParams) -> Result<f64> {
        let (aq, bq, ap, bp) = (self.a, self.b, prior.a, prior.b);
        let ln_beta = |a: f64, b: f64| -> Result<f64> {
            Ok(ln_gamma(a)? + ln_gamma(b)? - ln_gamma(a + b)?)
        };
        Ok(ln_beta(ap, bp)? - ln_beta(aq, bq)?
            + (aq - ap) * digamma(aq)?
            + (bq - bp) * digamma(bq)?
            + (ap + bp - aq - bq) * digamma(aq + bq)?)
    }
}

/// Normal-Wishart block over a gate's input mean and precision:
/// Λ ~ W(scale, dof), μ | Λ ~ N(mean, (mean_precision · Λ)⁻¹).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalWishart {
    #[serde(with = "vec_f64")]
    pub mean: DVector<f64>,
    pub mean_precision: f64,
    #[serde(with = "mat_f64")]
    pub scale: DMatrix<f64>,
    pub dof: f64,
}

impl NormalWishart {
    pub fn new(mean: DVector<f64>, mean_precision: f64, scale: DMatrix<f64>, dof: f64) -> Result<Self> {
        let nw = Self { mean, mean_precision, scale, dof };
        nw.validate()?;
        Ok(nw)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.mean.len();
        if p == 0 {
            return Err(Error::invalid("normal-wishart dimension must be >= 1"));
        }
        if self.scale.nrows() != p || self.scale.ncols() != p {
            return Err(Error::invalid("normal-wishart scale shape must match the mean"));
        }
        if !(self.mean_precision > 0.0 && self.mean_precision.is_finite()) {
            return Err(Error::invalid(format!(
                "normal-wishart mean precision must be positive, got {}",
                self.mean_precision
            )));
        }
        if !(self.dof > p as f64 - 1.0) {
            return Err(Error::invalid(format!(
                "normal-wishart dof must exceed dim - 1, got {}",
                self.dof
            )));
        }
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("normal-wishart mean must be finite"));
        }
        spd_cholesky(&self.scale, "normal-wishart scale")?;
        Ok(())
    }

    pub fn expected_log_det_precision(&self) -> Result<f64> {
        expected_log_det_wishart(&self.scale, self.dof)
    }

    pub fn kl(&self, prior: &NormalWishart) -> Result<f64> {
        let p = self.dim();
        if prior.dim() != p {
            return Err(Error::invalid("normal-wishart KL: dimension mismatch"));
        }
        let d = p as f64;
        let dm = &self.mean - &prior.mean;
        // E_q[Λ] = dof · scale
        let quad = self.dof * (&self.scale * &dm).dot(&dm);
        let lratio = self.mean_precision / prior.mean_precision;
        let gauss = 0.5
            * (prior.mean_precision * quad + d / lratio - d + d * lratio.ln());
        Ok(gauss + wishart_kl(&self.scale, self.dof, &prior.scale, prior.dof)?)
    }

    /// Posterior-predictive Student-t for a fresh input under this block:
    /// dof' = dof - dim + 1, scale' = ((λ + 1) / (λ dof')) · scale⁻¹.
    pub fn predictive_t(&self) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let dof_t = self.dof - self.dim() as f64 + 1.0;
        let chol = spd_cholesky(&self.scale, "normal-wishart scale")?;
        let factor = (self.mean_precision + 1.0) / (self.mean_precision * dof_t);
        Ok((dof_t, self.mean.clone(), chol.inverse() * factor))
    }
}

/// Matrix-Normal-Wishart block over an expert's coefficient matrix and output
/// precision: V ~ W(scale, dof), A | V ~ MN(mean, V⁻¹, col_precision⁻¹).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixNormalWishart {
    #[serde(with = "mat_f64")]
    pub mean: DMatrix<f64>,
    #[serde(with = "mat_f64")]
    pub col_precision: DMatrix<f64>,
    #[serde(with = "mat_f64")]
    pub scale: DMatrix<f64>,
    pub dof: f64,
}

impl MatrixNormalWishart {
    pub fn new(
        mean: DMatrix<f64>,
        col_precision: DMatrix<f64>,
        scale: DMatrix<f64>,
        dof: f64,
    ) -> Result<Self> {
        let mnw = Self { mean, col_precision, scale, dof };
        mnw.validate()?;
        Ok(mnw)
    }

    pub fn out_dim(&self) -> usize {
        self.mean.nrows()
    }

    pub fn feat_dim(&self) -> usize {
        self.mean.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (d, m) = (self.mean.nrows(), self.mean.ncols());
        if d == 0 || m == 0 {
            return Err(Error::invalid("matrix-normal-wishart dimensions must be >= 1"));
        }
        if self.col_precision.nrows() != m || self.col_precision.ncols() != m {
            return Err(Error::invalid(
                "matrix-normal-wishart column precision must be feat_dim x feat_dim",
            ));
        }
        if self.scale.nrows() != d || self.scale.ncols() != d {
            return Err(Error::invalid(
                "matrix-normal-wishart scale must be out_dim x out_dim",
            ));
        }
        if !(self.dof > d as f64 - 1.0) {
            return Err(Error::invalid(format!(
                "matrix-normal-wishart dof must exceed out_dim - 1, got {}",
                self.dof
            )));
        }
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("matrix-normal-wishart mean must be finite"));
        }
        spd_cholesky(&self.col_precision, "matrix-normal-wishart column precision")?;
        spd_cholesky(&self.scale, "matrix-normal-wishart scale")?;
        Ok(())
    }

    pub fn expected_log_det_precision(&self) -> Result<f64> {
        expected_log_det_wishart(&self.scale, self.dof)
    }

    pub fn kl(&self, prior: &MatrixNormalWishart) -> Result<f64> {
        let (d, m) = (self.out_dim(), self.feat_dim());
        if prior.out_dim() != d || prior.feat_dim() != m {
            return Err(Error::invalid("matrix-normal-wishart KL: dimension mismatch"));
        }
        let chol_kq = spd_cholesky(&self.col_precision, "mnw KL column precision")?;
        let chol_kp = spd_cholesky(&prior.col_precision, "mnw KL prior column precision")?;
        // tr(K_p K_q⁻¹)
        let tr_k = chol_kq.solve(&prior.col_precision).trace();
        let dm = &self.mean - &prior.mean;
        let mid = &dm * &prior.col_precision * dm.transpose();
        // E_q[V] = dof · scale
        let tr_quad = self.dof * (&self.scale * &mid).trace();
        let df = d as f64;
        let gauss = 0.5
            * (df * tr_k - df * m as f64
                + tr_quad
                + df * (chol_ln_det(&chol_kq) - chol_ln_det(&chol_kp)));
        Ok(gauss + wishart_kl(&self.scale, self.dof, &prior.scale, prior.dof)?)
    }

    /// Posterior-predictive Student-t for the output at feature vector `x`:
    /// dof' = dof - out_dim + 1, mean' = M x,
    /// scale' = ((1 + xᵀ col_precision⁻¹ x) / dof') · scale⁻¹.
    pub fn predictive_t(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        if x.len() != self.feat_dim() {
            return Err(Error::invalid("predictive_t: feature dimension mismatch"));
        }
        let dof_t = self.dof - self.out_dim() as f64 + 1.0;
        let chol_k = spd_cholesky(&self.col_precision, "mnw column precision")?;
        let c = 1.0 + x.dot(&chol_k.solve(x));
        let chol_p = spd_cholesky(&self.scale, "mnw scale")?;
        Ok((dof_t, &self.mean * x, chol_p.inverse() * (c / dof_t)))
    }
}
