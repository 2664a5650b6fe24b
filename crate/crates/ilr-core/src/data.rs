//! Synthetic regression benchmarks, CSV I/O, and dataset splitting. Each
//! generator attaches ground-truth handles (noiseless mean and noise scale as
//! functions of the input) so calibration can be checked against the truth
//! rather than against noisy targets.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Regression dataset with observations as rows: `inputs` is N x input_dim,
/// `targets` is N x output_dim.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: DMatrix<f64>,
    pub targets: DMatrix<f64>,
    pub name: String,
    pub truth: Option<GroundTruth>,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, targets: DMatrix<f64>, name: impl Into<String>) -> Result<Self> {
        let ds = Self { inputs, targets, name: name.into(), truth: None };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.nrows() != self.targets.nrows() {
            return Err(Error::data(format!(
                "row count mismatch: {} inputs vs {} targets",
                self.inputs.nrows(),
                self.targets.nrows()
            )));
        }
        if self.inputs.ncols() == 0 || self.targets.ncols() == 0 {
            return Err(Error::data("datasets need at least one input and one target column"));
        }
        if self.inputs.iter().chain(self.targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::data("dataset entries must be finite"));
        }
        Ok(())
    }

    pub fn row_input(&self, i: usize) -> DVector<f64> {
        self.inputs.row(i).transpose()
    }

    pub fn row_target(&self, i: usize) -> DVector<f64> {
        self.targets.row(i).transpose()
    }

    /// Stacks batches in order; dimensions must agree. Ground truth is kept
    /// when all batches share the same generator.
    pub fn concat(batches: &[Dataset]) -> Result<Dataset> {
        let first = batches
            .first()
            .ok_or_else(|| Error::invalid("concat needs at least one batch"))?;
        let (mx, d) = (first.input_dim(), first.output_dim());
        let total: usize = batches.iter().map(Dataset::len).sum();
        let mut inputs = DMatrix::zeros(total, mx);
        let mut targets = DMatrix::zeros(total, d);
        let mut at = 0;
        for b in batches {
            if b.input_dim() != mx || b.output_dim() != d {
                return Err(Error::invalid("concat: dimension mismatch between batches"));
            }
            inputs.rows_mut(at, b.len()).copy_from(&b.inputs);
            targets.rows_mut(at, b.len()).copy_from(&b.targets);
            at += b.len();
        }
        Ok(Dataset {
            inputs,
            targets,
            name: format!("{}_concat", first.name),
            truth: first.truth.clone(),
        })
    }

    /// Deterministic disjoint split; `test_fraction` of rows (rounded) go to
    /// the second dataset.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) || test_fraction <= 0.0 {
            return Err(Error::invalid(format!(
                "test fraction must lie strictly between 0 and 1, got {test_fraction}"
            )));
        }
        let n = self.len();
        if n < 2 {
            return Err(Error::invalid("split needs at least two rows"));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Fisher-Yates
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
        let take = |ids: &[usize], suffix: &str| -> Dataset {
            let mut inputs = DMatrix::zeros(ids.len(), self.input_dim());
            let mut targets = DMatrix::zeros(ids.len(), self.output_dim());
            for (row, &i) in ids.iter().enumerate() {
                inputs.row_mut(row).copy_from(&self.inputs.row(i));
                targets.row_mut(row).copy_from(&self.targets.row(i));
            }
            Dataset {
                inputs,
                targets,
                name: format!("{}_{suffix}", self.name),
                truth: self.truth.clone(),
            }
        };
        let test = take(&idx[..n_test], "test");
        let train = take(&idx[n_test..], "train");
        Ok((train, test))
    }
}

/// Noiseless mean and noise scale of a generator, as functions of the input.
#[derive(Debug, Clone)]
pub enum GroundTruth {
    SineGaps {
        noise_std: f64,
        gaps: [(f64, f64); 2],
        range: (f64, f64),
    },
    SincHetero {
        range: (f64, f64),
    },
    Step {
        range: (f64, f64),
        jumps: Vec<f64>,
        levels: Vec<f64>,
        noise_std: f64,
        /// Distance from a jump beyond which mode predictions are scored.
        eval_margin: f64,
        /// Largest acceptable mode error away from the jumps.
        mode_tolerance: f64,
    },
    Cubic {
        segments: Vec<CubicSegment>,
        noise_std: f64,
    },
    Chirp {
        base_freq: f64,
        rate: f64,
        noise_std: f64,
        batch_bounds: Vec<(f64, f64)>,
        batch_index: usize,
    },
    TwoLinkArm {
        params: arm::ArmParams,
    },
}

#[derive(Debug, Clone)]
pub struct CubicSegment {
    pub start: f64,
    pub end: f64,
    /// Coefficients c0 + c1 x + c2 x² + c3 x³.
    pub coeffs: [f64; 4],
}

impl GroundTruth {
    /// Noiseless conditional mean at `x`.
    pub fn mean_at(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            GroundTruth::SineGaps { .. } => {
                Ok(DVector::from_element(1, scalar_input(x)?.sin()))
            }
            GroundTruth::SincHetero { .. } => Ok(DVector::from_element(1, sinc(scalar_input(x)?))),
            GroundTruth::Step { jumps, levels, .. } => {
                let t = scalar_input(x)?;
                let seg = jumps.iter().take_while(|&&j| t >= j).count();
                Ok(DVector::from_element(1, levels[seg]))
            }
            GroundTruth::Cubic { segments, .. } => {
                let t = scalar_input(x)?;
                let seg = segments
                    .iter()
                    .find(|s| t >= s.start && t <= s.end)
                    .ok_or_else(|| Error::invalid("input outside the cubic segments"))?;
                let [c0, c1, c2, c3] = seg.coeffs;
                Ok(DVector::from_element(1, c0 + t * (c1 + t * (c2 + t * c3))))
            }
            GroundTruth::Chirp { base_freq, rate, .. } => {
                let t = scalar_input(x)?;
                Ok(DVector::from_element(1, chirp_mean(t, *base_freq, *rate)))
            }
            GroundTruth::TwoLinkArm { params } => {
                if x.len() != 6 {
                    return Err(Error::invalid("arm truth expects 6-dimensional inputs"));
                }
                let q = Vector2::new(x[0], x[1]);
                let dq = Vector2::new(x[2], x[3]);
                let ddq = Vector2::new(x[4], x[5]);
                let tau = params.torque(&q, &dq, &ddq);
                Ok(DVector::from_vec(vec![tau[0], tau[1]]))
            }
        }
    }

    /// Noise standard deviation at `x`, one entry per output dimension.
    pub fn noise_std_at(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            GroundTruth::SineGaps { noise_std, .. } => Ok(DVector::from_element(1, *noise_std)),
            GroundTruth::SincHetero { .. } => {
                Ok(DVector::from_element(1, sinc_noise_std(scalar_input(x)?)))
            }
            GroundTruth::Step { noise_std, .. } => Ok(DVector::from_element(1, *noise_std)),
            GroundTruth::Cubic { noise_std, .. } => Ok(DVector::from_element(1, *noise_std)),
            GroundTruth::Chirp { noise_std, .. } => Ok(DVector::from_element(1, *noise_std)),
            GroundTruth::TwoLinkArm { params } => {
                Ok(DVector::from_element(2, params.noise_std))
            }
        }
    }
}

fn scalar_input(x: &DVector<f64>) -> Result<f64> {
    if x.len() != 1 {
        return Err(Error::invalid("this ground truth expects 1-dimensional inputs"));
    }
    Ok(x[0])
}

pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Heteroscedastic noise scale of the sinc benchmark:
/// 0.05 + 0.2 (1 + sin 2x) / (1 + exp(-0.2 x)).
pub fn sinc_noise_std(x: f64) -> f64 {
    0.05 + 0.2 * (1.0 + (2.0 * x).sin()) / (1.0 + (-0.2 * x).exp())
}

fn chirp_mean(x: f64, base_freq: f64, rate: f64) -> f64 {
    (2.0 * std::f64::consts::PI * x * (base_freq + rate * x)).sin()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

fn build_1d(
    xs: Vec<f64>,
    rng: &mut ChaCha8Rng,
    truth: GroundTruth,
    name: &str,
) -> Dataset {
    let n = xs.len();
    let mut inputs = DMatrix::zeros(n, 1);
    let mut targets = DMatrix::zeros(n, 1);
    for (i, &x) in xs.iter().enumerate() {
        let xv = DVector::from_element(1, x);
        let mean = truth.mean_at(&xv).expect("generator truth is 1-d");
        let std = truth.noise_std_at(&xv).expect("generator truth is 1-d");
        inputs[(i, 0)] = x;
        targets[(i, 0)] = mean[0] + std[0] * normal(rng);
    }
    Dataset { inputs, targets, name: name.into(), truth: Some(truth) }
}

/// Sine wave on [0, 2π] with two unobserved input gaps, noise 0.1.
pub fn sine_gaps(n: usize, seed: u64) -> Dataset {
    let gaps = [(1.5, 2.5), (4.0, 5.0)];
    let range = (0.0, 2.0 * std::f64::consts::PI);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Sample uniformly over the observed segments (piecewise inverse CDF).
    let segments = [
        (range.0, gaps[0].0),
        (gaps[0].1, gaps[1].0),
        (gaps[1].1, range.1),
    ];
    let total: f64 = segments.iter().map(|(a, b)| b - a).sum();
    let xs: Vec<f64> = (0..n)
        .map(|_| {
            let mut u = rng.random::<f64>() * total;
            for &(a, b) in &segments {
                let len = b - a;
                if u <= len {
                    return a + u;
                }
                u -= len;
            }
            segments[2].1
        })
        .collect();
    let truth = GroundTruth::SineGaps { noise_std: 0.1, gaps, range };
    build_1d(xs, &mut rng, truth, "sine_gaps")
}

/// sinc(x) on [-10, 10] with input-dependent noise; the canonical
/// heteroscedastic calibration benchmark.
pub fn sinc_hetero(n: usize, seed: u64) -> Dataset {
    let range = (-10.0, 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..n)
        .map(|_| range.0 + rng.random::<f64>() * (range.1 - range.0))
        .collect();
    build_1d(xs, &mut rng, GroundTruth::SincHetero { range }, "sinc_hetero")
}

/// Piecewise-constant target on [0, 4] with jumps at 1, 2, 3 and noise 0.05.
pub fn step(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0).collect();
    let truth = GroundTruth::Step {
        range: (0.0, 4.0),
        jumps: vec![1.0, 2.0, 3.0],
        levels: vec![0.0, 1.0, -0.5, 0.5],
        noise_std: 0.05,
        eval_margin: 0.1,
        mode_tolerance: 0.05,
    };
    build_1d(xs, &mut rng, truth, "step")
}

/// Two cubic segments on [-2, 2], continuous at zero, noise 0.1.
pub fn cubic(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..n).map(|_| -2.0 + rng.random::<f64>() * 4.0).collect();
    let truth = GroundTruth::Cubic {
        segments: vec![
            CubicSegment { start: -2.0, end: 0.0, coeffs: [0.0, -2.0, 1.0, 0.5] },
            CubicSegment { start: 0.0, end: 2.0, coeffs: [0.0, 2.0, -1.0, 0.5] },
        ],
        noise_std: 0.1,
    };
    build_1d(xs, &mut rng, truth, "cubic")
}

/// Down-chirp sin(2π x (f₀ + c x)) on [0, 1] with f₀ = 10, c = -4.5, noise
/// 0.05, cut into `n_batches` contiguous input intervals ordered left to
/// right. Early batches carry the highest instantaneous frequency, so
/// accumulated-test error should fall as later, easier batches arrive.
pub fn chirp_batches(n_batches: usize, n_per_batch: usize, seed: u64) -> Vec<Dataset> {
    let (base_freq, rate, noise_std) = (10.0, -4.5, 0.05);
    let bounds: Vec<(f64, f64)> = (0..n_batches)
        .map(|b| {
            let w = 1.0 / n_batches as f64;
            (b as f64 * w, (b as f64 + 1.0) * w)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    bounds
        .iter()
        .enumerate()
        .map(|(b, &(lo, hi))| {
            let mut xs: Vec<f64> = (0..n_per_batch)
                .map(|_| lo + rng.random::<f64>() * (hi - lo))
                .collect();
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let truth = GroundTruth::Chirp {
                base_freq,
                rate,
                noise_std,
                batch_bounds: bounds.clone(),
                batch_index: b,
            };
            build_1d(xs, &mut rng, truth, &format!("chirp_b{b}"))
        })
        .collect()
}

/// Inverse dynamics of a simulated planar two-link arm: inputs are
/// (q₁, q₂, q̇₁, q̇₂, q̈₁, q̈₂) sampled along sinusoidal joint trajectories,
/// targets are the two joint torques with viscous friction and small torque
/// noise.
pub fn two_link_arm(n: usize, seed: u64) -> Dataset {
    let params = arm::ArmParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_segments = 8.max(n / 2500);
    let mut inputs = DMatrix::zeros(n, 6);
    let mut targets = DMatrix::zeros(n, 2);
    let per_segment = n.div_ceil(n_segments);
    let mut row = 0;
    for _ in 0..n_segments {
        // One sinusoid per joint: q_j(t) = offset + A sin(ω t + φ).
        let draw = |rng: &mut ChaCha8Rng| {
            let offset = (rng.random::<f64>() - 0.5) * 2.0 * std::f64::consts::PI;
            let amp = 0.3 + rng.random::<f64>() * 0.9;
            let omega = 0.5 + rng.random::<f64>() * 2.0;
            let phase = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
            (offset, amp, omega, phase)
        };
        let j1 = draw(&mut rng);
        let j2 = draw(&mut rng);
        for _ in 0..per_segment {
            if row == n {
                break;
            }
            let t = rng.random::<f64>() * 6.0;
            let eval = |(offset, amp, omega, phase): (f64, f64, f64, f64)| {
                let s = (omega * t + phase).sin();
                let c = (omega * t + phase).cos();
                (offset + amp * s, amp * omega * c, -amp * omega * omega * s)
            };
            let (q1, dq1, ddq1) = eval(j1);
            let (q2, dq2, ddq2) = eval(j2);
            let q = Vector2::new(q1, q2);
            let dq = Vector2::new(dq1, dq2);
            let ddq = Vector2::new(ddq1, ddq2);
            let tau = params.torque(&q, &dq, &ddq);
            for (j, v) in [q1, q2, dq1, dq2, ddq1, ddq2].into_iter().enumerate() {
                inputs[(row, j)] = v;
            }
            targets[(row, 0)] = tau[0] + params.noise_std * normal(&mut rng);
            targets[(row, 1)] = tau[1] + params.noise_std * normal(&mut rng);
            row += 1;
        }
    }
    Dataset {
        inputs,
        targets,
        name: "two_link_arm".into(),
        truth: Some(GroundTruth::TwoLinkArm { params }),
    }
}

pub mod arm {
    //! Planar two-link revolute arm with joint angles measured from the
    //! downward vertical; q = 0 is both links hanging down.

    use super::{Matrix2, Vector2};

    #[derive(Debug, Clone)]
    pub struct ArmParams {
        pub m1: f64,
        pub m2: f64,
        pub l1: f64,
        pub lc1: f64,
        pub lc2: f64,
        pub i1: f64,
        pub i2: f64,
        pub gravity: f64,
        pub viscous: f64,
        pub noise_std: f64,
    }

    impl Default for ArmParams {
        fn default() -> Self {
            Self {
                m1: 1.0,
                m2: 1.0,
                l1: 1.0,
                lc1: 0.5,
                lc2: 0.5,
                i1: 1.0 / 12.0,
                i2: 1.0 / 12.0,
                gravity: 9.81,
                viscous: 0.1,
                noise_std: 0.01,
            }
        }
    }

    impl ArmParams {
        pub fn mass_matrix(&self, q2: f64) -> Matrix2<f64> {
            let c2 = q2.cos();
            let m11 = self.m1 * self.lc1 * self.lc1
                + self.i1
                + self.m2
                    * (self.l1 * self.l1
                        + self.lc2 * self.lc2
                        + 2.0 * self.l1 * self.lc2 * c2)
                + self.i2;
            let m12 = self.m2 * (self.lc2 * self.lc2 + self.l1 * self.lc2 * c2) + self.i2;
            let m22 = self.m2 * self.lc2 * self.lc2 + self.i2;
            Matrix2::new(m11, m12, m12, m22)
        }

        /// Coriolis and centrifugal torques C(q, q̇) q̇.
        pub fn coriolis(&self, q2: f64, dq: &Vector2<f64>) -> Vector2<f64> {
            let h = self.m2 * self.l1 * self.lc2 * q2.sin();
            Vector2::new(
                -h * (2.0 * dq[0] * dq[1] + dq[1] * dq[1]),
                h * dq[0] * dq[0],
            )
        }

        pub fn gravity_torque(&self, q1: f64, q2: f64) -> Vector2<f64> {
            let g = self.gravity;
            let g1 = (self.m1 * self.lc1 + self.m2 * self.l1) * g * q1.sin()
                + self.m2 * self.lc2 * g * (q1 + q2).sin();
            let g2 = self.m2 * self.lc2 * g * (q1 + q2).sin();
            Vector2::new(g1, g2)
        }

        /// Inverse dynamics τ = M(q) q̈ + C(q, q̇) q̇ + G(q) + viscous q̇
        /// (noise-free).
        pub fn torque(
            &self,
            q: &Vector2<f64>,
            dq: &Vector2<f64>,
            ddq: &Vector2<f64>,
        ) -> Vector2<f64> {
            self.mass_matrix(q[1]) * ddq
                + self.coriolis(q[1], dq)
                + self.gravity_torque(q[0], q[1])
                + dq * self.viscous
        }

        /// Forward dynamics q̈ = M(q)⁻¹ (τ - C - G - viscous q̇).
        pub fn forward_accel(
            &self,
            q: &Vector2<f64>,
            dq: &Vector2<f64>,
            tau: &Vector2<f64>,
        ) -> Vector2<f64> {
            let rhs = tau
                - self.coriolis(q[1], dq)
                - self.gravity_torque(q[0], q[1])
                - dq * self.viscous;
            self.mass_matrix(q[1])
                .try_inverse()
                .expect("two-link mass matrix is positive definite")
                * rhs
        }

        /// Kinetic plus potential energy (potential zero with both links
        /// hanging at rest is not enforced; only differences matter).
        pub fn energy(&self, q: &Vector2<f64>, dq: &Vector2<f64>) -> f64 {
            let ke = 0.5 * dq.dot(&(self.mass_matrix(q[1]) * dq));
            let pe = -(self.m1 * self.lc1 + self.m2 * self.l1) * self.gravity * q[0].cos()
                - self.m2 * self.lc2 * self.gravity * (q[0] + q[1]).cos();
            ke + pe
        }
    }
}

/// Writes a dataset as CSV with header x0..x{m-1},y0..y{d-1}. Floats use
/// shortest round-trip formatting, so save → load is exact.
pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    let header: Vec<String> = (0..ds.input_dim())
        .map(|j| format!("x{j}"))
        .chain((0..ds.output_dim()).map(|j| format!("y{j}")))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..ds.len() {
        for j in 0..ds.input_dim() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", ds.inputs[(i, j)]);
        }
        for j in 0..ds.output_dim() {
            out.push(',');
            let _ = write!(out, "{}", ds.targets[(i, j)]);
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Loads a CSV of `input_dim` input columns followed by `output_dim` target
/// columns. A first line whose cells do not all parse as numbers is treated
/// as a header. Parse failures name the 1-based line.
pub fn load_csv(path: impl AsRef<Path>, input_dim: usize, output_dim: usize) -> Result<Dataset> {
    let path = path.as_ref();
    if input_dim == 0 || output_dim == 0 {
        return Err(Error::invalid("load_csv needs input_dim >= 1 and output_dim >= 1"));
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let want = input_dim + output_dim;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> =
            cells.iter().map(|c| c.parse::<f64>()).collect();
        match parsed {
            Err(_) if lineno == 1 => continue, // header
            Err(_) => {
                return Err(Error::data(format!(
                    "{}: line {lineno}: non-numeric value",
                    path.display()
                )));
            }
            Ok(vals) => {
                if vals.len() != want {
                    return Err(Error::data(format!(
                        "{}: line {lineno}: expected {want} fields, found {}",
                        path.display(),
                        vals.len()
                    )));
                }
                if vals.iter().any(|v| !v.is_finite()) {
                    return Err(Error::data(format!(
                        "{}: line {lineno}: non-finite value",
                        path.display()
                    )));
                }
                rows.push(vals);
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::data(format!("{}: no data rows", path.display())));
    }
    let n = rows.len();
    let mut inputs = DMatrix::zeros(n, input_dim);
    let mut targets = DMatrix::zeros(n, output_dim);
    for (i, row) in rows.iter().enumerate() {
        for j in 0..input_dim {
            inputs[(i, j)] = row[j];
        }
        for j in 0..output_dim {
            targets[(i, j)] = row[input_dim + j];
        }
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    Dataset::new(inputs, targets, name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sine_gaps_avoids_the_gaps() {
        let ds = sine_gaps(2000, 0);
        assert_eq!(ds.len(), 2000);
        for i in 0..ds.len() {
            let x = ds.inputs[(i, 0)];
            assert!((0.0..=2.0 * std::f64::consts::PI).contains(&x));
            assert!(!(1.5..2.5).contains(&x), "x = {x} inside first gap");
            assert!(!(4.0..5.0).contains(&x), "x = {x} inside second gap");
        }
        // Deterministic per seed, different across seeds.
        let again = sine_gaps(2000, 0);
        assert_eq!(ds.inputs, again.inputs);
        assert_eq!(ds.targets, again.targets);
        let other = sine_gaps(2000, 1);
        assert_ne!(ds.inputs, other.inputs);
    }

    #[test]
    fn sinc_noise_profile_values() {
        // σ(0) = 0.05 + 0.2 · (1 + 0) / 2 = 0.15; far left tends to 0.05.
        assert_abs_diff_eq!(sinc_noise_std(0.0), 0.15, epsilon = 1e-12);
        assert!(sinc_noise_std(-10.0) < 0.1);
        assert!(sinc_noise_std(10.0) > 0.2);
        assert_abs_diff_eq!(sinc(0.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sinc(std::f64::consts::PI), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn sinc_sample_noise_tracks_profile() {
        // Empirical |y - sinc(x)| in a high-noise window exceeds that in a
        // low-noise window.
        let ds = sinc_hetero(20_000, 3);
        let (mut hi, mut hi_n, mut lo, mut lo_n) = (0.0, 0, 0.0, 0);
        for i in 0..ds.len() {
            let x = ds.inputs[(i, 0)];
            let r = (ds.targets[(i, 0)] - sinc(x)).abs();
            if x > 7.0 {
                hi += r * r;
                hi_n += 1;
            } else if x < -7.0 {
                lo += r * r;
                lo_n += 1;
            }
        }
        assert!((hi / hi_n as f64).sqrt() > 2.0 * (lo / lo_n as f64).sqrt());
    }

    #[test]
    fn step_levels_and_metadata() {
        let ds = step(500, 1);
        let truth = ds.truth.as_ref().unwrap();
        let at = |x: f64| truth.mean_at(&DVector::from_element(1, x)).unwrap()[0];
        assert_abs_diff_eq!(at(0.5), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(at(1.5), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(at(2.5), -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(at(3.5), 0.5, epsilon = 1e-15);
        // Boundary belongs to the right segment.
        assert_abs_diff_eq!(at(1.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn cubic_truth_is_continuous_at_zero() {
        let ds = cubic(10, 0);
        let truth = ds.truth.as_ref().unwrap();
        let left = truth.mean_at(&DVector::from_element(1, -1e-12)).unwrap()[0];
        let right = truth.mean_at(&DVector::from_element(1, 1e-12)).unwrap()[0];
        assert_abs_diff_eq!(left, right, epsilon = 1e-9);
    }

    #[test]
    fn chirp_batches_partition_and_order() {
        let batches = chirp_batches(3, 100, 5);
        assert_eq!(batches.len(), 3);
        for (b, ds) in batches.iter().enumerate() {
            let (lo, hi) = (b as f64 / 3.0, (b as f64 + 1.0) / 3.0);
            for i in 0..ds.len() {
                let x = ds.inputs[(i, 0)];
                assert!(x >= lo && x <= hi, "batch {b}: x = {x} outside [{lo}, {hi}]");
            }
        }
        // Earlier batches oscillate faster: count sign changes of the mean.
        let truth = batches[0].truth.as_ref().unwrap();
        let wiggles = |lo: f64, hi: f64| {
            let mut count = 0;
            let mut prev = 0.0f64;
            for i in 0..400 {
                let x = lo + (hi - lo) * i as f64 / 399.0;
                let v = truth.mean_at(&DVector::from_element(1, x)).unwrap()[0];
                if i > 0 && (v > 0.0) != (prev > 0.0) {
                    count += 1;
                }
                prev = v;
            }
            count
        };
        assert!(wiggles(0.0, 1.0 / 3.0) > wiggles(2.0 / 3.0, 1.0));
    }

    #[test]
    fn arm_gravity_and_mass_frozen_values() {
        let p = arm::ArmParams::default();
        // Hanging straight down: no gravity torque.
        let g0 = p.gravity_torque(0.0, 0.0);
        assert_abs_diff_eq!(g0[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g0[1], 0.0, epsilon = 1e-12);
        // First link horizontal, second aligned: hand-computed torques.
        let g1 = p.gravity_torque(std::f64::consts::FRAC_PI_2, 0.0);
        assert_abs_diff_eq!(g1[0], 19.62, epsilon = 1e-10);
        assert_abs_diff_eq!(g1[1], 4.905, epsilon = 1e-10);
        // Mass matrix at q2 = 0: [[8/3, 5/6], [5/6, 1/3]].
        let m = p.mass_matrix(0.0);
        assert_abs_diff_eq!(m[(0, 0)], 8.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m[(0, 1)], 5.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m[(1, 1)], 1.0 / 3.0, epsilon = 1e-12);
        // Coriolis at q2 = π/2, q̇ = (1, 1): h = 1/2 → (-3/2, 1/2).
        let c = p.coriolis(std::f64::consts::FRAC_PI_2, &Vector2::new(1.0, 1.0));
        assert_abs_diff_eq!(c[0], -1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(c[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn arm_forward_inverse_round_trip() {
        let p = arm::ArmParams::default();
        let q = Vector2::new(0.7, -1.2);
        let dq = Vector2::new(0.5, 1.5);
        let ddq = Vector2::new(-0.3, 0.8);
        let tau = p.torque(&q, &dq, &ddq);
        let back = p.forward_accel(&q, &dq, &tau);
        assert_abs_diff_eq!(back[0], ddq[0], epsilon = 1e-10);
        assert_abs_diff_eq!(back[1], ddq[1], epsilon = 1e-10);
    }

    #[test]
    fn arm_unforced_motion_conserves_energy() {
        // RK4 simulation of the frictionless unforced arm; drift in total
        // energy only reflects integration error.
        let p = arm::ArmParams { viscous: 0.0, noise_std: 0.0, ..Default::default() };
        let mut q = Vector2::new(1.0, 0.5);
        let mut dq = Vector2::new(0.0, 0.0);
        let e0 = p.energy(&q, &dq);
        let zero = Vector2::new(0.0, 0.0);
        let h = 1e-4;
        let deriv = |q: &Vector2<f64>, dq: &Vector2<f64>| {
            (*dq, p.forward_accel(q, dq, &zero))
        };
        for _ in 0..10_000 {
            let (k1q, k1v) = deriv(&q, &dq);
            let (k2q, k2v) = deriv(&(q + k1q * (h / 2.0)), &(dq + k1v * (h / 2.0)));
            let (k3q, k3v) = deriv(&(q + k2q * (h / 2.0)), &(dq + k2v * (h / 2.0)));
            let (k4q, k4v) = deriv(&(q + k3q * h), &(dq + k3v * h));
            q += (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (h / 6.0);
            dq += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
        }
        let e1 = p.energy(&q, &dq);
        assert!(
            (e1 - e0).abs() < 1e-6,
            "energy drifted from {e0} to {e1}"
        );
    }

    #[test]
    fn arm_dataset_matches_truth_up_to_noise() {
        let ds = two_link_arm(500, 9);
        assert_eq!(ds.input_dim(), 6);
        assert_eq!(ds.output_dim(), 2);
        let truth = ds.truth.as_ref().unwrap();
        let mut max_dev = 0.0f64;
        for i in 0..ds.len() {
            let mean = truth.mean_at(&ds.row_input(i)).unwrap();
            for j in 0..2 {
                max_dev = max_dev.max((ds.targets[(i, j)] - mean[j]).abs());
            }
        }
        // Torque noise is N(0, 0.01²); 6 sigma bounds 500 draws comfortably.
        assert!(max_dev < 0.06, "max deviation {max_dev}");
        assert!(max_dev > 0.0);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        let ds = sinc_hetero(50, 2);
        save_csv(&ds, &path).unwrap();
        let back = load_csv(&path, 1, 1).unwrap();
        assert_eq!(ds.inputs, back.inputs);
        assert_eq!(ds.targets, back.targets);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "x0,y0\n1.0,2.0\n3.0,oops\n").unwrap();
        match load_csv(&path, 1, 1) {
            Err(Error::Data(msg)) => assert!(msg.contains("line 3"), "message: {msg}"),
            other => panic!("expected a data error, got {other:?}"),
        }
        std::fs::write(&path, "1.0,2.0,9.0\n").unwrap();
        match load_csv(&path, 1, 1) {
            Err(Error::Data(msg)) => {
                assert!(msg.contains("expected 2 fields"), "message: {msg}")
            }
            other => panic!("expected a field-count error, got {other:?}"),
        }
        match load_csv(dir.path().join("missing.csv"), 1, 1) {
            Err(Error::Data(msg)) => assert!(msg.contains("missing.csv")),
            other => panic!("expected a data error, got {other:?}"),
        }
    }

    #[test]
    fn csv_without_header_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plain.csv");
        std::fs::write(&path, "1.0,2.0\n-3.5,4.25\n").unwrap();
        let ds = load_csv(&path, 1, 1).unwrap();
        assert_eq!(ds.len(), 2);
        assert_abs_diff_eq!(ds.targets[(1, 0)], 4.25, epsilon = 1e-15);
    }

    #[test]
    fn split_is_disjoint_and_deterministic() {
        let ds = sinc_hetero(100, 4);
        let (train, test) = ds.split(0.2, 7).unwrap();
        assert_eq!(train.len() + test.len(), 100);
        assert_eq!(test.len(), 20);
        let (train2, test2) = ds.split(0.2, 7).unwrap();
        assert_eq!(train.inputs, train2.inputs);
        assert_eq!(test.inputs, test2.inputs);
        // Inputs are continuous draws, so equality identifies rows.
        for i in 0..test.len() {
            for j in 0..train.len() {
                assert_ne!(test.inputs[(i, 0)], train.inputs[(j, 0)]);
            }
        }
        assert!(ds.split(0.0, 1).is_err());
        assert!(ds.split(1.0, 1).is_err());
    }

    #[test]
    fn concat_stacks_batches() {
        let batches = chirp_batches(3, 50, 1);
        let all = Dataset::concat(&batches).unwrap();
        assert_eq!(all.len(), 150);
        assert_eq!(all.inputs[(50, 0)], batches[1].inputs[(0, 0)]);
    }

    #[test]
    fn dataset_rejects_bad_shapes() {
        let x = DMatrix::zeros(3, 1);
        let y = DMatrix::zeros(2, 1);
        assert!(Dataset::new(x, y, "bad").is_err());
        let x = DMatrix::from_element(1, 1, f64::NAN);
        let y = DMatrix::zeros(1, 1);
        assert!(Dataset::new(x, y, "nan").is_err());
    }
}
