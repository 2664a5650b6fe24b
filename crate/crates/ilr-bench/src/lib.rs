//! Shared fixture builders for the inference benchmarks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ilr_core::data::{sinc_hetero, two_link_arm, Dataset};
use ilr_core::model::SufficientStats;
use ilr_core::vbem::fit;
use ilr_core::{
    FeatureMap, FitConfig, GatingPriorKind, Hyperparams, MixturePosterior, ModelDims,
};

/// Quick fit of the heteroscedastic sinc benchmark (1-D in, 1-D out).
pub fn sinc_model(n: usize, k_max: usize) -> (MixturePosterior, Dataset) {
    let ds = sinc_hetero(n, 7);
    let fmap = FeatureMap::affine(1).expect("affine map");
    let hyper = Hyperparams::default_for(
        ModelDims { input_dim: 1, feature_dim: 2, output_dim: 1 },
        k_max,
        GatingPriorKind::StickBreaking,
        1.0,
    )
    .expect("hyperparams");
    let cfg = FitConfig { restarts: 1, max_iters: 15, ..FitConfig::default() };
    let model = fit(&ds, &fmap, &hyper, &cfg).expect("fit");
    (model, ds)
}

/// Quick fit of the two-link arm inverse dynamics set (6-D in, 2-D out).
pub fn arm_model(n: usize, k_max: usize) -> (MixturePosterior, Dataset) {
    let ds = two_link_arm(n, 7);
    let fmap = FeatureMap::affine(6).expect("affine map");
    let hyper = Hyperparams::default_for(
        ModelDims { input_dim: 6, feature_dim: 7, output_dim: 2 },
        k_max,
        GatingPriorKind::StickBreaking,
        1.0,
    )
    .expect("hyperparams");
    let cfg = FitConfig { restarts: 1, max_iters: 10, ..FitConfig::default() };
    let model = fit(&ds, &fmap, &hyper, &cfg).expect("fit");
    (model, ds)
}

/// Data matrices shaped for [`ilr_core::vbem::e_step`] in model space.
pub fn estep_inputs(
    model: &MixturePosterior,
    ds: &Dataset,
    n: usize,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = n.min(ds.len());
    let st = &model.standardizer;
    let mut x_gate = DMatrix::zeros(n, ds.input_dim());
    let mut x_feat = DMatrix::zeros(n, model.feature_map.output_dim());
    let mut y = DMatrix::zeros(n, ds.output_dim());
    for i in 0..n {
        let xi = st.transform_x(&ds.inputs.row(i).transpose());
        let fi = model.feature_map.apply(&xi).expect("feature map");
        let yi = st.transform_y(&ds.targets.row(i).transpose());
        x_gate.row_mut(i).copy_from(&xi.transpose());
        x_feat.row_mut(i).copy_from(&fi.transpose());
        y.row_mut(i).copy_from(&yi.transpose());
    }
    (x_gate, x_feat, y)
}

/// Sufficient statistics accumulated from `n` random soft-assigned rows, so
/// the M-step benchmark runs on realistic non-degenerate inputs.
pub fn random_stats(k: usize, dims: ModelDims, n: usize, seed: u64) -> SufficientStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = SufficientStats::zeros(k, dims);
    let fmap = FeatureMap::affine(dims.input_dim).expect("affine map");
    for _ in 0..n {
        let x = DVector::from_fn(dims.input_dim, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        let f = fmap.apply(&x).expect("feature map");
        let y = DVector::from_fn(dims.output_dim, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let mut r: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        let total: f64 = r.iter().sum();
        r.iter_mut().for_each(|v| *v /= total);
        for (kk, &w) in r.iter().enumerate() {
            stats.n[kk] += w;
            stats.sum_x[kk] += w * &x;
            stats.sum_xx[kk] += w * &x * x.transpose();
            stats.sum_ff[kk] += w * &f * f.transpose();
            stats.sum_yf[kk] += w * &y * f.transpose();
            stats.sum_yy[kk] += w * &y * y.transpose();
        }
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use ilr_core::vbem::{e_step, m_step};

    #[test]
    fn fixtures_produce_consistent_shapes() {
        let (model, ds) = sinc_model(200, 6);
        let (xg, xf, y) = estep_inputs(&model, &ds, 50);
        let r = e_step(&model, &xg, &xf, &y).unwrap();
        assert_eq!(r.r.nrows(), 50);
        assert_eq!(r.r.ncols(), 6);

        let dims = ModelDims { input_dim: 3, feature_dim: 4, output_dim: 2 };
        let stats = random_stats(5, dims, 40, 1);
        let hyper =
            Hyperparams::default_for(dims, 5, GatingPriorKind::StickBreaking, 1.0).unwrap();
        let posts = m_step(&stats, &hyper).unwrap();
        assert_eq!(posts.len(), 5);
    }
}
