use super::{MoEConfig, MoELayer, MoEModel, SampleBatch};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};
use crate::scalar::Scalar;

/// Random model with every weight drawn from `U[-1/√d, 1/√d)`.
///
/// Draw order: for each layer, the router (row-major, `N_e × d`) and then
/// experts `0..N_e` (row-major, `d × d`), all from one stream seeded with
/// `seed`.
pub fn gen_model<T: Scalar>(config: &MoEConfig, seed: u64) -> Result<MoEModel<T>> {
    config.validate()?;
    let d = config.hidden_dim;
    let bound = 1.0 / (d as f64).sqrt();
    let mut rng = Rng::new(seed);
    let mut draw = |rows, cols| {
        Matrix::from_fn(rows, cols, |_, _| T::from_f64_lossy(rng.uniform(-bound, bound)))
    };
    let layers = (0..config.num_layers)
        .map(|l| {
            let n_e = config.experts_at(l);
            let router = draw(n_e, d);
            let experts = (0..n_e).map(|_| draw(d, d)).collect();
            MoELayer { experts, router }
        })
        .collect();
    MoEModel::new(config.clone(), layers)
}

/// Synthetic samples with cluster structure.
///
/// Each sample draws a centre `c ~ U[-1, 1)^d`, then each token is
/// `c + U[-0.5, 0.5)^d`. Draws are consumed sample by sample: centre first,
/// then tokens row-major.
pub fn gen_data<T: Scalar>(
    config: &MoEConfig,
    n_samples: usize,
    tokens_per_sample: usize,
    seed: u64,
) -> Result<Vec<SampleBatch<T>>> {
    if tokens_per_sample == 0 {
        return Err(Error::InvalidArgument("tokens_per_sample must be >= 1".into()));
    }
    let d = config.hidden_dim;
    let mut rng = Rng::new(seed);
    (0..n_samples)
        .map(|_| {
            let centre: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let tokens = Matrix::from_fn(tokens_per_sample, d, |_, c| {
                T::from_f64_lossy(centre[c] + rng.uniform(-0.5, 0.5))
            });
            SampleBatch::new(tokens)
        })
        .collect()
}
