//! Mini-batch training loop for [`ManifoldFlowModel`].

use crate::error::{Error, Result};
use crate::manifold::ManifoldFlowModel;
use crate::nn::{Adam, SeededRng, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct TrainOptions {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_nll: f64,
    pub mean_penalty: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

/// Trains the model in place. Deterministic for a fixed seed: the shuffle
/// order, actnorm initialization, and update order are all derived from
/// `options.seed`.
///
/// On divergence (non-finite loss or gradient) the parameters roll back to
/// the end of the last completed epoch and a training error is returned, so
/// the caller still holds the last good model.
pub fn train(
    model: &mut ManifoldFlowModel,
    data: &Tensor,
    options: &TrainOptions,
) -> Result<TrainHistory> {
    if data.shape().len() != 2 || data.rows() == 0 {
        return Err(Error::Config("training data must be a non-empty [n, D] tensor".into()));
    }
    if data.cols() != model.dim() {
        return Err(Error::Config(format!(
            "training data width {} does not match model dimension {}",
            data.cols(),
            model.dim()
        )));
    }
    if options.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut history = TrainHistory::default();
    if options.epochs == 0 {
        return Ok(history);
    }

    let n = data.rows();
    let dim = data.cols();
    let batch = options.batch_size.min(n);

    // Data-dependent actnorm init from the first (unshuffled) batch.
    let first = gather_rows(data, &(0..batch.max(2).min(n)).collect::<Vec<_>>());
    model.flow.init_actnorm(&first)?;
    if model.manifold_flow.is_some() {
        let (z, _) = model.flow.forward(&first)?;
        let (u, _) = crate::manifold::split(&z, model.split)?;
        if let Some(mf) = &mut model.manifold_flow {
            mf.init_actnorm(&u)?;
        }
    }

    let mut adam = Adam::new(model.param_count(), options.lr);
    let mut last_good = model.params_flat();
    let mut indices: Vec<usize> = (0..n).collect();

    for epoch in 0..options.epochs {
        let mut rng = SeededRng::stream(options.seed, 1_000 + epoch as u64);
        rng.shuffle(&mut indices);

        let (mut sum_loss, mut sum_nll, mut sum_pen) = (0.0, 0.0, 0.0);
        for (bi, chunk) in indices.chunks(batch).enumerate() {
            let xb = gather_rows(data, chunk);
            let step = (|| -> Result<()> {
                let (parts, mut grads, _) = model.training_loss_backward(&xb)?;
                let inv = 1.0 / chunk.len() as f64;
                grads.iter_mut().for_each(|g| *g *= inv);
                for p in &parts {
                    sum_loss += p.loss();
                    sum_nll += p.nll();
                    sum_pen += p.penalty;
                }
                let mut params = model.params_flat();
                adam.step(&mut params, &grads)?;
                model.set_params_flat(&params);
                Ok(())
            })();
            if let Err(e) = step {
                model.set_params_flat(&last_good);
                return Err(Error::Training(format!(
                    "diverged at epoch {epoch}, batch {bi}: {e}; parameters rolled back to last completed epoch"
                )));
            }
        }
        let inv = 1.0 / n as f64;
        let stats = EpochStats {
            epoch,
            mean_loss: sum_loss * inv,
            mean_nll: sum_nll * inv,
            mean_penalty: sum_pen * inv,
        };
        if !stats.mean_loss.is_finite() {
            model.set_params_flat(&last_good);
            return Err(Error::Training(format!(
                "non-finite mean loss at epoch {epoch}; parameters rolled back"
            )));
        }
        history.epochs.push(stats);
        last_good = model.params_flat();
    }
    let _ = dim;
    Ok(history)
}

pub fn gather_rows(data: &Tensor, idx: &[usize]) -> Tensor {
    let dim = data.cols();
    let mut out = Vec::with_capacity(idx.len() * dim);
    for &i in idx {
        out.extend_from_slice(data.row(i));
    }
    Tensor::from_parts(vec![idx.len(), dim], out)
}
