//! Browser demo: train a small manifold flow on the semicircle toy set and
//! explore the negative log-likelihood, reconstruction-penalty, and combined
//! OOD-score fields interactively.
//!
//! Build with `wasm-pack build --target web crates/wasm` (requires the
//! `wasm32-unknown-unknown` target); the static page in `www/` loads the
//! generated module. The crate also compiles natively so the demo logic is
//! covered by ordinary tests.

use oodflow::data::{gen_semicircle, ThetaProfile};
use oodflow::huber::{fit_scale_newton, lambda_coefficient, FittedScale, ScaleKind};
use oodflow::manifold::train::{train, TrainOptions};
use oodflow::manifold::{LatentSplit, PenaltySpec};
use oodflow::{FlowModel, ManifoldFlowModel, SampleMode, Tensor};
use wasm_bindgen::prelude::*;

fn err_to_js(e: oodflow::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Interactive semicircle experiment: one model, incremental training, and
/// field evaluation over a square grid.
#[wasm_bindgen]
pub struct SemicircleDemo {
    model: ManifoldFlowModel,
    train_data: Tensor,
    calib_data: Tensor,
    noise: f64,
    seed: u64,
    epochs_done: usize,
    lambda: f64,
}

#[wasm_bindgen]
impl SemicircleDemo {
    /// Fresh demo state: noisy semicircle data (concentrated angles) and an
    /// untrained 4-block flow with a 1-of-2 latent split and Huber penalty.
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, noise: f64, seed: u64) -> Result<SemicircleDemo, JsValue> {
        let n = n.clamp(64, 20_000);
        let train_data = gen_semicircle(n, noise, ThetaProfile::Concentrated, seed)
            .map_err(err_to_js)?
            .tensor;
        let calib_data = gen_semicircle(n / 2, noise, ThetaProfile::Concentrated, seed + 1)
            .map_err(err_to_js)?
            .tensor;
        let model = ManifoldFlowModel::new(
            FlowModel::dense(2, 4, &[24, 24], seed).map_err(err_to_js)?,
            LatentSplit::new(1, 2).map_err(err_to_js)?,
            None,
            PenaltySpec::huber(0.1, 1.0).map_err(err_to_js)?,
        )
        .map_err(err_to_js)?;
        Ok(SemicircleDemo {
            model,
            train_data,
            calib_data,
            noise,
            seed,
            epochs_done: 0,
            lambda: 1.0,
        })
    }

    /// Run a few more training epochs; returns the latest mean loss. Repeated
    /// calls continue from the current parameters, so the page can animate
    /// training progress.
    pub fn train_epochs(&mut self, count: usize) -> Result<f64, JsValue> {
        let count = count.clamp(1, 200);
        let history = train(
            &mut self.model,
            &self.train_data,
            &TrainOptions {
                lr: 2e-3,
                batch_size: 64,
                epochs: count,
                seed: self.seed + self.epochs_done as u64,
            },
        )
        .map_err(err_to_js)?;
        self.epochs_done += count;
        Ok(history.epochs.last().map(|e| e.mean_loss).unwrap_or(f64::NAN))
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    /// Fit the Huber scale on held-out data and set the score weight
    /// `lambda = c_const / k^2`. Returns lambda.
    pub fn calibrate(&mut self, c_const: f64) -> Result<f64, JsValue> {
        let errors = self
            .model
            .reconstruction_errors(&self.calib_data)
            .map_err(err_to_js)?;
        let fit = fit_scale_newton(&errors, self.model.penalty.delta).map_err(err_to_js)?;
        let fitted = FittedScale {
            kind: ScaleKind::Huber {
                k: fit.k,
                delta_prime: self.model.penalty.delta,
            },
            n: errors.len(),
        };
        self.lambda = lambda_coefficient(&fitted, c_const);
        Ok(self.lambda)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Field values over an `n x n` grid on [lo, hi]^2, row-major with `y`
    /// varying fastest. `which`: 0 = NLL, 1 = penalty, 2 = combined score.
    pub fn field(&self, lo: f64, hi: f64, n: usize, which: u8) -> Result<Vec<f64>, JsValue> {
        let n = n.clamp(2, 512);
        let step = (hi - lo) / (n - 1) as f64;
        let mut out = Vec::with_capacity(n * n);
        let mut pts = Vec::with_capacity(n * 2);
        for i in 0..n {
            pts.clear();
            for j in 0..n {
                pts.push(lo + i as f64 * step);
                pts.push(lo + j as f64 * step);
            }
            let row = Tensor::new(vec![n, 2], pts.clone()).map_err(err_to_js)?;
            match self.model.training_loss(&row) {
                Ok(parts) => {
                    for p in &parts {
                        out.push(match which {
                            0 => p.nll(),
                            1 => p.penalty,
                            _ => p.nll() + self.lambda * p.penalty,
                        });
                    }
                }
                Err(_) => out.extend(std::iter::repeat_n(f64::NAN, n)),
            }
        }
        Ok(out)
    }

    /// The training points, flattened (x0, y0, x1, y1, ...).
    pub fn training_points(&self) -> Vec<f64> {
        self.train_data.data().to_vec()
    }

    /// Draws from the learned manifold (off-manifold latent zeroed).
    pub fn sample_manifold(&self, n: usize, seed: u64) -> Result<Vec<f64>, JsValue> {
        let n = n.clamp(1, 10_000);
        let samples = self
            .model
            .sample(n, SampleMode::Manifold(1), seed)
            .map_err(err_to_js)?;
        Ok(samples.data().to_vec())
    }

    /// Score one point: returns [nll, penalty, combined].
    pub fn score_point(&self, x: f64, y: f64) -> Result<Vec<f64>, JsValue> {
        let t = Tensor::new(vec![1, 2], vec![x, y]).map_err(err_to_js)?;
        let parts = self.model.training_loss(&t).map_err(err_to_js)?;
        let p = &parts[0];
        Ok(vec![p.nll(), p.penalty, p.nll() + self.lambda * p.penalty])
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_trains_calibrates_and_evaluates() {
        let mut demo = SemicircleDemo::new(400, 0.02, 9).unwrap();
        assert_eq!(demo.epochs_done(), 0);
        let l0 = demo.train_epochs(3).unwrap();
        let l1 = demo.train_epochs(15).unwrap();
        assert!(l1 < l0, "loss {l0} -> {l1}");
        assert_eq!(demo.epochs_done(), 18);

        let lambda = demo.calibrate(1.0).unwrap();
        assert!(lambda > 0.0);
        assert_eq!(demo.lambda(), lambda);

        let field = demo.field(-1.5, 1.5, 32, 2).unwrap();
        assert_eq!(field.len(), 32 * 32);
        assert!(field.iter().all(|v| v.is_finite()));

        let pts = demo.training_points();
        assert_eq!(pts.len(), 800);
        let samples = demo.sample_manifold(50, 3).unwrap();
        assert_eq!(samples.len(), 100);

        // An on-manifold point scores lower than a far off-manifold one.
        let on = demo.score_point(0.0, 1.0).unwrap();
        let off = demo.score_point(0.0, 1.6).unwrap();
        assert!(off[2] > on[2], "combined {} vs {}", off[2], on[2]);
    }

    #[test]
    fn demo_training_is_reproducible() {
        let run = || {
            let mut demo = SemicircleDemo::new(256, 0.02, 4).unwrap();
            demo.train_epochs(5).unwrap();
            demo.field(-1.0, 1.0, 8, 0).unwrap()
        };
        assert_eq!(run(), run());
    }
}
