//! Light CNN countermeasure: architecture, training, scoring and
//! checkpoints.

mod checkpoint;
mod layers;
mod score;
mod spec;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use layers::{BatchNorm, Cache, Conv, Dense, Layer, BN_EPS, BN_MOMENTUM};
pub use score::{
    read_scores, score_set, write_scores, DirFeatureStore, FeatureStore, ScoreOutcome, ScoreRecord,
};
pub use spec::{LayerSpec, LcnnSpec, Shape};
pub use train::{
    softmax_cross_entropy, train, EpochLog, LabeledSet, Optimizer, TrainConfig, TrainOutcome,
};

use ndarray::{Array2, Array4, ArrayD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cqt::FeatureMatrix;
use crate::error::{Error, Result};

/// Index of the bona fide logit; the other logit is spoof.
pub const BONAFIDE_CLASS: usize = 0;
pub const SPOOF_CLASS: usize = 1;

/// A network plus the scalar input normalisation learned from training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Lcnn {
    spec: LcnnSpec,
    layers: Vec<Layer>,
    pub input_mean: f64,
    pub input_std: f64,
}

impl Lcnn {
    /// All weights zero, batch norm at the identity: every input maps to
    /// logits `[0, 0]`.
    pub fn zeros(spec: LcnnSpec) -> Result<Self> {
        let shapes = spec.shapes()?;
        spec.validate()?;
        let layers = spec
            .layers
            .iter()
            .zip(&shapes)
            .map(|(l, &s)| Layer::zeros(l, s))
            .collect();
        Ok(Lcnn { spec, layers, input_mean: 0.0, input_std: 1.0 })
    }

    /// He-uniform initialisation from `seed`.
    pub fn new(spec: LcnnSpec, seed: u64) -> Result<Self> {
        let mut model = Lcnn::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut model.layers {
            layer.init(&mut rng);
        }
        Ok(model)
    }

    pub fn spec(&self) -> &LcnnSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().flat_map(|l| l.params()).map(|p| p.len()).sum()
    }

    /// Stacks features into a `(batch, 1, bins, frames)` tensor after
    /// checking every shape.
    pub fn batch_input(&self, feats: &[&FeatureMatrix]) -> Result<Array4<f64>> {
        let (h, w) = self.spec.input_shape;
        let mut data = Vec::with_capacity(feats.len() * h * w);
        for f in feats {
            if f.shape() != (h, w) {
                return Err(Error::Shape(format!(
                    "{}: feature is {:?}, model expects {:?}",
                    f.utt_id,
                    f.shape(),
                    (h, w)
                )));
            }
            data.extend(f.values.iter().map(|&v| v as f64));
        }
        Ok(Array4::from_shape_vec((feats.len(), 1, h, w), data).expect("batch shape"))
    }

    fn normalise(&self, x: &Array4<f64>) -> Array4<f64> {
        let (m, s) = (self.input_mean, self.input_std);
        x.mapv(|v| (v - m) / s)
    }

    /// Inference logits, one row per example.
    pub fn logits_batch(&self, x: &Array4<f64>) -> Result<Array2<f64>> {
        let (_, c, h, w) = x.dim();
        if (c, h, w) != (1, self.spec.input_shape.0, self.spec.input_shape.1) {
            return Err(Error::Shape(format!(
                "input {:?} does not match model input {:?}",
                (c, h, w),
                self.spec.input_shape
            )));
        }
        let mut a = self.normalise(x);
        for layer in &self.layers {
            a = layer.forward(&a, None).0;
        }
        Ok(flatten_logits(a))
    }

    /// `(bona fide, spoof)` logits for one feature matrix.
    pub fn forward(&self, feat: &FeatureMatrix) -> Result<(f64, f64)> {
        let logits = self.logits_batch(&self.batch_input(&[feat])?)?;
        Ok((logits[[0, BONAFIDE_CLASS]], logits[[0, SPOOF_CLASS]]))
    }

    /// Countermeasure score: bona fide logit minus spoof logit. Higher means
    /// more likely bona fide.
    pub fn score(&self, feat: &FeatureMatrix) -> Result<f64> {
        let (b, s) = self.forward(feat)?;
        Ok(b - s)
    }

    /// Training-mode forward pass returning logits and per-layer caches.
    pub fn forward_train(&self, x: &Array4<f64>, rng: &mut ChaCha8Rng) -> (Array2<f64>, Vec<Cache>) {
        let mut a = self.normalise(x);
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, cache) = layer.forward(&a, Some(&mut *rng));
            caches.push(cache);
            a = y;
        }
        (flatten_logits(a), caches)
    }

    /// Parameter gradients for upstream logit gradient `dlogits`, one
    /// `Vec` per layer in [`Layer::params`] order.
    pub fn backward(&self, caches: &[Cache], dlogits: &Array2<f64>) -> Vec<Vec<ArrayD<f64>>> {
        let (n, k) = dlogits.dim();
        let mut grads: Vec<Vec<ArrayD<f64>>> = self.layers.iter().map(Layer::zero_grads).collect();
        let mut g = dlogits
            .clone()
            .into_shape_with_order((n, k, 1, 1))
            .expect("logit grad reshape");
        for ((layer, cache), lg) in self.layers.iter().zip(caches).zip(grads.iter_mut()).rev() {
            g = layer.backward(cache, &g, lg);
        }
        grads
    }

    /// Updates batch-norm running statistics from a training pass.
    pub fn absorb_batch_stats(&mut self, caches: &[Cache], batch: usize) {
        let shapes = self.spec.shapes().expect("validated spec");
        for ((layer, cache), &(_, h, w)) in self.layers.iter_mut().zip(caches).zip(&shapes) {
            layer.absorb_batch_stats(cache, batch * h * w);
        }
    }
}

fn flatten_logits(a: Array4<f64>) -> Array2<f64> {
    let (n, k, _, _) = a.dim();
    a.into_shape_with_order((n, k)).expect("logit reshape")
}

#[cfg(test)]
mod tests;
