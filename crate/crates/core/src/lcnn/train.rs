use ndarray::{Array2, ArrayD, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Lcnn, LcnnSpec, BONAFIDE_CLASS, SPOOF_CLASS};
use crate::cqt::FeatureMatrix;
use crate::error::{Error, Result};
use crate::metrics::compute_eer;
use crate::protocol::Key;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    SgdMomentum { momentum: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Stop after this many epochs without a better development result.
    pub patience: Option<usize>,
    /// Stop once the mean training loss of an epoch drops below this.
    pub stop_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 20,
            learning_rate: 1e-4,
            seed: 0,
            optimizer: Optimizer::default(),
            patience: None,
            stop_loss: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Features with their bona fide / spoof labels.
#[derive(Debug, Clone, Default)]
pub struct LabeledSet {
    pub features: Vec<FeatureMatrix>,
    pub labels: Vec<Key>,
}

impl LabeledSet {
    pub fn push(&mut self, feat: FeatureMatrix, key: Key) {
        self.features.push(feat);
        self.labels.push(key);
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    fn counts(&self) -> (usize, usize) {
        let bona = self.labels.iter().filter(|&&k| k == Key::Bonafide).count();
        (bona, self.labels.len() - bona)
    }
}

fn class_of(key: Key) -> usize {
    match key {
        Key::Bonafide => BONAFIDE_CLASS,
        Key::Spoof => SPOOF_CLASS,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: Option<f64>,
    pub dev_eer: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best epoch by development EER (then loss); last epoch without a
    /// development set.
    pub model: Lcnn,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let n = logits.nrows();
    assert_eq!(n, labels.len(), "one label per row");
    let mut grad = Array2::zeros(logits.dim());
    let mut loss = 0.0;
    for (i, (row, &y)) in logits.rows().into_iter().zip(labels).enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[y];
        for (j, &z) in row.iter().enumerate() {
            let p = (z - lse).exp();
            grad[[i, j]] = (p - if j == y { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    (loss / n as f64, grad)
}

enum OptState {
    Adam { m: Vec<Vec<ArrayD<f64>>>, v: Vec<Vec<ArrayD<f64>>>, t: i32 },
    Sgd { velocity: Vec<Vec<ArrayD<f64>>> },
}

impl OptState {
    fn new(model: &Lcnn, opt: Optimizer) -> Self {
        let zeros = || model.layers().iter().map(|l| l.zero_grads()).collect::<Vec<_>>();
        match opt {
            Optimizer::Adam { .. } => OptState::Adam { m: zeros(), v: zeros(), t: 0 },
            Optimizer::SgdMomentum { .. } => OptState::Sgd { velocity: zeros() },
        }
    }

    fn step(&mut self, model: &mut Lcnn, grads: &[Vec<ArrayD<f64>>], opt: Optimizer, lr: f64) {
        match (self, opt) {
            (OptState::Adam { m, v, t }, Optimizer::Adam { beta1, beta2, eps }) => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for (li, layer) in model.layers_mut().iter_mut().enumerate() {
                    for (pi, mut p) in layer.params_mut().into_iter().enumerate() {
                        Zip::from(&mut p)
                            .and(&mut m[li][pi])
                            .and(&mut v[li][pi])
                            .and(&grads[li][pi])
                            .for_each(|p, m, v, &g| {
                                *m = beta1 * *m + (1.0 - beta1) * g;
                                *v = beta2 * *v + (1.0 - beta2) * g * g;
                                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                            });
                    }
                }
            }
            (OptState::Sgd { velocity }, Optimizer::SgdMomentum { momentum }) => {
                for (li, layer) in model.layers_mut().iter_mut().enumerate() {
                    for (pi, mut p) in layer.params_mut().into_iter().enumerate() {
                        Zip::from(&mut p)
                            .and(&mut velocity[li][pi])
                            .and(&grads[li][pi])
                            .for_each(|p, u, &g| {
                                *u = momentum * *u + g;
                                *p -= lr * *u;
                            });
                    }
                }
            }
            _ => unreachable!("optimizer state matches config"),
        }
    }
}

/// Scalar mean and standard deviation over every training feature value.
fn input_stats(set: &LabeledSet) -> (f64, f64) {
    let mut n = 0usize;
    let mut sum = 0.0;
    for f in &set.features {
        n += f.values.len();
        sum += f.values.iter().map(|&v| v as f64).sum::<f64>();
    }
    let mean = sum / n as f64;
    let mut ss = 0.0;
    for f in &set.features {
        ss += f.values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>();
    }
    let std = (ss / n as f64).sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

/// Inference loss and scores over a labelled set.
pub(crate) fn evaluate(model: &Lcnn, set: &LabeledSet, batch_size: usize) -> Result<(f64, Vec<f64>)> {
    let mut loss = 0.0;
    let mut scores = Vec::with_capacity(set.len());
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(batch_size) {
        let feats: Vec<&FeatureMatrix> = chunk.iter().map(|&i| &set.features[i]).collect();
        let labels: Vec<usize> = chunk.iter().map(|&i| class_of(set.labels[i])).collect();
        let logits = model.logits_batch(&model.batch_input(&feats)?)?;
        loss += softmax_cross_entropy(&logits, &labels).0 * chunk.len() as f64;
        scores.extend(logits.rows().into_iter().map(|r| r[BONAFIDE_CLASS] - r[SPOOF_CLASS]));
    }
    Ok((loss / set.len().max(1) as f64, scores))
}

fn dev_metrics(model: &Lcnn, dev: &LabeledSet, batch_size: usize) -> Result<(f64, Option<f64>)> {
    let (loss, scores) = evaluate(model, dev, batch_size)?;
    let (bona, spoof): (Vec<_>, Vec<_>) = scores
        .iter()
        .zip(&dev.labels)
        .partition(|(_, &k)| k == Key::Bonafide);
    let bona: Vec<f64> = bona.into_iter().map(|(&s, _)| s).collect();
    let spoof: Vec<f64> = spoof.into_iter().map(|(&s, _)| s).collect();
    let eer = if bona.is_empty() || spoof.is_empty() {
        None
    } else {
        Some(compute_eer(&bona, &spoof)?.eer)
    };
    Ok((loss, eer))
}

/// Mini-batch training. Runs are bit-reproducible for a fixed seed and
/// configuration, independent of the worker thread count.
pub fn train(spec: LcnnSpec, train_set: &LabeledSet, dev_set: Option<&LabeledSet>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.features.len() != train_set.labels.len() {
        return Err(Error::InvalidParameter("one label per training feature".into()));
    }
    let (bona, spoof) = train_set.counts();
    if bona == 0 || spoof == 0 {
        return Err(Error::DegenerateData(format!(
            "training set needs both classes, has {bona} bona fide and {spoof} spoof"
        )));
    }
    let mut model = Lcnn::new(spec, cfg.seed)?;
    let (mean, std) = input_stats(train_set);
    model.input_mean = mean;
    model.input_std = std;
    // fail on a shape mismatch before any training work
    for f in &train_set.features {
        model.batch_input(&[f])?;
    }
    let dev_set = dev_set.filter(|d| !d.is_empty());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut opt = OptState::new(&model, cfg.optimizer);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, Lcnn)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let feats: Vec<&FeatureMatrix> = chunk.iter().map(|&i| &train_set.features[i]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| class_of(train_set.labels[i])).collect();
            let x = model.batch_input(&feats)?;
            let (logits, caches) = model.forward_train(&x, &mut rng);
            let (loss, dlogits) = softmax_cross_entropy(&logits, &labels);
            if !loss.is_finite() {
                return Err(Error::DegenerateData(format!("training loss diverged at epoch {epoch}")));
            }
            total += loss * chunk.len() as f64;
            let grads = model.backward(&caches, &dlogits);
            model.absorb_batch_stats(&caches, chunk.len());
            opt.step(&mut model, &grads, cfg.optimizer, cfg.learning_rate);
        }
        let train_loss = total / train_set.len() as f64;
        let mut entry = EpochLog { epoch, train_loss, dev_loss: None, dev_eer: None };

        let mut improved = true;
        if let Some(dev) = dev_set {
            let (dev_loss, dev_eer) = dev_metrics(&model, dev, cfg.batch_size)?;
            entry.dev_loss = Some(dev_loss);
            entry.dev_eer = dev_eer;
            let key = (dev_eer.unwrap_or(f64::INFINITY), dev_loss);
            improved = match &best {
                None => true,
                Some((e, l, _, _)) => key.0 < *e || (key.0 == *e && key.1 < *l),
            };
            if improved {
                best = Some((key.0, key.1, epoch, model.clone()));
            }
        }
        log::info!(
            "epoch {epoch}: train_loss={train_loss:.6} dev_loss={} dev_eer={}",
            fmt_opt(entry.dev_loss),
            fmt_opt(entry.dev_eer)
        );
        log.push(entry);

        stale = if improved { 0 } else { stale + 1 };
        if cfg.patience.is_some_and(|p| stale >= p) {
            log::info!("no improvement for {stale} epochs, stopping");
            break;
        }
        if cfg.stop_loss.is_some_and(|t| train_loss < t) {
            break;
        }
    }

    let last_epoch = log.last().map_or(0, |e| e.epoch);
    let (model, best_epoch) = match best {
        Some((_, _, epoch, m)) => (m, epoch),
        None => (model, last_epoch),
    };
    Ok(TrainOutcome { model, best_epoch, log })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.6}"))
}
