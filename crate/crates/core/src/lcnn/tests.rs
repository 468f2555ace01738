use ndarray::{array, Array1, Array2, Array4};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;

fn randn4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array4::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
}

fn small_spec() -> LcnnSpec {
    use LayerSpec::*;
    LcnnSpec {
        input_shape: (6, 8),
        layers: vec![
            Conv { out_channels: 4, kernel: 3, stride: 1 },
            Mfm,
            BatchNorm,
            MaxPool { size: 2 },
            Conv { out_channels: 4, kernel: 3, stride: 2 },
            Mfm,
            Flatten,
            Dense { units: 6 },
            Mfm,
            Dropout { p: 0.3 },
            Dense { units: 2 },
        ],
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Loss `sum(y * r)` through one layer in training mode.
fn layer_loss(layer: &Layer, x: &Array4<f64>, r: &Array4<f64>, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (y, _) = layer.forward(x, Some(&mut rng));
    (&y * r).sum()
}

fn check_layer(layer: &mut Layer, x: &Array4<f64>) {
    let seed = 9;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (y, cache) = layer.forward(x, Some(&mut rng));
    let r = randn4(y.dim(), 77);
    let mut grads = layer.zero_grads();
    let dx = layer.backward(&cache, &r, &mut grads);
    let h = 1e-6;

    for idx in (0..x.len()).step_by(3) {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp.as_slice_mut().unwrap()[idx] += h;
        xm.as_slice_mut().unwrap()[idx] -= h;
        let num = (layer_loss(layer, &xp, &r, seed) - layer_loss(layer, &xm, &r, seed)) / (2.0 * h);
        let ana = dx.as_slice().unwrap()[idx];
        assert!(rel_err(ana, num) < 1e-4, "{layer:?} input {idx}: {ana} vs {num}");
    }
    let n_params = layer.params().len();
    for p in 0..n_params {
        let len = layer.params()[p].len();
        for idx in (0..len).step_by(2) {
            let orig = layer.params()[p].iter().nth(idx).copied().unwrap();
            let set = |layer: &mut Layer, v: f64| {
                *layer.params_mut()[p].iter_mut().nth(idx).unwrap() = v;
            };
            set(layer, orig + h);
            let lp = layer_loss(layer, x, &r, seed);
            set(layer, orig - h);
            let lm = layer_loss(layer, x, &r, seed);
            set(layer, orig);
            let num = (lp - lm) / (2.0 * h);
            let ana = grads[p].iter().nth(idx).copied().unwrap();
            assert!(rel_err(ana, num) < 1e-4, "param {p}[{idx}]: {ana} vs {num}");
        }
    }
}

fn init_layer(spec: LayerSpec, shape: Shape, seed: u64) -> Layer {
    let mut layer = Layer::zeros(&spec, shape);
    layer.init(&mut ChaCha8Rng::seed_from_u64(seed));
    if let Layer::Conv(c) = &mut layer {
        c.bias.iter_mut().enumerate().for_each(|(i, b)| *b = 0.1 * i as f64);
    }
    if let Layer::BatchNorm(bn) = &mut layer {
        bn.gamma = Array1::from_iter((0..bn.gamma.len()).map(|i| 0.5 + 0.25 * i as f64));
        bn.beta = Array1::from_iter((0..bn.beta.len()).map(|i| -0.3 + 0.2 * i as f64));
    }
    layer
}

#[test]
fn conv_gradients() {
    for (stride, kernel) in [(1, 3), (2, 3), (1, 1), (2, 5)] {
        let mut layer = init_layer(LayerSpec::Conv { out_channels: 3, kernel, stride }, (2, 7, 6), 1);
        check_layer(&mut layer, &randn4((2, 2, 7, 6), 2));
    }
}

#[test]
fn mfm_gradients() {
    check_layer(&mut Layer::Mfm, &randn4((2, 4, 3, 3), 3));
}

#[test]
fn maxpool_gradients() {
    check_layer(&mut Layer::MaxPool { size: 2 }, &randn4((2, 2, 5, 6), 4));
}

#[test]
fn batchnorm_gradients() {
    let mut layer = init_layer(LayerSpec::BatchNorm, (3, 4, 2), 0);
    check_layer(&mut layer, &randn4((3, 3, 4, 2), 5));
}

#[test]
fn dense_gradients() {
    let mut layer = init_layer(LayerSpec::Dense { units: 4 }, (10, 1, 1), 6);
    check_layer(&mut layer, &randn4((3, 10, 1, 1), 7));
}

#[test]
fn flatten_and_dropout_gradients() {
    check_layer(&mut Layer::Flatten, &randn4((2, 3, 2, 2), 8));
    check_layer(&mut Layer::Dropout { p: 0.4 }, &randn4((2, 6, 1, 1), 9));
}

#[test]
fn whole_network_gradients() {
    let model = Lcnn::new(small_spec(), 3).unwrap();
    let x = randn4((4, 1, 6, 8), 10);
    let labels = [0, 1, 1, 0];
    let loss = |m: &Lcnn| {
        let (logits, _) = m.forward_train(&x, &mut ChaCha8Rng::seed_from_u64(1));
        softmax_cross_entropy(&logits, &labels).0
    };
    let (logits, caches) = model.forward_train(&x, &mut ChaCha8Rng::seed_from_u64(1));
    let (_, dlogits) = softmax_cross_entropy(&logits, &labels);
    let grads = model.backward(&caches, &dlogits);
    let h = 1e-6;
    for li in 0..model.layers().len() {
        for (pi, g) in grads[li].iter().enumerate() {
            for idx in (0..g.len()).step_by(5) {
                let mut mp = model.clone();
                *mp.layers_mut()[li].params_mut()[pi].iter_mut().nth(idx).unwrap() += h;
                let mut mm = model.clone();
                *mm.layers_mut()[li].params_mut()[pi].iter_mut().nth(idx).unwrap() -= h;
                let num = (loss(&mp) - loss(&mm)) / (2.0 * h);
                let ana = g.iter().nth(idx).copied().unwrap();
                assert!(rel_err(ana, num) < 1e-4, "layer {li} param {pi}[{idx}]: {ana} vs {num}");
            }
        }
    }
}

#[test]
fn mfm_examples() {
    let x = Array4::from_shape_vec((1, 2, 1, 1), vec![3.0, -1.0]).unwrap();
    assert_eq!(Layer::Mfm.forward(&x, None).0.into_raw_vec_and_offset().0, vec![3.0]);
    let x = Array4::from_shape_vec((1, 4, 1, 1), vec![1.0, 5.0, 2.0, 4.0]).unwrap();
    assert_eq!(Layer::Mfm.forward(&x, None).0.into_raw_vec_and_offset().0, vec![2.0, 5.0]);
}

#[test]
fn mfm_tie_routes_gradient_to_first_half() {
    let x = Array4::from_shape_vec((1, 2, 1, 1), vec![0.5, 0.5]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (_, cache) = Layer::Mfm.forward(&x, Some(&mut rng));
    let dy = Array4::from_elem((1, 1, 1, 1), 2.0);
    let dx = Layer::Mfm.backward(&cache, &dy, &mut []);
    assert_eq!(dx.into_raw_vec_and_offset().0, vec![2.0, 0.0]);
}

#[test]
fn zero_model_scores_zero() {
    let model = Lcnn::zeros(LcnnSpec::compact()).unwrap();
    let (h, w) = model.spec().input_shape;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let feat = FeatureMatrix {
        utt_id: "u".into(),
        values: Array2::from_shape_simple_fn((h, w), || rng.random_range(-10.0f32..2.0)),
    };
    assert_eq!(model.forward(&feat).unwrap(), (0.0, 0.0));
    assert_eq!(model.score(&feat).unwrap(), 0.0);
}

#[test]
fn dense_scaling_is_linear() {
    let mut layer = init_layer(LayerSpec::Dense { units: 3 }, (5, 1, 1), 2);
    if let Layer::Dense(d) = &mut layer {
        d.bias.fill(0.0);
    }
    let x = randn4((2, 5, 1, 1), 3);
    let y1 = layer.forward(&x, None).0;
    let y2 = layer.forward(&(&x * 2.0), None).0;
    for (a, b) in y1.iter().zip(y2.iter()) {
        assert!((2.0 * a - b).abs() < 1e-12);
    }
}

#[test]
fn cross_entropy_values() {
    let (loss, grad) = softmax_cross_entropy(&array![[0.0, 0.0]], &[0]);
    assert!((loss - 2f64.ln()).abs() < 1e-15);
    assert_eq!(grad, array![[-0.5, 0.5]]);
    // huge logits stay finite
    let (loss, _) = softmax_cross_entropy(&array![[1000.0, -1000.0]], &[1]);
    assert!((loss - 2000.0).abs() < 1e-9);
}

#[test]
fn input_shape_mismatch_is_error() {
    let model = Lcnn::zeros(LcnnSpec::compact()).unwrap();
    let feat = FeatureMatrix { utt_id: "u".into(), values: Array2::zeros((84, 100)) };
    assert!(matches!(model.forward(&feat), Err(Error::Shape(_))));
}

#[test]
fn eval_mode_uses_running_stats() {
    let bn = BatchNorm {
        gamma: array![2.0],
        beta: array![1.0],
        running_mean: array![3.0],
        running_var: array![4.0 - BN_EPS],
    };
    let x = Array4::from_elem((1, 1, 1, 1), 5.0);
    let y = Layer::BatchNorm(bn).forward(&x, None).0;
    // 2 * (5 - 3) / 2 + 1
    assert!((y[[0, 0, 0, 0]] - 3.0).abs() < 1e-12);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut model = Lcnn::new(small_spec(), 5).unwrap();
    model.input_mean = -4.5;
    model.input_std = 2.25;
    // round through f32 first so the comparison is exact
    for layer in model.layers_mut() {
        for mut p in layer.params_mut() {
            p.mapv_inplace(|v| v as f32 as f64);
        }
    }
    save_checkpoint(&model, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, model);

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::BadFile { .. })));
    std::fs::write(&path, b"not a checkpoint at all").unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::BadFile { .. })));
}

fn toy_set(n: usize, seed: u64) -> LabeledSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = LabeledSet::default();
    for i in 0..n {
        let key = if i % 2 == 0 { crate::protocol::Key::Bonafide } else { crate::protocol::Key::Spoof };
        let shift = if i % 2 == 0 { 1.0 } else { -1.0 };
        let values = Array2::from_shape_simple_fn((6, 8), || shift + 0.3 * rng.sample::<f32, _>(StandardNormal));
        set.push(FeatureMatrix { utt_id: format!("u{i}"), values }, key);
    }
    set
}

#[test]
fn training_is_reproducible_and_learns() {
    let set = toy_set(16, 1);
    let mut spec = small_spec();
    spec.layers.retain(|l| !matches!(l, LayerSpec::Dropout { .. }));
    let cfg = TrainConfig { batch_size: 4, epochs: 30, learning_rate: 0.01, seed: 7, ..Default::default() };
    let a = train(spec.clone(), &set, Some(&set), &cfg).unwrap();
    let b = train(spec, &set, Some(&set), &cfg).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.model, b.model);
    assert!(a.log.last().unwrap().train_loss < a.log[0].train_loss);
    assert_eq!(a.log.iter().filter_map(|e| e.dev_eer).fold(1.0, f64::min), 0.0);
}

#[test]
fn single_class_training_is_error() {
    let mut set = toy_set(4, 2);
    set.labels.fill(crate::protocol::Key::Spoof);
    let err = train(small_spec(), &set, None, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::DegenerateData(_)));
}

#[test]
fn zero_learning_rate_keeps_weights() {
    let set = toy_set(8, 3);
    let cfg = TrainConfig { batch_size: 4, epochs: 2, learning_rate: 0.0, seed: 11, ..Default::default() };
    let out = train(small_spec(), &set, None, &cfg).unwrap();
    let init = Lcnn::new(small_spec(), 11).unwrap();
    for (a, b) in out.model.layers().iter().zip(init.layers()) {
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa, &pb);
        }
    }
}

#[test]
fn score_set_is_batch_invariant() {
    let set = toy_set(10, 4);
    let model = Lcnn::new(small_spec(), 2).unwrap();
    let store: std::collections::HashMap<String, FeatureMatrix> =
        set.features.iter().map(|f| (f.utt_id.clone(), f.clone())).collect();
    let records = set
        .features
        .iter()
        .map(|f| crate::protocol::TrialRecord::bonafide("S", &f.utt_id))
        .chain(std::iter::once(crate::protocol::TrialRecord::bonafide("S", "missing")))
        .collect();
    let mut manifest = crate::protocol::DatasetManifest::new(crate::protocol::Subset::Evaluation, ".");
    manifest.records = records;
    let one = score_set(&model, &manifest, &store, 1).unwrap();
    let many = score_set(&model, &manifest, &store, 7).unwrap();
    assert_eq!(one.scores, many.scores);
    assert_eq!(one.scores.len(), 10);
    assert_eq!(one.failures.len(), 1);
    assert_eq!(one.failures[0].utt_id, "missing");
}

#[test]
fn score_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scores.txt");
    let scores = vec![
        ScoreRecord { utt_id: "a".into(), score: 0.1 + 0.2 },
        ScoreRecord { utt_id: "b".into(), score: -1e-300 },
    ];
    write_scores(&scores, &path).unwrap();
    assert_eq!(read_scores(&path).unwrap(), scores);
    std::fs::write(&path, "a 1\na 2\n").unwrap();
    assert!(matches!(read_scores(&path), Err(Error::DuplicateUtt { line: 2, .. })));
    std::fs::write(&path, "a one\n").unwrap();
    assert!(matches!(read_scores(&path), Err(Error::Parse { line: 1, .. })));
}
