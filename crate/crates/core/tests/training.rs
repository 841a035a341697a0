use diffcore::{check_gradient, Rng, Tape, Tensor};
use npode::data::{Dataset, Provenance};
use npode::training::{self, elbo_loss, split_context_target, Checkpoint};
use npode::{DecoderKind, Error, ModelConfig, NpModel, OdeSolverConfig, TrainConfig};

fn tiny(kind: DecoderKind, x_dim: usize, y_dim: usize) -> ModelConfig {
    ModelConfig {
        x_dim,
        y_dim,
        decoder: kind,
        feature_width: 4,
        latent_dim: 8,
        encoder_layers: 3,
        heads: 2,
        channels: 8,
        mlp_layers: 3,
        solver: OdeSolverConfig { d_start: 0.0, d_end: 0.1, step: 0.05 },
    }
}

fn line(n: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = Rng::seed_from(seed);
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .map(|i| {
            let x = -2.0 + 4.0 * i as f64 / (n - 1) as f64;
            (vec![x], vec![0.5 * x - 0.25 + noise * rng.normal()])
        })
        .collect();
    Dataset::from_rows(&rows, Provenance::Csv).unwrap()
}

fn quick(iterations: usize, seed: u64) -> TrainConfig {
    TrainConfig { iterations, learning_rate: 5e-3, seed, trace_every: 20, ..Default::default() }
}

#[test]
fn context_target_split_partitions_rows() {
    let mut rng = Rng::seed_from(1);
    for _ in 0..100 {
        let n = 2 + rng.below(30);
        let (c, t) = split_context_target(n, &mut rng, (0.3, 0.9)).unwrap();
        assert!(!c.is_empty() && !t.is_empty());
        let mut all: Vec<usize> = c.iter().chain(&t).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}

#[test]
fn kl_vanishes_when_latent_ignores_data() {
    let cfg = tiny(DecoderKind::Npode, 1, 1);
    let mut model = NpModel::init(cfg, &mut Rng::seed_from(2)).unwrap();
    for name in ["sto.mean.w", "sto.std.w"] {
        let shape = model.params.get(name).unwrap().shape().to_vec();
        model.params.replace(name, Tensor::zeros(&shape)).unwrap();
    }
    let data = line(7, 0.0, 0);
    let (ctx, tgt) = (data.select(&[0, 2, 4, 6]), data.select(&[1, 3, 5]));
    let tape = Tape::new();
    let terms = elbo_loss(&tape, &model, &model.params, &ctx, &tgt, &mut Rng::seed_from(3), &TrainConfig::default()).unwrap();
    assert_eq!(terms.kl.item().unwrap(), 0.0);
    assert_eq!(terms.loss.item().unwrap(), terms.nll.item().unwrap());
}

#[test]
fn elbo_gradient_matches_finite_differences() {
    // feature slot 4 + latent 8 + x slot 4 gives a length-16 decoder signal
    let cfg = tiny(DecoderKind::Npode, 1, 1);
    let mut rng = Rng::seed_from(4);
    let mut model = NpModel::init(cfg, &mut rng).unwrap();
    let names: Vec<String> = model.params.iter().filter(|(_, t)| t.rank() == 1).map(|(n, _)| n.to_string()).collect();
    for name in &names {
        let n = model.params.get(name).unwrap().len();
        model.params.replace(name, Tensor::vector(rng.normals(n).into_iter().map(|v| 0.2 * v).collect())).unwrap();
    }
    let data = line(7, 0.1, 5);
    let (ctx, tgt) = (data.select(&[0, 2, 4, 6]), data.select(&[1, 3, 5]));
    let cfg = TrainConfig::default();
    for (name, t) in model.params.iter() {
        let report = check_gradient(
            |tape, x| {
                let mut p = model.params.clone();
                p.replace(name, x.clone()).unwrap();
                let terms = elbo_loss(tape, &model, &p, &ctx, &tgt, &mut Rng::seed_from(6), &cfg).unwrap();
                Ok(terms.loss)
            },
            t,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{name}: {}", report.max_rel_error);
    }
}

fn held_loss(model: &NpModel, data: &Dataset) -> f64 {
    let mut rng = Rng::seed_from(99);
    let mut total = 0.0;
    for _ in 0..20 {
        let (c, t) = split_context_target(data.len(), &mut rng, (0.3, 0.9)).unwrap();
        let tape = Tape::new();
        let terms = elbo_loss(&tape, model, &model.params, &data.select(&c), &data.select(&t), &mut rng, &TrainConfig::default()).unwrap();
        total += terms.loss.item().unwrap();
    }
    total / 20.0
}

#[test]
fn loss_decreases_on_a_small_linear_dataset() {
    let data = line(10, 0.05, 7).normalize().unwrap();
    for kind in [DecoderKind::Npode, DecoderKind::Mlp] {
        let tc = quick(200, 8);
        let out = training::train(&data, &tiny(kind, 1, 1), &tc).unwrap();
        let init = NpModel::init(tiny(kind, 1, 1), &mut Rng::seed_from(8).fork()).unwrap();
        let (before, after) = (held_loss(&init, &data), held_loss(&out.model, &data));
        assert!(after < before, "{kind:?}: {before} -> {after}");
        assert_eq!(out.trace.len(), 10);
        assert!(out.trace.iter().all(|r| r.kl >= -1e-12));
    }
}

#[test]
fn same_seed_same_checkpoint() {
    let data = line(12, 0.05, 9);
    let cfg = tiny(DecoderKind::Npode, 1, 1);
    let a = training::train(&data, &cfg, &quick(30, 10)).unwrap();
    let b = training::train(&data, &cfg, &quick(30, 10)).unwrap();
    assert_eq!(a.checkpoint.to_json().unwrap(), b.checkpoint.to_json().unwrap());
    assert_eq!(a.checkpoint.final_loss, b.checkpoint.final_loss);
    let c = training::train(&data, &cfg, &quick(30, 11)).unwrap();
    assert_ne!(a.checkpoint.final_loss, c.checkpoint.final_loss);
}

#[test]
fn zero_iterations_return_the_initialization() {
    let data = line(5, 0.0, 0);
    let cfg = tiny(DecoderKind::Mlp, 1, 1);
    let tc = quick(0, 12);
    let out = training::train(&data, &cfg, &tc).unwrap();
    let mut rng = Rng::seed_from(12);
    let init = NpModel::init(cfg, &mut rng.fork()).unwrap();
    assert_eq!(out.model.params, init.params);
    assert!(out.trace.is_empty());
    assert_eq!(out.checkpoint.iterations, 0);
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let data = line(12, 0.05, 13).normalize().unwrap();
    let out = training::train(&data, &tiny(DecoderKind::Npode, 1, 1), &quick(20, 14)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    out.checkpoint.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, out.checkpoint);
    let restored = loaded.restore().unwrap();
    let x = Tensor::from_rows(&[vec![-1.5], vec![0.1], vec![1.9]]).unwrap();
    let a = training::predict(&out.model, &data, &x, 1, &mut Rng::seed_from(15)).unwrap();
    let b = training::predict(&restored, &data, &x, 1, &mut Rng::seed_from(15)).unwrap();
    for (u, v) in a.mean.iter().chain(&a.std).zip(b.mean.iter().chain(&b.std)) {
        assert!((u - v).abs() < 1e-12);
    }
    assert_eq!(loaded.normalization, data.normalization().cloned());
}

#[test]
fn unknown_checkpoint_format_is_rejected() {
    let data = line(5, 0.0, 0);
    let out = training::train(&data, &tiny(DecoderKind::Mlp, 1, 1), &quick(0, 1)).unwrap();
    let text = out.checkpoint.to_json().unwrap().replace("npode-checkpoint/v1", "npode-checkpoint/v0");
    assert!(matches!(Checkpoint::from_json(&text), Err(Error::Format(_))));
}

#[test]
fn prediction_shapes_and_repeatability() {
    let data = line(9, 0.05, 16);
    let model = NpModel::init(tiny(DecoderKind::Npode, 1, 1), &mut Rng::seed_from(17)).unwrap();
    let x = Tensor::new(vec![70, 1], (0..70).map(|i| -2.0 + i as f64 * 0.05).collect()).unwrap();
    let a = training::predict(&model, &data, &x, 1, &mut Rng::seed_from(18)).unwrap();
    assert_eq!(a.len(), 70);
    assert_eq!(a.y_dim, 1);
    assert!(a.std.iter().all(|&s| s > 0.0));
    let b = training::predict(&model, &data, &x, 1, &mut Rng::seed_from(18)).unwrap();
    assert_eq!(a, b);
    let multi = training::predict(&model, &data, &x, 4, &mut Rng::seed_from(18)).unwrap();
    assert_eq!(multi.len(), 70);
    assert!(training::predict(&model, &data.select(&[]), &x, 1, &mut Rng::seed_from(18)).is_err());
}

#[test]
fn collapsed_prior_makes_prediction_nearly_seed_independent() {
    let data = line(9, 0.05, 19);
    let mut model = NpModel::init(tiny(DecoderKind::Npode, 1, 1), &mut Rng::seed_from(20)).unwrap();
    model.params.replace("sto.std.w", Tensor::zeros(&[4, 8])).unwrap();
    model.params.replace("sto.std.b", Tensor::filled(&[8], -60.0)).unwrap();
    let x = Tensor::from_rows(&[vec![0.3], vec![-0.7]]).unwrap();
    let a = training::predict(&model, &data, &x, 1, &mut Rng::seed_from(1)).unwrap();
    let b = training::predict(&model, &data, &x, 1, &mut Rng::seed_from(2)).unwrap();
    let free = NpModel::init(tiny(DecoderKind::Npode, 1, 1), &mut Rng::seed_from(20)).unwrap();
    let c = training::predict(&free, &data, &x, 1, &mut Rng::seed_from(1)).unwrap();
    let d = training::predict(&free, &data, &x, 1, &mut Rng::seed_from(2)).unwrap();
    let gap = |p: &npode::PredictiveDistribution, q: &npode::PredictiveDistribution| {
        p.mean.iter().zip(&q.mean).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
    };
    assert!(gap(&a, &b) < 0.25 * gap(&c, &d), "{} vs {}", gap(&a, &b), gap(&c, &d));
}

#[test]
fn trained_model_covers_noiseless_training_points() {
    let data = line(10, 0.0, 21);
    let out = training::train(&data, &tiny(DecoderKind::Mlp, 1, 1), &quick(400, 22)).unwrap();
    let pred = training::predict(&out.model, &data, &data.x_tensor(), 1, &mut Rng::seed_from(23)).unwrap();
    for i in 0..data.len() {
        let err = (pred.mean[i] - data.y()[i]).abs();
        assert!(err <= 3.0 * pred.std[i], "row {i}: error {err}, std {}", pred.std[i]);
    }
}

#[test]
fn overflowing_loss_reports_divergence() {
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..8).map(|i| (vec![i as f64], vec![1e300 * (i as f64 - 3.5)])).collect();
    let data = Dataset::from_rows(&rows, Provenance::Csv).unwrap();
    match training::train(&data, &tiny(DecoderKind::Mlp, 1, 1), &quick(50, 25)) {
        Err(Error::Diverged { iteration, loss }) => {
            assert!(iteration < 50);
            assert!(!loss.is_finite());
        }
        other => panic!("expected divergence, got {:?}", other.map(|o| o.checkpoint.final_loss)),
    }
}

#[test]
fn mismatched_widths_are_rejected() {
    let data = line(6, 0.0, 0);
    assert!(training::train(&data, &tiny(DecoderKind::Mlp, 2, 1), &quick(1, 0)).is_err());
}
