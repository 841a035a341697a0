//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Verdicts are reported, not asserted; the process fails only if a
//! criterion cannot be evaluated at all. Set `NPODE_ACCEPTANCE_ITERATIONS`
//! to shorten the training-based criteria while developing.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use diffcore::{check_gradient, Rng, Tape, Tensor};
use npode::baselines::{gp_fit, GpGrid, KernelKind};
use npode::data::{generate_spiral, generate_synthetic6, load_csv, spiral_flow, write_csv, SpiralConfig};
use npode::decoders::{euler_integrate, OdeSolverConfig};
use npode::metrics::CiKind;
use npode::npmodel::{cross_attention, encode_deterministic, encode_stochastic, kl_divergence, LatentDistribution};
use npode::training::{self, elbo_loss, Checkpoint};
use npode::{DecoderKind, ModelConfig, NpModel, TrainConfig};
use npode_cli::commands;
use npode_cli::RunConfig;

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const SEEDS: [u64; 3] = [0, 1, 2];
const SPIRAL_NOISE: [f64; 3] = [0.01, 0.02, 0.1];
const SPIRAL_GATES: [f64; 3] = [0.03, 0.05, 0.20];
const NESTED: [usize; 5] = [30, 50, 60, 70, 80];

/// Reduced widths used for every trained network in this run.
const MODEL_SETTINGS: &[(&str, &str)] = &[
    ("model.feature_width", "16"),
    ("model.latent_dim", "16"),
    ("model.heads", "2"),
    ("model.channels", "4"),
    ("train.learning_rate", "0.01"),
];

fn iterations() -> usize {
    std::env::var("NPODE_ACCEPTANCE_ITERATIONS").ok().and_then(|v| v.parse().ok()).unwrap_or(10_000)
}

fn verdict(n: usize, pass: bool, detail: &str) -> bool {
    println!("criterion {n}: {}  {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_config(pairs: &[(&str, String)]) -> RunConfig {
    let mut cfg = RunConfig::default();
    for (k, v) in MODEL_SETTINGS {
        cfg.set(k, v).unwrap();
    }
    cfg.set("train.iterations", &iterations().to_string()).unwrap();
    for (k, v) in pairs {
        cfg.set(k, v).unwrap();
    }
    cfg
}

/// Trains and evaluates one configuration; returns (physical rmse, mape,
/// coverage, training seconds).
fn train_and_score(cfg: &RunConfig, dir: &Path) -> (f64, Option<f64>, f64, f64) {
    let t = commands::train(cfg, dir).unwrap_or_else(|e| panic!("training in {}: {e}", dir.display()));
    let e = commands::evaluate(dir, cfg, None, cfg.ci().unwrap()).unwrap();
    (e.physical.rmse, e.physical.mape, e.physical.coverage, t.seconds)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_1() -> bool {
    let out = scratch("params");
    let start = Instant::now();
    let run = Command::new(env!("CARGO_BIN_EXE_npode")).args(["params", "--out"]).arg(&out).output().unwrap();
    let secs = start.elapsed().as_secs_f64();
    let text = String::from_utf8_lossy(&run.stdout).to_string();
    let count = |label: &str| -> Vec<usize> {
        text.lines()
            .filter(|l| l.trim_start().starts_with(label))
            .filter_map(|l| l.split_whitespace().last()?.parse().ok())
            .collect()
    };
    let totals = count("total");
    let conv = count("Conv layer");
    let fc = count("FC layer");
    let pass = run.status.success()
        && totals == [99456, 442368]
        && conv == [384, 49536, 49536]
        && fc == [147456, 147456, 147456]
        && secs < 1.0;
    verdict(1, pass, &format!("totals {totals:?}, conv rows {conv:?}, fc rows {fc:?}, {secs:.2}s"))
}

fn criterion_2() -> bool {
    let mut ordering = true;
    let mut gates = true;
    let mut slowest: f64 = 0.0;
    let mut parts = Vec::new();
    for (k, &noise) in SPIRAL_NOISE.iter().enumerate() {
        let mut rmse = [Vec::new(), Vec::new()];
        for &seed in &SEEDS {
            for (m, kind) in ["npode", "np"].iter().enumerate() {
                let cfg = run_config(&[
                    ("spiral.noise_std", noise.to_string()),
                    ("data.seed", seed.to_string()),
                    ("split.seed", seed.to_string()),
                    ("train.seed", seed.to_string()),
                    ("model.kind", kind.to_string()),
                ]);
                let dir = scratch(&format!("spiral_{noise}_{kind}_{seed}"));
                let (r, _, _, secs) = train_and_score(&cfg, &dir);
                println!("  spiral sigma={noise} {kind} seed={seed}: rmse {r:.4} ({secs:.0}s)");
                if k == 0 && seed == 0 && *kind == "npode" {
                    loss_trend(&dir.join(commands::TRACE_FILE));
                }
                rmse[m].push(r);
                slowest = slowest.max(secs);
            }
        }
        let (a, b) = (mean(&rmse[0]), mean(&rmse[1]));
        ordering &= a <= b;
        gates &= a <= SPIRAL_GATES[k];
        parts.push(format!("sigma={noise}: npode {a:.4} vs np {b:.4} (gate {})", SPIRAL_GATES[k]));
    }
    let pass = ordering && gates && slowest <= 1200.0;
    verdict(
        2,
        pass,
        &format!(
            "{}; ordering {}, gates {}, slowest run {slowest:.0}s",
            parts.join("; "),
            if ordering { "holds" } else { "violated" },
            if gates { "met" } else { "missed" }
        ),
    )
}

/// Informational: trace loss averaged over 500-iteration windows after
/// iteration 1000.
fn loss_trend(path: &Path) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let rows: Vec<(usize, f64)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].parse().unwrap(), r[1].parse().unwrap())
        })
        .filter(|(i, _)| *i >= 1000)
        .collect();
    let mut windows: Vec<Vec<f64>> = Vec::new();
    for (i, loss) in rows {
        let w = (i - 1000) / 500;
        if windows.len() <= w {
            windows.resize(w + 1, Vec::new());
        }
        windows[w].push(loss);
    }
    let means: Vec<f64> = windows.iter().filter(|w| !w.is_empty()).map(|w| mean(w)).collect();
    let rises = means.windows(2).filter(|w| w[1] > w[0]).count();
    println!(
        "  loss trend (sigma=0.01, npode, seed 0): {} windows, {rises} increases, first {:.4}, last {:.4}",
        means.len(),
        means.first().copied().unwrap_or(f64::NAN),
        means.last().copied().unwrap_or(f64::NAN)
    );
}

fn criterion_3() -> bool {
    let start = Instant::now();
    let methods = ["npode", "np", "gp-matern", "gp-poly"];
    let mut table = vec![vec![0.0; NESTED.len()]; methods.len()];
    for (m, kind) in methods.iter().enumerate() {
        for (s, &size) in NESTED.iter().enumerate() {
            let mut vals = Vec::new();
            for &seed in &SEEDS {
                let cfg = run_config(&[
                    ("data.source", "synthetic6".into()),
                    ("split.test_count", "20".into()),
                    ("split.train_size", size.to_string()),
                    ("data.seed", seed.to_string()),
                    ("split.seed", seed.to_string()),
                    ("train.seed", seed.to_string()),
                    ("model.kind", kind.to_string()),
                ]);
                let (_, mape, _, _) = train_and_score(&cfg, &scratch(&format!("table_{kind}_{size}_{seed}")));
                vals.push(mape.expect("synthetic6 responses are positive"));
            }
            table[m][s] = mean(&vals);
        }
        let row: Vec<String> = table[m].iter().map(|v| format!("{:.3}%", v * 100.0)).collect();
        println!("  {kind:<10} MAPE by size {NESTED:?}: {}", row.join(" "));
    }
    let monotone: Vec<bool> = table.iter().map(|r| r.windows(2).all(|w| w[1] <= w[0])).collect();
    let better = [3, 4].iter().all(|&s| table[0][s] <= table[1][s]);
    let secs = start.elapsed().as_secs_f64();
    let pass = monotone.iter().all(|&b| b) && better && secs <= 7200.0;
    let flags: Vec<String> = methods.iter().zip(&monotone).map(|(k, b)| format!("{k} {}", if *b { "monotone" } else { "not monotone" })).collect();
    verdict(
        3,
        pass,
        &format!(
            "{}; npode vs np at 70/80: {:.3}%/{:.3}% vs {:.3}%/{:.3}%; {secs:.0}s",
            flags.join(", "),
            table[0][3] * 100.0,
            table[0][4] * 100.0,
            table[1][3] * 100.0,
            table[1][4] * 100.0
        ),
    )
}

fn project(tape: &Tape, out: &Tensor, weights: &Tensor) -> diffcore::Result<Tensor> {
    let prod = tape.mul(out, weights)?;
    tape.sum(&prod, None)
}

fn criterion_4() -> bool {
    let mut rng = Rng::seed_from(4);
    let mut worst: f64 = 0.0;
    let mut failed = Vec::new();
    let mut check = |name: &str, shape: &[usize], out_shape: &[usize], positive: bool, f: &dyn Fn(&Tape, &Tensor) -> diffcore::Result<Tensor>, rng: &mut Rng| {
        for _ in 0..5 {
            let n: usize = shape.iter().product();
            let mut v = rng.normals(n);
            if positive {
                v.iter_mut().for_each(|x| *x = x.exp());
            }
            let point = Tensor::new(shape.to_vec(), v).unwrap();
            let proj = Tensor::new(out_shape.to_vec(), rng.normals(out_shape.iter().product())).unwrap();
            let report = check_gradient(|t, x| project(t, &f(t, x)?, &proj), &point, FD_STEP, FD_TOL).unwrap();
            worst = worst.max(report.max_rel_error);
            if !report.passed() {
                failed.push(name.to_string());
            }
        }
    };
    let other = Tensor::new(vec![3, 4], rng.normals(12)).unwrap();
    let pos = Tensor::new(vec![3, 4], rng.normals(12).into_iter().map(f64::exp).collect()).unwrap();
    let rhs = Tensor::new(vec![4, 2], rng.normals(8)).unwrap();
    let kernel = Tensor::new(vec![2, 3, 3], rng.normals(18)).unwrap();
    let signal = Tensor::new(vec![2, 2, 6], rng.normals(24)).unwrap();
    let side = Tensor::new(vec![3, 2], rng.normals(6)).unwrap();
    let s34 = [3usize, 4];
    check("add", &s34, &s34, false, &|t, x| t.add(x, &other), &mut rng);
    check("sub", &s34, &s34, false, &|t, x| t.sub(&other, x), &mut rng);
    check("mul", &s34, &s34, false, &|t, x| t.mul(x, &other), &mut rng);
    check("div", &s34, &s34, false, &|t, x| t.div(x, &pos), &mut rng);
    check("div_den", &s34, &s34, true, &|t, x| t.div(&other, x), &mut rng);
    check("scale", &s34, &s34, false, &|t, x| t.scale(x, -1.7), &mut rng);
    check("add_scalar", &s34, &s34, false, &|t, x| t.add_scalar(x, 0.3), &mut rng);
    check("relu", &s34, &s34, false, &|t, x| t.relu(x), &mut rng);
    check("tanh", &s34, &s34, false, &|t, x| t.tanh(x), &mut rng);
    check("softplus", &s34, &s34, false, &|t, x| t.softplus(x), &mut rng);
    check("exp", &s34, &s34, false, &|t, x| t.exp(x), &mut rng);
    check("log", &s34, &s34, true, &|t, x| t.log(x), &mut rng);
    check("neg", &s34, &s34, false, &|t, x| t.neg(x), &mut rng);
    check("square", &s34, &s34, false, &|t, x| t.square(x), &mut rng);
    check("matmul", &s34, &[3, 2], false, &|t, x| t.matmul(x, &rhs), &mut rng);
    check("transpose", &s34, &[4, 3], false, &|t, x| t.transpose(x), &mut rng);
    check("add_bias", &[4], &s34, false, &|t, x| t.add_bias(&other, x), &mut rng);
    check("repeat_rows", &[1, 4], &[5, 4], false, &|t, x| t.repeat_rows(x, 5), &mut rng);
    check("sum", &s34, &[4], false, &|t, x| t.sum(x, Some(0)), &mut rng);
    check("mean", &s34, &[3], false, &|t, x| t.mean(x, Some(1)), &mut rng);
    check("softmax", &s34, &s34, false, &|t, x| t.softmax(x, 1), &mut rng);
    check("conv1d_signal", &[2, 2, 6], &[2, 3, 6], false, &|t, x| t.conv1d(x, &kernel), &mut rng);
    check("conv1d_weights", &[2, 3, 3], &[2, 3, 6], false, &|t, x| t.conv1d(&signal, x), &mut rng);
    check("concat", &s34, &[3, 6], false, &|t, x| t.concat(&[x, &side], 1), &mut rng);
    check("reshape", &s34, &[2, 6], false, &|t, x| t.reshape(x, &[2, 6]), &mut rng);

    // channels 8, latent 8, feature slot 4: decoder signal length 4 + 8 + 4 = 16
    let cfg = ModelConfig {
        x_dim: 1,
        y_dim: 1,
        decoder: DecoderKind::Npode,
        feature_width: 4,
        latent_dim: 8,
        encoder_layers: 3,
        heads: 2,
        channels: 8,
        mlp_layers: 3,
        solver: OdeSolverConfig { d_start: 0.0, d_end: 0.1, step: 0.05 },
    };
    let mut model = NpModel::init(cfg, &mut rng).unwrap();
    let biases: Vec<String> = model.params.iter().filter(|(_, t)| t.rank() == 1).map(|(n, _)| n.to_string()).collect();
    for name in &biases {
        let n = model.params.get(name).unwrap().len();
        model.params.replace(name, Tensor::vector(rng.normals(n).into_iter().map(|v| 0.2 * v).collect())).unwrap();
    }
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..7).map(|i| (vec![i as f64 * 0.5 - 1.5], vec![(i as f64).sin()])).collect();
    let ds = npode::data::Dataset::from_rows(&rows, npode::data::Provenance::Csv).unwrap();
    let (ctx, tgt) = (ds.select(&[0, 2, 4, 6]), ds.select(&[1, 3, 5]));
    let tc = TrainConfig::default();
    let mut elbo_worst: f64 = 0.0;
    for (name, t) in model.params.iter() {
        let report = check_gradient(
            |tape, x| {
                let mut p = model.params.clone();
                p.replace(name, x.clone()).unwrap();
                Ok(elbo_loss(tape, &model, &p, &ctx, &tgt, &mut Rng::seed_from(5), &tc).unwrap().loss)
            },
            t,
            FD_STEP,
            FD_TOL,
        )
        .unwrap();
        elbo_worst = elbo_worst.max(report.max_rel_error);
        if !report.passed() {
            failed.push(format!("elbo:{name}"));
        }
    }
    failed.dedup();
    verdict(
        4,
        failed.is_empty(),
        &format!(
            "25 op checks max rel err {worst:.2e}; ELBO over {} parameter tensors max rel err {elbo_worst:.2e}{}",
            model.params.len(),
            if failed.is_empty() { String::new() } else { format!("; failing {failed:?}") }
        ),
    )
}

fn euler_error(h: f64) -> f64 {
    let tape = Tape::new();
    let a_t = Tensor::from_rows(&[vec![-0.1, 1.0], vec![-1.0, -0.1]]).unwrap();
    let cfg = OdeSolverConfig { d_start: 0.0, d_end: 1.0, step: h };
    let y0 = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
    let y = euler_integrate(&tape, &y0, &cfg, |t, s, _| Ok(t.matmul(s, &a_t)?)).unwrap();
    let exact = spiral_flow(1.0, [1.0, 0.0]);
    (y.values()[0] - exact[0]).hypot(y.values()[1] - exact[1])
}

fn criterion_5() -> bool {
    let ratios: Vec<f64> = [0.1, 0.05].iter().map(|&h| euler_error(h) / euler_error(h / 2.0)).collect();
    let pass = ratios.iter().all(|r| (1.6..=2.4).contains(r));
    verdict(5, pass, &format!("error ratios h=0.1: {:.4}, h=0.05: {:.4}", ratios[0], ratios[1]))
}

fn log_density(z: f64, m: f64, s: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI).ln() - s.ln() - (z - m) * (z - m) / (2.0 * s * s)
}

fn criterion_6() -> bool {
    let tape = Tape::new();
    let mut rng = Rng::seed_from(6);
    let mut inside = 0;
    let mut worst_z: f64 = 0.0;
    for _ in 0..20 {
        let dim = 1 + rng.below(4);
        let (mq, mp) = (rng.normals(dim), rng.normals(dim));
        let sq: Vec<f64> = (0..dim).map(|_| rng.uniform_range(0.3, 2.0)).collect();
        let sp: Vec<f64> = (0..dim).map(|_| rng.uniform_range(0.3, 2.0)).collect();
        let q = LatentDistribution { mean: Tensor::vector(mq.clone()), std: Tensor::vector(sq.clone()) };
        let p = LatentDistribution { mean: Tensor::vector(mp.clone()), std: Tensor::vector(sp.clone()) };
        let closed = kl_divergence(&tape, &q, &p).unwrap().item().unwrap();
        let n = 100_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..n {
            let mut term = 0.0;
            for j in 0..dim {
                let z = mq[j] + sq[j] * rng.normal();
                term += log_density(z, mq[j], sq[j]) - log_density(z, mp[j], sp[j]);
            }
            sum += term;
            sum_sq += term * term;
        }
        let m = sum / n as f64;
        let se = ((sum_sq / n as f64 - m * m) / n as f64).sqrt();
        let z = (closed - m).abs() / se;
        worst_z = worst_z.max(z);
        if z < 3.0 {
            inside += 1;
        }
    }
    let unit = LatentDistribution { mean: Tensor::vector(vec![1.0]), std: Tensor::vector(vec![1.0]) };
    let zero = LatentDistribution { mean: Tensor::vector(vec![0.0]), std: Tensor::vector(vec![1.0]) };
    let half = kl_divergence(&tape, &unit, &zero).unwrap().item().unwrap();
    verdict(6, inside == 20 && half == 0.5, &format!("{inside}/20 pairs within 3 SE (worst {worst_z:.2} SE); KL(N(1,1)||N(0,1)) = {half}"))
}

fn criterion_7() -> bool {
    let mut rng = Rng::seed_from(7);
    let mut mc = ModelConfig::new(1, 2, DecoderKind::Npode);
    mc.feature_width = 16;
    mc.latent_dim = 16;
    mc.heads = 2;
    mc.channels = 8;
    let model = NpModel::init(mc, &mut rng).unwrap();
    let ds = generate_spiral(&SpiralConfig { n_points: 40, ..Default::default() }).unwrap().normalize().unwrap();
    let queries = Tensor::from_rows(&[vec![-1.3], vec![0.2], vec![1.7]]).unwrap();
    let enc = model.config.encoder();
    let tape = Tape::new();
    let base_s = encode_stochastic(&tape, &model.params, &enc, &ds.xy_tensor()).unwrap();
    let base_r = encode_deterministic(&tape, &model.params, &enc, &ds.xy_tensor()).unwrap();
    let base_a = cross_attention(&tape, &model.params, &enc, &ds.x_tensor(), &base_r, &queries).unwrap();
    let base_p = training::predict(&model, &ds, &queries, 1, &mut Rng::seed_from(1)).unwrap();
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
    let mut worst = [0.0f64; 3];
    for _ in 0..20 {
        let perm = rng.permutation(ds.len());
        let p = ds.select(&perm);
        let tape = Tape::new();
        let s = encode_stochastic(&tape, &model.params, &enc, &p.xy_tensor()).unwrap();
        let r = encode_deterministic(&tape, &model.params, &enc, &p.xy_tensor()).unwrap();
        let a = cross_attention(&tape, &model.params, &enc, &p.x_tensor(), &r, &queries).unwrap();
        let pr = training::predict(&model, &p, &queries, 1, &mut Rng::seed_from(1)).unwrap();
        worst[0] = worst[0].max(diff(s.mean.values(), base_s.mean.values())).max(diff(s.std.values(), base_s.std.values()));
        worst[1] = worst[1].max(diff(a.values(), base_a.values()));
        worst[2] = worst[2].max(diff(&pr.mean, &base_p.mean)).max(diff(&pr.std, &base_p.std));
    }
    verdict(
        7,
        worst.iter().all(|&w| w < 1e-10),
        &format!("max deviation over 20 permutations: stochastic encoder {:.1e}, attention {:.1e}, predict {:.1e}", worst[0], worst[1], worst[2]),
    )
}

fn criterion_8() -> bool {
    let train = generate_synthetic6(80, 0.05, 8).unwrap().normalize().unwrap();
    let grid = GpGrid { noises: vec![1e-10], ..Default::default() };
    let gp = gp_fit(train.x(), train.y(), 6, KernelKind::Matern, &grid).unwrap();
    let (m, _) = gp.predict(train.x()).unwrap();
    let interp = m.iter().zip(train.y()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let mut cover = Vec::new();
    for kind in ["gp-matern", "gp-poly", "npode"] {
        let cfg = run_config(&[
            ("data.source", "synthetic6".into()),
            ("synthetic6.rows", "286".into()),
            ("split.test_count", "200".into()),
            ("model.kind", kind.into()),
            ("eval.ci", CiKind::Ci95.as_str().into()),
        ]);
        let (_, _, c, _) = train_and_score(&cfg, &scratch(&format!("coverage_{kind}")));
        cover.push((kind, c));
    }
    let ok = interp <= 1e-4 && cover.iter().all(|(_, c)| (0.85..=0.99).contains(c));
    let cs: Vec<String> = cover.iter().map(|(k, c)| format!("{k} {c:.3}")).collect();
    verdict(8, ok, &format!("interpolation max error {interp:.2e} (jitter {:.0e}); ci95 coverage on 200 points: {}", gp.jitter, cs.join(", ")))
}

fn criterion_9() -> bool {
    let cfg = run_config(&[("train.iterations", "100".into()), ("model.kind", "npode".into())]);
    let (a, b) = (scratch("determinism_a"), scratch("determinism_b"));
    commands::train(&cfg, &a).unwrap();
    commands::train(&cfg, &b).unwrap();
    let same = std::fs::read(a.join(commands::CHECKPOINT_FILE)).unwrap() == std::fs::read(b.join(commands::CHECKPOINT_FILE)).unwrap();

    let ds = generate_spiral(&SpiralConfig::default()).unwrap();
    let norm = ds.normalize().unwrap();
    let out = training::train(&norm, &cfg.model(1, 2, DecoderKind::Npode).unwrap(), &cfg.train().unwrap()).unwrap();
    let path = a.join("roundtrip.json");
    out.checkpoint.save(&path).unwrap();
    let restored = Checkpoint::load(&path).unwrap().restore().unwrap();
    let x = Tensor::new(vec![64, 1], (0..64).map(|i| -2.0 + i as f64 / 16.0).collect()).unwrap();
    let p1 = training::predict(&out.model, &norm, &x, 1, &mut Rng::seed_from(9)).unwrap();
    let p2 = training::predict(&restored, &norm, &x, 1, &mut Rng::seed_from(9)).unwrap();
    let ckpt_err = p1.mean.iter().chain(&p1.std).zip(p2.mean.iter().chain(&p2.std)).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);

    let mut norm_err: f64 = 0.0;
    let mut csv_ok = true;
    for table in [ds.clone(), generate_synthetic6(106, 0.05, 9).unwrap()] {
        let back = table.normalize().unwrap().denormalized().unwrap();
        for (u, v) in back.x().iter().chain(back.y()).zip(table.x().iter().chain(table.y())) {
            norm_err = norm_err.max((u - v).abs() / v.abs().max(1.0));
        }
        let p = a.join("roundtrip.csv");
        write_csv(&table, &p).unwrap();
        let read = load_csv(&p).unwrap();
        csv_ok &= read.x() == table.x() && read.y() == table.y();
    }
    let pass = same && ckpt_err < 1e-12 && norm_err < 1e-12 && csv_ok;
    verdict(
        9,
        pass,
        &format!(
            "checkpoints byte-identical: {same}; reload prediction change {ckpt_err:.1e}; normalize round trip {norm_err:.1e}; CSV lossless: {csv_ok}"
        ),
    )
}

fn main() {
    println!("acceptance run, {} training iterations per network", iterations());
    let only: Option<Vec<usize>> = std::env::var("NPODE_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [fn() -> bool; 9] =
        [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8, criterion_9];
    let mut passed = 0;
    let mut ran = 0;
    for (i, c) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            continue;
        }
        let start = Instant::now();
        ran += 1;
        if c() {
            passed += 1;
        }
        println!("  ({:.1}s)", start.elapsed().as_secs_f64());
    }
    println!("acceptance: {passed}/{ran} criteria passed");
}
