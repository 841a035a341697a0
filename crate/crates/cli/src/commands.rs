//! One function per subcommand. Each reads and writes files inside a run
//! directory so the binary stays a thin argument parser.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use diffcore::{Rng, Tensor};
use npode::baselines::{gp_fit_columns, gp_predict_columns, GpFile, GpGrid, GpModel};
use npode::data::{
    generate_spiral, generate_synthetic6, load_csv, spiral_flow, split_train_test, write_csv, Dataset,
    DatasetMetadata, Normalization, Provenance,
};
use npode::decoders::{count_parameters, ParamReport};
use npode::metrics::{CiKind, EvalReport};
use npode::training::{self, trace_csv, Checkpoint};
use npode::{DecoderKind, ModelConfig, NpModel, PredictiveDistribution};

use crate::config::{ModelKind, RunConfig, Source};
use crate::plot;
use crate::CliError;

pub const CONFIG_FILE: &str = "config.txt";
pub const DATA_FILE: &str = "data.csv";
pub const METADATA_FILE: &str = "data.meta.json";
pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";
pub const REFERENCE_FILE: &str = "reference.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const GP_FILE: &str = "gp.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const EVAL_NORMALIZED_FILE: &str = "eval_normalized.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

const REFERENCE_POINTS: usize = 1000;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Dataset named by the config, generated or read from disk.
pub fn build_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    Ok(match cfg.source()? {
        Source::Spiral => generate_spiral(&cfg.spiral()?)?,
        Source::Synthetic6 => {
            let (rows, noise) = cfg.synthetic6()?;
            generate_synthetic6(rows, noise, cfg.data_seed()?)?
        }
        Source::Csv(path) => load_csv(&path)?,
    })
}

#[derive(Debug, Clone)]
pub struct GenerateSummary {
    pub path: PathBuf,
    pub rows: usize,
    pub x_dim: usize,
    pub y_dim: usize,
}

pub fn generate(cfg: &RunConfig, out: &Path) -> Result<GenerateSummary, CliError> {
    let source = cfg.source()?;
    if let Source::Csv(_) = source {
        return Err(CliError::Config("generate needs data.source = spiral or synthetic6".into()));
    }
    let ds = build_dataset(cfg)?;
    ensure_dir(out)?;
    let path = out.join(DATA_FILE);
    write_csv(&ds, &path)?;
    let section = match source {
        Source::Spiral => "spiral.",
        _ => "synthetic6.",
    };
    let generator: BTreeMap<String, String> = cfg
        .to_text()
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .filter(|(k, _)| k.starts_with(section))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    DatasetMetadata::describe(&ds, Some(cfg.data_seed()?), generator).write(&out.join(METADATA_FILE))?;
    write_text(&out.join(CONFIG_FILE), &cfg.to_text())?;
    Ok(GenerateSummary { path, rows: ds.len(), x_dim: ds.x_dim(), y_dim: ds.y_dim() })
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub kind: ModelKind,
    pub artifact: PathBuf,
    pub train_rows: usize,
    pub test_rows: usize,
    pub final_loss: Option<f64>,
    pub seconds: f64,
}

/// Noiseless spiral sampled densely over the configured range.
fn spiral_reference(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let sc = cfg.spiral()?;
    let (x0, x1) = sc.x_range;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..REFERENCE_POINTS)
        .map(|i| {
            let x = x0 + (x1 - x0) * i as f64 / (REFERENCE_POINTS - 1) as f64;
            let f = spiral_flow(x, sc.y0);
            (vec![x], vec![sc.scale * f[0], sc.scale * f[1]])
        })
        .collect();
    Ok(Dataset::from_rows(&rows, Provenance::Spiral)?)
}

/// Split, normalize (ranges from the whole table) and fit the configured
/// model, writing every artifact into `out`.
pub fn train(cfg: &RunConfig, out: &Path) -> Result<TrainSummary, CliError> {
    let kind = cfg.model_kind()?;
    let spec = cfg.split()?;
    let tc = cfg.train()?;
    let ds = build_dataset(cfg)?;
    let (train_raw, test_raw, nested) = split_train_test(&ds, &spec)?;
    let train_raw = nested.into_iter().last().unwrap_or(train_raw);
    let norm = Normalization::fit(&ds)?;
    let train = train_raw.normalize_with(&norm)?;

    ensure_dir(out)?;
    write_csv(&train_raw, &out.join(TRAIN_FILE))?;
    write_csv(&test_raw, &out.join(TEST_FILE))?;
    if cfg.source()? == Source::Spiral {
        write_csv(&spiral_reference(cfg)?, &out.join(REFERENCE_FILE))?;
    }
    write_text(&out.join(CONFIG_FILE), &cfg.to_text())?;

    let start = Instant::now();
    let (artifact, final_loss) = match (kind.decoder(), kind.kernel()) {
        (Some(decoder), _) => {
            let mc = cfg.model(ds.x_dim(), ds.y_dim(), decoder)?;
            let outcome = training::train(&train, &mc, &tc)?;
            let path = out.join(CHECKPOINT_FILE);
            outcome.checkpoint.save(&path)?;
            write_text(&out.join(TRACE_FILE), &trace_csv(&outcome.trace))?;
            (path, outcome.checkpoint.final_loss)
        }
        (None, Some(kernel)) => {
            let models = gp_fit_columns(train.x(), train.y(), train.x_dim(), train.y_dim(), kernel, &GpGrid::default())?;
            let path = out.join(GP_FILE);
            GpFile::new(kernel, Some(norm), &models).save(&path)?;
            (path, None)
        }
        (None, None) => unreachable!("every model kind is a decoder or a kernel"),
    };
    Ok(TrainSummary {
        kind,
        artifact,
        train_rows: train_raw.len(),
        test_rows: test_raw.len(),
        final_loss,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// A fitted model ready to predict in normalized coordinates.
pub enum Predictor {
    Np {
        model: NpModel,
        context: Dataset,
        samples: usize,
        seed: u64,
    },
    Gp(Vec<GpModel>),
}

impl Predictor {
    /// Loads the artifact written by [`train`] into `run`.
    pub fn load(run: &Path, cfg: &RunConfig) -> Result<(Self, Normalization), CliError> {
        let kind = cfg.model_kind()?;
        if kind.decoder().is_some() {
            let ckpt = Checkpoint::load(&run.join(CHECKPOINT_FILE))?;
            let norm = ckpt
                .normalization
                .clone()
                .ok_or_else(|| CliError::Data("checkpoint carries no normalization state".into()))?;
            let context = load_csv(&run.join(TRAIN_FILE))?.normalize_with(&norm)?;
            let model = ckpt.restore()?;
            let tc = cfg.train()?;
            let p = Predictor::Np { model, context, samples: tc.latent_samples_predict, seed: tc.seed };
            Ok((p, norm))
        } else {
            let file = GpFile::load(&run.join(GP_FILE))?;
            let norm = file
                .normalization
                .clone()
                .ok_or_else(|| CliError::Data("GP file carries no normalization state".into()))?;
            Ok((Predictor::Gp(file.restore()?), norm))
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            Predictor::Np { model, .. } => (model.config.x_dim, model.config.y_dim),
            Predictor::Gp(models) => (models[0].x_dim(), models.len()),
        }
    }

    /// Predictive distribution at normalized rows `x`.
    pub fn predict(&self, x: &[f64]) -> Result<PredictiveDistribution, CliError> {
        let (m, _) = self.dims();
        match self {
            Predictor::Np { model, context, samples, seed } => {
                let t = Tensor::new(vec![x.len() / m, m], x.to_vec()).map_err(|e| CliError::Data(e.to_string()))?;
                Ok(training::predict(model, context, &t, *samples, &mut Rng::seed_from(*seed))?)
            }
            Predictor::Gp(models) => Ok(gp_predict_columns(models, x)?),
        }
    }

    fn check(&self, x_dim: usize, y_dim: Option<usize>, what: &str) -> Result<(), CliError> {
        let (m, p) = self.dims();
        if x_dim != m || y_dim.is_some_and(|q| q != p) {
            let found = y_dim.map_or(format!("{x_dim} inputs"), |q| format!("{x_dim}→{q}"));
            return Err(CliError::Data(format!("{what}: model expects {m}→{p} columns, found {found}")));
        }
        Ok(())
    }
}

/// Maps a normalized distribution back to physical units.
pub fn denormalize_distribution(dist: &PredictiveDistribution, norm: &Normalization) -> PredictiveDistribution {
    let p = dist.y_dim;
    let mean = dist.mean.iter().enumerate().map(|(i, &v)| norm.outputs[i % p].inverse(v)).collect();
    let std = dist.std.iter().enumerate().map(|(i, &s)| norm.outputs[i % p].scale_std(s)).collect();
    PredictiveDistribution { y_dim: p, mean, std }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub physical: EvalReport,
    pub normalized: EvalReport,
    /// Physical-unit RMSE when the training rows themselves are scored.
    pub train_rmse: f64,
    pub rows: usize,
}

fn eval_csv(ds: &Dataset, report: &EvalReport) -> String {
    let (m, p) = (ds.x_dim(), ds.y_dim());
    let mut header: Vec<String> = (1..=m).map(|j| format!("x{j}")).collect();
    for j in 1..=p {
        for col in ["true", "mean", "std", "low", "high"] {
            header.push(format!("y{j}_{col}"));
        }
    }
    header.push("covered".into());
    let mut out = header.join(",");
    out.push('\n');
    for (i, r) in report.rows.iter().enumerate() {
        let mut fields: Vec<String> = ds.x_row(i).iter().map(|v| format!("{v:?}")).collect();
        for j in 0..p {
            for v in [r.y_true[j], r.mean[j], r.std[j], r.low[j], r.high[j]] {
                fields.push(format!("{v:?}"));
            }
        }
        fields.push(r.covered.to_string());
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Scores the run's model on `test` (default: the run's held-out rows),
/// using the training rows as context.
pub fn evaluate(run: &Path, cfg: &RunConfig, test: Option<&Path>, ci: CiKind) -> Result<Evaluation, CliError> {
    let (predictor, norm) = Predictor::load(run, cfg)?;
    let test_path = test.map_or_else(|| run.join(TEST_FILE), Path::to_path_buf);
    let test_raw = load_csv(&test_path)?;
    predictor.check(test_raw.x_dim(), Some(test_raw.y_dim()), "test data")?;
    let test = test_raw.normalize_with(&norm)?;
    let dist = predictor.predict(test.x())?;
    let physical = EvalReport::build(test_raw.y(), &denormalize_distribution(&dist, &norm), ci)?;
    let normalized = EvalReport::build(test.y(), &dist, ci)?;

    let train_raw = load_csv(&run.join(TRAIN_FILE))?;
    let train_dist = predictor.predict(train_raw.normalize_with(&norm)?.x())?;
    let train_rmse = npode::metrics::rmse(train_raw.y(), &denormalize_distribution(&train_dist, &norm).mean)?;

    write_text(&run.join(EVAL_FILE), &eval_csv(&test_raw, &physical))?;
    write_text(&run.join(EVAL_NORMALIZED_FILE), &eval_csv(&test, &normalized))?;
    let mut summary = String::new();
    let _ = writeln!(summary, "model = {}", cfg.get("model.kind"));
    let _ = writeln!(summary, "rows = {}", test_raw.len());
    let _ = writeln!(summary, "physical: {}", physical.summary_line());
    let _ = writeln!(summary, "normalized: {}", normalized.summary_line());
    let _ = writeln!(summary, "train_rmse = {:.6}", train_rmse);
    write_text(&run.join(SUMMARY_FILE), &summary)?;
    Ok(Evaluation { physical, normalized, train_rmse, rows: test_raw.len() })
}

/// Reads `x1..xm` columns from a headed CSV; other columns are ignored.
pub fn read_inputs(path: &Path, x_dim: usize) -> Result<Vec<f64>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let headers = reader.headers().map_err(|e| CliError::Data(format!("{}: header: {e}", path.display())))?.clone();
    let positions = (1..=x_dim)
        .map(|j| {
            let name = format!("x{j}");
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| CliError::Data(format!("{}: header: missing column {name}", path.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut x = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Data(format!("{}: row {}: {e}", path.display(), r + 1)))?;
        for (j, &pos) in positions.iter().enumerate() {
            let raw = record.get(pos).unwrap_or("").trim();
            let v: f64 = raw.parse().map_err(|_| {
                CliError::Data(format!("{}: row {}: non-numeric value {raw:?} for x{}", path.display(), r + 1, j + 1))
            })?;
            if !v.is_finite() {
                return Err(CliError::Data(format!("{}: row {}: non-finite x{}", path.display(), r + 1, j + 1)));
            }
            x.push(v);
        }
    }
    if x.is_empty() {
        return Err(CliError::Data(format!("{}: no rows", path.display())));
    }
    Ok(x)
}

/// Physical-unit predictions for the rows of `input`, written as CSV.
pub fn predict(run: &Path, cfg: &RunConfig, input: &Path, output: &Path) -> Result<usize, CliError> {
    let (predictor, norm) = Predictor::load(run, cfg)?;
    let (m, p) = predictor.dims();
    let x = read_inputs(input, m)?;
    predictor.check(m, None, "input")?;
    let dist = denormalize_distribution(&predictor.predict(&norm.normalize_inputs(&x))?, &norm);
    let mut header: Vec<String> = (1..=m).map(|j| format!("x{j}")).collect();
    for j in 1..=p {
        header.push(format!("y{j}_mean"));
        header.push(format!("y{j}_std"));
    }
    let mut out = header.join(",");
    out.push('\n');
    for (i, row) in x.chunks(m).enumerate() {
        let mut fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        for j in 0..p {
            fields.push(format!("{:?}", dist.mean[i * p + j]));
            fields.push(format!("{:?}", dist.std[i * p + j]));
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    write_text(output, &out)?;
    Ok(x.len() / m)
}

/// Draws the run's evaluation; returns the files written.
pub fn plot(run: &Path, reference: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let table = plot::EvalTable::read(&run.join(EVAL_FILE))?;
    let train = load_csv(&run.join(TRAIN_FILE)).ok();
    let reference = match reference {
        Some(p) => Some(load_csv(p)?),
        None => load_csv(&run.join(REFERENCE_FILE)).ok(),
    };
    let mut written = Vec::new();
    for j in 0..table.y_dim {
        let svg = if table.x_dim == 1 {
            plot::curve_svg(&table, j, train.as_ref(), reference.as_ref())
        } else {
            plot::interval_svg(&table, j)
        };
        let path = run.join(format!("plot_y{}.svg", j + 1));
        write_text(&path, &svg)?;
        written.push(path);
    }
    let path = run.join("plot_series.csv");
    write_text(&path, &plot::series_csv(&table))?;
    written.push(path);
    Ok(written)
}

/// Decoder parameter table at the configured widths.
pub fn params(cfg: &RunConfig, decoder: DecoderKind) -> Result<ParamReport, CliError> {
    let mc: ModelConfig = cfg.model(1, 1, decoder)?;
    let dc = mc.decoder_config();
    let mut params = npode::nn::ParamSet::new();
    dc.init(&mut params, &mut Rng::seed_from(0));
    Ok(count_parameters(&params, &dc)?)
}
