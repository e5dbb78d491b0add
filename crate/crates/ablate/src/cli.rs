//! The `ablate` command line.
//!
//! Settings resolve as command-line flag, then the `--config` JSON file
//! (keys are the long flag names with `_` for `-`), then built-in defaults.
//! Exit codes: 0 success, 1 usage, 2 data or validation, 3 runtime.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ablate_core::data::{evaluate, normalize};
use ablate_core::stats::describe;
use ablate_core::{
    desk_architecture, synth_dataset, train, Architecture, Dataset, Network, SynthSpec, TrainConfig, Treatment,
};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, ErrorClass, Result};
use crate::harness::{self, CellKey, Format, SweepConfig, SweepResult};
use crate::{container, idx};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub const WORKERS_ENV: &str = "ABLATE_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "ablate", version, about = "Perturbation sweeps over small convolutional networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network and write it as a model container.
    Train(TrainArgs),
    /// Print the top-k accuracy of a model.
    Eval(EvalArgs),
    /// Print descriptive statistics for every parameter tensor.
    Stats(StatsArgs),
    /// Run a perturbation sweep.
    Sweep(SweepArgs),
    /// Wilcoxon rank-sum test between two cells of a sweep result.
    Compare(CompareArgs),
    /// Write per-layer (magnitude, mean, std) series from a sweep result.
    Plotdata(PlotdataArgs),
}

/// Where images come from: an IDX pair, or the synthetic generator.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataArgs {
    /// IDX image file (requires --labels).
    #[arg(long, requires = "labels")]
    pub images: Option<PathBuf>,
    /// IDX label file.
    #[arg(long, requires = "images")]
    pub labels: Option<PathBuf>,
    /// Synthetic data: number of classes [default: 10].
    #[arg(long)]
    pub classes: Option<usize>,
    /// Synthetic data: training images per class [default: 200].
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Synthetic data: test images per class [default: 50].
    #[arg(long)]
    pub test_per_class: Option<usize>,
    /// Synthetic data: image side length [default: 16].
    #[arg(long)]
    pub size: Option<usize>,
    /// Synthetic data: pixel noise standard deviation [default: 0.3].
    #[arg(long)]
    pub noise: Option<f32>,
    /// Synthetic data: generator seed [default: 0].
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Synthetic data: which split to use, train or test [default: test].
    #[arg(long)]
    pub split: Option<String>,
    /// Normalize pixels as (x - mean) / std.
    #[arg(long, requires = "norm_std")]
    pub norm_mean: Option<f32>,
    #[arg(long, requires = "norm_mean")]
    pub norm_std: Option<f32>,
}

impl DataArgs {
    fn synth_spec(&self) -> SynthSpec {
        let d = SynthSpec::default();
        SynthSpec {
            classes: self.classes.unwrap_or(d.classes),
            per_class: self.per_class.unwrap_or(d.per_class),
            test_per_class: self.test_per_class.unwrap_or(d.test_per_class),
            size: self.size.unwrap_or(d.size),
            noise: self.noise.unwrap_or(d.noise),
        }
    }

    /// Training and held-out sets. IDX input has no held-out part.
    fn load_both(&self) -> Result<(Dataset, Option<Dataset>)> {
        let (train, test) = match (&self.images, &self.labels) {
            (Some(i), Some(l)) => (idx::load(i, l)?, None),
            _ => {
                let split = synth_dataset(&self.synth_spec(), self.data_seed.unwrap_or(0))?;
                (split.train, Some(split.test))
            }
        };
        Ok((self.normalized(train)?, test.map(|t| self.normalized(t)).transpose()?))
    }

    fn load_eval(&self) -> Result<Dataset> {
        let (train, test) = self.load_both()?;
        match (self.split.as_deref().unwrap_or("test"), test) {
            ("train", _) => Ok(train),
            ("test", Some(test)) => Ok(test),
            ("test", None) => Ok(train),
            (other, _) => Err(Error::Config(format!("unknown split `{}`, expected train or test", other))),
        }
    }

    fn normalized(&self, d: Dataset) -> Result<Dataset> {
        match (self.norm_mean, self.norm_std) {
            (Some(m), Some(s)) => Ok(normalize(&d, m, s)?),
            _ => Ok(d),
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    /// JSON settings file.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output model container.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-epoch history CSV [default: <out>.history.csv].
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Architecture JSON; the built-in desk network when absent.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// [default: 5]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 16]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// [default: 0.05]
    #[arg(long)]
    pub learning_rate: Option<f32>,
    /// [default: 0.9]
    #[arg(long)]
    pub momentum: Option<f32>,
    /// Seed for initialization, sample order and dropout [default: 1].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Model container.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// [default: 5]
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// table or csv [default: table]
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// synapse_knockout, node_knockout or gaussian; repeatable [default: synapse_knockout].
    #[arg(long = "treatment", value_delimiter = ',')]
    pub treatments: Vec<String>,
    /// Layer to perturb; repeatable [default: every parameterized layer].
    #[arg(long = "layer", value_delimiter = ',')]
    pub layers: Vec<String>,
    /// Comma-separated magnitudes (proportions, or multiples of σ for gaussian).
    #[arg(long, value_delimiter = ',')]
    pub magnitudes: Vec<f64>,
    /// [default: 5]
    #[arg(long)]
    pub trials: Option<usize>,
    /// [default: 5]
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Base seed from which every trial seed is derived [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Evaluate on N images of a seeded shuffle.
    #[arg(long)]
    pub eval_subset: Option<usize>,
    /// Worker threads [default: $ABLATE_WORKERS, else 1].
    #[arg(long)]
    pub workers: Option<usize>,
    /// Write trial records as CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Write the full result as JSON here.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Sweep result, JSON or CSV.
    #[arg(long)]
    pub result: Option<PathBuf>,
    /// First cell as treatment:layer:magnitude.
    #[arg(long)]
    pub a: Option<String>,
    /// Second cell as treatment:layer:magnitude.
    #[arg(long)]
    pub b: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotdataArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Sweep result, JSON or CSV.
    #[arg(long)]
    pub result: Option<PathBuf>,
    /// Directory receiving one CSV per (treatment, layer).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Overlays explicitly given flags on the config file. Flags that were not
/// given serialize as null or an empty list and leave the file value alone.
fn resolve<T: Serialize + DeserializeOwned>(flags: &T, config: Option<&Path>) -> Result<T> {
    let Some(path) = config else {
        return Ok(serde_json::from_value(serde_json::to_value(flags)?)?);
    };
    let text = fs::read(path).map_err(|e| Error::read(path, e))?;
    let mut merged: Value = serde_json::from_slice(&text)?;
    if !merged.is_object() {
        return Err(Error::Config(format!("{} must hold a JSON object", path.display())));
    }
    if let Value::Object(given) = serde_json::to_value(flags)? {
        for (k, v) in given {
            let unset = v.is_null() || v.as_array().is_some_and(|a| a.is_empty());
            if !unset {
                merged[k] = v;
            }
        }
    }
    serde_json::from_value(merged).map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))
}

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T> {
    value.as_ref().ok_or_else(|| Error::MissingFlag(flag.to_string()))
}

pub fn parse_cell(s: &str) -> Result<CellKey> {
    let bad = || Error::Config(format!("cell `{}` is not treatment:layer:magnitude", s));
    let mut parts = s.split(':');
    let (Some(t), Some(l), Some(m), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(bad());
    };
    let treatment = Treatment::parse(t).ok_or_else(bad)?;
    let magnitude = m.parse().map_err(|_| bad())?;
    Ok(CellKey::new(treatment, l, magnitude))
}

fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let a = resolve(args, args.config.as_deref())?;
    let path = required(&a.out, "out")?;
    let (train_set, test_set) = a.data.load_both()?;
    let arch: Architecture = match &a.manifest {
        Some(p) => serde_json::from_slice(&fs::read(p).map_err(|e| Error::read(p, e))?)?,
        None => {
            let [_, h, _] = train_set.image_shape();
            desk_architecture(h, train_set.class_count())
        }
    };
    let d = TrainConfig::default();
    let config = TrainConfig {
        epochs: a.epochs.unwrap_or(d.epochs),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        learning_rate: a.learning_rate.unwrap_or(d.learning_rate),
        momentum: a.momentum.unwrap_or(d.momentum),
        seed: a.seed.unwrap_or(d.seed),
    };
    let initial = Network::build(arch, config.seed)?;
    let (net, history) = train(&initial, &train_set, &config)?;
    container::save(&net, path)?;

    let history_path = a.history.clone().unwrap_or_else(|| {
        let mut p = path.clone().into_os_string();
        p.push(".history.csv");
        p.into()
    });
    let mut w = csv::Writer::from_path(&history_path)?;
    w.write_record(["epoch", "loss", "accuracy"])?;
    for e in &history {
        w.write_record([e.epoch.to_string(), e.loss.to_string(), e.accuracy.to_string()])?;
        writeln!(out, "epoch {} loss {:.4} accuracy {:.4}", e.epoch, e.loss, e.accuracy).ok();
    }
    w.flush().map_err(|e| Error::write(&history_path, e))?;
    writeln!(out, "train top-1 {:.4}", evaluate(&net, &train_set, 1)?).ok();
    if let Some(test) = &test_set {
        writeln!(out, "test top-1 {:.4}", evaluate(&net, test, 1)?).ok();
    }
    writeln!(out, "wrote {}", path.display()).ok();
    Ok(())
}

fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let a = resolve(args, args.config.as_deref())?;
    let net = container::load(required(&a.model, "model")?)?;
    let data = a.data.load_eval()?;
    let k = a.top_k.unwrap_or(5);
    if k == 0 || k > net.class_count() {
        return Err(Error::Config(format!("top-k {} outside 1..={}", k, net.class_count())));
    }
    let acc = evaluate(&net, &data, k)?;
    writeln!(out, "top_k={} accuracy={} n_images={}", k, acc, data.len()).ok();
    Ok(())
}

fn stat_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.6}", x))
}

fn cmd_stats(args: &StatsArgs, out: &mut dyn Write) -> Result<()> {
    let a = resolve(args, args.config.as_deref())?;
    let net = container::load(required(&a.model, "model")?)?;
    let header = ["layer", "size", "mean", "median", "sigma", "min", "max", "kurtosis", "skew"];
    let mut rows = Vec::new();
    for (layer, p) in net.param_layers() {
        for (suffix, t) in [("W", &p.weights), ("b", &p.biases)] {
            let xs: Vec<f64> = t.data().iter().map(|&v| v as f64).collect();
            let mut row = vec![format!("{}_{}", layer.name, suffix), t.len().to_string()];
            match describe(&xs) {
                Ok(s) => {
                    for v in [Some(s.mean), Some(s.median), Some(s.sigma), Some(s.min), Some(s.max), s.kurtosis, s.skew] {
                        row.push(stat_cell(v));
                    }
                }
                Err(_) => row.extend(std::iter::repeat("-".to_string()).take(7)),
            }
            rows.push(row);
        }
    }
    match a.format.as_deref().unwrap_or("table") {
        "csv" => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(header)?;
            for r in &rows {
                w.write_record(r)?;
            }
            w.flush().map_err(|e| Error::Csv(e.into()))?;
        }
        "table" => {
            let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
            for r in &rows {
                for (w, c) in widths.iter_mut().zip(r) {
                    *w = (*w).max(c.len());
                }
            }
            let line = |cells: Vec<&str>| {
                cells.iter().zip(&widths).map(|(c, w)| format!("{:>w$}", c, w = w)).collect::<Vec<_>>().join("  ")
            };
            writeln!(out, "{}", line(header.to_vec())).ok();
            for r in &rows {
                writeln!(out, "{}", line(r.iter().map(String::as_str).collect())).ok();
            }
        }
        other => return Err(Error::Config(format!("unknown format `{}`, expected table or csv", other))),
    }
    Ok(())
}

fn workers_from_env() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{}=`{}` is not a worker count", WORKERS_ENV, v))),
        Err(_) => Ok(None),
    }
}

/// Resolves sweep flags, config file and environment into a harness config.
pub fn sweep_config(a: &SweepArgs, network: &Network) -> Result<SweepConfig> {
    let d = SweepConfig::default();
    let treatments = if a.treatments.is_empty() {
        d.treatments
    } else {
        a.treatments
            .iter()
            .map(|t| Treatment::parse(t).ok_or_else(|| Error::Config(format!("unknown treatment `{}`", t))))
            .collect::<Result<_>>()?
    };
    let layers = if a.layers.is_empty() {
        network.param_layers().map(|(l, _)| l.name.clone()).collect()
    } else {
        a.layers.clone()
    };
    let workers = match a.workers {
        Some(w) => w,
        None => workers_from_env()?.unwrap_or(d.workers),
    };
    Ok(SweepConfig {
        treatments,
        layers,
        magnitudes: a.magnitudes.clone(),
        trials: a.trials.unwrap_or(d.trials),
        top_k: a.top_k.unwrap_or(d.top_k),
        base_seed: a.seed.unwrap_or(d.base_seed),
        eval_subset: a.eval_subset,
        workers,
    })
}

fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> Result<()> {
    let a = resolve(args, args.config.as_deref())?;
    let net = container::load(required(&a.model, "model")?)?;
    let data = a.data.load_eval()?;
    let config = sweep_config(&a, &net)?;
    let result = harness::run_sweep(&net, &data, &config)?;
    if let Some(p) = &a.json {
        harness::export(&result, Format::Json, p)?;
    }
    match &a.csv {
        Some(p) => harness::export(&result, Format::Csv, p)?,
        None if a.json.is_none() => harness::write_csv(&result.records, &mut *out)?,
        None => {}
    }
    if a.csv.is_some() || a.json.is_some() {
        writeln!(out, "baseline top-{} {} over {} images", config.top_k, result.baseline, result.n_images).ok();
        for c in &result.cells {
            writeln!(out, "{} {} {} mean {:.4} std {:.4}", c.treatment, c.layer, c.magnitude, c.mean, c.std).ok();
        }
    }
    Ok(())
}

fn load_records(path: &Path) -> Result<Vec<harness::TrialRecord>> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        harness::read_csv(path)
    } else {
        let result: SweepResult = harness::read_json(path)?;
        Ok(result.records)
    }
}

fn cmd_compare(args: &CompareArgs, out: &mut dyn Write) -> Result<()> {
    let a = resolve(args, args.config.as_deref())?;
    let records = load_records(required(&a.result, "result")?)?;
    let ka = parse_cell(required(&a.a, "a")?)?;
    let kb = parse_cell(required(&a.b, "b")?)?;
    let t = harness::compare_cells(&records, &ka, &kb)?;
    let mean = |k: &CellKey| {
        let xs = harness::cell_accuracies(&records, k);
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    let method = match t.method {
        ablate_core::TestMethod::Exact => "exact",
        ablate_core::TestMethod::NormalApproximation => "normal",
    };
    writeln!(
        out,
        "a={} mean_a={} b={} mean_b={} statistic={} p_value={} method={}",
        ka,
        mean(&ka),
        kb,
        mean(&kb),
        t.statistic,
        t.p_value,
        method
    )
    .ok();
    Ok(())
}

fn cmd_plotdata(args: &PlotdataArgs, out: &mut dyn Write) -> Result<()> {
    let a = resolve(args, args.config.as_deref())?;
    let records = load_records(required(&a.result, "result")?)?;
    let dir = required(&a.out_dir, "out-dir")?;
    fs::create_dir_all(dir).map_err(|e| Error::write(dir, e))?;
    let cells = harness::aggregate(&records);
    for s in harness::series(&cells) {
        let path = dir.join(format!("{}_{}.csv", s.treatment, s.layer));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["magnitude", "mean", "std"])?;
        for (m, mean, std) in &s.points {
            w.write_record([m.to_string(), mean.to_string(), std.to_string()])?;
        }
        w.flush().map_err(|e| Error::write(&path, e))?;
        let fit = match harness::fit_falloff(&cells, s.treatment, &s.layer) {
            Ok(f) => format!(" slope {:.4} r2 {:.4}", f.slope, f.r_squared),
            Err(_) => String::new(),
        };
        writeln!(out, "{}{}", path.display(), fit).ok();
    }
    Ok(())
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Stats(a) => cmd_stats(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::Compare(a) => cmd_compare(a, out),
        Command::Plotdata(a) => cmd_plotdata(a, out),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
/// Failures print a single `error[<class>]: message` line to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            write!(out, "{}", e).ok();
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default().trim_start_matches("error: ");
            writeln!(err, "error[usage]: {}", first).ok();
            return EXIT_USAGE;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let (tag, code) = match e.class() {
                ErrorClass::Usage => ("usage", EXIT_USAGE),
                ErrorClass::Data => ("data", EXIT_DATA),
                ErrorClass::Runtime => ("runtime", EXIT_RUNTIME),
            };
            let msg = e.to_string().replace('\n', " ");
            writeln!(err, "error[{}]: {}", tag, msg).ok();
            code
        }
    }
}
