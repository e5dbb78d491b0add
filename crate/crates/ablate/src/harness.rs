//! Sweeps over treatment × layer × magnitude × trial grids.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ablate_core::data::evaluate;
use ablate_core::perturb::apply;
use ablate_core::rng::{LAYER_BITS, MAGNITUDE_BITS, TRIAL_BITS};
use ablate_core::stats::{linear_fit, mean_and_sample_std, wilcoxon_rank_sum};
use ablate_core::{derive_seed, Dataset, FitResult, Network, PerturbationSpec, Rng, TestResult, Treatment};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 9] =
    ["treatment", "layer", "magnitude", "trial", "seed", "top_k", "accuracy", "n_images", "wall_ms"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub treatments: Vec<Treatment>,
    /// Layers perturbed one at a time.
    pub layers: Vec<String>,
    pub magnitudes: Vec<f64>,
    pub trials: usize,
    pub top_k: usize,
    pub base_seed: u64,
    /// Evaluate on the first N images of a seeded shuffle instead of the full set.
    pub eval_subset: Option<usize>,
    pub workers: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            treatments: vec![Treatment::SynapseKnockout],
            layers: Vec::new(),
            magnitudes: Vec::new(),
            trials: 5,
            top_k: 5,
            base_seed: 0,
            eval_subset: None,
            workers: 1,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self, network: &Network) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.trials > 1 << TRIAL_BITS || self.magnitudes.len() > 1 << MAGNITUDE_BITS {
            return bad("grid too large for seed derivation".into());
        }
        if self.top_k == 0 || self.top_k > network.class_count() {
            return bad(format!("top_k {} outside 1..={}", self.top_k, network.class_count()));
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.eval_subset == Some(0) {
            return bad("eval_subset must be positive".into());
        }
        for layer in &self.layers {
            network.params(layer)?;
            if network.layer_index(layer).unwrap() >= 1 << LAYER_BITS {
                return bad(format!("layer `{}` index too large for seed derivation", layer));
            }
        }
        for t in &self.treatments {
            for &m in &self.magnitudes {
                t.validate_magnitude(m)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub treatment: Treatment,
    pub layer: String,
    pub magnitude: f64,
    pub trial: usize,
    pub seed: u64,
    pub top_k: usize,
    pub accuracy: f64,
    pub n_images: usize,
    pub wall_ms: f64,
}

/// Aggregate over the trials of one (treatment, layer, magnitude) cell.
/// `std` is the sample standard deviation (zero for a single trial).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub treatment: Treatment,
    pub layer: String,
    pub magnitude: f64,
    pub trials: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: SweepConfig,
    pub baseline: f64,
    pub n_images: usize,
    pub records: Vec<TrialRecord>,
    pub cells: Vec<CellSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub treatment: Treatment,
    pub layer: String,
    pub magnitude: f64,
}

impl CellKey {
    pub fn new(treatment: Treatment, layer: &str, magnitude: f64) -> Self {
        Self { treatment, layer: layer.to_string(), magnitude }
    }

    fn matches(&self, r: &TrialRecord) -> bool {
        r.treatment == self.treatment && r.layer == self.layer && r.magnitude == self.magnitude
    }
}

impl std::fmt::Display for CellKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.treatment, self.layer, self.magnitude)
    }
}

/// The evaluation set of a sweep: the full dataset, or the first `n` images
/// after a shuffle seeded by the base seed.
pub fn eval_set(dataset: &Dataset, config: &SweepConfig) -> Result<Dataset> {
    match config.eval_subset {
        Some(n) if n < dataset.len() => {
            let mut order: Vec<usize> = (0..dataset.len()).collect();
            Rng::from_seed(config.base_seed).partial_shuffle(&mut order, n);
            Ok(dataset.subset(&order[..n])?)
        }
        _ => Ok(dataset.clone()),
    }
}

struct Task {
    treatment: Treatment,
    layer: String,
    layer_index: usize,
    magnitude: f64,
    magnitude_index: usize,
    trial: usize,
}

fn tasks(network: &Network, config: &SweepConfig) -> Vec<Task> {
    let mut layers: Vec<(usize, &String)> =
        config.layers.iter().map(|l| (network.layer_index(l).unwrap(), l)).collect();
    layers.sort();
    layers.dedup();
    let mut treatments = config.treatments.clone();
    treatments.sort();
    treatments.dedup();
    let mut out = Vec::new();
    for &treatment in &treatments {
        for &(layer_index, layer) in &layers {
            for (magnitude_index, &magnitude) in config.magnitudes.iter().enumerate() {
                for trial in 0..config.trials {
                    out.push(Task { treatment, layer: layer.clone(), layer_index, magnitude, magnitude_index, trial });
                }
            }
        }
    }
    out
}

fn run_task(network: &Network, eval: &Dataset, config: &SweepConfig, task: &Task) -> Result<TrialRecord> {
    let start = Instant::now();
    let seed = derive_seed(config.base_seed, task.layer_index, task.magnitude_index, task.trial);
    let spec = PerturbationSpec { treatment: task.treatment, layer: task.layer.clone(), magnitude: task.magnitude, seed };
    let cell = |source| Error::Cell {
        context: format!("{} trial {}", CellKey::new(task.treatment, &task.layer, task.magnitude), task.trial),
        source,
    };
    let (perturbed, _) = apply(network, &spec).map_err(cell)?;
    let accuracy = evaluate(&perturbed, eval, config.top_k).map_err(cell)?;
    Ok(TrialRecord {
        treatment: task.treatment,
        layer: task.layer.clone(),
        magnitude: task.magnitude,
        trial: task.trial,
        seed,
        top_k: config.top_k,
        accuracy,
        n_images: eval.len(),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Runs every trial of the grid on a fresh perturbed copy of `network`.
///
/// Records come back in canonical order: treatment, layer position in the
/// network, magnitude position in the grid, trial. Trial seeds depend only
/// on those indices, so the output is independent of `workers`.
pub fn run_sweep(network: &Network, dataset: &Dataset, config: &SweepConfig) -> Result<SweepResult> {
    config.validate(network)?;
    if let Some(&l) = dataset.labels().iter().find(|&&l| l >= network.class_count()) {
        return Err(Error::Config(format!("label {} exceeds the network's {} classes", l, network.class_count())));
    }
    let eval = eval_set(dataset, config)?;
    let baseline = evaluate(network, &eval, config.top_k)?;
    let tasks = tasks(network, config);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {}", e)))?;
    let records: Vec<TrialRecord> = pool.install(|| {
        tasks.par_iter().map(|t| run_task(network, &eval, config, t)).collect::<Result<_>>()
    })?;
    Ok(SweepResult { config: config.clone(), baseline, n_images: eval.len(), cells: aggregate(&records), records })
}

/// Per-cell mean and sample std, in order of first appearance.
pub fn aggregate(records: &[TrialRecord]) -> Vec<CellSummary> {
    let mut cells: Vec<(CellKey, Vec<f64>)> = Vec::new();
    for r in records {
        match cells.iter_mut().find(|(k, _)| k.matches(r)) {
            Some((_, acc)) => acc.push(r.accuracy),
            None => cells.push((CellKey::new(r.treatment, &r.layer, r.magnitude), vec![r.accuracy])),
        }
    }
    cells
        .into_iter()
        .map(|(k, acc)| {
            let (mean, std) = mean_and_sample_std(&acc);
            CellSummary { treatment: k.treatment, layer: k.layer, magnitude: k.magnitude, trials: acc.len(), mean, std }
        })
        .collect()
}

pub fn cell_accuracies(records: &[TrialRecord], key: &CellKey) -> Vec<f64> {
    records.iter().filter(|r| key.matches(r)).map(|r| r.accuracy).collect()
}

/// Wilcoxon rank-sum test between the trial accuracies of two cells.
pub fn compare_cells(records: &[TrialRecord], a: &CellKey, b: &CellKey) -> Result<TestResult> {
    let xa = cell_accuracies(records, a);
    let xb = cell_accuracies(records, b);
    for (key, xs) in [(a, &xa), (b, &xb)] {
        if xs.is_empty() {
            return Err(Error::Config(format!("no trials for cell {}", key)));
        }
    }
    Ok(wilcoxon_rank_sum(&xa, &xb)?)
}

/// Linear fit of per-cell mean accuracy against magnitude for one layer.
pub fn fit_falloff(cells: &[CellSummary], treatment: Treatment, layer: &str) -> Result<FitResult> {
    let (x, y): (Vec<f64>, Vec<f64>) =
        cells.iter().filter(|c| c.treatment == treatment && c.layer == layer).map(|c| (c.magnitude, c.mean)).unzip();
    if x.len() < 3 {
        return Err(Error::Config(format!("{} {} has {} magnitudes, need at least 3", treatment, layer, x.len())));
    }
    Ok(linear_fit(&x, &y)?)
}

pub fn write_csv(records: &[TrialRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.treatment.as_str().to_string(),
            r.layer.clone(),
            r.magnitude.to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            r.top_k.to_string(),
            r.accuracy.to_string(),
            r.n_images.to_string(),
            format!("{:.3}", r.wall_ms),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<TrialRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::read(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    if reader.headers()?.iter().ne(CSV_HEADER) {
        return Err(Error::Format(format!("{} does not carry the sweep CSV header", path.display())));
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or_default();
        let num = |i: usize| -> Result<f64> {
            field(i).parse().map_err(|_| Error::Format(format!("bad {} `{}`", CSV_HEADER[i], field(i))))
        };
        let int = |i: usize| -> Result<u64> {
            field(i).parse().map_err(|_| Error::Format(format!("bad {} `{}`", CSV_HEADER[i], field(i))))
        };
        let treatment =
            Treatment::parse(field(0)).ok_or_else(|| Error::Format(format!("unknown treatment `{}`", field(0))))?;
        out.push(TrialRecord {
            treatment,
            layer: field(1).to_string(),
            magnitude: num(2)?,
            trial: int(3)? as usize,
            seed: int(4)?,
            top_k: int(5)? as usize,
            accuracy: num(6)?,
            n_images: int(7)? as usize,
            wall_ms: num(8)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

pub fn export(result: &SweepResult, format: Format, path: &Path) -> Result<()> {
    let bytes = match format {
        Format::Csv => {
            let mut buf = Vec::new();
            write_csv(&result.records, &mut buf)?;
            buf
        }
        Format::Json => {
            let mut buf = serde_json::to_vec_pretty(result)?;
            buf.push(b'\n');
            buf
        }
    };
    fs::write(path, bytes).map_err(|e| Error::write(path, e))
}

pub fn read_json(path: &Path) -> Result<SweepResult> {
    let bytes = fs::read(path).map_err(|e| Error::read(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// One plotting series: the cells of a single (treatment, layer) in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub treatment: Treatment,
    pub layer: String,
    pub points: Vec<(f64, f64, f64)>,
}

pub fn series(cells: &[CellSummary]) -> Vec<Series> {
    let mut groups: BTreeMap<(usize, Treatment), Series> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    for c in cells {
        let pos = order.iter().position(|&l| l == c.layer).unwrap_or_else(|| {
            order.push(&c.layer);
            order.len() - 1
        });
        groups
            .entry((pos, c.treatment))
            .or_insert_with(|| Series { treatment: c.treatment, layer: c.layer.clone(), points: Vec::new() })
            .points
            .push((c.magnitude, c.mean, c.std));
    }
    groups.into_values().collect()
}
