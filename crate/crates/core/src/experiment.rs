//! End-to-end experiment steps shared by the command-line tool and the
//! integration tests: dataset generation, stage training, cascade
//! sampling, scoring and the training-size sweep.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cascade::{stage_seed, Cascade, CascadeBundle, StageDescriptor};
use crate::config::ExperimentConfig;
use crate::dataset::{
    self, load_split, nested_subsets, plan, DatasetManifest, GenerateOptions, GenerateReport,
    SampleRecord, Split,
};
use crate::ddpm::NoiseSchedule;
use crate::error::{invalid, Error, Result};
use crate::grid::Grid;
use crate::metrics::{self, aggregate, AggregateReport, MetricsRecord};
use crate::train::{self, stage_example, Stage, TrainConfig, TrainOutputs, TrainReport};
use crate::unet::UNet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Cascade,
    SrOracle,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Cascade => "cascade",
            EvalMode::SrOracle => "sr_oracle",
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cascade" => Ok(EvalMode::Cascade),
            "sr_oracle" | "sr-oracle" => Ok(EvalMode::SrOracle),
            other => Err(invalid(format!(
                "unknown mode `{other}` (expected cascade or sr_oracle)"
            ))),
        }
    }
}

/// File locations under the output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
    pub data: PathBuf,
}

impl Layout {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            root: cfg.output_dir.clone(),
            data: cfg.data_dir(),
        }
    }

    fn run_name(stage: Stage, subset: Option<usize>) -> String {
        match subset {
            Some(n) => format!("{stage}-n{n}"),
            None => stage.to_string(),
        }
    }

    pub fn checkpoint(&self, stage: Stage, subset: Option<usize>) -> PathBuf {
        self.root
            .join("models")
            .join(format!("{}.ckpt", Self::run_name(stage, subset)))
    }

    pub fn loss_log(&self, stage: Stage, subset: Option<usize>) -> PathBuf {
        self.root
            .join("logs")
            .join(format!("{}_loss.csv", Self::run_name(stage, subset)))
    }

    pub fn bundle(&self) -> PathBuf {
        self.root.join("models").join("cascade.json")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn records_csv(&self, split: Split, mode: EvalMode) -> PathBuf {
        self.eval_dir().join(format!("{split}_{mode}.csv"))
    }

    pub fn summary_csv(&self, split: Split, mode: EvalMode) -> PathBuf {
        self.eval_dir().join(format!("{split}_{mode}_summary.csv"))
    }

    /// Predicted topologies; `which` is `low` or `high`.
    pub fn predictions(&self, split: Split, mode: EvalMode, which: &str) -> PathBuf {
        self.eval_dir().join(format!("{split}_{mode}_{which}.topo"))
    }

    pub fn sweep_dir(&self) -> PathBuf {
        self.root.join("sweep")
    }
}

fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Plans the configured dataset and generates whatever is missing. An
/// existing manifest is reused only if it describes the same dataset.
pub fn generate_dataset(
    cfg: &ExperimentConfig,
    opts: &GenerateOptions,
) -> Result<(DatasetManifest, GenerateReport)> {
    let dir = cfg.data_dir();
    let fresh = plan(&cfg.dataset)?;
    let mut manifest = if dir.join(dataset::MANIFEST_FILE).exists() {
        let old = DatasetManifest::load(&dir)?;
        let same = old.r_lo == fresh.r_lo
            && old.cases == fresh.cases
            && old.splits == fresh.splits
            && old.simp_low == fresh.simp_low
            && old.simp_high == fresh.simp_high;
        if !same {
            return Err(invalid(format!(
                "{} already holds a different dataset; choose another data directory",
                dir.display()
            )));
        }
        old
    } else {
        fresh
    };
    let report = dataset::generate(&dir, &mut manifest, opts)?;
    Ok((manifest, report))
}

pub fn load_manifest(cfg: &ExperimentConfig) -> Result<DatasetManifest> {
    let dir = cfg.data_dir();
    if !dir.join(dataset::MANIFEST_FILE).exists() {
        return Err(invalid(format!(
            "no dataset at {}; run `ccdm gen` first",
            dir.display()
        )));
    }
    let m = DatasetManifest::load(&dir)?;
    if m.r_lo != cfg.dataset.r_lo || m.r_hi != cfg.dataset.r_hi {
        return Err(invalid(format!(
            "dataset at {} is {}/{}, the config asks for {}/{}",
            dir.display(),
            m.r_lo,
            m.r_hi,
            cfg.dataset.r_lo,
            cfg.dataset.r_hi
        )));
    }
    Ok(m)
}

/// Records of a split whose optimization succeeded.
pub fn valid_records(
    cfg: &ExperimentConfig,
    manifest: &DatasetManifest,
    split: Split,
) -> Result<Vec<SampleRecord>> {
    let all = load_split(&cfg.data_dir(), manifest, split)?;
    let n = all.len();
    let valid: Vec<SampleRecord> = all.into_iter().filter(SampleRecord::is_valid).collect();
    if valid.len() < n {
        log::warn!("{split}: skipping {} invalid records", n - valid.len());
    }
    Ok(valid)
}

/// The nested training subsets for every configured sweep size, keyed by size.
pub fn sweep_subsets(
    cfg: &ExperimentConfig,
    train: &[SampleRecord],
) -> Result<BTreeMap<usize, Vec<u32>>> {
    let chain = cfg.sweep_chain();
    let ids: Vec<u32> = train.iter().map(|r| r.id).collect();
    let family: BTreeMap<u32, crate::cases::Family> =
        train.iter().map(|r| (r.id, r.case.family)).collect();
    let subsets = nested_subsets(&ids, |id| family[&id], &chain, cfg.sweep.seed)?;
    Ok(chain.into_iter().zip(subsets).collect())
}

/// True iff every subset contains the next smaller one.
pub fn is_nested(subsets: &BTreeMap<usize, Vec<u32>>) -> bool {
    let lists: Vec<&Vec<u32>> = subsets.values().collect();
    lists
        .windows(2)
        .all(|w| w[0].iter().all(|id| w[1].contains(id)))
}

/// Training records for a stage, optionally restricted to one sweep subset.
pub fn training_set(
    cfg: &ExperimentConfig,
    manifest: &DatasetManifest,
    subset: Option<usize>,
) -> Result<Vec<SampleRecord>> {
    let train = valid_records(cfg, manifest, Split::Train)?;
    let Some(n) = subset else {
        return Ok(train);
    };
    if n == train.len() {
        return Ok(train);
    }
    let subsets = sweep_subsets(cfg, &train)?;
    let ids = subsets.get(&n).ok_or_else(|| {
        invalid(format!(
            "subset size {n} is neither a sweep size {:?} nor the full training set",
            cfg.sweep.sizes
        ))
    })?;
    Ok(train
        .into_iter()
        .filter(|r| ids.binary_search(&r.id).is_ok())
        .collect())
}

pub fn init_unet(cfg: &ExperimentConfig, stage: Stage) -> Result<UNet> {
    let salt = match stage {
        Stage::Low => 11,
        Stage::Sr => 12,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(cfg.init_seed, salt));
    UNet::new(cfg.unet(stage).clone(), &mut rng)
}

/// Trains one stage from fresh parameters on `records` and writes its
/// checkpoint and loss log to `checkpoint` and `loss_log`.
pub fn train_on(
    cfg: &ExperimentConfig,
    stage: Stage,
    records: &[SampleRecord],
    budget: &TrainConfig,
    checkpoint: &Path,
    loss_log: &Path,
) -> Result<(UNet, TrainReport)> {
    let examples = records
        .iter()
        .map(|r| stage_example(stage, r))
        .collect::<Result<Vec<_>>>()?;
    let schedule = NoiseSchedule::new(&cfg.diffusion)?;
    let mut net = init_unet(cfg, stage)?;
    log::info!(
        "training {stage} stage on {} records for {} steps",
        examples.len(),
        budget.steps
    );
    let report = train::train(
        &mut net,
        &schedule,
        &examples,
        budget,
        TrainOutputs {
            checkpoint: Some(checkpoint),
            loss_csv: Some(loss_log),
        },
    )?;
    Ok((net, report))
}

/// `ccdm train`: the stage's configured budget, or the sweep budget when a
/// subset is requested.
pub fn train_stage(
    cfg: &ExperimentConfig,
    stage: Stage,
    subset: Option<usize>,
) -> Result<(UNet, TrainReport)> {
    let manifest = load_manifest(cfg)?;
    let records = training_set(cfg, &manifest, subset)?;
    let layout = Layout::new(cfg);
    let budget = if subset.is_some() {
        &cfg.sweep.train
    } else {
        cfg.train(stage)
    };
    train_on(
        cfg,
        stage,
        &records,
        budget,
        &layout.checkpoint(stage, subset),
        &layout.loss_log(stage, subset),
    )
}

/// Writes the descriptor tying the two checkpoints to the dataset.
pub fn write_bundle(cfg: &ExperimentConfig, sr_checkpoint: &Path) -> Result<CascadeBundle> {
    let layout = Layout::new(cfg);
    let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    let bundle = CascadeBundle {
        r_lo: cfg.dataset.r_lo,
        r_hi: cfg.dataset.r_hi,
        diffusion: cfg.diffusion,
        low: StageDescriptor {
            unet: cfg.low_unet.clone(),
            checkpoint: abs(&layout.checkpoint(Stage::Low, None)),
        },
        high: StageDescriptor {
            unet: cfg.sr_unet.clone(),
            checkpoint: abs(sr_checkpoint),
        },
        dataset: abs(&layout.data),
    };
    bundle.save(&layout.bundle())?;
    Ok(bundle)
}

/// Loads the trained cascade, optionally with another SR checkpoint.
pub fn load_cascade(cfg: &ExperimentConfig, sr_checkpoint: Option<&Path>) -> Result<Cascade> {
    let layout = Layout::new(cfg);
    let sr = sr_checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| layout.checkpoint(Stage::Sr, None));
    for p in [&layout.checkpoint(Stage::Low, None), &sr] {
        if !p.exists() {
            return Err(invalid(format!(
                "missing checkpoint {}; train both stages first",
                p.display()
            )));
        }
    }
    let bundle = write_bundle(cfg, &sr)?;
    Cascade::from_bundle(&bundle, &layout.root)
}

/// A cascade with freshly initialized parameters in both stages.
pub fn untrained_cascade(cfg: &ExperimentConfig) -> Result<Cascade> {
    Cascade::new(
        cfg.dataset.r_lo,
        &cfg.diffusion,
        init_unet(cfg, Stage::Low)?,
        init_unet(cfg, Stage::Sr)?,
    )
}

/// Sampling seed of a record: depends only on the base seed and the id.
pub fn record_seed(base: u64, id: u32) -> u64 {
    stage_seed(base ^ (u64::from(id) << 32 | u64::from(id)), 0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub id: u32,
    pub low: Grid,
    pub high: Grid,
}

fn chunked<T: Sync, U: Send>(
    items: &[T],
    batch: usize,
    f: impl Fn(&[T]) -> Result<Vec<U>> + Sync + Send,
) -> Result<Vec<U>> {
    let chunks: Vec<&[T]> = items.chunks(batch.max(1)).collect();
    let mut out = Vec::with_capacity(items.len());
    for part in par_map(&chunks, |c| f(c)) {
        out.extend(part?);
    }
    Ok(out)
}

/// Stage-1 samples for `records`.
pub fn predict_low(
    cascade: &Cascade,
    records: &[SampleRecord],
    seed: u64,
    batch: usize,
) -> Result<Vec<Grid>> {
    chunked(records, batch, |rs| {
        let stacks: Vec<_> = rs.iter().map(|r| &r.low_stack).collect();
        let seeds: Vec<u64> = rs.iter().map(|r| record_seed(seed, r.id)).collect();
        cascade.sample_low(&stacks, &seeds)
    })
}

/// Stage-2 samples conditioned on the given low-res topologies.
pub fn predict_high(
    cascade: &Cascade,
    records: &[SampleRecord],
    lows: &[Grid],
    seed: u64,
    batch: usize,
) -> Result<Vec<Grid>> {
    if lows.len() != records.len() {
        return Err(invalid(format!(
            "{} low-res topologies for {} records",
            lows.len(),
            records.len()
        )));
    }
    let pairs: Vec<(&SampleRecord, &Grid)> = records.iter().zip(lows).collect();
    chunked(&pairs, batch, |ps| {
        let stacks: Vec<_> = ps.iter().map(|p| &p.0.high_stack).collect();
        let lows: Vec<&Grid> = ps.iter().map(|p| p.1).collect();
        let seeds: Vec<u64> = ps.iter().map(|p| record_seed(seed, p.0.id)).collect();
        cascade.sample_high(&stacks, &lows, &seeds)
    })
}

/// Samples every record in the given mode. In `sr_oracle` mode the
/// low-res entry is the optimizer's topology.
pub fn predict(
    cascade: &Cascade,
    records: &[SampleRecord],
    mode: EvalMode,
    seed: u64,
    batch: usize,
) -> Result<Vec<Prediction>> {
    let lows = match mode {
        EvalMode::Cascade => predict_low(cascade, records, seed, batch)?,
        EvalMode::SrOracle => records.iter().map(|r| r.low_topology.clone()).collect(),
    };
    let highs = predict_high(cascade, records, &lows, seed, batch)?;
    Ok(records
        .iter()
        .zip(lows)
        .zip(highs)
        .map(|((r, low), high)| Prediction {
            id: r.id,
            low,
            high,
        })
        .collect())
}

/// Metrics of the high-resolution predictions against the stored optima.
pub fn score(
    manifest: &DatasetManifest,
    records: &[SampleRecord],
    preds: &[Prediction],
    split: Split,
    tol: f64,
) -> Result<Vec<MetricsRecord>> {
    if preds.len() != records.len() {
        return Err(invalid(format!(
            "{} predictions for {} records",
            preds.len(),
            records.len()
        )));
    }
    let material = manifest.simp_high.material();
    let solver = manifest.simp_high.solver;
    let pairs: Vec<(&SampleRecord, &Prediction)> = records.iter().zip(preds).collect();
    par_map(&pairs, |(r, p)| {
        metrics::evaluate(
            r.id,
            split.name(),
            &r.case,
            &p.high,
            &r.high_topology,
            &material,
            &solver,
            tol,
        )
    })
    .into_iter()
    .collect()
}

pub struct EvalOutcome {
    pub predictions: Vec<Prediction>,
    pub records: Vec<MetricsRecord>,
    pub report: AggregateReport,
}

/// `ccdm eval`: samples a split, scores it, and writes the per-record
/// CSV, the summary CSV and the predicted topologies.
pub fn evaluate_split(
    cfg: &ExperimentConfig,
    cascade: &Cascade,
    split: Split,
    mode: EvalMode,
    include_infeasible: bool,
    seed: u64,
) -> Result<EvalOutcome> {
    let manifest = load_manifest(cfg)?;
    let records = valid_records(cfg, &manifest, split)?;
    if records.is_empty() {
        return Err(invalid(format!("{split} has no valid records")));
    }
    let start = std::time::Instant::now();
    let predictions = predict(cascade, &records, mode, seed, cfg.eval.batch_size)?;
    log::info!(
        "{split}/{mode}: sampled {} records in {:.1}s",
        records.len(),
        start.elapsed().as_secs_f64()
    );
    let scored = score(
        &manifest,
        &records,
        &predictions,
        split,
        cfg.eval.feasibility_tol,
    )?;
    let report = aggregate(&scored, include_infeasible, cfg.eval.bootstrap_seed)?;
    let layout = Layout::new(cfg);
    std::fs::create_dir_all(layout.eval_dir())?;
    metrics::write_records_csv(&layout.records_csv(split, mode), &scored)?;
    metrics::write_summary_csv(&layout.summary_csv(split, mode), split.name(), &report)?;
    write_topologies(
        &layout.predictions(split, mode, "high"),
        predictions.iter().map(|p| (p.id, &p.high)),
    )?;
    write_topologies(
        &layout.predictions(split, mode, "low"),
        predictions.iter().map(|p| (p.id, &p.low)),
    )?;
    Ok(EvalOutcome {
        predictions,
        records: scored,
        report,
    })
}

/// `ccdm sample`: predictions only, written as topology files.
pub fn sample_split(
    cfg: &ExperimentConfig,
    cascade: &Cascade,
    split: Split,
    mode: EvalMode,
    seed: u64,
) -> Result<Vec<Prediction>> {
    let manifest = load_manifest(cfg)?;
    let records = valid_records(cfg, &manifest, split)?;
    let predictions = predict(cascade, &records, mode, seed, cfg.eval.batch_size)?;
    let layout = Layout::new(cfg);
    write_topologies(
        &layout.predictions(split, mode, "high"),
        predictions.iter().map(|p| (p.id, &p.high)),
    )?;
    write_topologies(
        &layout.predictions(split, mode, "low"),
        predictions.iter().map(|p| (p.id, &p.low)),
    )?;
    Ok(predictions)
}

pub const SWEEP_COLUMNS: [&str; 14] = [
    "size",
    "split",
    "status",
    "group",
    "count",
    "feasible",
    "mse_mean",
    "mse_ci",
    "vfe_mean",
    "vfe_ci",
    "ce_count",
    "ce_median",
    "ce_lo",
    "ce_hi",
];

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub size: usize,
    pub split: Split,
    pub outcome: std::result::Result<AggregateReport, String>,
}

/// `ccdm sweep`: trains the SR stage on each nested subset, evaluates the
/// cascade (with the shared stage-1 model) on each configured split and
/// writes one summary row per (size, split). Failed sub-runs are recorded
/// and the sweep continues.
pub fn sweep(cfg: &ExperimentConfig, include_infeasible: bool, seed: u64) -> Result<Vec<SweepRow>> {
    let manifest = load_manifest(cfg)?;
    let layout = Layout::new(cfg);
    let low_ckpt = layout.checkpoint(Stage::Low, None);
    if !low_ckpt.exists() {
        return Err(invalid(format!(
            "missing checkpoint {}; train the low stage first",
            low_ckpt.display()
        )));
    }
    let low = crate::cascade::load_unet(cfg.low_unet.clone(), &low_ckpt)?;
    let train = valid_records(cfg, &manifest, Split::Train)?;
    let subsets = sweep_subsets(cfg, &train)?;
    if !is_nested(&subsets) {
        return Err(invalid("sweep subsets are not nested"));
    }
    std::fs::create_dir_all(layout.sweep_dir())?;
    std::fs::write(
        layout.sweep_dir().join("subsets.json"),
        serde_json::to_string_pretty(&subsets)?,
    )?;

    // stage-1 samples do not depend on the SR model, so draw them once per split
    let probe = Cascade::new(
        cfg.dataset.r_lo,
        &cfg.diffusion,
        low.clone(),
        init_unet(cfg, Stage::Sr)?,
    )?;
    let mut eval_sets = Vec::new();
    for &split in &cfg.sweep.splits {
        let records = valid_records(cfg, &manifest, split)?;
        let lows = predict_low(&probe, &records, seed, cfg.eval.batch_size)?;
        eval_sets.push((split, records, lows));
    }

    let mut rows = Vec::new();
    for size in cfg.sweep_chain() {
        let ids = &subsets[&size];
        let records: Vec<SampleRecord> = train
            .iter()
            .filter(|r| ids.binary_search(&r.id).is_ok())
            .cloned()
            .collect();
        let trained = train_on(
            cfg,
            Stage::Sr,
            &records,
            &cfg.sweep.train,
            &layout.checkpoint(Stage::Sr, Some(size)),
            &layout.loss_log(Stage::Sr, Some(size)),
        )
        .and_then(|(sr, _)| Cascade::new(cfg.dataset.r_lo, &cfg.diffusion, low.clone(), sr));
        for (split, records, lows) in &eval_sets {
            let outcome = trained
                .as_ref()
                .map_err(|e| e.to_string())
                .and_then(|cascade| {
                    let highs = predict_high(cascade, records, lows, seed, cfg.eval.batch_size)
                        .map_err(|e| e.to_string())?;
                    let preds: Vec<Prediction> = records
                        .iter()
                        .zip(lows)
                        .zip(highs)
                        .map(|((r, l), h)| Prediction {
                            id: r.id,
                            low: l.clone(),
                            high: h,
                        })
                        .collect();
                    let scored =
                        score(&manifest, records, &preds, *split, cfg.eval.feasibility_tol)
                            .map_err(|e| e.to_string())?;
                    let path = layout.sweep_dir().join(format!("n{size}_{split}.csv"));
                    metrics::write_records_csv(&path, &scored).map_err(|e| e.to_string())?;
                    aggregate(&scored, include_infeasible, cfg.eval.bootstrap_seed)
                        .map_err(|e| e.to_string())
                });
            if let Err(e) = &outcome {
                log::error!("sweep size {size}, {split}: {e}");
            }
            rows.push(SweepRow {
                size,
                split: *split,
                outcome,
            });
        }
        write_sweep_csv(&layout.sweep_dir().join("sweep.csv"), &rows)?;
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SWEEP_COLUMNS)?;
    for row in rows {
        let mut fields = vec![row.size.to_string(), row.split.to_string()];
        match &row.outcome {
            Ok(report) => {
                fields.push("ok".into());
                let mut summary = metrics::summary_row(row.split.name(), &report.overall);
                summary.remove(1);
                fields.extend(summary);
            }
            Err(e) => {
                fields.push(format!("error: {e}"));
                fields.extend(std::iter::repeat_n(String::new(), SWEEP_COLUMNS.len() - 3));
            }
        }
        w.write_record(fields)?;
    }
    w.flush()?;
    Ok(())
}

pub const TOPOLOGY_MAGIC: &[u8; 8] = b"CCDMTOPO";

/// Topology set: magic, `u32` count, rows and cols, then per entry a `u32`
/// id and the `f32` densities row-major (all little-endian).
pub fn write_topologies<'a>(
    path: &Path,
    items: impl IntoIterator<Item = (u32, &'a Grid)>,
) -> Result<()> {
    let items: Vec<(u32, &Grid)> = items.into_iter().collect();
    let (rows, cols) = items.first().map(|i| i.1.shape()).unwrap_or((0, 0));
    let mut buf = TOPOLOGY_MAGIC.to_vec();
    for v in [items.len(), rows, cols] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for (id, g) in &items {
        if g.shape() != (rows, cols) {
            return Err(invalid("topology set entries must share one shape"));
        }
        buf.extend_from_slice(&id.to_le_bytes());
        for v in g.to_f32() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_topologies(path: &Path) -> Result<Vec<(u32, Grid)>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[..8] != TOPOLOGY_MAGIC {
        return Err(Error::Format(format!(
            "{}: not a topology set",
            path.display()
        )));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (count, rows, cols) = (word(8), word(12), word(16));
    let entry = 4 + 4 * rows * cols;
    if bytes.len() != 20 + count * entry {
        return Err(Error::Format(format!(
            "{}: size does not match its header",
            path.display()
        )));
    }
    (0..count)
        .map(|k| {
            let at = 20 + k * entry;
            let vals: Vec<f32> = bytes[at + 4..at + entry]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Ok((word(at) as u32, Grid::from_f32(rows, cols, &vals)?))
        })
        .collect()
}
