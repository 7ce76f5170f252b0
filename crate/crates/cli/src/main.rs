use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use ccdm::config::ExperimentConfig;
use ccdm::dataset::{load_split, DatasetManifest, GenerateOptions, Split};
use ccdm::experiment::{self, EvalMode, Layout, SWEEP_COLUMNS};
use ccdm::render::{line_plot, topology_pgm, Series};
use ccdm::train::Stage;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "ccdm",
    version,
    about = "Cascaded conditional diffusion for topology optimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in config: desk or full. Used when no --config is given.
    #[arg(long, default_value = "desk")]
    preset: String,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        Ok(match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::preset(&self.preset)?,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset, resuming any partial run.
    Gen {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train one stage, optionally on a nested sweep subset.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        stage: Stage,
        #[arg(long)]
        subset: Option<usize>,
    },
    /// Sample a split and write the predicted topologies.
    Sample {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "seen-test")]
        split: Split,
        #[arg(long, default_value = "cascade")]
        mode: EvalMode,
        #[arg(long)]
        seed: Option<u64>,
        /// SR checkpoint to use instead of the trained one.
        #[arg(long)]
        sr_checkpoint: Option<PathBuf>,
    },
    /// Sample and score test splits, writing per-record and summary CSVs.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Repeatable; defaults to both test splits.
        #[arg(long)]
        split: Vec<Split>,
        #[arg(long, default_value = "cascade")]
        mode: EvalMode,
        /// Count infeasible designs in the CE statistics.
        #[arg(long)]
        include_infeasible: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        sr_checkpoint: Option<PathBuf>,
        /// Score a cascade with freshly initialized parameters; outputs go
        /// under `untrained/` in the output directory.
        #[arg(long, conflicts_with = "sr_checkpoint")]
        untrained: bool,
    },
    /// Train the SR stage on each sweep size and evaluate the cascade.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        include_infeasible: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render a topology set, a dataset split, a sweep CSV or a loss log as PGM images.
    Render {
        #[arg(long)]
        input: PathBuf,
        /// Output directory; defaults to the input's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the resolved config as JSON.
    Config {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("CCDM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .with_context(|| format!("CCDM_THREADS must be a positive integer, got {v:?}"))?;
    if n == 0 {
        bail!("CCDM_THREADS must be a positive integer, got 0");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()?;
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen { cfg } => {
            let cfg = cfg.load()?;
            let start = Instant::now();
            let (m, report) = experiment::generate_dataset(&cfg, &GenerateOptions::default())?;
            log::info!(
                "{} records in {} ({} generated, {} reused, {} invalid) after {:.1}s",
                m.record_count,
                cfg.data_dir().display(),
                report.generated,
                report.skipped,
                m.invalid.len(),
                start.elapsed().as_secs_f64()
            );
        }
        Command::Train { cfg, stage, subset } => {
            let cfg = cfg.load()?;
            let (_, report) = experiment::train_stage(&cfg, stage, subset)?;
            let layout = Layout::new(&cfg);
            log::info!(
                "{stage}: final 100-step mean loss {:.5}; checkpoint {}",
                report.trailing_mean(100),
                layout.checkpoint(stage, subset).display()
            );
        }
        Command::Sample {
            cfg,
            split,
            mode,
            seed,
            sr_checkpoint,
        } => {
            let cfg = cfg.load()?;
            let cascade = experiment::load_cascade(&cfg, sr_checkpoint.as_deref())?;
            let preds = experiment::sample_split(
                &cfg,
                &cascade,
                split,
                mode,
                seed.unwrap_or(cfg.eval.sample_seed),
            )?;
            log::info!(
                "{} samples in {}",
                preds.len(),
                Layout::new(&cfg).predictions(split, mode, "high").display()
            );
        }
        Command::Eval {
            cfg,
            split,
            mode,
            include_infeasible,
            seed,
            sr_checkpoint,
            untrained,
        } => {
            let mut cfg = cfg.load()?;
            let cascade = if untrained {
                cfg.data_dir = Some(cfg.data_dir());
                cfg.output_dir = cfg.output_dir.join("untrained");
                experiment::untrained_cascade(&cfg)?
            } else {
                experiment::load_cascade(&cfg, sr_checkpoint.as_deref())?
            };
            let splits = if split.is_empty() {
                vec![Split::SeenTest, Split::UnseenTest]
            } else {
                split
            };
            let seed = seed.unwrap_or(cfg.eval.sample_seed);
            for split in splits {
                let out = experiment::evaluate_split(
                    &cfg,
                    &cascade,
                    split,
                    mode,
                    include_infeasible,
                    seed,
                )?;
                let s = &out.report.overall;
                let ce =
                    s.ce.map(|c| format!("{:.4} [{:.4}, {:.4}]", c.median, c.lo, c.hi))
                        .unwrap_or_else(|| "n/a".into());
                log::info!(
                    "{split}/{mode}: n={} feasible={} mse={:.5}±{:.5} vfe={:.4}±{:.4} ce={ce}",
                    s.count,
                    s.feasible,
                    s.mse.mean,
                    s.mse.half_width,
                    s.vfe.mean,
                    s.vfe.half_width
                );
            }
        }
        Command::Sweep {
            cfg,
            include_infeasible,
            seed,
        } => {
            let cfg = cfg.load()?;
            let rows = experiment::sweep(
                &cfg,
                include_infeasible,
                seed.unwrap_or(cfg.eval.sample_seed),
            )?;
            let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
            log::info!(
                "{} sweep rows ({failed} failed) in {}",
                rows.len(),
                Layout::new(&cfg).sweep_dir().join("sweep.csv").display()
            );
        }
        Command::Render { input, out } => render(&input, out.as_deref())?,
        Command::Config { cfg } => println!("{}", serde_json::to_string_pretty(&cfg.load()?)?),
    }
    Ok(())
}

fn write_image(path: PathBuf, bytes: &[u8]) -> Result<()> {
    std::fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn render(input: &Path, out: Option<&Path>) -> Result<()> {
    if !input.is_file() {
        bail!("cannot read {}", input.display());
    }
    let out = match out {
        Some(d) => d.to_path_buf(),
        None => input.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    std::fs::create_dir_all(&out)?;
    let stem = input
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("render")
        .to_string();
    match input.extension().and_then(|e| e.to_str()) {
        Some("topo") => {
            for (id, grid) in experiment::read_topologies(input)? {
                write_image(out.join(format!("{stem}_{id}.pgm")), &topology_pgm(&grid))?;
            }
        }
        Some("bin") => {
            let dir = input.parent().unwrap_or(Path::new("."));
            let manifest = DatasetManifest::load(dir)
                .with_context(|| format!("no dataset manifest next to {}", input.display()))?;
            let name = input
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default();
            let split = Split::ALL
                .into_iter()
                .find(|s| s.file_name() == name)
                .with_context(|| format!("{name} is not a dataset split file"))?;
            for r in load_split(dir, &manifest, split)? {
                write_image(
                    out.join(format!("{stem}_{}_low.pgm", r.id)),
                    &topology_pgm(&r.low_topology),
                )?;
                write_image(
                    out.join(format!("{stem}_{}_high.pgm", r.id)),
                    &topology_pgm(&r.high_topology),
                )?;
            }
        }
        Some("csv") => render_csv(input, &out, &stem)?,
        _ => bail!(
            "{}: expected a .topo, dataset .bin or .csv file",
            input.display()
        ),
    }
    Ok(())
}

const PLOT_SIZE: (usize, usize) = (480, 320);

fn render_csv(input: &Path, out: &Path, stem: &str) -> Result<()> {
    let mut rdr = csv::Reader::from_path(input)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let rows: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
    let num = |s: &str| s.parse::<f64>().unwrap_or(f64::NAN);
    if headers == ["step", "loss"] {
        let series = Series {
            points: rows
                .iter()
                .map(|r| (num(&r[0]), num(&r[1]), f64::NAN, f64::NAN))
                .collect(),
        };
        return write_image(
            out.join(format!("{stem}.pgm")),
            &line_plot(&[series], PLOT_SIZE.0, PLOT_SIZE.1, false)?,
        );
    }
    if headers != SWEEP_COLUMNS {
        bail!(
            "{}: expected a loss log (step,loss) or a sweep CSV",
            input.display()
        );
    }
    let col = |name: &str| {
        SWEEP_COLUMNS
            .iter()
            .position(|c| *c == name)
            .expect("known column")
    };
    let ok: Vec<&csv::StringRecord> = rows.iter().filter(|r| &r[col("status")] == "ok").collect();
    let mut splits: Vec<String> = ok.iter().map(|r| r[col("split")].to_string()).collect();
    splits.sort();
    splits.dedup();
    let curve = |split: &str, y: &str, bar: &dyn Fn(&csv::StringRecord) -> (f64, f64)| -> Series {
        let mut points: Vec<(f64, f64, f64, f64)> = ok
            .iter()
            .filter(|r| &r[col("split")] == split)
            .map(|r| {
                let (lo, hi) = bar(r);
                (num(&r[col("size")]), num(&r[col(y)]), lo, hi)
            })
            .collect();
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        Series { points }
    };
    let symmetric = |mean: &'static str, ci: &'static str| {
        move |r: &csv::StringRecord| {
            let (m, e) = (num(&r[col(mean)]), num(&r[col(ci)]));
            (m - e, m + e)
        }
    };
    let ce_bar = |r: &csv::StringRecord| (num(&r[col("ce_lo")]), num(&r[col("ce_hi")]));
    let mse_bar = symmetric("mse_mean", "mse_ci");
    let vfe_bar = symmetric("vfe_mean", "vfe_ci");
    let plots: [(&str, &str, &dyn Fn(&csv::StringRecord) -> (f64, f64)); 3] = [
        ("mse", "mse_mean", &mse_bar),
        ("vfe", "vfe_mean", &vfe_bar),
        ("ce", "ce_median", &ce_bar),
    ];
    for (name, y, bar) in plots {
        let series: Vec<Series> = splits.iter().map(|s| curve(s, y, bar)).collect();
        write_image(
            out.join(format!("{stem}_{name}.pgm")),
            &line_plot(&series, PLOT_SIZE.0, PLOT_SIZE.1, true)?,
        )?;
    }
    log::info!("series order: {}", splits.join(", "));
    Ok(())
}
