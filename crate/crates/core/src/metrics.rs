//! Pixel-wise and physics-based evaluation of predicted topologies:
//! MSE, volume-fraction error, compliance error, feasibility and
//! aggregate statistics with confidence intervals.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cases::{BoundaryCase, Family};
use crate::error::{invalid, Error, Result};
use crate::fea::{compliance, Material, Mesh, SolverOptions, StiffnessSystem};
use crate::fields::percentile;
use crate::grid::Grid;

pub const DEFAULT_FEASIBILITY_TOL: f64 = 0.02;
pub const BOOTSTRAP_RESAMPLES: usize = 10_000;
const Z95: f64 = 1.96;

pub fn mse(pred: &Grid, truth: &Grid) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(Error::Shape {
            op: "mse",
            detail: format!("prediction {:?} vs truth {:?}", pred.shape(), truth.shape()),
        });
    }
    let n = pred.len().max(1) as f64;
    Ok(pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Volume fraction of the binarized field.
pub fn binary_volume_fraction(pred: &Grid) -> f64 {
    pred.data().iter().filter(|&&v| v > 0.5).count() as f64 / pred.len().max(1) as f64
}

/// `|VF(binarized pred) − f| / f`.
pub fn vfe(pred: &Grid, f: f64) -> f64 {
    (binary_volume_fraction(pred) - f).abs() / f
}

/// True iff the binarized prediction's VFE is at most `tol`.
pub fn feasibility(pred: &Grid, f: f64, tol: f64) -> bool {
    vfe(pred, f) <= tol
}

/// Compliance of the binarized field under the case's supports and load,
/// using the penalized material law (void elements get `e_min`). The
/// solid/void contrast makes iterative residuals a poor accuracy guide, so
/// the system is factored directly; `solver` is the fallback should the
/// factorization break down.
pub fn binary_compliance(
    pred: &Grid,
    case: &BoundaryCase,
    material: &Material,
    solver: &SolverOptions,
) -> Result<f64> {
    let (rows, cols) = pred.shape();
    let mesh = Mesh::new(cols, rows)?;
    let problem = case.problem(mesh)?;
    let mut sys = StiffnessSystem::new(mesh, *material)?;
    let binary = pred.binarize();
    sys.assemble(&binary)?;
    let u = match sys.solve_direct(&problem.supports, &problem.loads) {
        Ok(u) => u,
        Err(e) => {
            log::debug!("direct factorization failed ({e}); solving iteratively");
            sys.solve(&binary, &problem.supports, &problem.loads, solver, None)?
                .0
        }
    };
    let c = compliance(&problem.loads, &u);
    if !c.is_finite() {
        return Err(invalid("non-finite compliance"));
    }
    Ok(c)
}

/// `(C(pred) − C_true) / C_true`; `None` when the analysis of the
/// prediction fails.
pub fn ce(
    pred: &Grid,
    truth_compliance: f64,
    case: &BoundaryCase,
    material: &Material,
    solver: &SolverOptions,
) -> Option<f64> {
    match binary_compliance(pred, case, material, solver) {
        Ok(c) => Some((c - truth_compliance) / truth_compliance),
        Err(e) => {
            log::warn!("compliance of a prediction could not be evaluated: {e}");
            None
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub id: u32,
    pub family: Family,
    pub split: String,
    pub mse: f64,
    pub vfe: f64,
    /// Compliance error whenever the analysis succeeded, feasible or not.
    pub ce_raw: Option<f64>,
    pub feasible: bool,
}

impl MetricsRecord {
    /// CE as reported: present iff the design is feasible.
    pub fn ce(&self) -> Option<f64> {
        if self.feasible {
            self.ce_raw
        } else {
            None
        }
    }
}

/// Scores one prediction against its ground truth. The reference
/// compliance is that of the binarized ground truth, so a perfect
/// prediction scores CE = 0. Analysis failures mark the record infeasible.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    id: u32,
    split: &str,
    case: &BoundaryCase,
    pred: &Grid,
    truth: &Grid,
    material: &Material,
    solver: &SolverOptions,
    tol: f64,
) -> Result<MetricsRecord> {
    let mse = mse(pred, truth)?;
    let vfe = vfe(pred, case.v);
    let ce_raw = match binary_compliance(truth, case, material, solver) {
        Ok(truth_c) => ce(pred, truth_c, case, material, solver),
        Err(e) => {
            log::warn!("record {id}: reference compliance failed, scored infeasible: {e}");
            None
        }
    };
    Ok(MetricsRecord {
        id,
        family: case.family,
        split: split.to_string(),
        mse,
        vfe,
        ce_raw,
        feasible: vfe <= tol && ce_raw.is_some(),
    })
}

/// Mean with a normal-approximation 95% half-width `1.96·s/√n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub half_width: f64,
}

pub fn mean_ci(values: &[f64]) -> Option<MeanCi> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some(MeanCi {
            mean,
            half_width: 0.0,
        });
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Some(MeanCi {
        mean,
        half_width: Z95 * var.sqrt() / n.sqrt(),
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    Some(percentile(&mut v, 0.5))
}

/// Median with a percentile-bootstrap 95% interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedianCi {
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Resamples with replacement `resamples` times from a ChaCha8 stream
/// seeded with `seed`; each resample draws `n` indices in turn. The
/// interval ends are the 2.5th and 97.5th percentiles of the resampled
/// medians under linear interpolation.
pub fn bootstrap_median(values: &[f64], resamples: usize, seed: u64) -> Option<MedianCi> {
    let med = median(values)?;
    if values.len() == 1 || resamples == 0 {
        return Some(MedianCi {
            median: med,
            lo: med,
            hi: med,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let mut buf = vec![0.0; n];
    let mut medians = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        for b in buf.iter_mut() {
            *b = values[rng.random_range(0..n)];
        }
        medians.push(percentile(&mut buf, 0.5));
    }
    let lo = percentile(&mut medians, 0.025);
    let hi = percentile(&mut medians, 0.975);
    Some(MedianCi {
        median: med,
        lo,
        hi,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// `all` or a family letter.
    pub group: String,
    pub count: usize,
    pub feasible: usize,
    pub mse: MeanCi,
    pub vfe: MeanCi,
    /// Number of CE values behind `ce`.
    pub ce_count: usize,
    /// Absent when no design qualifies.
    pub ce: Option<MedianCi>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub overall: Summary,
    pub per_family: Vec<Summary>,
}

fn summarize(
    group: String,
    records: &[&MetricsRecord],
    include_infeasible: bool,
    seed: u64,
) -> Summary {
    let mses: Vec<f64> = records.iter().map(|r| r.mse).collect();
    let vfes: Vec<f64> = records.iter().map(|r| r.vfe).collect();
    let ces: Vec<f64> = records
        .iter()
        .filter_map(|r| if include_infeasible { r.ce_raw } else { r.ce() })
        .collect();
    Summary {
        group,
        count: records.len(),
        feasible: records.iter().filter(|r| r.feasible).count(),
        mse: mean_ci(&mses).expect("non-empty"),
        vfe: mean_ci(&vfes).expect("non-empty"),
        ce_count: ces.len(),
        ce: bootstrap_median(&ces, BOOTSTRAP_RESAMPLES, seed),
    }
}

/// Overall and per-family summaries. Records are ordered by id first so
/// the bootstrap is independent of input order.
pub fn aggregate(
    records: &[MetricsRecord],
    include_infeasible_ce: bool,
    bootstrap_seed: u64,
) -> Result<AggregateReport> {
    if records.is_empty() {
        return Err(invalid("cannot aggregate zero records"));
    }
    let mut sorted: Vec<&MetricsRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.id, r.split.clone()));
    let overall = summarize("all".into(), &sorted, include_infeasible_ce, bootstrap_seed);
    let mut groups: BTreeMap<Family, Vec<&MetricsRecord>> = BTreeMap::new();
    for r in &sorted {
        groups.entry(r.family).or_default().push(r);
    }
    let per_family = groups
        .into_iter()
        .map(|(f, rs)| {
            summarize(
                f.letter().to_string(),
                &rs,
                include_infeasible_ce,
                bootstrap_seed,
            )
        })
        .collect();
    Ok(AggregateReport {
        overall,
        per_family,
    })
}

pub const RECORD_COLUMNS: [&str; 8] = [
    "id", "family", "split", "mse", "vfe", "ce", "feasible", "ce_raw",
];
pub const SUMMARY_COLUMNS: [&str; 12] = [
    "group",
    "split",
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

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

/// Shortest representation that parses back to the same `f64`.
fn fmt_f(v: f64) -> String {
    format!("{v:?}")
}

/// Per-record CSV. `ce` is empty for infeasible designs; `ce_raw` keeps
/// the value whenever the analysis succeeded.
pub fn write_records_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RECORD_COLUMNS)?;
    for r in records {
        w.write_record([
            r.id.to_string(),
            r.family.letter().to_string(),
            r.split.clone(),
            fmt_f(r.mse),
            fmt_f(r.vfe),
            fmt_opt(r.ce()),
            u8::from(r.feasible).to_string(),
            fmt_opt(r.ce_raw),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != RECORD_COLUMNS {
        return Err(Error::Format(format!(
            "{}: unexpected columns {headers:?}",
            path.display()
        )));
    }
    let num = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|_| Error::Format(format!("bad number `{s}`")))
        }
    };
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let bad = || Error::Format(format!("malformed metrics row {row:?}"));
        out.push(MetricsRecord {
            id: row[0].parse().map_err(|_| bad())?,
            family: row[1].parse()?,
            split: row[2].to_string(),
            mse: num(&row[3])?.ok_or_else(bad)?,
            vfe: num(&row[4])?.ok_or_else(bad)?,
            feasible: &row[6] == "1",
            ce_raw: num(&row[7])?,
        });
    }
    Ok(out)
}

pub fn summary_row(split: &str, s: &Summary) -> Vec<String> {
    vec![
        s.group.clone(),
        split.to_string(),
        s.count.to_string(),
        s.feasible.to_string(),
        fmt_f(s.mse.mean),
        fmt_f(s.mse.half_width),
        fmt_f(s.vfe.mean),
        fmt_f(s.vfe.half_width),
        s.ce_count.to_string(),
        fmt_opt(s.ce.map(|c| c.median)),
        fmt_opt(s.ce.map(|c| c.lo)),
        fmt_opt(s.ce.map(|c| c.hi)),
    ]
}

/// One row for the overall summary followed by one per family.
pub fn write_summary_csv(path: &Path, split: &str, report: &AggregateReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_COLUMNS)?;
    for s in std::iter::once(&report.overall).chain(&report.per_family) {
        w.write_record(summary_row(split, s))?;
    }
    w.flush()?;
    Ok(())
}
