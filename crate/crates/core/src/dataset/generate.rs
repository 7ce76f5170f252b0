use std::path::Path;
use std::time::Instant;

use super::io::{read_valid_prefix, RecordWriter, SampleRecord};
use super::{DatasetManifest, Normalizers, Split};
use crate::error::Result;
use crate::fea::{compliance, Mesh, SolverOptions, StiffnessSystem};
use crate::fields::{raw_fields, ConditionStack, Normalizer, RawFields};
use crate::grid::Grid;
use crate::simp::{optimize, SimpParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GenerateOptions {
    /// Run independent cases on the worker pool.
    pub parallel: bool,
    /// Cases handed to the pool per batch; results are written in id order.
    pub batch: usize,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            parallel: true,
            batch: 16,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GenerateReport {
    pub generated: usize,
    pub skipped: usize,
    pub invalid: Vec<u32>,
}

fn map_ids<T: Send>(ids: &[u32], parallel: bool, f: impl Fn(u32) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        return ids.par_iter().map(|&id| f(id)).collect();
    }
    let _ = parallel;
    ids.iter().map(|&id| f(id)).collect()
}

fn fields_for(
    manifest: &DatasetManifest,
    id: u32,
    resolution: usize,
    simp: &SimpParams,
) -> Result<RawFields> {
    let mesh = Mesh::square(resolution)?;
    raw_fields(&mesh, manifest.case(id)?, &simp.material(), &simp.solver)
}

fn fit_normalizers(manifest: &DatasetManifest, opts: &GenerateOptions) -> Result<Normalizers> {
    let ids = &manifest.splits.train;
    let fit = |resolution: usize, simp: &SimpParams| -> Result<Normalizer> {
        let raws: Vec<RawFields> = map_ids(ids, opts.parallel, |id| {
            fields_for(manifest, id, resolution, simp)
        })
        .into_iter()
        .zip(ids)
        .filter_map(|(r, id)| {
            r.map_err(|e| log::warn!("case {id}: solid-domain fields failed at {resolution}: {e}"))
                .ok()
        })
        .collect();
        if raws.is_empty() {
            return Ok(Normalizer::default());
        }
        Normalizer::fit(&raws)
    };
    Ok(Normalizers {
        low: fit(manifest.r_lo, &manifest.simp_low)?,
        high: fit(manifest.r_hi, &manifest.simp_high)?,
    })
}

/// SIMP optimum stored as `f32`, with its compliance recomputed on the
/// stored values.
fn optimum(
    manifest: &DatasetManifest,
    id: u32,
    resolution: usize,
    simp: &SimpParams,
) -> Result<(Grid, f64)> {
    let mesh = Mesh::square(resolution)?;
    let problem = manifest.case(id)?.problem(mesh)?;
    let result = optimize(&problem, simp)?;
    if !result.converged {
        log::debug!("case {id} at {resolution}: stopped at the iteration cap");
    }
    let stored = result.densities.quantize_f32();
    let mut sys = StiffnessSystem::new(mesh, simp.material())?;
    let tight = SolverOptions {
        tol: 1e-10,
        ..simp.solver
    };
    let (u, _) = sys.solve(&stored, &problem.supports, &problem.loads, &tight, None)?;
    Ok((stored, compliance(&problem.loads, &u)))
}

fn make_record(manifest: &DatasetManifest, norms: &Normalizers, id: u32) -> Result<SampleRecord> {
    let start = Instant::now();
    let case = *manifest.case(id)?;
    let (lo, hi) = (manifest.r_lo, manifest.r_hi);
    let stack = |res: usize, simp: &SimpParams, norm: &Normalizer| -> Result<ConditionStack> {
        Ok(norm.apply(&fields_for(manifest, id, res, simp)?))
    };
    let low_stack = stack(lo, &manifest.simp_low, &norms.low)?;
    let high_stack = stack(hi, &manifest.simp_high, &norms.high)?;
    let topologies = optimum(manifest, id, lo, &manifest.simp_low)
        .and_then(|l| optimum(manifest, id, hi, &manifest.simp_high).map(|h| (l, h)));
    let ((low_topology, low_compliance), (high_topology, high_compliance)) = match topologies {
        Ok(t) => t,
        Err(e) => {
            log::warn!("case {id}: optimization failed, record marked invalid: {e}");
            (
                (Grid::zeros(lo, lo), f64::NAN),
                (Grid::zeros(hi, hi), f64::NAN),
            )
        }
    };
    log::info!(
        "case {id} ({}) generated in {:.2}s",
        case.family,
        start.elapsed().as_secs_f64()
    );
    Ok(SampleRecord {
        id,
        case,
        low_stack,
        high_stack,
        low_topology,
        high_topology,
        low_compliance,
        high_compliance,
    })
}

fn same_case(a: &crate::cases::BoundaryCase, b: &crate::cases::BoundaryCase) -> bool {
    let q = |v: f64| v as f32;
    a.family == b.family
        && q(a.v) == q(b.v)
        && q(a.h) == q(b.h)
        && q(a.alpha) == q(b.alpha)
        && q(a.magnitude) == q(b.magnitude)
}

/// Writes every split file of `manifest` into `dir`, resuming after any
/// intact records already present. Normalizers are fitted on the training
/// split if the manifest does not carry them yet.
pub fn generate(
    dir: &Path,
    manifest: &mut DatasetManifest,
    opts: &GenerateOptions,
) -> Result<GenerateReport> {
    manifest.validate()?;
    std::fs::create_dir_all(dir)?;
    let norms = match manifest.normalizers {
        Some(n) => n,
        None => {
            let n = fit_normalizers(manifest, opts)?;
            manifest.normalizers = Some(n);
            n
        }
    };
    manifest.save(dir)?;

    let mut report = GenerateReport::default();
    let (lo, hi) = (manifest.r_lo, manifest.r_hi);
    for split in Split::ALL {
        let ids = manifest.splits.ids(split).to_vec();
        let path = dir.join(split.file_name());
        let existing = read_valid_prefix(&path, lo, hi);
        let keep = existing
            .iter()
            .zip(&ids)
            .take_while(|(r, &id)| {
                manifest
                    .case(id)
                    .map(|c| same_case(&r.case, c))
                    .unwrap_or(false)
            })
            .count();
        for (r, &id) in existing.iter().zip(&ids).take(keep) {
            if !r.is_valid() {
                report.invalid.push(id);
            }
        }
        let mut writer = if keep > 0 {
            RecordWriter::resume(&path, lo, hi, keep)?
        } else {
            RecordWriter::create(&path, lo, hi)?
        };
        if keep > 0 {
            log::info!("{split}: {keep} of {} records already on disk", ids.len());
        }
        report.skipped += keep;
        for batch in ids[keep..].chunks(opts.batch.max(1)) {
            let records = map_ids(batch, opts.parallel, |id| make_record(manifest, &norms, id));
            for record in records {
                let record = record?;
                if !record.is_valid() {
                    report.invalid.push(record.id);
                }
                writer.append(&record)?;
                report.generated += 1;
            }
        }
        writer.finish()?;
    }
    report.invalid.sort_unstable();
    manifest.invalid = report.invalid.clone();
    manifest.record_count = manifest.splits.total();
    manifest.save(dir)?;
    Ok(report)
}
