//! Dataset enumeration, splits, nested training subsets, record files and
//! generation.

mod generate;
mod io;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cases::{BoundaryCase, Family, DEFAULT_MAGNITUDE};
use crate::error::{invalid, Error, Result};
use crate::fields::Normalizer;
use crate::simp::SimpParams;

pub use generate::{generate, GenerateOptions, GenerateReport};
pub use io::{
    read_records, read_valid_prefix, record_size, RecordWriter, SampleRecord, DATASET_MAGIC,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// Segment counts for volume fraction, load position and load angle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub volume: usize,
    pub position: usize,
    pub angle: usize,
}

impl GridSpec {
    pub const FULL_SEEN: GridSpec = GridSpec {
        volume: 20,
        position: 10,
        angle: 10,
    };
    pub const FULL_UNSEEN: GridSpec = GridSpec {
        volume: 10,
        position: 10,
        angle: 10,
    };

    pub fn count(&self) -> usize {
        self.volume * self.position * self.angle
    }
}

fn midpoints(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64)
}

/// Cases of one family at segment midpoints, ordered by volume fraction,
/// then load position, then angle.
pub fn enumerate_family(
    family: Family,
    grid: &GridSpec,
    magnitude: f64,
) -> Result<Vec<BoundaryCase>> {
    if grid.count() == 0 {
        return Err(invalid(format!(
            "grid spec needs positive counts, got {grid:?}"
        )));
    }
    let mut out = Vec::with_capacity(grid.count());
    for v in midpoints(0.3, 0.6, grid.volume) {
        for h in midpoints(0.0, 1.0, grid.position) {
            for alpha in midpoints(0.0, 360.0, grid.angle) {
                out.push(BoundaryCase {
                    family,
                    v,
                    h,
                    alpha,
                    magnitude,
                });
            }
        }
    }
    Ok(out)
}

pub fn enumerate_cases(
    families: &[Family],
    grid: &GridSpec,
    magnitude: f64,
) -> Result<Vec<BoundaryCase>> {
    let mut out = Vec::new();
    for &f in families {
        out.extend(enumerate_family(f, grid, magnitude)?);
    }
    Ok(out)
}

/// Per-family (train, test) counts for seen families, scaled from 1500/200
/// out of 2000 and rounded down.
pub fn seen_counts(per_family: usize) -> (usize, usize) {
    (per_family * 1500 / 2000, per_family * 200 / 2000)
}

/// Per-family test count for unseen families, scaled from 500 out of 1000.
pub fn unseen_counts(per_family: usize) -> usize {
    per_family * 500 / 1000
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    SeenTest,
    UnseenTest,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::SeenTest, Split::UnseenTest];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::SeenTest => "seen-test",
            Split::UnseenTest => "unseen-test",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.bin",
            Split::SeenTest => "seen_test.bin",
            Split::UnseenTest => "unseen_test.bin",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "seen-test" | "seen_test" | "seen" => Ok(Split::SeenTest),
            "unseen-test" | "unseen_test" | "unseen" => Ok(Split::UnseenTest),
            _ => Err(invalid(format!(
                "unknown split {s:?}, expected train, seen-test or unseen-test"
            ))),
        }
    }
}

/// Case ids (indices into the manifest case list) per split, ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<u32>,
    pub seen_test: Vec<u32>,
    pub unseen_test: Vec<u32>,
}

impl Splits {
    pub fn ids(&self, split: Split) -> &[u32] {
        match split {
            Split::Train => &self.train,
            Split::SeenTest => &self.seen_test,
            Split::UnseenTest => &self.unseen_test,
        }
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.seen_test.len() + self.unseen_test.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizers {
    pub low: Normalizer,
    pub high: Normalizer,
}

/// Everything needed to generate a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub r_lo: usize,
    pub r_hi: usize,
    pub seen_families: Vec<Family>,
    pub unseen_families: Vec<Family>,
    pub seen_grid: GridSpec,
    pub unseen_grid: GridSpec,
    pub train_per_family: Option<usize>,
    pub test_per_family: Option<usize>,
    pub unseen_test_per_family: Option<usize>,
    pub magnitude: f64,
    pub seed: u64,
    /// SIMP settings at the low resolution. The filter radius scales with
    /// resolution at the high one.
    pub simp: SimpParams,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            r_lo: 64,
            r_hi: 128,
            seen_families: Family::ALL[..6].to_vec(),
            unseen_families: Family::ALL[6..].to_vec(),
            seen_grid: GridSpec::FULL_SEEN,
            unseen_grid: GridSpec::FULL_UNSEEN,
            train_per_family: None,
            test_per_family: None,
            unseen_test_per_family: None,
            magnitude: DEFAULT_MAGNITUDE,
            seed: 0,
            simp: SimpParams::default(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.r_lo == 0 || self.r_hi != 2 * self.r_lo {
            return Err(invalid(format!(
                "resolutions must satisfy r_hi = 2 r_lo, got {} and {}",
                self.r_lo, self.r_hi
            )));
        }
        for f in &self.seen_families {
            if self.unseen_families.contains(f) {
                return Err(invalid(format!(
                    "family {f} is listed as both seen and unseen"
                )));
            }
        }
        self.simp.validate()
    }

    pub fn simp_for(&self, resolution: usize) -> SimpParams {
        SimpParams {
            rmin: self.simp.rmin * resolution as f64 / self.r_lo as f64,
            ..self.simp
        }
    }

    fn seen_split_counts(&self) -> (usize, usize) {
        let (train, test) = seen_counts(self.seen_grid.count());
        (
            self.train_per_family.unwrap_or(train),
            self.test_per_family.unwrap_or(test),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub r_lo: usize,
    pub r_hi: usize,
    pub seed: u64,
    pub seen_families: Vec<Family>,
    pub unseen_families: Vec<Family>,
    pub family_descriptions: BTreeMap<String, String>,
    pub simp_low: SimpParams,
    pub simp_high: SimpParams,
    pub cases: Vec<BoundaryCase>,
    pub splits: Splits,
    pub normalizers: Option<Normalizers>,
    pub record_count: usize,
    /// Ids whose optimization failed; their records carry NaN compliances.
    pub invalid: Vec<u32>,
}

impl DatasetManifest {
    pub fn case(&self, id: u32) -> Result<&BoundaryCase> {
        self.cases
            .get(id as usize)
            .ok_or_else(|| invalid(format!("case id {id} out of range")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.r_lo == 0 || self.r_hi != 2 * self.r_lo {
            return Err(invalid("manifest resolutions must satisfy r_hi = 2 r_lo"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for split in Split::ALL {
            let ids = self.splits.ids(split);
            if ids.windows(2).any(|w| w[0] >= w[1]) {
                return Err(invalid(format!("{split} ids are not strictly ascending")));
            }
            for &id in ids {
                self.case(id)?;
                if !seen.insert(id) {
                    return Err(invalid(format!("case {id} appears in more than one split")));
                }
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let m: Self = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        std::fs::write(&tmp, serde_json::to_string_pretty(self)?)?;
        std::fs::rename(tmp, dir.join(MANIFEST_FILE))?;
        Ok(())
    }
}

/// Chooses `counts[k].0` train and `counts[k].1` test ids per family group
/// without replacement.
fn draw(
    groups: &[(Family, Vec<u32>)],
    train: usize,
    test: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<u32>, Vec<u32>)> {
    let (mut tr, mut te) = (Vec::new(), Vec::new());
    for (family, ids) in groups {
        if ids.len() < train + test {
            return Err(invalid(format!(
                "family {family} has {} cases, fewer than the {train} train + {test} test requested",
                ids.len()
            )));
        }
        let mut shuffled = ids.clone();
        shuffled.shuffle(rng);
        tr.extend_from_slice(&shuffled[..train]);
        te.extend_from_slice(&shuffled[train..train + test]);
    }
    tr.sort_unstable();
    te.sort_unstable();
    Ok((tr, te))
}

fn group_by_family(cases: &[BoundaryCase], families: &[Family]) -> Vec<(Family, Vec<u32>)> {
    families
        .iter()
        .map(|&f| {
            (
                f,
                (0..cases.len() as u32)
                    .filter(|&i| cases[i as usize].family == f)
                    .collect(),
            )
        })
        .collect()
}

/// Random per-family split memberships, reproducible from `seed`.
pub fn split(
    cases: &[BoundaryCase],
    seen: &[Family],
    unseen: &[Family],
    seen_counts: (usize, usize),
    unseen_test: usize,
    seed: u64,
) -> Result<Splits> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train, seen_test) = draw(
        &group_by_family(cases, seen),
        seen_counts.0,
        seen_counts.1,
        &mut rng,
    )?;
    let (_, unseen_test) = draw(&group_by_family(cases, unseen), 0, unseen_test, &mut rng)?;
    Ok(Splits {
        train,
        seen_test,
        unseen_test,
    })
}

/// Enumerates and splits the cases of `spec`. Normalizers are fitted later
/// during generation.
pub fn plan(spec: &DatasetSpec) -> Result<DatasetManifest> {
    spec.validate()?;
    let mut cases = enumerate_cases(&spec.seen_families, &spec.seen_grid, spec.magnitude)?;
    if !spec.unseen_families.is_empty() {
        cases.extend(enumerate_cases(
            &spec.unseen_families,
            &spec.unseen_grid,
            spec.magnitude,
        )?);
    }
    let unseen_test = spec
        .unseen_test_per_family
        .unwrap_or(unseen_counts(spec.unseen_grid.count()));
    let splits = split(
        &cases,
        &spec.seen_families,
        &spec.unseen_families,
        spec.seen_split_counts(),
        unseen_test,
        spec.seed,
    )?;
    let family_descriptions = spec
        .seen_families
        .iter()
        .chain(&spec.unseen_families)
        .map(|f| (f.to_string(), f.description().to_string()))
        .collect();
    Ok(DatasetManifest {
        version: MANIFEST_VERSION,
        r_lo: spec.r_lo,
        r_hi: spec.r_hi,
        seed: spec.seed,
        seen_families: spec.seen_families.clone(),
        unseen_families: spec.unseen_families.clone(),
        family_descriptions,
        simp_low: spec.simp_for(spec.r_lo),
        simp_high: spec.simp_for(spec.r_hi),
        cases,
        splits,
        normalizers: None,
        record_count: 0,
        invalid: Vec::new(),
    })
}

/// Successively smaller training subsets, each a random subset of the
/// previous one. Kept ids are balanced over families: each family keeps the
/// same count, up to the ids it has, and leftover slots go round-robin in
/// family order.
pub fn nested_subsets(
    train: &[u32],
    family_of: impl Fn(u32) -> Family,
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<Vec<u32>>> {
    if sizes.windows(2).any(|w| w[0] <= w[1]) {
        return Err(invalid(format!(
            "subset sizes must be strictly decreasing, got {sizes:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current: Vec<u32> = train.to_vec();
    current.sort_unstable();
    let mut out = Vec::with_capacity(sizes.len());
    for &size in sizes {
        if size > current.len() {
            return Err(invalid(format!(
                "subset size {size} exceeds its parent of {}",
                current.len()
            )));
        }
        let mut groups: BTreeMap<Family, Vec<u32>> = BTreeMap::new();
        for &id in &current {
            groups.entry(family_of(id)).or_default().push(id);
        }
        let counts: Vec<usize> = groups.values().map(Vec::len).collect();
        let keep = balanced_keep(&counts, size);
        let mut dropped = std::collections::BTreeSet::new();
        for (ids, k) in groups.values().zip(keep) {
            let mut shuffled = ids.clone();
            shuffled.shuffle(&mut rng);
            dropped.extend(shuffled[k..].iter().copied());
        }
        current.retain(|id| !dropped.contains(id));
        out.push(current.clone());
    }
    Ok(out)
}

// Water-filling: size <= sum(counts) is checked by the caller.
fn balanced_keep(counts: &[usize], size: usize) -> Vec<usize> {
    let mut keep = vec![0; counts.len()];
    let mut left = size;
    while left > 0 {
        for (k, &n) in keep.iter_mut().zip(counts) {
            if left == 0 {
                break;
            }
            if *k < n {
                *k += 1;
                left -= 1;
            }
        }
    }
    keep
}

/// Reads one split of a generated dataset. Records get their manifest ids
/// and exact case parameters; the file must hold exactly the split.
pub fn load_split(
    dir: &Path,
    manifest: &DatasetManifest,
    split: Split,
) -> Result<Vec<SampleRecord>> {
    let ids = manifest.splits.ids(split);
    let path = dir.join(split.file_name());
    let mut records = read_records(&path, manifest.r_lo, manifest.r_hi)
        .map_err(|e| invalid(format!("{}: {e} (run generation first?)", path.display())))?;
    if records.len() != ids.len() {
        return Err(Error::Format(format!(
            "{} holds {} records, the manifest lists {}; generation is incomplete",
            path.display(),
            records.len(),
            ids.len()
        )));
    }
    for (r, &id) in records.iter_mut().zip(ids) {
        let case = manifest.case(id)?;
        if r.case.family != case.family || r.case.v as f32 != case.v as f32 {
            return Err(Error::Format(format!(
                "{}: record for case {id} does not match the manifest",
                path.display()
            )));
        }
        r.id = id;
        r.case = *case;
    }
    Ok(records)
}
