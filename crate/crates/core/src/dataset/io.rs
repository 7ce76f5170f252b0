use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::cases::{BoundaryCase, Family};
use crate::error::{Error, Result};
use crate::fields::{ConditionStack, CHANNELS};
use crate::grid::Grid;

pub const DATASET_MAGIC: &[u8; 8] = b"CCDMDS01";
const HEADER: usize = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    /// Case id from the manifest; records read straight from a file get
    /// their position in the file.
    pub id: u32,
    pub case: BoundaryCase,
    pub low_stack: ConditionStack,
    pub high_stack: ConditionStack,
    pub low_topology: Grid,
    pub high_topology: Grid,
    pub low_compliance: f64,
    pub high_compliance: f64,
}

impl SampleRecord {
    pub fn is_valid(&self) -> bool {
        self.low_compliance.is_finite() && self.high_compliance.is_finite()
    }

    pub fn resolutions(&self) -> (usize, usize) {
        (self.low_topology.rows(), self.high_topology.rows())
    }

    pub fn encode(&self) -> Vec<u8> {
        let (lo, hi) = self.resolutions();
        let mut out = Vec::with_capacity(record_size(lo, hi));
        out.push(self.case.family.id());
        for v in [
            self.case.v,
            self.case.h,
            self.case.alpha,
            self.case.magnitude,
        ] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let mut put = |vals: Vec<f32>| {
            vals.iter()
                .for_each(|v| out.extend_from_slice(&v.to_le_bytes()))
        };
        put(self.low_stack.to_f32());
        put(self.high_stack.to_f32());
        put(self.low_topology.to_f32());
        put(self.high_topology.to_f32());
        put(vec![
            self.low_compliance as f32,
            self.high_compliance as f32,
        ]);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8], r_lo: usize, r_hi: usize, id: u32) -> Result<Self> {
        let size = record_size(r_lo, r_hi);
        if bytes.len() != size {
            return Err(Error::Format(format!(
                "record {id}: expected {size} bytes, got {}",
                bytes.len()
            )));
        }
        let body = &bytes[..size - 4];
        let stored = u32::from_le_bytes(bytes[size - 4..].try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Format(format!("record {id}: checksum mismatch")));
        }
        let floats: Vec<f32> = body[1..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let (lo2, hi2) = (r_lo * r_lo, r_hi * r_hi);
        let mut at = 4;
        let mut take = |n: usize| {
            let s = &floats[at..at + n];
            at += n;
            s
        };
        let case = BoundaryCase {
            family: Family::from_id(body[0])?,
            v: f64::from(floats[0]),
            h: f64::from(floats[1]),
            alpha: f64::from(floats[2]),
            magnitude: f64::from(floats[3]),
        };
        let low_stack = ConditionStack::from_f32(r_lo, r_lo, take(CHANNELS * lo2))?;
        let high_stack = ConditionStack::from_f32(r_hi, r_hi, take(CHANNELS * hi2))?;
        let low_topology = Grid::from_f32(r_lo, r_lo, take(lo2))?;
        let high_topology = Grid::from_f32(r_hi, r_hi, take(hi2))?;
        let c = take(2);
        Ok(Self {
            id,
            case,
            low_stack,
            high_stack,
            low_topology,
            high_topology,
            low_compliance: f64::from(c[0]),
            high_compliance: f64::from(c[1]),
        })
    }
}

/// Bytes per record, including the trailing checksum.
pub fn record_size(r_lo: usize, r_hi: usize) -> usize {
    let (lo2, hi2) = (r_lo * r_lo, r_hi * r_hi);
    1 + 16 + 4 * ((CHANNELS + 1) * (lo2 + hi2) + 2) + 4
}

/// Appends records to a split file, keeping the header count current.
pub struct RecordWriter {
    file: File,
    count: u32,
    r_lo: usize,
    r_hi: usize,
}

impl RecordWriter {
    pub fn create(path: &Path, r_lo: usize, r_hi: usize) -> Result<Self> {
        let mut file = File::create(path)?;
        file.write_all(DATASET_MAGIC)?;
        file.write_all(&0u32.to_le_bytes())?;
        Ok(Self {
            file,
            count: 0,
            r_lo,
            r_hi,
        })
    }

    /// Reopens an existing file, keeping its first `keep` records.
    pub fn resume(path: &Path, r_lo: usize, r_hi: usize, keep: usize) -> Result<Self> {
        let file = OpenOptions::new().read(true).write(true).open(path)?;
        file.set_len((HEADER + keep * record_size(r_lo, r_hi)) as u64)?;
        let mut w = Self {
            file,
            count: keep as u32,
            r_lo,
            r_hi,
        };
        w.write_count()?;
        w.file.seek(SeekFrom::End(0))?;
        Ok(w)
    }

    fn write_count(&mut self) -> Result<()> {
        self.file.seek(SeekFrom::Start(8))?;
        self.file.write_all(&self.count.to_le_bytes())?;
        Ok(())
    }

    pub fn append(&mut self, record: &SampleRecord) -> Result<()> {
        if record.resolutions() != (self.r_lo, self.r_hi) {
            return Err(Error::Shape {
                op: "append",
                detail: format!(
                    "record {:?} in a {}/{} file",
                    record.resolutions(),
                    self.r_lo,
                    self.r_hi
                ),
            });
        }
        self.file.seek(SeekFrom::End(0))?;
        self.file.write_all(&record.encode())?;
        self.count += 1;
        self.write_count()?;
        self.file.seek(SeekFrom::End(0))?;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count as usize
    }

    pub fn finish(mut self) -> Result<()> {
        self.file.flush()?;
        self.file.sync_all()?;
        Ok(())
    }
}

fn read_header(bytes: &[u8]) -> Result<usize> {
    if bytes.len() < HEADER || &bytes[..8] != DATASET_MAGIC {
        return Err(Error::Format("not a dataset file (bad magic)".into()));
    }
    Ok(u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize)
}

/// Reads every record, failing on any checksum or length problem.
pub fn read_records(path: &Path, r_lo: usize, r_hi: usize) -> Result<Vec<SampleRecord>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let count = read_header(&bytes)?;
    let size = record_size(r_lo, r_hi);
    if bytes.len() != HEADER + count * size {
        return Err(Error::Format(format!(
            "{}: header declares {count} records but the file holds {} bytes",
            path.display(),
            bytes.len()
        )));
    }
    (0..count)
        .map(|i| {
            SampleRecord::decode(
                &bytes[HEADER + i * size..HEADER + (i + 1) * size],
                r_lo,
                r_hi,
                i as u32,
            )
        })
        .collect()
}

/// Reads records up to the first damaged or missing one. Returns an empty
/// list for a missing or unreadable file.
pub fn read_valid_prefix(path: &Path, r_lo: usize, r_hi: usize) -> Vec<SampleRecord> {
    let Ok(bytes) = std::fs::read(path) else {
        return Vec::new();
    };
    let Ok(count) = read_header(&bytes) else {
        return Vec::new();
    };
    let size = record_size(r_lo, r_hi);
    let mut out = Vec::new();
    for i in 0..count {
        let (a, b) = (HEADER + i * size, HEADER + (i + 1) * size);
        if b > bytes.len() {
            break;
        }
        match SampleRecord::decode(&bytes[a..b], r_lo, r_hi, i as u32) {
            Ok(r) => out.push(r),
            Err(_) => break,
        }
    }
    out
}
