//! Replay access traces: the ordered `(batch, slot, reuse)` records one run's
//! sampler produced, shared between training and the cache simulator.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic    8 bytes "ACMTRCE\0"
//! version  u32 = 1
//! mode     u8 (0 uniform, 1 prioritized, 2 accmer), 3 zero bytes
//! d        u32 buffer capacity
//! b        u32 batch size
//! count    u64 number of records
//! count × { batch:u64 slot:u32 reuse:u8 }
//! ```
//!
//! The CSV form has the header `batch,slot,reuse` and one record per line,
//! `reuse` being 0 or 1. Lines starting with `#` are ignored.

use std::io::{self, BufRead, BufReader, Read, Write};

use thiserror::Error;

use crate::config::SamplerMode;
use crate::sampler::SampleBatch;

const MAGIC: &[u8; 8] = b"ACMTRCE\0";
const VERSION: u32 = 1;
pub const CSV_HEADER: &str = "batch,slot,reuse";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("malformed trace: {0}")]
    Malformed(String),
    #[error("slot {slot} out of range for buffer capacity {capacity}")]
    SlotOutOfRange { slot: u32, capacity: u32 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Access {
    pub batch: u64,
    pub slot: u32,
    pub reuse: bool,
}

/// Ordered access records of one sampler run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessTrace {
    pub mode: SamplerMode,
    pub capacity: u32,
    pub batch_size: u32,
    pub records: Vec<Access>,
}

impl AccessTrace {
    pub fn new(mode: SamplerMode, capacity: usize, batch_size: usize) -> Self {
        AccessTrace {
            mode,
            capacity: capacity as u32,
            batch_size: batch_size as u32,
            records: Vec::new(),
        }
    }

    /// Number of sampling calls recorded.
    pub fn batches(&self) -> u64 {
        self.records.last().map_or(0, |r| r.batch + 1)
    }

    /// Append one batch: reuse slots first, then fresh slots.
    pub fn record(&mut self, batch_number: u64, batch: &SampleBatch) {
        self.records.extend(batch.reuse_indices.iter().map(|&s| Access {
            batch: batch_number,
            slot: s as u32,
            reuse: true,
        }));
        self.records.extend(batch.fresh_indices.iter().map(|&s| Access {
            batch: batch_number,
            slot: s as u32,
            reuse: false,
        }));
    }

    pub fn slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.records.iter().map(|r| r.slot as usize)
    }

    fn check(&self) -> Result<(), TraceError> {
        for r in &self.records {
            if r.slot >= self.capacity {
                return Err(TraceError::SlotOutOfRange {
                    slot: r.slot,
                    capacity: self.capacity,
                });
            }
        }
        Ok(())
    }

    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<(), TraceError> {
        let mut b = Vec::with_capacity(32 + self.records.len() * 13);
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&[self.mode.code(), 0, 0, 0]);
        b.extend_from_slice(&self.capacity.to_le_bytes());
        b.extend_from_slice(&self.batch_size.to_le_bytes());
        b.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            b.extend_from_slice(&r.batch.to_le_bytes());
            b.extend_from_slice(&r.slot.to_le_bytes());
            b.push(r.reuse as u8);
        }
        out.write_all(&b)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self, TraceError> {
        let mut data = Vec::new();
        input.read_to_end(&mut data)?;
        let bad = |m: &str| TraceError::Malformed(m.to_string());
        if data.len() < 32 || &data[..8] != MAGIC {
            return Err(bad("missing trace header"));
        }
        let u32_at = |k: usize| u32::from_le_bytes(data[k..k + 4].try_into().unwrap());
        let version = u32_at(8);
        if version != VERSION {
            return Err(TraceError::Malformed(format!("unsupported version {version}")));
        }
        let mode = SamplerMode::from_code(data[12]).ok_or_else(|| bad("unknown sampler mode"))?;
        let capacity = u32_at(16);
        let batch_size = u32_at(20);
        let count = u64::from_le_bytes(data[24..32].try_into().unwrap());
        let body = &data[32..];
        if count.checked_mul(13) != Some(body.len() as u64) {
            return Err(bad("record count does not match file length"));
        }
        let records = body
            .chunks_exact(13)
            .map(|c| {
                let reuse = match c[12] {
                    0 => false,
                    1 => true,
                    _ => return Err(bad("reuse flag must be 0 or 1")),
                };
                Ok(Access {
                    batch: u64::from_le_bytes(c[..8].try_into().unwrap()),
                    slot: u32::from_le_bytes(c[8..12].try_into().unwrap()),
                    reuse,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let t = AccessTrace {
            mode,
            capacity,
            batch_size,
            records,
        };
        t.check()?;
        Ok(t)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), TraceError> {
        writeln!(out, "{CSV_HEADER}")?;
        for r in &self.records {
            writeln!(out, "{},{},{}", r.batch, r.slot, r.reuse as u8)?;
        }
        Ok(())
    }

    /// Parse the CSV form. Mode and sizes are not stored in CSV; capacity is
    /// taken as one past the largest slot unless given.
    pub fn read_csv<R: Read>(input: R, mode: SamplerMode, capacity: Option<u32>) -> Result<Self, TraceError> {
        let mut records = Vec::new();
        let mut seen_header = false;
        for (i, line) in BufReader::new(input).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !seen_header {
                seen_header = true;
                if line == CSV_HEADER {
                    continue;
                }
            }
            let bad = || TraceError::Malformed(format!("line {}: {line:?}", i + 1));
            let mut f = line.split(',').map(str::trim);
            let batch = f.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let slot = f.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let reuse = match f.next() {
                Some("0") => false,
                Some("1") => true,
                _ => return Err(bad()),
            };
            if f.next().is_some() {
                return Err(bad());
            }
            records.push(Access { batch, slot, reuse });
        }
        let capacity = capacity.unwrap_or_else(|| records.iter().map(|r| r.slot + 1).max().unwrap_or(0));
        let batch_size = records.iter().filter(|r| r.batch == 0).count() as u32;
        let t = AccessTrace {
            mode,
            capacity,
            batch_size,
            records,
        };
        t.check()?;
        Ok(t)
    }

    /// Read either form, detected by the binary magic.
    pub fn read_any(bytes: &[u8]) -> Result<Self, TraceError> {
        if bytes.starts_with(MAGIC) {
            Self::read_binary(bytes)
        } else {
            Self::read_csv(bytes, SamplerMode::Uniform, None)
        }
    }
}
