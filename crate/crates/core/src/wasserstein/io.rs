//! Sample persistence.
//!
//! CSV layout: a header row `dim,count`, one row with those two values, then
//! `count` rows of `dim` reals. The binary layout is the same information as
//! little-endian `u64 dim`, `u64 count`, then `dim * count` `f64`s.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{SampleMeta, SampleSet};
use crate::error::{Error, Result};

pub fn write_csv(samples: &SampleSet, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_path(path)?;
    w.write_record(["dim", "count"])?;
    w.write_record([samples.dim().to_string(), samples.len().to_string()])?;
    for p in samples.points() {
        w.write_record(p.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<SampleSet> {
    let mut r = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut records = r.records();
    let shape = records
        .next()
        .ok_or_else(|| parse_err(2, "missing shape row".into()))??;
    let field = |i: usize| -> Result<usize> {
        shape
            .get(i)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| parse_err(2, "shape row must be `dim,count`".into()))
    };
    let (dim, count) = (field(0)?, field(1)?);
    let mut data = Vec::with_capacity(dim * count);
    for (k, rec) in records.enumerate() {
        let rec = rec?;
        if rec.len() != dim {
            return Err(parse_err(k + 3, format!("expected {dim} values, found {}", rec.len())));
        }
        for cell in rec.iter() {
            data.push(
                cell.trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(k + 3, format!("`{cell}`: {e}")))?,
            );
        }
    }
    if data.len() != dim * count {
        return Err(parse_err(
            0,
            format!("expected {count} rows, found {}", data.len() / dim.max(1)),
        ));
    }
    SampleSet::from_flat(dim, data, SampleMeta::default())
}

pub fn write_samples(samples: &SampleSet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(samples.dim() as u64).to_le_bytes())?;
    w.write_all(&(samples.len() as u64).to_le_bytes())?;
    for v in samples.as_flat() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples(path: &Path) -> Result<SampleSet> {
    let mut r = BufReader::new(File::open(path)?);
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let dim = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let count = u64::from_le_bytes(word) as usize;
    let mut data = Vec::with_capacity(dim * count);
    for _ in 0..dim * count {
        r.read_exact(&mut word)?;
        data.push(f64::from_le_bytes(word));
    }
    SampleSet::from_flat(dim, data, SampleMeta::default())
}
