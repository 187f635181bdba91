//! CIFAR-10 binary format.
//!
//! Each record is one label byte followed by 3072 pixel bytes: the red,
//! green and blue 32x32 planes in row-major order. The training split is
//! `data_batch_1.bin` .. `data_batch_5.bin`, the test split `test_batch.bin`,
//! 10000 records per file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;
pub const SIDE: usize = 32;
pub const IMAGE_BYTES: usize = CHANNELS * SIDE * SIDE;
pub const RECORD_BYTES: usize = IMAGE_BYTES + 1;
pub const RECORDS_PER_FILE: usize = 10_000;
pub const CLASSES: usize = 10;
pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

/// One undecoded record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawRecord {
    pub label: u8,
    pub pixels: Vec<u8>,
}

impl RawRecord {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RECORD_BYTES);
        out.push(self.label);
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Parses a batch file, which must hold exactly [`RECORDS_PER_FILE`] records.
pub fn read_batch_file(path: &Path) -> Result<Vec<RawRecord>> {
    if !path.is_file() {
        return Err(Error::MissingFile {
            path: path.to_path_buf(),
        });
    }
    let bytes = fs::read(path)?;
    let expected = (RECORDS_PER_FILE * RECORD_BYTES) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::FileSize {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    parse_records(path, &bytes)
}

fn parse_records(path: &Path, bytes: &[u8]) -> Result<Vec<RawRecord>> {
    bytes
        .chunks_exact(RECORD_BYTES)
        .enumerate()
        .map(|(record, chunk)| {
            let label = chunk[0];
            if label as usize >= CLASSES {
                return Err(Error::BadLabel {
                    path: path.to_path_buf(),
                    record,
                    label,
                });
            }
            Ok(RawRecord {
                label,
                pixels: chunk[1..].to_vec(),
            })
        })
        .collect()
}

/// Accepts either the directory holding the batch files or its parent
/// containing the stock `cifar-10-batches-bin` folder.
pub fn resolve_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("cifar-10-batches-bin");
    if !dir.join(TEST_FILE).exists() && nested.join(TEST_FILE).exists() {
        nested
    } else {
        dir.to_path_buf()
    }
}

/// Reads the 50000 training and 10000 test records.
pub fn load_raw(dir: &Path) -> Result<(Vec<RawRecord>, Vec<RawRecord>)> {
    let dir = resolve_dir(dir);
    let mut train = Vec::with_capacity(TRAIN_FILES.len() * RECORDS_PER_FILE);
    for name in TRAIN_FILES {
        train.extend(read_batch_file(&dir.join(name))?);
    }
    let test = read_batch_file(&dir.join(TEST_FILE))?;
    Ok((train, test))
}

pub fn write_batch_file(path: &Path, records: &[RawRecord]) -> Result<()> {
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        if r.pixels.len() != IMAGE_BYTES {
            return Err(Error::InvalidArgument(format!(
                "record has {} pixel bytes, expected {IMAGE_BYTES}",
                r.pixels.len()
            )));
        }
        file.write_all(&r.to_bytes())?;
    }
    file.flush()?;
    Ok(())
}

/// Writes a directory in the stock layout; `train` must hold 50000 records and `test` 10000.
pub fn write_dir(dir: &Path, train: &[RawRecord], test: &[RawRecord]) -> Result<()> {
    if train.len() != TRAIN_FILES.len() * RECORDS_PER_FILE || test.len() != RECORDS_PER_FILE {
        return Err(Error::InvalidArgument(format!(
            "expected 50000 train and 10000 test records, got {} and {}",
            train.len(),
            test.len()
        )));
    }
    fs::create_dir_all(dir)?;
    for (name, chunk) in TRAIN_FILES.iter().zip(train.chunks(RECORDS_PER_FILE)) {
        write_batch_file(&dir.join(name), chunk)?;
    }
    write_batch_file(&dir.join(TEST_FILE), test)
}
