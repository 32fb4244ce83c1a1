//! Line-delimited dataset files and seeded sampling.
//!
//! A dataset file holds one JSON object per line with the keys `id`,
//! `image_ref`, `question`, `answers`, `choices` (optional),
//! `question_type` (optional) and `split`. Blank lines are ignored.
//!
//! Sampling uses SplitMix64 (Steele, Lea & Flood 2014) seeded with the user
//! seed, bounded draws by rejection sampling, and a partial Fisher-Yates
//! shuffle over instance indices. The procedure is fully specified below so
//! the same selection can be reproduced from any language.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::instance::{BenchmarkInstance, Setting, ValidationError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line} (id {id:?}): {source}")]
    Invalid {
        line: usize,
        id: String,
        #[source]
        source: ValidationError,
    },
    #[error("cannot sample {requested} instances from {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("sample size must be positive")]
    EmptySample,
}

/// Loads and validates every record, preserving file order.
pub fn load_dataset(path: &Path, setting: Setting) -> Result<Vec<BenchmarkInstance>, DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let inst = parse_record(&line, line_no)?;
        inst.validate(setting).map_err(|source| DatasetError::Invalid {
            line: line_no,
            id: inst.id.clone(),
            source,
        })?;
        out.push(inst);
    }
    Ok(out)
}

fn parse_record(line: &str, line_no: usize) -> Result<BenchmarkInstance, DatasetError> {
    serde_json::from_str(line).map_err(|e| DatasetError::Malformed { line: line_no, message: e.to_string() })
}

/// Writes instances back in the on-disk format.
pub fn write_dataset(path: &Path, instances: &[BenchmarkInstance]) -> Result<(), DatasetError> {
    let io_err = |source| DatasetError::Io { path: path.to_path_buf(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for inst in instances {
        let line = serde_json::to_string(inst).expect("instances always serialize");
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

/// Result of a non-fatal pass over a dataset file.
#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub records: usize,
    pub errors: Vec<Diagnostic>,
    pub warnings: Vec<Diagnostic>,
}

impl Diagnostics {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Like [`load_dataset`] but keeps going after a bad line and also flags
/// duplicate ids (as warnings).
pub fn validate_dataset(path: &Path, setting: Setting) -> Result<Diagnostics, DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    let mut diag = Diagnostics::default();
    let mut first_seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        diag.records += 1;
        let inst = match parse_record(&line, line_no) {
            Ok(i) => i,
            Err(e) => {
                diag.errors.push(Diagnostic { line: line_no, message: e.to_string() });
                continue;
            }
        };
        if let Err(e) = inst.validate(setting) {
            diag.errors.push(Diagnostic { line: line_no, message: format!("id {:?}: {e}", inst.id) });
        }
        if let Some(prev) = first_seen.get(&inst.id) {
            diag.warnings.push(Diagnostic {
                line: line_no,
                message: format!("duplicate id {:?} (first seen on line {prev})", inst.id),
            });
        } else {
            first_seen.insert(inst.id.clone(), line_no);
        }
    }
    Ok(diag)
}

/// SplitMix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform integer in `0..bound`; draws below `2^64 mod bound` are rejected.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let r = self.next_u64();
            if r >= threshold {
                return r % bound;
            }
        }
    }
}

/// Indices selected by [`sample`], in selection order.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>, DatasetError> {
    if n == 0 {
        return Err(DatasetError::EmptySample);
    }
    if n > len {
        return Err(DatasetError::SampleTooLarge { requested: n, available: len });
    }
    let mut rng = SplitMix64::new(seed);
    let mut idx: Vec<usize> = (0..len).collect();
    for i in 0..n {
        let j = i + rng.below((len - i) as u64) as usize;
        idx.swap(i, j);
    }
    idx.truncate(n);
    Ok(idx)
}

/// Draws `n` distinct instances; a pure function of (order, n, seed).
pub fn sample(instances: &[BenchmarkInstance], n: usize, seed: u64) -> Result<Vec<BenchmarkInstance>, DatasetError> {
    Ok(sample_indices(instances.len(), n, seed)?.into_iter().map(|i| instances[i].clone()).collect())
}
