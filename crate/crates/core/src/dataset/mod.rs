//! Deterministic dataset generation, the on-disk format and in-memory access.

pub mod config;
pub mod format;
pub mod prep;
pub mod sample;

use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::DatasetConfig;
pub use format::{Header, FORMAT_VERSION, HEADER_LEN, RECORD_LEN};
pub use prep::{split, LabelNormalizer, Splits, StandardizationStats, REG_NAMES};
pub use sample::{generate_record, record_rng, sample_params, DatasetRecord};

use crate::error::{Error, Result};
use crate::waveform::{IqFrame, SignalParams, FRAME_LEN};

/// Records produced per parallel batch before they are written in order.
const CHUNK: u64 = 2048;

pub const GENERATOR: &str = concat!("radchar ", env!("CARGO_PKG_VERSION"));

/// JSON metadata written next to every dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format_version: u32,
    pub generator: String,
    pub seed: u64,
    pub config: DatasetConfig,
    pub sha256: String,
}

/// `<path>.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSummary {
    pub count: u64,
    pub class_counts: [u64; 5],
    pub bytes: u64,
    pub sha256: String,
}

fn encode(rec: &DatasetRecord, out: &mut Vec<u8>) {
    let f = &rec.frame;
    let iq = f.i.iter().zip(&f.q).map(|(&i, &q)| (i as f32, q as f32));
    format::encode_record(rec.index, &rec.params, iq, out);
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Streams the dataset to `w`. Output bytes do not depend on `workers`
/// (0 means one per core).
pub fn write_dataset<W: Write>(config: &DatasetConfig, workers: usize, w: &mut W) -> Result<GenerateSummary> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut hasher = Sha256::new();
    let header = Header::new(config.count).encode();
    w.write_all(&header)?;
    hasher.update(header);
    let mut class_counts = [0u64; 5];
    let mut start = 0;
    while start < config.count {
        let end = (start + CHUNK).min(config.count);
        let chunk: Vec<(u8, Vec<u8>)> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|i| {
                    let rec = generate_record(config, i)?;
                    let mut buf = Vec::with_capacity(RECORD_LEN);
                    encode(&rec, &mut buf);
                    Ok((rec.params.class.index(), buf))
                })
                .collect::<Result<_>>()
        })?;
        for (class, buf) in chunk {
            class_counts[class as usize] += 1;
            w.write_all(&buf)?;
            hasher.update(&buf);
        }
        start = end;
    }
    w.flush()?;
    Ok(GenerateSummary {
        count: config.count,
        class_counts,
        bytes: (HEADER_LEN as u64) + config.count * RECORD_LEN as u64,
        sha256: hex(&hasher.finalize()),
    })
}

/// Writes the dataset file and its `.json` sidecar.
pub fn generate(config: &DatasetConfig, path: &Path, workers: usize) -> Result<GenerateSummary> {
    config.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    let summary = write_dataset(config, workers, &mut w)?;
    w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    let sidecar = Sidecar {
        format_version: FORMAT_VERSION,
        generator: GENERATOR.into(),
        seed: config.seed,
        config: config.clone(),
        sha256: summary.sha256.clone(),
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serialises");
    std::fs::write(sidecar_path(path), json + "\n")?;
    Ok(summary)
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let text = std::fs::read_to_string(sidecar_path(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("sidecar: {e}")))
}

/// Reads the header and a single record without loading the whole file.
pub fn read_record(path: &Path, index: u64) -> Result<(Header, format::RawRecord)> {
    let mut f = File::open(path)?;
    let mut head = [0u8; HEADER_LEN];
    f.read_exact(&mut head)
        .map_err(|_| Error::Format("file is shorter than the header".into()))?;
    let header = Header::decode(&head)?;
    let expected = header
        .file_len()
        .ok_or_else(|| Error::Format(format!("record count {} is too large", header.count)))?;
    if f.metadata()?.len() != expected as u64 {
        return Err(Error::Format(format!("file size does not match the {} records in its header", header.count)));
    }
    if index >= header.count {
        return Err(Error::Config(format!("index {index} out of range, dataset has {} records", header.count)));
    }
    f.seek(SeekFrom::Start(HEADER_LEN as u64 + index * RECORD_LEN as u64))?;
    let mut buf = vec![0u8; RECORD_LEN];
    f.read_exact(&mut buf)?;
    let rec = format::decode_record(&buf)?;
    if rec.index != index {
        return Err(Error::Format(format!("record {index} carries index {}", rec.index)));
    }
    Ok((header, rec))
}

/// Encoded bytes of record `index` as `generate` would write them.
pub fn regenerate_record_bytes(config: &DatasetConfig, index: u64) -> Result<Vec<u8>> {
    let rec = generate_record(config, index)?;
    let mut buf = Vec::with_capacity(RECORD_LEN);
    encode(&rec, &mut buf);
    Ok(buf)
}

/// A dataset held in memory with frames in planar `[I; 512] ++ [Q; 512]` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    params: Vec<SignalParams>,
    iq: Vec<f32>,
    fingerprint: String,
}

pub const FRAME_VALUES: usize = 2 * FRAME_LEN;

impl Dataset {
    /// Parses and validates a complete dataset file.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = Header::decode(bytes)?;
        let expected = header
            .file_len()
            .ok_or_else(|| Error::Format(format!("record count {} is too large", header.count)))?;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "file is {} bytes but header implies {expected}",
                bytes.len()
            )));
        }
        let n = header.count as usize;
        let mut params = Vec::with_capacity(n);
        let mut iq = Vec::with_capacity(n * FRAME_VALUES);
        for (k, rec) in bytes[HEADER_LEN..].chunks_exact(RECORD_LEN).enumerate() {
            let raw = format::decode_record(rec)?;
            if raw.index != k as u64 {
                return Err(Error::Format(format!("record {k} carries index {}", raw.index)));
            }
            params.push(raw.params);
            iq.extend_from_slice(&raw.planar);
        }
        Ok(Self {
            params,
            iq,
            fingerprint: hex(&Sha256::digest(bytes)),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Builds a dataset from in-memory records, renumbering them `0..n`.
    pub fn from_records(records: &[DatasetRecord]) -> Self {
        let mut bytes = Header::new(records.len() as u64).encode().to_vec();
        for (k, r) in records.iter().enumerate() {
            let r = DatasetRecord {
                index: k as u64,
                ..r.clone()
            };
            encode(&r, &mut bytes);
        }
        Self::from_bytes(&bytes).expect("encoded records decode")
    }

    /// The file image of this dataset.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Header::new(self.len() as u64).encode().to_vec();
        out.reserve(self.len() * RECORD_LEN);
        for k in 0..self.len() {
            let f = self.planar(k);
            let iq = f[..FRAME_LEN].iter().copied().zip(f[FRAME_LEN..].iter().copied());
            format::encode_record(k as u64, &self.params[k], iq, &mut out);
        }
        out
    }

    /// Copies the given records into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut bytes = Header::new(indices.len() as u64).encode().to_vec();
        for (k, &i) in indices.iter().enumerate() {
            let f = self.planar(i);
            let iq = f[..FRAME_LEN].iter().copied().zip(f[FRAME_LEN..].iter().copied());
            format::encode_record(k as u64, &self.params[i], iq, &mut bytes);
        }
        Self::from_bytes(&bytes).expect("re-encoded records decode")
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self, k: usize) -> &SignalParams {
        &self.params[k]
    }

    pub fn all_params(&self) -> &[SignalParams] {
        &self.params
    }

    /// Planar frame `k`: 512 I values then 512 Q values.
    pub fn planar(&self, k: usize) -> &[f32] {
        &self.iq[k * FRAME_VALUES..(k + 1) * FRAME_VALUES]
    }

    pub fn frame(&self, k: usize) -> IqFrame {
        let f = self.planar(k);
        IqFrame {
            i: f[..FRAME_LEN].iter().map(|&v| v as f64).collect(),
            q: f[FRAME_LEN..].iter().map(|&v| v as f64).collect(),
        }
    }

    /// Hex SHA-256 of the file image.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn in_memory_generation_round_trips() {
        let cfg = DatasetConfig::with_count_seed(5, 9);
        let mut bytes = Vec::new();
        let s = write_dataset(&cfg, 1, &mut bytes).unwrap();
        assert_eq!(bytes.len() as u64, s.bytes);
        let ds = Dataset::from_bytes(&bytes).unwrap();
        assert_eq!(ds.to_bytes(), bytes);
        assert_eq!(ds.fingerprint(), s.sha256);
        for k in 0..5 {
            assert_eq!(*ds.params(k), sample_params(&cfg, k as u64));
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let cfg = DatasetConfig::with_count_seed(2, 0);
        let mut bytes = Vec::new();
        write_dataset(&cfg, 1, &mut bytes).unwrap();
        bytes.pop();
        assert!(matches!(Dataset::from_bytes(&bytes), Err(Error::Format(_))));
    }
}
