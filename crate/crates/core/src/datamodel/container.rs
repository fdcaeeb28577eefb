//! Binary container primitives shared by the dataset and raw-recording files.
//!
//! Every container starts with a four-byte magic, a `u16` version and a
//! `u32` length-prefixed JSON header; all numbers are little-endian.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EegDataset, FormatError};

pub const DATASET_MAGIC: &[u8; 4] = b"EEGD";
pub const DATASET_VERSION: u16 = 1;
pub const LABEL_ENCODING: &str = "exemplar index 0..71 as u16; category = exemplar / 12";

pub(crate) fn write_preamble<W: Write>(w: &mut W, magic: &[u8; 4], version: u16, json: &[u8]) -> Result<(), FormatError> {
    let len = u32::try_from(json.len()).map_err(|_| FormatError::Invalid("header too large".into()))?;
    w.write_all(magic)?;
    w.write_all(&version.to_le_bytes())?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(json)?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &'static str) -> Result<(), FormatError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => FormatError::Truncated(what),
        _ => FormatError::Io(e),
    })
}

/// Check magic and version and return the raw JSON header.
pub(crate) fn read_preamble<R: Read>(r: &mut R, magic: &[u8; 4], version: u16) -> Result<Vec<u8>, FormatError> {
    let mut m = [0u8; 4];
    read_exact(r, &mut m, "magic")?;
    if &m != magic {
        return Err(FormatError::BadMagic(m));
    }
    let found = read_u16(r, "version")?;
    if found != version {
        return Err(FormatError::Version(found));
    }
    let mut b4 = [0u8; 4];
    read_exact(r, &mut b4, "header length")?;
    let mut json = vec![0u8; u32::from_le_bytes(b4) as usize];
    read_exact(r, &mut json, "header")?;
    Ok(json)
}

pub(crate) fn read_u16<R: Read>(r: &mut R, what: &'static str) -> Result<u16, FormatError> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b, what)?;
    Ok(u16::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R, what: &'static str) -> Result<u64, FormatError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, n: usize, what: &'static str) -> Result<Vec<f32>, FormatError> {
    let mut raw = vec![0u8; n * 4];
    read_exact(r, &mut raw, what)?;
    Ok(raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// JSON header of the dataset container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub subject_id: String,
    pub n_trials: usize,
    pub n_channels: usize,
    pub n_samples: usize,
    pub sampling_rate_hz: f64,
    pub channel_names: Vec<String>,
    pub label_encoding: String,
}

impl DatasetHeader {
    fn of(d: &EegDataset) -> Self {
        DatasetHeader {
            subject_id: d.subject_id().to_string(),
            n_trials: d.n_trials(),
            n_channels: d.n_channels(),
            n_samples: d.n_samples(),
            sampling_rate_hz: d.sampling_rate_hz(),
            channel_names: d.channel_names().to_vec(),
            label_encoding: LABEL_ENCODING.to_string(),
        }
    }
}

/// Serialize `d`; the dataset invariants are re-checked before anything is written.
pub fn write_dataset<W: Write>(mut w: W, d: &EegDataset) -> Result<(), FormatError> {
    d.validate()?;
    let json = serde_json::to_vec(&DatasetHeader::of(d))?;
    write_preamble(&mut w, DATASET_MAGIC, DATASET_VERSION, &json)?;
    let mut buf = Vec::with_capacity(d.n_trials() * 2 + d.data().len() * 4);
    for &l in d.exemplar_labels() {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    for &v in d.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

/// Read only the header, e.g. to report trial counts without loading data.
pub fn read_dataset_header<R: Read>(mut r: R) -> Result<DatasetHeader, FormatError> {
    let json = read_preamble(&mut r, DATASET_MAGIC, DATASET_VERSION)?;
    Ok(serde_json::from_slice(&json)?)
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<EegDataset, FormatError> {
    let json = read_preamble(&mut r, DATASET_MAGIC, DATASET_VERSION)?;
    let h: DatasetHeader = serde_json::from_slice(&json)?;
    if h.channel_names.len() != h.n_channels {
        return Err(FormatError::Invalid(format!(
            "{} channel names for {} channels",
            h.channel_names.len(),
            h.n_channels
        )));
    }
    let mut labels = Vec::with_capacity(h.n_trials);
    for _ in 0..h.n_trials {
        labels.push(read_u16(&mut r, "labels")?);
    }
    let data = read_f32s(&mut r, h.n_trials * h.n_channels * h.n_samples, "trial data")?;
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(FormatError::Invalid("trailing bytes after payload".into()));
    }
    EegDataset::new(h.subject_id, h.sampling_rate_hz, h.channel_names, h.n_samples, labels, data)
}

pub fn save_dataset(path: impl AsRef<Path>, d: &EegDataset) -> Result<(), FormatError> {
    write_dataset(BufWriter::new(File::create(path)?), d)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<EegDataset, FormatError> {
    read_dataset(BufReader::new(File::open(path)?))
}
