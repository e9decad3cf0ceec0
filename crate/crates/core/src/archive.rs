//! On-disk dataset cache: one binary archive per `(corpus, seed, m, n)`
//! holding the operator matrix and every split measured with it.
//!
//! Layout: `EIPHDSET | u32 version | u64 header length | JSON header |
//! payload`, payload values little-endian in the header's dtype. The matrix
//! comes first (interleaved re/im, row-major), then for each split its
//! measurement vectors followed by its truths when present.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reconstructor::write_atomic;
use crate::scalar::Scalar;
use crate::sensing::{ComplexImage, MeasurementBatch, SensingOperator};

const MAGIC: &[u8; 8] = b"EIPHDSET";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SplitHeader {
    name: String,
    count: usize,
    has_truths: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    corpus: String,
    dtype: String,
    m: usize,
    n: usize,
    height: usize,
    width: usize,
    seed: u64,
    splits: Vec<SplitHeader>,
}

/// A sensing operator together with named measurement splits.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetArchive<T> {
    pub corpus: String,
    pub operator: SensingOperator<T>,
    pub splits: Vec<(String, MeasurementBatch<T>)>,
}

/// `<dir>/<corpus>/op_m{m}_n{n}_s{seed}`.
pub fn archive_path(dir: impl AsRef<Path>, corpus: &str, m: usize, n: usize, seed: u64) -> PathBuf {
    dir.as_ref().join(corpus).join(format!("op_m{m}_n{n}_s{seed}"))
}

impl<T: Scalar> DatasetArchive<T> {
    pub fn split(&self, name: &str) -> Option<&MeasurementBatch<T>> {
        self.splits.iter().find(|(n, _)| n == name).map(|(_, b)| b)
    }

    pub fn path_in(&self, dir: impl AsRef<Path>) -> PathBuf {
        archive_path(dir, &self.corpus, self.operator.m(), self.operator.n(), self.operator.seed())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let op = &self.operator;
        let header = Header {
            corpus: self.corpus.clone(),
            dtype: T::DTYPE.into(),
            m: op.m(),
            n: op.n(),
            height: op.height(),
            width: op.width(),
            seed: op.seed(),
            splits: self
                .splits
                .iter()
                .map(|(name, b)| SplitHeader { name: name.clone(), count: b.len(), has_truths: b.has_truths() })
                .collect(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut payload: Vec<T> = op.matrix().iter().flat_map(|c| [c.re, c.im]).collect();
        for (_, b) in &self.splits {
            for y in b.measurements() {
                payload.extend_from_slice(y);
            }
            for x in b.truths().unwrap_or_default() {
                payload.extend(x.values().iter().flat_map(|c| [c.re, c.im]));
            }
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&T::to_le_bytes_vec(&payload));
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a dataset archive (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported dataset archive version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let raw = bytes.get(20..20 + hlen).ok_or_else(|| Error::Format("truncated header".into()))?;
        let h: Header = serde_json::from_slice(raw)?;
        if h.dtype != T::DTYPE {
            return Err(Error::Format(format!("archive holds {} values, expected {}", h.dtype, T::DTYPE)));
        }
        let width = std::mem::size_of::<T>();
        let payload = &bytes[20 + hlen..];
        if payload.len() % width != 0 {
            return Err(Error::Format("payload is not a whole number of values".into()));
        }
        let values: Vec<T> = payload.chunks_exact(width).map(T::from_le_chunk).collect();
        let mut cursor = 0usize;
        let mut take = |len: usize| -> Result<&[T]> {
            let s = values
                .get(cursor..cursor + len)
                .ok_or_else(|| Error::Format("payload shorter than header promises".into()))?;
            cursor += len;
            Ok(s)
        };
        let pairs = |s: &[T]| -> Vec<Complex<T>> { s.chunks_exact(2).map(|p| Complex::new(p[0], p[1])).collect() };
        let matrix = pairs(take(2 * h.m * h.n)?);
        let mut operator = SensingOperator::from_matrix(matrix, h.m, h.height, h.width)?;
        operator.set_seed(h.seed);
        let mut splits = Vec::with_capacity(h.splits.len());
        for sh in &h.splits {
            let mut ms = Vec::with_capacity(sh.count);
            for _ in 0..sh.count {
                ms.push(take(h.m)?.to_vec());
            }
            let truths = if sh.has_truths {
                let mut t = Vec::with_capacity(sh.count);
                for _ in 0..sh.count {
                    t.push(ComplexImage::new(pairs(take(2 * h.n)?), h.height, h.width)?);
                }
                Some(t)
            } else {
                None
            };
            splits.push((sh.name.clone(), MeasurementBatch::new(ms, truths)?));
        }
        if cursor != values.len() {
            return Err(Error::Format("trailing bytes after last split".into()));
        }
        Ok(Self { corpus: h.corpus, operator, splits })
    }

    /// Writes to `<dir>/<corpus>/op_m{m}_n{n}_s{seed}` and returns the path.
    pub fn save_in(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let path = self.path_in(dir);
        write_atomic(&path, &self.to_bytes()?)?;
        Ok(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
