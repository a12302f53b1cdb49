//! Binary feature-dataset files: precomputed backbone features with labels
//! and a per-sample split tag, for running heads and evaluation without the
//! producing network.
//!
//! Layout (all integers little-endian):
//!   magic "MFRLFEAT" (8 bytes), u32 version = 1,
//!   u32 n, u32 p, u32 class_count,
//!   n·p f64 features row-major, n u32 labels, n u8 split tags (0/1/2).

use std::path::Path;

use mfrl_core::data::LabeledDataset;
use mfrl_core::Matrix;

use crate::error::{io_at, CliError, Result};

pub const MAGIC: &[u8; 8] = b"MFRLFEAT";
pub const VERSION: u32 = 1;

pub const TAG_TRAIN: u8 = 0;
pub const TAG_VAL: u8 = 1;
pub const TAG_TEST: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub split_tags: Vec<u8>,
}

impl FeatureFile {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        class_count: usize,
        split_tags: Vec<u8>,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n || split_tags.len() != n {
            return Err(CliError::Config(format!(
                "feature file needs matching lengths: {n} rows, {} labels, {} tags",
                labels.len(),
                split_tags.len()
            )));
        }
        if labels.iter().any(|&l| l >= class_count) {
            return Err(CliError::Config(format!(
                "label out of range for {class_count} classes"
            )));
        }
        if split_tags.iter().any(|&t| t > TAG_TEST) {
            return Err(CliError::Config("split tags must be 0, 1, or 2".into()));
        }
        Ok(FeatureFile {
            features,
            labels,
            class_count,
            split_tags,
        })
    }

    /// Sampling pool restricted to rows carrying `tag`, plus the class ids
    /// that have at least one such row. Row indices remain global.
    pub fn split_pool(&self, tag: u8) -> Result<(LabeledDataset, Vec<usize>)> {
        let keep: Vec<bool> = self.split_tags.iter().map(|&t| t == tag).collect();
        let dataset = LabeledDataset::filtered(
            self.features.clone(),
            self.labels.clone(),
            self.class_count,
            &keep,
        )
        .map_err(|e| CliError::Config(e.to_string()))?;
        let classes: Vec<usize> = (0..self.class_count)
            .filter(|&c| !dataset.class_indices(c).is_empty())
            .collect();
        Ok((dataset, classes))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.features.rows();
        let p = self.features.cols();
        let mut out = Vec::with_capacity(24 + n * p * 8 + n * 5);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&(p as u32).to_le_bytes());
        out.extend_from_slice(&(self.class_count as u32).to_le_bytes());
        for v in self.features.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &l in &self.labels {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.split_tags);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let magic = r.bytes(8, "magic")?;
        if magic != MAGIC {
            return Err(format_error(0, "bad magic, not a feature file"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(format_error(
                8,
                &format!("unsupported version {version}, expected {VERSION}"),
            ));
        }
        let n = r.u32("sample count")? as usize;
        let p = r.u32("feature dimension")? as usize;
        let class_count = r.u32("class count")? as usize;
        if p == 0 {
            return Err(format_error(16, "feature dimension must be ≥ 1"));
        }
        let mut values = Vec::with_capacity(n * p);
        for i in 0..n * p {
            values.push(f64::from_le_bytes(
                r.bytes(8, &format!("feature value {i}"))?.try_into().unwrap(),
            ));
        }
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let offset = r.offset;
            let l = r.u32(&format!("label {i}"))? as usize;
            if l >= class_count {
                return Err(format_error(
                    offset,
                    &format!("label {l} out of range for {class_count} classes"),
                ));
            }
            labels.push(l);
        }
        let mut split_tags = Vec::with_capacity(n);
        for i in 0..n {
            let offset = r.offset;
            let t = r.bytes(1, &format!("split tag {i}"))?[0];
            if t > TAG_TEST {
                return Err(format_error(offset, &format!("split tag {t} not in 0..=2")));
            }
            split_tags.push(t);
        }
        if r.offset != bytes.len() {
            return Err(format_error(
                r.offset,
                &format!("{} trailing bytes", bytes.len() - r.offset),
            ));
        }
        Ok(FeatureFile {
            features: Matrix::from_vec(n, p, values),
            labels,
            class_count,
            split_tags,
        })
    }
}

pub fn write_feature_file(path: &Path, file: &FeatureFile) -> Result<()> {
    std::fs::write(path, file.to_bytes()).map_err(|e| io_at(path, e))
}

pub fn read_feature_file(path: &Path) -> Result<FeatureFile> {
    let bytes = std::fs::read(path).map_err(|e| io_at(path, e))?;
    FeatureFile::from_bytes(&bytes)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn format_error(offset: usize, what: &str) -> CliError {
    CliError::Io(format!("byte {offset}: {what}"))
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, offset: 0 }
    }

    fn bytes(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + len > self.bytes.len() {
            return Err(format_error(
                self.offset,
                &format!("truncated while reading {what}"),
            ));
        }
        let out = &self.bytes[self.offset..self.offset + len];
        self.offset += len;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().unwrap()))
    }
}
