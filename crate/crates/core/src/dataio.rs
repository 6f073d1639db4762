//! MNIST IDX ingestion, checkpoint persistence and metrics output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Result, SnnError};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(SnnError::TruncatedFile {
            needed: at + 4,
            available: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = be_u32(bytes, 0)?;
    if found != expected {
        return Err(SnnError::BadMagic { expected, found });
    }
    Ok(())
}

fn payload(bytes: &[u8], offset: usize, len: usize) -> Result<&[u8]> {
    let needed = offset
        .checked_add(len)
        .ok_or_else(|| SnnError::DimensionMismatch("header dimensions overflow".into()))?;
    if bytes.len() < needed {
        return Err(SnnError::TruncatedFile {
            needed,
            available: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(SnnError::DimensionMismatch(format!(
            "{} trailing bytes after payload",
            bytes.len() - needed
        )));
    }
    Ok(&bytes[offset..])
}

/// Raw `count x rows x cols` unsigned-byte images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IDX_IMAGES_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let len = count
        .checked_mul(rows)
        .and_then(|x| x.checked_mul(cols))
        .ok_or_else(|| SnnError::DimensionMismatch("image dimensions overflow".into()))?;
    let pixels = payload(bytes, 16, len)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let labels = payload(bytes, 8, count)?;
    if let Some((index, &value)) = labels.iter().enumerate().find(|(_, &l)| l >= 10) {
        return Err(SnnError::LabelOutOfRange { index, value });
    }
    Ok(labels.to_vec())
}

/// Flattened images scaled to `[0, 1]` with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: usize,
    images: Vec<f32>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(features: usize, images: Vec<f32>, labels: Vec<u8>) -> Result<Self> {
        if images.len() != features * labels.len() {
            return Err(SnnError::DimensionMismatch(format!(
                "{} pixels for {} labels of {features} features",
                images.len(),
                labels.len()
            )));
        }
        if let Some((index, &value)) = images
            .iter()
            .enumerate()
            .find(|(_, &p)| !(0.0..=1.0).contains(&p))
        {
            return Err(SnnError::PixelOutOfRange { index, value });
        }
        Ok(Dataset {
            features,
            images,
            labels,
        })
    }

    pub fn from_idx(images: &IdxImages, labels: Vec<u8>) -> Result<Self> {
        if images.count != labels.len() {
            return Err(SnnError::DimensionMismatch(format!(
                "{} images but {} labels",
                images.count,
                labels.len()
            )));
        }
        let scaled = images.pixels.iter().map(|&p| p as f32 / 255.0).collect();
        Dataset::new(images.rows * images.cols, scaled, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.images[i * self.features..(i + 1) * self.features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// The first `n` samples (all of them when `n` is 0 or too large).
    pub fn truncate(mut self, n: usize) -> Self {
        if n > 0 && n < self.len() {
            self.labels.truncate(n);
            self.images.truncate(n * self.features);
        }
        self
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| SnnError::io("reading data file", path, e))
}

pub fn load_idx_pair(images: &Path, labels: &Path) -> Result<Dataset> {
    let imgs = parse_idx_images(&read_file(images)?)?;
    let lbls = parse_idx_labels(&read_file(labels)?)?;
    Dataset::from_idx(&imgs, lbls)
}

/// Load the standard MNIST file quartet from `dir`.
pub fn load_mnist(
    dir: &Path,
    train_subset: usize,
    test_subset: usize,
) -> Result<(Dataset, Dataset)> {
    let train = load_idx_pair(&dir.join(TRAIN_IMAGES), &dir.join(TRAIN_LABELS))?;
    let test = load_idx_pair(&dir.join(TEST_IMAGES), &dir.join(TEST_LABELS))?;
    Ok((train.truncate(train_subset), test.truncate(test_subset)))
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SNN1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionHeader {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the payload.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: Config,
    pub epochs_completed: usize,
    /// Random streams are derived from `(seed, name)`, so the completed-epoch
    /// count is the only stream position a resume needs.
    pub rng: String,
    pub structure_fingerprint: u64,
    pub sections: Vec<SectionHeader>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// In-memory image of a checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: Config,
    pub epochs_completed: usize,
    pub structure_fingerprint: u64,
    pub sections: Vec<Section>,
}

impl Checkpoint {
    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    /// Layout: `"SNN1"`, u32 LE version, u32 LE header length, JSON header,
    /// raw LE f32 sections, u32 LE CRC32 of everything before it.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0usize;
        let sections = self
            .sections
            .iter()
            .map(|s| {
                let h = SectionHeader {
                    name: s.name.clone(),
                    shape: s.shape.clone(),
                    offset,
                };
                offset += s.data.len() * 4;
                h
            })
            .collect();
        let header = CheckpointHeader {
            config: self.config.clone(),
            epochs_completed: self.epochs_completed,
            rng: "named-substreams".into(),
            structure_fingerprint: self.structure_fingerprint,
            sections,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + offset);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for s in &self.sections {
            for v in &s.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(SnnError::TruncatedFile {
                needed: 16,
                available: bytes.len(),
            });
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(SnnError::BadMagic {
                expected: u32::from_be_bytes(*CHECKPOINT_MAGIC),
                found: u32::from_be_bytes(bytes[..4].try_into().unwrap()),
            });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(SnnError::VersionUnsupported(version));
        }
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(SnnError::ChecksumMismatch { stored, computed });
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header_end = 12 + header_len;
        if header_end > body.len() {
            return Err(SnnError::TruncatedFile {
                needed: header_end + 4,
                available: bytes.len(),
            });
        }
        let header: CheckpointHeader = serde_json::from_slice(&body[12..header_end])
            .map_err(|e| SnnError::config("<checkpoint header>", e.to_string()))?;
        let payload = &body[header_end..];
        let mut sections = Vec::with_capacity(header.sections.len());
        let mut expected_offset = 0usize;
        for h in header.sections {
            let count: usize = h.shape.iter().product();
            if h.offset != expected_offset {
                return Err(SnnError::DimensionMismatch(format!(
                    "section {} at offset {} (expected {expected_offset})",
                    h.name, h.offset
                )));
            }
            let end = h.offset + count * 4;
            let raw = payload.get(h.offset..end).ok_or(SnnError::TruncatedFile {
                needed: header_end + end + 4,
                available: bytes.len(),
            })?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            expected_offset = end;
            sections.push(Section {
                name: h.name,
                shape: h.shape,
                data,
            });
        }
        if expected_offset != payload.len() {
            return Err(SnnError::DimensionMismatch(format!(
                "{} unclaimed payload bytes",
                payload.len() - expected_offset
            )));
        }
        Ok(Checkpoint {
            version,
            config: header.config,
            epochs_completed: header.epochs_completed,
            structure_fingerprint: header.structure_fingerprint,
            sections,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())
            .map_err(|e| SnnError::io("writing checkpoint", path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| SnnError::io("reading checkpoint", path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// One line of the per-epoch metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub mean_margin: f64,
    /// Softmax cross-entropy of the test readout; never used for learning.
    pub cross_entropy: f64,
    pub synaptic_ops: u64,
    pub spikes_total: u64,
    pub timesteps: u64,
    pub mean_abs_gate: f64,
    pub wall_time: f64,
}

pub const METRICS_CSV_HEADER: &str = "epoch,train_acc,test_acc,margin,xent,synaptic_ops,wall_s";

/// Writes `metrics.jsonl` and `metrics.csv` side by side.
pub struct MetricsWriter {
    jsonl: BufWriter<File>,
    csv: BufWriter<File>,
    dir: PathBuf,
}

impl MetricsWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| SnnError::io("creating output dir", dir, e))?;
        let open = |name: &str| -> Result<BufWriter<File>> {
            let path = dir.join(name);
            File::create(&path)
                .map(BufWriter::new)
                .map_err(|e| SnnError::io("creating metrics file", path, e))
        };
        let jsonl = open("metrics.jsonl")?;
        let mut csv = open("metrics.csv")?;
        writeln!(csv, "{METRICS_CSV_HEADER}")
            .map_err(|e| SnnError::io("writing metrics", dir, e))?;
        Ok(MetricsWriter {
            jsonl,
            csv,
            dir: dir.to_path_buf(),
        })
    }

    pub fn write(&mut self, m: &EpochMetrics) -> Result<()> {
        let line = serde_json::to_string(m).expect("metrics serialize");
        let wrap = |e| SnnError::io("writing metrics", &self.dir, e);
        writeln!(self.jsonl, "{line}").map_err(wrap)?;
        writeln!(
            self.csv,
            "{},{},{},{},{},{},{}",
            m.epoch,
            m.train_accuracy,
            m.test_accuracy,
            m.mean_margin,
            m.cross_entropy,
            m.synaptic_ops,
            m.wall_time
        )
        .map_err(wrap)?;
        self.jsonl.flush().map_err(wrap)?;
        self.csv.flush().map_err(wrap)
    }
}
