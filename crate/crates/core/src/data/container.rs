//! EEGC binary container and the plain-CSV import path.
//!
//! ```text
//! "EEGC" | version u8 | reserved u8 × 3 | manifest length u32 LE | manifest JSON
//! records f32 LE × N·C·T | labels u32 LE × N
//! ```
//!
//! The manifest is canonical JSON (sorted keys, no whitespace), so equal
//! datasets always serialize to equal bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, EegDataset, Result, Splits};

pub const CONTAINER_MAGIC: &[u8; 4] = b"EEGC";
pub const CONTAINER_VERSION: u8 = 1;
const HEADER_LEN: usize = 12;
const CSV_HEADER_LINES: usize = 3;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    channels: usize,
    has_declared_splits: bool,
    name: String,
    num_classes: usize,
    num_records: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split_indices: Option<Splits>,
    timesteps: usize,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> DataError {
    DataError::Io(format!("{}: {e}", path.display()))
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

impl EegDataset {
    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = Manifest {
            channels: self.channels,
            has_declared_splits: self.splits.is_some(),
            name: self.name.clone(),
            num_classes: self.num_classes,
            num_records: self.len(),
            split_indices: self.splits.clone(),
            timesteps: self.timesteps,
        };
        let json = serde_json::to_value(&manifest)
            .expect("manifest is always serializable")
            .to_string();
        let mut out =
            Vec::with_capacity(HEADER_LEN + json.len() + 4 * (self.records.len() + self.len()));
        out.extend_from_slice(CONTAINER_MAGIC);
        out.push(CONTAINER_VERSION);
        out.extend_from_slice(&[0; 3]);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(json.as_bytes());
        for v in &self.records {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &l in &self.labels {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
        out
    }

    /// Parses a container; every error names the byte offset involved.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() >= 4 && &bytes[..4] != CONTAINER_MAGIC {
            return Err(DataError::BadMagic {
                found: bytes[..4].to_vec(),
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(DataError::ShapeMismatch {
                section: "header",
                offset: 0,
                expected: HEADER_LEN,
                actual: bytes.len(),
            });
        }
        if bytes[4] != CONTAINER_VERSION {
            return Err(DataError::VersionUnsupported {
                version: bytes[4],
                offset: 4,
            });
        }
        let json_len = u32_at(bytes, 8) as usize;
        let available = bytes.len() - HEADER_LEN;
        if json_len > available {
            return Err(DataError::ShapeMismatch {
                section: "manifest",
                offset: HEADER_LEN,
                expected: json_len,
                actual: available,
            });
        }
        let m: Manifest = serde_json::from_slice(&bytes[HEADER_LEN..HEADER_LEN + json_len])
            .map_err(|e| DataError::Manifest {
                offset: HEADER_LEN,
                detail: e.to_string(),
            })?;
        if m.has_declared_splits != m.split_indices.is_some() {
            return Err(DataError::Manifest {
                offset: HEADER_LEN,
                detail: "has_declared_splits disagrees with split_indices".into(),
            });
        }

        let start = HEADER_LEN + json_len;
        let samples = m.num_records * m.channels * m.timesteps;
        let expected = 4 * (samples + m.num_records);
        let actual = bytes.len() - start;
        if expected != actual {
            return Err(DataError::ShapeMismatch {
                section: "payload",
                offset: start,
                expected,
                actual,
            });
        }
        let record_len = m.channels * m.timesteps;
        let mut records = Vec::with_capacity(samples);
        for i in 0..samples {
            let at = start + 4 * i;
            let v = f32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]);
            if !v.is_finite() {
                return Err(DataError::NonFiniteData {
                    record: i / record_len,
                    offset: at,
                });
            }
            records.push(v);
        }
        let label_start = start + 4 * samples;
        let mut labels = Vec::with_capacity(m.num_records);
        for i in 0..m.num_records {
            let at = label_start + 4 * i;
            let l = u32_at(bytes, at) as usize;
            if l >= m.num_classes {
                return Err(DataError::LabelOutOfRange {
                    record: i,
                    label: l as u64,
                    num_classes: m.num_classes,
                    offset: at,
                });
            }
            labels.push(l);
        }
        EegDataset::new(
            m.name,
            m.num_classes,
            m.channels,
            m.timesteps,
            records,
            labels,
            m.split_indices,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// CSV export: a three-line `#` header carrying the geometry, then one
    /// row per record of `C·T` channel-major samples and the label.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# name={}\n# channels={} timesteps={} num_classes={}\n# columns: channel-major samples, then label\n",
            self.name, self.channels, self.timesteps, self.num_classes
        );
        for i in 0..self.len() {
            for v in self.record(i) {
                out.push_str(&v.to_string());
                out.push(',');
            }
            out.push_str(&self.labels[i].to_string());
            out.push('\n');
        }
        out
    }

    /// Parses the CSV layout written by [`EegDataset::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let header: Vec<&str> = text.lines().take(CSV_HEADER_LINES).collect();
        if header.len() < CSV_HEADER_LINES || header.iter().any(|l| !l.starts_with('#')) {
            return Err(DataError::Csv {
                line: 1,
                detail: format!("expected {CSV_HEADER_LINES} header lines starting with '#'"),
            });
        }
        let fields: BTreeMap<&str, &str> = header
            .iter()
            .flat_map(|l| l.trim_start_matches('#').split_whitespace())
            .filter_map(|tok| tok.split_once('='))
            .collect();
        let field = |key: &str| -> Result<usize> {
            fields
                .get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| DataError::Csv {
                    line: 2,
                    detail: format!("missing or invalid header field {key:?}"),
                })
        };
        let (channels, timesteps, num_classes) = (
            field("channels")?,
            field("timesteps")?,
            field("num_classes")?,
        );
        let name = fields.get("name").copied().unwrap_or("csv").to_string();

        let body_start = text
            .split_inclusive('\n')
            .take(CSV_HEADER_LINES)
            .map(str::len)
            .sum::<usize>();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(&text.as_bytes()[body_start..]);
        let skipped = CSV_HEADER_LINES as u64;
        let width = channels * timesteps;
        let mut records = Vec::new();
        let mut labels = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| DataError::Csv {
                line: skipped + e.position().map_or(0, |p| p.line()),
                detail: e.to_string(),
            })?;
            let line = skipped + row.position().map_or(0, |p| p.line());
            if row.len() != width + 1 {
                return Err(DataError::Csv {
                    line,
                    detail: format!("expected {} fields, found {}", width + 1, row.len()),
                });
            }
            let bad = |detail: String| DataError::Csv { line, detail };
            for f in row.iter().take(width) {
                records.push(
                    f.parse::<f32>()
                        .map_err(|e| bad(format!("sample {f:?}: {e}")))?,
                );
            }
            labels.push(
                row[width]
                    .parse::<usize>()
                    .map_err(|e| bad(format!("label {:?}: {e}", &row[width])))?,
            );
        }
        EegDataset::new(
            name,
            num_classes,
            channels,
            timesteps,
            records,
            labels,
            None,
        )
    }

    pub fn import_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_csv(&text)
    }
}
