//! On-disk dataset layout.
//!
//! A dataset directory holds `manifest.tsv` plus one feature file per bag and,
//! optionally, one instance-label file per bag. All integers little-endian.
//!
//! Feature file (`.milb`):
//!
//! ```text
//! offset  size        field
//! 0       4           magic "MILB"
//! 4       2           format version (u16) = 1
//! 6       4           n_i (u32), instances
//! 10      4           d_in (u32), feature width
//! 14      4·n_i·d_in  f32 values, row-major
//! ```
//!
//! Instance-label file (`.mill`): magic "MILL", version u16, n_i u32, then
//! n_i bytes each 0 or 1.
//!
//! Manifest: one line per bag, `id<TAB>label<TAB>feature_path[<TAB>label_path]`,
//! paths relative to the dataset directory. A feature path ending in `.csv`
//! is read as a plain CSV matrix instead (see [`import_csv_features`]).

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{Bag, BagDataset};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"MILB";
pub const LABEL_MAGIC: &[u8; 4] = b"MILL";
pub const FORMAT_VERSION: u16 = 1;
pub const MANIFEST_NAME: &str = "manifest.tsv";

const FEATURE_HEADER: usize = 14;
const LABEL_HEADER: usize = 10;

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Cursor over a byte buffer that reports truncation with the file offset.
pub(crate) struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Reader { path, bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                self.pos as u64,
                format!(
                    "truncated {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(Error::format(
                self.path,
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    pub(crate) fn version(&mut self) -> Result<()> {
        let at = self.pos as u64;
        let v = u16::from_le_bytes(self.take(2, "version")?.try_into().expect("2 bytes"));
        if v != FORMAT_VERSION {
            return Err(Error::format(self.path, at, format!("unsupported version {v}")));
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.path,
                self.pos as u64,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub fn write_features(path: &Path, n: usize, d_in: usize, values: &[f64]) -> Result<()> {
    if values.len() != n * d_in {
        return Err(Error::Dimension(format!(
            "{} values for a [{n}x{d_in}] feature matrix",
            values.len()
        )));
    }
    let n32 = u32::try_from(n).map_err(|_| Error::Validation("too many instances".into()))?;
    let d32 = u32::try_from(d_in).map_err(|_| Error::Validation("feature width too large".into()))?;
    let mut buf = Vec::with_capacity(FEATURE_HEADER + 4 * values.len());
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&n32.to_le_bytes());
    buf.extend_from_slice(&d32.to_le_bytes());
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_bytes(path, &buf)
}

/// Reads a feature file, returning `(n_i, d_in, values)`.
pub fn read_features(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = read_bytes(path)?;
    let mut r = Reader::new(path, &bytes);
    r.magic(FEATURE_MAGIC)?;
    r.version()?;
    let n = r.u32("instance count")? as usize;
    let d = r.u32("feature width")? as usize;
    if n == 0 || d == 0 {
        return Err(Error::format(path, 6, format!("empty feature matrix [{n}x{d}]")));
    }
    let body_start = r.pos as u64;
    let raw = r.take(4 * n * d, "feature data")?;
    let mut values = Vec::with_capacity(n * d);
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(Error::format(path, body_start + 4 * i as u64, "non-finite feature value"));
        }
        values.push(v as f64);
    }
    r.finish()?;
    Ok((n, d, values))
}

pub fn write_instance_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let n = u32::try_from(labels.len()).map_err(|_| Error::Validation("too many labels".into()))?;
    let mut buf = Vec::with_capacity(LABEL_HEADER + labels.len());
    buf.extend_from_slice(LABEL_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(labels);
    write_bytes(path, &buf)
}

pub fn read_instance_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_bytes(path)?;
    let mut r = Reader::new(path, &bytes);
    r.magic(LABEL_MAGIC)?;
    r.version()?;
    let n = r.u32("label count")? as usize;
    let start = r.pos;
    let labels = r.take(n, "labels")?.to_vec();
    if let Some(i) = labels.iter().position(|&y| y > 1) {
        return Err(Error::format(
            path,
            (start + i) as u64,
            format!("label byte {} is not 0/1", labels[i]),
        ));
    }
    r.finish()?;
    Ok(labels)
}

/// Reads a CSV feature matrix (one row per instance). A first row that does
/// not parse as numbers is treated as a header.
pub fn import_csv_features(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, 0, e.to_string()))?;
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let offset = e.position().map(|p| p.byte()).unwrap_or(0);
            Error::format(path, offset, e.to_string())
        })?;
        let offset = record.position().map(|p| p.byte()).unwrap_or(0);
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::format(path, offset, format!("row {}: {e}", i + 1))),
        };
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::format(path, offset, format!("row {}: non-finite value", i + 1)));
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::format(
                    path,
                    offset,
                    format!("row {} has {} columns, expected {w}", i + 1, row.len()),
                ))
            }
            Some(_) => {}
        }
        values.extend(row);
        rows += 1;
    }
    match width {
        Some(w) if rows > 0 && w > 0 => Ok((rows, w, values)),
        _ => Err(Error::format(path, 0, "no feature rows")),
    }
}

/// Writes `manifest.tsv` plus per-bag feature and label files under `dir`.
pub fn save_dataset(ds: &BagDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for bag in &ds.bags {
        if bag.id.contains(['\t', '\n', '/', '\\']) || bag.id.is_empty() {
            return Err(Error::Validation(format!("bag id {:?} is not file-name safe", bag.id)));
        }
        let feat_rel = format!("bags/{}.milb", bag.id);
        write_features(&dir.join(&feat_rel), bag.n, bag.d_in, &bag.features)?;
        manifest.push_str(&format!("{}\t{}\t{}", bag.id, bag.label, feat_rel));
        if let Some(labels) = &bag.instance_labels {
            let lab_rel = format!("bags/{}.mill", bag.id);
            write_instance_labels(&dir.join(&lab_rel), labels)?;
            manifest.push_str(&format!("\t{lab_rel}"));
        }
        manifest.push('\n');
    }
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<BagDataset> {
    let manifest_path: PathBuf = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut bags = Vec::new();
    let mut seen = HashSet::new();
    let mut offset = 0u64;
    for (i, line) in text.lines().enumerate() {
        let line_offset = offset;
        offset += line.len() as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::format(&manifest_path, line_offset, format!("line {}: {msg}", i + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(bad(format!("expected 3 or 4 tab-separated fields, got {}", fields.len())));
        }
        let id = fields[0];
        if !seen.insert(id.to_string()) {
            return Err(Error::Validation(format!(
                "{}: duplicate bag id {id} on line {}",
                manifest_path.display(),
                i + 1
            )));
        }
        let label: u8 = match fields[1] {
            "0" => 0,
            "1" => 1,
            other => return Err(bad(format!("label `{other}` is not 0/1"))),
        };
        let feat_path = dir.join(fields[2]);
        let (n, d, values) = if fields[2].ends_with(".csv") {
            import_csv_features(&feat_path)?
        } else {
            read_features(&feat_path)?
        };
        let instance_labels = match fields.get(3) {
            Some(rel) => {
                let lp = dir.join(rel);
                let labels = read_instance_labels(&lp)?;
                if labels.len() != n {
                    return Err(Error::format(
                        &lp,
                        6,
                        format!("{} labels but feature file has {n} instances", labels.len()),
                    ));
                }
                Some(labels)
            }
            None => None,
        };
        bags.push(Bag::new(id, d, values, label, instance_labels)?);
    }
    BagDataset::new(bags)
}
