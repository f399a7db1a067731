//! On-disk dataset cache: `manifest.json` plus one CSV per split.
//!
//! Values are written with Rust's shortest round-trip float formatting, so
//! reading a cache back yields bit-identical windows.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Split, WindowedDataset};
use crate::error::{Error, Result};
use crate::fsutil::{read_to_string, write_atomic};
use crate::numerics::Tensor;

pub const CACHE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub format_version: u32,
    pub input_len: usize,
    pub output_len: usize,
    pub channel_names: Vec<String>,
    pub seed: u64,
    pub train_windows: usize,
    pub val_windows: usize,
    pub test_windows: usize,
    /// Resolved configuration that produced the cache.
    pub provenance: String,
}

fn split_file(dir: &Path, s: Split) -> std::path::PathBuf {
    dir.join(format!("{}.csv", s.name()))
}

pub fn write_cache(dir: &Path, data: &WindowedDataset, provenance: &str) -> Result<CacheManifest> {
    data.validate()?;
    let manifest = CacheManifest {
        format_version: CACHE_FORMAT_VERSION,
        input_len: data.input_len,
        output_len: data.output_len,
        channel_names: data.channel_names.clone(),
        seed: data.seed,
        train_windows: data.train.len(),
        val_windows: data.val.len(),
        test_windows: data.test.len(),
        provenance: provenance.to_string(),
    };
    for s in Split::ALL {
        let mut text = String::from("window,step");
        for c in &data.channel_names {
            text.push(',');
            text.push_str(c);
        }
        text.push('\n');
        for (w, win) in data.split(s).iter().enumerate() {
            for t in 0..win.rows() {
                write!(text, "{w},{t}").unwrap();
                for v in win.row(t) {
                    write!(text, ",{v}").unwrap();
                }
                text.push('\n');
            }
        }
        write_atomic(&split_file(dir, s), text.as_bytes())?;
    }
    let json = serde_json::to_string_pretty(&manifest)?;
    write_atomic(&dir.join("manifest.json"), json.as_bytes())?;
    Ok(manifest)
}

pub fn read_cache(dir: &Path) -> Result<(WindowedDataset, CacheManifest)> {
    let manifest: CacheManifest = serde_json::from_str(&read_to_string(&dir.join("manifest.json"))?)?;
    if manifest.format_version != CACHE_FORMAT_VERSION {
        return Err(Error::invalid(format!(
            "cache format version {} is not supported",
            manifest.format_version
        )));
    }
    let len = manifest.input_len + manifest.output_len;
    let n = manifest.channel_names.len();
    let mut splits = Vec::new();
    for (s, expected) in Split::ALL.into_iter().zip([
        manifest.train_windows,
        manifest.val_windows,
        manifest.test_windows,
    ]) {
        let path = split_file(dir, s);
        let mut reader = csv::Reader::from_path(&path)?;
        let mut rows: Vec<f64> = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec?;
            if rec.len() != n + 2 {
                return Err(Error::shape(format!(
                    "{}: line {} has {} fields, expected {}",
                    path.display(),
                    line + 2,
                    rec.len(),
                    n + 2
                )));
            }
            for field in rec.iter().skip(2) {
                rows.push(field.parse().map_err(|_| {
                    Error::invalid(format!("{}: line {}: bad value `{field}`", path.display(), line + 2))
                })?);
            }
        }
        if rows.len() != expected * len * n {
            return Err(Error::shape(format!(
                "{}: expected {expected} windows of {len}x{n}",
                path.display()
            )));
        }
        let windows = rows
            .chunks(len * n)
            .map(|c| Tensor::new(vec![len, n], c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        splits.push(windows);
    }
    let test = splits.pop().unwrap_or_default();
    let val = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    let data = WindowedDataset {
        input_len: manifest.input_len,
        output_len: manifest.output_len,
        channel_names: manifest.channel_names.clone(),
        seed: manifest.seed,
        train,
        val,
        test,
    };
    Ok((data, manifest))
}
