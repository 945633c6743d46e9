use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use trex_core::pgm::{tile_grid, write_pgm};
use trex_core::samplers::{format_float, ClassSummary};
use trex_core::Tensor;

use crate::error::CliResult;

pub const GRID_COLUMNS: usize = 8;
pub const GRID_MAX_IMAGES: usize = 64;

/// Files staged in memory and written together once all computation is done.
#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl OutputSet {
    pub fn add(&mut self, rel: impl Into<PathBuf>, bytes: Vec<u8>) {
        self.files.push((rel.into(), bytes));
    }

    pub fn add_json<T: Serialize>(&mut self, rel: impl Into<PathBuf>, value: &T) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(trex_core::Error::from)?;
        bytes.push(b'\n');
        self.add(rel, bytes);
        Ok(())
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.files.iter().map(|(p, _)| p.as_path())
    }

    pub fn get(&self, rel: &Path) -> Option<&[u8]> {
        self.files
            .iter()
            .find(|(p, _)| p == rel)
            .map(|(_, b)| b.as_slice())
    }

    pub fn commit(&self, dir: &Path) -> CliResult<()> {
        for (rel, bytes) in &self.files {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, bytes)?;
        }
        Ok(())
    }
}

pub fn pgm_bytes(img: &Tensor) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    write_pgm(&mut buf, img)?;
    Ok(buf)
}

/// Row-major tiling with 1-px separators, encoded as P5.
pub fn export_grid(images: &[Tensor], columns: usize) -> CliResult<Vec<u8>> {
    pgm_bytes(&tile_grid(images, columns)?)
}

/// `n` indices spread evenly over `0..len`, first and last included when `n ≥ 2`.
pub fn spread_indices(len: usize, n: usize) -> Vec<usize> {
    if len == 0 || n == 0 {
        return Vec::new();
    }
    if n >= len {
        return (0..len).collect();
    }
    if n == 1 {
        return vec![len - 1];
    }
    (0..n).map(|i| i * (len - 1) / (n - 1)).collect()
}

/// Side length when `len` is a perfect square of at least 2×2.
pub fn square_side(len: usize) -> Option<usize> {
    let side = (len as f64).sqrt().round() as usize;
    (side >= 2 && side * side == len).then_some(side)
}

pub fn summary_csv(
    rows: &[ClassSummary],
    sigma: f64,
    success: bool,
    reason: Option<&str>,
) -> Vec<u8> {
    let mut s = String::from("class,mean,std,n,sigma,success,reason\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.class,
            format_float(r.mean),
            format_float(r.std),
            r.n,
            format_float(sigma),
            success,
            reason.unwrap_or("")
        ));
    }
    s.into_bytes()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
