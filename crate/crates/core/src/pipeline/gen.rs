use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cas::STREAM_CHUNK_BYTES;

/// Bytes in one generator "MB".
pub const MIB: u64 = 1024 * 1024;

/// Gap growth per generated file, in MiB.
const GAP_STEP_MB: u64 = 5;

#[derive(Debug, thiserror::Error)]
pub enum GenError {
    #[error("disk full while writing {0}")]
    DiskFull(PathBuf),
    #[error("permission denied for {0}")]
    PermissionDenied(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
}

impl GenError {
    fn from_io(path: &Path, source: io::Error) -> GenError {
        // ENOSPC has no stable ErrorKind on older toolchains.
        if source.raw_os_error() == Some(28) {
            return GenError::DiskFull(path.to_path_buf());
        }
        match source.kind() {
            io::ErrorKind::PermissionDenied => GenError::PermissionDenied(path.to_path_buf()),
            _ => GenError::Io { path: path.to_path_buf(), source },
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum FillMode {
    /// Zero bytes, written sparsely.
    #[default]
    Zeros,
    /// ChaCha8 stream seeded with `seed + size_mb`, so every file differs
    /// and reruns reproduce the same bytes.
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub start_mb: u64,
    pub gap_mb: u64,
    pub max_mb: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub fill: FillMode,
}

impl GeneratorConfig {
    pub fn new(out_dir: impl Into<PathBuf>) -> GeneratorConfig {
        GeneratorConfig {
            start_mb: 5,
            gap_mb: 5,
            max_mb: 550,
            out_dir: out_dir.into(),
            fill: FillMode::Zeros,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedFile {
    pub path: PathBuf,
    pub size_mb: u64,
}

/// Sizes produced by the generator: start at `start_mb`, add the current
/// gap, grow the gap by 5, stop once past `max_mb`.
pub fn size_sequence(start_mb: u64, gap_mb: u64, max_mb: u64) -> Vec<u64> {
    let mut sizes = Vec::new();
    let (mut size, mut gap) = (start_mb, gap_mb);
    while size <= max_mb {
        sizes.push(size);
        size += gap;
        gap += GAP_STEP_MB;
    }
    sizes
}

pub fn file_name_for(size_mb: u64) -> String {
    format!("dummy file {size_mb}MB.dat")
}

/// Creates `path` holding exactly `size_bytes` bytes of the given fill.
pub fn write_filled(path: &Path, size_bytes: u64, fill: FillMode, seed_offset: u64) -> Result<(), GenError> {
    let err = |e| GenError::from_io(path, e);
    let mut file = File::create(path).map_err(err)?;
    match fill {
        FillMode::Zeros => file.set_len(size_bytes).map_err(err)?,
        FillMode::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(seed_offset));
            let mut buf = vec![0u8; STREAM_CHUNK_BYTES.min(size_bytes.max(1) as usize)];
            let mut remaining = size_bytes;
            while remaining > 0 {
                let n = remaining.min(buf.len() as u64) as usize;
                rng.fill_bytes(&mut buf[..n]);
                file.write_all(&buf[..n]).map_err(err)?;
                remaining -= n as u64;
            }
        }
    }
    file.sync_all().map_err(err)?;
    Ok(())
}

/// Writes one file per size in `sizes_mb` to `out_dir`.
pub fn gen_sizes(sizes_mb: &[u64], out_dir: &Path, fill: FillMode) -> Result<Vec<GeneratedFile>, GenError> {
    fs::create_dir_all(out_dir).map_err(|e| GenError::from_io(out_dir, e))?;
    sizes_mb
        .iter()
        .map(|&size_mb| {
            let path = out_dir.join(file_name_for(size_mb));
            write_filled(&path, size_mb * MIB, fill, size_mb)?;
            log::info!("created {} of size {size_mb} MB", path.display());
            Ok(GeneratedFile { path, size_mb })
        })
        .collect()
}

/// Generates the increasing-gap file ladder described by `cfg`.
pub fn gen_files(cfg: &GeneratorConfig) -> Result<Vec<GeneratedFile>, GenError> {
    if cfg.start_mb == 0 || cfg.gap_mb == 0 || cfg.max_mb == 0 {
        return Err(GenError::InvalidConfig("start, gap and max must be positive".into()));
    }
    gen_sizes(&size_sequence(cfg.start_mb, cfg.gap_mb, cfg.max_mb), &cfg.out_dir, cfg.fill)
}
