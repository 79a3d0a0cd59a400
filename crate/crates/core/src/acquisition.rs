//! Per-process memory images.
//!
//! Images come from a dump file on disk, from the synthetic corpus, or from
//! a live capture of a running process. Whole-machine RAM is never read.

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use zeroize::Zeroize;

#[derive(Debug, Error)]
pub enum AcquisitionError {
    #[error("cannot read dump {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("dump {0} is empty")]
    EmptyFile(PathBuf),
    #[error("malformed sidecar metadata {path}: {reason}")]
    Sidecar { path: PathBuf, reason: String },
    #[error("live capture is not supported on this platform")]
    UnsupportedPlatform,
    #[error("permission denied capturing pid {0}")]
    PermissionDenied(u32),
    #[error("no such process: {0}")]
    NoSuchProcess(u32),
    #[error("captured no readable memory from pid {0}")]
    NothingCaptured(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageSource {
    File,
    Synthetic,
    Live,
}

/// Raw bytes of one process dump with provenance.
///
/// The bytes are zeroed when the image is dropped.
#[derive(Clone)]
pub struct MemoryImage {
    data: Vec<u8>,
    pid: u32,
    captured_at: DateTime<Utc>,
    source: ImageSource,
    digest: String,
}

impl std::fmt::Debug for MemoryImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MemoryImage")
            .field("len", &self.data.len())
            .field("pid", &self.pid)
            .field("captured_at", &self.captured_at)
            .field("source", &self.source)
            .field("digest", &self.digest)
            .finish()
    }
}

impl MemoryImage {
    pub fn new(data: Vec<u8>, pid: u32, source: ImageSource, captured_at: DateTime<Utc>) -> Self {
        let digest = sha256_hex(&data);
        Self {
            data,
            pid,
            captured_at,
            source,
            digest,
        }
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn pid(&self) -> u32 {
        self.pid
    }

    pub fn captured_at(&self) -> DateTime<Utc> {
        self.captured_at
    }

    pub fn source(&self) -> ImageSource {
        self.source
    }

    /// Lowercase hex SHA-256 of the image bytes.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// Recomputes the digest and compares it with the stored one.
    pub fn verify(&self) -> bool {
        sha256_hex(&self.data) == self.digest
    }

    /// Writes the raw bytes (no framing) to `path`.
    pub fn write_to(&self, path: &Path) -> io::Result<()> {
        fs::write(path, &self.data)
    }

    pub fn sidecar(&self) -> SidecarMeta {
        SidecarMeta {
            pid: self.pid,
            captured_at: self.captured_at,
            source: self.source,
        }
    }
}

impl Drop for MemoryImage {
    fn drop(&mut self) {
        self.data.zeroize();
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

/// Optional metadata stored next to a dump as `<dump>.meta.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SidecarMeta {
    pub pid: u32,
    pub captured_at: DateTime<Utc>,
    pub source: ImageSource,
}

pub fn sidecar_path(dump: &Path) -> PathBuf {
    let mut name = dump.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Reads the sidecar for `dump` if one exists.
pub fn read_sidecar(dump: &Path) -> Result<Option<SidecarMeta>, AcquisitionError> {
    let path = sidecar_path(dump);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(source) => return Err(AcquisitionError::Io { path, source }),
    };
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| AcquisitionError::Sidecar {
            path,
            reason: e.to_string(),
        })
}

pub fn write_sidecar(dump: &Path, meta: &SidecarMeta) -> io::Result<()> {
    let json = serde_json::to_string(meta).map_err(io::Error::other)?;
    fs::write(sidecar_path(dump), json)
}

/// Loads a dump file verbatim. The capture time is taken from the file's
/// modification time when available.
pub fn load_dump(path: &Path, pid: u32) -> Result<MemoryImage, AcquisitionError> {
    let io_err = |source| AcquisitionError::Io {
        path: path.to_path_buf(),
        source,
    };
    let data = fs::read(path).map_err(io_err)?;
    if data.is_empty() {
        return Err(AcquisitionError::EmptyFile(path.to_path_buf()));
    }
    let captured_at = fs::metadata(path)
        .and_then(|m| m.modified())
        .map(DateTime::<Utc>::from)
        .unwrap_or_else(|_| Utc::now());
    Ok(MemoryImage::new(data, pid, ImageSource::File, captured_at))
}

/// Overwrites a file with zeros, syncs, and removes it.
pub fn shred_file(path: &Path) -> io::Result<()> {
    let len = fs::metadata(path)?.len();
    {
        let mut f = OpenOptions::new().write(true).open(path)?;
        let zeros = vec![0u8; 64 * 1024];
        let mut left = len;
        while left > 0 {
            let n = left.min(zeros.len() as u64) as usize;
            f.write_all(&zeros[..n])?;
            left -= n as u64;
        }
        f.sync_all()?;
    }
    fs::remove_file(path)
}

/// Captures the readable address space of a live process.
#[cfg(target_os = "linux")]
pub fn capture_live(pid: u32) -> Result<MemoryImage, AcquisitionError> {
    use std::io::{Read, Seek, SeekFrom};

    let base = PathBuf::from(format!("/proc/{pid}"));
    let map_err = |e: io::Error| match e.kind() {
        io::ErrorKind::NotFound => AcquisitionError::NoSuchProcess(pid),
        io::ErrorKind::PermissionDenied => AcquisitionError::PermissionDenied(pid),
        _ => AcquisitionError::Io {
            path: base.clone(),
            source: e,
        },
    };
    let maps = fs::read_to_string(base.join("maps")).map_err(map_err)?;
    let mut mem = fs::File::open(base.join("mem")).map_err(map_err)?;

    let mut data = Vec::new();
    let mut denied = false;
    for line in maps.lines() {
        let mut fields = line.split_whitespace();
        let (Some(range), Some(perms)) = (fields.next(), fields.next()) else {
            continue;
        };
        if !perms.starts_with('r') || line.ends_with("[vsyscall]") || line.ends_with("[vvar]") {
            continue;
        }
        let Some((start, end)) = range.split_once('-') else {
            continue;
        };
        let (Ok(start), Ok(end)) = (u64::from_str_radix(start, 16), u64::from_str_radix(end, 16))
        else {
            continue;
        };
        if mem.seek(SeekFrom::Start(start)).is_err() {
            continue;
        }
        let mut region = Vec::with_capacity((end - start) as usize);
        match (&mut mem).take(end - start).read_to_end(&mut region) {
            Ok(_) => data.extend_from_slice(&region),
            Err(e) if e.kind() == io::ErrorKind::PermissionDenied => denied = true,
            // device mappings and guard pages fail with EIO
            Err(_) => {}
        }
        region.zeroize();
    }
    if data.is_empty() {
        return Err(if denied {
            AcquisitionError::PermissionDenied(pid)
        } else {
            AcquisitionError::NothingCaptured(pid)
        });
    }
    Ok(MemoryImage::new(data, pid, ImageSource::Live, Utc::now()))
}

#[cfg(not(target_os = "linux"))]
pub fn capture_live(_pid: u32) -> Result<MemoryImage, AcquisitionError> {
    Err(AcquisitionError::UnsupportedPlatform)
}
