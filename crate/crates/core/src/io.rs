//! On-disk formats.
//!
//! Binary vector blocks share one layout, little-endian throughout:
//!
//! | bytes | content                        |
//! |-------|--------------------------------|
//! | 4     | magic (`SBSP` or `SBVC`)       |
//! | 4     | format version, `u32` (1)      |
//! | 8     | vector length `N`, `u64`       |
//! | 8     | vector count `k`, `u64`        |
//! | 8·N·k | `f64` values, column-major     |
//!
//! `SBSP` holds eigenvectors, `SBVC` holds node data (potentials, map components).

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::eigensolver::Spectrum;
use crate::error::{Error, Result};

pub const EIGENVECTOR_MAGIC: [u8; 4] = *b"SBSP";
pub const VECTOR_MAGIC: [u8; 4] = *b"SBVC";
pub const FORMAT_VERSION: u32 = 1;

fn format_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

pub fn write_block(path: &Path, magic: [u8; 4], columns: &[Vec<f64>]) -> Result<()> {
    let n = columns.first().map_or(0, Vec::len);
    if let Some(c) = columns.iter().find(|c| c.len() != n) {
        return Err(Error::LengthMismatch { expected: n, actual: c.len() });
    }
    ensure_parent(path)?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&magic)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(n as u64).to_le_bytes())?;
    w.write_all(&(columns.len() as u64).to_le_bytes())?;
    for c in columns {
        for v in c {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_block(path: &Path, magic: [u8; 4]) -> Result<Vec<Vec<f64>>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 24 {
        return Err(format_error(path, "file shorter than the header"));
    }
    if bytes[..4] != magic {
        return Err(format_error(
            path,
            format!("bad magic, expected {:?}", String::from_utf8_lossy(&magic)),
        ));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(format_error(path, format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let k = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let expected = n.checked_mul(k).and_then(|c| c.checked_mul(8)).and_then(|c| c.checked_add(24));
    if expected != Some(bytes.len()) {
        return Err(format_error(path, format!("payload size does not match N = {n}, k = {k}")));
    }
    let values: Vec<f64> = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(if n == 0 {
        vec![Vec::new(); k]
    } else {
        values.chunks(n).map(<[f64]>::to_vec).collect()
    })
}

pub fn write_eigenvectors(path: &Path, vectors: &[Vec<f64>]) -> Result<()> {
    write_block(path, EIGENVECTOR_MAGIC, vectors)
}

pub fn read_eigenvectors(path: &Path) -> Result<Vec<Vec<f64>>> {
    read_block(path, EIGENVECTOR_MAGIC)
}

pub fn write_vectors(path: &Path, vectors: &[Vec<f64>]) -> Result<()> {
    write_block(path, VECTOR_MAGIC, vectors)
}

pub fn read_vectors(path: &Path) -> Result<Vec<Vec<f64>>> {
    read_block(path, VECTOR_MAGIC)
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, to_json_string(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| format_error(path, e.to_string()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text)?;
    Ok(())
}

/// Spectrum JSON, plus the eigenvector block when a path is given.
pub fn write_spectrum(path: &Path, spectrum: &Spectrum, vectors: Option<&Path>) -> Result<()> {
    write_json(path, spectrum)?;
    if let Some(vp) = vectors {
        let v = spectrum.eigenvectors.as_ref().ok_or(Error::MissingEigenvectors)?;
        write_eigenvectors(vp, v)?;
    }
    Ok(())
}

pub fn read_spectrum(path: &Path, vectors: Option<&Path>) -> Result<Spectrum> {
    let mut s: Spectrum = read_json(path)?;
    if let Some(vp) = vectors {
        let v = read_eigenvectors(vp)?;
        if v.len() != s.eigenvalues.len() {
            return Err(format_error(
                vp,
                format!("{} eigenvectors for {} eigenvalues", v.len(), s.eigenvalues.len()),
            ));
        }
        s.eigenvectors = Some(v);
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.bin");
        let cols = vec![vec![1.0, -2.5, 3.25], vec![0.0, f64::MIN_POSITIVE, 1e300]];
        write_eigenvectors(&p, &cols).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"SBSP");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 24 + 6 * 8);
        assert_eq!(read_eigenvectors(&p).unwrap(), cols);
        assert!(matches!(read_vectors(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn truncated_block_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.bin");
        write_vectors(&p, &[vec![1.0, 2.0]]).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes.pop();
        fs::write(&p, bytes).unwrap();
        assert!(matches!(read_vectors(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn hand_written_spectrum_parses() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        fs::write(&p, r#"{"eigenvalues": [1, 5]}"#).unwrap();
        let s = read_spectrum(&p, None).unwrap();
        assert_eq!(s.eigenvalues, vec![1.0, 5.0]);
        assert!(s.converged);
        assert!(s.residuals.is_empty());
    }
}
