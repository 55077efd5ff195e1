//! Little-endian binary helpers shared by the encoder weights file and the
//! model archive. Matrices are `rows: u64, cols: u64` followed by row-major
//! `f64` values.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::error::{Error, Result};

pub(crate) fn corrupt(what: impl std::fmt::Display) -> Error {
    Error::CorruptArchive(what.to_string())
}

/// Map an unexpected EOF or other read failure to a corruption error.
pub(crate) fn read_err(e: std::io::Error) -> Error {
    corrupt(format!("truncated or unreadable data ({e})"))
}

pub(crate) fn write_matrix<W: Write>(w: &mut W, m: &Array2<f64>) -> std::io::Result<()> {
    w.write_u64::<LittleEndian>(m.nrows() as u64)?;
    w.write_u64::<LittleEndian>(m.ncols() as u64)?;
    for &v in m.iter() {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

/// Read a matrix, refusing sizes that cannot fit in the bytes remaining.
pub(crate) fn read_matrix<R: Read>(r: &mut R, remaining: &mut u64) -> Result<Array2<f64>> {
    let rows = r.read_u64::<LittleEndian>().map_err(read_err)?;
    let cols = r.read_u64::<LittleEndian>().map_err(read_err)?;
    *remaining = remaining.saturating_sub(16);
    let n = rows
        .checked_mul(cols)
        .filter(|n| n.checked_mul(8).is_some_and(|b| b <= *remaining))
        .ok_or_else(|| corrupt(format!("matrix {rows}x{cols} exceeds remaining data")))?;
    let mut data = vec![0.0; n as usize];
    r.read_f64_into::<LittleEndian>(&mut data).map_err(read_err)?;
    *remaining -= n * 8;
    Array2::from_shape_vec((rows as usize, cols as usize), data).map_err(|e| corrupt(e))
}

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_u64::<LittleEndian>(s.len() as u64)?;
    w.write_all(s.as_bytes())
}

pub(crate) fn read_str<R: Read>(r: &mut R, remaining: &mut u64) -> Result<String> {
    let len = r.read_u64::<LittleEndian>().map_err(read_err)?;
    *remaining = remaining.saturating_sub(8);
    if len > *remaining {
        return Err(corrupt("string length exceeds remaining data"));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf).map_err(read_err)?;
    *remaining -= len;
    String::from_utf8(buf).map_err(|_| corrupt("string is not utf-8"))
}

/// Write `bytes` to `path` atomically: temp file in the same directory, then
/// rename.
pub fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
