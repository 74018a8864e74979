//! SPMX binary matrix format.
//!
//! Layout: magic bytes `SPMX`, a u8 element-type tag (0 = fp32, 1 = fp64),
//! u64 little-endian row and column counts, then the row-major payload as
//! raw little-endian element bytes.

use crate::matrix::{Matrix, MatrixF32, MatrixF64};
use std::io::{Read, Write};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"SPMX";
pub const TAG_F32: u8 = 0;
pub const TAG_F64: u8 = 1;

/// Refuse to allocate for absurd headers (1 GiB of f64 payload).
const MAX_ELEMENTS: u64 = 1 << 27;

#[derive(Debug, Error)]
pub enum SpmxError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic {found:?}, expected \"SPMX\"")]
    BadMagic { found: [u8; 4] },
    #[error("unknown element tag {0}")]
    UnknownTag(u8),
    #[error("expected element tag {expected}, found {found}")]
    UnexpectedTag { expected: u8, found: u8 },
    #[error("header declares {rows}x{cols} elements, refusing to read")]
    TooLarge { rows: u64, cols: u64 },
    #[error("malformed file: {0}")]
    Malformed(String),
}

fn write_header(w: &mut impl Write, tag: u8, rows: usize, cols: usize) -> std::io::Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&[tag])?;
    w.write_all(&(rows as u64).to_le_bytes())?;
    w.write_all(&(cols as u64).to_le_bytes())?;
    Ok(())
}

fn read_header(r: &mut impl Read) -> Result<(u8, usize, usize), SpmxError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(SpmxError::BadMagic { found: magic });
    }
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    if tag[0] != TAG_F32 && tag[0] != TAG_F64 {
        return Err(SpmxError::UnknownTag(tag[0]));
    }
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    let rows = u64::from_le_bytes(buf);
    r.read_exact(&mut buf)?;
    let cols = u64::from_le_bytes(buf);
    if rows.checked_mul(cols).is_none_or(|n| n > MAX_ELEMENTS) {
        return Err(SpmxError::TooLarge { rows, cols });
    }
    Ok((tag[0], rows as usize, cols as usize))
}

pub fn write_f32(w: &mut impl Write, m: &MatrixF32) -> std::io::Result<()> {
    write_header(w, TAG_F32, m.rows(), m.cols())?;
    for v in m.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_f64(w: &mut impl Write, m: &MatrixF64) -> std::io::Result<()> {
    write_header(w, TAG_F64, m.rows(), m.cols())?;
    for v in m.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_f32(r: &mut impl Read) -> Result<MatrixF32, SpmxError> {
    let (tag, rows, cols) = read_header(r)?;
    if tag != TAG_F32 {
        return Err(SpmxError::UnexpectedTag {
            expected: TAG_F32,
            found: tag,
        });
    }
    let mut data = Vec::with_capacity(rows * cols);
    let mut buf = [0u8; 4];
    for _ in 0..rows * cols {
        r.read_exact(&mut buf)?;
        data.push(f32::from_le_bytes(buf));
    }
    Ok(Matrix::from_vec(rows, cols, data).expect("header-sized payload"))
}

pub fn read_f64(r: &mut impl Read) -> Result<MatrixF64, SpmxError> {
    let (tag, rows, cols) = read_header(r)?;
    if tag != TAG_F64 {
        return Err(SpmxError::UnexpectedTag {
            expected: TAG_F64,
            found: tag,
        });
    }
    let mut data = Vec::with_capacity(rows * cols);
    let mut buf = [0u8; 8];
    for _ in 0..rows * cols {
        r.read_exact(&mut buf)?;
        data.push(f64::from_le_bytes(buf));
    }
    Ok(Matrix::from_vec(rows, cols, data).expect("header-sized payload"))
}

/// Reads either element type, promoting fp32 payloads to fp64.
pub fn read_any_as_f64(r: &mut impl Read) -> Result<MatrixF64, SpmxError> {
    let (tag, rows, cols) = read_header(r)?;
    let mut data = Vec::with_capacity(rows * cols);
    match tag {
        TAG_F32 => {
            let mut buf = [0u8; 4];
            for _ in 0..rows * cols {
                r.read_exact(&mut buf)?;
                data.push(f32::from_le_bytes(buf) as f64);
            }
        }
        _ => {
            let mut buf = [0u8; 8];
            for _ in 0..rows * cols {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
        }
    }
    Ok(Matrix::from_vec(rows, cols, data).expect("header-sized payload"))
}
