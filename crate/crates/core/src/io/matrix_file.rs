//! `F32M` interchange matrices: single precision, little-endian, row-major.

use std::path::Path;

use super::{atomic_write, Reader};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

const MAGIC: &[u8; 4] = b"F32M";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MatrixHeader {
    pub version: u32,
    pub rows: usize,
    pub cols: usize,
}

pub fn write_matrix(m: &Matrix) -> Result<Vec<u8>> {
    let rows = u32::try_from(m.rows()).map_err(|_| Error::Format("too many rows".into()))?;
    let cols = u32::try_from(m.cols()).map_err(|_| Error::Format("too many columns".into()))?;
    let mut out = Vec::with_capacity(16 + 4 * m.as_slice().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for &v in m.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub(crate) fn read_header(r: &mut Reader) -> Result<MatrixHeader> {
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not an F32M matrix file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported F32M version {version}")));
    }
    Ok(MatrixHeader { version, rows: r.u32()? as usize, cols: r.u32()? as usize })
}

pub fn read_matrix(bytes: &[u8]) -> Result<Matrix> {
    let mut r = Reader::new(bytes, "F32M");
    let h = read_header(&mut r)?;
    let expected = h.rows.checked_mul(h.cols).and_then(|n| n.checked_mul(4));
    if expected != Some(r.remaining()) {
        return Err(Error::Format(format!(
            "F32M payload is {} bytes, header declares {}x{}",
            r.remaining(),
            h.rows,
            h.cols
        )));
    }
    let data = r
        .take(r.remaining())?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Matrix::from_vec(h.rows, h.cols, data)
}

pub fn save_matrix(path: &Path, m: &Matrix) -> Result<()> {
    atomic_write(path, &write_matrix(m)?)
}

pub fn load_matrix(path: &Path) -> Result<Matrix> {
    read_matrix(&std::fs::read(path)?)
}
