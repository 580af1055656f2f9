use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{MathError, Matrix};

/// Matrix binary format: magic "NCMX", version u32, rows u64, cols u64,
/// then the little-endian f64 payload.
pub const NCMX_MAGIC: [u8; 4] = *b"NCMX";
pub const NCMX_VERSION: u32 = 1;

pub fn matrix_to_bytes(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + m.len() * 8);
    out.extend_from_slice(&NCMX_MAGIC);
    out.extend_from_slice(&NCMX_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses a matrix from a byte slice. `path` and `base_offset` only feed
/// error messages, so embedded blocks can report file-absolute offsets.
pub fn matrix_from_bytes(bytes: &[u8], path: &str, base_offset: u64) -> Result<(Matrix, usize), MathError> {
    let err = |offset: usize, reason: &str| MathError::Format {
        path: path.to_string(),
        offset: base_offset + offset as u64,
        reason: reason.to_string(),
    };
    if bytes.len() < 4 {
        return Err(err(bytes.len(), "truncated before magic"));
    }
    if bytes[0..4] != NCMX_MAGIC {
        return Err(err(0, "bad magic, expected NCMX"));
    }
    if bytes.len() < 8 {
        return Err(err(bytes.len(), "truncated before version"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != NCMX_VERSION {
        return Err(err(4, &format!("unsupported version {version}")));
    }
    if bytes.len() < 24 {
        return Err(err(bytes.len(), "truncated before dimensions"));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| err(8, "dimension overflow"))?;
    let need = 24 + n * 8;
    if bytes.len() < need {
        return Err(err(bytes.len(), "truncated payload"));
    }
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let off = 24 + i * 8;
        data.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
    }
    let m = Matrix::from_vec(rows, cols, data).map_err(|_| err(24, "non-finite payload"))?;
    Ok((m, need))
}

pub fn write_matrix(m: &Matrix, path: &Path) -> Result<(), MathError> {
    let bytes = matrix_to_bytes(m);
    let io_err = |source| MathError::Io { path: path.display().to_string(), source };
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(&bytes).map_err(io_err)?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<Matrix, MathError> {
    let io_err = |source| MathError::Io { path: path.display().to_string(), source };
    let mut bytes = Vec::new();
    fs::File::open(path).map_err(io_err)?.read_to_end(&mut bytes).map_err(io_err)?;
    let (m, used) = matrix_from_bytes(&bytes, &path.display().to_string(), 0)?;
    if used != bytes.len() {
        return Err(MathError::Format {
            path: path.display().to_string(),
            offset: used as u64,
            reason: format!("{} trailing bytes", bytes.len() - used),
        });
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ncmx");
        let m = Matrix::from_vec(2, 3, vec![1.5, -2.25, 0.0, 1e-300, 3.7, -0.125]).unwrap();
        write_matrix(&m, &path).unwrap();
        let back = read_matrix(&path).unwrap();
        assert_eq!(m, back);
        // Bit-level identity of the serialized form.
        write_matrix(&back, &dir.path().join("m2.ncmx")).unwrap();
        assert_eq!(
            fs::read(&path).unwrap(),
            fs::read(dir.path().join("m2.ncmx")).unwrap()
        );
    }

    #[test]
    fn truncated_file_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ncmx");
        let m = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut bytes = matrix_to_bytes(&m);
        bytes.truncate(30);
        fs::write(&path, &bytes).unwrap();
        match read_matrix(&path) {
            Err(MathError::Format { offset, reason, .. }) => {
                assert_eq!(offset, 30);
                assert!(reason.contains("truncated"));
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ncmx");
        fs::write(&path, b"XXXX\x01\x00\x00\x00").unwrap();
        assert!(matches!(read_matrix(&path), Err(MathError::Format { offset: 0, .. })));
    }
}
