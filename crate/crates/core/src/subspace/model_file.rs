//! Binary model container, little-endian throughout:
//!
//! ```text
//! magic      8 bytes  "SUBSPC01"
//! d, p, cols u32 × 3
//! k          u32      number of classes
//! lambda     f64
//! degenerate u8
//! mean       f64 × d
//! basis      f64 × d·cols, row-major
//! eigen      f64 × cols
//! k × { movement id u8, count u64, centroid f64 × cols }
//! provenance u16 length + UTF-8
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{ClassEntry, SubspaceModel};
use crate::error::{Error, Result};
use crate::movement::Movement;

const MAGIC: &[u8; 8] = b"SUBSPC01";

pub fn encode_model(model: &SubspaceModel) -> Vec<u8> {
    let d = model.dim;
    let cols = model.basis.ncols();
    let mut out = Vec::with_capacity(64 + 8 * (d * cols + d + cols * (model.classes.len() + 1)));
    out.extend_from_slice(MAGIC);
    for v in [d, model.p, cols, model.classes.len()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&model.lambda.to_le_bytes());
    out.push(model.degenerate as u8);
    for v in model.mean.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for r in 0..d {
        for c in 0..cols {
            out.extend_from_slice(&model.basis[(r, c)].to_le_bytes());
        }
    }
    for v in &model.eigenvalues {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for class in &model.classes {
        out.push(class.movement.id());
        out.extend_from_slice(&(class.count as u64).to_le_bytes());
        for v in &class.centroid {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(model.provenance.len() as u16).to_le_bytes());
    out.extend_from_slice(model.provenance.as_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        (0..n).map(|_| self.f64()).collect()
    }
}

fn decode_inner(bytes: &[u8]) -> std::result::Result<SubspaceModel, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("not a subspace model (bad magic)".into());
    }
    let (d, p, cols, k) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    if d == 0 || p > cols || cols > d || k > Movement::ALL.len() {
        return Err(format!("inconsistent header d={d} p={p} cols={cols} k={k}"));
    }
    let lambda = r.f64()?;
    let degenerate = r.u8()? != 0;
    let mean = DVector::from_vec(r.f64s(d)?);
    let basis = DMatrix::from_row_slice(d, cols, &r.f64s(d * cols)?);
    let eigenvalues = r.f64s(cols)?;
    let mut classes = Vec::with_capacity(k);
    for _ in 0..k {
        let id = r.u8()?;
        let movement = Movement::from_id(id).ok_or_else(|| format!("unknown movement id {id}"))?;
        let count = r.u64()? as usize;
        classes.push(ClassEntry {
            movement,
            count,
            centroid: r.f64s(cols)?,
        });
    }
    let len = r.u16()? as usize;
    let provenance = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| "provenance is not UTF-8")?;
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(SubspaceModel {
        dim: d,
        p,
        basis,
        eigenvalues,
        mean,
        lambda,
        degenerate,
        classes,
        provenance,
    })
}

pub fn decode_model(bytes: &[u8], source: &Path) -> Result<SubspaceModel> {
    decode_inner(bytes).map_err(|m| Error::parse(source, 0, m))
}

pub fn write_model_file(model: &SubspaceModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn read_model_file(path: impl AsRef<Path>) -> Result<SubspaceModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subspace::tests::gaussian_set;
    use crate::subspace::{fit_lda, Regularization};

    #[test]
    fn round_trip_is_exact() {
        let model = fit_lda(&gaussian_set(5, 48, 20, 2.0, 4), Regularization::Auto).unwrap();
        let bytes = encode_model(&model);
        let back = decode_model(&bytes, Path::new("m")).unwrap();
        assert_eq!(back, model);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.model");
        write_model_file(&model, &path).unwrap();
        assert_eq!(read_model_file(&path).unwrap(), model);
    }

    #[test]
    fn rejects_corruption() {
        let model = fit_lda(&gaussian_set(3, 4, 10, 2.0, 4), Regularization::Auto).unwrap();
        let bytes = encode_model(&model);
        assert!(decode_model(&bytes[..bytes.len() - 3], Path::new("m")).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_model(&bad, Path::new("m")).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(decode_model(&long, Path::new("m")).is_err());
    }
}
