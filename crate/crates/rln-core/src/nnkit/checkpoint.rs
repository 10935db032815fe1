//! Flat binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//! `magic "RLNCKPT\0"` · `version: u32` · `count: u32` · then per tensor:
//! `name_len: u32` · `name: UTF-8 bytes` · `shape: 4×u32` ·
//! `values: shape-volume × f32 LE`. Write→read→write is byte-identical.

use super::tensor::Tensor;
use crate::error::Error;
use crate::Result;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"RLNCKPT\0";
const VERSION: u32 = 1;

/// Serializes named tensors in list order.
pub fn save_checkpoint(path: &Path, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    let count = u32::try_from(tensors.len())
        .map_err(|_| Error::Checkpoint(format!("too many tensors: {}", tensors.len())))?;
    w.write_all(&count.to_le_bytes()).map_err(io_err)?;
    for (name, t) in tensors {
        let name_bytes = name.as_bytes();
        let name_len = u32::try_from(name_bytes.len())
            .map_err(|_| Error::Checkpoint(format!("tensor name too long: {name}")))?;
        w.write_all(&name_len.to_le_bytes()).map_err(io_err)?;
        w.write_all(name_bytes).map_err(io_err)?;
        for dim in t.shape() {
            let d = u32::try_from(dim)
                .map_err(|_| Error::Checkpoint(format!("dimension {dim} exceeds u32")))?;
            w.write_all(&d.to_le_bytes()).map_err(io_err)?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint(format!("truncated while reading {what}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads a checkpoint back, preserving tensor order, names, shapes, and the
/// exact value bits.
pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    read_exact_or(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:?}, not a parameter checkpoint"
        )));
    }
    let version = read_u32(&mut r, "version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let count = read_u32(&mut r, "tensor count")?;
    let mut tensors = Vec::with_capacity(count as usize);
    for i in 0..count {
        let name_len = read_u32(&mut r, "name length")? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact_or(&mut r, &mut name_bytes, "tensor name")?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Checkpoint(format!("tensor {i} name is not UTF-8")))?;
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = read_u32(&mut r, "shape")? as usize;
        }
        let volume: usize = shape.iter().product();
        let mut data = Vec::with_capacity(volume);
        let mut b = [0u8; 4];
        for _ in 0..volume {
            read_exact_or(&mut r, &mut b, &format!("values of {name}"))?;
            data.push(f32::from_le_bytes(b));
        }
        tensors.push((name, Tensor::from_vec(shape, data)?));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::Checkpoint(
            "trailing bytes after declared tensors".to_string(),
        ));
    }
    Ok(tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample() -> Vec<(String, Tensor<f32>)> {
        vec![
            (
                "stack.block0.conv1.weight".to_string(),
                Tensor::from_vec([2, 1, 3, 3], (0..18).map(|v| v as f32 * 0.25).collect()).unwrap(),
            ),
            (
                "head.bias".to_string(),
                Tensor::from_vec([2, 1, 1, 1], vec![-1.5, f32::MIN_POSITIVE]).unwrap(),
            ),
        ]
    }

    #[test]
    fn write_read_write_is_byte_identical() {
        let dir = tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let tensors = sample();
        save_checkpoint(&p1, &tensors).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        save_checkpoint(&p2, &loaded).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(loaded, tensors);
    }

    #[test]
    fn preserves_special_value_bits() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("x.ckpt");
        let tensors = vec![(
            "weird".to_string(),
            Tensor::from_vec(
                [1, 1, 1, 4],
                vec![f32::NAN, f32::INFINITY, -0.0f32, 1e-42],
            )
            .unwrap(),
        )];
        save_checkpoint(&p, &tensors).unwrap();
        let loaded = load_checkpoint(&p).unwrap();
        let want: Vec<u32> = tensors[0].1.data().iter().map(|v| v.to_bits()).collect();
        let got: Vec<u32> = loaded[0].1.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(want, got);
    }

    #[test]
    fn empty_checkpoint_round_trips() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("empty.ckpt");
        save_checkpoint(&p, &[]).unwrap();
        assert!(load_checkpoint(&p).unwrap().is_empty());
    }

    #[test]
    fn rejects_bad_magic_version_truncation_and_trailing() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("good.ckpt");
        save_checkpoint(&p, &sample()).unwrap();
        let bytes = std::fs::read(&p).unwrap();

        let bad_magic = dir.path().join("magic.ckpt");
        let mut b = bytes.clone();
        b[0] = b'X';
        std::fs::write(&bad_magic, &b).unwrap();
        assert!(matches!(
            load_checkpoint(&bad_magic),
            Err(Error::Checkpoint(_))
        ));

        let bad_version = dir.path().join("ver.ckpt");
        let mut b = bytes.clone();
        b[8] = 9;
        std::fs::write(&bad_version, &b).unwrap();
        assert!(matches!(
            load_checkpoint(&bad_version),
            Err(Error::Checkpoint(_))
        ));

        let truncated = dir.path().join("trunc.ckpt");
        std::fs::write(&truncated, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            load_checkpoint(&truncated),
            Err(Error::Checkpoint(_))
        ));

        let trailing = dir.path().join("trail.ckpt");
        let mut b = bytes.clone();
        b.push(0);
        std::fs::write(&trailing, &b).unwrap();
        assert!(matches!(
            load_checkpoint(&trailing),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn missing_file_reports_io_error_with_path() {
        let err = load_checkpoint(Path::new("/nonexistent/x.ckpt")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
