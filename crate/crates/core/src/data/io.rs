//! Raw f32 tensors (`TSTF`), 16-bit depth PGMs and sample directories.
//!
//! `TSTF` layout, little-endian: magic `b"TSTF"`, `u32` rank, `rank × u32`
//! dims, then `product(dims)` f32 values in row-major order.

use std::fs;
use std::path::{Path, PathBuf};

use super::DepthSample;
use crate::error::{config_err, Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"TSTF";

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn encode_raw_f32(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 4 * t.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    let chunk = bytes.get(at..at + 4).ok_or_else(|| {
        format_err(at, format!("truncated {what}: expected {} bytes, found {}", at + 4, bytes.len()))
    })?;
    Ok(u32::from_le_bytes(chunk.try_into().expect("4 bytes")))
}

pub fn decode_raw_f32(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(format_err(0, "bad magic, expected TSTF"));
    }
    let rank = read_u32(bytes, 4, "header")? as usize;
    if rank == 0 || rank > 8 {
        return Err(format_err(4, format!("unsupported rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let d = read_u32(bytes, 8 + 4 * i, "header")? as usize;
        if d == 0 {
            return Err(format_err(8 + 4 * i, "zero-sized dimension"));
        }
        shape.push(d);
    }
    let start = 8 + 4 * rank;
    let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    let expected = numel
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(start))
        .ok_or_else(|| format_err(8, "dimensions overflow"))?;
    if bytes.len() != expected {
        return Err(format_err(
            bytes.len().min(expected),
            format!("payload length mismatch: expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let data = bytes[start..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Tensor::new(data, &shape)
}

pub fn write_raw_f32(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    fs::write(path, encode_raw_f32(t))?;
    Ok(())
}

pub fn read_raw_f32(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    decode_raw_f32(&fs::read(path)?)
}

/// Writes the trailing `H×W` plane as a 16-bit binary PGM in millimetres
/// (rounded, saturating at 65535). Leading dimensions must all be 1.
pub fn write_depth_pgm(path: impl AsRef<Path>, depth: &Tensor<f32>) -> Result<()> {
    let shape = depth.shape();
    if shape.len() < 2 || shape[..shape.len() - 2].iter().any(|&d| d != 1) {
        return Err(config_err(format!("cannot write depth of shape {shape:?} as a single image")));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for &d in depth.data() {
        let mm = (f64::from(d) * 1000.0).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&mm.to_be_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a 16-bit PGM written by [`write_depth_pgm`] back to metres, `[1, H, W]`.
pub fn read_depth_pgm(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let bytes = fs::read(path)?;
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(pos, "truncated PGM header"));
        }
        fields.push((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()));
    }
    pos += 1;
    if fields[0].1 != "P5" {
        return Err(format_err(0, "bad magic, expected P5"));
    }
    let num = |i: usize| -> Result<usize> {
        fields[i].1.parse().map_err(|_| format_err(fields[i].0, format!("bad header field `{}`", fields[i].1)))
    };
    let (w, h, maxval) = (num(1)?, num(2)?, num(3)?);
    if maxval != 65535 || w == 0 || h == 0 {
        return Err(format_err(fields[3].0, "expected a non-empty 16-bit PGM"));
    }
    let expected = pos + 2 * w * h;
    if bytes.len() != expected {
        return Err(format_err(
            bytes.len().min(expected),
            format!("payload length mismatch: expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let data = bytes[pos..]
        .chunks_exact(2)
        .map(|c| f32::from(u16::from_be_bytes([c[0], c[1]])) / 1000.0)
        .collect();
    Tensor::new(data, &[1, h, w])
}

fn sample_paths(path: &Path) -> (PathBuf, PathBuf) {
    let s = path.to_string_lossy();
    let prefix = s
        .strip_suffix("_rgb.tstf")
        .or_else(|| s.strip_suffix("_depth.tstf"))
        .unwrap_or(&s);
    (PathBuf::from(format!("{prefix}_rgb.tstf")), PathBuf::from(format!("{prefix}_depth.tstf")))
}

/// Writes `<prefix>_rgb.tstf` and `<prefix>_depth.tstf`.
pub fn write_sample(prefix: impl AsRef<Path>, sample: &DepthSample) -> Result<()> {
    let (rgb, depth) = sample_paths(prefix.as_ref());
    write_raw_f32(rgb, &sample.rgb)?;
    write_raw_f32(depth, &sample.depth)
}

/// Reads a sample pair given its prefix or either file name. Pixels with
/// non-positive or non-finite depth are masked out.
pub fn read_sample(path: impl AsRef<Path>) -> Result<DepthSample> {
    let (rgb_path, depth_path) = sample_paths(path.as_ref());
    let rgb = read_raw_f32(rgb_path)?;
    let depth = read_raw_f32(depth_path)?;
    DepthSample::with_valid_mask(rgb, depth, f32::MAX)
}

/// All `*_rgb.tstf` samples in `dir`, sorted by name.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Vec<DepthSample>> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with("_rgb.tstf"))
        .collect();
    names.sort();
    names.iter().map(read_sample).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_scene;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn raw_roundtrip_is_bit_exact(dims in prop::collection::vec(1usize..5, 1..5), seed in any::<u64>()) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n).map(|i| f32::from_bits((seed as u32).wrapping_mul(2654435761).wrapping_add(i as u32 * 7919) & 0x7f7f_ffff)).collect();
            let t = Tensor::new(data, &dims).unwrap();
            let back = decode_raw_f32(&encode_raw_f32(&t)).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn truncation_and_magic_errors() {
        let t = Tensor::<f32>::ones(&[2, 3]).unwrap();
        let bytes = encode_raw_f32(&t);
        let err = decode_raw_f32(&bytes[..bytes.len() - 3]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 40 bytes, found 37"), "{msg}");
        assert!(matches!(err, Error::Format { offset: 37, .. }));
        assert!(matches!(decode_raw_f32(b"NOPE\0\0\0\0"), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(decode_raw_f32(&bytes[..6]), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn pgm_scaling_and_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pgm");
        write_depth_pgm(&path, &Tensor::full(&[1, 1, 3, 4], 1.0).unwrap()).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n4 3\n65535\n"));
        let body = &bytes[bytes.len() - 24..];
        assert!(body.chunks(2).all(|c| u16::from_be_bytes([c[0], c[1]]) == 1000));
        let back = read_depth_pgm(&path).unwrap();
        assert_eq!(back.shape(), &[1, 3, 4]);
        assert!(back.data().iter().all(|&v| v == 1.0));
        fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(read_depth_pgm(&path).unwrap_err().to_string().contains("expected"));
    }

    #[test]
    fn sample_directory_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let a = synth_scene(1, 64, 64, 10.0).unwrap();
        let b = synth_scene(2, 64, 64, 10.0).unwrap();
        write_sample(dir.path().join("s001"), &a).unwrap();
        write_sample(dir.path().join("s000"), &b).unwrap();
        let all = read_dataset(dir.path()).unwrap();
        assert_eq!(all, vec![b, a.clone()]);
        assert_eq!(read_sample(dir.path().join("s001_depth.tstf")).unwrap(), a);
    }
}
