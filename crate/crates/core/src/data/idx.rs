//! IDX container reader and writer (the MNIST distribution format).
//!
//! Header: big-endian `u32` magic (`0x0000_08NN` with `NN` the dimension
//! count), then one big-endian `u32` extent per dimension, then raw `u8`
//! payload in row-major order.

use std::fs;
use std::path::Path;

use super::{AttributedDataset, Record};
use crate::error::{Error, Result};
use crate::nd::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;

fn read_u32(buf: &[u8], at: usize) -> Result<u32> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Truncated(format!("IDX header ends before byte {}", at + 4)))
}

fn check_magic(buf: &[u8], expected: u32) -> Result<()> {
    let found = read_u32(buf, 0)?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

fn payload(buf: &[u8], offset: usize, len: usize) -> Result<&[u8]> {
    let end = offset
        .checked_add(len)
        .ok_or_else(|| Error::Truncated("IDX extents overflow".into()))?;
    if buf.len() < end {
        return Err(Error::Truncated(format!(
            "IDX payload declares {len} bytes, {} present",
            buf.len().saturating_sub(offset)
        )));
    }
    if buf.len() > end {
        return Err(Error::Inconsistent(format!(
            "{} bytes after the declared IDX payload",
            buf.len() - end
        )));
    }
    Ok(&buf[offset..end])
}

/// Parses an image file into `(rows, cols, pixels)`, one `Vec` per image
/// with values scaled to `[0, 1]`.
pub fn parse_idx_images(buf: &[u8]) -> Result<(usize, usize, Vec<Vec<f64>>)> {
    check_magic(buf, IDX_IMAGES_MAGIC)?;
    let n = read_u32(buf, 4)? as usize;
    let rows = read_u32(buf, 8)? as usize;
    let cols = read_u32(buf, 12)? as usize;
    let per = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Truncated("IDX extents overflow".into()))?;
    let total = n
        .checked_mul(per)
        .ok_or_else(|| Error::Truncated("IDX extents overflow".into()))?;
    let bytes = payload(buf, 16, total)?;
    let images = if per == 0 {
        vec![Vec::new(); n]
    } else {
        bytes
            .chunks_exact(per)
            .map(|c| c.iter().map(|b| f64::from(*b) / 255.0).collect())
            .collect()
    };
    Ok((rows, cols, images))
}

pub fn parse_idx_labels(buf: &[u8]) -> Result<Vec<u8>> {
    check_magic(buf, IDX_LABELS_MAGIC)?;
    let n = read_u32(buf, 4)? as usize;
    Ok(payload(buf, 8, n)?.to_vec())
}

/// Encodes images whose pixels are already in `[0, 1]`; values are rounded
/// to the nearest of the 256 levels.
pub fn write_idx_images(rows: usize, cols: usize, images: &[Vec<f64>]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IDX_IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        if img.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                found: img.len(),
            });
        }
        out.extend(img.iter().map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    Ok(out)
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Loads an image/label IDX pair. Records carry no attribute.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<AttributedDataset> {
    let read = |p: &Path| {
        if !p.exists() {
            return Err(Error::MissingFile(p.to_path_buf()));
        }
        Ok(fs::read(p)?)
    };
    let (rows, cols, pixels) = parse_idx_images(&read(images.as_ref())?)?;
    let ys = parse_idx_labels(&read(labels.as_ref())?)?;
    if pixels.len() != ys.len() {
        return Err(Error::CountMismatch {
            images: pixels.len(),
            labels: ys.len(),
        });
    }
    let records = pixels
        .into_iter()
        .zip(ys)
        .map(|(x, y)| {
            Ok(Record {
                x: Tensor::vector(x)?,
                y: usize::from(y),
                a: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AttributedDataset::new(records, format!("idx({})", images.as_ref().display()))?
        .with_image_shape(rows, cols))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<u8> {
        let mut b = Vec::new();
        for v in [2051u32, 1, 2, 2] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(&[0, 255, 128, 64]);
        b
    }

    #[test]
    fn hand_built_fixture() {
        let (r, c, imgs) = parse_idx_images(&fixture()).unwrap();
        assert_eq!((r, c), (2, 2));
        assert_eq!(imgs, vec![vec![0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]]);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let labels = write_idx_labels(&[1, 2]);
        assert!(matches!(
            parse_idx_images(&labels),
            Err(Error::BadMagic { expected: 2051, found: 2049 })
        ));
        let f = fixture();
        assert!(matches!(parse_idx_images(&f[..f.len() - 1]), Err(Error::Truncated(_))));
        assert!(matches!(parse_idx_images(&f[..6]), Err(Error::Truncated(_))));
        assert!(matches!(parse_idx_labels(&labels[..9]), Err(Error::Truncated(_))));
    }

    #[test]
    fn roundtrip_three_images() {
        let imgs: Vec<Vec<f64>> = (0..3)
            .map(|k| (0..6).map(|i| f64::from((k * 40 + i * 7) as u8) / 255.0).collect())
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        fs::write(&ip, write_idx_images(2, 3, &imgs).unwrap()).unwrap();
        fs::write(&lp, write_idx_labels(&[7, 0, 3])).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.labels(), vec![7, 0, 3]);
        assert_eq!(ds.image_shape(), Some([2, 3]));
        for (r, img) in ds.records().iter().zip(&imgs) {
            assert_eq!(r.x.data(), img.as_slice());
            assert_eq!(r.a, None);
        }
    }

    #[test]
    fn count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        fs::write(&ip, fixture()).unwrap();
        fs::write(&lp, write_idx_labels(&[1, 2])).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::CountMismatch { images: 1, labels: 2 })));
        assert!(matches!(
            load_idx(dir.path().join("nope"), &lp),
            Err(Error::MissingFile(_))
        ));
    }
}
