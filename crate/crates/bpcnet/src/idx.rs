//! IDX files as distributed with MNIST: a big-endian header followed by raw
//! unsigned bytes.

use std::path::Path;

use bpcnet_core::Tensor;

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Decoded image file.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// `(rows·cols) × count`, scaled into `[0, 1]`.
    pub images: Tensor,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.images.cols()
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::format(offset, format!("file ends inside the header ({} bytes)", bytes.len())))
}

fn check_magic(bytes: &[u8], want: u32) -> Result<()> {
    let got = be_u32(bytes, 0)?;
    if got != want {
        return Err(Error::format(0, format!("magic {got:#010x}, expected {want:#010x}")));
    }
    Ok(())
}

fn payload(bytes: &[u8], start: usize, len: usize) -> Result<&[u8]> {
    match bytes.len().checked_sub(start) {
        Some(have) if have == len => Ok(&bytes[start..]),
        Some(have) if have > len => Err(Error::format(start + len, format!("{} trailing bytes", have - len))),
        _ => Err(Error::format(
            bytes.len(),
            format!("truncated: header promises {len} data bytes from byte {start}"),
        )),
    }
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let dim = rows * cols;
    let data = payload(bytes, 16, count * dim)?;
    // Stored sample-major; transpose into one column per image.
    let mut out = vec![0.0; dim * count];
    for (s, img) in data.chunks_exact(dim.max(1)).enumerate().take(count) {
        for (p, &v) in img.iter().enumerate() {
            out[p * count + s] = f64::from(v) / 255.0;
        }
    }
    Ok(IdxImages {
        rows,
        cols,
        images: Tensor::new(&[dim, count], out)?,
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    Ok(payload(bytes, 8, count)?.to_vec())
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_images(&bytes)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_labels(&bytes)
}

/// Encodes `count` images of `rows × cols` bytes, stored one after another.
pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let dim = (rows * cols).max(1);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, (pixels.len() / dim) as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_image_fixture() {
        let bytes = encode_idx_images(2, 2, &[0, 255, 51, 102, 255, 0, 0, 0]);
        let f = parse_idx_images(&bytes).unwrap();
        assert_eq!((f.rows, f.cols, f.count()), (2, 2, 2));
        assert_eq!(f.images.shape(), &[4, 2]);
        assert_eq!(f.images.at(0, 0), 0.0);
        assert_eq!(f.images.at(1, 0), 1.0);
        assert_eq!(f.images.at(2, 0), 0.2);
        assert_eq!(f.images.at(0, 1), 1.0);
    }

    #[test]
    fn label_fixture() {
        assert_eq!(parse_idx_labels(&encode_idx_labels(&[3, 1])).unwrap(), vec![3, 1]);
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode_idx_images(2, 2, &[1; 8]);
        match parse_idx_images(&bytes[..20]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 20),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_idx_images(&bytes[..10]), Err(Error::Format { offset: 8, .. })));
        assert!(matches!(parse_idx_images(&[]), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let labels = encode_idx_labels(&[1]);
        assert!(matches!(parse_idx_images(&labels), Err(Error::Format { offset: 0, .. })));
        let images = encode_idx_images(1, 1, &[1]);
        assert!(matches!(parse_idx_labels(&images), Err(Error::Format { offset: 0, .. })));
    }
}
