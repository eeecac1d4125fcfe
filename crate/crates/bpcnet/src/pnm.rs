//! Binary PGM (P5) and PPM (P6) images with maxval 255.
//!
//! Images are `H × W` (grey) or `H × W × C` tensors with values in `[0, 1]`.
//! Writers clamp and quantise with `round(v · 255)`.

use std::path::Path;

use bpcnet_core::data::quantize;
use bpcnet_core::Tensor;

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

fn dims(img: &Tensor) -> Result<(usize, usize, usize)> {
    match *img.shape() {
        [h, w] => Ok((h, w, 1)),
        [h, w, c] => Ok((h, w, c)),
        _ => Err(bpcnet_core::Error::Contract(format!("not an image shape: {:?}", img.shape())).into()),
    }
}

/// P5 for one channel, P6 for three.
pub fn encode_pnm(img: &Tensor) -> Result<Vec<u8>> {
    let (h, w, c) = dims(img)?;
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(bpcnet_core::Error::Contract(format!("{c} channels cannot be written as PGM/PPM")).into()),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

fn ensure_channels(img: &Tensor, want: usize) -> Result<()> {
    let (_, _, c) = dims(img)?;
    if c != want {
        return Err(bpcnet_core::Error::Contract(format!("expected {want} channel(s), got {c}")).into());
    }
    Ok(())
}

pub fn write_pgm(img: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    ensure_channels(img, 1)?;
    write_atomic(path, &encode_pnm(img)?)
}

pub fn write_ppm(img: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    ensure_channels(img, 3)?;
    write_atomic(path, &encode_pnm(img)?)
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(start, "expected a decimal number"))
    }
}

/// Decodes P5 or P6 into `H × W × C` with `C` = 1 or 3.
pub fn decode_pnm(bytes: &[u8]) -> Result<Tensor> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::format(0, "not a binary PGM (P5) or PPM (P6) file")),
    };
    let mut hdr = Header { bytes, pos: 2 };
    let w = hdr.number()?;
    let h = hdr.number()?;
    let maxval_at = hdr.pos;
    let maxval = hdr.number()?;
    if maxval != 255 {
        return Err(Error::format(maxval_at, format!("maxval {maxval}, only 255 is supported")));
    }
    if !bytes.get(hdr.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(hdr.pos, "missing separator after maxval"));
    }
    let start = hdr.pos + 1;
    let len = h * w * channels;
    let data = bytes.get(start..start + len).ok_or_else(|| {
        Error::format(bytes.len(), format!("truncated: {len} pixel bytes expected from byte {start}"))
    })?;
    let values = data.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(Tensor::new(&[h, w, channels], values)?)
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_image_header() {
        let bytes = encode_pnm(&Tensor::zeros(&[2, 2])).unwrap();
        assert_eq!(bytes, b"P5\n2 2\n255\n\0\0\0\0");
    }

    #[test]
    fn clamps_before_quantising() {
        let img = Tensor::new(&[1, 3], vec![1.5, -0.2, 0.5]).unwrap();
        let bytes = encode_pnm(&img).unwrap();
        assert_eq!(&bytes[bytes.len() - 3..], &[255, 0, 128]);
    }

    #[test]
    fn header_comments_and_errors() {
        let t = decode_pnm(b"P5 # c\n1 # w\n2\n255\n\x00\xff").unwrap();
        assert_eq!(t.shape(), &[2, 1, 1]);
        assert_eq!(t.data(), &[0.0, 1.0]);
        assert!(matches!(decode_pnm(b"P5\n2 2\n255\n\0"), Err(Error::Format { .. })));
        assert!(matches!(decode_pnm(b"P2\n1 1\n255\n0"), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(decode_pnm(b"P5\n1 1\n65535\n00"), Err(Error::Format { .. })));
    }

    #[test]
    fn colour_round_trip() {
        let img = Tensor::new(&[1, 2, 3], vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.1]).unwrap();
        let back = decode_pnm(&encode_pnm(&img).unwrap()).unwrap();
        let want: Vec<f64> = img.data().iter().map(|&v| f64::from(quantize(v)) / 255.0).collect();
        assert_eq!(back.data(), &want[..]);
    }
}
