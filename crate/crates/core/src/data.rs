//! In-memory datasets and image helpers. Decoding files is the `bpcnet`
//! crate's job; everything here works on already-decoded values.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{contract, Error, Result};
use crate::Tensor;

/// `e_label` of length `d`.
pub fn one_hot(label: usize, d: usize) -> Result<Tensor> {
    if label >= d {
        return contract(format!("one_hot: label {label} out of range for d = {d}"));
    }
    let mut t = Tensor::zeros(&[d]);
    t.data_mut()[label] = 1.0;
    Ok(t)
}

/// `d × b` matrix whose column `j` is `e_{labels[j]}`.
pub fn one_hot_batch(labels: &[usize], d: usize) -> Result<Tensor> {
    if labels.is_empty() {
        return contract("one_hot_batch: no labels");
    }
    let b = labels.len();
    let mut t = Tensor::zeros(&[d, b]);
    for (j, &l) in labels.iter().enumerate() {
        if l >= d {
            return contract(format!("one_hot: label {l} out of range for d = {d}"));
        }
        t.set(l, j, 1.0);
    }
    Ok(t)
}

/// Images paired with one-hot metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub image_h: usize,
    pub image_w: usize,
    pub channels: usize,
    /// `(H·W·C) × count`, channel-major columns with values in `[0, 1]`.
    pub images: Tensor,
    /// Class index of each sample.
    pub labels: Vec<usize>,
    /// One-hot index → class name.
    pub class_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(
        image_h: usize,
        image_w: usize,
        channels: usize,
        images: Tensor,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let (rows, count) = images.require_matrix("LabeledDataset")?;
        if rows != image_h * image_w * channels {
            return Err(Error::Dataset(format!(
                "image rows {rows} do not match {image_h}x{image_w}x{channels}"
            )));
        }
        if labels.len() != count {
            return Err(Error::Dataset(format!("{} labels for {count} images", labels.len())));
        }
        if class_names.is_empty() || labels.iter().any(|&l| l >= class_names.len()) {
            return Err(Error::Dataset("label outside the class list".into()));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Dataset("image values must lie in [0, 1]".into()));
        }
        Ok(Self {
            image_h,
            image_w,
            channels,
            images,
            labels,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn image_dim(&self) -> usize {
        self.image_h * self.image_w * self.channels
    }

    /// One-hot metadata for all samples, `D × count`.
    pub fn meta(&self) -> Tensor {
        one_hot_batch(&self.labels, self.class_count()).expect("labels validated")
    }

    /// Samples at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        Ok(Self {
            images: self.images.select_cols(idx)?,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            ..self.clone_header()
        })
    }

    /// First `n` samples (all of them if `n` exceeds the count).
    pub fn take(&self, n: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    fn clone_header(&self) -> Self {
        Self {
            image_h: self.image_h,
            image_w: self.image_w,
            channels: self.channels,
            images: Tensor::zeros(&[1]),
            labels: Vec::new(),
            class_names: self.class_names.clone(),
        }
    }
}

/// `H × W × C` interleaved image to a channel-major column vector.
pub fn hwc_to_column(img: &Tensor) -> Result<Tensor> {
    let (h, w, c) = hwc_dims(img)?;
    let mut out = Vec::with_capacity(h * w * c);
    for ch in 0..c {
        for p in 0..h * w {
            out.push(img.data()[p * c + ch]);
        }
    }
    Tensor::new(&[h * w * c, 1], out)
}

/// Inverse of [`hwc_to_column`].
pub fn column_to_hwc(col: &[f64], h: usize, w: usize, c: usize) -> Result<Tensor> {
    if col.len() != h * w * c {
        return contract(format!("column of {} values is not {h}x{w}x{c}", col.len()));
    }
    let mut out = alloc::vec![0.0; h * w * c];
    for ch in 0..c {
        for p in 0..h * w {
            out[p * c + ch] = col[ch * h * w + p];
        }
    }
    Tensor::new(&[h, w, c], out)
}

fn hwc_dims(img: &Tensor) -> Result<(usize, usize, usize)> {
    match *img.shape() {
        [h, w] => Ok((h, w, 1)),
        [h, w, c] => Ok((h, w, c)),
        _ => contract(format!("expected an H×W or H×W×C image, got {:?}", img.shape())),
    }
}

/// Bilinear resampling with corner-aligned sampling: output corners coincide
/// with input corners. Output is clamped to `[0, 1]`.
pub fn rescale_bilinear(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return contract("rescale_bilinear: target dimensions must be positive");
    }
    let (h, w, c) = hwc_dims(img)?;
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let src = img.data();
    let coord = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (libm::floor(pos) as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for i in 0..out_h {
        let (y0, y1, fy) = coord(i, out_h, h);
        for j in 0..out_w {
            let (x0, x1, fx) = coord(j, out_w, w);
            for ch in 0..c {
                let at = |y: usize, x: usize| src[(y * w + x) * c + ch];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
            }
        }
    }
    let shape: &[usize] = if img.rank() == 2 { &[out_h, out_w] } else { &[out_h, out_w, c] };
    Tensor::new(shape, out)
}

/// Clamp to `[0, 1]` and quantise to a byte, `round(v · 255)`.
pub fn quantize(v: f64) -> u8 {
    libm::round(v.clamp(0.0, 1.0) * 255.0) as u8
}
