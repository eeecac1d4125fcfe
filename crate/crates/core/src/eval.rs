//! Mutation tables and reconstruction error.

use alloc::format;
use alloc::vec::Vec;

use crate::data::{column_to_hwc, one_hot_batch, LabeledDataset};
use crate::error::{contract, dim_err, Result};
use crate::model::Model;
use crate::Tensor;

/// Anything that maps `(images, meta)` batches to reconstructed images.
pub trait Reconstructor {
    /// `(H, W, C)` of the images it consumes and produces.
    fn image_shape(&self) -> (usize, usize, usize);
    /// Width of the one-hot metadata vector.
    fn meta_dim(&self) -> usize;
    fn reconstruct(&self, images: &Tensor, meta: &Tensor) -> Result<Tensor>;
}

impl Reconstructor for Model {
    fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.spec();
        (s.image_h, s.image_w, s.channels)
    }

    fn meta_dim(&self) -> usize {
        self.spec().meta_width()
    }

    fn reconstruct(&self, images: &Tensor, meta: &Tensor) -> Result<Tensor> {
        self.forward(images, meta)
    }
}

/// Grid of `rows × cols` image tiles. Row 0 holds the originals; row `1 + c`
/// holds every original regenerated under class `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct MutationTable {
    pub rows: usize,
    pub cols: usize,
    pub tile_h: usize,
    pub tile_w: usize,
    pub channels: usize,
    /// `(rows·H) × (cols·W) × C`
    pub canvas: Tensor,
}

impl MutationTable {
    fn blank(rows: usize, cols: usize, (h, w, c): (usize, usize, usize)) -> Self {
        Self {
            rows,
            cols,
            tile_h: h,
            tile_w: w,
            channels: c,
            canvas: Tensor::zeros(&[rows * h, cols * w, c]),
        }
    }

    fn put(&mut self, row: usize, col: usize, tile: &Tensor) {
        let (h, w, c) = (self.tile_h, self.tile_w, self.channels);
        let width = self.cols * w;
        let data = self.canvas.data_mut();
        for y in 0..h {
            let dst = ((row * h + y) * width + col * w) * c;
            data[dst..dst + w * c].copy_from_slice(&tile.data()[y * w * c..(y + 1) * w * c]);
        }
    }

    /// Tile at `(row, col)` as an `H × W × C` image.
    pub fn tile(&self, row: usize, col: usize) -> Tensor {
        let (h, w, c) = (self.tile_h, self.tile_w, self.channels);
        let width = self.cols * w;
        let mut out = Vec::with_capacity(h * w * c);
        for y in 0..h {
            let src = ((row * h + y) * width + col * w) * c;
            out.extend_from_slice(&self.canvas.data()[src..src + w * c]);
        }
        Tensor::from_parts(alloc::vec![h, w, c], out)
    }

    pub fn pixel_height(&self) -> usize {
        self.rows * self.tile_h
    }

    pub fn pixel_width(&self) -> usize {
        self.cols * self.tile_w
    }
}

/// Regenerates each of the `k` images (columns of `images`) under every one of
/// the `d` classes. Each class is evaluated as one batch of the `k` images.
/// Regenerated tiles are clamped to `[0, 1]`.
pub fn mutation_table<R: Reconstructor + ?Sized>(model: &R, images: &Tensor, d: usize) -> Result<MutationTable> {
    let (h, w, c) = model.image_shape();
    let (rows, k) = images.require_matrix("mutation_table")?;
    if rows != h * w * c {
        return dim_err("mutation_table", &[h * w * c], images.shape());
    }
    if d != model.meta_dim() {
        return contract(format!("model expects {} classes, table asked for {d}", model.meta_dim()));
    }
    let mut table = MutationTable::blank(d + 1, k, (h, w, c));
    let tiles = |batch: &Tensor, clamp: bool| -> Result<Vec<Tensor>> {
        let b = batch.cols();
        (0..b)
            .map(|j| {
                let col: Vec<f64> = (0..batch.rows())
                    .map(|i| {
                        let v = batch.at(i, j);
                        if clamp {
                            v.clamp(0.0, 1.0)
                        } else {
                            v
                        }
                    })
                    .collect();
                column_to_hwc(&col, h, w, c)
            })
            .collect()
    };
    for (j, t) in tiles(images, false)?.iter().enumerate() {
        table.put(0, j, t);
    }
    for class in 0..d {
        let meta = one_hot_batch(&alloc::vec![class; k], d)?;
        let out = model.reconstruct(images, &meta)?;
        for (j, t) in tiles(&out, true)?.iter().enumerate() {
            table.put(1 + class, j, t);
        }
    }
    Ok(table)
}

/// Mean squared reconstruction error over all pixels of the dataset, feeding
/// each image with its true class in batches of `batch_size` (dataset order).
pub fn reconstruction_mse<R: Reconstructor + ?Sized>(
    model: &R,
    dataset: &LabeledDataset,
    batch_size: usize,
) -> Result<f64> {
    if dataset.is_empty() {
        return contract("reconstruction_mse: empty dataset");
    }
    if batch_size == 0 {
        return contract("reconstruction_mse: batch_size must be positive");
    }
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let mut sse = 0.0;
    for batch in idx.chunks(batch_size) {
        let images = dataset.images.select_cols(batch)?;
        let labels: Vec<usize> = batch.iter().map(|&i| dataset.labels[i]).collect();
        let meta = one_hot_batch(&labels, dataset.class_count())?;
        let out = model.reconstruct(&images, &meta)?;
        if out.shape() != images.shape() {
            return dim_err("reconstruction_mse", images.shape(), out.shape());
        }
        sse += out.data().iter().zip(images.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(sse / dataset.images.numel() as f64)
}
