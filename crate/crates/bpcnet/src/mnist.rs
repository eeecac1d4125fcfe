use bpcnet_core::data::LabeledDataset;

use crate::error::Result;
use crate::idx::{load_idx_images, load_idx_labels};

/// Pairs an IDX image file with its label file. `classes` fixes the one-hot
/// width so that small subsets keep the full class list; `max` keeps only the
/// first samples.
pub fn load_mnist(
    images: impl AsRef<std::path::Path>,
    labels: impl AsRef<std::path::Path>,
    classes: usize,
    max: Option<usize>,
) -> Result<LabeledDataset> {
    let imgs = load_idx_images(images)?;
    let labels = load_idx_labels(labels)?;
    if labels.len() != imgs.count() {
        return Err(bpcnet_core::Error::Dataset(format!(
            "{} images but {} labels",
            imgs.count(),
            labels.len()
        ))
        .into());
    }
    let class_names = (0..classes).map(|c| c.to_string()).collect();
    let ds = LabeledDataset::new(
        imgs.rows,
        imgs.cols,
        1,
        imgs.images,
        labels.into_iter().map(usize::from).collect(),
        class_names,
    )?;
    Ok(match max {
        Some(n) => ds.take(n)?,
        None => ds,
    })
}
