//! Image folders described by a `filename,class_label` CSV.

use std::collections::BTreeSet;
use std::path::Path;

use bpcnet_core::data::{hwc_to_column, rescale_bilinear, LabeledDataset};
use bpcnet_core::Tensor;

use crate::error::{Error, Result};
use crate::pnm::read_pnm;

/// Loads every image listed in `csv` (paths relative to `dir`), in CSV order.
///
/// Class indices follow the sorted distinct labels. With `target = Some((h,
/// w))` each image is rescaled bilinearly; otherwise all images must share the
/// size of the first one.
pub fn load_image_dir(dir: impl AsRef<Path>, csv: impl AsRef<Path>, target: Option<(usize, usize)>) -> Result<LabeledDataset> {
    let dir = dir.as_ref();
    let csv = csv.as_ref();
    let mut reader = csv::Reader::from_path(csv).map_err(|e| csv_error(csv, 0, e))?;
    let headers = reader.headers().map_err(|e| csv_error(csv, 0, e))?.clone();
    if headers.len() != 2 || &headers[0] != "filename" || &headers[1] != "class_label" {
        return Err(Error::Ingest {
            row: 0,
            msg: format!("header must be `filename,class_label`, found {:?}", headers.iter().collect::<Vec<_>>()),
        });
    }
    let mut entries = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| csv_error(csv, row, e))?;
        let (file, label) = (rec[0].trim(), rec[1].trim());
        if file.is_empty() || label.is_empty() {
            return Err(Error::Ingest {
                row,
                msg: "empty filename or class_label".into(),
            });
        }
        entries.push((file.to_string(), label.to_string()));
    }
    if entries.is_empty() {
        return Err(bpcnet_core::Error::Dataset(format!("{} lists no images", csv.display())).into());
    }
    let class_names: Vec<String> = entries.iter().map(|(_, l)| l.clone()).collect::<BTreeSet<_>>().into_iter().collect();

    let mut shape = None;
    let mut columns = Vec::with_capacity(entries.len());
    let mut labels = Vec::with_capacity(entries.len());
    for (i, (file, label)) in entries.iter().enumerate() {
        let row = i + 1;
        let ingest = |msg: String| Error::Ingest { row, msg };
        let mut img = read_pnm(dir.join(file)).map_err(|e| ingest(format!("{file}: {e}")))?;
        if let Some((h, w)) = target {
            img = rescale_bilinear(&img, h, w).map_err(|e| ingest(e.to_string()))?;
        }
        let s = img.shape().to_vec();
        match &shape {
            None => shape = Some(s),
            Some(first) if *first != s => {
                return Err(ingest(format!("{file} is {s:?}, earlier images are {first:?}")));
            }
            Some(_) => {}
        }
        columns.push(hwc_to_column(&img)?);
        labels.push(class_names.binary_search(label).expect("label collected above"));
    }
    let s = shape.expect("at least one image");
    let (h, w, c) = (s[0], s[1], s[2]);
    let n = columns.len();
    let mut images = Tensor::zeros(&[h * w * c, n]);
    for (j, col) in columns.iter().enumerate() {
        for (r, &v) in col.data().iter().enumerate() {
            images.set(r, j, v);
        }
    }
    Ok(LabeledDataset::new(h, w, c, images, labels, class_names)?)
}

fn csv_error(path: &Path, row: usize, e: csv::Error) -> Error {
    Error::Ingest {
        row,
        msg: format!("{}: {e}", path.display()),
    }
}
