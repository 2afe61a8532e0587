use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{format_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabeledPixel {
    pub row: usize,
    pub col: usize,
    pub class_id: usize,
}

/// Checks bounds and the `1..=classes` label range.
pub fn validate_labels(
    labels: &[LabeledPixel],
    height: usize,
    width: usize,
    classes: usize,
) -> Result<()> {
    for l in labels {
        if l.row >= height || l.col >= width {
            return Err(format_err!(
                "label at ({},{}) outside {height}x{width} raster",
                l.row,
                l.col
            ));
        }
        if l.class_id == 0 || l.class_id > classes {
            return Err(format_err!(
                "class id {} at ({},{}) outside 1..={classes}",
                l.class_id,
                l.row,
                l.col
            ));
        }
    }
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<LabeledPixel>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    if names != ["row", "col", "class_id"] {
        return Err(format_err!(
            "{}: expected header row,col,class_id, found {}",
            path.display(),
            names.join(",")
        ));
    }
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

pub fn write_labels(path: &Path, labels: &[LabeledPixel]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for l in labels {
        w.serialize(l)?;
    }
    w.flush()?;
    Ok(())
}

/// Largest class id present, or 0 for an empty list.
pub fn max_class(labels: &[LabeledPixel]) -> usize {
    labels.iter().map(|l| l.class_id).max().unwrap_or(0)
}
