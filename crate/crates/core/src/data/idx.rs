//! Reader for the big-endian IDX image/label container format.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(r: &mut impl Read, path: &Path, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|_| {
        Error::Parse(format!("{}: truncated while reading {}", path.display(), what))
    })?;
    Ok(u32::from_be_bytes(buf))
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let mut img = BufReader::new(File::open(images_path).map_err(|e| Error::io(images_path, e))?);
    let magic = read_be_u32(&mut img, images_path, "magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Parse(format!(
            "{}: image magic {:#010x}, expected {:#010x}",
            images_path.display(),
            magic,
            IMAGE_MAGIC
        )));
    }
    let n = read_be_u32(&mut img, images_path, "count")? as usize;
    let rows = read_be_u32(&mut img, images_path, "rows")? as usize;
    let cols = read_be_u32(&mut img, images_path, "cols")? as usize;
    let mut raw = vec![0u8; n * rows * cols];
    img.read_exact(&mut raw).map_err(|_| {
        Error::Parse(format!(
            "{}: truncated pixel data (expected {} bytes)",
            images_path.display(),
            raw.len()
        ))
    })?;

    let mut lab = BufReader::new(File::open(labels_path).map_err(|e| Error::io(labels_path, e))?);
    let magic = read_be_u32(&mut lab, labels_path, "magic")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Parse(format!(
            "{}: label magic {:#010x}, expected {:#010x}",
            labels_path.display(),
            magic,
            LABEL_MAGIC
        )));
    }
    let n_labels = read_be_u32(&mut lab, labels_path, "count")? as usize;
    if n_labels != n {
        return Err(Error::Parse(format!(
            "count mismatch: {} images vs {} labels",
            n, n_labels
        )));
    }
    let mut labels = vec![0u8; n];
    lab.read_exact(&mut labels).map_err(|_| {
        Error::Parse(format!("{}: truncated label data", labels_path.display()))
    })?;

    let num_classes = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    let ds = LabeledDataset {
        images: raw.iter().map(|&b| b as f32 / 255.0).collect(),
        channels: 1,
        height: rows,
        width: cols,
        labels,
        num_classes,
    };
    ds.validate()?;
    Ok(ds)
}
