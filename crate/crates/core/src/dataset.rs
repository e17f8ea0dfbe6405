//! Labeled image collections and the binary record format they travel in.
//!
//! The on-disk format is the CIFAR-10 binary layout: each record is one
//! label byte followed by `H*W*3` pixel bytes in channel-planar row-major
//! order (red plane, green plane, blue plane). For 32x32 images that is
//! 3073 bytes per record with labels 0-9; the same layout carries any
//! record geometry, which is how the synthetic acceptance dataset is
//! stored.
//!
//! A directory of PPM files can be ingested instead; labels are carried in
//! the file names (`<index>_<label>.ppm`).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{read_ppm, write_ppm, Image, CHANNELS};

/// CIFAR-10 record geometry.
pub const CIFAR_HEIGHT: usize = 32;
pub const CIFAR_WIDTH: usize = 32;
pub const CIFAR_NUM_CLASSES: usize = 10;
/// 1 label byte + 32*32*3 pixel bytes.
pub const CIFAR_RECORD_BYTES: usize = 1 + CIFAR_HEIGHT * CIFAR_WIDTH * CHANNELS;

/// Class index, always < the owning dataset's `num_classes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(pub usize);

/// Ordered collection of equally sized images with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<Image>,
    labels: Vec<Label>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(images: Vec<Image>, labels: Vec<Label>, num_classes: usize) -> Result<Dataset> {
        if images.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} images vs {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(first) = images.first() {
            let (h, w) = (first.height(), first.width());
            if images.iter().any(|i| i.height() != h || i.width() != w) {
                return Err(Error::InvalidArgument(
                    "images in a dataset must share dimensions".into(),
                ));
            }
        }
        if let Some(bad) = labels.iter().find(|l| l.0 >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {} out of range for {} classes",
                bad.0, num_classes
            )));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn image(&self, i: usize) -> &Image {
        &self.images[i]
    }

    pub fn label(&self, i: usize) -> Label {
        self.labels[i]
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Image, Label)> {
        self.images.iter().zip(self.labels.iter().copied())
    }

    /// Image dimensions, or None for an empty dataset.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.images.first().map(|i| (i.height(), i.width()))
    }

    /// Same images, new labels-preserving image list. Internal helper for
    /// attack pipelines; length must match.
    pub fn with_images(&self, images: Vec<Image>) -> Result<Dataset> {
        Dataset::new(images, self.labels.clone(), self.num_classes)
    }

    /// First `n` records (used to cut desk-scale subsets).
    pub fn take(&self, n: usize) -> Dataset {
        Dataset {
            images: self.images.iter().take(n).cloned().collect(),
            labels: self.labels.iter().take(n).copied().collect(),
            num_classes: self.num_classes,
        }
    }
}

/// Load binary records with explicit geometry. Pixel bytes are widened to
/// reals without rescaling (storage domain).
pub fn load_records(
    path: &Path,
    expected_count: usize,
    height: usize,
    width: usize,
    num_classes: usize,
) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let record_bytes = 1 + height * width * CHANNELS;
    let expected_len = expected_count * record_bytes;
    if bytes.len() != expected_len {
        return Err(Error::format(
            path,
            format!(
                "file is {} bytes, expected {} ({} records of {} bytes)",
                bytes.len(),
                expected_len,
                expected_count,
                record_bytes
            ),
        ));
    }
    let mut images = Vec::with_capacity(expected_count);
    let mut labels = Vec::with_capacity(expected_count);
    for (index, record) in bytes.chunks_exact(record_bytes).enumerate() {
        let label = record[0] as usize;
        if label >= num_classes {
            return Err(Error::CorruptRecord {
                path: path.to_path_buf(),
                index,
                reason: format!("label byte {} >= {} classes", label, num_classes),
            });
        }
        let data: Vec<f64> = record[1..].iter().map(|&b| b as f64).collect();
        images.push(Image::from_planar(height, width, data)?);
        labels.push(Label(label));
    }
    Dataset::new(images, labels, num_classes)
}

/// Load a CIFAR-10 binary file (32x32, 10 classes, 3073-byte records).
pub fn load_cifar_binary(path: &Path, expected_count: usize) -> Result<Dataset> {
    load_records(path, expected_count, CIFAR_HEIGHT, CIFAR_WIDTH, CIFAR_NUM_CLASSES)
}

/// Load binary records inferring the record count from the file length.
/// `num_classes` of None means "max label + 1".
pub fn load_records_auto(
    path: &Path,
    height: usize,
    width: usize,
    num_classes: Option<usize>,
) -> Result<Dataset> {
    let len = fs::metadata(path).map_err(|e| Error::io(path, e))?.len() as usize;
    let record_bytes = 1 + height * width * CHANNELS;
    if len == 0 || !len.is_multiple_of(record_bytes) {
        return Err(Error::format(
            path,
            format!(
                "file length {} is not a positive multiple of the {}-byte record size",
                len, record_bytes
            ),
        ));
    }
    let count = len / record_bytes;
    // Permissive first pass: labels bounded by u8, tightened below.
    let ds = load_records(path, count, height, width, 256)?;
    let max_label = ds.labels().iter().map(|l| l.0).max().unwrap_or(0);
    let classes = match num_classes {
        Some(n) => {
            if max_label >= n {
                return Err(Error::format(
                    path,
                    format!("label {} out of range for {} classes", max_label, n),
                ));
            }
            n
        }
        None => max_label + 1,
    };
    Dataset::new(ds.images().to_vec(), ds.labels().to_vec(), classes)
}

/// Write a dataset as binary records. Pixel values pass through the
/// storage conversion (round half away from zero, clip to [0, 255]).
pub fn write_records(ds: &Dataset, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    for (image, label) in ds.iter() {
        bytes.push(label.0 as u8);
        bytes.extend(
            image
                .data()
                .iter()
                .map(|&v| crate::image::storage_value(v) as u8),
        );
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Ingest a directory of `<index>_<label>.ppm` files, ordered by index.
pub fn load_ppm_dir(dir: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    let mut entries: Vec<(usize, usize, std::path::PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("ppm") {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::format(&path, "unreadable file name"))?;
        let (idx, label) = stem
            .split_once('_')
            .and_then(|(i, l)| Some((i.parse::<usize>().ok()?, l.parse::<usize>().ok()?)))
            .ok_or_else(|| {
                Error::format(&path, "file name must be <index>_<label>.ppm")
            })?;
        entries.push((idx, label, path));
    }
    if entries.is_empty() {
        return Err(Error::format(dir, "no .ppm files found"));
    }
    entries.sort();
    let mut images = Vec::with_capacity(entries.len());
    let mut labels = Vec::with_capacity(entries.len());
    for (_, label, path) in &entries {
        images.push(read_ppm(path)?);
        labels.push(Label(*label));
    }
    let max_label = labels.iter().map(|l| l.0).max().unwrap_or(0);
    Dataset::new(images, labels, num_classes.unwrap_or(max_label + 1))
}

/// Write a dataset as a directory of `<index>_<label>.ppm` files.
pub fn write_ppm_dir(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let digits = ds.len().saturating_sub(1).to_string().len().max(4);
    for (i, (image, label)) in ds.iter().enumerate() {
        let name = format!("{:0digits$}_{}.ppm", i, label.0, digits = digits);
        write_ppm(image, &dir.join(name))?;
    }
    Ok(())
}
