//! Image representation and the PPM interchange format.
//!
//! An [`Image`] is a height x width x 3 block of 64-bit reals in
//! channel-planar layout: all red values first, then all green, then all
//! blue, each plane row-major. Pixel (r, c) of channel k lives at index
//! `k*H*W + r*W + c`. This matches the CIFAR-10 binary record order, so
//! ingest needs no permutation.
//!
//! Two value domains are distinguished throughout the pipeline:
//!
//! * **storage domain** — every value is an integer in [0, 255]; this is
//!   what files contain and what models and attacks consume.
//! * **compute domain** — unbounded reals, used inside transforms.
//!
//! Conversion happens only at explicit boundaries: [`Image::to_storage`]
//! rounds half away from zero and clips to [0, 255]; [`Image::to_compute`]
//! is the identity on values.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Number of color channels. Fixed: R, G, B.
pub const CHANNELS: usize = 3;

/// Storage-domain conversion for a single value: round half away from
/// zero, then clip to [0, 255]. Idempotent on its own output.
#[inline]
pub fn storage_value(v: f64) -> f64 {
    v.round().clamp(0.0, 255.0)
}

/// H x W x 3 intensity block, channel-planar. Immutable after
/// construction; all transforms return fresh images.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    /// All-zero image.
    pub fn zeros(height: usize, width: usize) -> Image {
        Image {
            height,
            width,
            data: vec![0.0; height * width * CHANNELS],
        }
    }

    /// Build from channel-planar data. Length must be exactly H*W*3.
    pub fn from_planar(height: usize, width: usize, data: Vec<f64>) -> Result<Image> {
        let expected = height * width * CHANNELS;
        if data.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "image data length {} != {}x{}x{} = {}",
                data.len(),
                height,
                width,
                CHANNELS,
                expected
            )));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Pixels per channel plane.
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[channel * n..(channel + 1) * n]
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[channel * self.plane_len() + row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: f64) {
        let idx = channel * self.plane_len() + row * self.width + col;
        self.data[idx] = value;
    }

    /// Clamp and round every value into the storage domain.
    pub fn to_storage(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| storage_value(v)).collect(),
        }
    }

    /// Identity on values; exists so pipeline code can mark the domain
    /// switch explicitly.
    pub fn to_compute(&self) -> Image {
        self.clone()
    }

    /// Mirror left-right (used by the optional flip augmentation).
    pub fn flip_horizontal(&self) -> Image {
        let mut out = Image::zeros(self.height, self.width);
        for ch in 0..CHANNELS {
            for r in 0..self.height {
                for c in 0..self.width {
                    out.set(ch, r, c, self.get(ch, r, self.width - 1 - c));
                }
            }
        }
        out
    }
}

/// Write a storage-domain image as binary PPM (P6, maxval 255).
///
/// Values outside the storage domain are converted with the standard
/// round-then-clip rule, so callers may pass compute-domain images.
pub fn write_ppm(image: &Image, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = format!("P6\n{} {}\n255\n", image.width(), image.height());
    w.write_all(header.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    let mut payload = Vec::with_capacity(image.plane_len() * CHANNELS);
    for r in 0..image.height() {
        for c in 0..image.width() {
            for ch in 0..CHANNELS {
                payload.push(storage_value(image.get(ch, r, c)) as u8);
            }
        }
    }
    w.write_all(&payload).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a binary PPM (P6, maxval 255) into a storage-domain image.
pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;

    let magic = next_token(&bytes, &mut pos)
        .ok_or_else(|| Error::format(path, "missing PPM magic"))?;
    if magic != b"P6" {
        return Err(Error::format(
            path,
            format!("not a P6 PPM (magic {:?})", String::from_utf8_lossy(magic)),
        ));
    }
    let width = parse_dim(path, next_token(&bytes, &mut pos), "width")?;
    let height = parse_dim(path, next_token(&bytes, &mut pos), "height")?;
    let maxval = parse_dim(path, next_token(&bytes, &mut pos), "maxval")?;
    if maxval != 255 {
        return Err(Error::format(path, format!("maxval {maxval} != 255")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(path, "missing separator after maxval"));
    }
    pos += 1;

    let expected = width * height * CHANNELS;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(Error::format(
            path,
            format!(
                "truncated pixel payload: {} bytes, expected {}",
                payload.len(),
                expected
            ),
        ));
    }
    let mut image = Image::zeros(height, width);
    let mut i = 0usize;
    for r in 0..height {
        for c in 0..width {
            for ch in 0..CHANNELS {
                image.set(ch, r, c, payload[i] as f64);
                i += 1;
            }
        }
    }
    Ok(image)
}

/// Next whitespace-delimited header token, skipping `#` comments.
fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    if *pos >= bytes.len() {
        return None;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    Some(&bytes[start..*pos])
}

fn parse_dim(path: &Path, token: Option<&[u8]>, what: &str) -> Result<usize> {
    let token = token.ok_or_else(|| Error::format(path, format!("missing {what}")))?;
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| Error::format(path, format!("unparseable {what}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn storage_value_clamps_and_rounds() {
        assert_eq!(storage_value(510.0), 255.0);
        assert_eq!(storage_value(-12.3), 0.0);
        assert_eq!(storage_value(99.5), 100.0); // half away from zero
        assert_eq!(storage_value(127.5), 128.0);
        assert_eq!(storage_value(255.4), 255.0);
        assert_eq!(storage_value(-3.0), 0.0);
    }

    #[test]
    fn to_storage_is_idempotent() {
        let img = Image::from_planar(1, 2, vec![-5.0, 99.5, 300.0, 0.4, 17.0, 255.0]).unwrap();
        let once = img.to_storage();
        assert_eq!(once, once.to_storage());
        assert_eq!(once.data(), &[0.0, 100.0, 255.0, 0.0, 17.0, 255.0]);
    }

    #[test]
    fn planar_layout_indexing() {
        // channel k, pixel (r, c) lives at k*H*W + r*W + c
        let mut data = vec![0.0; 2 * 3 * CHANNELS];
        data[6 + 3 + 2] = 42.0; // green (k=1), row 1, col 2
        let img = Image::from_planar(2, 3, data).unwrap();
        assert_eq!(img.get(1, 1, 2), 42.0);
        assert_eq!(img.get(0, 1, 2), 0.0);
        assert_eq!(img.plane(1)[5], 42.0);
    }

    #[test]
    fn ppm_round_trip_1x1() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("px.ppm");
        let img = Image::from_planar(1, 1, vec![0.0, 0.0, 0.0]).unwrap();
        write_ppm(&img, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes, b"P6\n1 1\n255\n\x00\x00\x00");
        assert_eq!(read_ppm(&path).unwrap(), img);
    }

    #[test]
    fn ppm_write_rounds_then_clips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("px.ppm");
        let img = Image::from_planar(1, 1, vec![255.4, -3.0, 127.5]).unwrap();
        write_ppm(&img, &path).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!(back.data(), &[255.0, 0.0, 128.0]);
    }

    #[test]
    fn ppm_rejects_bad_magic_and_maxval() {
        let dir = tempfile::tempdir().unwrap();
        let p5 = dir.path().join("bad.ppm");
        std::fs::write(&p5, b"P5\n1 1\n255\n\x00").unwrap();
        assert!(matches!(read_ppm(&p5), Err(Error::Format { .. })));

        let badmax = dir.path().join("badmax.ppm");
        std::fs::write(&badmax, b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00").unwrap();
        assert!(matches!(read_ppm(&badmax), Err(Error::Format { .. })));

        let truncated = dir.path().join("trunc.ppm");
        std::fs::write(&truncated, b"P6\n2 2\n255\n\x00\x00\x00").unwrap();
        assert!(matches!(read_ppm(&truncated), Err(Error::Format { .. })));
    }

    #[test]
    fn flip_horizontal_mirrors_columns() {
        let img = Image::from_planar(1, 3, vec![1., 2., 3., 4., 5., 6., 7., 8., 9.]).unwrap();
        let flipped = img.flip_horizontal();
        assert_eq!(flipped.plane(0), &[3., 2., 1.]);
        assert_eq!(flipped.plane(1), &[6., 5., 4.]);
        assert_eq!(flipped.plane(2), &[9., 8., 7.]);
    }
}
