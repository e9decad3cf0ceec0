//! Reader/writer for the IDX image format used by the MNIST distribution.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sensing::RealImage;

const IMAGES_MAGIC: u32 = 0x0000_0803;

/// Raw `u8` images from an IDX3 buffer: `(pixels, count, rows, cols)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(Vec<u8>, usize, usize, usize)> {
    let word = |i: usize| -> Result<usize> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_be_bytes(b.try_into().unwrap()) as usize)
            .ok_or_else(|| Error::Format("IDX header truncated".into()))
    };
    if word(0)? as u32 != IMAGES_MAGIC {
        return Err(Error::Format(format!("bad IDX image magic {:#010x}", word(0)?)));
    }
    let (count, rows, cols) = (word(1)?, word(2)?, word(3)?);
    let body = &bytes[16..];
    if body.len() != count * rows * cols {
        return Err(Error::Format(format!(
            "IDX payload has {} bytes, header promises {}",
            body.len(),
            count * rows * cols
        )));
    }
    Ok((body.to_vec(), count, rows, cols))
}

/// Loads images with pixels rescaled from `0..=255` to `[0, 1]`.
pub fn read_idx_images<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<RealImage<T>>> {
    let bytes = fs::read(path.as_ref())?;
    let (pixels, count, rows, cols) = parse_idx_images(&bytes)?;
    let scale = T::one() / T::lit(255.0);
    (0..count)
        .map(|k| {
            let vals = pixels[k * rows * cols..(k + 1) * rows * cols]
                .iter()
                .map(|&p| T::lit(p as f64) * scale)
                .collect();
            RealImage::new(vals, rows, cols)
        })
        .collect()
}

pub fn write_idx_images(path: impl AsRef<Path>, pixels: &[u8], count: usize, rows: usize, cols: usize) -> Result<()> {
    if pixels.len() != count * rows * cols {
        return Err(Error::InvalidArgument("pixel buffer does not match IDX dimensions".into()));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    for w in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&w.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("imgs");
        let pixels: Vec<u8> = (0..2 * 3 * 4).map(|v| (v * 10) as u8).collect();
        write_idx_images(&path, &pixels, 2, 3, 4).unwrap();
        let imgs = read_idx_images::<f64>(&path).unwrap();
        assert_eq!(imgs.len(), 2);
        assert_eq!((imgs[1].height(), imgs[1].width()), (3, 4));
        assert_eq!(imgs[0].values()[0], 0.0);
        assert!((imgs[1].values()[11] - 230.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        assert!(parse_idx_images(&[0, 0, 8, 1, 0, 0, 0, 0]).is_err());
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2];
        bytes.extend_from_slice(&[1, 2, 3]);
        assert!(parse_idx_images(&bytes).is_err());
    }
}
