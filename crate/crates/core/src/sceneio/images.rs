//! PNG color images and 16-bit ID masks.

use std::path::Path;

use image::{ColorType, DynamicImage, ImageFormat};

use crate::error::{Error, Result};
use crate::rgb::RgbImage;

fn decode(path: &Path) -> Result<DynamicImage> {
    let reader = image::ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    reader
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8], w: u32, h: u32, color: ColorType) -> Result<()> {
    image::save_buffer_with_format(path, bytes, w, h, color, ImageFormat::Png)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// 8-bit RGB PNG with `round(255·clamp(x, 0, 1))`.
pub fn save_image(path: impl AsRef<Path>, image: &RgbImage) -> Result<()> {
    let bytes: Vec<u8> = image.data.iter().map(|&v| quantize(v)).collect();
    write(path.as_ref(), &bytes, image.width, image.height, ColorType::Rgb8)
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Any color PNG, as floats in `[0, 1]`. Alpha is dropped; gray is replicated.
pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let img = decode(path)?;
    let (w, h) = (img.width(), img.height());
    let data = match img {
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => {
            img.to_rgb16().into_raw().into_iter().map(|v| v as f32 / 65535.0).collect()
        }
        _ => img.to_rgb8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
    };
    RgbImage::from_data(w, h, data)
}

/// 16-bit grayscale PNG of object IDs.
pub fn save_mask(path: impl AsRef<Path>, width: u32, height: u32, ids: &[u16]) -> Result<()> {
    if ids.len() != width as usize * height as usize {
        return Err(Error::invalid(format!(
            "{width}×{height} mask needs {} IDs, got {}",
            width as usize * height as usize,
            ids.len()
        )));
    }
    // PNG stores 16-bit samples big-endian; the encoder expects native order
    let bytes: Vec<u8> = ids.iter().flat_map(|v| v.to_ne_bytes()).collect();
    write(path.as_ref(), &bytes, width, height, ColorType::L16)
}

/// Single-channel mask: 16-bit values are IDs, 8-bit values are widened.
/// Returns `(width, height, ids)`.
pub fn load_mask(path: impl AsRef<Path>) -> Result<(u32, u32, Vec<u16>)> {
    let path = path.as_ref();
    let img = decode(path)?;
    let (w, h) = (img.width(), img.height());
    let ids = match img {
        DynamicImage::ImageLuma16(b) => b.into_raw(),
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(u16::from).collect(),
        other => {
            return Err(Error::Data(format!(
                "{}: mask must be single-channel, found {} channels",
                path.display(),
                other.color().channel_count()
            )))
        }
    };
    Ok((w, h, ids))
}

pub fn image_size(path: impl AsRef<Path>) -> Result<(u32, u32)> {
    let path = path.as_ref();
    image::image_dimensions(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other}", path.display())),
    })
}
