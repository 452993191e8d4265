//! PNG/JPEG reading and writing for [`ImageGrid`] and [`Mask`].
//!
//! Images are stored as 8-bit RGB PNG, masks as 16-bit grayscale PNG.

use std::io::Cursor;
use std::path::Path;

use image::imageops::FilterType;
use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, Mask, MaskKind, ValueRange};

fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn to_rgb8(img: &ImageGrid) -> RgbImage {
    let unit = img.to_range(ValueRange::Unit);
    let mut out = RgbImage::new(unit.width() as u32, unit.height() as u32);
    for y in 0..unit.height() {
        for x in 0..unit.width() {
            let p = unit.pixel(y, x);
            out.put_pixel(
                x as u32,
                y as u32,
                Rgb([quantize_u8(p[0]), quantize_u8(p[1]), quantize_u8(p[2])]),
            );
        }
    }
    out
}

fn from_rgb8(buf: &RgbImage) -> ImageGrid {
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let mut data = Vec::with_capacity(w * h * 3);
    for p in buf.pixels() {
        data.extend(p.0.iter().map(|&v| f64::from(v) / 255.0));
    }
    ImageGrid::from_vec(h, w, data, ValueRange::Unit).expect("8-bit data is always in range")
}

/// Decodes an in-memory PNG/JPEG into a unit-range image.
pub fn decode_image(bytes: &[u8]) -> std::result::Result<ImageGrid, String> {
    let img = image::load_from_memory(bytes).map_err(|e| e.to_string())?;
    Ok(from_rgb8(&img.to_rgb8()))
}

/// Encodes an image as an 8-bit RGB PNG.
pub fn encode_png(img: &ImageGrid) -> Vec<u8> {
    let mut bytes = Vec::new();
    to_rgb8(img)
        .write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .expect("in-memory PNG encoding cannot fail");
    bytes
}

pub fn read_image(path: &Path) -> Result<ImageGrid> {
    let img = image::open(path).map_err(|e| Error::ImageRead {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(from_rgb8(&img.to_rgb8()))
}

/// Reads an image and resizes it to `size × size` when needed.
pub fn read_image_resized(path: &Path, size: usize) -> Result<ImageGrid> {
    let img = image::open(path).map_err(|e| Error::ImageRead {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = if img.width() as usize == size && img.height() as usize == size {
        img.to_rgb8()
    } else {
        img.resize_exact(size as u32, size as u32, FilterType::Triangle)
            .to_rgb8()
    };
    Ok(from_rgb8(&rgb))
}

pub fn write_png(img: &ImageGrid, path: &Path) -> Result<()> {
    to_rgb8(img)
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::ImageWrite {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

pub fn write_mask_png(mask: &Mask, path: &Path) -> Result<()> {
    let mut buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::new(mask.width() as u32, mask.height() as u32);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            let v = (mask.get(y, x) * 65535.0).round() as u16;
            buf.put_pixel(x as u32, y as u32, Luma([v]));
        }
    }
    DynamicImage::ImageLuma16(buf)
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::ImageWrite {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Reads a grayscale mask. Files whose values are only 0 and full scale come
/// back as [`MaskKind::Binary`], everything else as [`MaskKind::Blurred`].
pub fn read_mask_png(path: &Path) -> Result<Mask> {
    let img = image::open(path).map_err(|e| Error::ImageRead {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let buf = img.to_luma16();
    let data: Vec<f64> = buf.pixels().map(|p| f64::from(p.0[0]) / 65535.0).collect();
    let kind = if data.iter().all(|&v| v == 0.0 || v == 1.0) {
        MaskKind::Binary
    } else {
        MaskKind::Blurred
    };
    Mask::new(buf.height() as usize, buf.width() as usize, data, kind)
}

/// Largest centered square, resized to `size × size`.
pub fn center_crop_resize(img: &ImageGrid, size: usize) -> ImageGrid {
    let side = img.height().min(img.width());
    let (oy, ox) = ((img.height() - side) / 2, (img.width() - side) / 2);
    let rgb = to_rgb8(img);
    let cropped = image::imageops::crop_imm(&rgb, ox as u32, oy as u32, side as u32, side as u32)
        .to_image();
    if side == size {
        // Skip the 8-bit round trip when no resampling is needed.
        let mut out = ImageGrid::filled(size, size, [0.0; 3]);
        let unit = img.to_range(ValueRange::Unit);
        for y in 0..size {
            for x in 0..size {
                out.set_pixel(y, x, unit.pixel(y + oy, x + ox));
            }
        }
        return out;
    }
    let resized = image::imageops::resize(&cropped, size as u32, size as u32, FilterType::Triangle);
    from_rgb8(&resized)
}

/// Tiles images into a single contact sheet, `columns` wide.
pub fn contact_sheet(images: &[ImageGrid], columns: usize) -> Option<ImageGrid> {
    let first = images.first()?;
    let (h, w) = first.dims();
    let columns = columns.max(1).min(images.len());
    let rows = images.len().div_ceil(columns);
    let mut sheet = ImageGrid::filled(rows * h, columns * w, [1.0; 3]);
    for (i, img) in images.iter().enumerate() {
        let unit = img.to_range(ValueRange::Unit);
        let (r, c) = (i / columns, i % columns);
        for y in 0..h.min(unit.height()) {
            for x in 0..w.min(unit.width()) {
                sheet.set_pixel(r * h + y, c * w + x, unit.pixel(y, x));
            }
        }
    }
    Some(sheet)
}
