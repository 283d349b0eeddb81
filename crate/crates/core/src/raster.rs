//! PNG/JPEG/TIFF loading and PNG encoding for frames and masks.

use std::io::Cursor;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::{GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::geometry::{BinaryMask, Frame};

/// Loads a mask file, binarizing at 127 over the luma channel.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?.to_luma8();
    let (w, h) = img.dimensions();
    BinaryMask::from_gray(h as usize, w as usize, img.as_raw())
}

/// Reads only the header to obtain `(height, width)`.
pub fn image_dims(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(path).map_err(|e| Error::image(path, e))?;
    Ok((h as usize, w as usize))
}

pub fn load_frame(path: &Path, index: usize) -> Result<Frame> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    Frame::new(h as usize, w as usize, img.into_raw(), index)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

/// Writes an 8-bit single-channel PNG with foreground = 255.
pub fn save_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    ensure_parent(path)?;
    mask_image(mask)
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::image(path, e))
}

pub fn save_frame(path: &Path, frame: &Frame) -> Result<()> {
    ensure_parent(path)?;
    frame_image(frame)
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::image(path, e))
}

pub fn save_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    ensure_parent(path)?;
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::image(path, e))
}

pub fn mask_image(mask: &BinaryMask) -> GrayImage {
    GrayImage::from_raw(mask.width() as u32, mask.height() as u32, mask.to_gray())
        .expect("buffer sized from mask")
}

pub fn frame_image(frame: &Frame) -> RgbImage {
    RgbImage::from_raw(
        frame.width() as u32,
        frame.height() as u32,
        frame.pixels().to_vec(),
    )
    .expect("buffer sized from frame")
}

fn png_bytes<P>(img: &image::ImageBuffer<P, Vec<u8>>) -> Vec<u8>
where
    P: image::Pixel<Subpixel = u8> + image::PixelWithColorType,
{
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .expect("in-memory PNG encoding");
    buf.into_inner()
}

pub fn mask_to_b64_png(mask: &BinaryMask) -> String {
    B64.encode(png_bytes(&mask_image(mask)))
}

pub fn frame_to_b64_png(frame: &Frame) -> String {
    B64.encode(png_bytes(&frame_image(frame)))
}

fn decode_b64_image(data: &str) -> Result<image::DynamicImage> {
    let bytes = B64
        .decode(data.trim())
        .map_err(|e| Error::backend(format!("invalid base64 raster: {e}")))?;
    image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| Error::backend(format!("invalid PNG raster: {e}")))
}

pub fn mask_from_b64_png(data: &str) -> Result<BinaryMask> {
    let img = decode_b64_image(data)?.to_luma8();
    let (w, h) = img.dimensions();
    BinaryMask::from_gray(h as usize, w as usize, img.as_raw())
}

pub fn frame_from_b64_png(data: &str, index: usize) -> Result<Frame> {
    let img = decode_b64_image(data)?.to_rgb8();
    let (w, h) = img.dimensions();
    Frame::new(h as usize, w as usize, img.into_raw(), index)
}
