//! PNG reading/writing for composites, alpha mattes, masks, and trimaps.
//! Alpha planes are written 8-bit by default with a 16-bit option; both
//! depths are accepted on read and normalized to [0,1].

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use ndarray::{Array2, Array3};

use crate::error::Result;

use super::{AlphaMatte, ImagePlane, TrimapPlane};

pub fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

pub fn write_image(path: &Path, image: &ImagePlane) -> Result<()> {
    let (h, w) = (image.height(), image.width());
    let mut buf = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = Rgb([
                quantize8(image.0[[0, y, x]]),
                quantize8(image.0[[1, y, x]]),
                quantize8(image.0[[2, y, x]]),
            ]);
            buf.put_pixel(x as u32, y as u32, px);
        }
    }
    buf.save(path)?;
    Ok(())
}

pub fn read_image(path: &Path) -> Result<ImagePlane> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let mut out = Array3::zeros((3, h as usize, w as usize));
    for y in 0..h {
        for x in 0..w {
            let px = img.get_pixel(x, y);
            for c in 0..3 {
                out[[c, y as usize, x as usize]] = px[c] as f64 / 255.0;
            }
        }
    }
    ImagePlane::new(out)
}

pub fn write_alpha(path: &Path, alpha: &AlphaMatte, sixteen_bit: bool) -> Result<()> {
    let (h, w) = (alpha.height(), alpha.width());
    if sixteen_bit {
        let mut buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                buf.put_pixel(x as u32, y as u32, Luma([quantize16(alpha.0[[y, x]])]));
            }
        }
        buf.save(path)?;
    } else {
        let mut buf = GrayImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                buf.put_pixel(x as u32, y as u32, Luma([quantize8(alpha.0[[y, x]])]));
            }
        }
        buf.save(path)?;
    }
    Ok(())
}

pub fn read_alpha(path: &Path) -> Result<AlphaMatte> {
    let img = image::open(path)?;
    let plane = match img {
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            let mut out = Array2::zeros((h as usize, w as usize));
            for y in 0..h {
                for x in 0..w {
                    out[[y as usize, x as usize]] = buf.get_pixel(x, y)[0] as f64 / 65535.0;
                }
            }
            out
        }
        other => {
            let buf = other.to_luma8();
            let (w, h) = buf.dimensions();
            let mut out = Array2::zeros((h as usize, w as usize));
            for y in 0..h {
                for x in 0..w {
                    out[[y as usize, x as usize]] = buf.get_pixel(x, y)[0] as f64 / 255.0;
                }
            }
            out
        }
    };
    Ok(AlphaMatte(plane))
}

pub fn write_gray_plane(path: &Path, plane: &Array2<f64>) -> Result<()> {
    let (h, w) = plane.dim();
    let mut buf = GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            buf.put_pixel(x as u32, y as u32, Luma([quantize8(plane[[y, x]])]));
        }
    }
    buf.save(path)?;
    Ok(())
}

pub fn write_trimap(path: &Path, trimap: &TrimapPlane) -> Result<()> {
    let (h, w) = trimap.labels.dim();
    let mut buf = GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            buf.put_pixel(x as u32, y as u32, Luma([trimap.labels[[y, x]]]));
        }
    }
    buf.save(path)?;
    Ok(())
}

pub fn read_trimap(path: &Path) -> Result<Array2<u8>> {
    let buf = image::open(path)?.to_luma8();
    let (w, h) = buf.dimensions();
    let mut out = Array2::zeros((h as usize, w as usize));
    for y in 0..h {
        for x in 0..w {
            out[[y as usize, x as usize]] = buf.get_pixel(x, y)[0];
        }
    }
    Ok(out)
}
