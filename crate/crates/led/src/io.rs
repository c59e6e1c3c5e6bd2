//! PNG images and masks, checkpoint files, and directory listings.
//!
//! Pixel values map linearly between 8-bit `[0, 255]` and `[-1, 1]`.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ColorType, DynamicImage, GrayImage, RgbImage};
use led_core::nn::Checkpoint;
use led_core::{Image, Mask};

use crate::error::CliError;

pub fn to_unit(p: u8) -> f32 {
    p as f32 / 127.5 - 1.0
}

pub fn to_byte(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

fn open(path: &Path) -> Result<DynamicImage, CliError> {
    image::open(path).map_err(|source| CliError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Grayscale files load with one channel, everything else as RGB.
pub fn read_image(path: &Path) -> Result<Image, CliError> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = matches!(
        img.color(),
        ColorType::L8 | ColorType::La8 | ColorType::L16 | ColorType::La16
    );
    if gray {
        let data = img.to_luma8().into_raw().into_iter().map(to_unit).collect();
        Ok(Image::new(1, h, w, data).expect("dimensions from decoder"))
    } else {
        let raw = img.to_rgb8().into_raw();
        let mut data = vec![0.0; 3 * h * w];
        for (i, px) in raw.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * h * w + i] = to_unit(px[c]);
            }
        }
        Ok(Image::new(3, h, w, data).expect("dimensions from decoder"))
    }
}

fn save(img: DynamicImage, path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| CliError::Image {
            path: path.to_path_buf(),
            source,
        })
}

pub fn write_image(path: &Path, img: &Image) -> Result<(), CliError> {
    let (h, w) = (img.height(), img.width());
    let dynamic = match img.channels() {
        1 => {
            let raw = img.data().iter().map(|&v| to_byte(v)).collect();
            DynamicImage::ImageLuma8(GrayImage::from_raw(w as u32, h as u32, raw).expect("sized buffer"))
        }
        3 => {
            let mut raw = vec![0u8; 3 * h * w];
            for i in 0..h * w {
                for c in 0..3 {
                    raw[3 * i + c] = to_byte(img.plane(c)[i]);
                }
            }
            DynamicImage::ImageRgb8(RgbImage::from_raw(w as u32, h as u32, raw).expect("sized buffer"))
        }
        c => return Err(CliError::Data(format!("cannot write a {c}-channel image as PNG"))),
    };
    save(dynamic, path)
}

/// Nonzero (after grayscale conversion, above mid-gray) pixels are set.
pub fn read_mask(path: &Path) -> Result<Mask, CliError> {
    let img = open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().into_iter().map(|p| p > 127).collect();
    Ok(Mask::new(h, w, data).expect("dimensions from decoder"))
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<(), CliError> {
    let raw = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let img = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, raw).expect("sized buffer");
    save(DynamicImage::ImageLuma8(img), path)
}

/// `(basename, path)` of every `.png` file in `dir`, sorted by name.
pub fn list_pngs(dir: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            let name = path.file_name().expect("file").to_string_lossy().into_owned();
            out.push((name, path));
        }
    }
    out.sort();
    Ok(out)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, ckpt.encode()).map_err(|e| CliError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Checkpoint::decode(&bytes).map_err(|source| CliError::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}
