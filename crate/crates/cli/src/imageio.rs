//! Lossless PNG round-tripping for `[0, 1]` pixel arrays.
//!
//! Pixels are quantized to 8 bits exactly once, at save time; loading maps
//! byte `b` back to `b / 255`. Saving an already-loaded image is therefore
//! byte-stable.

use std::path::Path;

use cmbd_core::image::{ImageSample, CHANNELS};
use image::{ImageBuffer, Rgb};

use crate::errors::{CliError, Result};

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_png(path: &Path, sample: &ImageSample) -> Result<()> {
    let (h, w) = (sample.height(), sample.width());
    let mut buf = ImageBuffer::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px: [u8; CHANNELS] = core::array::from_fn(|c| quantize(sample.get(c, y, x)));
            buf.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io_at("creating", parent, e))?;
    }
    buf.save(path)
        .map_err(|e| CliError::Format(format!("writing {}: {e}", path.display())))
}

pub fn load_png(path: &Path) -> Result<ImageSample> {
    let img = image::open(path)
        .map_err(|e| CliError::Format(format!("reading {}: {e}", path.display())))?
        .into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; CHANNELS * h * w];
    for y in 0..h {
        for x in 0..w {
            let px = img.get_pixel(x as u32, y as u32);
            for c in 0..CHANNELS {
                data[(c * h + y) * w + x] = px.0[c] as f64 / 255.0;
            }
        }
    }
    ImageSample::from_data(h, w, data).map_err(CliError::from)
}
