use std::path::Path;

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::TensorBase;

/// Decodes an RGB image into a (3, H, W) tensor with values in [0, 1].
pub fn load_image(path: &Path) -> Result<TensorBase<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::data(format!("cannot read image {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        for ch in 0..3 {
            data[ch * h * w + y * w + x] = px.0[ch] as f32 / 255.0;
        }
    }
    TensorBase::new(&[3, h, w], data)
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a (3, H, W) tensor in [0, 1] as an RGB PNG.
pub fn save_rgb_png(path: &Path, t: &TensorBase<f32>) -> Result<()> {
    let s = t.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::shape(format!(
            "expected (3,h,w) tensor, got {}",
            crate::tensor::shape_str(s)
        )));
    }
    let (h, w) = (s[1], s[2]);
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            img.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([
                    to_byte(t.at3(0, y, x)),
                    to_byte(t.at3(1, y, x)),
                    to_byte(t.at3(2, y, x)),
                ]),
            );
        }
    }
    img.save(path)
        .map_err(|e| Error::data(format!("cannot write {}: {e}", path.display())))
}

/// Writes a (1, H, W) or (H, W) tensor in [0, 1] as an 8-bit grayscale PNG.
pub fn save_gray_png(path: &Path, t: &TensorBase<f32>) -> Result<()> {
    let s = t.shape().to_vec();
    let (h, w) = match s.as_slice() {
        [1, h, w] | [h, w] => (*h, *w),
        _ => {
            return Err(Error::shape(format!(
                "expected (1,h,w) or (h,w) tensor, got {}",
                crate::tensor::shape_str(&s)
            )))
        }
    };
    let mut img = GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            img.put_pixel(x as u32, y as u32, image::Luma([to_byte(t.data()[y * w + x])]));
        }
    }
    img.save(path)
        .map_err(|e| Error::data(format!("cannot write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_png_roundtrip_is_exact_for_byte_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let t = TensorBase::from_fn(&[3, 4, 5], |i| ((i * 7) % 256) as f32 / 255.0);
        save_rgb_png(&path, &t).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.shape(), &[3, 4, 5]);
        for (a, b) in t.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
