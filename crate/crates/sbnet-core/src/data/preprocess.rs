use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::TensorBase;

/// Bilinear resize of a (C, H, W) image to (C, out_h, out_w). Sample points
/// are pixel centers, so the identity size is exact.
pub fn resize_bilinear<S: Scalar>(
    img: &TensorBase<S>,
    out_h: usize,
    out_w: usize,
) -> Result<TensorBase<S>> {
    let shape = img.shape();
    if shape.len() != 3 {
        return Err(Error::shape(format!(
            "resize expects (C, H, W), got {} dims",
            shape.len()
        )));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::shape("resize with a zero-sized image".to_string()));
    }
    let mut out = TensorBase::<S>::zeros(&[c, out_h, out_w]);
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            for ch in 0..c {
                let p00 = Scalar::to_f64(img.at3(ch, y0, x0));
                let p01 = Scalar::to_f64(img.at3(ch, y0, x1));
                let p10 = Scalar::to_f64(img.at3(ch, y1, x0));
                let p11 = Scalar::to_f64(img.at3(ch, y1, x1));
                let top = p00 * (1.0 - wx) + p01 * wx;
                let bot = p10 * (1.0 - wx) + p11 * wx;
                out.set3(ch, oy, ox, S::from_f64(top * (1.0 - wy) + bot * wy));
            }
        }
    }
    Ok(out)
}

/// Maps a box from one image size to another, rounding to the nearest pixel
/// and clamping so the result stays in bounds with at least 1x1 extent.
pub fn scale_box(box_: [i64; 4], from_hw: (usize, usize), to_hw: (usize, usize)) -> [i64; 4] {
    let [x, y, w, h] = box_;
    let rx = to_hw.1 as f64 / from_hw.1 as f64;
    let ry = to_hw.0 as f64 / from_hw.0 as f64;
    let nx = (x as f64 * rx).round() as i64;
    let ny = (y as f64 * ry).round() as i64;
    let nw = ((w as f64 * rx).round() as i64).max(1);
    let nh = ((h as f64 * ry).round() as i64).max(1);
    let (tw, th) = (to_hw.1 as i64, to_hw.0 as i64);
    let nx = nx.clamp(0, tw - 1);
    let ny = ny.clamp(0, th - 1);
    [nx, ny, nw.min(tw - nx), nh.min(th - ny)]
}

/// Resize an image to a square target size and scale its box alongside.
pub fn resize_with_box<S: Scalar>(
    img: &TensorBase<S>,
    box_: [i64; 4],
    size: usize,
) -> Result<(TensorBase<S>, [i64; 4])> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let out = resize_bilinear(img, size, size)?;
    Ok((out, scale_box(box_, (h, w), (size, size))))
}

fn shift_image<S: Scalar>(img: &TensorBase<S>, dx: i64, dy: i64) -> TensorBase<S> {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let mut out = TensorBase::<S>::zeros(&[c, h, w]);
    for ch in 0..c {
        for y in 0..h {
            let sy = y as i64 - dy;
            if sy < 0 || sy >= h as i64 {
                continue;
            }
            for x in 0..w {
                let sx = x as i64 - dx;
                if sx < 0 || sx >= w as i64 {
                    continue;
                }
                out.set3(ch, y, x, img.at3(ch, sy as usize, sx as usize));
            }
        }
    }
    out
}

fn clip_box(box_: [i64; 4], hw: (usize, usize)) -> Option<[i64; 4]> {
    let [x, y, w, h] = box_;
    let (ih, iw) = (hw.0 as i64, hw.1 as i64);
    let x0 = x.max(0);
    let y0 = y.max(0);
    let x1 = (x + w).min(iw);
    let y1 = (y + h).min(ih);
    if x1 <= x0 || y1 <= y0 {
        return None;
    }
    Some([x0, y0, x1 - x0, y1 - y0])
}

/// Shifts image and box jointly by uniform integer offsets up to
/// `max_frac` of each dimension, zero-padding the exposed border. Draws are
/// rejected when clipping leaves less than a quarter of the original box
/// area; after `max_attempts` rejections the input is returned unshifted.
pub fn translate_augment<S: Scalar>(
    img: &TensorBase<S>,
    box_: [i64; 4],
    max_frac: f64,
    rng: &mut impl Rng,
) -> (TensorBase<S>, [i64; 4]) {
    const MAX_ATTEMPTS: usize = 5;
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let lim_x = (w as f64 * max_frac).floor() as i64;
    let lim_y = (h as f64 * max_frac).floor() as i64;
    let orig_area = box_[2] * box_[3];
    for _ in 0..MAX_ATTEMPTS {
        let dx = rng.gen_range(-lim_x..=lim_x);
        let dy = rng.gen_range(-lim_y..=lim_y);
        let shifted = [box_[0] + dx, box_[1] + dy, box_[2], box_[3]];
        match clip_box(shifted, (h, w)) {
            Some(clipped) if clipped[2] * clipped[3] * 4 >= orig_area => {
                return (shift_image(img, dx, dy), clipped);
            }
            _ => continue,
        }
    }
    (img.clone(), box_)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(c: usize, h: usize, w: usize) -> TensorBase<f32> {
        TensorBase::from_fn(&[c, h, w], |i| (i % 97) as f32 / 97.0)
    }

    #[test]
    fn resize_to_same_size_is_identity() {
        let img = ramp(3, 16, 16);
        let out = resize_bilinear(&img, 16, 16).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn resize_of_constant_image_stays_constant() {
        let img = TensorBase::<f32>::filled(&[3, 20, 14], 0.37);
        let out = resize_bilinear(&img, 96, 96).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.37).abs() < 1e-6));
    }

    #[test]
    fn resize_preserves_mean_roughly() {
        let img = ramp(1, 32, 32);
        let out = resize_bilinear(&img, 96, 96).unwrap();
        let m_in: f32 = img.data().iter().sum::<f32>() / img.numel() as f32;
        let m_out: f32 = out.data().iter().sum::<f32>() / out.numel() as f32;
        assert!((m_in - m_out).abs() < 0.05, "{m_in} vs {m_out}");
    }

    #[test]
    fn scale_box_halves_with_image() {
        assert_eq!(scale_box([10, 20, 30, 40], (100, 100), (50, 50)), [5, 10, 15, 20]);
    }

    #[test]
    fn scale_box_never_degenerates() {
        let b = scale_box([99, 99, 1, 1], (100, 100), (10, 10));
        assert!(b[2] >= 1 && b[3] >= 1);
        assert!(b[0] + b[2] <= 10 && b[1] + b[3] <= 10);
    }

    #[test]
    fn zero_translation_is_identity() {
        let img = ramp(3, 10, 10);
        let out = shift_image(&img, 0, 0);
        assert_eq!(out.data(), img.data());
    }

    #[test]
    fn translation_moves_box_and_pixels_together() {
        let mut img = TensorBase::<f32>::zeros(&[1, 20, 20]);
        img.set3(0, 5, 6, 1.0);
        let out = shift_image(&img, 3, 2);
        assert_eq!(out.at3(0, 7, 9), 1.0);
        assert_eq!(out.at3(0, 5, 6), 0.0);
        // Border exposed by the shift is zero-padded.
        assert_eq!(out.at3(0, 0, 0), 0.0);
    }

    #[test]
    fn augment_keeps_box_in_bounds_and_area_reasonable() {
        let img = ramp(3, 40, 40);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let (_, b) = translate_augment(&img, [10, 12, 16, 14], 0.1, &mut rng);
            assert!(b[0] >= 0 && b[1] >= 0);
            assert!(b[0] + b[2] <= 40 && b[1] + b[3] <= 40);
            assert!(b[2] * b[3] * 4 >= 16 * 14);
        }
    }
}
