use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::TensorBase;

/// Rasterizes a pixel box [x, y, w, h] into a full-resolution indicator
/// `g: (H, W)` and its coarse counterpart `b: (1, h*, w*)`.
///
/// A coarse cell is active iff its center falls inside the box. Boxes too
/// small to capture any center activate the single cell containing the box
/// center, so `b` always has at least one active cell.
pub fn render_box_mask<S: Scalar>(
    box_: [i64; 4],
    image_hw: (usize, usize),
    feature_hw: (usize, usize),
) -> Result<(TensorBase<S>, TensorBase<S>)> {
    let [bx, by, bw, bh] = box_;
    let (ih, iw) = image_hw;
    let (fh, fw) = feature_hw;
    if bw <= 0 || bh <= 0 {
        return Err(Error::data(format!(
            "degenerate box [{bx}, {by}, {bw}, {bh}]: width and height must be positive"
        )));
    }
    if ih == 0 || iw == 0 || fh == 0 || fw == 0 {
        return Err(Error::data("mask sizes must be nonzero".to_string()));
    }
    if bx < 0 || by < 0 || bx + bw > iw as i64 || by + bh > ih as i64 {
        return Err(Error::data(format!(
            "box [{bx}, {by}, {bw}, {bh}] outside {iw}x{ih} image"
        )));
    }

    let mut g = TensorBase::<S>::zeros(&[ih, iw]);
    for y in by..by + bh {
        let row = y as usize * iw;
        for x in bx..bx + bw {
            g.data_mut()[row + x as usize] = S::one();
        }
    }

    // Box edges in continuous image coordinates; a pixel box [x, x+w) covers
    // exactly that half-open interval.
    let (x0, x1) = (bx as f64, (bx + bw) as f64);
    let (y0, y1) = (by as f64, (by + bh) as f64);
    let cell_w = iw as f64 / fw as f64;
    let cell_h = ih as f64 / fh as f64;

    let mut b = TensorBase::<S>::zeros(&[1, fh, fw]);
    let mut active = 0usize;
    for i in 0..fh {
        let cy = (i as f64 + 0.5) * cell_h;
        if cy < y0 || cy >= y1 {
            continue;
        }
        for j in 0..fw {
            let cx = (j as f64 + 0.5) * cell_w;
            if cx >= x0 && cx < x1 {
                b.data_mut()[i * fw + j] = S::one();
                active += 1;
            }
        }
    }

    if active == 0 {
        let ccx = (x0 + x1) / 2.0;
        let ccy = (y0 + y1) / 2.0;
        let j = ((ccx / cell_w) as usize).min(fw - 1);
        let i = ((ccy / cell_h) as usize).min(fh - 1);
        b.data_mut()[i * fw + j] = S::one();
    }

    Ok((g, b))
}
