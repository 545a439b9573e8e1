//! Raw slice kernels shared by forward evaluation and the reverse pass.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::shape_str;

/// C = A(m,k) @ B(k,n), row-major.
pub fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in a_row.iter().enumerate() {
            // One-hot rows (embedding lookup) make this skip worthwhile.
            if aik == S::zero() {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
    out
}

pub fn transpose2<S: Scalar>(x: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

/// Right-aligned broadcast of two shapes, NumPy style.
pub struct BroadcastPlan {
    pub out_shape: Vec<usize>,
    /// Per output dim: element stride into each operand, 0 on stretched dims.
    pub a_strides: Vec<usize>,
    pub b_strides: Vec<usize>,
}

pub fn broadcast_plan(a: &[usize], b: &[usize]) -> Result<BroadcastPlan> {
    let rank = a.len().max(b.len());
    let dim = |s: &[usize], i: usize| -> usize {
        // i indexes the padded shape from the left.
        let off = rank - s.len();
        if i < off {
            1
        } else {
            s[i - off]
        }
    };
    let mut out_shape = vec![0usize; rank];
    for i in 0..rank {
        let (da, db) = (dim(a, i), dim(b, i));
        if da != db && da != 1 && db != 1 {
            return Err(Error::shape(format!(
                "cannot broadcast {} with {}",
                shape_str(a),
                shape_str(b)
            )));
        }
        out_shape[i] = da.max(db);
    }
    let strides_for = |s: &[usize]| -> Vec<usize> {
        let off = rank - s.len();
        let mut natural = vec![0usize; s.len()];
        let mut acc = 1usize;
        for i in (0..s.len()).rev() {
            natural[i] = acc;
            acc *= s[i];
        }
        (0..rank)
            .map(|i| {
                if i < off || s[i - off] == 1 {
                     0
                } else {
                    natural[i - off]
                }
            })
            .collect()
    };
    Ok(BroadcastPlan {
        out_shape,
        a_strides: strides_for(a),
        b_strides: strides_for(b),
    })
}

/// Walks every output position of `plan`, handing the visitor the flat offsets
/// into both operands.
pub fn for_each_broadcast(plan: &BroadcastPlan, mut visit: impl FnMut(usize, usize, usize)) {
    let rank = plan.out_shape.len();
    let total: usize = plan.out_shape.iter().product();
    if total == 0 {
        return;
    }
    let mut idx = vec![0usize; rank];
    let mut a_off = 0usize;
    let mut b_off = 0usize;
    for flat in 0..total {
        visit(flat, a_off, b_off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            a_off += plan.a_strides[d];
            b_off += plan.b_strides[d];
            if idx[d] < plan.out_shape[d] {
                break;
            }
            a_off -= plan.a_strides[d] * plan.out_shape[d];
            b_off -= plan.b_strides[d] * plan.out_shape[d];
            idx[d] = 0;
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub ic: usize,
    pub ih: usize,
    pub iw: usize,
    pub oc: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

pub fn conv_out_dim(i: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = i + 2 * pad;
    if padded < k {
        return Err(Error::shape(format!(
            "conv kernel {k} exceeds padded input extent {padded}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

pub fn conv2d_forward<S: Scalar>(x: &[S], w: &[S], bias: Option<&[S]>, d: &ConvDims) -> Vec<S> {
    let mut out = vec![S::zero(); d.oc * d.oh * d.ow];
    if let Some(b) = bias {
        for oc in 0..d.oc {
            out[oc * d.oh * d.ow..(oc + 1) * d.oh * d.ow].fill(b[oc]);
        }
    }
    for oc in 0..d.oc {
        for ic in 0..d.ic {
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let wv = w[((oc * d.ic + ic) * d.kh + ky) * d.kw + kx];
                    for oy in 0..d.oh {
                        let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                        if iy < 0 || iy >= d.ih as isize {
                            continue;
                        }
                        let x_row = &x[(ic * d.ih + iy as usize) * d.iw..][..d.iw];
                        let o_row = &mut out[(oc * d.oh + oy) * d.ow..][..d.ow];
                        if d.stride == 1 {
                            let shift = kx as isize - d.pad as isize;
                            let lo = (-shift).max(0) as usize;
                            let hi = (d.iw as isize - shift).min(d.ow as isize).max(0) as usize;
                            for ox in lo..hi {
                                o_row[ox] += wv * x_row[(ox as isize + shift) as usize];
                            }
                        } else {
                            for ox in 0..d.ow {
                                let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                                if ix >= 0 && ix < d.iw as isize {
                                    o_row[ox] += wv * x_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns (dx, dw, db); `dx` is empty when `need_dx` is false.
pub fn conv2d_backward<S: Scalar>(
    x: &[S],
    w: &[S],
    gy: &[S],
    d: &ConvDims,
    need_dx: bool,
    need_dw: bool,
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let mut dx = vec![S::zero(); if need_dx { d.ic * d.ih * d.iw } else { 0 }];
    let mut dw = vec![S::zero(); if need_dw { d.oc * d.ic * d.kh * d.kw } else { 0 }];
    let mut db = vec![S::zero(); d.oc];
    for oc in 0..d.oc {
        let g_chan = &gy[oc * d.oh * d.ow..(oc + 1) * d.oh * d.ow];
        db[oc] = g_chan.iter().fold(S::zero(), |acc, &v| acc + v);
        for ic in 0..d.ic {
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let widx = ((oc * d.ic + ic) * d.kh + ky) * d.kw + kx;
                    let wv = w[widx];
                    let mut wacc = S::zero();
                    for oy in 0..d.oh {
                        let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                        if iy < 0 || iy >= d.ih as isize {
                            continue;
                        }
                        let x_base = (ic * d.ih + iy as usize) * d.iw;
                        let g_row = &g_chan[oy * d.ow..(oy + 1) * d.ow];
                        if d.stride == 1 {
                            let shift = kx as isize - d.pad as isize;
                            let lo = (-shift).max(0) as usize;
                            let hi = (d.iw as isize - shift).min(d.ow as isize).max(0) as usize;
                            if need_dw {
                                for ox in lo..hi {
                                    wacc += x[x_base + (ox as isize + shift) as usize] * g_row[ox];
                                }
                            }
                            if need_dx {
                                for ox in lo..hi {
                                    dx[x_base + (ox as isize + shift) as usize] += wv * g_row[ox];
                                }
                            }
                        } else {
                            for ox in 0..d.ow {
                                let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                                if ix < 0 || ix >= d.iw as isize {
                                    continue;
                                }
                                if need_dw {
                                    wacc += x[x_base + ix as usize] * g_row[ox];
                                }
                                if need_dx {
                                    dx[x_base + ix as usize] += wv * g_row[ox];
                                }
                            }
                        }
                    }
                    if need_dw {
                        dw[widx] += wacc;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}
