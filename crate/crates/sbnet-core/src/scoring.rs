//! Description↔frame matching scores, computed on plain values after the
//! forward passes have produced masks, substitution vectors, and logits.

use crate::error::{Error, Result};
use crate::tensor::TensorBase;

/// Default weight on the color/type term of the match probability.
pub const DEFAULT_LAMBDA_CTM: f32 = 0.5;

/// Substitution vectors as plain values.
#[derive(Debug, Clone)]
pub struct SubstitutionBundle {
    pub fi_gt: Vec<f32>,
    pub fn_gt: Vec<f32>,
    pub fi_g: Vec<f32>,
    pub fn_g: Vec<f32>,
}

/// Score breakdown for one (description, frame) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchScore {
    /// Mean predicted-mask activation inside the candidate box; in [0, 1].
    pub mpr: f32,
    /// Sum of the two substitution cosine similarities; in [−2, 2].
    pub ss: f32,
    /// Image-side softmax mass on the language-side color and type; in (0, 2).
    pub ctm: f32,
    pub lambda_ctm: f32,
    /// mpr + ss + lambda_ctm · ctm.
    pub prob: f32,
}

/// Box-restricted mean of the predicted mask: Σ(M⊙b) / Σb.
pub fn mpr(m: &TensorBase<f32>, b: &TensorBase<f32>) -> Result<f32> {
    if m.shape() != b.shape() {
        return Err(Error::shape(format!(
            "mask {} and box mask {} differ",
            crate::tensor::shape_str(m.shape()),
            crate::tensor::shape_str(b.shape())
        )));
    }
    let area: f32 = b.data().iter().sum();
    if area <= 0.0 {
        return Err(Error::data("empty candidate box"));
    }
    let hit: f32 = m.data().iter().zip(b.data()).map(|(&mv, &bv)| mv * bv).sum();
    Ok(hit / area)
}

/// Cosine similarity with the ε-guarded denominator.
pub fn cosine(u: &[f32], v: &[f32]) -> f32 {
    let dot: f32 = u.iter().zip(v).map(|(&a, &b)| a * b).sum();
    let nu: f32 = u.iter().map(|&a| a * a).sum::<f32>().sqrt();
    let nv: f32 = v.iter().map(|&a| a * a).sum::<f32>().sqrt();
    dot / (nu * nv + 1e-8)
}

/// Substitution similarity: cs(FI_gt, FI_g) + cs(FN_gt, FN_g).
pub fn ss(bundle: &SubstitutionBundle) -> f32 {
    cosine(&bundle.fi_gt, &bundle.fi_g) + cosine(&bundle.fn_gt, &bundle.fn_g)
}

/// Numerically stable softmax of a logit vector.
pub fn softmax_vec(x: &[f32]) -> Vec<f32> {
    let max = x.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    exps.into_iter().map(|v| v / sum).collect()
}

/// softmax(C_i)[color] + softmax(T_i)[vtype].
pub fn ctm(c_i: &[f32], t_i: &[f32], color: usize, vtype: usize) -> Result<f32> {
    if color >= c_i.len() {
        return Err(Error::data(format!(
            "color index {color} out of range for {} logits",
            c_i.len()
        )));
    }
    if vtype >= t_i.len() {
        return Err(Error::data(format!(
            "type index {vtype} out of range for {} logits",
            t_i.len()
        )));
    }
    Ok(softmax_vec(c_i)[color] + softmax_vec(t_i)[vtype])
}

/// Combines the three components: Prob = MPR + SS + λ·CTM.
pub fn match_probability(
    m: &TensorBase<f32>,
    b: &TensorBase<f32>,
    bundle: &SubstitutionBundle,
    c_i: &[f32],
    t_i: &[f32],
    color: usize,
    vtype: usize,
    lambda_ctm: f32,
) -> Result<MatchScore> {
    let mpr_v = mpr(m, b)?;
    let ss_v = ss(bundle);
    let ctm_v = ctm(c_i, t_i, color, vtype)?;
    Ok(MatchScore {
        mpr: mpr_v,
        ss: ss_v,
        ctm: ctm_v,
        lambda_ctm,
        prob: mpr_v + ss_v + lambda_ctm * ctm_v,
    })
}

/// Argmax of a logit slice; ties break to the lowest index.
pub fn argmax(x: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(vals: &[f32], h: usize, w: usize) -> TensorBase<f32> {
        TensorBase::new(&[1, h, w], vals.to_vec()).unwrap()
    }

    #[test]
    fn mpr_extremes_and_constant() {
        let b = mask(&[1.0, 0.0, 0.0, 1.0], 2, 2);
        assert_eq!(mpr(&b, &b).unwrap(), 1.0);
        let zero = mask(&[0.0; 4], 2, 2);
        assert_eq!(mpr(&zero, &b).unwrap(), 0.0);
        let half = mask(&[0.5; 4], 2, 2);
        assert!((mpr(&half, &b).unwrap() - 0.5).abs() < 1e-7);
        assert!(mpr(&b, &zero).is_err());
    }

    #[test]
    fn ss_extremes() {
        let same = SubstitutionBundle {
            fi_gt: vec![1.0, 2.0],
            fn_gt: vec![3.0, -1.0],
            fi_g: vec![1.0, 2.0],
            fn_g: vec![3.0, -1.0],
        };
        assert!((ss(&same) - 2.0).abs() < 1e-5);
        let anti = SubstitutionBundle {
            fi_g: vec![-1.0, -2.0],
            fn_g: vec![-3.0, 1.0],
            ..same.clone()
        };
        assert!((ss(&anti) + 2.0).abs() < 1e-5);
        let ortho = SubstitutionBundle {
            fi_g: vec![2.0, -1.0],
            fn_g: vec![1.0, 3.0],
            ..same
        };
        assert!(ss(&ortho).abs() < 1e-5);
    }

    #[test]
    fn ctm_uniform_and_saturated() {
        let uc = vec![0.0; 12];
        let ut = vec![0.0; 10];
        let v = ctm(&uc, &ut, 3, 7).unwrap();
        assert!((v - (1.0 / 12.0 + 1.0 / 10.0)).abs() < 1e-6);

        let mut sharp_c = vec![-20.0; 12];
        sharp_c[2] = 20.0;
        let mut sharp_t = vec![-20.0; 10];
        sharp_t[5] = 20.0;
        let hit = ctm(&sharp_c, &sharp_t, 2, 5).unwrap();
        assert!((hit - 2.0).abs() < 1e-6);
        let miss = ctm(&sharp_c, &sharp_t, 3, 6).unwrap();
        assert!(miss < 1e-6);
    }

    #[test]
    fn ctm_rejects_out_of_range_indices() {
        assert!(ctm(&[0.0; 12], &[0.0; 10], 12, 0).is_err());
        assert!(ctm(&[0.0; 12], &[0.0; 10], 0, 10).is_err());
    }

    #[test]
    fn prob_is_the_exact_weighted_sum_and_linear_in_mpr() {
        let b = mask(&[1.0, 1.0, 1.0, 1.0], 2, 2);
        let bundle = SubstitutionBundle {
            fi_gt: vec![1.0, 0.0],
            fn_gt: vec![0.0, 1.0],
            fi_g: vec![1.0, 0.0],
            fn_g: vec![0.0, 1.0],
        };
        let mut sharp_c = vec![-20.0; 12];
        sharp_c[0] = 20.0;
        let mut sharp_t = vec![-20.0; 10];
        sharp_t[0] = 20.0;
        let m1 = mask(&[1.0; 4], 2, 2);
        let s = match_probability(&m1, &b, &bundle, &sharp_c, &sharp_t, 0, 0, 0.5).unwrap();
        assert!((s.prob - 4.0).abs() < 1e-5);
        assert_eq!(s.prob, s.mpr + s.ss + s.lambda_ctm * s.ctm);

        // Raising MPR by δ moves Prob by exactly δ.
        let m2 = mask(&[0.75; 4], 2, 2);
        let s2 = match_probability(&m2, &b, &bundle, &sharp_c, &sharp_t, 0, 0, 0.5).unwrap();
        assert!(((s.prob - s2.prob) - 0.25).abs() < 1e-6);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
    }
}
