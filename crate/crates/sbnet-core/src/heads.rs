//! Auxiliary heads: attribute classifiers on both modalities, the
//! cross-domain substitution generators, and the next-frame predictor.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Conv2d, Linear};
use crate::params::ParamSet;
use crate::scalar::Scalar;

/// Color and type logits predicted from one modality.
#[derive(Debug, Clone, Copy)]
pub struct AttrLogits {
    /// Color logits, length = lexicon color count.
    pub color: Var,
    /// Type logits, length = lexicon type count.
    pub vtype: Var,
}

/// One linear layer over the CLS feature whose output splits into color and
/// type logit blocks.
#[derive(Debug, Clone)]
pub struct TextClassifier {
    lin: Linear,
    num_colors: usize,
    num_types: usize,
}

impl TextClassifier {
    pub fn new<S: Scalar>(
        ps: &mut ParamSet<S>,
        e: usize,
        num_colors: usize,
        num_types: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            lin: Linear::new(ps, "cls_text.lin", e, num_colors + num_types, true, rng)?,
            num_colors,
            num_types,
        })
    }

    /// fn_cls: (e,) → color and type logits.
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        ps: &ParamSet<S>,
        fn_cls: Var,
    ) -> Result<AttrLogits> {
        let y = self.lin.forward(g, ps, fn_cls)?;
        Ok(AttrLogits {
            color: g.slice(y, 0, 0, self.num_colors)?,
            vtype: g.slice(y, 0, self.num_colors, self.num_types)?,
        })
    }
}

/// Pools FI under a binary box mask, then classifies the pooled vector with
/// a two-layer MLP.
#[derive(Debug, Clone)]
pub struct ImageClassifier {
    l1: Linear,
    l2: Linear,
    num_colors: usize,
    num_types: usize,
}

impl ImageClassifier {
    pub fn new<S: Scalar>(
        ps: &mut ParamSet<S>,
        c: usize,
        num_colors: usize,
        num_types: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            l1: Linear::new(ps, "cls_img.l1", c, c, true, rng)?,
            l2: Linear::new(ps, "cls_img.l2", c, num_colors + num_types, true, rng)?,
            num_colors,
            num_types,
        })
    }

    /// Box-masked spatial mean of FI: (1/Σb) Σ FI⊙b, shape (c,). Gradients
    /// reach only the covered positions.
    pub fn pool<S: Scalar>(&self, g: &mut Graph<S>, fi: Var, b: Var) -> Result<Var> {
        pool_masked(g, fi, b)
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        ps: &ParamSet<S>,
        fi: Var,
        b: Var,
    ) -> Result<(AttrLogits, Var)> {
        let fi_cls = pool_masked(g, fi, b)?;
        let h = self.l1.forward(g, ps, fi_cls)?;
        let h = g.relu(h);
        let y = self.l2.forward(g, ps, h)?;
        Ok((
            AttrLogits {
                color: g.slice(y, 0, 0, self.num_colors)?,
                vtype: g.slice(y, 0, self.num_colors, self.num_types)?,
            },
            fi_cls,
        ))
    }
}

/// Masked spatial mean shared by the image classifier and the scorer.
pub fn pool_masked<S: Scalar>(g: &mut Graph<S>, fi: Var, b: Var) -> Result<Var> {
    let fs = g.shape(fi).to_vec();
    let bs = g.shape(b).to_vec();
    if fs.len() != 3 || bs.len() != 3 || bs[0] != 1 || bs[1] != fs[1] || bs[2] != fs[2] {
        return Err(Error::shape(format!(
            "mask pooling needs FI (c,h,w) and b (1,h,w), got {} and {}",
            crate::tensor::shape_str(&fs),
            crate::tensor::shape_str(&bs)
        )));
    }
    let area = g
        .value(b)
        .data()
        .iter()
        .fold(S::zero(), |acc, &v| acc + v);
    if area <= S::zero() {
        return Err(Error::data("empty box mask"));
    }
    let masked = g.mul(fi, b)?;
    let flat = g.reshape(masked, &[fs[0], fs[1] * fs[2]])?;
    let sums = g.sum_axis(flat, 1, false)?;
    Ok(g.mul_scalar(sums, S::one() / area))
}

/// The four substitution vectors: pooled targets from each modality and the
/// cross-generated counterparts.
#[derive(Debug, Clone, Copy)]
pub struct SubstitutionVars {
    /// Spatial mean of FI, length c.
    pub fi_gt: Var,
    /// Token mean of FN, length e.
    pub fn_gt: Var,
    /// Generated from the language side by an MLP, length c.
    pub fi_g: Var,
    /// Generated from the image side by a CNN, length e.
    pub fn_g: Var,
}

/// Cross-domain feature generators: an MLP maps pooled language features
/// into the image space, and a CNN over FI stacked with the box mask maps
/// back into the language space.
#[derive(Debug, Clone)]
pub struct SubstitutionModule {
    mlp1: Linear,
    mlp2: Linear,
    conv1: Conv2d,
    conv2: Conv2d,
    leaky_slope: f64,
}

impl SubstitutionModule {
    pub fn new<S: Scalar>(
        ps: &mut ParamSet<S>,
        e: usize,
        c: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            mlp1: Linear::new(ps, "subst.mlp1", e, e, true, rng)?,
            mlp2: Linear::new(ps, "subst.mlp2", e, c, true, rng)?,
            conv1: Conv2d::new(ps, "subst.conv1", c + 1, c, 3, 1, 1, true, rng)?,
            conv2: Conv2d::new(ps, "subst.conv2", c, e, 3, 1, 1, true, rng)?,
            leaky_slope: 0.01,
        })
    }

    /// Language half: fn_mat (l,e) → (fn_gt (e), fi_g (c)). Only touches the
    /// text, so retrieval can cache it per description.
    pub fn text_side<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        ps: &ParamSet<S>,
        fn_mat: Var,
    ) -> Result<(Var, Var)> {
        let fn_gt = g.mean_axis(fn_mat, 0, false)?;
        let hmid = self.mlp1.forward(g, ps, fn_gt)?;
        let hmid = g.leaky_relu(hmid, S::from_f64(self.leaky_slope));
        let fi_g = self.mlp2.forward(g, ps, hmid)?;
        Ok((fn_gt, fi_g))
    }

    /// Image half: fi (c,h,w), b (1,h,w) → (fi_gt (c), fn_g (e)); cacheable
    /// per (frame, box).
    pub fn image_side<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        ps: &ParamSet<S>,
        fi: Var,
        b: Var,
    ) -> Result<(Var, Var)> {
        let fs = g.shape(fi).to_vec();
        let (c, h, w) = (fs[0], fs[1], fs[2]);

        let flat = g.reshape(fi, &[c, h * w])?;
        let fi_gt = g.mean_axis(flat, 1, false)?;

        let stacked = g.concat(&[fi, b], 0)?;
        let y = self.conv1.forward(g, ps, stacked)?;
        let y = g.relu(y);
        let y = self.conv2.forward(g, ps, y)?;
        let e_ch = g.shape(y)[0];
        let yflat = g.reshape(y, &[e_ch, h * w])?;
        let fn_g = g.mean_axis(yflat, 1, false)?;
        Ok((fi_gt, fn_g))
    }

    /// fn_mat (l,e), fi (c,h,w), b (1,h,w) → the four substitution vectors.
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        ps: &ParamSet<S>,
        fn_mat: Var,
        fi: Var,
        b: Var,
    ) -> Result<SubstitutionVars> {
        let (fn_gt, fi_g) = self.text_side(g, ps, fn_mat)?;
        let (fi_gt, fn_g) = self.image_side(g, ps, fi, b)?;
        Ok(SubstitutionVars {
            fi_gt,
            fn_gt,
            fi_g,
            fn_g,
        })
    }
}

/// Three stacked 3×3 convolutions narrowing c → c/4 → c/16 → 3 with ReLUs
/// between and a linear output, predicting the next frame at feature
/// resolution.
#[derive(Debug, Clone)]
pub struct FuturePredictor {
    c1: Conv2d,
    c2: Conv2d,
    c3: Conv2d,
}

impl FuturePredictor {
    pub fn new<S: Scalar>(ps: &mut ParamSet<S>, c: usize, rng: &mut impl Rng) -> Result<Self> {
        if c % 16 != 0 {
            return Err(Error::config(format!(
                "future head needs c divisible by 16, got {c}"
            )));
        }
        Ok(Self {
            c1: Conv2d::new(ps, "future.c1", c, c / 4, 3, 1, 1, true, rng)?,
            c2: Conv2d::new(ps, "future.c2", c / 4, c / 16, 3, 1, 1, true, rng)?,
            c3: Conv2d::new(ps, "future.c3", c / 16, 3, 3, 1, 1, true, rng)?,
        })
    }

    /// fi (c,h,w) → predicted frame U (3,h,w).
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, ps: &ParamSet<S>, fi: Var) -> Result<Var> {
        let y = self.c1.forward(g, ps, fi)?;
        let y = g.relu(y);
        let y = self.c2.forward(g, ps, y)?;
        let y = g.relu(y);
        self.c3.forward(g, ps, y)
    }
}
