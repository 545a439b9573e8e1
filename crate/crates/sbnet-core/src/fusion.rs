//! Cross-modal fusion: token↔position co-attention, mutual feature
//! enhancement, a language-driven channel gate, and the mask head.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{BatchNorm2d, Conv2d, Linear};
use crate::params::ParamSet;
use crate::scalar::Scalar;

/// Clamp half-width for predicted masks. 1e-6 (not the global 1e-8 guard)
/// because 1 − 1e-8 rounds to 1.0 in f32, which would let mask entries touch
/// the closed interval boundary.
pub const MASK_EPS: f64 = 1e-6;

/// Projects both modalities into a shared width and produces the attention
/// map A (l × h*w*), softmax-normalized over spatial positions. The two
/// projections are exposed separately so retrieval can cache each side.
#[derive(Debug, Clone)]
pub struct CoAttention {
    proj_text: Linear,
    proj_image: Conv2d,
    /// Scores divide by √c before the softmax.
    pub c: usize,
}

impl CoAttention {
    pub fn new<S: Scalar>(ps: &mut ParamSet<S>, e: usize, c: usize, rng: &mut impl Rng) -> Result<Self> {
        if e != c {
            return Err(Error::config(format!(
                "co-attention requires e == c, got e={e}, c={c}"
            )));
        }
        Ok(Self {
            // Shared projection width = e; a linear map for tokens, a 1×1
            // convolution for the spatial feature.
            proj_text: Linear::new(ps, "fuse.attn.text", e, e, true, rng)?,
            proj_image: Conv2d::new(ps, "fuse.attn.image", c, e, 1, 1, 0, true, rng)?,
            c,
        })
    }

    /// (l, e) → (l, e).
    pub fn project_text<S: Scalar>(&self, g: &mut Graph<S>, ps: &ParamSet<S>, fn_mat: Var) -> Result<Var> {
        self.proj_text.forward(g, ps, fn_mat)
    }

    /// (c, h, w) → (h·w, e): 1×1 conv, flatten, transpose.
    pub fn project_image<S: Scalar>(&self, g: &mut Graph<S>, ps: &ParamSet<S>, fi: Var) -> Result<Var> {
        let y = self.proj_image.forward(g, ps, fi)?;
        let s = g.shape(y).to_vec();
        let flat = g.reshape(y, &[s[0], s[1] * s[2]])?;
        g.transpose(flat)
    }

    /// Scaled dot-product of the two projections, row-softmaxed: A (l, h·w).
    pub fn attend<S: Scalar>(&self, g: &mut Graph<S>, pt: Var, pi: Var) -> Result<Var> {
        let pit = g.transpose(pi)?;
        let raw = g.matmul(pt, pit)?;
        let scaled = g.mul_scalar(raw, S::from_f64(1.0 / (self.c as f64).sqrt()));
        g.softmax(scaled, 1)
    }

    /// Full pass: FN (l,e) and FI (c,h,w) → A (l, h·w).
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        ps: &ParamSet<S>,
        fn_mat: Var,
        fi: Var,
    ) -> Result<Var> {
        let pt = self.project_text(g, ps, fn_mat)?;
        let pi = self.project_image(g, ps, fi)?;
        self.attend(g, pt, pi)
    }
}

/// Mutual enhancement: each modality adds the attention-weighted other.
/// FN_e = FN + A·flat(FI)ᵀ and FI_e = FI + unflatten(Aᵀ·FN).
pub fn enhance<S: Scalar>(
    g: &mut Graph<S>,
    fn_mat: Var,
    fi: Var,
    a: Var,
) -> Result<(Var, Var)> {
    let fs = g.shape(fi).to_vec();
    let (c, h, w) = (fs[0], fs[1], fs[2]);
    let flat = g.reshape(fi, &[c, h * w])?;
    let flat_t = g.transpose(flat)?;
    let text_gain = g.matmul(a, flat_t)?;
    let fn_e = g.add(fn_mat, text_gain)?;

    let at = g.transpose(a)?;
    let img_gain_rows = g.matmul(at, fn_mat)?;
    let img_gain = g.transpose(img_gain_rows)?;
    let img_gain = g.reshape(img_gain, &[c, h, w])?;
    let fi_e = g.add(fi, img_gain)?;
    Ok((fn_e, fi_e))
}

/// Squeezes the enhanced language feature into a per-channel sigmoid gate
/// and scales FI_e by it (broadcast over spatial positions).
#[derive(Debug, Clone)]
pub struct ChannelGate {
    l1: Linear,
    l2: Linear,
}

impl ChannelGate {
    pub fn new<S: Scalar>(ps: &mut ParamSet<S>, e: usize, c: usize, rng: &mut impl Rng) -> Result<Self> {
        let hidden = (e / 4).max(1);
        Ok(Self {
            l1: Linear::new(ps, "fuse.gate.l1", e, hidden, true, rng)?,
            l2: Linear::new(ps, "fuse.gate.l2", hidden, c, true, rng)?,
        })
    }

    /// Gate vector (c,) in (0,1) from the token mean of FN_e.
    pub fn gate<S: Scalar>(&self, g: &mut Graph<S>, ps: &ParamSet<S>, fn_e: Var) -> Result<Var> {
        let pooled = g.mean_axis(fn_e, 0, false)?;
        let h = self.l1.forward(g, ps, pooled)?;
        let h = g.relu(h);
        let raw = self.l2.forward(g, ps, h)?;
        Ok(g.sigmoid(raw))
    }

    /// FM = FI_e ⊙ gate, the modulated spatial feature.
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        ps: &ParamSet<S>,
        fn_e: Var,
        fi_e: Var,
    ) -> Result<Var> {
        let gate = self.gate(g, ps, fn_e)?;
        let c = g.shape(gate)[0];
        let col = g.reshape(gate, &[c, 1, 1])?;
        g.mul(fi_e, col)
    }
}

/// Mask head: three conv(3×3) → batch-norm → ReLU stages narrowing
/// c → a → a/2 → a/4 (a = c/2), a final 1-channel conv, a sigmoid, and an
/// ε-clamp keeping every entry strictly inside (0, 1).
#[derive(Debug, Clone)]
pub struct MaskHead {
    stages: Vec<(Conv2d, BatchNorm2d)>,
    last: Conv2d,
}

impl MaskHead {
    pub fn new<S: Scalar>(ps: &mut ParamSet<S>, c: usize, rng: &mut impl Rng) -> Result<Self> {
        if c % 8 != 0 {
            return Err(Error::config(format!(
                "mask head needs c divisible by 8, got {c}"
            )));
        }
        let a = c / 2;
        let widths = [(c, a), (a, a / 2), (a / 2, a / 4)];
        let mut stages = Vec::with_capacity(3);
        for (i, &(ic, oc)) in widths.iter().enumerate() {
            stages.push((
                Conv2d::new(ps, &format!("fuse.mask.conv{i}"), ic, oc, 3, 1, 1, false, rng)?,
                BatchNorm2d::new(ps, &format!("fuse.mask.bn{i}"), oc)?,
            ));
        }
        let last = Conv2d::new(ps, "fuse.mask.out", a / 4, 1, 3, 1, 1, true, rng)?;
        Ok(Self { stages, last })
    }

    /// FM (c,h,w) → M (1,h,w) with entries in (ε, 1−ε).
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, ps: &ParamSet<S>, fm: Var) -> Result<Var> {
        let mut x = fm;
        for (conv, bn) in &self.stages {
            x = conv.forward(g, ps, x)?;
            x = bn.forward(g, ps, x)?;
            x = g.relu(x);
        }
        let logits = self.last.forward(g, ps, x)?;
        let m = g.sigmoid(logits);
        let eps = S::from_f64(MASK_EPS);
        Ok(g.clamp(m, eps, S::one() - eps))
    }
}
