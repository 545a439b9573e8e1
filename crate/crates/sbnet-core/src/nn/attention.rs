use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamSet;
use crate::scalar::Scalar;

use super::{LayerNorm, Linear};

/// Multi-head self-attention over a (l, d_model) sequence. An optional
/// additive key bias of shape (l,) implements padding masks: 0 for visible
/// keys, a large negative value for padded ones.
#[derive(Debug, Clone)]
pub struct MultiHeadSelfAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub num_heads: usize,
    pub d_model: usize,
    pub head_dim: usize,
}

impl MultiHeadSelfAttention {
    pub fn new<S: Scalar>(
        ps: &mut ParamSet<S>,
        prefix: &str,
        d_model: usize,
        num_heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if num_heads == 0 || d_model % num_heads != 0 {
            return Err(Error::config(format!(
                "d_model {d_model} not divisible by num_heads {num_heads}"
            )));
        }
        Ok(Self {
            wq: Linear::new(ps, &format!("{prefix}.wq"), d_model, d_model, true, rng)?,
            wk: Linear::new(ps, &format!("{prefix}.wk"), d_model, d_model, true, rng)?,
            wv: Linear::new(ps, &format!("{prefix}.wv"), d_model, d_model, true, rng)?,
            wo: Linear::new(ps, &format!("{prefix}.wo"), d_model, d_model, true, rng)?,
            num_heads,
            d_model,
            head_dim: d_model / num_heads,
        })
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        ps: &ParamSet<S>,
        x: Var,
        key_bias: Option<Var>,
    ) -> Result<Var> {
        let q = self.wq.forward(g, ps, x)?;
        let k = self.wk.forward(g, ps, x)?;
        let v = self.wv.forward(g, ps, x)?;
        let scale = S::from_f64(1.0 / (self.head_dim as f64).sqrt());
        let mut heads = Vec::with_capacity(self.num_heads);
        for h in 0..self.num_heads {
            let lo = h * self.head_dim;
            let qh = g.slice(q, 1, lo, self.head_dim)?;
            let kh = g.slice(k, 1, lo, self.head_dim)?;
            let vh = g.slice(v, 1, lo, self.head_dim)?;
            let kt = g.transpose(kh)?;
            let raw = g.matmul(qh, kt)?;
            let mut scores = g.mul_scalar(raw, scale);
            if let Some(bias) = key_bias {
                scores = g.add(scores, bias)?;
            }
            let attn = g.softmax(scores, 1)?;
            heads.push(g.matmul(attn, vh)?);
        }
        let merged = g.concat(&heads, 1)?;
        self.wo.forward(g, ps, merged)
    }
}

/// Post-norm transformer encoder block: attention and feed-forward sublayers,
/// each wrapped as layer_norm(x + sublayer(x)).
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub attn: MultiHeadSelfAttention,
    pub ln1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln2: LayerNorm,
}

impl TransformerBlock {
    pub fn new<S: Scalar>(
        ps: &mut ParamSet<S>,
        prefix: &str,
        d_model: usize,
        num_heads: usize,
        ff_hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            attn: MultiHeadSelfAttention::new(ps, &format!("{prefix}.attn"), d_model, num_heads, rng)?,
            ln1: LayerNorm::new(ps, &format!("{prefix}.ln1"), d_model)?,
            ff1: Linear::new(ps, &format!("{prefix}.ff1"), d_model, ff_hidden, true, rng)?,
            ff2: Linear::new(ps, &format!("{prefix}.ff2"), ff_hidden, d_model, true, rng)?,
            ln2: LayerNorm::new(ps, &format!("{prefix}.ln2"), d_model)?,
        })
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        ps: &ParamSet<S>,
        x: Var,
        key_bias: Option<Var>,
    ) -> Result<Var> {
        let a = self.attn.forward(g, ps, x, key_bias)?;
        let res1 = g.add(x, a)?;
        let x1 = self.ln1.forward(g, ps, res1)?;
        let h = self.ff1.forward(g, ps, x1)?;
        let h = g.relu(h);
        let f = self.ff2.forward(g, ps, h)?;
        let res2 = g.add(x1, f)?;
        self.ln2.forward(g, ps, res2)
    }
}
