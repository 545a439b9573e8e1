//! The two feature extractors: a small transformer over token windows
//! producing FN (l × e), and a strided convolutional backbone producing
//! FI (c × h* × w*).

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{BatchNorm2d, Conv2d, Linear, TransformerBlock};
use crate::params::{ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::TensorBase;
use crate::text::{TokenSeq, RESERVED_IDS};

/// Additive score for masked attention keys; exp(-1e9) underflows to exactly
/// zero, so padded keys get strictly no weight.
const KEY_MASK_BIAS: f64 = -1e9;

/// Dimensions shared by both encoders and everything downstream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    /// Token window length.
    pub l: usize,
    /// Language feature width (columns of FN).
    pub e: usize,
    /// Image embedding channels (rows of flattened FI).
    pub c: usize,
    /// Transformer width.
    pub d_model: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    /// Input images are square with this side length.
    pub image_size: usize,
    /// Spatial reduction from image to feature grid; power of two up to 8.
    pub downsample_factor: usize,
    pub vocab_size: usize,
}

impl EncoderConfig {
    /// Small preset that trains in minutes on a CPU.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            l: 16,
            e: 64,
            c: 64,
            d_model: 64,
            num_heads: 4,
            num_layers: 2,
            image_size: 96,
            downsample_factor: 8,
            vocab_size,
        }
    }

    /// Full-scale preset; not trainable without the real dataset.
    pub fn paper(vocab_size: usize) -> Self {
        Self {
            l: 30,
            e: 2048,
            c: 2048,
            d_model: 256,
            num_heads: 4,
            num_layers: 12,
            image_size: 384,
            downsample_factor: 8,
            vocab_size,
        }
    }

    /// Tiny dimensions for exhaustive gradient checking.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            l: 8,
            e: 16,
            c: 16,
            d_model: 16,
            num_heads: 2,
            num_layers: 1,
            image_size: 32,
            downsample_factor: 8,
            vocab_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.e != self.c {
            return Err(Error::config(format!(
                "e ({}) must equal c ({}): the cross-modal residual additions need one shared width",
                self.e, self.c
            )));
        }
        if self.num_heads == 0 || self.d_model % self.num_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} not divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        if self.l < 2 {
            return Err(Error::config("token window l must be >= 2"));
        }
        if self.num_layers == 0 {
            return Err(Error::config("num_layers must be >= 1"));
        }
        if self.c % 16 != 0 {
            return Err(Error::config(format!(
                "c ({}) must be divisible by 16 for the head channel ladders",
                self.c
            )));
        }
        if !matches!(self.downsample_factor, 1 | 2 | 4 | 8) {
            return Err(Error::config(format!(
                "downsample_factor {} must be 1, 2, 4, or 8",
                self.downsample_factor
            )));
        }
        if self.image_size < self.downsample_factor {
            return Err(Error::config("image_size smaller than downsample_factor"));
        }
        if self.vocab_size < RESERVED_IDS {
            return Err(Error::config("vocab_size below the reserved id count"));
        }
        Ok(())
    }

    /// Side length of the feature grid: ceil(image_size / downsample_factor).
    pub fn feature_size(&self) -> usize {
        self.image_size.div_ceil(self.downsample_factor)
    }
}

/// Transformer text encoder. Token ids become one-hot rows against a learned
/// embedding table, learned positional embeddings are added, the blocks run
/// with a key-padding mask, and a final linear layer maps d_model → e.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub embed: ParamId,
    pub pos: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub proj: Linear,
    pub l: usize,
    pub d_model: usize,
    pub vocab_size: usize,
}

impl TextEncoder {
    pub fn new<S: Scalar>(
        ps: &mut ParamSet<S>,
        cfg: &EncoderConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let embed = ps.add_kaiming(
            "nlm.embed",
            &[cfg.vocab_size, cfg.d_model],
            cfg.d_model,
            rng,
        )?;
        let pos = ps.add_kaiming("nlm.pos", &[cfg.l, cfg.d_model], cfg.d_model, rng)?;
        let mut blocks = Vec::with_capacity(cfg.num_layers);
        for i in 0..cfg.num_layers {
            blocks.push(TransformerBlock::new(
                ps,
                &format!("nlm.block{i}"),
                cfg.d_model,
                cfg.num_heads,
                4 * cfg.d_model,
                rng,
            )?);
        }
        let proj = Linear::new(ps, "nlm.proj", cfg.d_model, cfg.e, true, rng)?;
        Ok(Self {
            embed,
            pos,
            blocks,
            proj,
            l: cfg.l,
            d_model: cfg.d_model,
            vocab_size: cfg.vocab_size,
        })
    }

    /// FN of shape (l, e).
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        ps: &ParamSet<S>,
        tokens: &TokenSeq,
    ) -> Result<Var> {
        if tokens.len() != self.l {
            return Err(Error::shape(format!(
                "token window length {} does not match configured l = {}",
                tokens.len(),
                self.l
            )));
        }
        for &id in &tokens.ids {
            if id >= self.vocab_size {
                return Err(Error::Vocab(format!(
                    "token id {id} out of vocabulary (size {})",
                    self.vocab_size
                )));
            }
        }
        let onehot = g.constant(TensorBase::from_fn(&[self.l, self.vocab_size], |i| {
            let (row, col) = (i / self.vocab_size, i % self.vocab_size);
            if tokens.ids[row] == col {
                S::one()
            } else {
                S::zero()
            }
        }));
        let table = g.param(self.embed, ps);
        let embedded = g.matmul(onehot, table)?;
        let pos = g.param(self.pos, ps);
        let mut x = g.add(embedded, pos)?;
        let key_bias = g.constant(TensorBase::from_fn(&[self.l], |i| {
            if tokens.attention_mask[i] == 1 {
                S::zero()
            } else {
                S::from_f64(KEY_MASK_BIAS)
            }
        }));
        for b in &self.blocks {
            x = b.forward(g, ps, x, Some(key_bias))?;
        }
        self.proj.forward(g, ps, x)
    }

    /// The CLS summary: row 0 of FN, shaped (e,).
    pub fn cls<S: Scalar>(&self, g: &mut Graph<S>, fn_mat: Var) -> Result<Var> {
        let e = g.shape(fn_mat)[1];
        let row = g.slice(fn_mat, 0, 0, 1)?;
        g.reshape(row, &[e])
    }
}

#[derive(Debug, Clone)]
enum Stage {
    Plain { conv: Conv2d, bn: BatchNorm2d },
    Residual {
        conv1: Conv2d,
        bn1: BatchNorm2d,
        conv2: Conv2d,
        bn2: BatchNorm2d,
    },
}

/// Convolutional image encoder: six 3×3 stages. The first log2(downsample)
/// stages stride 2, later stages keep stride 1 so the feature grid stays at
/// image_size / downsample; the last two stages are residual blocks at full
/// width c.
#[derive(Debug, Clone)]
pub struct ImageEncoder {
    stages: Vec<Stage>,
    pub image_size: usize,
    pub c: usize,
}

impl ImageEncoder {
    pub fn new<S: Scalar>(
        ps: &mut ParamSet<S>,
        cfg: &EncoderConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.c;
        let widths = [c / 4, c / 2, 3 * c / 4, c, c, c];
        let strided = cfg.downsample_factor.trailing_zeros() as usize;
        let mut stages = Vec::with_capacity(6);
        let mut in_ch = 3;
        for (i, &out_ch) in widths.iter().enumerate() {
            let stride = if i < strided { 2 } else { 1 };
            let prefix = format!("ipm.stage{i}");
            // The deepening tail keeps width and resolution, so it can carry
            // identity skips.
            if i >= 4 && in_ch == out_ch && stride == 1 {
                stages.push(Stage::Residual {
                    conv1: Conv2d::new(ps, &format!("{prefix}.conv1"), in_ch, out_ch, 3, 1, 1, false, rng)?,
                    bn1: BatchNorm2d::new(ps, &format!("{prefix}.bn1"), out_ch)?,
                    conv2: Conv2d::new(ps, &format!("{prefix}.conv2"), out_ch, out_ch, 3, 1, 1, false, rng)?,
                    bn2: BatchNorm2d::new(ps, &format!("{prefix}.bn2"), out_ch)?,
                });
            } else {
                stages.push(Stage::Plain {
                    conv: Conv2d::new(ps, &format!("{prefix}.conv"), in_ch, out_ch, 3, stride, 1, false, rng)?,
                    bn: BatchNorm2d::new(ps, &format!("{prefix}.bn"), out_ch)?,
                });
            }
            in_ch = out_ch;
        }
        Ok(Self {
            stages,
            image_size: cfg.image_size,
            c,
        })
    }

    /// FI of shape (c, h*, w*) from a (3, image_size, image_size) input.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, ps: &ParamSet<S>, image: Var) -> Result<Var> {
        let shape = g.shape(image).to_vec();
        if shape.len() != 3 || shape[0] != 3 || shape[1] != self.image_size || shape[2] != self.image_size
        {
            return Err(Error::shape(format!(
                "image must be (3, {0}, {0}), got {1}",
                self.image_size,
                crate::tensor::shape_str(&shape)
            )));
        }
        let mut x = image;
        for stage in &self.stages {
            x = match stage {
                Stage::Plain { conv, bn } => {
                    let y = conv.forward(g, ps, x)?;
                    let y = bn.forward(g, ps, y)?;
                    g.relu(y)
                }
                Stage::Residual { conv1, bn1, conv2, bn2 } => {
                    let y = conv1.forward(g, ps, x)?;
                    let y = bn1.forward(g, ps, y)?;
                    let y = g.relu(y);
                    let y = conv2.forward(g, ps, y)?;
                    let y = bn2.forward(g, ps, y)?;
                    let s = g.add(y, x)?;
                    g.relu(s)
                }
            };
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation_catches_mismatches() {
        let mut cfg = EncoderConfig::desk(100);
        assert!(cfg.validate().is_ok());
        cfg.e = 32;
        assert!(cfg.validate().is_err());
        let mut cfg = EncoderConfig::desk(100);
        cfg.num_heads = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = EncoderConfig::desk(100);
        cfg.downsample_factor = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn feature_size_uses_ceiling_division() {
        let mut cfg = EncoderConfig::desk(100);
        assert_eq!(cfg.feature_size(), 12);
        cfg.image_size = 100;
        assert_eq!(cfg.feature_size(), 13);
    }
}
