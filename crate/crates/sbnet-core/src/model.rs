//! The full retrieval network: both encoders, co-attention fusion with the
//! mask head, and the auxiliary heads, wired for training (one big graph per
//! sample) and for retrieval (per-description and per-frame caches plus a
//! small per-pair graph).

use rand::Rng;

use crate::encoders::{EncoderConfig, ImageEncoder, TextEncoder};
use crate::error::Result;
use crate::fusion::{enhance, ChannelGate, CoAttention, MaskHead};
use crate::graph::{Graph, Mode, Var};
use crate::heads::{FuturePredictor, ImageClassifier, SubstitutionModule, TextClassifier};
use crate::loss::{compute_losses, LossConfig, LossInputs, LossVars};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::scoring::{ctm, mpr, softmax_vec, ss, MatchScore, SubstitutionBundle};
use crate::tensor::TensorBase;
use crate::text::{TokenSeq, TrackAttributes};

#[derive(Debug, Clone)]
pub struct SbNet {
    pub text: TextEncoder,
    pub image: ImageEncoder,
    pub coattn: CoAttention,
    pub gate: ChannelGate,
    pub mask: MaskHead,
    pub text_cls: TextClassifier,
    pub image_cls: ImageClassifier,
    pub subst: SubstitutionModule,
    pub future: FuturePredictor,
    pub cfg: EncoderConfig,
}

/// Graph-side handles for one training sample. The caller registers the
/// image, box mask and (optionally) the future target on the graph first,
/// which lets the gradient checker mark them as differentiable inputs while
/// the trainer registers plain constants.
pub struct TrainVars<'a> {
    pub tokens: &'a TokenSeq,
    /// (3, s, s) pixel tensor.
    pub image: Var,
    /// (1, h*, w*) binary box mask at feature resolution.
    pub box_mask: Var,
    /// Next frame resized to feature resolution, (3, h*, w*); None at the
    /// end of a track.
    pub future_target: Option<Var>,
    pub attrs: &'a TrackAttributes,
}

/// Per-sample forward products worth keeping around beyond the losses.
pub struct TrainOutputs {
    pub losses: LossVars,
    /// Predicted mask (1, h*, w*).
    pub mask: Var,
}

impl SbNet {
    pub fn new<S: Scalar>(
        ps: &mut ParamSet<S>,
        cfg: &EncoderConfig,
        num_colors: usize,
        num_types: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            text: TextEncoder::new(ps, cfg, rng)?,
            image: ImageEncoder::new(ps, cfg, rng)?,
            coattn: CoAttention::new(ps, cfg.e, cfg.c, rng)?,
            gate: ChannelGate::new(ps, cfg.e, cfg.c, rng)?,
            mask: MaskHead::new(ps, cfg.c, rng)?,
            text_cls: TextClassifier::new(ps, cfg.e, num_colors, num_types, rng)?,
            image_cls: ImageClassifier::new(ps, cfg.c, num_colors, num_types, rng)?,
            subst: SubstitutionModule::new(ps, cfg.e, cfg.c, rng)?,
            future: FuturePredictor::new(ps, cfg.c, rng)?,
            cfg: cfg.clone(),
        })
    }

    /// Full forward pass plus every loss term for one sample.
    pub fn training_losses<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        ps: &ParamSet<S>,
        tv: &TrainVars,
        loss_cfg: &LossConfig,
    ) -> Result<TrainOutputs> {
        let fn_mat = self.text.forward(g, ps, tv.tokens)?;
        let fi = self.image.forward(g, ps, tv.image)?;

        let a = self.coattn.forward(g, ps, fn_mat, fi)?;
        let (fn_e, fi_e) = enhance(g, fn_mat, fi, a)?;
        let fm = self.gate.forward(g, ps, fn_e, fi_e)?;
        let m = self.mask.forward(g, ps, fm)?;

        let fn_cls = self.text.cls(g, fn_mat)?;
        let text_logits = self.text_cls.forward(g, ps, fn_cls)?;
        let (image_logits, _) = self.image_cls.forward(g, ps, fi, tv.box_mask)?;
        let subst = self.subst.forward(g, ps, fn_mat, fi, tv.box_mask)?;
        let future = match tv.future_target {
            Some(target) => Some((self.future.forward(g, ps, fi)?, target)),
            None => None,
        };

        let losses = compute_losses(
            g,
            &LossInputs {
                m,
                b: tv.box_mask,
                text_logits,
                image_logits,
                subst,
                future,
                attrs: tv.attrs,
            },
            loss_cfg,
        )?;
        Ok(TrainOutputs { losses, mask: m })
    }

    /// Everything retrieval needs from one description, computed once.
    pub fn encode_description(
        &self,
        ps: &ParamSet<f32>,
        tokens: &TokenSeq,
    ) -> Result<DescriptionFeatures> {
        let mut g = Graph::<f32>::new(Mode::Eval);
        let fn_mat = self.text.forward(&mut g, ps, tokens)?;
        let pt = self.coattn.project_text(&mut g, ps, fn_mat)?;
        let (fn_gt, fi_g) = self.subst.text_side(&mut g, ps, fn_mat)?;
        Ok(DescriptionFeatures {
            fn_mat: g.value(fn_mat).clone(),
            pt: g.value(pt).clone(),
            fn_gt: g.value(fn_gt).data().to_vec(),
            fi_g: g.value(fi_g).data().to_vec(),
        })
    }

    /// Everything retrieval needs from one (frame, candidate box) pair,
    /// computed once; `box_mask` is the rasterised box at feature
    /// resolution.
    pub fn encode_frame(
        &self,
        ps: &ParamSet<f32>,
        image: &TensorBase<f32>,
        box_mask: &TensorBase<f32>,
    ) -> Result<FrameFeatures> {
        let mut g = Graph::<f32>::new(Mode::Eval);
        let img = g.constant(image.clone());
        let b = g.constant(box_mask.clone());
        let fi = self.image.forward(&mut g, ps, img)?;
        let pi = self.coattn.project_image(&mut g, ps, fi)?;
        let (image_logits, _) = self.image_cls.forward(&mut g, ps, fi, b)?;
        let (fi_gt, fn_g) = self.subst.image_side(&mut g, ps, fi, b)?;
        Ok(FrameFeatures {
            fi: g.value(fi).clone(),
            pi: g.value(pi).clone(),
            fi_gt: g.value(fi_gt).data().to_vec(),
            fn_g: g.value(fn_g).data().to_vec(),
            color_logits: g.value(image_logits.color).data().to_vec(),
            type_logits: g.value(image_logits.vtype).data().to_vec(),
            box_mask: box_mask.clone(),
        })
    }

    /// Predicted mask for a cached (description, frame) pair: re-runs only
    /// the fusion stack.
    pub fn pair_mask(
        &self,
        ps: &ParamSet<f32>,
        d: &DescriptionFeatures,
        f: &FrameFeatures,
    ) -> Result<TensorBase<f32>> {
        let mut g = Graph::<f32>::new(Mode::Eval);
        let fn_mat = g.constant(d.fn_mat.clone());
        let pt = g.constant(d.pt.clone());
        let fi = g.constant(f.fi.clone());
        let pi = g.constant(f.pi.clone());
        let a = self.coattn.attend(&mut g, pt, pi)?;
        let (fn_e, fi_e) = enhance(&mut g, fn_mat, fi, a)?;
        let fm = self.gate.forward(&mut g, ps, fn_e, fi_e)?;
        let m = self.mask.forward(&mut g, ps, fm)?;
        Ok(g.value(m).clone())
    }

    /// Match score of a cached pair. Attribute families the denoiser could
    /// not settle contribute nothing to the attribute term.
    pub fn score_pair(
        &self,
        ps: &ParamSet<f32>,
        d: &DescriptionFeatures,
        f: &FrameFeatures,
        color: Option<usize>,
        vtype: Option<usize>,
        lambda_ctm: f32,
    ) -> Result<MatchScore> {
        let m = self.pair_mask(ps, d, f)?;
        let bundle = SubstitutionBundle {
            fi_gt: f.fi_gt.clone(),
            fn_gt: d.fn_gt.clone(),
            fi_g: d.fi_g.clone(),
            fn_g: f.fn_g.clone(),
        };
        let mpr_v = mpr(&m, &f.box_mask)?;
        let ss_v = ss(&bundle);
        let ctm_v = match (color, vtype) {
            (Some(c), Some(t)) => ctm(&f.color_logits, &f.type_logits, c, t)?,
            (Some(c), None) => softmax_vec(&f.color_logits)[c],
            (None, Some(t)) => softmax_vec(&f.type_logits)[t],
            (None, None) => 0.0,
        };
        Ok(MatchScore {
            mpr: mpr_v,
            ss: ss_v,
            ctm: ctm_v,
            lambda_ctm,
            prob: mpr_v + ss_v + lambda_ctm * ctm_v,
        })
    }
}

/// Cached text-side features for one description.
#[derive(Debug, Clone)]
pub struct DescriptionFeatures {
    /// Token features (l, e).
    pub fn_mat: TensorBase<f32>,
    /// Co-attention text projection (l, e).
    pub pt: TensorBase<f32>,
    /// Pooled token feature (e).
    pub fn_gt: Vec<f32>,
    /// Language-generated image feature (c).
    pub fi_g: Vec<f32>,
}

/// Cached image-side features for one (frame, candidate box).
#[derive(Debug, Clone)]
pub struct FrameFeatures {
    /// Frame features (c, h, w).
    pub fi: TensorBase<f32>,
    /// Co-attention image projection (h·w, e).
    pub pi: TensorBase<f32>,
    /// Pooled frame feature (c).
    pub fi_gt: Vec<f32>,
    /// Image-generated language feature (e).
    pub fn_g: Vec<f32>,
    pub color_logits: Vec<f32>,
    pub type_logits: Vec<f32>,
    /// Rasterised candidate box (1, h, w).
    pub box_mask: TensorBase<f32>,
}
