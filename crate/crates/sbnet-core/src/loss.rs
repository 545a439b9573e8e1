//! The four training losses and their weighted total, assembled as graph
//! nodes so one backward pass covers everything.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::heads::{AttrLogits, SubstitutionVars};
use crate::scalar::Scalar;
use crate::text::TrackAttributes;

#[derive(Debug, Clone)]
pub struct LossConfig {
    /// Weight on the classification term.
    pub lambda1: f64,
    /// Weight on the future-prediction term.
    pub lambda2: f64,
    pub label_smoothing: f64,
    /// Use the one-term segmentation loss (positive term only) instead of
    /// the two-term binary cross-entropy.
    pub seg_paper_literal: bool,
    /// Use the sign-uncorrected substitution loss 2 − cs + cs.
    pub sub_paper_literal: bool,
    /// Treat the pooled substitution targets as constants so the generators
    /// chase them rather than the encoders collapsing toward the generators.
    /// Disabled by the gradient checker, whose finite differences measure the
    /// full derivative.
    pub detach_targets: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.2,
            lambda2: 0.2,
            label_smoothing: 0.1,
            seg_paper_literal: false,
            sub_paper_literal: false,
            detach_targets: true,
        }
    }
}

/// Loss nodes still attached to the graph; read values after forward, call
/// backward on `total`.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub seg: Var,
    pub cls: Var,
    pub sub: Var,
    pub fut: Var,
    /// True when the sample had no next frame and the future term is a
    /// constant zero.
    pub fut_missing: bool,
}

/// Plain-value snapshot of [`LossVars`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub total: f32,
    pub seg: f32,
    pub cls: f32,
    pub sub: f32,
    pub fut: f32,
    pub fut_missing: bool,
}

impl LossReport {
    pub fn read<S: Scalar>(g: &Graph<S>, vars: &LossVars) -> Result<Self> {
        Ok(Self {
            total: g.scalar_value(vars.total)?.to_f32(),
            seg: g.scalar_value(vars.seg)?.to_f32(),
            cls: g.scalar_value(vars.cls)?.to_f32(),
            sub: g.scalar_value(vars.sub)?.to_f32(),
            fut: g.scalar_value(vars.fut)?.to_f32(),
            fut_missing: vars.fut_missing,
        })
    }
}

/// Everything one sample contributes to the loss.
pub struct LossInputs<'a> {
    /// Predicted mask (1, h*, w*), already clamped into (0, 1).
    pub m: Var,
    /// Binary box target (1, h*, w*).
    pub b: Var,
    pub text_logits: AttrLogits,
    pub image_logits: AttrLogits,
    pub subst: SubstitutionVars,
    /// Predicted future frame and its resized target; None at track end.
    pub future: Option<(Var, Var)>,
    pub attrs: &'a TrackAttributes,
}

/// Segmentation: two-term pixel-mean binary cross-entropy of M against b, or
/// the positive term alone under the literal flag.
fn seg_loss<S: Scalar>(g: &mut Graph<S>, m: Var, b: Var, literal: bool) -> Result<Var> {
    if !literal {
        return g.bce_mean(m, b);
    }
    let log_m = g.ln(m);
    let pos = g.mul(b, log_m)?;
    let mean = g.mean_all(pos)?;
    Ok(g.neg(mean))
}

/// Label-smoothed cross-entropies of the four attribute predictions against
/// the voted attributes; families nobody mentioned contribute nothing.
fn cls_loss<S: Scalar>(
    g: &mut Graph<S>,
    text: &AttrLogits,
    image: &AttrLogits,
    attrs: &TrackAttributes,
    smoothing: f64,
) -> Result<Var> {
    let mut terms = Vec::new();
    if let Some(color) = attrs.color_id {
        terms.push(g.cross_entropy_smoothed(text.color, color, smoothing)?);
        terms.push(g.cross_entropy_smoothed(image.color, color, smoothing)?);
    }
    if let Some(vtype) = attrs.type_id {
        terms.push(g.cross_entropy_smoothed(text.vtype, vtype, smoothing)?);
        terms.push(g.cross_entropy_smoothed(image.vtype, vtype, smoothing)?);
    }
    match terms.split_first() {
        None => Ok(g.scalar_const(S::zero())),
        Some((&first, rest)) => {
            let mut acc = first;
            for &t in rest {
                acc = g.add(acc, t)?;
            }
            Ok(acc)
        }
    }
}

/// Substitution: 2 − cs(FI_gt, FI_g) − cs(FN_gt, FN_g) (corrected sign), or
/// 2 − cs + cs under the literal flag.
fn sub_loss<S: Scalar>(
    g: &mut Graph<S>,
    sv: &SubstitutionVars,
    literal: bool,
    detach_targets: bool,
) -> Result<Var> {
    let (fi_gt, fn_gt) = if detach_targets {
        (g.detach(sv.fi_gt), g.detach(sv.fn_gt))
    } else {
        (sv.fi_gt, sv.fn_gt)
    };
    let cs_i = g.cosine_similarity(fi_gt, sv.fi_g)?;
    let cs_n = g.cosine_similarity(fn_gt, sv.fn_g)?;
    let two = g.scalar_const(S::from_f64(2.0));
    let partial = g.sub(two, cs_i)?;
    if literal {
        g.add(partial, cs_n)
    } else {
        g.sub(partial, cs_n)
    }
}

/// Builds seg/cls/sub/fut and the weighted total:
/// total = seg + λ₁·cls + sub + λ₂·fut.
pub fn compute_losses<S: Scalar>(
    g: &mut Graph<S>,
    inputs: &LossInputs,
    cfg: &LossConfig,
) -> Result<LossVars> {
    let seg = seg_loss(g, inputs.m, inputs.b, cfg.seg_paper_literal)?;
    let cls = cls_loss(
        g,
        &inputs.text_logits,
        &inputs.image_logits,
        inputs.attrs,
        cfg.label_smoothing,
    )?;
    let sub = sub_loss(g, &inputs.subst, cfg.sub_paper_literal, cfg.detach_targets)?;
    let (fut, fut_missing) = match inputs.future {
        Some((u, target)) => (g.mse_mean(u, target)?, false),
        None => (g.scalar_const(S::zero()), true),
    };

    let cls_w = g.mul_scalar(cls, S::from_f64(cfg.lambda1));
    let fut_w = g.mul_scalar(fut, S::from_f64(cfg.lambda2));
    let t1 = g.add(seg, cls_w)?;
    let t2 = g.add(t1, sub)?;
    let total = g.add(t2, fut_w)?;
    Ok(LossVars {
        total,
        seg,
        cls,
        sub,
        fut,
        fut_missing,
    })
}
