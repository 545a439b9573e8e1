use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamSet};
use crate::scalar::Scalar;

/// Affine layer y = x Wᵀ + b with W stored as (out_features, in_features).
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<S: Scalar>(
        ps: &mut ParamSet<S>,
        prefix: &str,
        in_features: usize,
        out_features: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = ps.add_kaiming(
            &format!("{prefix}.weight"),
            &[out_features, in_features],
            in_features,
            rng,
        )?;
        let bias = if bias {
            Some(ps.add_zeros(&format!("{prefix}.bias"), &[out_features], true)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_features,
            out_features,
        })
    }

    /// Accepts a vector (in,) or matrix (rows, in).
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, ps: &ParamSet<S>, x: Var) -> Result<Var> {
        let w = g.param(self.weight, ps);
        let b = self.bias.map(|id| g.param(id, ps));
        g.linear(x, w, b)
    }
}
