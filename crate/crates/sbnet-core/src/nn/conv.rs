use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamSet};
use crate::scalar::Scalar;

/// 2-D convolution layer over (c, h, w) inputs, weights stored OIHW.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar>(
        ps: &mut ParamSet<S>,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel * kernel;
        let weight = ps.add_kaiming(
            &format!("{prefix}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            fan_in,
            rng,
        )?;
        let bias = if bias {
            Some(ps.add_zeros(&format!("{prefix}.bias"), &[out_channels], true)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        })
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, ps: &ParamSet<S>, x: Var) -> Result<Var> {
        let w = g.param(self.weight, ps);
        let b = self.bias.map(|id| g.param(id, ps));
        g.conv2d(x, w, b, self.stride, self.padding)
    }
}
