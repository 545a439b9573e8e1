use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamSet};
use crate::scalar::Scalar;

/// Per-channel batch normalization for (c, h, w) features. Training mode
/// normalizes with batch statistics and pushes running-stat updates onto the
/// graph; evaluation mode uses the stored running statistics (a pointwise
/// affine map, so spatial equivariance is preserved).
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new<S: Scalar>(ps: &mut ParamSet<S>, prefix: &str, channels: usize) -> Result<Self> {
        let gamma = ps.add_filled(&format!("{prefix}.gamma"), &[channels], S::one(), true)?;
        let beta = ps.add_zeros(&format!("{prefix}.beta"), &[channels], true)?;
        let running_mean = ps.add_zeros(&format!("{prefix}.running_mean"), &[channels], false)?;
        let running_var =
            ps.add_filled(&format!("{prefix}.running_var"), &[channels], S::one(), false)?;
        Ok(Self {
            gamma,
            beta,
            running_mean,
            running_var,
            channels,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, ps: &ParamSet<S>, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma, ps);
        let beta = g.param(self.beta, ps);
        g.batch_norm(
            x,
            gamma,
            beta,
            self.running_mean,
            self.running_var,
            ps,
            self.momentum,
            self.eps,
        )
    }
}

/// Layer normalization over the last axis, composed from primitives so its
/// adjoint needs no dedicated backward rule.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<S: Scalar>(ps: &mut ParamSet<S>, prefix: &str, dim: usize) -> Result<Self> {
        let gamma = ps.add_filled(&format!("{prefix}.gamma"), &[dim], S::one(), true)?;
        let beta = ps.add_zeros(&format!("{prefix}.beta"), &[dim], true)?;
        Ok(Self {
            gamma,
            beta,
            dim,
            eps: 1e-5,
        })
    }

    /// Accepts a vector (dim,) or matrix (rows, dim); normalizes each row.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, ps: &ParamSet<S>, x: Var) -> Result<Var> {
        let last = g.shape(x).len() - 1;
        let mu = g.mean_axis(x, last, true)?;
        let centered = g.sub(x, mu)?;
        let sq = g.square(centered)?;
        let var = g.mean_axis(sq, last, true)?;
        let shifted = g.add_scalar(var, S::from_f64(self.eps));
        let std = g.sqrt(shifted);
        let xhat = g.div(centered, std)?;
        let gamma = g.param(self.gamma, ps);
        let beta = g.param(self.beta, ps);
        let scaled = g.mul(xhat, gamma)?;
        g.add(scaled, beta)
    }
}
