//! Reverse-mode automatic differentiation over a recorded op tape.
//!
//! A [`Graph`] owns every intermediate tensor produced during one forward
//! pass. Operations append nodes; [`Graph::backward`] replays the tape once in
//! reverse, accumulating adjoints additively so tensors used several times
//! receive summed gradients. Parameters are snapshotted from a
//! [`ParamSet`] at registration and their gradients read back by id after the
//! backward pass.

mod backward;
pub mod kernels;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::{numel, shape_str, TensorBase};

use kernels::{broadcast_plan, conv_out_dim, for_each_broadcast, ConvDims};

/// Handle to a node in one specific [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
pub(crate) enum Op<S: Scalar> {
    Leaf,
    Matmul { a: Var, b: Var },
    Transpose { x: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Div { a: Var, b: Var },
    Neg { x: Var },
    AddScalar { x: Var },
    MulScalar { x: Var, c: S },
    Sqrt { x: Var },
    Ln { x: Var },
    Relu { x: Var },
    LeakyRelu { x: Var, slope: S },
    Sigmoid { x: Var },
    Clamp { x: Var },
    Detach,
    Softmax { x: Var, axis: usize },
    MeanAxis { x: Var, axis: usize },
    MeanAll { x: Var },
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Reshape { x: Var },
    Conv2d { x: Var, w: Var, b: Option<Var>, dims: ConvDims },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<S>, invstd: Vec<S>, batch_stats: bool },
}

pub(crate) struct Node<S: Scalar> {
    pub op: Op<S>,
    pub value: TensorBase<S>,
    pub requires_grad: bool,
}

pub struct Graph<S: Scalar> {
    pub(crate) nodes: Vec<Node<S>>,
    mode: Mode,
    param_vars: HashMap<ParamId, Var>,
    param_order: Vec<ParamId>,
    buffer_updates: Vec<(ParamId, Vec<S>)>,
    pub(crate) grads: Vec<Option<Vec<S>>>,
    /// Test fixture: deliberately biases the ReLU adjoint so negative-control
    /// gradcheck runs fail. Never set outside diagnostics.
    pub corrupt_relu_adjoint: bool,
}

impl<S: Scalar> Graph<S> {
    pub fn new(mode: Mode) -> Self {
        Self {
            nodes: Vec::new(),
            mode,
            param_vars: HashMap::new(),
            param_order: Vec::new(),
            buffer_updates: Vec::new(),
            grads: Vec::new(),
            corrupt_relu_adjoint: false,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &TensorBase<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar_value(&self, v: Var) -> Result<S> {
        self.nodes[v.0].value.to_scalar()
    }

    /// Gradient of the last backward target with respect to `v`, if any
    /// reached it.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Parameter gradients in registration order.
    pub fn param_grads(&self) -> Vec<(ParamId, &[S])> {
        self.param_order
            .iter()
            .filter_map(|id| {
                let var = self.param_vars[id];
                self.grad(var).map(|g| (*id, g))
            })
            .collect()
    }

    /// Batch-norm running-statistic updates recorded during a training-mode
    /// forward, in execution order.
    pub fn take_buffer_updates(&mut self) -> Vec<(ParamId, Vec<S>)> {
        std::mem::take(&mut self.buffer_updates)
    }

    fn push(&mut self, op: Op<S>, value: TensorBase<S>, requires_grad: bool) -> Var {
        debug_assert!(
            value.all_finite(),
            "non-finite value out of {:?}",
            std::mem::discriminant(&op)
        );
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(id)
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf holding externally supplied data. Set `requires_grad` on the
    /// tensor beforehand to receive a gradient for it.
    pub fn input(&mut self, t: TensorBase<S>) -> Var {
        let rg = t.requires_grad;
        self.push(Op::Leaf, t, rg)
    }

    pub fn constant(&mut self, mut t: TensorBase<S>) -> Var {
        t.requires_grad = false;
        self.push(Op::Leaf, t, false)
    }

    pub fn scalar_const(&mut self, v: S) -> Var {
        self.constant(TensorBase::scalar(v))
    }

    /// Registers a parameter value snapshot. Repeated registration of the same
    /// id returns the existing node so gradients accumulate in one place.
    pub fn param(&mut self, id: ParamId, ps: &ParamSet<S>) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        let t = ps.get(id).clone();
        let rg = t.requires_grad;
        let var = self.push(Op::Leaf, t, rg);
        self.param_vars.insert(id, var);
        self.param_order.push(id);
        var
    }

    // ---- primitive forward ops -------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!(
                "matmul needs (m,k)x(k,n), got {} and {}",
                shape_str(sa),
                shape_str(sb)
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(
            self.value(a).data(),
            self.value(b).data(),
            m,
            k,
            n,
        );
        let t = TensorBase::new(&[m, n], data)?;
        let rg = self.req(a) || self.req(b);
        Ok(self.push(Op::Matmul { a, b }, t, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::shape(format!(
                "transpose expects a matrix, got {}",
                shape_str(s)
            )));
        }
        let (r, c) = (s[0], s[1]);
        let data = kernels::transpose2(self.value(x).data(), r, c);
        let t = TensorBase::new(&[c, r], data)?;
        let rg = self.req(x);
        Ok(self.push(Op::Transpose { x }, t, rg))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        make: impl Fn(Var, Var) -> Op<S>,
        f: impl Fn(S, S) -> S,
    ) -> Result<Var> {
        let plan = broadcast_plan(self.shape(a), self.shape(b))?;
        let mut out = vec![S::zero(); numel(&plan.out_shape)];
        {
            let (da, db) = (self.value(a).data(), self.value(b).data());
            for_each_broadcast(&plan, |flat, ai, bi| {
                out[flat] = f(da[ai], db[bi]);
            });
        }
        let t = TensorBase::new(&plan.out_shape, out)?;
        let rg = self.req(a) || self.req(b);
        Ok(self.push(make(a, b), t, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |a, b| Op::Add { a, b }, |x, y| x + y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |a, b| Op::Mul { a, b }, |x, y| x * y)
    }

    /// Division with an epsilon-guarded, sign-preserving denominator.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |a, b| Op::Div { a, b }, |x, y| x / guard_div::<S>(y))
    }

    fn unary(
        &mut self,
        x: Var,
        op: Op<S>,
        f: impl Fn(S) -> S,
    ) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let t = TensorBase::new(&src.shape().to_vec(), data).expect("same-shape map");
        let rg = self.req(x);
        self.push(op, t, rg)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, Op::Neg { x }, |v| -v)
    }

    pub fn add_scalar(&mut self, x: Var, c: S) -> Var {
        self.unary(x, Op::AddScalar { x }, |v| v + c)
    }

    pub fn mul_scalar(&mut self, x: Var, c: S) -> Var {
        self.unary(x, Op::MulScalar { x, c }, |v| v * c)
    }

    /// sqrt(max(x, 0)).
    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sqrt { x }, |v| v.max(S::zero()).sqrt())
    }

    /// ln(max(x, eps)).
    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, Op::Ln { x }, |v| v.max(S::eps_guard()).ln())
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu { x }, |v| v.max(S::zero()))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: S) -> Var {
        self.unary(
            x,
            Op::LeakyRelu { x, slope },
            |v| if v > S::zero() { v } else { v * slope },
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid { x }, sigmoid_stable)
    }

    /// Clamp with a straight-through adjoint.
    pub fn clamp(&mut self, x: Var, lo: S, hi: S) -> Var {
        self.unary(x, Op::Clamp { x }, |v| v.max(lo).min(hi))
    }

    /// Identity forward, zero adjoint: downstream consumers treat the value
    /// as a constant.
    pub fn detach(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.push(Op::Detach, t, false)
    }

    /// Numerically stable softmax along `axis` (max subtracted per lane).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(format!(
                "softmax axis {axis} out of range for {}",
                shape_str(&shape)
            )));
        }
        if shape[axis] == 0 {
            return Err(Error::Numeric("degenerate softmax axis".into()));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![S::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut mx = S::neg_infinity();
                for j in 0..len {
                    mx = mx.max(src[base + j * inner]);
                }
                let mut sum = S::zero();
                for j in 0..len {
                    let e = (src[base + j * inner] - mx).exp();
                    out[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[base + j * inner] /= sum;
                }
            }
        }
        let t = TensorBase::new(&shape, out)?;
        let rg = self.req(x);
        Ok(self.push(Op::Softmax { x, axis }, t, rg))
    }

    /// Mean over one axis. `keepdim` retains the axis with extent 1.
    pub fn mean_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(format!(
                "mean axis {axis} out of range for {}",
                shape_str(&shape)
            )));
        }
        if shape[axis] == 0 {
            return Err(Error::shape("mean over an empty axis"));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let inv = S::one() / S::from_f64(len as f64);
        let mut out = vec![S::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += src[(o * len + j) * inner + i];
                }
            }
            for i in 0..inner {
                out[o * inner + i] *= inv;
            }
        }
        let mut new_shape: Vec<usize> = shape.clone();
        if keepdim {
            new_shape[axis] = 1;
        } else {
            new_shape.remove(axis);
        }
        let t = TensorBase::new(&new_shape, out)?;
        let rg = self.req(x);
        // keepdim only affects the reported shape; backward broadcasts back.
        Ok(self.push(Op::MeanAxis { x, axis }, t, rg))
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x).data();
        if src.is_empty() {
            return Err(Error::shape("mean of an empty tensor"));
        }
        let sum = src.iter().fold(S::zero(), |acc, &v| acc + v);
        let t = TensorBase::scalar(sum / S::from_f64(src.len() as f64));
        let rg = self.req(x);
        Ok(self.push(Op::MeanAll { x }, t, rg))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::shape("concat of zero tensors"));
        }
        let first = self.shape(xs[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::shape(format!(
                "concat axis {axis} out of range for {}",
                shape_str(&first)
            )));
        }
        let mut axis_total = 0usize;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(Error::shape(format!(
                    "concat operand {} incompatible with {}",
                    shape_str(s),
                    shape_str(&first)
                )));
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let (outer, _, inner) = axis_split(&out_shape, axis);
        let mut out = vec![S::zero(); numel(&out_shape)];
        let mut offset = 0usize;
        for &v in xs {
            let part_len = self.shape(v)[axis];
            let src = self.value(v).data();
            for o in 0..outer {
                let dst_base = (o * axis_total + offset) * inner;
                let src_base = o * part_len * inner;
                out[dst_base..dst_base + part_len * inner]
                    .copy_from_slice(&src[src_base..src_base + part_len * inner]);
            }
            offset += part_len;
        }
        let t = TensorBase::new(&out_shape, out)?;
        let rg = xs.iter().any(|&v| self.req(v));
        Ok(self.push(
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            t,
            rg,
        ))
    }

    /// Contiguous window `[start, start+len)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(Error::shape(format!(
                "slice [{start}, {}) on axis {axis} invalid for {}",
                start + len,
                shape_str(&shape)
            )));
        }
        let (outer, full, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut out = vec![S::zero(); outer * len * inner];
        for o in 0..outer {
            let src_base = (o * full + start) * inner;
            let dst_base = o * len * inner;
            out[dst_base..dst_base + len * inner]
                .copy_from_slice(&src[src_base..src_base + len * inner]);
        }
        let t = TensorBase::new(&out_shape, out)?;
        let rg = self.req(x);
        Ok(self.push(Op::Slice { x, axis, start }, t, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshaped(shape)?;
        let rg = self.req(x);
        Ok(self.push(Op::Reshape { x }, t, rg))
    }

    /// 2-D convolution over CHW input with OIHW weights.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 4 {
            return Err(Error::shape(format!(
                "conv2d expects (c,h,w) input and (o,i,kh,kw) weights, got {} and {}",
                shape_str(&xs),
                shape_str(&ws)
            )));
        }
        if xs[0] != ws[1] {
            return Err(Error::shape(format!(
                "conv2d channel mismatch: input {} vs weight {}",
                xs[0], ws[1]
            )));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d stride must be positive"));
        }
        if let Some(bv) = b {
            let bs = self.shape(bv);
            if bs != [ws[0]] {
                return Err(Error::shape(format!(
                    "conv2d bias shape {} does not match {} output channels",
                    shape_str(bs),
                    ws[0]
                )));
            }
        }
        let dims = ConvDims {
            ic: xs[0],
            ih: xs[1],
            iw: xs[2],
            oc: ws[0],
            kh: ws[2],
            kw: ws[3],
            stride,
            pad: padding,
            oh: conv_out_dim(xs[1], ws[2], stride, padding)?,
            ow: conv_out_dim(xs[2], ws[3], stride, padding)?,
        };
        let bias_data = b.map(|bv| self.value(bv).data().to_vec());
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            bias_data.as_deref(),
            &dims,
        );
        let t = TensorBase::new(&[dims.oc, dims.oh, dims.ow], out)?;
        let rg = self.req(x) || self.req(w) || b.map(|bv| self.req(bv)).unwrap_or(false);
        Ok(self.push(Op::Conv2d { x, w, b, dims }, t, rg))
    }

    /// Per-channel batch normalization over the spatial extent of a (c,h,w)
    /// tensor. Training mode normalizes with batch statistics and records
    /// running-stat updates (momentum `momentum`); eval mode normalizes with
    /// the stored running statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean_id: ParamId,
        running_var_id: ParamId,
        ps: &ParamSet<S>,
        momentum: f64,
        eps: f64,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 {
            return Err(Error::shape(format!(
                "batch_norm expects (c,h,w), got {}",
                shape_str(&shape)
            )));
        }
        let (c, n) = (shape[0], shape[1] * shape[2]);
        if n == 0 {
            return Err(Error::shape("batch_norm over empty spatial extent"));
        }
        for (v, what) in [(gamma, "gamma"), (beta, "beta")] {
            if self.shape(v) != [c] {
                return Err(Error::shape(format!(
                    "batch_norm {what} shape {} does not match {c} channels",
                    shape_str(self.shape(v))
                )));
            }
        }
        let eps_s = S::from_f64(eps);
        let batch_stats = self.mode == Mode::Train;
        let src = self.value(x).data().to_vec();
        let g = self.value(gamma).data().to_vec();
        let bta = self.value(beta).data().to_vec();
        let mut out = vec![S::zero(); src.len()];
        let mut xhat = vec![S::zero(); src.len()];
        let mut invstd = vec![S::zero(); c];

        if batch_stats {
            let rm_old = ps.get(running_mean_id).data().to_vec();
            let rv_old = ps.get(running_var_id).data().to_vec();
            let mut rm_new = vec![S::zero(); c];
            let mut rv_new = vec![S::zero(); c];
            let mom = S::from_f64(momentum);
            let keep = S::one() - mom;
            for ch in 0..c {
                let lane = &src[ch * n..(ch + 1) * n];
                let inv_n = S::one() / S::from_f64(n as f64);
                let mean = lane.iter().fold(S::zero(), |a, &v| a + v) * inv_n;
                let var = lane
                    .iter()
                    .fold(S::zero(), |a, &v| a + (v - mean) * (v - mean))
                    * inv_n;
                let istd = S::one() / (var + eps_s).sqrt();
                invstd[ch] = istd;
                for (i, &v) in lane.iter().enumerate() {
                    let xh = (v - mean) * istd;
                    xhat[ch * n + i] = xh;
                    out[ch * n + i] = g[ch] * xh + bta[ch];
                }
                let var_unbiased = if n > 1 {
                    var * S::from_f64(n as f64 / (n - 1) as f64)
                } else {
                    var
                };
                rm_new[ch] = keep * rm_old[ch] + mom * mean;
                rv_new[ch] = keep * rv_old[ch] + mom * var_unbiased;
            }
            self.buffer_updates.push((running_mean_id, rm_new));
            self.buffer_updates.push((running_var_id, rv_new));
        } else {
            let rm = ps.get(running_mean_id).data();
            let rv = ps.get(running_var_id).data();
            for ch in 0..c {
                let istd = S::one() / (rv[ch] + eps_s).sqrt();
                invstd[ch] = istd;
                for i in 0..n {
                    let xh = (src[ch * n + i] - rm[ch]) * istd;
                    xhat[ch * n + i] = xh;
                    out[ch * n + i] = g[ch] * xh + bta[ch];
                }
            }
        }
        let t = TensorBase::new(&shape, out)?;
        let rg = self.req(x) || self.req(gamma) || self.req(beta);
        Ok(self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                invstd,
                batch_stats,
            },
            t,
            rg,
        ))
    }

    // ---- composed helpers --------------------------------------------------

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.neg(b);
        self.add(a, nb)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.mul(x, x)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let m = self.mean_all(x)?;
        Ok(self.mul_scalar(m, S::from_f64(n as f64)))
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let len = self.shape(x)[axis];
        let m = self.mean_axis(x, axis, keepdim)?;
        Ok(self.mul_scalar(m, S::from_f64(len as f64)))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 1 || sa != sb {
            return Err(Error::shape(format!(
                "dot expects equal-length vectors, got {} and {}",
                shape_str(sa),
                shape_str(sb)
            )));
        }
        let p = self.mul(a, b)?;
        self.sum_all(p)
    }

    pub fn norm2(&mut self, x: Var) -> Result<Var> {
        let sq = self.square(x)?;
        let s = self.sum_all(sq)?;
        Ok(self.sqrt(s))
    }

    /// Cosine similarity of two equal-length vectors with an epsilon-guarded
    /// denominator: dot(u,v) / (|u||v| + eps).
    pub fn cosine_similarity(&mut self, u: Var, v: Var) -> Result<Var> {
        let (su, sv) = (self.shape(u), self.shape(v));
        if su.len() != 1 || su != sv {
            return Err(Error::shape(format!(
                "cosine similarity length mismatch: {} vs {}",
                shape_str(su),
                shape_str(sv)
            )));
        }
        let d = self.dot(u, v)?;
        let nu = self.norm2(u)?;
        let nv = self.norm2(v)?;
        let prod = self.mul(nu, nv)?;
        let denom = self.add_scalar(prod, S::eps_guard());
        self.div(d, denom)
    }

    /// Affine map x @ wᵀ + bias with `w` stored as (out_features,
    /// in_features); accepts a vector or matrix `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let was_vector = self.shape(x).len() == 1;
        let x2 = if was_vector {
            let n = self.shape(x)[0];
            self.reshape(x, &[1, n])?
        } else {
            x
        };
        let wt = self.transpose(w)?;
        let mut y = self.matmul(x2, wt)?;
        if let Some(bv) = b {
            y = self.add(y, bv)?;
        }
        if was_vector {
            let out = self.shape(y)[1];
            y = self.reshape(y, &[out])?;
        }
        Ok(y)
    }

    /// Mean over all elements of the two-term binary cross-entropy, with both
    /// logarithms epsilon-guarded.
    pub fn bce_mean(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::shape(format!(
                "bce shapes differ: {} vs {}",
                shape_str(self.shape(pred)),
                shape_str(self.shape(target))
            )));
        }
        let log_p = self.ln(pred);
        let pos = self.mul(target, log_p)?;
        let neg_pred = self.neg(pred);
        let one_minus_p = self.add_scalar(neg_pred, S::one());
        let log_q = self.ln(one_minus_p);
        let neg_t = self.neg(target);
        let one_minus_t = self.add_scalar(neg_t, S::one());
        let negterm = self.mul(one_minus_t, log_q)?;
        let s = self.add(pos, negterm)?;
        let m = self.mean_all(s)?;
        Ok(self.neg(m))
    }

    /// Cross-entropy of a 1-D logit vector against `target` with uniform
    /// label smoothing: targets become (1-a)*onehot + a/k.
    pub fn cross_entropy_smoothed(
        &mut self,
        logits: Var,
        target: usize,
        smoothing: f64,
    ) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 1 {
            return Err(Error::shape(format!(
                "cross entropy expects a logit vector, got {}",
                shape_str(&shape)
            )));
        }
        let k = shape[0];
        if target >= k {
            return Err(Error::shape(format!(
                "class index {target} out of range for {k} logits"
            )));
        }
        let a = smoothing;
        let mut q = vec![S::from_f64(a / k as f64); k];
        q[target] += S::from_f64(1.0 - a);
        let qv = self.constant(TensorBase::new(&[k], q)?);
        let p = self.softmax(logits, 0)?;
        let logp = self.ln(p);
        let prod = self.mul(qv, logp)?;
        let s = self.sum_all(prod)?;
        Ok(self.neg(s))
    }

    pub fn mse_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "mse shapes differ: {} vs {}",
                shape_str(self.shape(a)),
                shape_str(self.shape(b))
            )));
        }
        let d = self.sub(a, b)?;
        let sq = self.square(d)?;
        self.mean_all(sq)
    }
}

/// (product of dims before axis, axis extent, product after).
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn guard_div<S: Scalar>(d: S) -> S {
    let eps = S::eps_guard();
    if d.abs() >= eps {
        d
    } else if d < S::zero() {
        -eps
    } else {
        eps
    }
}

fn sigmoid_stable<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}
