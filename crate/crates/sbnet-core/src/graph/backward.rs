//! Reverse pass: replays the tape once, back to front.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::numel;

use super::kernels::{self, broadcast_plan, for_each_broadcast};
use super::{axis_split, guard_div, Graph, Op, Var};

impl<S: Scalar> Graph<S> {
    /// Accumulates d`loss`/d`node` for every gradient-requiring node
    /// reachable from `loss`. Each recorded primitive is visited exactly once,
    /// in reverse execution order; repeated uses of a node sum their
    /// contributions.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::shape("backward target must be scalar"));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![S::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match &self.grads[i] {
                Some(g) => g.clone(),
                None => continue,
            };
            self.adjoint(Var(i), &g)?;
        }
        Ok(())
    }

    fn add_grad(&mut self, v: Var, contrib: Vec<S>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        debug_assert_eq!(contrib.len(), self.nodes[v.0].value.numel());
        match &mut self.grads[v.0] {
            Some(acc) => {
                for (a, c) in acc.iter_mut().zip(contrib) {
                    *a += c;
                }
            }
            slot => *slot = Some(contrib),
        }
    }

    fn adjoint(&mut self, out: Var, g: &[S]) -> Result<()> {
        // Borrow juggling: pull out what each case needs, then mutate grads.
        match &self.nodes[out.0].op {
            Op::Leaf | Op::Detach => Ok(()),

            Op::Matmul { a, b } => {
                let (a, b) = (*a, *b);
                let sa = self.shape(a).to_vec();
                let sb = self.shape(b).to_vec();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.nodes[a.0].requires_grad {
                    let bt = kernels::transpose2(self.value(b).data(), k, n);
                    let da = kernels::matmul(g, &bt, m, n, k);
                    self.add_grad(a, da);
                }
                if self.nodes[b.0].requires_grad {
                    let at = kernels::transpose2(self.value(a).data(), m, k);
                    let db = kernels::matmul(&at, g, k, m, n);
                    self.add_grad(b, db);
                }
                Ok(())
            }

            Op::Transpose { x } => {
                let x = *x;
                let s = self.shape(x).to_vec();
                let dx = kernels::transpose2(g, s[1], s[0]);
                self.add_grad(x, dx);
                Ok(())
            }

            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                let plan = broadcast_plan(self.shape(a), self.shape(b))?;
                let mut da = vec![S::zero(); self.value(a).numel()];
                let mut db = vec![S::zero(); self.value(b).numel()];
                for_each_broadcast(&plan, |flat, ai, bi| {
                    da[ai] += g[flat];
                    db[bi] += g[flat];
                });
                self.add_grad(a, da);
                self.add_grad(b, db);
                Ok(())
            }

            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                let plan = broadcast_plan(self.shape(a), self.shape(b))?;
                let mut da = vec![S::zero(); self.value(a).numel()];
                let mut db = vec![S::zero(); self.value(b).numel()];
                {
                    let va = self.value(a).data();
                    let vb = self.value(b).data();
                    for_each_broadcast(&plan, |flat, ai, bi| {
                        da[ai] += g[flat] * vb[bi];
                        db[bi] += g[flat] * va[ai];
                    });
                }
                self.add_grad(a, da);
                self.add_grad(b, db);
                Ok(())
            }

            Op::Div { a, b } => {
                let (a, b) = (*a, *b);
                let plan = broadcast_plan(self.shape(a), self.shape(b))?;
                let mut da = vec![S::zero(); self.value(a).numel()];
                let mut db = vec![S::zero(); self.value(b).numel()];
                {
                    let va = self.value(a).data();
                    let vb = self.value(b).data();
                    for_each_broadcast(&plan, |flat, ai, bi| {
                        let d = guard_div::<S>(vb[bi]);
                        da[ai] += g[flat] / d;
                        db[bi] -= g[flat] * va[ai] / (d * d);
                    });
                }
                self.add_grad(a, da);
                self.add_grad(b, db);
                Ok(())
            }

            Op::Neg { x } => {
                let x = *x;
                self.add_grad(x, g.iter().map(|&v| -v).collect());
                Ok(())
            }

            Op::AddScalar { x } => {
                let x = *x;
                self.add_grad(x, g.to_vec());
                Ok(())
            }

            Op::MulScalar { x, c } => {
                let (x, c) = (*x, *c);
                self.add_grad(x, g.iter().map(|&v| v * c).collect());
                Ok(())
            }

            Op::Sqrt { x } => {
                let x = *x;
                let dx: Vec<S> = {
                    let xv = self.value(x).data();
                    let yv = self.value(out).data();
                    let two = S::from_f64(2.0);
                    xv.iter()
                        .zip(yv)
                        .zip(g)
                        .map(|((&xi, &yi), &gi)| {
                            if xi > S::zero() {
                                gi / (two * yi.max(S::eps_guard()))
                            } else {
                                S::zero()
                            }
                        })
                        .collect()
                };
                self.add_grad(x, dx);
                Ok(())
            }

            Op::Ln { x } => {
                let x = *x;
                let dx: Vec<S> = {
                    let xv = self.value(x).data();
                    let eps = S::eps_guard();
                    xv.iter()
                        .zip(g)
                        .map(|(&xi, &gi)| if xi > eps { gi / xi } else { S::zero() })
                        .collect()
                };
                self.add_grad(x, dx);
                Ok(())
            }

            Op::Relu { x } => {
                let x = *x;
                let corrupt = self.corrupt_relu_adjoint;
                let dx: Vec<S> = {
                    let xv = self.value(x).data();
                    xv.iter()
                        .zip(g)
                        .map(|(&xi, &gi)| {
                            if xi > S::zero() {
                                if corrupt {
                                    gi + gi
                                } else {
                                    gi
                                }
                            } else {
                                S::zero()
                            }
                        })
                        .collect()
                };
                self.add_grad(x, dx);
                Ok(())
            }

            Op::LeakyRelu { x, slope } => {
                let (x, slope) = (*x, *slope);
                let dx: Vec<S> = {
                    let xv = self.value(x).data();
                    xv.iter()
                        .zip(g)
                        .map(|(&xi, &gi)| if xi > S::zero() { gi } else { gi * slope })
                        .collect()
                };
                self.add_grad(x, dx);
                Ok(())
            }

            Op::Sigmoid { x } => {
                let x = *x;
                let dx: Vec<S> = {
                    let yv = self.value(out).data();
                    yv.iter()
                        .zip(g)
                        .map(|(&yi, &gi)| gi * yi * (S::one() - yi))
                        .collect()
                };
                self.add_grad(x, dx);
                Ok(())
            }

            // Straight-through: the clamp is treated as identity in reverse.
            Op::Clamp { x } => {
                let x = *x;
                self.add_grad(x, g.to_vec());
                Ok(())
            }

            Op::Softmax { x, axis } => {
                let (x, axis) = (*x, *axis);
                let shape = self.shape(out).to_vec();
                let (outer, len, inner) = axis_split(&shape, axis);
                let mut dx = vec![S::zero(); g.len()];
                {
                    let y = self.value(out).data();
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * len * inner + i;
                            let mut dot = S::zero();
                            for j in 0..len {
                                let idx = base + j * inner;
                                dot += g[idx] * y[idx];
                            }
                            for j in 0..len {
                                let idx = base + j * inner;
                                dx[idx] = y[idx] * (g[idx] - dot);
                            }
                        }
                    }
                }
                self.add_grad(x, dx);
                Ok(())
            }

            Op::MeanAxis { x, axis } => {
                let (x, axis) = (*x, *axis);
                let shape = self.shape(x).to_vec();
                let (outer, len, inner) = axis_split(&shape, axis);
                let inv = S::one() / S::from_f64(len as f64);
                let mut dx = vec![S::zero(); numel(&shape)];
                for o in 0..outer {
                    for j in 0..len {
                        for i in 0..inner {
                            dx[(o * len + j) * inner + i] = g[o * inner + i] * inv;
                        }
                    }
                }
                self.add_grad(x, dx);
                Ok(())
            }

            Op::MeanAll { x } => {
                let x = *x;
                let n = self.value(x).numel();
                let gv = g[0] / S::from_f64(n as f64);
                self.add_grad(x, vec![gv; n]);
                Ok(())
            }

            Op::Concat { xs, axis } => {
                let xs = xs.clone();
                let axis = *axis;
                let out_shape = self.shape(out).to_vec();
                let (outer, total, inner) = axis_split(&out_shape, axis);
                let mut offset = 0usize;
                for v in xs {
                    let part = self.shape(v)[axis];
                    let mut dv = vec![S::zero(); outer * part * inner];
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        let dst = o * part * inner;
                        dv[dst..dst + part * inner]
                            .copy_from_slice(&g[src..src + part * inner]);
                    }
                    self.add_grad(v, dv);
                    offset += part;
                }
                Ok(())
            }

            Op::Slice { x, axis, start } => {
                let (x, axis, start) = (*x, *axis, *start);
                let in_shape = self.shape(x).to_vec();
                let len = self.shape(out)[axis];
                let (outer, full, inner) = axis_split(&in_shape, axis);
                let mut dx = vec![S::zero(); numel(&in_shape)];
                for o in 0..outer {
                    let dst = (o * full + start) * inner;
                    let src = o * len * inner;
                    dx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                self.add_grad(x, dx);
                Ok(())
            }

            Op::Reshape { x } => {
                let x = *x;
                self.add_grad(x, g.to_vec());
                Ok(())
            }

            Op::Conv2d { x, w, b, dims } => {
                let (x, w, b, dims) = (*x, *w, *b, *dims);
                let need_dx = self.nodes[x.0].requires_grad;
                let need_dw = self.nodes[w.0].requires_grad;
                let (dx, dw, db) = kernels::conv2d_backward(
                    self.value(x).data(),
                    self.value(w).data(),
                    g,
                    &dims,
                    need_dx,
                    need_dw,
                );
                if need_dx {
                    self.add_grad(x, dx);
                }
                if need_dw {
                    self.add_grad(w, dw);
                }
                if let Some(bv) = b {
                    self.add_grad(bv, db);
                }
                Ok(())
            }

            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                invstd,
                batch_stats,
            } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let batch_stats = *batch_stats;
                let xhat = xhat.clone();
                let invstd = invstd.clone();
                let shape = self.shape(x).to_vec();
                let (c, n) = (shape[0], shape[1] * shape[2]);
                let gv = self.value(gamma).data().to_vec();
                let inv_n = S::one() / S::from_f64(n as f64);

                let mut dgamma = vec![S::zero(); c];
                let mut dbeta = vec![S::zero(); c];
                let mut dx = vec![S::zero(); c * n];
                for ch in 0..c {
                    let lane = ch * n..(ch + 1) * n;
                    let gy = &g[lane.clone()];
                    let xh = &xhat[lane.clone()];
                    let mut sum_gy = S::zero();
                    let mut sum_gy_xh = S::zero();
                    for i in 0..n {
                        sum_gy += gy[i];
                        sum_gy_xh += gy[i] * xh[i];
                    }
                    dbeta[ch] = sum_gy;
                    dgamma[ch] = sum_gy_xh;
                    let scale = gv[ch] * invstd[ch];
                    if batch_stats {
                        let m1 = sum_gy * inv_n;
                        let m2 = sum_gy_xh * inv_n;
                        for i in 0..n {
                            dx[ch * n + i] = scale * (gy[i] - m1 - xh[i] * m2);
                        }
                    } else {
                        for i in 0..n {
                            dx[ch * n + i] = scale * gy[i];
                        }
                    }
                }
                self.add_grad(x, dx);
                self.add_grad(gamma, dgamma);
                self.add_grad(beta, dbeta);
                Ok(())
            }
        }
    }
}
