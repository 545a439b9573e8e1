//! Finite-difference checks for every differentiable primitive.
//!
//! Each case wraps one op (or a small composition ending in a scalar) in a
//! `DiffProgram` and compares the reverse-mode gradient against 64-bit
//! central differences. Inputs are fixed-seed and kept away from kinks
//! (ReLU corners, clamp edges) so the difference quotient is meaningful.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sbnet_core::gradcheck::{grad_check, DiffProgram, DEFAULT_STEP, PASS_THRESHOLD};
use sbnet_core::tensor::TensorBase;
use sbnet_core::{Graph, ParamSet, Result, Scalar, Var};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Smooth, well-conditioned random values in [0.25, 1.75], signed when asked.
fn smooth<S: Scalar>(shape: &[usize], seed: u64, signed: bool) -> TensorBase<S> {
    let mut r = rng(seed);
    let t = TensorBase::<S>::rand_uniform(shape, 0.25, 1.75, &mut r);
    if !signed {
        return t;
    }
    let mut flip = rng(seed ^ 0x5a5a);
    TensorBase::from_fn(shape, |i| {
        if rand::Rng::gen_bool(&mut flip, 0.5) {
            -t.data()[i]
        } else {
            t.data()[i]
        }
    })
}

fn check<P: DiffProgram>(name: &str, prog: &P, inputs: &[TensorBase<f32>]) {
    let ps = ParamSet::<f32>::new();
    let rep = grad_check(prog, &ps, inputs, DEFAULT_STEP, false).expect(name);
    assert!(
        rep.max_rel_err < PASS_THRESHOLD,
        "{name}: max rel err {} over {} coords",
        rep.max_rel_err,
        rep.coords_checked
    );
}

/// Generates one test per op: applies the body, then reduces to a scalar
/// through a non-uniform signed weighting so every output coordinate gets a
/// distinct adjoint (a plain sum would hide transposition bugs).
macro_rules! weighted_case {
    ($name:ident, $inputs:expr, |$g:ident, $xs:ident| $body:expr) => {
        #[test]
        fn $name() {
            struct Case;
            impl Case {
                fn dispatch<S: Scalar>(&self, $g: &mut Graph<S>, $xs: &[Var]) -> Result<Var> {
                    $body
                }
            }
            impl DiffProgram for Case {
                fn run<S: Scalar>(
                    &self,
                    g: &mut Graph<S>,
                    _ps: &ParamSet<S>,
                    inputs: &[Var],
                ) -> Result<Var> {
                    let y = self.dispatch(g, inputs)?;
                    let w = g.constant(TensorBase::from_fn(g.shape(y), |i| {
                        S::from_f64(0.3 + 0.1 * (i % 7) as f64)
                            * if i % 3 == 0 { -S::one() } else { S::one() }
                    }));
                    let wy = g.mul(y, w)?;
                    g.sum_all(wy)
                }
            }
            check(stringify!($name), &Case, &$inputs);
        }
    };
}

weighted_case!(
    matmul_grad,
    [smooth(&[3, 4], 11, true), smooth(&[4, 5], 12, true)],
    |g, xs| g.matmul(xs[0], xs[1])
);

weighted_case!(transpose_grad, [smooth(&[3, 5], 13, true)], |g, xs| g
    .transpose(xs[0]));

weighted_case!(
    add_broadcast_grad,
    [smooth(&[3, 4, 5], 14, true), smooth(&[3, 1, 1], 15, true)],
    |g, xs| g.add(xs[0], xs[1])
);

weighted_case!(
    mul_broadcast_grad,
    [smooth(&[3, 4, 5], 16, true), smooth(&[1, 4, 5], 17, true)],
    |g, xs| g.mul(xs[0], xs[1])
);

weighted_case!(
    div_grad,
    // Denominator stays positive and away from zero.
    [smooth(&[4, 6], 18, true), smooth(&[4, 6], 19, false)],
    |g, xs| g.div(xs[0], xs[1])
);

weighted_case!(
    div_broadcast_grad,
    [smooth(&[2, 3, 4], 20, true), smooth(&[2, 1, 1], 21, false)],
    |g, xs| g.div(xs[0], xs[1])
);

weighted_case!(neg_grad, [smooth(&[7], 22, true)], |g, xs| Ok(g
    .neg(xs[0])));

weighted_case!(scalar_affine_grad, [smooth(&[6], 23, true)], |g, xs| {
    let y = g.mul_scalar(xs[0], S::from_f64(1.7));
    Ok(g.add_scalar(y, S::from_f64(-0.3)))
});

weighted_case!(sqrt_grad, [smooth(&[9], 24, false)], |g, xs| Ok(g
    .sqrt(xs[0])));

weighted_case!(ln_grad, [smooth(&[9], 25, false)], |g, xs| Ok(g.ln(xs[0])));

weighted_case!(relu_grad, [smooth(&[10], 26, true)], |g, xs| Ok(g
    .relu(xs[0])));

weighted_case!(leaky_relu_grad, [smooth(&[10], 27, true)], |g, xs| Ok(g
    .leaky_relu(xs[0], S::from_f64(0.1))));

weighted_case!(sigmoid_grad, [smooth(&[8], 28, true)], |g, xs| Ok(g
    .sigmoid(xs[0])));

weighted_case!(
    softmax_rows_grad,
    [smooth(&[4, 6], 29, true)],
    |g, xs| g.softmax(xs[0], 1)
);

weighted_case!(
    softmax_cols_grad,
    [smooth(&[4, 6], 30, true)],
    |g, xs| g.softmax(xs[0], 0)
);

weighted_case!(
    mean_axis_grad,
    [smooth(&[3, 4, 5], 31, true)],
    |g, xs| g.mean_axis(xs[0], 1, false)
);

weighted_case!(
    mean_axis_keepdim_grad,
    [smooth(&[3, 4, 5], 32, true)],
    |g, xs| g.mean_axis(xs[0], 2, true)
);

weighted_case!(
    concat_grad,
    [
        smooth(&[2, 3, 4], 33, true),
        smooth(&[2, 2, 4], 34, true),
        smooth(&[2, 1, 4], 35, true)
    ],
    |g, xs| g.concat(xs, 1)
);

weighted_case!(slice_grad, [smooth(&[3, 6, 4], 36, true)], |g, xs| g
    .slice(xs[0], 1, 2, 3));

weighted_case!(reshape_grad, [smooth(&[3, 8], 37, true)], |g, xs| g
    .reshape(xs[0], &[6, 4]));

weighted_case!(
    conv2d_stride1_grad,
    [smooth(&[2, 5, 5], 38, true), smooth(&[3, 2, 3, 3], 39, true)],
    |g, xs| g.conv2d(xs[0], xs[1], None, 1, 1)
);

weighted_case!(
    conv2d_stride2_bias_grad,
    [
        smooth(&[2, 6, 6], 40, true),
        smooth(&[3, 2, 3, 3], 41, true),
        smooth(&[3], 42, true)
    ],
    |g, xs| g.conv2d(xs[0], xs[1], Some(xs[2]), 2, 1)
);

weighted_case!(
    linear_matrix_grad,
    [
        smooth(&[4, 5], 43, true),
        smooth(&[3, 5], 44, true),
        smooth(&[3], 45, true)
    ],
    |g, xs| g.linear(xs[0], xs[1], Some(xs[2]))
);

weighted_case!(
    linear_vector_grad,
    [smooth(&[5], 46, true), smooth(&[3, 5], 47, true)],
    |g, xs| g.linear(xs[0], xs[1], None)
);

#[test]
fn batch_norm_train_grad() {
    // Batch norm needs parameters for the running-stat buffers, so it gets a
    // hand-rolled program instead of the weighted macro.
    struct Bn;
    impl DiffProgram for Bn {
        fn run<S: Scalar>(&self, g: &mut Graph<S>, ps: &ParamSet<S>, inputs: &[Var]) -> Result<Var> {
            let rm = ps.lookup("bn.running_mean").unwrap();
            let rv = ps.lookup("bn.running_var").unwrap();
            let gamma = g.param(ps.lookup("bn.gamma").unwrap(), ps);
            let beta = g.param(ps.lookup("bn.beta").unwrap(), ps);
            let y = g.batch_norm(inputs[0], gamma, beta, rm, rv, ps, 0.1, 1e-5)?;
            let w = g.constant(TensorBase::from_fn(g.shape(y), |i| {
                S::from_f64(0.2 + 0.05 * (i % 11) as f64)
            }));
            let wy = g.mul(y, w)?;
            g.sum_all(wy)
        }
    }
    let mut ps = ParamSet::<f32>::new();
    ps.add(
        "bn.gamma",
        TensorBase::from_fn(&[3], |i| 0.8 + 0.2 * i as f32),
        true,
    )
    .unwrap();
    ps.add(
        "bn.beta",
        TensorBase::from_fn(&[3], |i| 0.1 * i as f32),
        true,
    )
    .unwrap();
    ps.add("bn.running_mean", TensorBase::zeros(&[3]), false)
        .unwrap();
    ps.add("bn.running_var", TensorBase::filled(&[3], 1.0), false)
        .unwrap();
    let x = smooth::<f32>(&[3, 4, 4], 48, true);
    let rep = grad_check(&Bn, &ps, &[x], DEFAULT_STEP, true).unwrap();
    assert!(
        rep.max_rel_err < PASS_THRESHOLD,
        "batch_norm: max rel err {}",
        rep.max_rel_err
    );
}

#[test]
fn clamp_is_straight_through() {
    // Clamp's backward intentionally ignores the saturation region, so finite
    // differences disagree there by design; verify the pass-through rule
    // directly instead.
    let mut g = Graph::<f32>::new(sbnet_core::Mode::Train);
    let x = g.input(TensorBase::new(&[4], vec![-2.0, 0.3, 0.9, 5.0]).unwrap().requires_grad());
    let y = g.clamp(x, 0.0, 1.0);
    let s = g.sum_all(y).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0, 1.0]);
    let vals = g.value(y).data();
    assert_eq!(vals, &[0.0, 0.3, 0.9, 1.0]);
}

#[test]
fn detach_blocks_gradient_and_forwards_values() {
    let mut g = Graph::<f32>::new(sbnet_core::Mode::Train);
    let x = g.input(TensorBase::new(&[3], vec![1.0, 2.0, 3.0]).unwrap().requires_grad());
    let d = g.detach(x);
    let y = g.mul(x, d).unwrap(); // x * stop_grad(x): dy/dx = detached x
    let s = g.sum_all(y).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.value(d).data(), &[1.0, 2.0, 3.0]);
    assert_eq!(g.grad(x).unwrap(), &[1.0, 2.0, 3.0]);
}

// --- composed losses and similarity ---------------------------------------

struct Cosine;
impl DiffProgram for Cosine {
    fn run<S: Scalar>(&self, g: &mut Graph<S>, _ps: &ParamSet<S>, inputs: &[Var]) -> Result<Var> {
        g.cosine_similarity(inputs[0], inputs[1])
    }
}

#[test]
fn cosine_similarity_grad() {
    check(
        "cosine",
        &Cosine,
        &[smooth(&[12], 49, true), smooth(&[12], 50, true)],
    );
}

#[test]
fn cosine_similarity_value() {
    let mut g = Graph::<f32>::new(sbnet_core::Mode::Eval);
    let u = g.input(TensorBase::new(&[3], vec![1.0, 0.0, 0.0]).unwrap());
    let v = g.input(TensorBase::new(&[3], vec![0.6, 0.8, 0.0]).unwrap());
    let c = g.cosine_similarity(u, v).unwrap();
    assert!((g.scalar_value(c).unwrap() - 0.6).abs() < 1e-6);
    // Parallel vectors score 1 up to the epsilon guard.
    let w = g.input(TensorBase::new(&[3], vec![2.0, 0.0, 0.0]).unwrap());
    let c2 = g.cosine_similarity(u, w).unwrap();
    assert!((g.scalar_value(c2).unwrap() - 1.0).abs() < 1e-5);
}

struct Bce;
impl DiffProgram for Bce {
    fn run<S: Scalar>(&self, g: &mut Graph<S>, _ps: &ParamSet<S>, inputs: &[Var]) -> Result<Var> {
        // Map the raw input into (0,1) through a sigmoid so the probe stays a
        // valid probability while the check perturbs pre-activations.
        let p = g.sigmoid(inputs[0]);
        g.bce_mean(p, inputs[1])
    }
}

#[test]
fn bce_grad() {
    let mut r = rng(51);
    let target = TensorBase::<f32>::from_fn(&[3, 4], |_| {
        if rand::Rng::gen_bool(&mut r, 0.5) {
            1.0
        } else {
            0.0
        }
    });
    check("bce", &Bce, &[smooth(&[3, 4], 52, true), target]);
}

#[test]
fn bce_value_matches_closed_form() {
    let mut g = Graph::<f32>::new(sbnet_core::Mode::Eval);
    let p = g.input(TensorBase::new(&[2], vec![0.8, 0.3]).unwrap());
    let t = g.input(TensorBase::new(&[2], vec![1.0, 0.0]).unwrap());
    let l = g.bce_mean(p, t).unwrap();
    let want = -0.5 * ((0.8f32).ln() + (0.7f32).ln());
    assert!((g.scalar_value(l).unwrap() - want).abs() < 1e-6);
}

#[test]
fn bce_survives_saturated_predictions() {
    // Exact 0/1 predictions hit the log guard instead of producing inf/nan.
    let mut g = Graph::<f32>::new(sbnet_core::Mode::Train);
    let p = g.input(TensorBase::new(&[2], vec![0.0, 1.0]).unwrap().requires_grad());
    let t = g.input(TensorBase::new(&[2], vec![1.0, 0.0]).unwrap());
    let l = g.bce_mean(p, t).unwrap();
    let v = g.scalar_value(l).unwrap();
    assert!(v.is_finite());
    g.backward(l).unwrap();
    assert!(g.grad(p).unwrap().iter().all(|x| x.is_finite()));
}

struct CeSmoothed;
impl DiffProgram for CeSmoothed {
    fn run<S: Scalar>(&self, g: &mut Graph<S>, _ps: &ParamSet<S>, inputs: &[Var]) -> Result<Var> {
        g.cross_entropy_smoothed(inputs[0], 2, 0.1)
    }
}

#[test]
fn cross_entropy_smoothed_grad() {
    check("ce", &CeSmoothed, &[smooth(&[7], 53, true)]);
}

#[test]
fn cross_entropy_smoothing_value() {
    // Uniform logits: loss is -sum_k q_k ln(1/K) = ln K regardless of q.
    let k = 5usize;
    let mut g = Graph::<f32>::new(sbnet_core::Mode::Eval);
    let logits = g.input(TensorBase::filled(&[k], 0.7));
    let l = g.cross_entropy_smoothed(logits, 3, 0.1).unwrap();
    assert!((g.scalar_value(l).unwrap() - (k as f32).ln()).abs() < 1e-5);

    // Smoothing strictly lowers the target mass: the loss at a confident
    // correct prediction is higher with smoothing than without.
    let mut g2 = Graph::<f32>::new(sbnet_core::Mode::Eval);
    let sharp = g2.input(TensorBase::new(&[3], vec![8.0, 0.0, 0.0]).unwrap());
    let smooth_l = g2.cross_entropy_smoothed(sharp, 0, 0.1).unwrap();
    let hard_l = g2.cross_entropy_smoothed(sharp, 0, 0.0).unwrap();
    assert!(g2.scalar_value(smooth_l).unwrap() > g2.scalar_value(hard_l).unwrap());
}

struct Mse;
impl DiffProgram for Mse {
    fn run<S: Scalar>(&self, g: &mut Graph<S>, _ps: &ParamSet<S>, inputs: &[Var]) -> Result<Var> {
        g.mse_mean(inputs[0], inputs[1])
    }
}

#[test]
fn mse_grad() {
    check(
        "mse",
        &Mse,
        &[smooth(&[4, 5], 54, true), smooth(&[4, 5], 55, true)],
    );
}

#[test]
fn softmax_shift_invariance_and_row_sums() {
    let mut g = Graph::<f32>::new(sbnet_core::Mode::Eval);
    let x = g.input(TensorBase::new(&[2, 3], vec![1e4, 1e4 + 1.0, 1e4 - 2.0, -3.0, 0.0, 3.0]).unwrap());
    let y = g.softmax(x, 1).unwrap();
    let v = g.value(y).data();
    assert!(v.iter().all(|p| p.is_finite() && *p >= 0.0));
    let r0: f32 = v[0..3].iter().sum();
    let r1: f32 = v[3..6].iter().sum();
    assert!((r0 - 1.0).abs() < 1e-6 && (r1 - 1.0).abs() < 1e-6);
}

#[test]
fn corrupted_relu_adjoint_fails_the_check() {
    // Negative control: doubling the positive-side ReLU adjoint must trip the
    // oracle by a wide margin.
    struct R;
    impl DiffProgram for R {
        fn run<S: Scalar>(&self, g: &mut Graph<S>, _ps: &ParamSet<S>, inputs: &[Var]) -> Result<Var> {
            let y = g.relu(inputs[0]);
            let sq = g.square(y)?;
            g.sum_all(sq)
        }
    }
    struct Corrupt;
    impl DiffProgram for Corrupt {
        fn run<S: Scalar>(&self, g: &mut Graph<S>, _ps: &ParamSet<S>, inputs: &[Var]) -> Result<Var> {
            g.corrupt_relu_adjoint = true;
            let y = g.relu(inputs[0]);
            let sq = g.square(y)?;
            g.sum_all(sq)
        }
    }
    let x = smooth::<f32>(&[6], 56, true);
    let ps = ParamSet::<f32>::new();
    let clean = grad_check(&R, &ps, &[x.clone()], DEFAULT_STEP, false).unwrap();
    let bad = grad_check(&Corrupt, &ps, &[x], DEFAULT_STEP, false).unwrap();
    assert!(clean.max_rel_err < PASS_THRESHOLD);
    assert!(bad.max_rel_err > 0.1, "corruption went undetected: {}", bad.max_rel_err);
}
