//! Behavioural contracts of the two encoders: shapes, padding isolation,
//! translation equivariance, and end-to-end gradient checks at toy dims.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sbnet_core::encoders::{EncoderConfig, ImageEncoder, TextEncoder};
use sbnet_core::error::Result;
use sbnet_core::gradcheck::{grad_check, grad_check_sampled, DiffProgram, DEFAULT_STEP, PASS_THRESHOLD};
use sbnet_core::graph::{Graph, Mode, Var};
use sbnet_core::params::ParamSet;
use sbnet_core::scalar::Scalar;
use sbnet_core::tensor::TensorBase;
use sbnet_core::text::{tokenize, TokenSeq, Vocab, PAD_ID};
use sbnet_core::Tensor;

fn vocab() -> Vocab {
    Vocab::from_corpus([
        "a red sedan turns left at the corner",
        "the blue pickup keeps straight ahead",
    ])
}

/// Non-uniform signed weights so a reduction can't hide permutation bugs.
fn bump_weights<S: Scalar>(shape: &[usize]) -> TensorBase<S> {
    TensorBase::from_fn(shape, |i| {
        let w = S::from_f64(0.3 + 0.1 * (i % 7) as f64);
        if i % 3 == 0 {
            -w
        } else {
            w
        }
    })
}

fn weighted_sum<S: Scalar>(g: &mut Graph<S>, x: Var) -> Result<Var> {
    let w = g.constant(bump_weights(g.shape(x)));
    let p = g.mul(x, w)?;
    g.sum_all(p)
}

#[test]
fn text_output_shape_follows_config() {
    let v = vocab();
    for (cfg, want) in [
        (EncoderConfig::toy(v.size()), (8, 16)),
        (EncoderConfig::desk(v.size()), (16, 64)),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParamSet::<f32>::new();
        let enc = TextEncoder::new(&mut ps, &cfg, &mut rng).unwrap();
        let toks = tokenize("a red sedan turns left", &v, cfg.l).unwrap();
        let mut g = Graph::<f32>::new(Mode::Eval);
        let fn_mat = enc.forward(&mut g, &ps, &toks).unwrap();
        assert_eq!(g.shape(fn_mat), &[want.0, want.1]);
    }
}

#[test]
fn pad_embedding_cannot_leak_into_real_rows() {
    let v = vocab();
    let cfg = EncoderConfig::toy(v.size());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ps = ParamSet::<f32>::new();
    let enc = TextEncoder::new(&mut ps, &cfg, &mut rng).unwrap();
    let toks = tokenize("red sedan", &v, cfg.l).unwrap();
    let n_real = toks.attention_mask.iter().filter(|&&m| m == 1).count();
    assert!(n_real >= 3 && n_real < cfg.l, "need padded tail for this test");

    let run = |ps: &ParamSet<f32>| -> Vec<f32> {
        let mut g = Graph::<f32>::new(Mode::Eval);
        let out = enc.forward(&mut g, ps, &toks).unwrap();
        g.value(out).data().to_vec()
    };
    let before = run(&ps);

    let embed = ps.lookup("nlm.embed").unwrap();
    let d = ps.get(embed).shape()[1];
    for j in 0..d {
        ps.get_mut(embed).data_mut()[PAD_ID * d + j] += 10.0;
    }
    let after = run(&ps);

    let e = cfg.e;
    for row in 0..cfg.l {
        let same = before[row * e..(row + 1) * e] == after[row * e..(row + 1) * e];
        if toks.attention_mask[row] == 1 {
            assert!(same, "masked attention leaked into real row {row}");
        } else {
            assert!(!same, "pad row {row} should see its own embedding");
        }
    }
}

#[test]
fn image_output_shape_follows_config() {
    for (cfg, want) in [
        (EncoderConfig::toy(8), (16usize, 4usize, 4usize)),
        (EncoderConfig::desk(8), (64, 12, 12)),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamSet::<f32>::new();
        let enc = ImageEncoder::new(&mut ps, &cfg, &mut rng).unwrap();
        let img = Tensor::rand_uniform(&[3, cfg.image_size, cfg.image_size], 0.0, 1.0, &mut rng);
        let mut g = Graph::<f32>::new(Mode::Eval);
        let v = g.constant(img);
        let fi = enc.forward(&mut g, &ps, v).unwrap();
        assert_eq!(g.shape(fi), &[want.0, want.1, want.2]);
    }
}

#[test]
fn wrong_image_size_is_rejected_with_expected_size() {
    let cfg = EncoderConfig::desk(8);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ps = ParamSet::<f32>::new();
    let enc = ImageEncoder::new(&mut ps, &cfg, &mut rng).unwrap();
    let img = Tensor::zeros(&[3, 64, 64]);
    let mut g = Graph::<f32>::new(Mode::Eval);
    let v = g.constant(img);
    let err = enc.forward(&mut g, &ps, v).unwrap_err().to_string();
    assert!(err.contains("96"), "error should state the expected size: {err}");
}

#[test]
fn zero_image_gives_zero_features() {
    // Convolutions carry no bias and batch-norm shifts start at zero, so an
    // all-zero image must map to exactly zero everywhere (spatially constant
    // per channel).
    let cfg = EncoderConfig::desk(8);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ps = ParamSet::<f32>::new();
    let enc = ImageEncoder::new(&mut ps, &cfg, &mut rng).unwrap();
    let mut g = Graph::<f32>::new(Mode::Eval);
    let v = g.constant(Tensor::zeros(&[3, 96, 96]));
    let fi = enc.forward(&mut g, &ps, v).unwrap();
    assert!(g.value(fi).data().iter().all(|&x| x == 0.0));
}

#[test]
fn interior_features_shift_with_the_image() {
    let cfg = EncoderConfig::desk(8);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut ps = ParamSet::<f32>::new();
    let enc = ImageEncoder::new(&mut ps, &cfg, &mut rng).unwrap();
    let n = cfg.image_size;
    let img = Tensor::rand_uniform(&[3, n, n], 0.0, 1.0, &mut rng);
    // Shift the content right by one full downsampling stride.
    let s = cfg.downsample_factor;
    let shifted = TensorBase::from_fn(&[3, n, n], |i| {
        let (ch, rest) = (i / (n * n), i % (n * n));
        let (y, x) = (rest / n, rest % n);
        if x < s {
            0.0
        } else {
            img.data()[ch * n * n + y * n + (x - s)]
        }
    });

    let feat = |t: Tensor| -> Vec<f32> {
        let mut g = Graph::<f32>::new(Mode::Eval);
        let v = g.constant(t);
        let fi = enc.forward(&mut g, &ps, v).unwrap();
        g.value(fi).data().to_vec()
    };
    let a = feat(img);
    let b = feat(shifted);

    // Six 3x3 stages give a ~63 px receptive field (~4 feature cells of
    // half-width), so only cells at least 4 from the border are pure content.
    let (c, fh, fw) = (cfg.c, n / s, n / s);
    let mut worst = 0.0f32;
    for ch in 0..c {
        for y in 4..fh - 4 {
            for x in 4..fw - 4 {
                let orig = a[ch * fh * fw + y * fw + (x - 1)];
                let moved = b[ch * fh * fw + y * fw + x];
                worst = worst.max((orig - moved).abs());
            }
        }
    }
    assert!(worst < 1e-4, "interior not equivariant: max diff {worst}");
}

struct TextChain {
    enc: TextEncoder,
    toks: TokenSeq,
}
impl DiffProgram for TextChain {
    fn run<S: Scalar>(&self, g: &mut Graph<S>, ps: &ParamSet<S>, _inputs: &[Var]) -> Result<Var> {
        let fn_mat = self.enc.forward(g, ps, &self.toks)?;
        weighted_sum(g, fn_mat)
    }
}

#[test]
fn text_encoder_gradcheck_at_toy_dims() {
    let v = vocab();
    let cfg = EncoderConfig::toy(v.size());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut ps = ParamSet::<f32>::new();
    let enc = TextEncoder::new(&mut ps, &cfg, &mut rng).unwrap();
    let toks = tokenize("the blue pickup keeps straight", &v, cfg.l).unwrap();
    let report = grad_check(&TextChain { enc, toks }, &ps, &[], DEFAULT_STEP, true).unwrap();
    assert!(
        report.max_rel_err < PASS_THRESHOLD,
        "text encoder grad mismatch: {report:?}"
    );
}

struct ImageChain {
    enc: ImageEncoder,
}
impl DiffProgram for ImageChain {
    fn run<S: Scalar>(&self, g: &mut Graph<S>, ps: &ParamSet<S>, inputs: &[Var]) -> Result<Var> {
        let fi = self.enc.forward(g, ps, inputs[0])?;
        weighted_sum(g, fi)
    }
}

#[test]
fn image_encoder_gradcheck_at_toy_dims() {
    let cfg = EncoderConfig::toy(8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ps = ParamSet::<f32>::new();
    let enc = ImageEncoder::new(&mut ps, &cfg, &mut rng).unwrap();
    let img = Tensor::rand_uniform(&[3, 32, 32], 0.0, 1.0, &mut rng);
    let report =
        grad_check_sampled(&ImageChain { enc }, &ps, &[img], DEFAULT_STEP, true, 1200, 9).unwrap();
    assert!(
        report.max_rel_err < PASS_THRESHOLD,
        "image encoder grad mismatch: {report:?}"
    );
}
