//! End-to-end run drivers shared by the CLI and the test suite: training,
//! retrieval, evaluation, the per-module gradient check, and mask dumps.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adam::{lr_at_epoch, AdamState};
use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::{
    generate_corpus, load_image, load_queries, load_tracks, load_truth, render_box_mask,
    resize_bilinear, resize_with_box, save_gray_png, translate_augment, write_corpus,
    SynthConfig, TrackSet,
};
use crate::encoders::{EncoderConfig, ImageEncoder, TextEncoder};
use crate::error::{Error, Result};
use crate::fusion::{enhance, ChannelGate, CoAttention, MaskHead};
use crate::gradcheck::{
    grad_check_sampled, DiffProgram, GradCheckReport, DEFAULT_STEP, PASS_THRESHOLD,
};
use crate::graph::{Graph, Mode, Var};
use crate::heads::{
    AttrLogits, FuturePredictor, ImageClassifier, SubstitutionModule, SubstitutionVars,
    TextClassifier,
};
use crate::loss::{compute_losses, LossConfig, LossInputs, LossReport};
use crate::metrics::{mrr, recall_at_k};
use crate::model::{DescriptionFeatures, FrameFeatures, SbNet, TrainVars};
use crate::params::{ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::TensorBase;
use crate::text::{
    denoise_queries, tokenize, AttributeLexicon, TokenSeq, TrackAttributes, Vocab,
};

/// Largest translation (as a fraction of each image side) applied when
/// augmenting training frames.
const AUGMENT_MAX_FRAC: f64 = 0.1;

/// Columns of the training metrics CSV, one row per epoch.
pub const METRICS_HEADER: &str = "epoch,lr,loss_total,loss_seg,loss_cls,loss_sub,loss_fut";

fn ensure_output_dir(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.output)?;
    Ok(())
}

fn load_lexicon(cfg: &RunConfig) -> Result<AttributeLexicon> {
    match &cfg.lexicon {
        Some(path) => AttributeLexicon::load(path),
        None => Ok(AttributeLexicon::builtin()),
    }
}

/// Model plus everything needed to feed it, built fresh from a config.
struct Session {
    lexicon: AttributeLexicon,
    vocab: Vocab,
    enc: EncoderConfig,
    net: SbNet,
    ps: ParamSet<f32>,
}

fn open_session(cfg: &RunConfig) -> Result<Session> {
    cfg.validate()?;
    let lexicon = load_lexicon(cfg)?;
    let vocab = Vocab::load(&cfg.vocab_path()?)?;
    let enc = cfg.encoder_config(vocab.size());
    let mut ps = ParamSet::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = SbNet::new(
        &mut ps,
        &enc,
        lexicon.num_colors(),
        lexicon.num_types(),
        &mut rng,
    )?;
    Ok(Session {
        lexicon,
        vocab,
        enc,
        net,
        ps,
    })
}

// ---------------------------------------------------------------------------
// Training

/// One fully prepared training track: denoised tokens, voted attributes, and
/// frames already resized to the model's input size.
struct TrainTrack {
    track_id: String,
    tokens: Vec<TokenSeq>,
    attrs: TrackAttributes,
    images: Vec<TensorBase<f32>>,
    boxes: Vec<[i64; 4]>,
}

fn prepare_tracks(set: &TrackSet, sess: &Session) -> Result<Vec<TrainTrack>> {
    set.tracks
        .par_iter()
        .map(|t| {
            let (attrs, cleaned) = denoise_queries(&t.nl, &sess.lexicon)?;
            let tokens = cleaned
                .iter()
                .map(|d| tokenize(d, &sess.vocab, sess.enc.l))
                .collect::<Result<Vec<_>>>()?;
            let mut images = Vec::with_capacity(t.frames.len());
            let mut boxes = Vec::with_capacity(t.frames.len());
            for (i, bx) in t.boxes.iter().enumerate() {
                let img = load_image(&t.frame_path(&set.root, i))?;
                let (img, bx) = resize_with_box(&img, *bx, sess.enc.image_size)?;
                images.push(img);
                boxes.push(bx);
            }
            Ok(TrainTrack {
                track_id: t.track_id.clone(),
                tokens,
                attrs,
                images,
                boxes,
            })
        })
        .collect()
}

/// The random choices for one training sample, drawn up front on the master
/// RNG so batches can run on any number of threads with identical results.
#[derive(Clone, Copy)]
struct SamplePlan {
    track: usize,
    desc: usize,
    frame: usize,
    aug_seed: u64,
}

struct SampleOut {
    grads: Vec<(ParamId, Vec<f32>)>,
    buffers: Vec<(ParamId, Vec<f32>)>,
    report: LossReport,
}

fn run_sample(
    sess: &Session,
    tracks: &[TrainTrack],
    plan: SamplePlan,
    loss_cfg: &LossConfig,
) -> Result<SampleOut> {
    let t = &tracks[plan.track];
    let size = sess.enc.image_size;
    let fsz = sess.enc.feature_size();

    let mut aug_rng = ChaCha8Rng::seed_from_u64(plan.aug_seed);
    let (img, bx) = translate_augment(
        &t.images[plan.frame],
        t.boxes[plan.frame],
        AUGMENT_MAX_FRAC,
        &mut aug_rng,
    );
    let (_, b) = render_box_mask::<f32>(bx, (size, size), (fsz, fsz))?;
    // The future target stays unshifted: at feature resolution the
    // augmentation offset is below one cell and not worth replaying.
    let future_target = if plan.frame + 1 < t.images.len() {
        Some(resize_bilinear(&t.images[plan.frame + 1], fsz, fsz)?)
    } else {
        None
    };

    let mut g = Graph::<f32>::new(Mode::Train);
    let image = g.constant(img);
    let box_mask = g.constant(b);
    let future_target = future_target.map(|t| g.constant(t));
    let out = sess.net.training_losses(
        &mut g,
        &sess.ps,
        &TrainVars {
            tokens: &t.tokens[plan.desc],
            image,
            box_mask,
            future_target,
            attrs: &t.attrs,
        },
        loss_cfg,
    )?;
    g.backward(out.losses.total)?;
    let report = LossReport::read(&g, &out.losses)?;
    let grads = g
        .param_grads()
        .into_iter()
        .map(|(id, s)| (id, s.to_vec()))
        .collect();
    let buffers = g.take_buffer_updates();
    Ok(SampleOut {
        grads,
        buffers,
        report,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub total: f32,
    pub seg: f32,
    pub cls: f32,
    pub sub: f32,
    pub fut: f32,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub epochs: Vec<EpochStats>,
    pub checkpoint: PathBuf,
    pub metrics_csv: PathBuf,
}

pub fn run_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let mut sess = open_session(cfg)?;
    ensure_output_dir(cfg)?;
    let set = load_tracks(&cfg.tracks_path()?, true)?;
    if set.tracks.is_empty() {
        return Err(Error::Data("training set has no tracks".into()));
    }
    let tracks = prepare_tracks(&set, &sess)?;
    let loss_cfg = cfg.loss_config();

    let mut opt = AdamState::new(cfg.adam_config());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let trainable: Vec<ParamId> = sess.ps.trainable_ids().collect();

    let mut csv = String::from(METRICS_HEADER);
    csv.push('\n');
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let lr = lr_at_epoch(cfg.lr, &cfg.lr_drop_epochs, epoch);
        opt.set_lr(lr);

        let mut order: Vec<usize> = (0..tracks.len()).collect();
        order.shuffle(&mut rng);
        let plans: Vec<SamplePlan> = order
            .into_iter()
            .map(|track| SamplePlan {
                track,
                desc: rng.gen_range(0..tracks[track].tokens.len()),
                frame: rng.gen_range(0..tracks[track].images.len()),
                aug_seed: rng.gen(),
            })
            .collect();

        let mut sums = LossReport {
            total: 0.0,
            seg: 0.0,
            cls: 0.0,
            sub: 0.0,
            fut: 0.0,
            fut_missing: false,
        };
        for batch in plans.chunks(cfg.batch_size) {
            let outs: Vec<Result<SampleOut>> = batch
                .par_iter()
                .map(|&plan| run_sample(&sess, &tracks, plan, &loss_cfg))
                .collect();
            let outs = outs.into_iter().collect::<Result<Vec<_>>>()?;

            let batch_ids = || -> Vec<&str> {
                batch
                    .iter()
                    .map(|p| tracks[p.track].track_id.as_str())
                    .collect()
            };
            if outs.iter().any(|o| !o.report.total.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite loss in epoch {epoch}, batch tracks {:?}",
                    batch_ids()
                )));
            }

            // Ordered reduction keeps results identical regardless of how
            // rayon scheduled the batch.
            sess.ps.zero_grads();
            let scale = 1.0 / outs.len() as f32;
            let mut seen: HashSet<ParamId> = HashSet::new();
            for out in &outs {
                for (id, grad) in &out.grads {
                    sess.ps.accumulate_grad(*id, grad, scale)?;
                    seen.insert(*id);
                }
            }
            // A family nobody labelled can leave a classifier head without
            // gradients; Adam requires one for every trainable parameter.
            for &id in &trainable {
                if !seen.contains(&id) {
                    let zeros = vec![0.0; sess.ps.get(id).numel()];
                    sess.ps.accumulate_grad(id, &zeros, 1.0)?;
                }
            }

            let mut buf_sums: BTreeMap<ParamId, (Vec<f64>, usize)> = BTreeMap::new();
            for out in &outs {
                for (id, buf) in &out.buffers {
                    let slot = buf_sums
                        .entry(*id)
                        .or_insert_with(|| (vec![0.0; buf.len()], 0));
                    for (acc, &v) in slot.0.iter_mut().zip(buf) {
                        *acc += v as f64;
                    }
                    slot.1 += 1;
                }
            }
            for (id, (sum, n)) in buf_sums {
                let avg: Vec<f32> = sum.iter().map(|&v| (v / n as f64) as f32).collect();
                sess.ps.store_buffer(id, avg)?;
            }

            opt.step(&mut sess.ps)?;

            for out in &outs {
                sums.total += out.report.total;
                sums.seg += out.report.seg;
                sums.cls += out.report.cls;
                sums.sub += out.report.sub;
                sums.fut += out.report.fut;
            }
        }

        let n = plans.len() as f32;
        let stats = EpochStats {
            epoch,
            lr,
            total: sums.total / n,
            seg: sums.seg / n,
            cls: sums.cls / n,
            sub: sums.sub / n,
            fut: sums.fut / n,
        };
        csv.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            stats.epoch, stats.lr, stats.total, stats.seg, stats.cls, stats.sub, stats.fut
        ));
        epochs.push(stats);

        checkpoint::save(
            &sess.ps,
            &cfg.output.join(format!("checkpoint_epoch{epoch:02}.sbnt")),
        )?;
        // Rewritten every epoch so long runs can be watched from outside.
        std::fs::write(cfg.output.join("metrics.csv"), &csv)?;
    }

    let final_path = cfg.output.join("model.sbnt");
    checkpoint::save(&sess.ps, &final_path)?;
    let csv_path = cfg.output.join("metrics.csv");
    std::fs::write(&csv_path, csv)?;

    Ok(TrainSummary {
        epochs,
        checkpoint: final_path,
        metrics_csv: csv_path,
    })
}

// ---------------------------------------------------------------------------
// Retrieval

/// Indices of up to `k` uniformly spaced frames over `n`, endpoints included.
fn spaced_indices(n: usize, k: usize) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    if k == 1 {
        return vec![(n - 1) / 2];
    }
    let step = (n - 1) as f64 / (k - 1) as f64;
    let mut out: Vec<usize> = (0..k).map(|i| (i as f64 * step).round() as usize).collect();
    out.dedup();
    out
}

#[derive(Debug, Clone)]
pub struct RetrieveSummary {
    /// query id → candidate track ids, best first.
    pub rankings: BTreeMap<String, Vec<String>>,
    pub results_path: PathBuf,
    pub scores_path: Option<PathBuf>,
}

struct QueryFeatures {
    id: String,
    descs: Vec<DescriptionFeatures>,
    color: Option<usize>,
    vtype: Option<usize>,
}

pub fn run_retrieve(cfg: &RunConfig) -> Result<RetrieveSummary> {
    let mut sess = open_session(cfg)?;
    checkpoint::load_into(&mut sess.ps, &cfg.checkpoint_path()?)?;
    ensure_output_dir(cfg)?;

    let set = load_tracks(&cfg.tracks_path()?, true)?;
    if set.tracks.is_empty() {
        return Err(Error::Data("no candidate tracks to rank".into()));
    }
    let queries = load_queries(&cfg.queries_path()?)?;

    let size = sess.enc.image_size;
    let fsz = sess.enc.feature_size();

    let track_feats: Vec<(String, Vec<FrameFeatures>)> = set
        .tracks
        .par_iter()
        .map(|t| {
            let frames = spaced_indices(t.frames.len(), cfg.frames_per_track_sample)
                .into_iter()
                .map(|i| {
                    let img = load_image(&t.frame_path(&set.root, i))?;
                    let (img, bx) = resize_with_box(&img, t.boxes[i], size)?;
                    let (_, b) = render_box_mask::<f32>(bx, (size, size), (fsz, fsz))?;
                    sess.net.encode_frame(&sess.ps, &img, &b)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((t.track_id.clone(), frames))
        })
        .collect::<Result<Vec<_>>>()?;

    let query_feats: Vec<QueryFeatures> = queries
        .par_iter()
        .map(|(qid, nl)| {
            let (attrs, cleaned) = denoise_queries(nl, &sess.lexicon)?;
            let descs = cleaned
                .iter()
                .map(|d| {
                    let toks = tokenize(d, &sess.vocab, sess.enc.l)?;
                    sess.net.encode_description(&sess.ps, &toks)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(QueryFeatures {
                id: qid.clone(),
                descs,
                color: attrs.color_id,
                vtype: attrs.type_id,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let lambda = cfg.lambda as f32;
    let scored: Vec<(String, Vec<(String, f32)>)> = query_feats
        .par_iter()
        .map(|q| {
            let mut scores = Vec::with_capacity(track_feats.len());
            for (tid, frames) in &track_feats {
                let mut sum = 0.0f64;
                let mut count = 0usize;
                for d in &q.descs {
                    for f in frames {
                        let s = sess
                            .net
                            .score_pair(&sess.ps, d, f, q.color, q.vtype, lambda)?;
                        sum += s.prob as f64;
                        count += 1;
                    }
                }
                scores.push((tid.clone(), (sum / count as f64) as f32));
            }
            // Best first; exact ties fall back to the lexicographically
            // smaller track id so input order never matters.
            scores.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| a.0.cmp(&b.0))
            });
            Ok((q.id.clone(), scores))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rankings = BTreeMap::new();
    for (qid, scores) in &scored {
        rankings.insert(
            qid.clone(),
            scores.iter().map(|(tid, _)| tid.clone()).collect::<Vec<_>>(),
        );
    }

    let results_path = cfg.output.join("results.json");
    std::fs::write(&results_path, serde_json::to_string_pretty(&rankings)? + "\n")?;

    let scores_path = if cfg.dump_scores {
        let mut tids: Vec<&str> = track_feats.iter().map(|(tid, _)| tid.as_str()).collect();
        tids.sort_unstable();
        let mut out = String::from("query_id");
        for tid in &tids {
            out.push(',');
            out.push_str(tid);
        }
        out.push('\n');
        for (qid, scores) in &scored {
            let by_id: HashMap<&str, f32> =
                scores.iter().map(|(tid, s)| (tid.as_str(), *s)).collect();
            out.push_str(qid);
            for tid in &tids {
                out.push_str(&format!(",{:.6}", by_id[tid]));
            }
            out.push('\n');
        }
        let path = cfg.output.join("scores.csv");
        std::fs::write(&path, out)?;
        Some(path)
    } else {
        None
    };

    Ok(RetrieveSummary {
        rankings,
        results_path,
        scores_path,
    })
}

// ---------------------------------------------------------------------------
// Evaluation

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub mrr: f64,
    /// (k, recall@k) in the order configured.
    pub recalls: Vec<(usize, f64)>,
}

/// Scores a results file (query id → ranked track ids) against ground truth.
pub fn run_evaluate(cfg: &RunConfig) -> Result<EvalSummary> {
    let results_path = cfg.output.join("results.json");
    let body = std::fs::read_to_string(&results_path)
        .map_err(|e| Error::Data(format!("read {}: {e}", results_path.display())))?;
    let rankings: HashMap<String, Vec<String>> = serde_json::from_str(&body)?;
    let truth = load_truth(&cfg.truth_path()?)?;

    let mrr_v = mrr(&rankings, &truth)?;
    let recalls = cfg
        .recall_ks
        .iter()
        .map(|&k| Ok((k, recall_at_k(&rankings, &truth, k)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalSummary {
        mrr: mrr_v,
        recalls,
    })
}

// ---------------------------------------------------------------------------
// Synthetic data

pub fn run_synth(config: &SynthConfig, out_dir: &Path) -> Result<()> {
    let lexicon = AttributeLexicon::builtin();
    let corpus = generate_corpus(config, &lexicon)?;
    write_corpus(&corpus, config, &lexicon, out_dir)
}

// ---------------------------------------------------------------------------
// Gradient checking

/// Deterministic, scalar-type-independent "random" weights so reduced
/// outputs are weighted non-uniformly (uniform weights hide permutation and
/// normalisation bugs).
fn fixed_weights<S: Scalar>(shape: &[usize], phase: u64) -> TensorBase<S> {
    TensorBase::from_fn(shape, |i| {
        let x = (i as u64)
            .wrapping_add(phase.wrapping_mul(7919))
            .wrapping_mul(2654435761)
            >> 7;
        S::from_f64((x % 997) as f64 / 997.0 - 0.5)
    })
}

/// Weighted sum of a tensor with the fixed weights for `phase`.
fn weighted_sum<S: Scalar>(g: &mut Graph<S>, x: Var, phase: u64) -> Result<Var> {
    let w = g.constant(fixed_weights(g.shape(x), phase));
    let prod = g.mul(x, w)?;
    g.sum_all(prod)
}

fn add_all<S: Scalar>(g: &mut Graph<S>, terms: &[Var]) -> Result<Var> {
    let (&first, rest) = terms
        .split_first()
        .ok_or_else(|| Error::GradCheck("no terms to sum".into()))?;
    let mut acc = first;
    for &t in rest {
        acc = g.add(acc, t)?;
    }
    Ok(acc)
}

struct TextChain {
    text: TextEncoder,
    tokens: TokenSeq,
}

impl DiffProgram for TextChain {
    fn run<S: Scalar>(&self, g: &mut Graph<S>, ps: &ParamSet<S>, _inputs: &[Var]) -> Result<Var> {
        let fn_mat = self.text.forward(g, ps, &self.tokens)?;
        weighted_sum(g, fn_mat, 1)
    }
}

struct ImageChain {
    image: ImageEncoder,
}

impl DiffProgram for ImageChain {
    fn run<S: Scalar>(&self, g: &mut Graph<S>, ps: &ParamSet<S>, inputs: &[Var]) -> Result<Var> {
        let fi = self.image.forward(g, ps, inputs[0])?;
        weighted_sum(g, fi, 2)
    }
}

struct AuxChain {
    text_cls: TextClassifier,
    image_cls: ImageClassifier,
    subst: SubstitutionModule,
    future: FuturePredictor,
    box_mask: TensorBase<f32>,
}

impl DiffProgram for AuxChain {
    fn run<S: Scalar>(&self, g: &mut Graph<S>, ps: &ParamSet<S>, inputs: &[Var]) -> Result<Var> {
        let (fn_mat, fi) = (inputs[0], inputs[1]);
        let b = g.constant(self.box_mask.convert::<S>());

        let e = g.shape(fn_mat)[1];
        let row = g.slice(fn_mat, 0, 0, 1)?;
        let fn_cls = g.reshape(row, &[e])?;
        let tl = self.text_cls.forward(g, ps, fn_cls)?;
        let (il, fi_cls) = self.image_cls.forward(g, ps, fi, b)?;
        let sv = self.subst.forward(g, ps, fn_mat, fi, b)?;
        let fp = self.future.forward(g, ps, fi)?;

        let terms = [
            weighted_sum(g, tl.color, 3)?,
            weighted_sum(g, tl.vtype, 4)?,
            weighted_sum(g, il.color, 5)?,
            weighted_sum(g, il.vtype, 6)?,
            weighted_sum(g, fi_cls, 7)?,
            weighted_sum(g, sv.fi_gt, 8)?,
            weighted_sum(g, sv.fn_gt, 9)?,
            weighted_sum(g, sv.fi_g, 10)?,
            weighted_sum(g, sv.fn_g, 11)?,
            weighted_sum(g, fp, 12)?,
        ];
        add_all(g, &terms)
    }
}

struct FusionChain {
    coattn: CoAttention,
    gate: ChannelGate,
    mask: MaskHead,
}

impl DiffProgram for FusionChain {
    fn run<S: Scalar>(&self, g: &mut Graph<S>, ps: &ParamSet<S>, inputs: &[Var]) -> Result<Var> {
        let (fn_mat, fi) = (inputs[0], inputs[1]);
        let a = self.coattn.forward(g, ps, fn_mat, fi)?;
        let (fn_e, fi_e) = enhance(g, fn_mat, fi, a)?;
        let fm = self.gate.forward(g, ps, fn_e, fi_e)?;
        let m = self.mask.forward(g, ps, fm)?;
        weighted_sum(g, m, 13)
    }
}

struct LossChain {
    box_mask: TensorBase<f32>,
    attrs: TrackAttributes,
    cfg: LossConfig,
}

impl DiffProgram for LossChain {
    fn run<S: Scalar>(&self, g: &mut Graph<S>, ps: &ParamSet<S>, inputs: &[Var]) -> Result<Var> {
        let _ = ps;
        let m = g.sigmoid(inputs[0]);
        let b = g.constant(self.box_mask.convert::<S>());
        let lv = compute_losses(
            g,
            &LossInputs {
                m,
                b,
                text_logits: AttrLogits {
                    color: inputs[1],
                    vtype: inputs[2],
                },
                image_logits: AttrLogits {
                    color: inputs[3],
                    vtype: inputs[4],
                },
                subst: SubstitutionVars {
                    fi_gt: inputs[5],
                    fn_gt: inputs[6],
                    fi_g: inputs[7],
                    fn_g: inputs[8],
                },
                future: Some((inputs[9], inputs[10])),
                attrs: &self.attrs,
            },
            &self.cfg,
        )?;
        Ok(lv.total)
    }
}

/// Flips on the deliberately wrong ReLU adjoint before delegating; the
/// forward pass (and so the finite-difference oracle) is untouched.
struct Corrupted<P>(P);

impl<P: DiffProgram> DiffProgram for Corrupted<P> {
    fn run<S: Scalar>(&self, g: &mut Graph<S>, ps: &ParamSet<S>, inputs: &[Var]) -> Result<Var> {
        g.corrupt_relu_adjoint = true;
        self.0.run(g, ps, inputs)
    }
}

#[derive(Debug, Clone)]
pub struct ModuleCheck {
    pub name: &'static str,
    pub report: GradCheckReport,
    pub pass: bool,
}

fn check_one<P: DiffProgram>(
    name: &'static str,
    prog: &P,
    ps: &ParamSet<f32>,
    inputs: &[TensorBase<f32>],
    budget: usize,
    seed: u64,
    corrupt: bool,
) -> Result<ModuleCheck> {
    let report = if corrupt {
        grad_check_sampled(&Corrupted(prog), ps, inputs, DEFAULT_STEP, true, budget, seed)?
    } else {
        grad_check_sampled(prog, ps, inputs, DEFAULT_STEP, true, budget, seed)?
    };
    Ok(ModuleCheck {
        name,
        report,
        pass: report.max_rel_err < PASS_THRESHOLD,
    })
}

// `DiffProgram` takes `&P`, so wrapping a reference needs the impl too.
impl<P: DiffProgram> DiffProgram for &P {
    fn run<S: Scalar>(&self, g: &mut Graph<S>, ps: &ParamSet<S>, inputs: &[Var]) -> Result<Var> {
        (*self).run(g, ps, inputs)
    }
}

/// Checks the analytic gradients of every module chain at working dims: the
/// text encoder, the image encoder (at a reduced input size; channel widths
/// are the working ones), the auxiliary heads, the fusion stack, and the
/// loss assembly. With `corrupt` set the ReLU adjoint is biased, which a
/// healthy harness must report as failures.
pub fn run_gradcheck(seed: u64, corrupt: bool) -> Result<Vec<ModuleCheck>> {
    let lexicon = AttributeLexicon::builtin();
    let vocab = Vocab::from_corpus([
        "a red sedan turns left",
        "the blue pickup keeps straight ahead",
        "one gray van comes to a stop",
    ]);
    let desk = EncoderConfig::desk(vocab.size());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    // Text encoder at full desk dims.
    {
        let mut ps = ParamSet::<f32>::new();
        let text = TextEncoder::new(&mut ps, &desk, &mut rng)?;
        let tokens = tokenize("the blue pickup keeps straight", &vocab, desk.l)?;
        let chain = TextChain { text, tokens };
        checks.push(check_one("text_encoder", &chain, &ps, &[], 380, seed, corrupt)?);
    }

    // Image encoder at desk channel widths; the input is shrunk to keep the
    // finite-difference forward passes affordable.
    {
        let cfg = EncoderConfig {
            image_size: 32,
            ..desk.clone()
        };
        let mut ps = ParamSet::<f32>::new();
        let image = ImageEncoder::new(&mut ps, &cfg, &mut rng)?;
        let input = TensorBase::<f32>::rand_uniform(&[3, 32, 32], 0.0, 1.0, &mut rng);
        let chain = ImageChain { image };
        checks.push(check_one("image_encoder", &chain, &ps, &[input], 320, seed, corrupt)?);
    }

    let fsz = desk.feature_size();
    let (_, box_mask) = render_box_mask::<f32>(
        [16, 24, 56, 48],
        (desk.image_size, desk.image_size),
        (fsz, fsz),
    )?;
    let fn_in = TensorBase::<f32>::rand_uniform(&[desk.l, desk.e], -0.5, 0.5, &mut rng);
    let fi_in = TensorBase::<f32>::rand_uniform(&[desk.c, fsz, fsz], -0.5, 0.5, &mut rng);

    // Auxiliary heads at desk dims.
    {
        let mut ps = ParamSet::<f32>::new();
        let chain = AuxChain {
            text_cls: TextClassifier::new(
                &mut ps,
                desk.e,
                lexicon.num_colors(),
                lexicon.num_types(),
                &mut rng,
            )?,
            image_cls: ImageClassifier::new(
                &mut ps,
                desk.c,
                lexicon.num_colors(),
                lexicon.num_types(),
                &mut rng,
            )?,
            subst: SubstitutionModule::new(&mut ps, desk.e, desk.c, &mut rng)?,
            future: FuturePredictor::new(&mut ps, desk.c, &mut rng)?,
            box_mask: box_mask.clone(),
        };
        let inputs = [fn_in.clone(), fi_in.clone()];
        checks.push(check_one("aux_heads", &chain, &ps, &inputs, 280, seed, corrupt)?);
    }

    // Fusion stack at desk dims.
    {
        let mut ps = ParamSet::<f32>::new();
        let chain = FusionChain {
            coattn: CoAttention::new(&mut ps, desk.e, desk.c, &mut rng)?,
            gate: ChannelGate::new(&mut ps, desk.e, desk.c, &mut rng)?,
            mask: MaskHead::new(&mut ps, desk.c, &mut rng)?,
        };
        let inputs = [fn_in.clone(), fi_in.clone()];
        checks.push(check_one("fusion_mask", &chain, &ps, &inputs, 320, seed, corrupt)?);
    }

    // Loss assembly; targets stay attached so the oracle sees the same
    // function the adjoint differentiates.
    {
        let ps = ParamSet::<f32>::new();
        let chain = LossChain {
            box_mask,
            attrs: TrackAttributes {
                color_id: Some(3),
                type_id: Some(2),
                provenance: vec![(Some(3), Some(2)); 3],
            },
            cfg: LossConfig {
                detach_targets: false,
                ..LossConfig::default()
            },
        };
        let nc = lexicon.num_colors();
        let nt = lexicon.num_types();
        let mut mk = |shape: &[usize]| TensorBase::<f32>::rand_uniform(shape, -0.5, 0.5, &mut rng);
        let inputs = [
            mk(&[1, fsz, fsz]),
            mk(&[nc]),
            mk(&[nt]),
            mk(&[nc]),
            mk(&[nt]),
            mk(&[desk.c]),
            mk(&[desk.e]),
            mk(&[desk.c]),
            mk(&[desk.e]),
            mk(&[3, fsz, fsz]),
            mk(&[3, fsz, fsz]),
        ];
        checks.push(check_one("losses", &chain, &ps, &inputs, 240, seed, corrupt)?);
    }

    Ok(checks)
}

// ---------------------------------------------------------------------------
// Mask dumps

/// Renders the predicted mask of each track's first frame against its own
/// first description, upsampled to image size, as grayscale PNGs.
pub fn dump_masks(cfg: &RunConfig, limit: usize) -> Result<Vec<PathBuf>> {
    let mut sess = open_session(cfg)?;
    checkpoint::load_into(&mut sess.ps, &cfg.checkpoint_path()?)?;
    let set = load_tracks(&cfg.tracks_path()?, true)?;
    let dir = cfg.output.join("masks");
    std::fs::create_dir_all(&dir)?;

    let size = sess.enc.image_size;
    let fsz = sess.enc.feature_size();
    let mut written = Vec::new();
    for t in set.tracks.iter().take(limit) {
        let (attrs, cleaned) = denoise_queries(&t.nl, &sess.lexicon)?;
        let _ = attrs;
        let toks = tokenize(&cleaned[0], &sess.vocab, sess.enc.l)?;
        let d = sess.net.encode_description(&sess.ps, &toks)?;

        let img = load_image(&t.frame_path(&set.root, 0))?;
        let (img, bx) = resize_with_box(&img, t.boxes[0], size)?;
        let (_, b) = render_box_mask::<f32>(bx, (size, size), (fsz, fsz))?;
        let f = sess.net.encode_frame(&sess.ps, &img, &b)?;

        let mask = sess.net.pair_mask(&sess.ps, &d, &f)?;
        let up = resize_bilinear(&mask, size, size)?;
        let path = dir.join(format!("{}.png", t.track_id));
        save_gray_png(&path, &up)?;
        written.push(path);
    }
    Ok(written)
}
