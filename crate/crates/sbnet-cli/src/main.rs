use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Arg, ArgAction, ArgMatches, Command};
use sbnet_core::config::RunConfig;
use sbnet_core::data::SynthConfig;
use sbnet_core::runner;

fn key_help(key: &str) -> &'static str {
    match key {
        "preset" => "named preset (desk | paper); resets every other model/optimizer field, so apply it before other overrides",
        "l" => "token positions per description",
        "e" => "text feature width",
        "c" => "image feature channels",
        "d_model" => "transformer width",
        "num_heads" => "attention heads",
        "num_layers" => "transformer layers",
        "image_size" => "input image side in pixels",
        "downsample_factor" => "image-to-feature-map downsampling",
        "batch_size" => "samples per optimizer step",
        "epochs" => "training epochs",
        "lr" => "initial learning rate",
        "lr_drop_epochs" => "comma-separated epochs at which lr divides by 10 ('none' for never)",
        "weight_decay" => "decoupled weight decay",
        "label_smoothing" => "classifier label smoothing",
        "lambda" => "weight of the attribute term in the pair score",
        "lambda1" => "weight of the substitution loss",
        "lambda2" => "weight of the future-prediction loss",
        "seed" => "RNG seed for init, shuffling and augmentation",
        "frames_per_track_sample" => "frames scored per track at retrieval",
        "seg_paper_literal" => "use the literal printed segmentation-loss form",
        "sub_paper_literal" => "use the literal printed substitution-loss form",
        "tracks" => "tracks JSON path",
        "queries" => "queries JSON path",
        "truth" => "ground-truth JSON path",
        "lexicon" => "attribute lexicon path (builtin if omitted)",
        "vocab" => "vocabulary file path",
        "checkpoint" => "model checkpoint to load",
        "output" => "output directory",
        "recall_ks" => "comma-separated recall cutoffs",
        "dump_scores" => "also write the per-pair score matrix CSV",
        _ => "",
    }
}

fn with_run_config_args(mut cmd: Command) -> Command {
    cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("PATH")
            .help("flat `key = value` config file, applied before flag overrides"),
    );
    for &key in RunConfig::KEYS {
        cmd = cmd.arg(
            Arg::new(key)
                .long(key)
                .value_name("VALUE")
                .help(key_help(key)),
        );
    }
    cmd
}

fn cli() -> Command {
    Command::new("sbnet")
        .about("language-conditioned vehicle track retrieval")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(with_run_config_args(
            Command::new("train").about("train a model on a track corpus"),
        ))
        .subcommand(with_run_config_args(
            Command::new("retrieve").about("rank candidate tracks for every query"),
        ))
        .subcommand(with_run_config_args(
            Command::new("evaluate").about("score results.json against ground truth"),
        ))
        .subcommand(with_run_config_args(
            Command::new("dump-masks")
                .about("write predicted location masks as PNGs")
                .arg(
                    Arg::new("limit")
                        .long("limit")
                        .value_name("N")
                        .value_parser(clap::value_parser!(usize))
                        .default_value("8")
                        .help("how many tracks to render"),
                ),
        ))
        .subcommand(
            Command::new("synth")
                .about("generate a synthetic track corpus with captions")
                .arg(
                    Arg::new("out")
                        .long("out")
                        .value_name("DIR")
                        .required(true)
                        .help("directory for frames, tracks, queries, truth, lexicon, vocab"),
                )
                .arg(arg_u64("seed", "generator seed"))
                .arg(arg_usize("num-tracks", "total tracks (train + test)"))
                .arg(arg_usize("frames-per-track", "frames rendered per track"))
                .arg(arg_usize("image-size", "frame side in pixels"))
                .arg(arg_usize("distractors", "extra vehicles per scene"))
                .arg(arg_f64("p-noise", "per-track chance one description lies about color"))
                .arg(arg_f64("train-fraction", "fraction of tracks in the train split")),
        )
        .subcommand(
            Command::new("gradcheck")
                .about("compare analytic gradients of every module chain against finite differences")
                .arg(arg_u64("seed", "seed for weights, probe inputs and coordinate sampling"))
                .arg(
                    Arg::new("corrupt-adjoint")
                        .long("corrupt-adjoint")
                        .action(ArgAction::SetTrue)
                        .help("deliberately bias one adjoint; the check must then fail (oracle self-test)"),
                ),
        )
}

fn arg_u64(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("N")
        .value_parser(clap::value_parser!(u64))
        .help(help)
}

fn arg_usize(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("N")
        .value_parser(clap::value_parser!(usize))
        .help(help)
}

fn arg_f64(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("X")
        .value_parser(clap::value_parser!(f64))
        .help(help)
}

fn run_config(m: &ArgMatches) -> anyhow::Result<RunConfig> {
    let mut cfg = match m.get_one::<String>("config") {
        Some(p) => RunConfig::from_file(Path::new(p))?,
        None => RunConfig::default(),
    };
    // `preset` replaces the whole config, so it goes first; everything else
    // is order-independent.
    if let Some(v) = m.get_one::<String>("preset") {
        cfg.set("preset", v)?;
    }
    for &key in RunConfig::KEYS {
        if key == "preset" {
            continue;
        }
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

fn synth_config(m: &ArgMatches) -> SynthConfig {
    let mut sc = SynthConfig::default();
    if let Some(&v) = m.get_one::<u64>("seed") {
        sc.seed = v;
    }
    if let Some(&v) = m.get_one::<usize>("num-tracks") {
        sc.num_tracks = v;
    }
    if let Some(&v) = m.get_one::<usize>("frames-per-track") {
        sc.frames_per_track = v;
    }
    if let Some(&v) = m.get_one::<usize>("image-size") {
        sc.image_size = v;
    }
    if let Some(&v) = m.get_one::<usize>("distractors") {
        sc.distractors = v;
    }
    if let Some(&v) = m.get_one::<f64>("p-noise") {
        sc.p_noise = v;
    }
    if let Some(&v) = m.get_one::<f64>("train-fraction") {
        sc.train_fraction = v;
    }
    sc
}

fn main() -> anyhow::Result<ExitCode> {
    let matches = cli().get_matches();
    match matches.subcommand() {
        Some(("train", m)) => {
            let cfg = run_config(m)?;
            let summary = runner::run_train(&cfg).context("training failed")?;
            for e in &summary.epochs {
                println!(
                    "epoch {:>3}  lr {:<10}  loss {:.4}  (seg {:.4} cls {:.4} sub {:.4} fut {:.4})",
                    e.epoch, e.lr, e.total, e.seg, e.cls, e.sub, e.fut
                );
            }
            println!("checkpoint: {}", summary.checkpoint.display());
            println!("metrics:    {}", summary.metrics_csv.display());
        }
        Some(("retrieve", m)) => {
            let cfg = run_config(m)?;
            let summary = runner::run_retrieve(&cfg).context("retrieval failed")?;
            println!(
                "ranked {} queries -> {}",
                summary.rankings.len(),
                summary.results_path.display()
            );
            if let Some(p) = &summary.scores_path {
                println!("scores: {}", p.display());
            }
        }
        Some(("evaluate", m)) => {
            let cfg = run_config(m)?;
            let s = runner::run_evaluate(&cfg).context("evaluation failed")?;
            println!("MRR: {:.4}", s.mrr);
            for (k, r) in &s.recalls {
                println!("Recall@{k}: {r:.4}");
            }
        }
        Some(("dump-masks", m)) => {
            let cfg = run_config(m)?;
            let limit = *m.get_one::<usize>("limit").expect("has default");
            let paths = runner::dump_masks(&cfg, limit).context("mask dump failed")?;
            println!("wrote {} masks under {}", paths.len(), cfg.output.display());
        }
        Some(("synth", m)) => {
            let sc = synth_config(m);
            let out = PathBuf::from(m.get_one::<String>("out").expect("required"));
            runner::run_synth(&sc, &out).context("synthesis failed")?;
            println!(
                "wrote {} tracks ({} frames each) to {}",
                sc.num_tracks,
                sc.frames_per_track,
                out.display()
            );
        }
        Some(("gradcheck", m)) => {
            let seed = m.get_one::<u64>("seed").copied().unwrap_or(42);
            let corrupt = m.get_flag("corrupt-adjoint");
            let checks = runner::run_gradcheck(seed, corrupt)?;
            let mut failed = false;
            for c in &checks {
                println!(
                    "{}: max_rel_err={:.3e} coords={} skipped={} {}",
                    c.name,
                    c.report.max_rel_err,
                    c.report.coords_checked,
                    c.report.coords_skipped,
                    if c.pass { "PASS" } else { "FAIL" }
                );
                failed |= !c.pass;
            }
            if failed {
                return Ok(ExitCode::FAILURE);
            }
        }
        _ => unreachable!("subcommand required"),
    }
    Ok(ExitCode::SUCCESS)
}
