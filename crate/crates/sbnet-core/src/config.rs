//! Run configuration: presets, flat `key = value` config files, and
//! field-by-name overrides shared by the config parser and the CLI flags.

use std::path::{Path, PathBuf};

use crate::adam::AdamConfig;
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::loss::LossConfig;

/// Everything a train/retrieve/evaluate run needs. Two presets exist:
/// `desk` (small dims, fast on a laptop CPU) and `paper` (full dims).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: String,

    // Encoder dimensions (vocab size comes from the vocab file at load time).
    pub l: usize,
    pub e: usize,
    pub c: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub image_size: usize,
    pub downsample_factor: usize,

    // Optimisation.
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// 1-based epochs at which the learning rate is divided by 10.
    pub lr_drop_epochs: Vec<usize>,
    pub weight_decay: f64,
    pub label_smoothing: f64,

    // Loss / score weights.
    pub lambda: f64,
    pub lambda1: f64,
    pub lambda2: f64,

    pub seed: u64,
    /// Max frames per track averaged over at retrieval time.
    pub frames_per_track_sample: usize,
    pub seg_paper_literal: bool,
    pub sub_paper_literal: bool,

    // Paths. `tracks` doubles as the frame root: frame paths inside the
    // track file are relative to its parent directory.
    pub tracks: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output: PathBuf,

    pub recall_ks: Vec<usize>,
    /// Also write the per-(query, track) score matrix as CSV on retrieval.
    pub dump_scores: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    pub fn desk() -> Self {
        let dims = EncoderConfig::desk(4);
        RunConfig {
            preset: "desk".into(),
            l: dims.l,
            e: dims.e,
            c: dims.c,
            d_model: dims.d_model,
            num_heads: dims.num_heads,
            num_layers: dims.num_layers,
            image_size: dims.image_size,
            downsample_factor: dims.downsample_factor,
            batch_size: 8,
            epochs: 12,
            lr: 1e-3,
            lr_drop_epochs: vec![],
            weight_decay: 0.0,
            label_smoothing: 0.1,
            lambda: 0.5,
            lambda1: 0.2,
            lambda2: 0.2,
            seed: 42,
            frames_per_track_sample: 8,
            seg_paper_literal: false,
            sub_paper_literal: false,
            tracks: None,
            queries: None,
            truth: None,
            lexicon: None,
            vocab: None,
            checkpoint: None,
            output: PathBuf::from("out"),
            recall_ks: vec![1, 5, 10],
            dump_scores: false,
        }
    }

    pub fn paper() -> Self {
        let dims = EncoderConfig::paper(4);
        RunConfig {
            preset: "paper".into(),
            l: dims.l,
            e: dims.e,
            c: dims.c,
            d_model: dims.d_model,
            num_heads: dims.num_heads,
            num_layers: dims.num_layers,
            image_size: dims.image_size,
            downsample_factor: dims.downsample_factor,
            batch_size: 64,
            epochs: 10,
            lr: 3e-5,
            lr_drop_epochs: vec![5, 8],
            ..Self::desk()
        }
    }

    pub fn preset_named(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected desk or paper)"
            ))),
        }
    }

    /// Parses a flat UTF-8 config file of `key = value` lines. Blank lines
    /// and lines starting with `#` are skipped. A `preset = ...` line resets
    /// every field to that preset, so it should come first.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("read {}: {e}", path.display())))?;
        let mut cfg = Self::desk();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected 'key = value', got '{raw}'",
                    path.display(),
                    i + 1
                ))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        }
        Ok(cfg)
    }

    /// Sets one field by its config-file key. The CLI funnels its override
    /// flags through here so files and flags behave identically.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn usize_of(key: &str, v: &str) -> Result<usize> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: expected unsigned integer, got '{v}'")))
        }
        fn f64_of(key: &str, v: &str) -> Result<f64> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: expected number, got '{v}'")))
        }
        fn bool_of(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(Error::Config(format!("{key}: expected bool, got '{v}'"))),
            }
        }
        fn list_of(key: &str, v: &str) -> Result<Vec<usize>> {
            if v.is_empty() || v == "none" {
                return Ok(vec![]);
            }
            v.split(',')
                .map(|p| usize_of(key, p.trim()))
                .collect()
        }

        match key {
            "preset" => *self = Self::preset_named(value)?,
            "l" => self.l = usize_of(key, value)?,
            "e" => self.e = usize_of(key, value)?,
            "c" => self.c = usize_of(key, value)?,
            "d_model" => self.d_model = usize_of(key, value)?,
            "num_heads" => self.num_heads = usize_of(key, value)?,
            "num_layers" => self.num_layers = usize_of(key, value)?,
            "image_size" => self.image_size = usize_of(key, value)?,
            "downsample_factor" => self.downsample_factor = usize_of(key, value)?,
            "batch_size" => self.batch_size = usize_of(key, value)?,
            "epochs" => self.epochs = usize_of(key, value)?,
            "lr" => self.lr = f64_of(key, value)?,
            "lr_drop_epochs" => self.lr_drop_epochs = list_of(key, value)?,
            "weight_decay" => self.weight_decay = f64_of(key, value)?,
            "label_smoothing" => self.label_smoothing = f64_of(key, value)?,
            "lambda" | "lambda_ctm" => self.lambda = f64_of(key, value)?,
            "lambda1" => self.lambda1 = f64_of(key, value)?,
            "lambda2" => self.lambda2 = f64_of(key, value)?,
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| Error::Config(format!("seed: expected u64, got '{value}'")))?
            }
            "frames_per_track_sample" => {
                self.frames_per_track_sample = usize_of(key, value)?
            }
            "seg_paper_literal" => self.seg_paper_literal = bool_of(key, value)?,
            "sub_paper_literal" => self.sub_paper_literal = bool_of(key, value)?,
            "tracks" => self.tracks = Some(PathBuf::from(value)),
            "queries" => self.queries = Some(PathBuf::from(value)),
            "truth" => self.truth = Some(PathBuf::from(value)),
            "lexicon" => self.lexicon = Some(PathBuf::from(value)),
            "vocab" => self.vocab = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "output" => self.output = PathBuf::from(value),
            "recall_ks" => self.recall_ks = list_of(key, value)?,
            "dump_scores" => self.dump_scores = bool_of(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Every key accepted by [`set`](Self::set) (canonical names only, no
    /// aliases). The CLI derives its `--key value` override surface from this
    /// list, so adding a field here and in `set` is enough to expose it.
    pub const KEYS: &'static [&'static str] = &[
        "preset",
        "l",
        "e",
        "c",
        "d_model",
        "num_heads",
        "num_layers",
        "image_size",
        "downsample_factor",
        "batch_size",
        "epochs",
        "lr",
        "lr_drop_epochs",
        "weight_decay",
        "label_smoothing",
        "lambda",
        "lambda1",
        "lambda2",
        "seed",
        "frames_per_track_sample",
        "seg_paper_literal",
        "sub_paper_literal",
        "tracks",
        "queries",
        "truth",
        "lexicon",
        "vocab",
        "checkpoint",
        "output",
        "recall_ks",
        "dump_scores",
    ];

    pub fn validate(&self) -> Result<()> {
        if self.preset != "desk" && self.preset != "paper" {
            return Err(Error::Config(format!("unknown preset '{}'", self.preset)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("weight_decay", self.weight_decay),
            ("label_smoothing", self.label_smoothing),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.label_smoothing >= 1.0 {
            return Err(Error::Config(format!(
                "label_smoothing must be below 1, got {}",
                self.label_smoothing
            )));
        }
        if self.frames_per_track_sample == 0 {
            return Err(Error::Config("frames_per_track_sample must be at least 1".into()));
        }
        if self.recall_ks.is_empty() || self.recall_ks.iter().any(|&k| k == 0) {
            return Err(Error::Config("recall_ks must be non-empty positive integers".into()));
        }
        // Dimension constraints are checked by the encoder config itself.
        self.encoder_config(crate::text::RESERVED_IDS.max(4)).validate()
    }

    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            l: self.l,
            e: self.e,
            c: self.c,
            d_model: self.d_model,
            num_heads: self.num_heads,
            num_layers: self.num_layers,
            image_size: self.image_size,
            downsample_factor: self.downsample_factor,
            vocab_size,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            label_smoothing: self.label_smoothing,
            seg_paper_literal: self.seg_paper_literal,
            sub_paper_literal: self.sub_paper_literal,
            detach_targets: true,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    fn path_of(p: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        p.clone()
            .ok_or_else(|| Error::Config(format!("missing required path '{what}'")))
    }

    pub fn tracks_path(&self) -> Result<PathBuf> {
        Self::path_of(&self.tracks, "tracks")
    }
    pub fn queries_path(&self) -> Result<PathBuf> {
        Self::path_of(&self.queries, "queries")
    }
    pub fn truth_path(&self) -> Result<PathBuf> {
        Self::path_of(&self.truth, "truth")
    }
    pub fn vocab_path(&self) -> Result<PathBuf> {
        Self::path_of(&self.vocab, "vocab")
    }
    pub fn checkpoint_path(&self) -> Result<PathBuf> {
        Self::path_of(&self.checkpoint, "checkpoint")
    }
}
