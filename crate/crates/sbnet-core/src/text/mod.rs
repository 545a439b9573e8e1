//! Language side of the pipeline: tokenization, the color/type lexicon with
//! rule-based extraction, and the majority-vote description denoiser.

mod denoise;
mod lexicon;
mod vocab;

pub use denoise::{denoise_queries, TrackAttributes};
pub use lexicon::AttributeLexicon;
pub use vocab::{normalize_words, tokenize, TokenSeq, Vocab, CLS_ID, PAD_ID, RESERVED_IDS, UNK_ID};
