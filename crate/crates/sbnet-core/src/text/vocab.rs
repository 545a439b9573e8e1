use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
pub const UNK_ID: usize = 2;
/// Number of reserved ids preceding file-defined tokens.
pub const RESERVED_IDS: usize = 3;

/// Lowercases and splits on every non-alphanumeric character, so punctuation
/// never glues onto a word.
pub fn normalize_words(text: &str) -> Vec<String> {
    words_with_spans(text).into_iter().map(|(w, _)| w).collect()
}

/// Like [`normalize_words`] but keeps each word's byte range in the original
/// text, which the denoiser needs for in-place rewriting.
pub(crate) fn words_with_spans(text: &str) -> Vec<(String, std::ops::Range<usize>)> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            start.get_or_insert(i);
        } else if let Some(s) = start.take() {
            out.push((text[s..i].to_lowercase(), s..i));
        }
    }
    if let Some(s) = start {
        out.push((text[s..].to_lowercase(), s..text.len()));
    }
    out
}

/// Word-level vocabulary with dense ids; 0/1/2 are PAD/CLS/UNK and never
/// reassigned.
#[derive(Debug, Clone)]
pub struct Vocab {
    ids: HashMap<String, usize>,
    size: usize,
}

impl Vocab {
    /// Builds from an ordered token list; ids start at [`RESERVED_IDS`].
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Result<Self> {
        let mut ids = HashMap::new();
        let mut next = RESERVED_IDS;
        for tok in tokens {
            if tok.is_empty() {
                continue;
            }
            if ids.insert(tok.clone(), next).is_some() {
                return Err(Error::Vocab(format!("duplicate token '{tok}'")));
            }
            next += 1;
        }
        Ok(Self { ids, size: next })
    }

    /// Collects every distinct normalized word of the corpus, sorted, so the
    /// id assignment is independent of text order.
    pub fn from_corpus<'a, I: IntoIterator<Item = &'a str>>(texts: I) -> Self {
        let words: BTreeSet<String> = texts
            .into_iter()
            .flat_map(|t| normalize_words(t))
            .collect();
        Self::from_tokens(words).expect("sorted set has no duplicates")
    }

    /// One token per line; line number = id − reserved count.
    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path)?;
        Self::from_tokens(body.lines().map(|l| l.trim().to_owned()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ordered: Vec<(&str, usize)> =
            self.ids.iter().map(|(w, &i)| (w.as_str(), i)).collect();
        ordered.sort_by_key(|&(_, i)| i);
        let mut out = String::new();
        for (w, _) in ordered {
            out.push_str(w);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn id(&self, word: &str) -> usize {
        self.ids.get(word).copied().unwrap_or(UNK_ID)
    }

    /// Total id count including the reserved band.
    pub fn size(&self) -> usize {
        self.size
    }
}

/// Fixed-length token window: CLS, then words, then PAD. The attention mask
/// is 1 for real positions (including CLS) and 0 for padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<usize>,
    pub attention_mask: Vec<u8>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// True when the sequence holds no words beyond CLS.
    pub fn is_blank(&self) -> bool {
        self.attention_mask.iter().skip(1).all(|&m| m == 0)
    }
}

/// Lowercase, strip punctuation, prepend CLS, map OOV words to UNK, and
/// truncate or pad to exactly `l` positions.
pub fn tokenize(description: &str, vocab: &Vocab, l: usize) -> Result<TokenSeq> {
    if l < 2 {
        return Err(Error::config(format!("token window l = {l} must be >= 2")));
    }
    let mut ids = Vec::with_capacity(l);
    let mut mask = Vec::with_capacity(l);
    ids.push(CLS_ID);
    mask.push(1);
    for word in normalize_words(description) {
        if ids.len() == l {
            break;
        }
        ids.push(vocab.id(&word));
        mask.push(1);
    }
    while ids.len() < l {
        ids.push(PAD_ID);
        mask.push(0);
    }
    Ok(TokenSeq {
        ids,
        attention_mask: mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::from_corpus(["a red sedan turns left"])
    }

    #[test]
    fn tokenize_pads_and_masks() {
        let v = vocab();
        let ts = tokenize("A red sedan turns left.", &v, 8).unwrap();
        assert_eq!(ts.ids[0], CLS_ID);
        assert_eq!(
            ts.ids[1..6],
            [v.id("a"), v.id("red"), v.id("sedan"), v.id("turns"), v.id("left")]
        );
        assert_eq!(ts.ids[6..], [PAD_ID, PAD_ID]);
        assert_eq!(ts.attention_mask, vec![1, 1, 1, 1, 1, 1, 0, 0]);
        assert!(ts.ids[1..6].iter().all(|&i| i != UNK_ID));
    }

    #[test]
    fn oov_maps_to_unk() {
        let ts = tokenize("a blue sedan", &vocab(), 6).unwrap();
        assert_eq!(ts.ids[2], UNK_ID);
        assert_ne!(ts.ids[3], UNK_ID);
    }

    #[test]
    fn long_sentences_truncate_to_l() {
        let ts = tokenize("a red sedan turns left a red sedan turns left", &vocab(), 4).unwrap();
        assert_eq!(ts.len(), 4);
        assert_eq!(ts.ids[0], CLS_ID);
        assert_eq!(ts.attention_mask, vec![1, 1, 1, 1]);
    }

    #[test]
    fn empty_description_is_cls_plus_pad() {
        let ts = tokenize("", &vocab(), 5).unwrap();
        assert_eq!(ts.ids, vec![CLS_ID, PAD_ID, PAD_ID, PAD_ID, PAD_ID]);
        assert!(ts.is_blank());
    }

    #[test]
    fn window_below_two_is_rejected() {
        assert!(tokenize("a", &vocab(), 1).is_err());
    }

    #[test]
    fn punctuation_never_reaches_tokens() {
        let v = Vocab::from_corpus(["well lit street"]);
        let ts = tokenize("Well-lit, street!!", &v, 6).unwrap();
        assert_eq!(
            ts.ids[1..4],
            [v.id("well"), v.id("lit"), v.id("street")]
        );
    }

    #[test]
    fn vocab_roundtrips_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocab::from_corpus(["zebra apple mango"]);
        v.save(&path).unwrap();
        let re = Vocab::load(&path).unwrap();
        assert_eq!(re.size(), v.size());
        for w in ["zebra", "apple", "mango"] {
            assert_eq!(re.id(w), v.id(w));
        }
    }
}
