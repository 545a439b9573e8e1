use std::collections::HashSet;
use std::fs;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};

use super::vocab::words_with_spans;

/// Which attribute family a lexicon entry or mention belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Color,
    Type,
}

#[derive(Debug, Clone)]
struct Entry {
    canonical: String,
    /// Every surface form (canonical included), each pre-split into words.
    phrases: Vec<Vec<String>>,
}

/// A matched attribute surface form inside a description.
#[derive(Debug, Clone)]
pub struct Mention {
    pub family: Family,
    pub id: usize,
    pub span: Range<usize>,
}

/// Ordered color and vehicle-type vocabularies with synonym sets. Canonical
/// entries have stable indices; extraction scans words left to right and
/// prefers the longest synonym at each position ("small car" must not match
/// as bare "car").
#[derive(Debug, Clone)]
pub struct AttributeLexicon {
    colors: Vec<Entry>,
    types: Vec<Entry>,
}

fn split_phrase(s: &str) -> Vec<String> {
    s.split_whitespace().map(|w| w.to_lowercase()).collect()
}

fn build_entries(raw: &[(&str, &[&str])]) -> Vec<Entry> {
    raw.iter()
        .map(|(canon, syns)| {
            let mut phrases = vec![split_phrase(canon)];
            phrases.extend(syns.iter().map(|s| split_phrase(s)));
            Entry {
                canonical: canon.to_string(),
                phrases,
            }
        })
        .collect()
}

impl AttributeLexicon {
    /// The default 12-color / 10-type lexicon.
    pub fn builtin() -> Self {
        let colors: &[(&str, &[&str])] = &[
            ("black", &[]),
            ("white", &[]),
            ("gray", &["grey"]),
            ("silver", &[]),
            ("red", &["maroon", "crimson"]),
            ("blue", &["navy"]),
            ("green", &[]),
            ("yellow", &[]),
            ("orange", &[]),
            ("brown", &["tan"]),
            ("purple", &["violet"]),
            ("gold", &["golden"]),
        ];
        let types: &[(&str, &[&str])] = &[
            ("sedan", &["saloon"]),
            ("suv", &["jeep", "crossover"]),
            ("van", &["minivan"]),
            ("pickup", &["pickup truck"]),
            ("truck", &["cargo truck", "lorry"]),
            ("bus", &["coach"]),
            ("hatchback", &[]),
            ("wagon", &["station wagon", "estate"]),
            ("coupe", &[]),
            ("car", &["small car"]),
        ];
        let lex = Self {
            colors: build_entries(colors),
            types: build_entries(types),
        };
        lex.validate().expect("builtin lexicon is well-formed");
        lex
    }

    /// Parses the `[colors]` / `[types]` sectioned format, one entry per line
    /// as `canonical: syn1, syn2, ...` (the colon and synonyms optional).
    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path)?;
        Self::parse(&body)
    }

    pub fn parse(body: &str) -> Result<Self> {
        let mut colors = Vec::new();
        let mut types = Vec::new();
        let mut section: Option<Family> = None;
        for (lineno, raw) in body.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            match line {
                "[colors]" => {
                    section = Some(Family::Color);
                    continue;
                }
                "[types]" => {
                    section = Some(Family::Type);
                    continue;
                }
                _ => {}
            }
            let fam = section.ok_or_else(|| {
                Error::Lexicon(format!(
                    "line {}: entry before any [colors]/[types] section",
                    lineno + 1
                ))
            })?;
            let (canon, syn_str) = match line.split_once(':') {
                Some((c, s)) => (c.trim(), s),
                None => (line, ""),
            };
            if canon.is_empty() {
                return Err(Error::Lexicon(format!("line {}: empty canonical", lineno + 1)));
            }
            let mut phrases = vec![split_phrase(canon)];
            for syn in syn_str.split(',') {
                let syn = syn.trim();
                if !syn.is_empty() {
                    phrases.push(split_phrase(syn));
                }
            }
            let entry = Entry {
                canonical: canon.to_lowercase(),
                phrases,
            };
            match fam {
                Family::Color => colors.push(entry),
                Family::Type => types.push(entry),
            }
        }
        let lex = Self { colors, types };
        lex.validate()?;
        Ok(lex)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (header, entries) in [("[colors]", &self.colors), ("[types]", &self.types)] {
            out.push_str(header);
            out.push('\n');
            for e in entries {
                out.push_str(&e.canonical);
                let syns: Vec<String> = e
                    .phrases
                    .iter()
                    .skip(1)
                    .map(|p| p.join(" "))
                    .collect();
                if !syns.is_empty() {
                    out.push_str(": ");
                    out.push_str(&syns.join(", "));
                }
                out.push('\n');
            }
        }
        fs::write(path, out)?;
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        for (fam, entries) in [("colors", &self.colors), ("types", &self.types)] {
            if entries.is_empty() {
                return Err(Error::Lexicon(format!("no {fam} entries")));
            }
            let mut seen: HashSet<String> = HashSet::new();
            for e in entries {
                for p in &e.phrases {
                    if p.is_empty() {
                        return Err(Error::Lexicon(format!(
                            "empty surface form under '{}'",
                            e.canonical
                        )));
                    }
                    let key = p.join(" ");
                    if !seen.insert(key.clone()) {
                        return Err(Error::Lexicon(format!(
                            "surface form '{key}' appears in two {fam} entries"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn num_colors(&self) -> usize {
        self.colors.len()
    }

    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    pub fn color_name(&self, id: usize) -> &str {
        &self.colors[id].canonical
    }

    pub fn type_name(&self, id: usize) -> &str {
        &self.types[id].canonical
    }

    pub fn color_id(&self, canonical: &str) -> Option<usize> {
        self.colors.iter().position(|e| e.canonical == canonical)
    }

    pub fn type_id(&self, canonical: &str) -> Option<usize> {
        self.types.iter().position(|e| e.canonical == canonical)
    }

    /// Longest surface form of `family` starting at word `i`, if any.
    fn match_at(&self, family: Family, words: &[(String, Range<usize>)], i: usize) -> Option<(usize, usize)> {
        let entries = match family {
            Family::Color => &self.colors,
            Family::Type => &self.types,
        };
        let mut best: Option<(usize, usize)> = None; // (entry id, phrase len)
        for (id, e) in entries.iter().enumerate() {
            for p in &e.phrases {
                if p.len() <= words.len().saturating_sub(i)
                    && p.iter().zip(&words[i..]).all(|(pw, (w, _))| pw == w)
                    && best.map(|(_, l)| p.len() > l).unwrap_or(true)
                {
                    best = Some((id, p.len()));
                }
            }
        }
        best
    }

    /// First color and first vehicle-type mention in left-to-right word
    /// order; either may be absent.
    pub fn extract(&self, description: &str) -> (Option<usize>, Option<usize>) {
        let mut color = None;
        let mut vtype = None;
        for m in self.mentions(description) {
            match m.family {
                Family::Color if color.is_none() => color = Some(m.id),
                Family::Type if vtype.is_none() => vtype = Some(m.id),
                _ => {}
            }
            if color.is_some() && vtype.is_some() {
                break;
            }
        }
        (color, vtype)
    }

    /// Every attribute mention with its byte span, in text order. Longest
    /// match wins at each position and the scan jumps past consumed words.
    pub fn mentions(&self, description: &str) -> Vec<Mention> {
        let words = words_with_spans(description);
        let mut out = Vec::new();
        let mut i = 0;
        while i < words.len() {
            let c = self.match_at(Family::Color, &words, i);
            let t = self.match_at(Family::Type, &words, i);
            let (family, id, len) = match (c, t) {
                (Some((cid, cl)), Some((tid, tl))) => {
                    if cl >= tl {
                        (Family::Color, cid, cl)
                    } else {
                        (Family::Type, tid, tl)
                    }
                }
                (Some((cid, cl)), None) => (Family::Color, cid, cl),
                (None, Some((tid, tl))) => (Family::Type, tid, tl),
                (None, None) => {
                    i += 1;
                    continue;
                }
            };
            let span = words[i].1.start..words[i + len - 1].1.end;
            out.push(Mention { family, id, span });
            i += len;
        }
        out
    }
}
