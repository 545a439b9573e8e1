use crate::error::{Error, Result};

use super::lexicon::{AttributeLexicon, Family};

/// Voted attributes for one track plus the per-description raw extractions.
/// `None` means no description mentioned that family.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackAttributes {
    pub color_id: Option<usize>,
    pub type_id: Option<usize>,
    pub provenance: Vec<(Option<usize>, Option<usize>)>,
}

/// Majority vote over the per-description extractions of one family. Absent
/// votes do not count; ties break toward the id voted earliest (by
/// description index).
fn vote(extractions: &[Option<usize>]) -> Option<usize> {
    let mut tally: Vec<(usize, usize, usize)> = Vec::new(); // (id, count, first index)
    for (idx, e) in extractions.iter().enumerate() {
        if let Some(id) = e {
            match tally.iter_mut().find(|(tid, _, _)| tid == id) {
                Some((_, count, _)) => *count += 1,
                None => tally.push((*id, 1, idx)),
            }
        }
    }
    tally
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
        .map(|(id, _, _)| id)
}

/// Replaces every `family` mention in `text` with the winner's canonical
/// surface form.
fn rewrite(text: &str, lexicon: &AttributeLexicon, family: Family, winner: usize) -> String {
    let canonical = match family {
        Family::Color => lexicon.color_name(winner),
        Family::Type => lexicon.type_name(winner),
    };
    let mut out = text.to_owned();
    let mentions: Vec<_> = lexicon
        .mentions(text)
        .into_iter()
        .filter(|m| m.family == family)
        .collect();
    for m in mentions.into_iter().rev() {
        out.replace_range(m.span, canonical);
    }
    out
}

/// Canonicalizes a track's three descriptions: extracts color/type from each,
/// votes per family, and rewrites every mention to the winner's canonical
/// form. Deterministic and idempotent; a family nobody mentions stays
/// unknown and untouched.
pub fn denoise_queries(
    descriptions: &[String],
    lexicon: &AttributeLexicon,
) -> Result<(TrackAttributes, Vec<String>)> {
    if descriptions.len() != 3 {
        return Err(Error::data(format!(
            "expected exactly three descriptions, got {}",
            descriptions.len()
        )));
    }
    let provenance: Vec<(Option<usize>, Option<usize>)> =
        descriptions.iter().map(|d| lexicon.extract(d)).collect();
    let color_id = vote(&provenance.iter().map(|p| p.0).collect::<Vec<_>>());
    let type_id = vote(&provenance.iter().map(|p| p.1).collect::<Vec<_>>());

    let mut rewritten: Vec<String> = descriptions.to_vec();
    if let Some(c) = color_id {
        for d in &mut rewritten {
            *d = rewrite(d, lexicon, Family::Color, c);
        }
    }
    if let Some(t) = type_id {
        for d in &mut rewritten {
            *d = rewrite(d, lexicon, Family::Type, t);
        }
    }
    Ok((
        TrackAttributes {
            color_id,
            type_id,
            provenance,
        },
        rewritten,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex() -> AttributeLexicon {
        AttributeLexicon::builtin()
    }

    fn descs(a: &str, b: &str, c: &str) -> Vec<String> {
        vec![a.to_owned(), b.to_owned(), c.to_owned()]
    }

    #[test]
    fn strict_majority_rewrites_the_outlier() {
        let l = lex();
        let d = descs(
            "A white sedan turns left.",
            "The white sedan is turning left.",
            "A gray sedan turns to the left.",
        );
        let (attrs, out) = denoise_queries(&d, &l).unwrap();
        assert_eq!(attrs.color_id, l.color_id("white"));
        assert_eq!(attrs.type_id, l.type_id("sedan"));
        assert_eq!(out[2], "A white sedan turns to the left.");
        assert_eq!(out[0], d[0]);
    }

    #[test]
    fn tie_breaks_toward_earliest_description() {
        let l = lex();
        let d = descs(
            "A red bus waits.",
            "A gray bus waits.",
            "The bus moved slowly.",
        );
        let (attrs, out) = denoise_queries(&d, &l).unwrap();
        assert_eq!(attrs.color_id, l.color_id("red"));
        assert_eq!(out[1], "A red bus waits.");
    }

    #[test]
    fn unknown_family_is_left_untouched() {
        let l = lex();
        let d = descs(
            "It keeps straight.",
            "It moves down the road.",
            "It slows near the light.",
        );
        let (attrs, out) = denoise_queries(&d, &l).unwrap();
        assert_eq!(attrs.color_id, None);
        assert_eq!(attrs.type_id, None);
        assert_eq!(out, d);
    }

    #[test]
    fn denoise_is_idempotent() {
        let l = lex();
        let d = descs(
            "Golden pickup truck turns right.",
            "A gold pickup stops.",
            "A grey pickup truck keeps straight.",
        );
        let (a1, once) = denoise_queries(&d, &l).unwrap();
        let (a2, twice) = denoise_queries(&once, &l).unwrap();
        assert_eq!(once, twice);
        assert_eq!(a1.color_id, a2.color_id);
        assert_eq!(a1.type_id, a2.type_id);
        // Synonyms collapse to canonical forms.
        assert!(once[0].starts_with("gold pickup"));
        assert!(once[2].contains("gold pickup"));
    }

    #[test]
    fn rewrite_replaces_synonym_spans_including_multiword() {
        let l = lex();
        let d = descs(
            "A maroon small car accelerates.",
            "The red car accelerates.",
            "A red car speeds up.",
        );
        let (attrs, out) = denoise_queries(&d, &l).unwrap();
        assert_eq!(attrs.color_id, l.color_id("red"));
        assert_eq!(attrs.type_id, l.type_id("car"));
        assert_eq!(out[0], "A red car accelerates.");
    }

    #[test]
    fn exactly_three_descriptions_required() {
        let l = lex();
        assert!(denoise_queries(&["one".into(), "two".into()], &l).is_err());
    }
}
