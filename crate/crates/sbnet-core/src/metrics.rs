//! Retrieval metrics over ranked candidate lists.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// 1-based rank of `truth` in `ranking`, or an error naming the query when
/// the true track is absent.
fn rank_of(query: &str, ranking: &[String], truth: &str) -> Result<usize> {
    ranking
        .iter()
        .position(|t| t == truth)
        .map(|p| p + 1)
        .ok_or_else(|| {
            Error::data(format!(
                "query '{query}': ground-truth track '{truth}' missing from candidates"
            ))
        })
}

/// Mean reciprocal rank over all queries.
pub fn mrr(
    rankings: &HashMap<String, Vec<String>>,
    truth: &HashMap<String, String>,
) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::data("no queries to evaluate"));
    }
    let mut sum = 0.0;
    for (q, t) in truth {
        let ranking = rankings
            .get(q)
            .ok_or_else(|| Error::data(format!("query '{q}' has no ranking")))?;
        sum += 1.0 / rank_of(q, ranking, t)? as f64;
    }
    Ok(sum / truth.len() as f64)
}

/// Fraction of queries whose true track appears in the top `k`.
pub fn recall_at_k(
    rankings: &HashMap<String, Vec<String>>,
    truth: &HashMap<String, String>,
    k: usize,
) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::data("no queries to evaluate"));
    }
    let mut hits = 0usize;
    for (q, t) in truth {
        let ranking = rankings
            .get(q)
            .ok_or_else(|| Error::data(format!("query '{q}' has no ranking")))?;
        if rank_of(q, ranking, t)? <= k {
            hits += 1;
        }
    }
    Ok(hits as f64 / truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(ranks: &[usize]) -> (HashMap<String, Vec<String>>, HashMap<String, String>) {
        // Query qi's true track ti sits at the requested 1-based rank among
        // filler candidates.
        let mut rankings = HashMap::new();
        let mut truth = HashMap::new();
        for (i, &r) in ranks.iter().enumerate() {
            let q = format!("q{i}");
            let t = format!("t{i}");
            let mut list: Vec<String> = (0..10).map(|j| format!("filler{i}_{j}")).collect();
            list.insert(r - 1, t.clone());
            rankings.insert(q.clone(), list);
            truth.insert(q, t);
        }
        (rankings, truth)
    }

    #[test]
    fn hand_case_1_2_4() {
        let (r, t) = setup(&[1, 2, 4]);
        let v = mrr(&r, &t).unwrap();
        assert!((v - (1.0 + 0.5 + 0.25) / 3.0).abs() < 1e-9);
        assert!((recall_at_k(&r, &t, 1).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((recall_at_k(&r, &t, 2).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((recall_at_k(&r, &t, 5).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_retrieval() {
        let (r, t) = setup(&[1, 1, 1, 1]);
        assert_eq!(mrr(&r, &t).unwrap(), 1.0);
        assert_eq!(recall_at_k(&r, &t, 1).unwrap(), 1.0);
    }

    #[test]
    fn missing_truth_names_the_query() {
        let (mut r, t) = setup(&[1]);
        r.get_mut("q0").unwrap().retain(|x| x != "t0");
        let err = mrr(&r, &t).unwrap_err().to_string();
        assert!(err.contains("q0") && err.contains("t0"), "{err}");
    }
}
