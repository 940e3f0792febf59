//! Cluster-center selection by uniqueness and centrality.
//!
//! Tokens are scanned in order of document association. A token whose
//! uniqueness against the already-covered documents exceeds 1 claims its
//! documents and becomes a center candidate weighted by centrality; the top
//! candidates by centrality win.

use std::collections::BTreeSet;

use crate::index::{CentralIndex, DocId, EncToken};
use crate::{Error, Result};

/// Ratio of the token's documents not yet covered to those already covered.
/// The denominator is floored at 1 so the first scanned token is well-defined
/// (and any token with two or more uncovered documents passes the `> 1` bar).
pub fn uniqueness(token: &EncToken, covered: &BTreeSet<DocId>, index: &CentralIndex) -> f64 {
    let docs = index.doc_set(token);
    let uncovered = docs.difference(covered).count();
    let overlap = docs.intersection(covered).count();
    uncovered as f64 / overlap.max(1) as f64
}

/// Centrality of a token: uniqueness scaled by how much the token both keeps
/// to itself (`q`) and shares with others (`1 - q`).
pub fn centrality(omega: f64, q: f64) -> f64 {
    omega * q * (1.0 - q)
}

/// Selects up to `k` center tokens.
///
/// `tokens` must be sorted descending by document association with ties by
/// token ascending, and `q_diag[i]` must hold the separation factor of
/// `tokens[i]`. If no token attains uniqueness above 1 the first token in
/// scan order is returned as the sole center.
pub fn choose_centers(
    k: usize,
    tokens: &[EncToken],
    q_diag: &[f64],
    index: &CentralIndex,
) -> Result<Vec<EncToken>> {
    if tokens.is_empty() {
        return Err(Error::EmptyIndex);
    }
    debug_assert_eq!(tokens.len(), q_diag.len());
    let mut covered: BTreeSet<DocId> = BTreeSet::new();
    let mut candidates: Vec<(f64, &EncToken)> = Vec::new();
    for (token, &q) in tokens.iter().zip(q_diag) {
        let omega = uniqueness(token, &covered, index);
        if omega > 1.0 {
            covered.extend(index.doc_set(token));
            candidates.push((centrality(omega, q), token));
        }
    }
    if candidates.is_empty() {
        return Ok(vec![tokens[0].clone()]);
    }
    candidates.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("centrality is finite")
            .then_with(|| a.1.cmp(b.1))
    });
    Ok(candidates
        .into_iter()
        .take(k)
        .map(|(_, t)| t.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{build_index_pre_extracted, Keyword};
    use crate::matrix::{all_tokens_ordered, MatrixBundle};
    use approx::assert_abs_diff_eq;

    fn kw(term: &str, freq: u32) -> Keyword {
        Keyword {
            term: term.into(),
            freq,
        }
    }

    fn index_of(docs: &[(&str, &[(&str, u32)])]) -> (CentralIndex, crate::index::Keymap) {
        let docs: Vec<(String, Vec<Keyword>)> = docs
            .iter()
            .map(|(d, kws)| {
                (
                    d.to_string(),
                    kws.iter().map(|(t, f)| kw(t, *f)).collect(),
                )
            })
            .collect();
        build_index_pre_extracted(&docs, b"centers-key").unwrap()
    }

    #[test]
    fn uniqueness_with_nothing_covered() {
        let (index, _) = index_of(&[
            ("d1", &[("aa", 1)]),
            ("d2", &[("aa", 1)]),
            ("d3", &[("aa", 1)]),
        ]);
        let token = index.tokens().next().unwrap().clone();
        assert_eq!(uniqueness(&token, &BTreeSet::new(), &index), 3.0);
    }

    #[test]
    fn uniqueness_fully_covered_is_zero() {
        let (index, _) = index_of(&[("d1", &[("aa", 1)]), ("d2", &[("aa", 1)])]);
        let token = index.tokens().next().unwrap().clone();
        let covered: BTreeSet<DocId> = ["d1".to_string(), "d2".to_string()].into();
        assert_eq!(uniqueness(&token, &covered, &index), 0.0);
    }

    #[test]
    fn uniqueness_partial_overlap() {
        let (index, _) = index_of(&[
            ("d1", &[("aa", 1)]),
            ("d2", &[("aa", 1)]),
            ("d3", &[("aa", 1)]),
        ]);
        let token = index.tokens().next().unwrap().clone();
        let covered: BTreeSet<DocId> = ["d3".to_string(), "d4".to_string()].into();
        assert_eq!(uniqueness(&token, &covered, &index), 2.0);
    }

    #[test]
    fn centrality_values() {
        assert_abs_diff_eq!(centrality(2.0, 0.5), 0.5);
        assert_eq!(centrality(7.0, 0.0), 0.0);
        assert_eq!(centrality(7.0, 1.0), 0.0);
        assert_abs_diff_eq!(centrality(3.0, 0.39), 0.7137, epsilon = 1e-12);
    }

    #[test]
    fn k_one_yields_one_center() {
        let (index, _) = index_of(&[
            ("d1", &[("aa", 1), ("bb", 1)]),
            ("d2", &[("aa", 1)]),
            ("d3", &[("bb", 1)]),
        ]);
        let bundle = MatrixBundle::from_index(&index, false).unwrap();
        let diag: Vec<f64> = (0..bundle.tokens.len())
            .map(|i| bundle.separation_factor(i))
            .collect();
        let centers = choose_centers(1, &bundle.tokens, &diag, &index).unwrap();
        assert_eq!(centers.len(), 1);
    }

    #[test]
    fn disjoint_tokens_both_selected() {
        let (index, _) = index_of(&[
            ("d1", &[("aa", 1)]),
            ("d2", &[("aa", 1)]),
            ("d3", &[("bb", 1)]),
            ("d4", &[("bb", 1)]),
        ]);
        let bundle = MatrixBundle::from_index(&index, false).unwrap();
        let diag: Vec<f64> = (0..bundle.tokens.len())
            .map(|i| bundle.separation_factor(i))
            .collect();
        let centers = choose_centers(2, &bundle.tokens, &diag, &index).unwrap();
        assert_eq!(centers.len(), 2);
    }

    #[test]
    fn fallback_single_center_when_no_token_passes() {
        // one token in one document: uniqueness is exactly 1, never > 1
        let (index, _) = index_of(&[("d1", &[("aa", 1)])]);
        let tokens = all_tokens_ordered(&index);
        let centers = choose_centers(3, &tokens, &[0.5], &index).unwrap();
        assert_eq!(centers, tokens);
    }

    #[test]
    fn fixture_scan_matches_hand_simulation() {
        let (index, _) = crate::matrix::tests::fixture_index();
        let bundle = MatrixBundle::from_index(&index, false).unwrap();
        let diag: Vec<f64> = (0..bundle.tokens.len())
            .map(|i| bundle.separation_factor(i))
            .collect();
        let centers = choose_centers(2, &bundle.tokens, &diag, &index).unwrap();

        // independent replay of the scan rule
        let mut covered: BTreeSet<DocId> = BTreeSet::new();
        let mut expect: Vec<(f64, EncToken)> = Vec::new();
        for (i, token) in bundle.tokens.iter().enumerate() {
            let docs = index.doc_set(token);
            let omega = docs.difference(&covered).count() as f64
                / docs.intersection(&covered).count().max(1) as f64;
            if omega > 1.0 {
                covered.extend(docs);
                let q = diag[i];
                expect.push((omega * q * (1.0 - q), token.clone()));
            }
        }
        expect.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
        let expect: Vec<EncToken> = expect.into_iter().take(2).map(|(_, t)| t).collect();
        assert_eq!(centers, expect);
        // the fixture's overlapping doc sets leave exactly one passing token
        assert_eq!(centers.len(), 1);
    }

    #[test]
    fn rerun_is_deterministic() {
        let (index, _) = crate::matrix::tests::fixture_index();
        let bundle = MatrixBundle::from_index(&index, true).unwrap();
        let diag: Vec<f64> = (0..bundle.tokens.len())
            .map(|i| bundle.separation_factor(i))
            .collect();
        let a = choose_centers(2, &bundle.tokens, &diag, &index).unwrap();
        let b = choose_centers(2, &bundle.tokens, &diag, &index).unwrap();
        assert_eq!(a, b);
    }
}
