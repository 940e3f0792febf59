//! Distribution of tokens across clusters.
//!
//! Two relatedness measures are supported. The first weighs a token's
//! per-document contribution by the log of its pairwise co-occurrence with
//! the center. The second scores each document by co-occurrence value minus
//! disparity and weighs that by the token's frequency ratio, so tokens that
//! share documents with a center are pulled in and tokens that live elsewhere
//! are pushed away.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::index::{CentralIndex, DocId, EncToken};
use crate::{Error, Result};

/// Which relatedness measure drives the assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    ClustCrypt,
    ClusPr,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::ClustCrypt => f.write_str("clustcrypt"),
            Strategy::ClusPr => f.write_str("cluspr"),
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "clustcrypt" => Ok(Strategy::ClustCrypt),
            "cluspr" => Ok(Strategy::ClusPr),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

/// One cluster: a center token plus all member tokens with their postings.
/// The center is always a member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: u32,
    pub center: EncToken,
    pub members: std::collections::BTreeMap<EncToken, Vec<(DocId, u32)>>,
}

impl Cluster {
    pub fn new(id: u32, center: EncToken, index: &CentralIndex) -> Self {
        let mut cluster = Cluster {
            id,
            center: center.clone(),
            members: Default::default(),
        };
        cluster.insert_member(center, index);
        cluster
    }

    /// Adds a token with postings mirrored from the index.
    pub fn insert_member(&mut self, token: EncToken, index: &CentralIndex) {
        let postings = index
            .postings(&token)
            .map(|p| p.iter().map(|(d, &f)| (d.clone(), f)).collect())
            .unwrap_or_default();
        self.members.insert(token, postings);
    }

    /// Total corpus frequency of a member token.
    pub fn member_total_freq(&self, token: &EncToken) -> u64 {
        self.members
            .get(token)
            .map(|p| p.iter().map(|(_, f)| u64::from(*f)).sum())
            .unwrap_or(0)
    }
}

/// The full partition of index tokens into clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub strategy: Strategy,
    pub clusters: Vec<Cluster>,
}

impl ClusterSet {
    pub fn token_count(&self) -> usize {
        self.clusters.iter().map(|c| c.members.len()).sum()
    }

    pub fn all_tokens(&self) -> BTreeSet<EncToken> {
        self.clusters
            .iter()
            .flat_map(|c| c.members.keys().cloned())
            .collect()
    }

    pub fn cluster_of(&self, token: &EncToken) -> Option<u32> {
        self.clusters
            .iter()
            .find(|c| c.members.contains_key(token))
            .map(|c| c.id)
    }

    /// True when the clusters partition exactly the index token set.
    pub fn partitions(&self, index: &CentralIndex) -> bool {
        let union = self.all_tokens();
        union.len() == self.token_count()
            && union.len() == index.token_count()
            && union.iter().all(|t| index.contains_token(t))
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn write_file(&self, path: &std::path::Path) -> Result<()> {
        crate::index::write_atomic(path, self.to_json_string()?.as_bytes())
    }

    pub fn read_file(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

/// Share of token `t`'s corpus frequency that falls in `doc`.
pub fn contribution(doc: &DocId, token: &EncToken, index: &CentralIndex) -> Result<f64> {
    let total = index.total_freq(token);
    if total == 0 {
        return Err(Error::UnknownToken(token.value().to_string()));
    }
    Ok(f64::from(index.freq(token, doc)) / total as f64)
}

/// Joint frequency share of `t` and `center` in `doc` relative to their
/// combined corpus frequency.
pub fn pair_cooccurrence_clustcrypt(
    t: &EncToken,
    doc: &DocId,
    center: &EncToken,
    index: &CentralIndex,
) -> Result<f64> {
    let total = index.total_freq(t) + index.total_freq(center);
    if total == 0 {
        return Err(Error::UnknownToken(format!(
            "{} and {} have no postings",
            t.value(),
            center.value()
        )));
    }
    Ok(f64::from(index.freq(t, doc) + index.freq(center, doc)) / total as f64)
}

/// Contribution-weighted log co-occurrence of `t` with `center`, summed over
/// the documents containing `t`. Always <= 0; equals 0 only when the pair's
/// whole mass sits in `t`'s documents.
pub fn relatedness_clustcrypt(center: &EncToken, t: &EncToken, index: &CentralIndex) -> f64 {
    let Some(postings) = index.postings(t) else {
        return 0.0;
    };
    let t_total = index.total_freq(t) as f64;
    let pair_total = (index.total_freq(t) + index.total_freq(center)) as f64;
    let mut sum = 0.0;
    for (doc, &freq) in postings {
        let kappa = f64::from(freq) / t_total;
        let rho = f64::from(freq + index.freq(center, doc)) / pair_total;
        sum += kappa * rho.ln();
    }
    sum
}

/// Co-occurrence value minus disparity for one document.
///
/// The value term multiplies both tokens' frequency shares restricted to the
/// documents they share; the disparity term adds their shares restricted to
/// the documents only one of them has. A zero denominator means the token has
/// no mass on that side and its fraction counts as 0.
pub fn relative_cooccurrence(
    ti: &EncToken,
    tj: &EncToken,
    doc: &DocId,
    index: &CentralIndex,
) -> f64 {
    let fi = index.doc_set(ti);
    let fj = index.doc_set(tj);
    let in_co = fi.contains(doc) && fj.contains(doc);
    let in_dis = fi.contains(doc) ^ fj.contains(doc);
    if in_co {
        let co: Vec<&DocId> = fi.intersection(&fj).collect();
        let sum_i: f64 = co.iter().map(|d| f64::from(index.freq(ti, d))).sum();
        let sum_j: f64 = co.iter().map(|d| f64::from(index.freq(tj, d))).sum();
        let a = ratio(f64::from(index.freq(ti, doc)), sum_i);
        let b = ratio(f64::from(index.freq(tj, doc)), sum_j);
        a * b
    } else if in_dis {
        let dis: Vec<&DocId> = fi.symmetric_difference(&fj).collect();
        let sum_i: f64 = dis.iter().map(|d| f64::from(index.freq(ti, d))).sum();
        let sum_j: f64 = dis.iter().map(|d| f64::from(index.freq(tj, d))).sum();
        let a = ratio(f64::from(index.freq(ti, doc)), sum_i);
        let b = ratio(f64::from(index.freq(tj, doc)), sum_j);
        -(a + b)
    } else {
        0.0
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Relative co-occurrence of `t` with `center` over their combined document
/// set, weighted by `t`'s frequency ratio per document. Bounded in [-2, 1].
pub fn relatedness_cluspr(center: &EncToken, t: &EncToken, index: &CentralIndex) -> f64 {
    let ft = index.doc_set(t);
    let fc = index.doc_set(center);
    let t_total = index.total_freq(t) as f64;
    if t_total == 0.0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for doc in ft.union(&fc) {
        let weight = f64::from(index.freq(t, doc)) / t_total;
        if weight > 0.0 {
            sum += relative_cooccurrence(t, center, doc, index) * weight;
        }
    }
    sum
}

fn relatedness(strategy: Strategy, center: &EncToken, t: &EncToken, index: &CentralIndex) -> f64 {
    match strategy {
        Strategy::ClustCrypt => relatedness_clustcrypt(center, t, index),
        Strategy::ClusPr => relatedness_cluspr(center, t, index),
    }
}

/// Assigns every non-center token to the center offering maximum relatedness
/// (ties to the smallest cluster id). Centers become members of their own
/// clusters. The result partitions the index token set.
pub fn assign_tokens(
    centers: &[EncToken],
    index: &CentralIndex,
    strategy: Strategy,
) -> ClusterSet {
    assert!(!centers.is_empty(), "assign_tokens needs at least one center");
    let mut clusters: Vec<Cluster> = centers
        .iter()
        .enumerate()
        .map(|(i, c)| Cluster::new(i as u32, c.clone(), index))
        .collect();
    let center_set: BTreeSet<&EncToken> = centers.iter().collect();
    for token in index.tokens() {
        if center_set.contains(token) {
            continue;
        }
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for (ci, center) in centers.iter().enumerate() {
            let score = relatedness(strategy, center, token, index);
            if score > best_score {
                best_score = score;
                best = ci;
            }
        }
        clusters[best].insert_member(token.clone(), index);
    }
    let set = ClusterSet { strategy, clusters };
    debug_assert!(set.partitions(index), "clusters must partition the tokens");
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{build_index_pre_extracted, Keymap, Keyword};
    use approx::assert_abs_diff_eq;

    fn kw(term: &str, freq: u32) -> Keyword {
        Keyword {
            term: term.into(),
            freq,
        }
    }

    fn index_of(docs: &[(&str, &[(&str, u32)])]) -> (CentralIndex, Keymap) {
        let docs: Vec<(String, Vec<Keyword>)> = docs
            .iter()
            .map(|(d, kws)| {
                (
                    d.to_string(),
                    kws.iter().map(|(t, f)| kw(t, *f)).collect(),
                )
            })
            .collect();
        build_index_pre_extracted(&docs, b"dist-key").unwrap()
    }

    fn token_of(keymap: &Keymap, term: &str) -> EncToken {
        keymap
            .iter()
            .find(|(_, t)| t.as_str() == term)
            .map(|(tok, _)| tok.clone())
            .unwrap()
    }

    #[test]
    fn contribution_single_doc_is_one() {
        let (index, keymap) = index_of(&[("d1", &[("aa", 5)])]);
        let t = token_of(&keymap, "aa");
        assert_eq!(contribution(&"d1".to_string(), &t, &index).unwrap(), 1.0);
    }

    #[test]
    fn contribution_splits_by_frequency() {
        let (index, keymap) = index_of(&[("d1", &[("aa", 2)]), ("d2", &[("aa", 2)])]);
        let t = token_of(&keymap, "aa");
        assert_eq!(contribution(&"d1".to_string(), &t, &index).unwrap(), 0.5);

        let (index, keymap) = index_of(&[("d1", &[("aa", 3)]), ("d2", &[("aa", 1)])]);
        let t = token_of(&keymap, "aa");
        assert_eq!(contribution(&"d1".to_string(), &t, &index).unwrap(), 0.75);
    }

    #[test]
    fn contribution_unknown_token_errors() {
        let (index, _) = index_of(&[("d1", &[("aa", 1)])]);
        let ghost = EncToken::from_value("00");
        assert!(contribution(&"d1".to_string(), &ghost, &index).is_err());
    }

    #[test]
    fn pair_cooccurrence_cases() {
        let (index, keymap) = index_of(&[("d1", &[("aa", 3), ("bb", 2)])]);
        let t = token_of(&keymap, "aa");
        let c = token_of(&keymap, "bb");
        assert_eq!(
            pair_cooccurrence_clustcrypt(&t, &"d1".to_string(), &c, &index).unwrap(),
            1.0
        );

        let (index, keymap) = index_of(&[("d1", &[("aa", 2)]), ("d2", &[("bb", 2)])]);
        let t = token_of(&keymap, "aa");
        let c = token_of(&keymap, "bb");
        assert_eq!(
            pair_cooccurrence_clustcrypt(&t, &"d1".to_string(), &c, &index).unwrap(),
            0.5
        );

        let (index, keymap) = index_of(&[("d1", &[("aa", 1), ("bb", 2)]), ("d2", &[("aa", 3)])]);
        let t = token_of(&keymap, "aa");
        let c = token_of(&keymap, "bb");
        assert_eq!(
            pair_cooccurrence_clustcrypt(&t, &"d1".to_string(), &c, &index).unwrap(),
            0.5
        );
    }

    #[test]
    fn clustcrypt_coresident_pair_scores_zero() {
        let (index, keymap) = index_of(&[("d1", &[("aa", 4), ("bb", 9)])]);
        let t = token_of(&keymap, "aa");
        let c = token_of(&keymap, "bb");
        assert_eq!(relatedness_clustcrypt(&c, &t, &index), 0.0);
    }

    #[test]
    fn clustcrypt_log_half_example() {
        let (index, keymap) = index_of(&[("d1", &[("aa", 1)]), ("d2", &[("bb", 1)])]);
        let t = token_of(&keymap, "aa");
        let c = token_of(&keymap, "bb");
        assert_abs_diff_eq!(
            relatedness_clustcrypt(&c, &t, &index),
            0.5f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn relative_cooccurrence_identical_profile() {
        let (index, keymap) = index_of(&[("d1", &[("aa", 3), ("bb", 3)])]);
        let ti = token_of(&keymap, "aa");
        let tj = token_of(&keymap, "bb");
        assert_eq!(relative_cooccurrence(&ti, &tj, &"d1".to_string(), &index), 1.0);
    }

    #[test]
    fn relative_cooccurrence_disjoint_is_negative() {
        let (index, keymap) = index_of(&[("d1", &[("aa", 2)]), ("d2", &[("bb", 2)])]);
        let ti = token_of(&keymap, "aa");
        let tj = token_of(&keymap, "bb");
        assert!(relative_cooccurrence(&ti, &tj, &"d1".to_string(), &index) < 0.0);
    }

    #[test]
    fn relative_cooccurrence_worked_example() {
        // aa: {d1:2, d2:2}, bb: {d1:2, d3:2}
        let (index, keymap) = index_of(&[
            ("d1", &[("aa", 2), ("bb", 2)]),
            ("d2", &[("aa", 2)]),
            ("d3", &[("bb", 2)]),
        ]);
        let ti = token_of(&keymap, "aa");
        let tj = token_of(&keymap, "bb");
        assert_eq!(relative_cooccurrence(&ti, &tj, &"d1".to_string(), &index), 1.0);
        assert_eq!(
            relative_cooccurrence(&ti, &tj, &"d2".to_string(), &index),
            -1.0
        );
    }

    #[test]
    fn cluspr_identical_single_doc_is_one() {
        let (index, keymap) = index_of(&[("d1", &[("aa", 4), ("bb", 7)])]);
        let t = token_of(&keymap, "aa");
        let c = token_of(&keymap, "bb");
        assert_eq!(relatedness_cluspr(&c, &t, &index), 1.0);
    }

    #[test]
    fn cluspr_disjoint_equal_freqs_is_minus_one() {
        let (index, keymap) = index_of(&[("d1", &[("aa", 3)]), ("d2", &[("bb", 3)])]);
        let t = token_of(&keymap, "aa");
        let c = token_of(&keymap, "bb");
        assert_eq!(relatedness_cluspr(&c, &t, &index), -1.0);
    }

    #[test]
    fn assign_single_center_takes_everything() {
        let (index, keymap) = index_of(&[
            ("d1", &[("aa", 1), ("bb", 2)]),
            ("d2", &[("cc", 1)]),
        ]);
        let center = token_of(&keymap, "aa");
        let set = assign_tokens(&[center], &index, Strategy::ClusPr);
        assert_eq!(set.clusters.len(), 1);
        assert_eq!(set.clusters[0].members.len(), 3);
        assert!(set.partitions(&index));
    }

    #[test]
    fn assign_prefers_identical_profile_center() {
        // token mirrors center one exactly and never co-occurs with center two
        let (index, keymap) = index_of(&[
            ("d1", &[("c1", 2), ("tok", 2)]),
            ("d2", &[("c2", 5)]),
        ]);
        let c1 = token_of(&keymap, "c1");
        let c2 = token_of(&keymap, "c2");
        let tok = token_of(&keymap, "tok");
        for strategy in [Strategy::ClustCrypt, Strategy::ClusPr] {
            let set = assign_tokens(&[c1.clone(), c2.clone()], &index, strategy);
            assert_eq!(set.cluster_of(&tok), set.cluster_of(&c1));
        }
    }

    #[test]
    fn cluster_json_shape() {
        let (index, keymap) = index_of(&[("d1", &[("aa", 1), ("bb", 2)])]);
        let center = token_of(&keymap, "aa");
        let set = assign_tokens(&[center.clone()], &index, Strategy::ClustCrypt);
        let json = set.to_json_string().unwrap();
        assert!(json.starts_with(r#"{"strategy":"clustcrypt","clusters":[{"id":0,"center":"#));
        let back = ClusterSet::from_json_str(&json).unwrap();
        assert_eq!(back, set);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_pair_index() -> impl Strategy<Value = (CentralIndex, Vec<EncToken>)> {
            crate::matrix::tests::properties::arb_index(6, 5).prop_map(|index| {
                let tokens: Vec<EncToken> = index.tokens().cloned().collect();
                (index, tokens)
            })
        }

        proptest! {
            #[test]
            fn clustcrypt_relatedness_nonpositive((index, tokens) in arb_pair_index()) {
                for c in &tokens {
                    for t in &tokens {
                        if t != c {
                            prop_assert!(relatedness_clustcrypt(c, t, &index) <= 1e-12);
                        }
                    }
                }
            }

            #[test]
            fn relative_cooccurrence_is_symmetric((index, tokens) in arb_pair_index()) {
                let docs: Vec<DocId> = index.doc_ids().iter().cloned().collect();
                for a in &tokens {
                    for b in &tokens {
                        if a == b { continue; }
                        for d in &docs {
                            let lhs = relative_cooccurrence(a, b, d, &index);
                            let rhs = relative_cooccurrence(b, a, d, &index);
                            prop_assert!((lhs - rhs).abs() < 1e-12);
                        }
                    }
                }
            }

            #[test]
            fn cluspr_values_are_scale_invariant(
                (index, tokens) in arb_pair_index(), scale in 2u32..5
            ) {
                let mut scaled = CentralIndex::new();
                for d in index.doc_ids() {
                    scaled.add_doc_id(d.clone());
                }
                for t in index.tokens() {
                    for (d, &f) in index.postings(t).unwrap() {
                        scaled.add_posting(t.clone(), d.clone(), f * scale);
                    }
                }
                for c in &tokens {
                    for t in &tokens {
                        if t == c { continue; }
                        let base = relatedness_cluspr(c, t, &index);
                        let after = relatedness_cluspr(c, t, &scaled);
                        prop_assert!((base - after).abs() < 1e-12);
                        prop_assert!((-2.0 - 1e-12..=1.0 + 1e-12).contains(&base));
                    }
                }
            }

            #[test]
            fn assignment_partitions_for_both_strategies((index, tokens) in arb_pair_index()) {
                let centers: Vec<EncToken> = tokens.iter().take(2).cloned().collect();
                for strategy in [Strategy::ClustCrypt, Strategy::ClusPr] {
                    let set = assign_tokens(&centers, &index, strategy);
                    prop_assert!(set.partitions(&index));
                }
            }
        }
    }
}
