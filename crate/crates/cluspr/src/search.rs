//! Pruned keyword search with TF-IDF ranking.
//!
//! The query is keyword-extracted and pseudonymized exactly like documents at
//! index time, the abstracts pick the clusters worth searching, and matches
//! are ranked by TF-IDF scoped to the candidate document set.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::abstracts::{prune, Abstract, SimilarityProvider};
use crate::distribute::ClusterSet;
use crate::index::{extract_keywords, pseudonymize, DocId, Document, EncToken};
use crate::Result;

/// Ranked documents plus the clusters that were actually searched.
#[derive(Debug, Clone, Serialize)]
pub struct SearchResult {
    pub clusters_searched: Vec<u32>,
    pub results: Vec<RankedDoc>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RankedDoc {
    pub doc_id: DocId,
    pub score: f64,
}

/// The documents matched by a search, with the per-document term frequencies
/// of the query tokens that hit them.
#[derive(Debug, Clone, Default)]
pub struct CandidateSet {
    docs: BTreeMap<DocId, BTreeMap<EncToken, u32>>,
    doc_freq: BTreeMap<EncToken, usize>,
}

impl CandidateSet {
    pub fn add(&mut self, token: &EncToken, doc: &DocId, freq: u32) {
        self.docs
            .entry(doc.clone())
            .or_default()
            .insert(token.clone(), freq);
        *self.doc_freq.entry(token.clone()).or_insert(0) += 1;
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn doc_ids(&self) -> BTreeSet<DocId> {
        self.docs.keys().cloned().collect()
    }
}

/// Raw term frequency times the log ratio of candidate-set size to document
/// frequency, both scoped to the candidate set. Tokens absent from the set
/// (or from the document) score 0.
pub fn tfidf(token: &EncToken, doc: &DocId, candidates: &CandidateSet) -> f64 {
    let tf = candidates
        .docs
        .get(doc)
        .and_then(|m| m.get(token))
        .copied()
        .unwrap_or(0);
    if tf == 0 {
        return 0.0;
    }
    let df = candidates.doc_freq.get(token).copied().unwrap_or(0);
    if df == 0 {
        return 0.0;
    }
    f64::from(tf) * (candidates.len() as f64 / df as f64).ln()
}

/// End-to-end pruned search.
///
/// Extracts the query keywords, pseudonymizes them with the index key, prunes
/// to the `top_c` most similar clusters, matches the tokens against those
/// clusters' postings and ranks each candidate document by summed TF-IDF.
#[allow(clippy::too_many_arguments)]
pub fn search(
    query: &str,
    clusters: &ClusterSet,
    abstracts: &[Abstract],
    provider: &SimilarityProvider,
    key: &[u8],
    stopwords: &BTreeSet<String>,
    top_c: usize,
    limit: usize,
) -> Result<SearchResult> {
    let query_doc = Document {
        doc_id: "query".into(),
        text: query.to_string(),
    };
    let keywords = extract_keywords(&query_doc, usize::MAX, stopwords);
    if keywords.is_empty() {
        return Ok(SearchResult {
            clusters_searched: Vec::new(),
            results: Vec::new(),
        });
    }
    let query_terms: Vec<String> = keywords.iter().map(|k| k.term.clone()).collect();
    let tokens: Vec<EncToken> = query_terms
        .iter()
        .map(|t| pseudonymize(t, key))
        .collect::<Result<_>>()?;

    let searched = prune(&query_terms, abstracts, provider, top_c);

    let mut candidates = CandidateSet::default();
    for cluster in clusters
        .clusters
        .iter()
        .filter(|c| searched.contains(&c.id))
    {
        for token in &tokens {
            if let Some(postings) = cluster.members.get(token) {
                for (doc, freq) in postings {
                    candidates.add(token, doc, *freq);
                }
            }
        }
    }
    if candidates.is_empty() {
        log::warn!("query matched no tokens; wrong key or vocabulary mismatch");
        return Ok(SearchResult {
            clusters_searched: searched,
            results: Vec::new(),
        });
    }

    let mut ranked: Vec<RankedDoc> = candidates
        .docs
        .keys()
        .map(|doc| {
            let score: f64 = tokens.iter().map(|t| tfidf(t, doc, &candidates)).sum();
            RankedDoc {
                doc_id: doc.clone(),
                score,
            }
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("scores are finite")
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    ranked.truncate(limit);
    Ok(SearchResult {
        clusters_searched: searched,
        results: ranked,
    })
}
