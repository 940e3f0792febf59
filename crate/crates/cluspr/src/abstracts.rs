//! Plaintext cluster abstracts, word-embedding similarity and query pruning.
//!
//! An abstract is the top-n most frequent plaintext terms of a cluster, kept
//! on the trusted side. Search queries are scored against the abstracts with
//! embedding cosine similarity and only the best-matching clusters are
//! searched.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distribute::ClusterSet;
use crate::index::{write_atomic, Keymap};
use crate::{Error, Result};

/// Plaintext topic sample of one cluster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Abstract {
    pub cluster_id: u32,
    pub terms: Vec<String>,
}

/// On-disk shape: `{"n":..., "abstracts":[...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbstractsFile {
    pub n: usize,
    pub abstracts: Vec<Abstract>,
}

impl AbstractsFile {
    pub fn write_file(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Fixed-dimension word vectors with cosine similarity.
#[derive(Debug, Clone, Default)]
pub struct SimilarityProvider {
    vectors: BTreeMap<String, Vec<f64>>,
    dim: usize,
}

impl SimilarityProvider {
    /// Builds a provider from in-memory vectors; all must share a dimension.
    pub fn from_vectors(vectors: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let mut dim = 0;
        for (term, v) in &vectors {
            if dim == 0 {
                dim = v.len();
            } else if v.len() != dim {
                return Err(Error::BadEmbeddings {
                    path: "<memory>".into(),
                    reason: format!("vector for `{term}` has dimension {} != {dim}", v.len()),
                });
            }
        }
        Ok(SimilarityProvider { vectors, dim })
    }

    /// A provider with an empty vocabulary; every similarity is 0.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn contains(&self, term: &str) -> bool {
        self.vectors.contains_key(term)
    }

    /// Cosine similarity of two terms; 0 when either is out of vocabulary or
    /// has a zero vector.
    pub fn sim(&self, a: &str, b: &str) -> f64 {
        let (Some(va), Some(vb)) = (self.vectors.get(a), self.vectors.get(b)) else {
            return 0.0;
        };
        let dot: f64 = va.iter().zip(vb).map(|(x, y)| x * y).sum();
        let na: f64 = va.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }
}

/// Parses a word-vector text file: an optional `count dim` header line, then
/// one `term v1 ... vD` line per term. The first vector fixes the dimension.
pub fn load_embeddings(path: &Path) -> Result<SimilarityProvider> {
    let body = std::fs::read_to_string(path)?;
    let display = path.display().to_string();
    let bad = |reason: String| Error::BadEmbeddings {
        path: display.clone(),
        reason,
    };
    let mut vectors: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut dim = 0usize;
    for (lineno, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        // a two-field all-numeric first line is the "count dim" header
        if lineno == 0
            && fields.len() == 2
            && fields.iter().all(|f| f.parse::<usize>().is_ok())
        {
            continue;
        }
        if fields.len() < 2 {
            return Err(bad(format!("line {}: expected `term v1 ...`", lineno + 1)));
        }
        let term = fields[0].to_string();
        let vector: Vec<f64> = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| bad(format!("line {}: malformed float `{f}`", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        if dim == 0 {
            dim = vector.len();
        } else if vector.len() != dim {
            return Err(bad(format!(
                "line {}: dimension {} != {dim}",
                lineno + 1,
                vector.len()
            )));
        }
        vectors.insert(term, vector);
    }
    if vectors.is_empty() {
        return Err(bad("no vectors found".into()));
    }
    Ok(SimilarityProvider { vectors, dim })
}

/// Builds one abstract per cluster: the decrypted member terms ranked by
/// total corpus frequency descending (ties by term ascending), truncated to
/// `n`.
pub fn build_abstracts(clusters: &ClusterSet, keymap: &Keymap, n: usize) -> Result<Vec<Abstract>> {
    let mut abstracts = Vec::with_capacity(clusters.clusters.len());
    for cluster in &clusters.clusters {
        let mut ranked: Vec<(u64, &String)> = Vec::with_capacity(cluster.members.len());
        for token in cluster.members.keys() {
            let term = keymap
                .get(token)
                .ok_or_else(|| Error::MissingKeymapEntry(token.value().to_string()))?;
            ranked.push((cluster.member_total_freq(token), term));
        }
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        abstracts.push(Abstract {
            cluster_id: cluster.id,
            terms: ranked.into_iter().take(n).map(|(_, t)| t.clone()).collect(),
        });
    }
    Ok(abstracts)
}

/// Scores each abstract as the mean similarity over all (query term, abstract
/// term) pairs and returns the `top_c` cluster ids, score descending with
/// ties by id ascending.
pub fn prune(
    query_terms: &[String],
    abstracts: &[Abstract],
    provider: &SimilarityProvider,
    top_c: usize,
) -> Vec<u32> {
    let mut scored: Vec<(f64, u32)> = abstracts
        .iter()
        .map(|a| {
            let pairs = query_terms.len() * a.terms.len();
            let score = if pairs == 0 {
                0.0
            } else {
                let total: f64 = query_terms
                    .iter()
                    .flat_map(|q| a.terms.iter().map(move |t| provider.sim(q, t)))
                    .sum();
                total / pairs as f64
            };
            (score, a.cluster_id)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("similarity is finite")
            .then_with(|| a.1.cmp(&b.1))
    });
    scored.into_iter().take(top_c).map(|(_, id)| id).collect()
}
