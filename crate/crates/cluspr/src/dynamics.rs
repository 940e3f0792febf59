//! Cluster maintenance under batch and streaming updates.
//!
//! Each incoming batch is tested with a single-category chi-square statistic
//! comparing its token count against the tokens already clustered. A small
//! statistic means the update is comparable in size to the existing
//! clustering, so a full re-cluster is worthwhile; a large one means the
//! batch is a drop in the bucket and the new tokens are folded into the
//! existing clusters by plaintext similarity against the abstracts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::abstracts::{build_abstracts, Abstract, SimilarityProvider};
use crate::centers::choose_centers;
use crate::distribute::{assign_tokens, Cluster, ClusterSet, Strategy};
use crate::index::{
    extract_keywords, merge_batch, pseudonymize, CentralIndex, Document, EncToken, Keymap,
    TempIndex,
};
use crate::matrix::{KEstimate, MatrixBundle};
use crate::{Error, Result};

/// Critical chi-square value at one degree of freedom, 95% confidence.
pub const CHI2_THRESHOLD: f64 = 3.841;

/// Admission threshold used when bootstrapping from the very first batch,
/// before any abstract exists to derive a threshold from.
pub const FD_BOOTSTRAP_THETA: f64 = 0.1;

/// Outcome of the chi-square test for one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReclusterDecision {
    pub chi2: f64,
    pub threshold: f64,
    pub recluster: bool,
}

/// Where each batch-new token went: an existing cluster id or a fresh one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssignmentMap {
    pub entries: BTreeMap<EncToken, u32>,
}

/// Single-trial goodness of fit: observed = tokens in the new batch,
/// expected = tokens in the existing clusters. Re-clustering is chosen when
/// the statistic stays under the critical value, i.e. when the batch is not
/// negligibly small against the existing clustering.
pub fn recluster_decision(n_new: usize, n_existing: usize) -> Result<ReclusterDecision> {
    if n_existing == 0 {
        return Err(Error::NoClusters(
            "chi-square needs existing clusters; bootstrap instead".into(),
        ));
    }
    let o = n_new as f64;
    let e = n_existing as f64;
    let chi2 = (o - e) * (o - e) / e;
    Ok(ReclusterDecision {
        chi2,
        threshold: CHI2_THRESHOLD,
        recluster: chi2 <= CHI2_THRESHOLD,
    })
}

/// Mean pairwise similarity over an abstract's terms.
pub fn abstract_coherency(terms: &[String], provider: &SimilarityProvider) -> Result<f64> {
    let p = terms.len();
    if p < 2 {
        return Err(Error::AbstractTooSmall);
    }
    let mut total = 0.0;
    for i in 0..p {
        for j in (i + 1)..p {
            total += provider.sim(&terms[i], &terms[j]);
        }
    }
    Ok(total / (p * (p - 1) / 2) as f64)
}

/// Global admission threshold: the minimum coherency across all abstracts
/// with at least two terms, falling back to the bootstrap default when no
/// abstract qualifies.
pub fn compute_theta(abstracts: &[Abstract], provider: &SimilarityProvider) -> f64 {
    abstracts
        .iter()
        .filter(|a| a.terms.len() >= 2)
        .map(|a| abstract_coherency(&a.terms, provider).expect("len checked"))
        .fold(None, |acc: Option<f64>, k| {
            Some(acc.map_or(k, |m| m.min(k)))
        })
        .unwrap_or(FD_BOOTSTRAP_THETA)
}

/// Folds batch-new tokens into the existing clusters.
///
/// Tokens are processed in ascending token order. Each token is compared
/// against every abstract element; if its best similarity exceeds `theta` it
/// joins that abstract's cluster, otherwise it founds a new singleton cluster
/// (and abstract) under the next free id. Returns the assignment plus the
/// updated abstract list.
pub fn sd_update(
    abstracts: &[Abstract],
    batch: &TempIndex,
    theta: f64,
    provider: &SimilarityProvider,
    existing_tokens: &BTreeSet<EncToken>,
    keymap: &Keymap,
) -> Result<(AssignmentMap, Vec<Abstract>)> {
    let mut updated: Vec<Abstract> = abstracts.to_vec();
    let mut next_id = updated
        .iter()
        .map(|a| a.cluster_id + 1)
        .max()
        .unwrap_or(0);
    let mut map = AssignmentMap::default();
    for token in batch.tokens() {
        if existing_tokens.contains(token) {
            continue;
        }
        let term = keymap
            .get(token)
            .ok_or_else(|| Error::MissingKeymapEntry(token.value().to_string()))?;
        let mut best: Option<(f64, u32)> = None;
        for a in &updated {
            for element in &a.terms {
                let s = provider.sim(element, term);
                if s > theta && best.is_none_or(|(bs, _)| s > bs) {
                    best = Some((s, a.cluster_id));
                }
            }
        }
        match best {
            Some((_, id)) => {
                map.entries.insert(token.clone(), id);
            }
            None => {
                updated.push(Abstract {
                    cluster_id: next_id,
                    terms: vec![term.clone()],
                });
                map.entries.insert(token.clone(), next_id);
                next_id += 1;
            }
        }
    }
    Ok((map, updated))
}

/// Forms the very first clusters from a batch. The most frequent token seeds
/// the first cluster; the rest join by the admission rule at the bootstrap
/// threshold or found their own clusters.
pub fn fd_bootstrap(
    batch: &TempIndex,
    provider: &SimilarityProvider,
    keymap: &Keymap,
    strategy: Strategy,
) -> Result<(ClusterSet, Vec<Abstract>)> {
    if batch.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let mut order: Vec<EncToken> = batch.tokens().cloned().collect();
    order.sort_by(|a, b| {
        batch
            .total_freq(b)
            .cmp(&batch.total_freq(a))
            .then_with(|| a.cmp(b))
    });

    let mut clusters: Vec<Cluster> = Vec::new();
    let mut abstracts: Vec<Abstract> = Vec::new();
    for (i, token) in order.iter().enumerate() {
        let term = keymap
            .get(token)
            .ok_or_else(|| Error::MissingKeymapEntry(token.value().to_string()))?;
        if i == 0 {
            clusters.push(Cluster::new(0, token.clone(), batch));
            abstracts.push(Abstract {
                cluster_id: 0,
                terms: vec![term.clone()],
            });
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for (ci, a) in abstracts.iter().enumerate() {
            for element in &a.terms {
                let s = provider.sim(element, term);
                if s > FD_BOOTSTRAP_THETA && best.is_none_or(|(bs, _)| s > bs) {
                    best = Some((s, ci));
                }
            }
        }
        match best {
            Some((_, ci)) => clusters[ci].insert_member(token.clone(), batch),
            None => {
                let id = clusters.len() as u32;
                clusters.push(Cluster::new(id, token.clone(), batch));
                abstracts.push(Abstract {
                    cluster_id: id,
                    terms: vec![term.clone()],
                });
            }
        }
    }
    Ok((ClusterSet { strategy, clusters }, abstracts))
}

/// Everything the dynamic schemes read and write between updates.
#[derive(Debug, Clone)]
pub struct ClusterState {
    pub index: CentralIndex,
    pub keymap: Keymap,
    pub clusters: Option<ClusterSet>,
    pub abstracts: Vec<Abstract>,
}

impl ClusterState {
    pub fn empty() -> Self {
        ClusterState {
            index: CentralIndex::new(),
            keymap: Keymap::new(),
            clusters: None,
            abstracts: Vec::new(),
        }
    }
}

/// Knobs shared by initial clustering and re-clustering.
#[derive(Debug, Clone)]
pub struct UpdateConfig {
    pub strategy: Strategy,
    /// Apply the mean-co-occurrence trim before estimating K.
    pub trim: bool,
    pub k_override: Option<usize>,
    /// Abstract size (top-n terms per cluster).
    pub abstract_terms: usize,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        UpdateConfig {
            strategy: Strategy::ClusPr,
            trim: true,
            k_override: None,
            abstract_terms: 25,
        }
    }
}

/// What one update did, in the shape the `update` subcommand prints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpdateReport {
    pub chi2: Option<f64>,
    pub recluster: bool,
    pub new_tokens: usize,
    pub new_clusters: Vec<u32>,
    pub bootstrap: bool,
}

/// Runs the full static pipeline: trim (optional), estimate K, choose
/// centers, distribute every index token.
pub fn cluster_tokens(
    index: &CentralIndex,
    cfg: &UpdateConfig,
) -> Result<(ClusterSet, KEstimate)> {
    let bundle = MatrixBundle::from_index(index, cfg.trim)?;
    let estimate = bundle.estimate();
    let k = cfg.k_override.unwrap_or(estimate.k).max(1);
    let diag: Vec<f64> = (0..bundle.tokens.len())
        .map(|i| bundle.separation_factor(i))
        .collect();
    let centers = choose_centers(k, &bundle.tokens, &diag, index)?;
    Ok((assign_tokens(&centers, index, cfg.strategy), estimate))
}

/// Applies one batch to the state: bootstrap when no clusters exist,
/// otherwise chi-square gated re-cluster or incremental update. Abstracts are
/// rebuilt from the updated clusters either way.
pub fn apply_batch(
    state: &mut ClusterState,
    batch: &TempIndex,
    batch_keymap: &Keymap,
    provider: &SimilarityProvider,
    cfg: &UpdateConfig,
) -> Result<UpdateReport> {
    state
        .keymap
        .extend(batch_keymap.iter().map(|(t, s)| (t.clone(), s.clone())));

    let have_clusters = state
        .clusters
        .as_ref()
        .is_some_and(|c| !c.clusters.is_empty());

    if !have_clusters {
        if batch.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let merged = merge_batch(&state.index, batch);
        let new_tokens = merged.token_count();
        let (clusters, _) = fd_bootstrap(&merged, provider, &state.keymap, cfg.strategy)?;
        state.abstracts = build_abstracts(&clusters, &state.keymap, cfg.abstract_terms)?;
        let ids = clusters.clusters.iter().map(|c| c.id).collect();
        state.clusters = Some(clusters);
        state.index = merged;
        return Ok(UpdateReport {
            chi2: None,
            recluster: false,
            new_tokens,
            new_clusters: ids,
            bootstrap: true,
        });
    }

    let clusters = state.clusters.as_ref().expect("checked above");
    let existing_tokens = clusters.all_tokens();
    let decision = recluster_decision(batch.token_count(), existing_tokens.len())?;
    let merged = merge_batch(&state.index, batch);
    let novel: Vec<EncToken> = batch
        .tokens()
        .filter(|t| !existing_tokens.contains(*t))
        .cloned()
        .collect();

    let report = if decision.recluster {
        let (set, _) = cluster_tokens(&merged, cfg)?;
        state.abstracts = build_abstracts(&set, &state.keymap, cfg.abstract_terms)?;
        let ids = set.clusters.iter().map(|c| c.id).collect();
        state.clusters = Some(set);
        UpdateReport {
            chi2: Some(decision.chi2),
            recluster: true,
            new_tokens: novel.len(),
            new_clusters: ids,
            bootstrap: false,
        }
    } else {
        let theta = compute_theta(&state.abstracts, provider);
        let (assignment, _) = sd_update(
            &state.abstracts,
            batch,
            theta,
            provider,
            &existing_tokens,
            &state.keymap,
        )?;
        let mut set = state.clusters.take().expect("checked above");
        // member postings mirror the merged index
        for cluster in &mut set.clusters {
            let members: Vec<EncToken> = cluster.members.keys().cloned().collect();
            for token in members {
                cluster.insert_member(token, &merged);
            }
        }
        let max_id = set.clusters.iter().map(|c| c.id).max().unwrap_or(0);
        let mut fresh: Vec<u32> = Vec::new();
        for (token, &id) in &assignment.entries {
            if let Some(cluster) = set.clusters.iter_mut().find(|c| c.id == id) {
                cluster.insert_member(token.clone(), &merged);
            } else {
                // tokens are processed in ascending order, so the first
                // token mapped to a fresh id is its founder
                set.clusters.push(Cluster::new(id, token.clone(), &merged));
                fresh.push(id);
            }
        }
        debug_assert!(fresh.iter().all(|id| *id > max_id));
        state.abstracts = build_abstracts(&set, &state.keymap, cfg.abstract_terms)?;
        state.clusters = Some(set);
        UpdateReport {
            chi2: Some(decision.chi2),
            recluster: false,
            new_tokens: assignment.entries.len(),
            new_clusters: fresh,
            bootstrap: false,
        }
    };

    state.index = merged;
    debug_assert!(state
        .clusters
        .as_ref()
        .is_some_and(|c| c.partitions(&state.index)));
    Ok(report)
}

/// Streaming entry point: processes a single arriving document, bootstrapping
/// on the first arrival and applying the chi-square gate afterwards.
#[allow(clippy::too_many_arguments)]
pub fn fd_step(
    state: &mut ClusterState,
    doc: &Document,
    key: &[u8],
    keywords_per_doc: usize,
    stopwords: &BTreeSet<String>,
    provider: &SimilarityProvider,
    cfg: &UpdateConfig,
) -> Result<UpdateReport> {
    let mut batch = TempIndex::new();
    let mut batch_keymap = Keymap::new();
    batch.add_doc_id(doc.doc_id.clone());
    for kw in extract_keywords(doc, keywords_per_doc, stopwords) {
        let token = pseudonymize(&kw.term, key)?;
        batch_keymap.insert(token.clone(), kw.term);
        batch.add_posting(token, doc.doc_id.clone(), kw.freq);
    }
    apply_batch(state, &batch, &batch_keymap, provider, cfg)
}
