//! Internal cluster-quality metrics over statistical token features, plus
//! embedding-based coherency.
//!
//! The feature vector of a token is its row of the column-normalized matrix
//! `N`, so the metrics stay computable on the untrusted side where only
//! co-occurrence statistics exist. Coherency instead decrypts member tokens
//! through the trusted keymap and averages pairwise embedding similarity.

use ndarray::Array2;

use crate::abstracts::SimilarityProvider;
use crate::distribute::{Cluster, ClusterSet};
use crate::index::{CentralIndex, EncToken, Keymap};
use crate::matrix::{build_a, normalize};
use crate::{Error, Result};

/// Feature matrix for the given tokens: each row is the token's row of `N`
/// over all index documents.
pub fn token_features(index: &CentralIndex, tokens: &[EncToken]) -> Array2<f64> {
    let docs: Vec<String> = index.doc_ids().iter().cloned().collect();
    normalize(&build_a(index, tokens, &docs))
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn rows(features: &Array2<f64>) -> Vec<Vec<f64>> {
    (0..features.nrows())
        .map(|i| features.row(i).to_vec())
        .collect()
}

fn group_indices(labels: &[usize]) -> Vec<Vec<usize>> {
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Mean silhouette over all points. Members of singleton clusters score 0,
/// as does any point whose intra and nearest-other distances are both 0.
pub fn silhouette(features: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    check_shape(features, labels)?;
    let groups = group_indices(labels);
    if groups.len() < 2 {
        return Err(Error::BadInput(
            "silhouette needs at least 2 clusters".into(),
        ));
    }
    let pts = rows(features);
    let mut total = 0.0;
    for (gi, group) in groups.iter().enumerate() {
        for &i in group {
            if group.len() == 1 {
                continue; // contributes 0
            }
            let a: f64 = group
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| euclidean(&pts[i], &pts[j]))
                .sum::<f64>()
                / (group.len() - 1) as f64;
            let b = groups
                .iter()
                .enumerate()
                .filter(|(gj, _)| *gj != gi)
                .map(|(_, other)| {
                    other
                        .iter()
                        .map(|&j| euclidean(&pts[i], &pts[j]))
                        .sum::<f64>()
                        / other.len() as f64
                })
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                total += (b - a) / denom;
            }
        }
    }
    Ok(total / labels.len() as f64)
}

/// Between-cluster over within-cluster dispersion ratio. A perfectly tight
/// clustering (zero within-cluster scatter) reports positive infinity.
pub fn calinski_harabasz(features: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    check_shape(features, labels)?;
    let groups = group_indices(labels);
    let k = groups.len();
    let m = labels.len();
    if k < 2 {
        return Err(Error::BadInput(
            "calinski-harabasz needs at least 2 clusters".into(),
        ));
    }
    if m <= k {
        return Err(Error::BadInput(
            "calinski-harabasz needs more points than clusters".into(),
        ));
    }
    let pts = rows(features);
    let dim = features.ncols();
    let global = centroid(&pts, &(0..m).collect::<Vec<_>>(), dim);
    let mut between = 0.0;
    let mut within = 0.0;
    for group in &groups {
        let c = centroid(&pts, group, dim);
        let d = euclidean(&c, &global);
        between += group.len() as f64 * d * d;
        for &i in group {
            let d = euclidean(&pts[i], &c);
            within += d * d;
        }
    }
    if within == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((between / (k - 1) as f64) / (within / (m - k) as f64))
}

/// Mean over clusters of the worst (within-spread / centroid-distance) ratio
/// against any other cluster. Pairs with coincident centroids are skipped;
/// if every pair is skipped there is nothing to measure and an error is
/// returned.
pub fn davies_bouldin(features: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    check_shape(features, labels)?;
    let groups = group_indices(labels);
    let k = groups.len();
    if k < 2 {
        return Err(Error::BadInput(
            "davies-bouldin needs at least 2 clusters".into(),
        ));
    }
    let pts = rows(features);
    let dim = features.ncols();
    let centroids: Vec<Vec<f64>> = groups.iter().map(|g| centroid(&pts, g, dim)).collect();
    let spreads: Vec<f64> = groups
        .iter()
        .zip(&centroids)
        .map(|(g, c)| g.iter().map(|&i| euclidean(&pts[i], c)).sum::<f64>() / g.len() as f64)
        .collect();
    let mut ratios = Vec::new();
    for i in 0..k {
        let mut worst: Option<f64> = None;
        for j in 0..k {
            if i == j {
                continue;
            }
            let d = euclidean(&centroids[i], &centroids[j]);
            if d == 0.0 {
                continue;
            }
            let r = (spreads[i] + spreads[j]) / d;
            worst = Some(worst.map_or(r, |w: f64| w.max(r)));
        }
        if let Some(w) = worst {
            ratios.push(w);
        }
    }
    if ratios.is_empty() {
        return Err(Error::BadInput(
            "davies-bouldin: all cluster centroids coincide".into(),
        ));
    }
    Ok(ratios.iter().sum::<f64>() / ratios.len() as f64)
}

fn centroid(pts: &[Vec<f64>], group: &[usize], dim: usize) -> Vec<f64> {
    let mut c = vec![0.0; dim];
    for &i in group {
        for (acc, v) in c.iter_mut().zip(&pts[i]) {
            *acc += v;
        }
    }
    for v in &mut c {
        *v /= group.len() as f64;
    }
    c
}

fn check_shape(features: &Array2<f64>, labels: &[usize]) -> Result<()> {
    if features.nrows() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows vs {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    Ok(())
}

/// Mean pairwise similarity of a cluster's decrypted terms; `None` for
/// singletons, which the overall mean excludes.
pub fn coherency(
    cluster: &Cluster,
    keymap: &Keymap,
    provider: &SimilarityProvider,
) -> Result<Option<f64>> {
    let mut terms = Vec::with_capacity(cluster.members.len());
    for token in cluster.members.keys() {
        terms.push(
            keymap
                .get(token)
                .ok_or_else(|| Error::MissingKeymapEntry(token.value().to_string()))?
                .as_str(),
        );
    }
    let p = terms.len();
    if p < 2 {
        return Ok(None);
    }
    let mut total = 0.0;
    for i in 0..p {
        for j in (i + 1)..p {
            total += provider.sim(terms[i], terms[j]);
        }
    }
    Ok(Some(total / (p * (p - 1) / 2) as f64))
}

/// Mean coherency over clusters with at least two members; 0 when every
/// cluster is a singleton.
pub fn mean_coherency(
    clusters: &ClusterSet,
    keymap: &Keymap,
    provider: &SimilarityProvider,
) -> Result<f64> {
    let mut values = Vec::new();
    for cluster in &clusters.clusters {
        if let Some(v) = coherency(cluster, keymap, provider)? {
            values.push(v);
        }
    }
    if values.is_empty() {
        return Ok(0.0);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}
