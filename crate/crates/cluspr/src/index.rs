//! Corpus ingestion: keyword extraction, deterministic pseudonymization and
//! the central inverted index.
//!
//! The index maps each pseudonymized token to its postings, one `(doc_id,
//! frequency)` pair per document the token was extracted from. Document
//! bodies are never stored; the trusted side keeps a separate keymap from
//! token back to plaintext term.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::{Error, Result};

/// A raw input document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
}

/// A keyword extracted from one document, with its in-document frequency.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keyword {
    pub term: String,
    pub freq: u32,
}

/// Deterministic pseudonym of a plaintext term: 32 lowercase hex chars.
///
/// Equal terms under the same key always map to the same value, which is all
/// the clustering pipeline needs; the plaintext is not recoverable from it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EncToken(String);

impl EncToken {
    /// Wraps a pre-formed token value. Used when loading artifacts from disk
    /// and by tests; `pseudonymize` is the normal constructor.
    pub fn from_value(value: impl Into<String>) -> Self {
        EncToken(value.into())
    }

    pub fn value(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EncToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub type DocId = String;

/// Trusted-side map from pseudonymized token back to its plaintext term.
pub type Keymap = BTreeMap<EncToken, String>;

/// The searchable inverted index: token -> (doc_id -> frequency).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CentralIndex {
    doc_ids: BTreeSet<DocId>,
    postings: BTreeMap<EncToken, BTreeMap<DocId, u32>>,
}

/// An index restricted to one update batch; same shape as the central index.
pub type TempIndex = CentralIndex;

impl CentralIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn doc_ids(&self) -> &BTreeSet<DocId> {
        &self.doc_ids
    }

    pub fn tokens(&self) -> impl Iterator<Item = &EncToken> {
        self.postings.keys()
    }

    pub fn token_count(&self) -> usize {
        self.postings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.postings.is_empty()
    }

    pub fn contains_token(&self, token: &EncToken) -> bool {
        self.postings.contains_key(token)
    }

    pub fn postings(&self, token: &EncToken) -> Option<&BTreeMap<DocId, u32>> {
        self.postings.get(token)
    }

    pub fn freq(&self, token: &EncToken, doc: &DocId) -> u32 {
        self.postings
            .get(token)
            .and_then(|p| p.get(doc))
            .copied()
            .unwrap_or(0)
    }

    /// Total frequency of a token across the corpus.
    pub fn total_freq(&self, token: &EncToken) -> u64 {
        self.postings
            .get(token)
            .map(|p| p.values().map(|&f| u64::from(f)).sum())
            .unwrap_or(0)
    }

    /// Number of distinct documents containing the token.
    pub fn doc_count(&self, token: &EncToken) -> usize {
        self.postings.get(token).map(|p| p.len()).unwrap_or(0)
    }

    /// Set of documents containing the token.
    pub fn doc_set(&self, token: &EncToken) -> BTreeSet<DocId> {
        self.postings
            .get(token)
            .map(|p| p.keys().cloned().collect())
            .unwrap_or_default()
    }

    pub fn add_doc_id(&mut self, doc_id: DocId) {
        self.doc_ids.insert(doc_id);
    }

    /// Adds `freq` occurrences of `token` in `doc`, registering the doc id.
    pub fn add_posting(&mut self, token: EncToken, doc_id: DocId, freq: u32) {
        debug_assert!(freq >= 1, "posting frequency must be positive");
        self.doc_ids.insert(doc_id.clone());
        *self
            .postings
            .entry(token)
            .or_default()
            .entry(doc_id)
            .or_insert(0) += freq;
    }

    /// Serializes to the on-disk JSON document
    /// `{"doc_ids":[...], "postings":{token:[[doc_id,freq],...]}}`.
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(&IndexFile::from(self))?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: IndexFile = serde_json::from_str(s)?;
        file.into_index()
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json_string()?.as_bytes())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    doc_ids: Vec<DocId>,
    postings: BTreeMap<EncToken, Vec<(DocId, u32)>>,
}

impl From<&CentralIndex> for IndexFile {
    fn from(index: &CentralIndex) -> Self {
        IndexFile {
            doc_ids: index.doc_ids.iter().cloned().collect(),
            postings: index
                .postings
                .iter()
                .map(|(t, p)| (t.clone(), p.iter().map(|(d, &f)| (d.clone(), f)).collect()))
                .collect(),
        }
    }
}

impl IndexFile {
    fn into_index(self) -> Result<CentralIndex> {
        let mut index = CentralIndex::new();
        for d in self.doc_ids {
            index.add_doc_id(d);
        }
        for (token, posts) in self.postings {
            for (doc, freq) in posts {
                if freq == 0 {
                    return Err(Error::BadInput(format!(
                        "zero frequency posting for token {token} in doc {doc}"
                    )));
                }
                if !index.doc_ids.contains(&doc) {
                    return Err(Error::BadInput(format!(
                        "posting references unknown doc_id `{doc}`"
                    )));
                }
                index.add_posting(token.clone(), doc, freq);
            }
        }
        Ok(index)
    }
}

/// Writes a file via a temporary sibling and rename, so readers never observe
/// a half-written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Common English function words excluded from extraction by default.
pub fn default_stopwords() -> BTreeSet<String> {
    const WORDS: &str = "a about above after again all an and any are as at be because \
        been before being below between both but by can did do does down during each few \
        for from further had has have having he her here hers him his how if in into is \
        it its just me more most my no nor not now of off on once only or other our out \
        over own same she so some such than that the their them then there these they \
        this those through to too under until up very was we were what when where which \
        while who why will with you your";
    WORDS.split_whitespace().map(str::to_string).collect()
}

/// Lowercases and splits on non-alphanumeric characters, dropping terms
/// shorter than 2 characters and stopwords, then keeps the `n` most frequent
/// terms (ties broken by term, ascending).
pub fn extract_keywords(doc: &Document, n: usize, stopwords: &BTreeSet<String>) -> Vec<Keyword> {
    let mut counts: BTreeMap<String, u32> = BTreeMap::new();
    for raw in doc
        .text
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
    {
        if raw.chars().count() < 2 || stopwords.contains(raw) {
            continue;
        }
        *counts.entry(raw.to_string()).or_insert(0) += 1;
    }
    let mut keywords: Vec<Keyword> = counts
        .into_iter()
        .map(|(term, freq)| Keyword { term, freq })
        .collect();
    keywords.sort_by(|a, b| b.freq.cmp(&a.freq).then_with(|| a.term.cmp(&b.term)));
    keywords.truncate(n);
    keywords
}

type HmacSha256 = Hmac<Sha256>;

/// Deterministic keyed pseudonym of a term: HMAC-SHA256 truncated to 128 bits
/// and hex-encoded.
pub fn pseudonymize(term: &str, key: &[u8]) -> Result<EncToken> {
    if key.is_empty() {
        return Err(Error::EmptyKey);
    }
    let mut mac = HmacSha256::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(term.as_bytes());
    let digest = mac.finalize().into_bytes();
    Ok(EncToken(hex::encode(&digest[..16])))
}

/// Builds the central index (and the trusted-side keymap) from raw documents.
pub fn build_index(
    docs: &[Document],
    n: usize,
    key: &[u8],
    stopwords: &BTreeSet<String>,
) -> Result<(CentralIndex, Keymap)> {
    let extracted: Vec<(String, Vec<Keyword>)> = docs
        .iter()
        .map(|d| (d.doc_id.clone(), extract_keywords(d, n, stopwords)))
        .collect();
    build_index_pre_extracted(&extracted, key)
}

/// Builds the central index from documents whose keywords were extracted
/// elsewhere. Lets fixture token files bypass the extractor.
pub fn build_index_pre_extracted(
    docs: &[(String, Vec<Keyword>)],
    key: &[u8],
) -> Result<(CentralIndex, Keymap)> {
    let mut index = CentralIndex::new();
    let mut keymap = Keymap::new();
    let mut seen = BTreeSet::new();
    for (doc_id, keywords) in docs {
        if doc_id.is_empty() {
            return Err(Error::BadInput("empty doc_id".into()));
        }
        if !seen.insert(doc_id.clone()) {
            return Err(Error::DuplicateDocId(doc_id.clone()));
        }
        index.add_doc_id(doc_id.clone());
        for kw in keywords {
            if kw.freq == 0 {
                return Err(Error::BadInput(format!(
                    "keyword `{}` in doc `{doc_id}` has zero frequency",
                    kw.term
                )));
            }
            let token = pseudonymize(&kw.term, key)?;
            keymap.insert(token.clone(), kw.term.clone());
            index.add_posting(token, doc_id.clone(), kw.freq);
        }
    }
    Ok((index, keymap))
}

/// Merges a batch index into the central index, summing colliding postings
/// and unioning doc ids. Inputs are left untouched.
pub fn merge_batch(index: &CentralIndex, batch: &TempIndex) -> CentralIndex {
    let mut merged = index.clone();
    for d in &batch.doc_ids {
        merged.doc_ids.insert(d.clone());
    }
    for (token, posts) in &batch.postings {
        let target = merged.postings.entry(token.clone()).or_default();
        for (doc, &freq) in posts {
            match target.entry(doc.clone()) {
                Entry::Occupied(mut e) => *e.get_mut() += freq,
                Entry::Vacant(e) => {
                    e.insert(freq);
                }
            }
        }
    }
    merged
}

/// Loads a corpus from a directory of `.txt` files (file stem = doc_id) or a
/// JSON-lines file `{"doc_id":..., "text":...}`.
pub fn load_corpus(path: &Path) -> Result<Vec<Document>> {
    if path.is_dir() {
        let mut docs = Vec::new();
        let mut entries: Vec<_> = std::fs::read_dir(path)?
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "txt"))
            .collect();
        entries.sort();
        for p in entries {
            let stem = p
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::BadInput(format!("unreadable file name: {}", p.display())))?
                .to_string();
            docs.push(Document {
                doc_id: stem,
                text: std::fs::read_to_string(&p)?,
            });
        }
        Ok(docs)
    } else {
        let body = std::fs::read_to_string(path)?;
        let mut docs = Vec::new();
        for (lineno, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let doc: Document = serde_json::from_str(line).map_err(|e| {
                Error::BadInput(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
            docs.push(doc);
        }
        Ok(docs)
    }
}

#[derive(Serialize, Deserialize)]
struct PreExtractedLine {
    doc_id: String,
    tokens: Vec<Keyword>,
}

/// Loads a pre-extracted token file: JSON-lines
/// `{"doc_id":..., "tokens":[{"term":...,"freq":...}]}`.
pub fn load_pre_extracted(path: &Path) -> Result<Vec<(String, Vec<Keyword>)>> {
    let body = std::fs::read_to_string(path)?;
    let mut docs = Vec::new();
    for (lineno, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: PreExtractedLine = serde_json::from_str(line)
            .map_err(|e| Error::BadInput(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        docs.push((parsed.doc_id, parsed.tokens));
    }
    Ok(docs)
}

pub fn write_keymap(path: &Path, keymap: &Keymap) -> Result<()> {
    write_atomic(path, serde_json::to_string(keymap)?.as_bytes())
}

pub fn read_keymap(path: &Path) -> Result<Keymap> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str) -> Document {
        Document {
            doc_id: id.into(),
            text: text.into(),
        }
    }

    fn no_stop() -> BTreeSet<String> {
        BTreeSet::new()
    }

    #[test]
    fn extract_empty_document() {
        assert!(extract_keywords(&doc("d", ""), 5, &no_stop()).is_empty());
    }

    #[test]
    fn extract_counts_and_orders() {
        let kws = extract_keywords(&doc("d", "Cloud cloud edge!"), 5, &no_stop());
        assert_eq!(
            kws,
            vec![
                Keyword { term: "cloud".into(), freq: 2 },
                Keyword { term: "edge".into(), freq: 1 },
            ]
        );
    }

    #[test]
    fn extract_tie_break_is_term_ascending() {
        // single letters are dropped by the min-length rule, so use digraphs
        let kws = extract_keywords(&doc("d", "aa bb aa cc bb"), 2, &no_stop());
        assert_eq!(
            kws,
            vec![
                Keyword { term: "aa".into(), freq: 2 },
                Keyword { term: "bb".into(), freq: 2 },
            ]
        );
        let top1 = extract_keywords(&doc("d", "aa bb aa cc bb"), 1, &no_stop());
        assert_eq!(top1, vec![Keyword { term: "aa".into(), freq: 2 }]);
    }

    #[test]
    fn extract_drops_stopwords_and_short_terms() {
        let stop: BTreeSet<String> = ["the".to_string()].into();
        let kws = extract_keywords(&doc("d", "the a x cloud THE"), 5, &stop);
        assert_eq!(kws, vec![Keyword { term: "cloud".into(), freq: 1 }]);
    }

    #[test]
    fn pseudonymize_is_deterministic_and_keyed() {
        let k1 = b"key-one";
        let k2 = b"key-two";
        let a = pseudonymize("x", k1).unwrap();
        let b = pseudonymize("x", k1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, pseudonymize("y", k1).unwrap());
        assert_ne!(a, pseudonymize("x", k2).unwrap());
        assert_eq!(a.value().len(), 32);
        assert!(a.value().chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
    }

    #[test]
    fn pseudonymize_rejects_empty_key() {
        assert!(matches!(pseudonymize("x", b""), Err(Error::EmptyKey)));
    }

    #[test]
    fn build_single_doc_repeated_term() {
        let (index, keymap) = build_index(&[doc("d1", "tt tt")], 5, b"k", &no_stop()).unwrap();
        assert_eq!(index.token_count(), 1);
        let token = index.tokens().next().unwrap().clone();
        assert_eq!(index.freq(&token, &"d1".to_string()), 2);
        assert_eq!(keymap[&token], "tt");
    }

    #[test]
    fn build_shared_term_two_postings() {
        let (index, _) =
            build_index(&[doc("d1", "tt"), doc("d2", "tt")], 5, b"k", &no_stop()).unwrap();
        assert_eq!(index.token_count(), 1);
        let token = index.tokens().next().unwrap().clone();
        assert_eq!(index.doc_count(&token), 2);
    }

    #[test]
    fn build_rejects_duplicate_doc_id() {
        let err = build_index(&[doc("d1", "aa"), doc("d1", "bb")], 5, b"k", &no_stop());
        assert!(matches!(err, Err(Error::DuplicateDocId(_))));
    }

    #[test]
    fn build_keeps_keywordless_docs_in_doc_ids() {
        let (index, _) = build_index(&[doc("d1", "tt"), doc("d2", "!")], 5, b"k", &no_stop())
            .unwrap();
        assert!(index.doc_ids().contains("d2"));
        assert_eq!(index.token_count(), 1);
    }

    #[test]
    fn merge_identities_and_sum() {
        let (a, _) = build_index(&[doc("d1", "tt tt")], 5, b"k", &no_stop()).unwrap();
        let empty = CentralIndex::new();
        assert_eq!(merge_batch(&empty, &a), a);
        assert_eq!(merge_batch(&a, &empty), a);

        let (b, _) = build_index(&[doc("d1", "tt tt tt")], 5, b"k", &no_stop()).unwrap();
        let merged = merge_batch(&a, &b);
        let token = merged.tokens().next().unwrap().clone();
        assert_eq!(merged.freq(&token, &"d1".to_string()), 5);
    }

    #[test]
    fn index_json_round_trip() {
        let (index, _) = build_index(
            &[doc("d1", "aa bb aa"), doc("d2", "bb cc")],
            5,
            b"k",
            &no_stop(),
        )
        .unwrap();
        let json = index.to_json_string().unwrap();
        let back = CentralIndex::from_json_str(&json).unwrap();
        assert_eq!(back, index);
    }

    #[test]
    fn index_json_rejects_unknown_doc() {
        let bad = r#"{"doc_ids":["d1"],"postings":{"ab":[["d9",1]]}}"#;
        assert!(CentralIndex::from_json_str(bad).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_docs() -> impl Strategy<Value = Vec<Document>> {
            prop::collection::vec("[a-e]{2,4}( [a-e]{2,4}){0,8}", 1..6).prop_map(|texts| {
                texts
                    .into_iter()
                    .enumerate()
                    .map(|(i, text)| Document {
                        doc_id: format!("d{i}"),
                        text,
                    })
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn total_posting_freq_matches_extraction(docs in arb_docs()) {
                let stop = BTreeSet::new();
                let (index, _) = build_index(&docs, 20, b"k", &stop).unwrap();
                let from_index: u64 = index
                    .tokens()
                    .map(|t| index.total_freq(t))
                    .sum();
                let from_docs: u64 = docs
                    .iter()
                    .flat_map(|d| extract_keywords(d, 20, &stop))
                    .map(|k| u64::from(k.freq))
                    .sum();
                prop_assert_eq!(from_index, from_docs);
            }

            #[test]
            fn merge_is_associative_with_identity(
                a in arb_docs(), b in arb_docs(), c in arb_docs()
            ) {
                let stop = BTreeSet::new();
                // distinct doc-id namespaces keep the three batches realistic
                let rename = |docs: Vec<Document>, tag: &str| -> Vec<Document> {
                    docs.into_iter()
                        .map(|mut d| { d.doc_id = format!("{tag}{}", d.doc_id); d })
                        .collect()
                };
                let (ia, _) = build_index(&rename(a, "a"), 20, b"k", &stop).unwrap();
                let (ib, _) = build_index(&rename(b, "b"), 20, b"k", &stop).unwrap();
                let (ic, _) = build_index(&rename(c, "c"), 20, b"k", &stop).unwrap();
                let left = merge_batch(&merge_batch(&ia, &ib), &ic);
                let right = merge_batch(&ia, &merge_batch(&ib, &ic));
                prop_assert_eq!(left, right);
                let empty = CentralIndex::new();
                prop_assert_eq!(merge_batch(&ia, &empty), ia.clone());
                prop_assert_eq!(merge_batch(&empty, &ia), ia);
            }
        }
    }
}
