//! Command-line front end: build the index, estimate K, cluster, update,
//! search and evaluate, all against a working directory of JSON artifacts.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for data errors.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use serde_json::json;

use cluspr::abstracts::{build_abstracts, load_embeddings, AbstractsFile, SimilarityProvider};
use cluspr::distribute::{ClusterSet, Strategy};
use cluspr::dynamics::{apply_batch, cluster_tokens, ClusterState, UpdateConfig};
use cluspr::index::{
    self, build_index, build_index_pre_extracted, default_stopwords, read_keymap, write_keymap,
    CentralIndex, Keymap,
};
use cluspr::matrix::MatrixBundle;
use cluspr::metrics;
use cluspr::search::search;
use cluspr::Error;

#[derive(Parser)]
#[command(name = "cluspr", version, about = "Topic clustering and pruned search over a pseudonymized keyword index")]
struct Cli {
    /// Directory holding index, clusters and trusted-side artifacts.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,

    /// File whose raw bytes key the token pseudonymization.
    #[arg(long, global = true)]
    key_file: Option<PathBuf>,

    /// Word-vector text file used for similarity.
    #[arg(long, global = true, env = "CLUSPR_EMBEDDINGS")]
    embeddings: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the central index from a corpus or a pre-extracted token file.
    BuildIndex {
        /// Directory of .txt files (stem = doc id) or a JSON-lines corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// JSON-lines file of pre-extracted tokens per document.
        #[arg(long)]
        pre_extracted: Option<PathBuf>,
        /// Keywords kept per document.
        #[arg(long, default_value_t = 20)]
        keywords_per_doc: usize,
        /// Stopword file (one term per line); defaults to a built-in list.
        #[arg(long)]
        stopwords: Option<PathBuf>,
    },
    /// Estimate the cluster count from the index.
    EstimateK {
        /// Skip the mean-co-occurrence token trim.
        #[arg(long)]
        no_trim: bool,
        /// Also dump A/N/R/S/Q as CSV files into this directory.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Cluster the index tokens and write clusters plus abstracts.
    Cluster {
        #[arg(long, default_value = "cluspr", value_parser = parse_strategy)]
        strategy: Strategy,
        /// Use this K instead of the estimate.
        #[arg(long)]
        k_override: Option<usize>,
        #[arg(long)]
        no_trim: bool,
        /// Abstract size (top-n terms per cluster).
        #[arg(long, default_value_t = 25)]
        abstract_terms: usize,
    },
    /// Apply a document batch: re-cluster or fold in the new tokens.
    Update {
        /// Directory of .txt files or JSON-lines corpus for the batch.
        #[arg(long)]
        batch: Option<PathBuf>,
        /// JSON-lines file of pre-extracted tokens for the batch.
        #[arg(long)]
        pre_extracted: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        keywords_per_doc: usize,
        #[arg(long)]
        stopwords: Option<PathBuf>,
        /// Strategy when bootstrapping the first clusters.
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<Strategy>,
        #[arg(long)]
        k_override: Option<usize>,
        #[arg(long)]
        no_trim: bool,
        /// Abstract size when no abstracts file exists yet.
        #[arg(long, default_value_t = 25)]
        abstract_terms: usize,
    },
    /// Pruned keyword search over the clusters.
    Search {
        #[arg(long)]
        query: String,
        /// Number of clusters to search.
        #[arg(long, default_value_t = 3)]
        top_c: usize,
        /// Maximum documents returned.
        #[arg(long, default_value_t = 10)]
        limit: usize,
        #[arg(long)]
        stopwords: Option<PathBuf>,
    },
    /// Score the current clustering.
    Evaluate,
    /// Write A/N/R/S/Q as CSV files.
    DumpMatrices {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_trim: bool,
    },
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse()
}

enum CliError {
    Usage(String),
    Data(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();

    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

struct Paths {
    index: PathBuf,
    clusters: PathBuf,
    abstracts: PathBuf,
    keymap: PathBuf,
}

impl Paths {
    fn new(workdir: &Path) -> Self {
        let trusted = workdir.join("trusted");
        Paths {
            index: workdir.join("index.json"),
            clusters: workdir.join("clusters.json"),
            abstracts: trusted.join("abstracts.json"),
            keymap: trusted.join("keymap.json"),
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let paths = Paths::new(&cli.workdir);
    match cli.command {
        Command::BuildIndex {
            corpus,
            pre_extracted,
            keywords_per_doc,
            stopwords,
        } => {
            let key = require_key(&cli.key_file)?;
            let stop = load_stopwords(&stopwords)?;
            let (index, keymap) = match (corpus, pre_extracted) {
                (Some(path), None) => {
                    let docs = index::load_corpus(&path)?;
                    build_index(&docs, keywords_per_doc, &key, &stop)?
                }
                (None, Some(path)) => {
                    let docs = index::load_pre_extracted(&path)?;
                    build_index_pre_extracted(&docs, &key)?
                }
                _ => {
                    return Err(CliError::Usage(
                        "build-index needs exactly one of --corpus or --pre-extracted".into(),
                    ))
                }
            };
            index.write_file(&paths.index)?;
            write_keymap(&paths.keymap, &keymap)?;
            println!("{}", index.to_json_string()?);
            Ok(())
        }

        Command::EstimateK { no_trim, dump } => {
            let index = read_index(&paths)?;
            let bundle = MatrixBundle::from_index(&index, !no_trim)?;
            if let Some(dir) = dump {
                bundle.write_csv_files(&dir)?;
            }
            let est = bundle.estimate();
            println!("{}", serde_json::to_string(&est).map_err(Error::from)?);
            Ok(())
        }

        Command::Cluster {
            strategy,
            k_override,
            no_trim,
            abstract_terms,
        } => {
            let index = read_index(&paths)?;
            let keymap = read_keymap_checked(&paths)?;
            let cfg = UpdateConfig {
                strategy,
                trim: !no_trim,
                k_override,
                abstract_terms,
            };
            let (clusters, _) = cluster_tokens(&index, &cfg)?;
            let abstracts = build_abstracts(&clusters, &keymap, abstract_terms)?;
            clusters.write_file(&paths.clusters)?;
            AbstractsFile {
                n: abstract_terms,
                abstracts,
            }
            .write_file(&paths.abstracts)?;
            println!("{}", clusters.to_json_string()?);
            Ok(())
        }

        Command::Update {
            batch,
            pre_extracted,
            keywords_per_doc,
            stopwords,
            strategy,
            k_override,
            no_trim,
            abstract_terms,
        } => {
            let key = require_key(&cli.key_file)?;
            let stop = load_stopwords(&stopwords)?;
            let provider = require_embeddings(&cli.embeddings)?;
            let (batch_index, batch_keymap) = match (batch, pre_extracted) {
                (Some(path), None) => {
                    let docs = index::load_corpus(&path)?;
                    build_index(&docs, keywords_per_doc, &key, &stop)?
                }
                (None, Some(path)) => {
                    let docs = index::load_pre_extracted(&path)?;
                    build_index_pre_extracted(&docs, &key)?
                }
                _ => {
                    return Err(CliError::Usage(
                        "update needs exactly one of --batch or --pre-extracted".into(),
                    ))
                }
            };

            let mut state = ClusterState {
                index: read_index_or_empty(&paths)?,
                keymap: read_keymap_or_empty(&paths)?,
                clusters: read_clusters_optional(&paths)?,
                abstracts: read_abstracts_or_empty(&paths)?.map_or_else(Vec::new, |f| f.abstracts),
            };
            let stored_n = read_abstracts_or_empty(&paths)?.map(|f| f.n);
            let cfg = UpdateConfig {
                strategy: state
                    .clusters
                    .as_ref()
                    .map(|c| c.strategy)
                    .or(strategy)
                    .unwrap_or(Strategy::ClusPr),
                trim: !no_trim,
                k_override,
                abstract_terms: stored_n.unwrap_or(abstract_terms),
            };
            let report = apply_batch(&mut state, &batch_index, &batch_keymap, &provider, &cfg)?;

            state.index.write_file(&paths.index)?;
            if let Some(clusters) = &state.clusters {
                clusters.write_file(&paths.clusters)?;
            }
            AbstractsFile {
                n: cfg.abstract_terms,
                abstracts: state.abstracts.clone(),
            }
            .write_file(&paths.abstracts)?;
            write_keymap(&paths.keymap, &state.keymap)?;
            println!("{}", serde_json::to_string(&report).map_err(Error::from)?);
            Ok(())
        }

        Command::Search {
            query,
            top_c,
            limit,
            stopwords,
        } => {
            if top_c == 0 {
                return Err(CliError::Usage("--top-c must be at least 1".into()));
            }
            let key = require_key(&cli.key_file)?;
            let stop = load_stopwords(&stopwords)?;
            let provider = require_embeddings(&cli.embeddings)?;
            let clusters = read_clusters(&paths)?;
            let abstracts = read_abstracts(&paths)?;
            let result = search(
                &query,
                &clusters,
                &abstracts.abstracts,
                &provider,
                &key,
                &stop,
                top_c,
                limit,
            )?;
            println!("{}", serde_json::to_string(&result).map_err(Error::from)?);
            Ok(())
        }

        Command::Evaluate => {
            let provider = require_embeddings(&cli.embeddings)?;
            let index = read_index(&paths)?;
            let clusters = read_clusters(&paths)?;
            let keymap = read_keymap_checked(&paths)?;
            let tokens: Vec<_> = index.tokens().cloned().collect();
            let labels: Vec<usize> = tokens
                .iter()
                .map(|t| {
                    clusters
                        .cluster_of(t)
                        .map(|id| id as usize)
                        .ok_or_else(|| {
                            Error::BadInput(format!("token {t} missing from clusters"))
                        })
                })
                .collect::<Result<_, _>>()?;
            let features = metrics::token_features(&index, &tokens);
            let silhouette = metrics::silhouette(&features, &labels)?;
            let ch = metrics::calinski_harabasz(&features, &labels)?;
            let db = metrics::davies_bouldin(&features, &labels)?;
            let coherency = metrics::mean_coherency(&clusters, &keymap, &provider)?;
            let out = json!({
                "silhouette": silhouette,
                "calinski_harabasz": finite_or_inf(ch),
                "davies_bouldin": db,
                "coherency": coherency,
            });
            println!("{out}");
            Ok(())
        }

        Command::DumpMatrices { out, no_trim } => {
            let index = read_index(&paths)?;
            let bundle = MatrixBundle::from_index(&index, !no_trim)?;
            let written = bundle.write_csv_files(&out)?;
            let listed: Vec<String> = written
                .iter()
                .map(|p| p.display().to_string())
                .collect();
            println!("{}", json!({ "written": listed }));
            Ok(())
        }
    }
}

/// JSON has no Infinity literal; an unbounded metric is reported as "inf".
fn finite_or_inf(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!("inf")
    }
}

fn require_key(key_file: &Option<PathBuf>) -> CliResult<Vec<u8>> {
    let path = key_file
        .as_ref()
        .ok_or_else(|| CliError::Usage("this subcommand requires --key-file".into()))?;
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Data(format!("key file {}: {e}", path.display())))?;
    if bytes.is_empty() {
        return Err(CliError::Data(format!(
            "key file {} is empty",
            path.display()
        )));
    }
    Ok(bytes)
}

fn require_embeddings(embeddings: &Option<PathBuf>) -> CliResult<SimilarityProvider> {
    let path = embeddings.as_ref().ok_or_else(|| {
        CliError::Usage("this subcommand requires --embeddings or CLUSPR_EMBEDDINGS".into())
    })?;
    Ok(load_embeddings(path)?)
}

fn load_stopwords(path: &Option<PathBuf>) -> CliResult<BTreeSet<String>> {
    match path {
        None => Ok(default_stopwords()),
        Some(p) => {
            let body = std::fs::read_to_string(p)
                .map_err(|e| CliError::Data(format!("stopword file {}: {e}", p.display())))?;
            Ok(body
                .lines()
                .map(|l| l.trim().to_lowercase())
                .filter(|l| !l.is_empty())
                .collect())
        }
    }
}

fn read_index(paths: &Paths) -> CliResult<CentralIndex> {
    if !paths.index.exists() {
        return Err(CliError::Data(format!(
            "no index at {}; run build-index first",
            paths.index.display()
        )));
    }
    Ok(CentralIndex::read_file(&paths.index)?)
}

fn read_index_or_empty(paths: &Paths) -> CliResult<CentralIndex> {
    if paths.index.exists() {
        Ok(CentralIndex::read_file(&paths.index)?)
    } else {
        Ok(CentralIndex::new())
    }
}

fn read_clusters(paths: &Paths) -> CliResult<ClusterSet> {
    if !paths.clusters.exists() {
        return Err(CliError::Data(format!(
            "no clusters at {}; run cluster first",
            paths.clusters.display()
        )));
    }
    Ok(ClusterSet::read_file(&paths.clusters)?)
}

fn read_clusters_optional(paths: &Paths) -> CliResult<Option<ClusterSet>> {
    if paths.clusters.exists() {
        Ok(Some(ClusterSet::read_file(&paths.clusters)?))
    } else {
        Ok(None)
    }
}

fn read_abstracts(paths: &Paths) -> CliResult<AbstractsFile> {
    if !paths.abstracts.exists() {
        return Err(CliError::Data(format!(
            "no abstracts at {}; run cluster first",
            paths.abstracts.display()
        )));
    }
    Ok(AbstractsFile::read_file(&paths.abstracts)?)
}

fn read_abstracts_or_empty(paths: &Paths) -> CliResult<Option<AbstractsFile>> {
    if paths.abstracts.exists() {
        Ok(Some(AbstractsFile::read_file(&paths.abstracts)?))
    } else {
        Ok(None)
    }
}

fn read_keymap_checked(paths: &Paths) -> CliResult<Keymap> {
    if !paths.keymap.exists() {
        return Err(CliError::Data(format!(
            "no keymap at {}; run build-index first",
            paths.keymap.display()
        )));
    }
    Ok(read_keymap(&paths.keymap)?)
}

fn read_keymap_or_empty(paths: &Paths) -> CliResult<Keymap> {
    if paths.keymap.exists() {
        Ok(read_keymap(&paths.keymap)?)
    } else {
        Ok(Keymap::new())
    }
}
