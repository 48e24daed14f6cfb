//! Segment labeling: pluggable annotators and consensus voting.

pub mod lexical;
pub mod remote;
pub mod vote;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::model::{AnnotationEntry, Category, PolicySegment, SegmentId};

pub use lexical::{classify_lexical, BoundaryRule, BoundaryRuleSet, RuleMode, RuleWinner, RulesError};
pub use remote::{RemoteClient, RemoteLabel, RemoteSettings};
pub use vote::{
    disputes_template, parse_resolutions, resolve_disputes, vote_consensus, vote_corpus, Resolution,
    ResolveSummary, VoteOutcome, VoteSummary,
};

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("annotator `{annotator}`: {message}")]
    Config { annotator: String, message: String },
    #[error("annotator `{annotator}` unavailable after {attempts} attempts: {last}")]
    Unavailable {
        annotator: String,
        attempts: u32,
        last: String,
    },
    #[error("annotator `{annotator}` gave no valid label for {segment_id} after {attempts} attempts: {last}")]
    Unparseable {
        annotator: String,
        segment_id: String,
        attempts: u32,
        last: String,
    },
    #[error("annotator id `{0}` appears more than once")]
    DuplicateAnnotator(String),
    #[error(transparent)]
    Rules(#[from] RulesError),
    #[error("annotator config {path}: {message}")]
    File { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotatorKind {
    LexicalBaseline,
    RemoteModel,
}

fn default_retries() -> u32 {
    2
}

fn default_timeout() -> u64 {
    60
}

/// One entry of the annotator config file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatorSpec {
    pub annotator_id: String,
    pub kind: AnnotatorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_template_path: Option<PathBuf>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// Environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Minimum spacing between requests to the endpoint host.
    #[serde(default)]
    pub rate_limit_ms: u64,
    /// Lexical cue file overriding the bundled one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rules_path: Option<PathBuf>,
}

enum Backend {
    Lexical(BoundaryRuleSet),
    Remote(Box<RemoteClient>),
}

pub struct Annotator {
    pub annotator_id: String,
    pub kind: AnnotatorKind,
    backend: Backend,
}

impl Annotator {
    pub fn lexical(annotator_id: &str, rules: BoundaryRuleSet) -> Self {
        Annotator {
            annotator_id: annotator_id.to_string(),
            kind: AnnotatorKind::LexicalBaseline,
            backend: Backend::Lexical(rules),
        }
    }

    pub fn remote(annotator_id: &str, settings: RemoteSettings, rate_limit: Duration) -> Result<Self, ClassifyError> {
        Ok(Annotator {
            annotator_id: annotator_id.to_string(),
            kind: AnnotatorKind::RemoteModel,
            backend: Backend::Remote(Box::new(RemoteClient::new(annotator_id, settings, rate_limit)?)),
        })
    }

    /// Build from a config entry; relative paths resolve against `base`.
    pub fn from_spec(spec: &AnnotatorSpec, base: &Path) -> Result<Self, ClassifyError> {
        let config_err = |message: String| ClassifyError::Config {
            annotator: spec.annotator_id.clone(),
            message,
        };
        match spec.kind {
            AnnotatorKind::LexicalBaseline => {
                let rules = match &spec.rules_path {
                    Some(p) => BoundaryRuleSet::load(base.join(p))?,
                    None => BoundaryRuleSet::default(),
                };
                Ok(Annotator::lexical(&spec.annotator_id, rules))
            }
            AnnotatorKind::RemoteModel => {
                let endpoint = spec.endpoint.clone().ok_or_else(|| config_err("remote annotator needs `endpoint`".into()))?;
                let template_path = spec
                    .prompt_template_path
                    .as_ref()
                    .ok_or_else(|| config_err("remote annotator needs `prompt_template_path`".into()))?;
                let template_path = base.join(template_path);
                let prompt_template = std::fs::read_to_string(&template_path)
                    .map_err(|e| config_err(format!("{}: {e}", template_path.display())))?;
                let api_key = match &spec.api_key_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| config_err(format!("environment variable {var} is not set")))?),
                    None => None,
                };
                let settings = RemoteSettings {
                    endpoint,
                    prompt_template,
                    max_retries: spec.max_retries,
                    api_key,
                    timeout: Duration::from_secs(spec.timeout_secs),
                    retry_backoff: Duration::from_millis(500),
                };
                Annotator::remote(&spec.annotator_id, settings, Duration::from_millis(spec.rate_limit_ms))
            }
        }
    }

    pub fn classify(&self, segment: &PolicySegment) -> Result<(Category, Vec<Category>), ClassifyError> {
        match &self.backend {
            Backend::Lexical(rules) => Ok(classify_lexical(segment, rules)),
            Backend::Remote(client) => client.classify(segment).map(|l| (l.primary, l.secondary)),
        }
    }
}

/// Read the annotator config file (a JSON list of specs).
pub fn load_annotator_specs(path: impl AsRef<Path>) -> Result<Vec<AnnotatorSpec>, ClassifyError> {
    let path = path.as_ref();
    let file_err = |message: String| ClassifyError::File {
        path: path.to_path_buf(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
    let specs: Vec<AnnotatorSpec> = serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))?;
    check_unique(specs.iter().map(|s| s.annotator_id.as_str()))?;
    Ok(specs)
}

/// Build every annotator named in a config file.
pub fn load_annotators(path: impl AsRef<Path>) -> Result<Vec<Annotator>, ClassifyError> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    load_annotator_specs(path)?.iter().map(|s| Annotator::from_spec(s, base)).collect()
}

fn check_unique<'a>(ids: impl Iterator<Item = &'a str>) -> Result<(), ClassifyError> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(ClassifyError::DuplicateAnnotator(id.to_string()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassifySummary {
    /// Labeled segment count per annotator.
    pub labeled: BTreeMap<String, usize>,
    /// Segments an annotator could not label.
    pub unlabeled: BTreeMap<String, Vec<SegmentId>>,
}

/// Run each annotator over every segment and store its entry. Work runs on
/// up to `parallelism` threads; results are merged in corpus order.
pub fn classify_corpus(
    corpus: &mut Corpus,
    annotators: &[Annotator],
    parallelism: usize,
) -> Result<ClassifySummary, ClassifyError> {
    check_unique(annotators.iter().map(|a| a.annotator_id.as_str()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| ClassifyError::Config {
            annotator: "*".into(),
            message: e.to_string(),
        })?;
    let mut summary = ClassifySummary::default();
    for annotator in annotators {
        let results: Vec<Option<(Category, Vec<Category>)>> = {
            let segments: Vec<&PolicySegment> = corpus.segments().collect();
            pool.install(|| {
                segments
                    .par_iter()
                    .map(|seg| match annotator.classify(seg) {
                        Ok(label) => Ok(Some(label)),
                        Err(ClassifyError::Unparseable { .. }) => Ok(None),
                        Err(e) => Err(e),
                    })
                    .collect::<Result<Vec<_>, _>>()
            })?
        };
        let id = &annotator.annotator_id;
        for (seg, result) in corpus.segments_mut().zip(results) {
            match result {
                Some((primary, secondary)) => {
                    seg.annotations.upsert(AnnotationEntry {
                        annotator_id: id.clone(),
                        primary,
                        secondary,
                    });
                    *summary.labeled.entry(id.clone()).or_default() += 1;
                }
                None => {
                    warn!("{id}: {} left unlabeled", seg.segment_id);
                    summary.unlabeled.entry(id.clone()).or_default().push(seg.segment_id.clone());
                }
            }
        }
        info!("{id}: labeled {} segments", summary.labeled.get(id).copied().unwrap_or(0));
    }
    Ok(summary)
}
