//! Corpus container and its line-delimited JSON persistence.
//!
//! One segment per line. Field order is fixed and unknown fields are written
//! back in sorted order, so saving the same corpus twice yields identical
//! bytes.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::Serialize;
use thiserror::Error;

use crate::model::{normalize_whitespace, Company, ConsensusType, PolicySegment, FLAG_INCOMPLETE};

/// Number of annotators in a complete ensemble.
pub const DEFAULT_ENSEMBLE_SIZE: usize = 3;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: duplicate segment_id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: {violation}")]
    Invalid { line: usize, violation: Violation },
    #[error("company metadata: {0}")]
    Metadata(String),
}

/// A segment's records grouped under one company, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct CompanyGroup {
    pub name: String,
    pub industry: String,
    pub segments: Vec<PolicySegment>,
}

/// A set of policy segments partitioned by company.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub groups: Vec<CompanyGroup>,
}

impl Corpus {
    /// Group segments by company, keeping first-appearance order.
    pub fn from_segments(segments: impl IntoIterator<Item = PolicySegment>) -> Self {
        let mut groups: Vec<CompanyGroup> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        for seg in segments {
            let slot = *index.entry(seg.company.clone()).or_insert_with(|| {
                groups.push(CompanyGroup {
                    name: seg.company.clone(),
                    industry: seg.industry.clone(),
                    segments: Vec::new(),
                });
                groups.len() - 1
            });
            groups[slot].segments.push(seg);
        }
        Corpus { groups }
    }

    pub fn segments(&self) -> impl Iterator<Item = &PolicySegment> {
        self.groups.iter().flat_map(|g| g.segments.iter())
    }

    pub fn segments_mut(&mut self) -> impl Iterator<Item = &mut PolicySegment> {
        self.groups.iter_mut().flat_map(|g| g.segments.iter_mut())
    }

    pub fn into_segments(self) -> impl Iterator<Item = PolicySegment> {
        self.groups.into_iter().flat_map(|g| g.segments)
    }

    pub fn segment_count(&self) -> usize {
        self.groups.iter().map(|g| g.segments.len()).sum()
    }

    pub fn company_count(&self) -> usize {
        self.groups.len()
    }

    pub fn company_names(&self) -> impl Iterator<Item = &str> {
        self.groups.iter().map(|g| g.name.as_str())
    }

    pub fn group(&self, company: &str) -> Option<&CompanyGroup> {
        self.groups.iter().find(|g| g.name == company)
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Copy of the corpus without one company's segments.
    pub fn without_company(&self, company: &str) -> Corpus {
        Corpus {
            groups: self.groups.iter().filter(|g| g.name != company).cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    /// A broken type invariant; the corpus cannot be loaded as-is.
    Error,
    /// Data that downstream statistics must exclude but detection may still use.
    Flag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ViolationKind {
    DuplicateSegmentId,
    EmptyCompany,
    EmptyHeadingPath,
    EmptyText,
    DuplicateAnnotator { annotator_id: String },
    SecondaryContainsPrimary { annotator_id: Option<String> },
    UnanimousDisagrees,
    MajorityWithoutPlurality,
    IncompleteAnnotation { present: usize, expected: usize },
}

/// One invariant failure found by [`validate_corpus`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub segment_id: String,
    pub severity: Severity,
    #[serde(flatten)]
    pub kind: ViolationKind,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "segment `{}`: {:?}", self.segment_id, self.kind)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ValidationOptions {
    /// Expected annotators per segment; `None` disables completeness flags.
    pub ensemble_size: Option<usize>,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            ensemble_size: Some(DEFAULT_ENSEMBLE_SIZE),
        }
    }
}

fn segment_violations(seg: &PolicySegment, opts: ValidationOptions) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |severity, kind| {
        out.push(Violation {
            segment_id: seg.segment_id.0.clone(),
            severity,
            kind,
        })
    };

    if seg.company.trim().is_empty() {
        push(Severity::Error, ViolationKind::EmptyCompany);
    }
    if seg.heading_path.is_empty() {
        push(Severity::Error, ViolationKind::EmptyHeadingPath);
    }
    if normalize_whitespace(&seg.text).is_empty() {
        push(Severity::Error, ViolationKind::EmptyText);
    }

    let mut seen = HashSet::new();
    for entry in &seg.annotations.entries {
        if !seen.insert(entry.annotator_id.as_str()) {
            push(
                Severity::Error,
                ViolationKind::DuplicateAnnotator {
                    annotator_id: entry.annotator_id.clone(),
                },
            );
        }
        if entry.secondary.contains(&entry.primary) {
            push(
                Severity::Error,
                ViolationKind::SecondaryContainsPrimary {
                    annotator_id: Some(entry.annotator_id.clone()),
                },
            );
        }
    }

    if let Some(consensus) = &seg.consensus {
        if consensus.secondary.contains(&consensus.primary) {
            push(
                Severity::Error,
                ViolationKind::SecondaryContainsPrimary { annotator_id: None },
            );
        }
        let primaries: Vec<_> = seg.annotations.entries.iter().map(|e| e.primary).collect();
        match consensus.consensus_type {
            ConsensusType::Unanimous => {
                if primaries.iter().any(|p| *p != consensus.primary) {
                    push(Severity::Error, ViolationKind::UnanimousDisagrees);
                }
            }
            ConsensusType::Majority if primaries.len() == 3 => {
                let votes = primaries.iter().filter(|p| **p == consensus.primary).count();
                if votes < 2 {
                    push(Severity::Error, ViolationKind::MajorityWithoutPlurality);
                }
            }
            _ => {}
        }
    }

    if let Some(expected) = opts.ensemble_size {
        let present = seg.annotations.len();
        if present < expected || seg.has_flag(FLAG_INCOMPLETE) {
            push(
                Severity::Flag,
                ViolationKind::IncompleteAnnotation { present, expected },
            );
        }
    }
    out
}

/// Check every corpus invariant. Returns an empty list iff all hold.
pub fn validate_corpus(corpus: &Corpus, opts: ValidationOptions) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for seg in corpus.segments() {
        if !ids.insert(seg.segment_id.as_str()) {
            out.push(Violation {
                segment_id: seg.segment_id.0.clone(),
                severity: Severity::Error,
                kind: ViolationKind::DuplicateSegmentId,
            });
        }
        out.extend(segment_violations(seg, opts));
    }
    out
}

/// Load a line-delimited corpus file, rejecting any record that breaks a
/// type invariant.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut segments = Vec::new();
    let mut ids = HashSet::new();
    let structural = ValidationOptions { ensemble_size: None };

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let seg: PolicySegment = serde_json::from_str(&line).map_err(|source| CorpusError::Malformed {
            line: line_no,
            source,
        })?;
        if !ids.insert(seg.segment_id.0.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: seg.segment_id.0,
            });
        }
        if let Some(violation) = segment_violations(&seg, structural)
            .into_iter()
            .find(|v| v.severity == Severity::Error)
        {
            return Err(CorpusError::Invalid {
                line: line_no,
                violation,
            });
        }
        segments.push(seg);
    }
    Ok(Corpus::from_segments(segments))
}

/// Serialize a corpus into its line-delimited form.
pub fn write_corpus<W: Write>(corpus: &Corpus, mut out: W) -> std::io::Result<()> {
    for seg in corpus.segments() {
        serde_json::to_writer(&mut out, seg)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_corpus(corpus, BufWriter::new(file)).map_err(io_err)
}

/// Industry tags shipped with the tool. Unknown tags warn but load.
pub const DEFAULT_INDUSTRIES: &str = include_str!("../data/industries.txt");

pub fn industry_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// Company metadata keyed by company name.
#[derive(Debug, Clone, Default)]
pub struct CompanyMeta {
    companies: BTreeMap<String, Company>,
}

impl CompanyMeta {
    pub fn new(companies: impl IntoIterator<Item = Company>) -> Result<Self, CorpusError> {
        let mut map = BTreeMap::new();
        for c in companies {
            if c.name.trim().is_empty() {
                return Err(CorpusError::Metadata("company with empty name".into()));
            }
            if c.external_verification
                && c.verification_citation.as_deref().is_none_or(|s| s.trim().is_empty())
            {
                return Err(CorpusError::Metadata(format!(
                    "`{}` is marked externally verified without a citation",
                    c.name
                )));
            }
            if map.insert(c.name.clone(), c).is_some() {
                return Err(CorpusError::Metadata("duplicate company name".into()));
            }
        }
        Ok(CompanyMeta { companies: map })
    }

    /// Metadata with default flags for every company in `corpus`.
    pub fn from_corpus(corpus: &Corpus) -> Self {
        CompanyMeta {
            companies: corpus
                .groups
                .iter()
                .map(|g| (g.name.clone(), Company::new(&g.name, &g.industry)))
                .collect(),
        }
    }

    /// Fill in any corpus company missing from this metadata with defaults.
    pub fn complete_from(mut self, corpus: &Corpus) -> Self {
        for g in &corpus.groups {
            self.companies
                .entry(g.name.clone())
                .or_insert_with(|| Company::new(&g.name, &g.industry));
        }
        self
    }

    pub fn get(&self, name: &str) -> Option<&Company> {
        self.companies.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Company> {
        self.companies.values()
    }

    pub fn len(&self) -> usize {
        self.companies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.companies.is_empty()
    }

    /// Warn about industry tags outside `known`.
    pub fn check_industries(&self, known: &[String]) -> Vec<String> {
        let unknown: Vec<String> = self
            .companies
            .values()
            .filter(|c| !known.iter().any(|k| k == &c.industry))
            .map(|c| c.name.clone())
            .collect();
        for name in &unknown {
            warn!("company `{name}` has an industry outside the configured list");
        }
        unknown
    }
}

/// Load company metadata records, one JSON object per line.
pub fn load_company_meta(path: impl AsRef<Path>) -> Result<CompanyMeta, CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut companies = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let company: Company = serde_json::from_str(&line).map_err(|source| CorpusError::Malformed {
            line: idx + 1,
            source,
        })?;
        companies.push(company);
    }
    CompanyMeta::new(companies)
}

pub fn save_company_meta(meta: &CompanyMeta, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for c in meta.iter() {
        serde_json::to_writer(&mut out, c).map_err(|e| io_err(e.into()))?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}
