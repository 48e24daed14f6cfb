//! Jurisdiction tagging of heading paths.

use std::path::Path;
use std::sync::LazyLock;

use log::debug;
use regex::Regex;
use thiserror::Error;

use crate::model::{JurisdictionScope, ScopeKind};

pub const DEFAULT_LEXICON: &str = include_str!("../../data/jurisdictions.tsv");

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("lexicon line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("reading lexicon: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
struct Cue {
    text: String,
    kind: ScopeKind,
    label: String,
    pattern: Regex,
}

/// Heading cues that mark a section as targeting a legal jurisdiction.
#[derive(Debug, Clone)]
pub struct JurisdictionLexicon {
    cues: Vec<Cue>,
}

static BUNDLED: LazyLock<JurisdictionLexicon> =
    LazyLock::new(|| JurisdictionLexicon::parse(DEFAULT_LEXICON).expect("bundled lexicon parses"));

impl Default for JurisdictionLexicon {
    fn default() -> Self {
        BUNDLED.clone()
    }
}

impl JurisdictionLexicon {
    /// Parse `cue<TAB>kind<TAB>label` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self, LexiconError> {
        let mut cues = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').collect();
            let [cue, kind, label] = fields[..] else {
                return Err(LexiconError::Parse {
                    line,
                    message: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            };
            let kind: ScopeKind = kind.parse().map_err(|message| LexiconError::Parse { line, message })?;
            if kind.is_universal() {
                return Err(LexiconError::Parse {
                    line,
                    message: "cues cannot map to the universal scope".into(),
                });
            }
            let (cue, label) = (cue.trim(), label.trim());
            if cue.is_empty() || label.is_empty() {
                return Err(LexiconError::Parse {
                    line,
                    message: "cue and label must be non-empty".into(),
                });
            }
            let pattern = Regex::new(&format!(r"(?i)(?:^|\W){}(?:$|\W)", regex::escape(cue)))
                .expect("escaped cue is a valid pattern");
            cues.push(Cue {
                text: cue.to_string(),
                kind,
                label: label.to_string(),
                pattern,
            });
        }
        Ok(JurisdictionLexicon { cues })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Add the cues of `other` after this lexicon's own.
    pub fn extend(&mut self, other: JurisdictionLexicon) {
        self.cues.extend(other.cues);
    }

    pub fn len(&self) -> usize {
        self.cues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cues.is_empty()
    }

    /// Best cue within a single heading: US-state cues beat others, then the
    /// longest cue text.
    fn match_heading(&self, heading: &str) -> Option<&Cue> {
        let hits: Vec<&Cue> = self.cues.iter().filter(|c| c.pattern.is_match(heading)).collect();
        if hits.iter().any(|c| c.kind == ScopeKind::UsState) && hits.iter().any(|c| c.kind != ScopeKind::UsState) {
            debug!("heading `{heading}` matches both US-state and other cues; US state wins");
        }
        hits.into_iter().max_by(|a, b| {
            (a.kind == ScopeKind::UsState, a.text.len())
                .cmp(&(b.kind == ScopeKind::UsState, b.text.len()))
                .then_with(|| b.text.cmp(&a.text))
        })
    }
}

/// Scope of a root-to-leaf heading path: the deepest heading carrying a cue
/// decides; a path with no cue is universal.
pub fn tag_jurisdiction(path: &[String], lexicon: &JurisdictionLexicon) -> JurisdictionScope {
    path.iter()
        .rev()
        .find_map(|heading| lexicon.match_heading(heading))
        .map(|cue| JurisdictionScope {
            kind: cue.kind,
            label: cue.label.clone(),
            matched_cue: cue.text.clone(),
        })
        .unwrap_or_else(JurisdictionScope::universal)
}
