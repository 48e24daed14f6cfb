//! Shared corpus vocabulary: taxonomy categories, companies, segments and
//! their annotations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// The 14-value privacy-practice taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    FirstParty,
    ThirdParty,
    UserChoice,
    UserAccess,
    Retention,
    Security,
    PolicyChange,
    Tracking,
    IntlSpecific,
    Other,
    Regional,
    SaleSharing,
    AutomatedDecisions,
    SensitiveData,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown category token `{0}`")]
pub struct UnknownCategory(pub String);

impl Category {
    pub const ALL: [Category; 14] = [
        Category::FirstParty,
        Category::ThirdParty,
        Category::UserChoice,
        Category::UserAccess,
        Category::Retention,
        Category::Security,
        Category::PolicyChange,
        Category::Tracking,
        Category::IntlSpecific,
        Category::Other,
        Category::Regional,
        Category::SaleSharing,
        Category::AutomatedDecisions,
        Category::SensitiveData,
    ];

    /// Categories that describe what a company does with data, as opposed to
    /// how users exercise rights.
    pub const SUBSTANTIVE: [Category; 5] = [
        Category::FirstParty,
        Category::ThirdParty,
        Category::SaleSharing,
        Category::SensitiveData,
        Category::AutomatedDecisions,
    ];

    /// The two categories with an external human-annotated reference.
    pub const REFERENCE_VALIDATED: [Category; 2] = [Category::FirstParty, Category::ThirdParty];

    pub fn token(self) -> &'static str {
        match self {
            Category::FirstParty => "FIRST_PARTY",
            Category::ThirdParty => "THIRD_PARTY",
            Category::UserChoice => "USER_CHOICE",
            Category::UserAccess => "USER_ACCESS",
            Category::Retention => "RETENTION",
            Category::Security => "SECURITY",
            Category::PolicyChange => "POLICY_CHANGE",
            Category::Tracking => "TRACKING",
            Category::IntlSpecific => "INTL_SPECIFIC",
            Category::Other => "OTHER",
            Category::Regional => "REGIONAL",
            Category::SaleSharing => "SALE_SHARING",
            Category::AutomatedDecisions => "AUTOMATED_DECISIONS",
            Category::SensitiveData => "SENSITIVE_DATA",
        }
    }

    pub fn is_substantive(self) -> bool {
        Self::SUBSTANTIVE.contains(&self)
    }

    /// Parse a comma-separated token list; empty input gives an empty list.
    pub fn parse_list(s: &str) -> Result<Vec<Category>, UnknownCategory> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Category {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .iter()
            .copied()
            .find(|c| c.token() == s)
            .ok_or_else(|| UnknownCategory(s.to_string()))
    }
}

impl Serialize for Category {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.token())
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let token = String::deserialize(deserializer)?;
        token.parse().map_err(serde::de::Error::custom)
    }
}

/// Opaque, corpus-unique segment identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegmentId(pub String);

impl SegmentId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SegmentId {
    fn from(s: &str) -> Self {
        SegmentId(s.to_string())
    }
}

/// Company metadata used for tiering and industry tables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Company {
    pub name: String,
    pub industry: String,
    #[serde(default)]
    pub external_verification: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification_citation: Option<String>,
    #[serde(default)]
    pub global_platform_infrastructure: bool,
}

impl Company {
    pub fn new(name: impl Into<String>, industry: impl Into<String>) -> Self {
        Company {
            name: name.into(),
            industry: industry.into(),
            external_verification: false,
            verification_citation: None,
            global_platform_infrastructure: false,
        }
    }
}

/// One annotator's label for one segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationEntry {
    pub annotator_id: String,
    pub primary: Category,
    #[serde(default)]
    pub secondary: Vec<Category>,
}

/// All annotator labels for a segment.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnnotationSet {
    pub entries: Vec<AnnotationEntry>,
}

impl AnnotationSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, annotator_id: &str) -> Option<&AnnotationEntry> {
        self.entries.iter().find(|e| e.annotator_id == annotator_id)
    }

    /// Insert or replace the entry for `entry.annotator_id`.
    pub fn upsert(&mut self, entry: AnnotationEntry) {
        match self.entries.iter_mut().find(|e| e.annotator_id == entry.annotator_id) {
            Some(slot) => *slot = entry,
            None => self.entries.push(entry),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusType {
    Unanimous,
    Majority,
    ExpertResolved,
}

impl fmt::Display for ConsensusType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConsensusType::Unanimous => "unanimous",
            ConsensusType::Majority => "majority",
            ConsensusType::ExpertResolved => "expert_resolved",
        })
    }
}

/// Final label for a segment after voting or adjudication.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusLabel {
    pub primary: Category,
    #[serde(default)]
    pub secondary: Vec<Category>,
    pub consensus_type: ConsensusType,
}

impl ConsensusLabel {
    /// Primary plus secondary labels.
    pub fn categories(&self) -> impl Iterator<Item = Category> + '_ {
        std::iter::once(self.primary).chain(self.secondary.iter().copied())
    }

    pub fn carries(&self, category: Category) -> bool {
        self.primary == category || self.secondary.contains(&category)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeKind {
    Universal,
    UsState,
    NonUs,
    ChildrenOrTransferSpecial,
}

impl ScopeKind {
    pub fn is_universal(self) -> bool {
        self == ScopeKind::Universal
    }
}

impl FromStr for ScopeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "universal" => Ok(ScopeKind::Universal),
            "us_state" => Ok(ScopeKind::UsState),
            "non_us" => Ok(ScopeKind::NonUs),
            "children_or_transfer_special" => Ok(ScopeKind::ChildrenOrTransferSpecial),
            other => Err(format!("unknown jurisdiction kind `{other}`")),
        }
    }
}

/// Which legal jurisdiction, if any, a heading path targets.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JurisdictionScope {
    pub kind: ScopeKind,
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub matched_cue: String,
}

impl JurisdictionScope {
    pub fn universal() -> Self {
        JurisdictionScope {
            kind: ScopeKind::Universal,
            label: String::new(),
            matched_cue: String::new(),
        }
    }

    pub fn is_universal(&self) -> bool {
        self.kind.is_universal()
    }
}

/// Flag attached to segments whose consensus could not be formed by vote.
pub const FLAG_DISPUTED: &str = "disputed";
/// Flag attached to segments with fewer annotator labels than the ensemble size.
pub const FLAG_INCOMPLETE: &str = "incomplete_annotation";
/// Flag attached to preamble text that precedes the first heading.
pub const FLAG_PREAMBLE: &str = "preamble";

/// One heading-delimited unit of policy text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySegment {
    pub company: String,
    #[serde(default)]
    pub industry: String,
    pub segment_id: SegmentId,
    pub heading_path: Vec<String>,
    pub text: String,
    #[serde(default)]
    pub annotations: AnnotationSet,
    #[serde(default)]
    pub consensus: Option<ConsensusLabel>,
    #[serde(default)]
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jurisdiction: Option<JurisdictionScope>,
    /// Fields this version does not know about, kept verbatim.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl PolicySegment {
    pub fn new(
        company: impl Into<String>,
        segment_id: impl Into<String>,
        heading_path: Vec<String>,
        text: impl Into<String>,
    ) -> Self {
        PolicySegment {
            company: company.into(),
            industry: String::new(),
            segment_id: SegmentId(segment_id.into()),
            heading_path,
            text: text.into(),
            annotations: AnnotationSet::default(),
            consensus: None,
            flags: Vec::new(),
            jurisdiction: None,
            extra: serde_json::Map::new(),
        }
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }

    pub fn set_flag(&mut self, flag: &str) {
        if !self.has_flag(flag) {
            self.flags.push(flag.to_string());
        }
    }

    pub fn clear_flag(&mut self, flag: &str) {
        self.flags.retain(|f| f != flag);
    }
}

/// Collapse every whitespace run to a single space and trim.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
