//! Configurable cue lists used by the detector.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::Deserialize;

use crate::classifier::lexical::Cue;
use crate::classifier::RulesError;
use crate::model::Category;

pub const DEFAULT_DETECTOR_CUES: &str = include_str!("../../data/detector_cues.toml");

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCues {
    specificity: BTreeMap<String, Vec<String>>,
    review: RawReview,
    foundational: RawFoundational,
    assertions: BTreeMap<String, Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReview {
    euphemisms: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFoundational {
    cues: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct DetectorCues {
    /// Specific-practice classes in name order.
    pub specificity: Vec<(String, Vec<Cue>)>,
    pub euphemisms: Vec<Cue>,
    pub foundational: Vec<Cue>,
    pub assertions: BTreeMap<Category, Vec<Regex>>,
}

static BUNDLED: LazyLock<DetectorCues> =
    LazyLock::new(|| DetectorCues::parse(DEFAULT_DETECTOR_CUES).expect("bundled detector cues parse"));

impl Default for DetectorCues {
    fn default() -> Self {
        BUNDLED.clone()
    }
}

fn cues(list: &[String]) -> Result<Vec<Cue>, RulesError> {
    list.iter().map(|c| Cue::new(c)).collect()
}

impl DetectorCues {
    pub fn parse(text: &str) -> Result<Self, RulesError> {
        let raw: RawCues = toml::from_str(text)?;
        let specificity = raw
            .specificity
            .iter()
            .map(|(name, list)| Ok((name.clone(), cues(list)?)))
            .collect::<Result<_, RulesError>>()?;
        let mut assertions = BTreeMap::new();
        for (token, patterns) in &raw.assertions {
            let category: Category = token.parse().map_err(|e: crate::model::UnknownCategory| RulesError::Invalid(e.to_string()))?;
            let compiled = patterns
                .iter()
                .map(|p| Regex::new(p).map_err(|e| RulesError::Invalid(format!("{token}: {e}"))))
                .collect::<Result<_, _>>()?;
            assertions.insert(category, compiled);
        }
        Ok(DetectorCues {
            specificity,
            euphemisms: cues(&raw.review.euphemisms)?,
            foundational: cues(&raw.foundational.cues)?,
            assertions,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RulesError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Names of the specific-practice classes mentioned in `text`.
    pub fn specificity_classes(&self, text: &str) -> Vec<&str> {
        self.specificity
            .iter()
            .filter(|(_, cues)| cues.iter().any(|c| c.is_match(text)))
            .map(|(name, _)| name.as_str())
            .collect()
    }

    pub fn is_euphemistic(&self, text: &str) -> bool {
        self.euphemisms.iter().any(|c| c.is_match(text))
    }

    pub fn is_foundational(&self, text: &str) -> bool {
        self.foundational.iter().any(|c| c.is_match(text))
    }

    pub fn asserts(&self, category: Category, text: &str) -> bool {
        self.assertions.get(&category).is_some_and(|ps| ps.iter().any(|p| p.is_match(text)))
    }
}
