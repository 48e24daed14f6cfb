//! Deterministic cue-based annotator.
//!
//! Each category has a list of cue phrases; a segment scores one point per
//! distinct cue present. The top score is the provisional primary, then the
//! ordered boundary rules may move it. Every other category that scored is
//! reported as secondary.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::Deserialize;
use thiserror::Error;

use crate::model::{Category, PolicySegment};

pub const DEFAULT_RULES: &str = include_str!("../../data/lexical_cues.toml");

/// Number of boundary distinctions a rule set must encode.
pub const RULE_COUNT: usize = 8;

#[derive(Debug, Error)]
pub enum RulesError {
    #[error("reading rule file: {0}")]
    Io(#[from] std::io::Error),
    #[error("rule file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("rule file: {0}")]
    Invalid(String),
}

/// A compiled cue phrase.
#[derive(Debug, Clone)]
pub struct Cue {
    pub text: String,
    pattern: Regex,
}

impl Cue {
    /// Compile `text`; a trailing `*` makes the last word a prefix.
    pub fn new(text: &str) -> Result<Self, RulesError> {
        let text = text.trim();
        let (stem, prefix) = match text.strip_suffix('*') {
            Some(stem) => (stem, true),
            None => (text, false),
        };
        if stem.trim().is_empty() {
            return Err(RulesError::Invalid(format!("empty cue `{text}`")));
        }
        let body = stem.split_whitespace().map(regex::escape).collect::<Vec<_>>().join(r"\s+");
        let tail = if prefix { r"\w*" } else { "" };
        let pattern = Regex::new(&format!(r"(?i)(?:^|\W){body}{tail}(?:$|\W)"))
            .map_err(|e| RulesError::Invalid(e.to_string()))?;
        Ok(Cue {
            text: text.to_string(),
            pattern,
        })
    }

    pub fn is_match(&self, haystack: &str) -> bool {
        self.pattern.is_match(haystack)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleWinner {
    Prefer(Category),
    /// The best-scoring substantive category.
    BySubstance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleMode {
    /// Fires when any trigger occurs.
    Presence,
    /// Fires when trigger hits reach the loser's own score.
    Focus,
}

#[derive(Debug, Clone)]
pub struct BoundaryRule {
    pub name: String,
    pub triggers: Vec<Cue>,
    pub winner: RuleWinner,
    pub loser: Category,
    pub mode: RuleMode,
    pub note: String,
}

/// Category cue lists plus the ordered boundary rules. Earlier rules take
/// precedence.
#[derive(Debug, Clone)]
pub struct BoundaryRuleSet {
    cues: Vec<(Category, Vec<Cue>)>,
    heading_cues: Vec<(Category, Vec<Cue>)>,
    pub rules: Vec<BoundaryRule>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRules {
    cues: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    heading_cues: BTreeMap<String, Vec<String>>,
    rules: Vec<RawRule>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    name: String,
    triggers: Vec<String>,
    winner: String,
    loser: String,
    mode: String,
    #[serde(default)]
    note: String,
}

fn category(token: &str) -> Result<Category, RulesError> {
    token.parse().map_err(|e: crate::model::UnknownCategory| RulesError::Invalid(e.to_string()))
}

fn compile(map: BTreeMap<String, Vec<String>>) -> Result<Vec<(Category, Vec<Cue>)>, RulesError> {
    let mut out = map
        .into_iter()
        .map(|(token, list)| Ok((category(&token)?, list.iter().map(|c| Cue::new(c)).collect::<Result<_, _>>()?)))
        .collect::<Result<Vec<_>, RulesError>>()?;
    out.sort_by_key(|(c, _)| *c);
    Ok(out)
}

static BUNDLED: LazyLock<BoundaryRuleSet> =
    LazyLock::new(|| BoundaryRuleSet::parse(DEFAULT_RULES).expect("bundled rules parse"));

impl Default for BoundaryRuleSet {
    fn default() -> Self {
        BUNDLED.clone()
    }
}

impl BoundaryRuleSet {
    pub fn parse(text: &str) -> Result<Self, RulesError> {
        let raw: RawRules = toml::from_str(text)?;
        if raw.rules.len() != RULE_COUNT {
            return Err(RulesError::Invalid(format!(
                "expected {RULE_COUNT} boundary rules, found {}",
                raw.rules.len()
            )));
        }
        let rules = raw
            .rules
            .into_iter()
            .map(|r| {
                let winner = match r.winner.as_str() {
                    "SUBSTANCE" => RuleWinner::BySubstance,
                    tok => RuleWinner::Prefer(category(tok)?),
                };
                let mode = match r.mode.as_str() {
                    "presence" => RuleMode::Presence,
                    "focus" => RuleMode::Focus,
                    other => return Err(RulesError::Invalid(format!("rule `{}`: unknown mode `{other}`", r.name))),
                };
                if r.triggers.is_empty() {
                    return Err(RulesError::Invalid(format!("rule `{}` has no triggers", r.name)));
                }
                Ok(BoundaryRule {
                    triggers: r.triggers.iter().map(|c| Cue::new(c)).collect::<Result<_, _>>()?,
                    winner,
                    loser: category(&r.loser)?,
                    mode,
                    note: r.note,
                    name: r.name,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BoundaryRuleSet {
            cues: compile(raw.cues)?,
            heading_cues: compile(raw.heading_cues)?,
            rules,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RulesError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Per-category cue scores, indexed like `Category::ALL`.
    pub fn scores(&self, text: &str, heading: &str) -> [usize; 14] {
        let mut scores = [0usize; 14];
        for (cat, cues) in &self.cues {
            scores[*cat as usize] += cues.iter().filter(|c| c.is_match(text)).count();
        }
        for (cat, cues) in &self.heading_cues {
            scores[*cat as usize] += cues.iter().filter(|c| c.is_match(heading)).count();
        }
        scores
    }
}

fn best(scores: &[usize; 14], among: &[Category]) -> Option<Category> {
    // max_by_key keeps the last maximum; iterate in reverse so ties go to the
    // earlier category.
    among
        .iter()
        .rev()
        .copied()
        .filter(|c| scores[*c as usize] > 0)
        .max_by_key(|c| scores[*c as usize])
}

/// Label a segment with the lexical baseline.
pub fn classify_lexical(segment: &PolicySegment, rules: &BoundaryRuleSet) -> (Category, Vec<Category>) {
    classify_text(&segment.text, &segment.heading_path, rules)
}

pub fn classify_text(text: &str, heading_path: &[String], rules: &BoundaryRuleSet) -> (Category, Vec<Category>) {
    let heading = heading_path.join(" / ");
    let scores = rules.scores(text, &heading);
    let mut primary = best(&scores, &Category::ALL).unwrap_or(Category::Other);
    let mut suppressed = Vec::new();
    let mut fired = vec![false; rules.rules.len()];
    while let Some((i, rule, winner)) = rules.rules.iter().enumerate().find_map(|(i, rule)| {
        if fired[i] || rule.loser != primary {
            return None;
        }
        let hits = rule.triggers.iter().filter(|c| c.is_match(text)).count();
        let triggered = match rule.mode {
            RuleMode::Presence => hits > 0,
            RuleMode::Focus => hits > 0 && hits >= scores[rule.loser as usize],
        };
        if !triggered {
            return None;
        }
        let winner = match rule.winner {
            RuleWinner::Prefer(c) => Some(c),
            RuleWinner::BySubstance => best(&scores, &Category::SUBSTANTIVE),
        }?;
        Some((i, rule, winner))
    }) {
        fired[i] = true;
        log::trace!("rule `{}`: {} -> {}", rule.name, primary, winner);
        if winner == Category::Other {
            suppressed.push(primary);
        }
        primary = winner;
    }
    let secondary = Category::ALL
        .iter()
        .copied()
        .filter(|c| *c != primary && scores[*c as usize] > 0 && !suppressed.contains(c))
        .collect();
    (primary, secondary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn label(text: &str) -> (Category, Vec<Category>) {
        classify_text(text, &["Privacy Policy".to_string()], &BoundaryRuleSet::default())
    }

    #[test]
    fn bundled_rules_have_eight_distinctions() {
        assert_eq!(BoundaryRuleSet::default().rules.len(), RULE_COUNT);
    }

    #[test]
    fn sale_statement() {
        let (p, s) = label("We sell your personal information to third parties.");
        assert_eq!(p, Category::SaleSharing);
        assert!(s.contains(&Category::ThirdParty));
    }

    #[test]
    fn advertising_partners_without_sale_terms() {
        assert_eq!(label("We share your information with our advertising partners").0, Category::ThirdParty);
    }

    #[test]
    fn ai_platitude_is_other() {
        let (p, s) = label("We are committed to responsible AI.");
        assert_eq!(p, Category::Other);
        assert!(!s.contains(&Category::AutomatedDecisions));
    }

    #[test]
    fn biometric_collection_is_sensitive() {
        assert_eq!(
            label("We collect biometric identifiers, including facial geometry").0,
            Category::SensitiveData
        );
    }

    #[test]
    fn substantive_automated_decisions_stay() {
        let (p, _) = label("We use automated systems to make decisions about your eligibility for credit.");
        assert_eq!(p, Category::AutomatedDecisions);
    }

    #[test]
    fn regional_practice_is_classified_by_substance() {
        let path = vec!["Privacy Policy".to_string(), "California Residents".to_string()];
        let rules = BoundaryRuleSet::default();
        let (p, _) = classify_text(
            "We sell personal information to data brokers for cross-context behavioral advertising.",
            &path,
            &rules,
        );
        assert_eq!(p, Category::SaleSharing);
        let (p, _) = classify_text(
            "You may submit a verifiable request through an authorized agent.",
            &path,
            &rules,
        );
        assert_eq!(p, Category::Regional);
    }

    #[test]
    fn regional_sharing_with_sale_terms_chains_to_sale() {
        let path = vec!["Your California Privacy Rights".to_string()];
        let (p, _) = classify_text(
            "We share personal information with partners and we sell it to advertisers.",
            &path,
            &BoundaryRuleSet::default(),
        );
        assert_eq!(p, Category::SaleSharing);
    }

    #[test]
    fn children_in_regional_section_are_intl_specific() {
        let path = vec!["EU Residents".to_string()];
        let (p, _) = classify_text(
            "Our services are not directed to children under 16 in the EU.",
            &path,
            &BoundaryRuleSet::default(),
        );
        assert_eq!(p, Category::IntlSpecific);
    }

    #[test]
    fn opt_out_is_choice_not_access() {
        assert_eq!(
            label("You can withdraw consent or update your preferences, or access settings.").0,
            Category::UserChoice
        );
        assert_eq!(
            label("You may request access to, correction or deletion of your data.").0,
            Category::UserAccess
        );
    }

    #[test]
    fn tracking_and_password_rules() {
        assert_eq!(label("We use cookies, pixels and web beacons.").0, Category::Tracking);
        assert_eq!(label("Keep your password secure and do not share your password.").0, Category::Other);
        assert_eq!(label("We encrypt data and restrict access with access controls.").0, Category::Security);
    }

    #[test]
    fn no_cues_is_other() {
        assert_eq!(label("Lorem ipsum dolor sit amet."), (Category::Other, vec![]));
    }

    #[test]
    fn prefix_cues_and_word_boundaries() {
        let cue = Cue::new("third part*").unwrap();
        assert!(cue.is_match("with third parties."));
        assert!(cue.is_match("a Third  Party"));
        assert!(!cue.is_match("thirdparty"));
        let cue = Cue::new("ai").unwrap();
        assert!(!cue.is_match("we maintain records"));
        assert!(cue.is_match("generative AI tools"));
    }

    #[test]
    fn rule_count_is_enforced() {
        let text = DEFAULT_RULES.split("[[rules]]").next().unwrap().to_string()
            + "[[rules]]\nname='x'\ntriggers=['a']\nwinner='OTHER'\nloser='SECURITY'\nmode='focus'\n";
        assert!(matches!(BoundaryRuleSet::parse(&text), Err(RulesError::Invalid(_))));
        let bad_mode = DEFAULT_RULES.replacen("mode = \"presence\"", "mode = \"sometimes\"", 1);
        assert!(BoundaryRuleSet::parse(&bad_mode).is_err());
    }

    const SHARING: &[&str] = &[
        "We share your information with our advertising partners.",
        "We disclose personal data to service providers and affiliates.",
        "Vendors and third parties may receive data we share.",
        "We may share device data with partners.",
    ];
    const SALE_CUES: &[&str] = &["We sell it.", "This is a sale.", "Do Not Sell My Personal Information.", "Data may be sold."];

    proptest! {
        #[test]
        fn adding_sale_cue_flips_third_party(i in 0..SHARING.len(), j in 0..SALE_CUES.len(), front in any::<bool>()) {
            let rules = BoundaryRuleSet::default();
            let path = ["Privacy Policy".to_string()];
            let base = SHARING[i];
            prop_assume!(classify_text(base, &path, &rules).0 == Category::ThirdParty);
            let text = if front { format!("{} {}", SALE_CUES[j], base) } else { format!("{} {}", base, SALE_CUES[j]) };
            prop_assert_eq!(classify_text(&text, &path, &rules).0, Category::SaleSharing);
        }

        #[test]
        fn classification_is_pure(text in "[a-zA-Z ,.]{0,120}") {
            let rules = BoundaryRuleSet::default();
            let path = ["P".to_string()];
            prop_assert_eq!(classify_text(&text, &path, &rules), classify_text(&text, &path, &rules));
        }
    }
}
