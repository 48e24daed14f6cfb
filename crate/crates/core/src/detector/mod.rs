//! Detection of jurisdiction-siloed disclosures.
//!
//! A practice is siloed when a company discloses it only inside a section
//! addressed to one jurisdiction (a US state, the EU/UK, ...) and nowhere in
//! the sections that apply to every reader.

pub mod cues;

use std::collections::BTreeMap;
use std::fmt;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CompanyMeta, Corpus};
use crate::model::{Category, Company, JurisdictionScope, PolicySegment, ScopeKind, SegmentId};
use crate::segmenter::{tag_jurisdiction, JurisdictionLexicon};

pub use cues::{DetectorCues, DEFAULT_DETECTOR_CUES};

/// Label given to universal-path segments promoted to international scope.
pub const INTERNATIONAL_LABEL: &str = "International";

const EXCERPT_CHARS: usize = 280;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeClass {
    RegionalUs,
    International,
}

impl ScopeClass {
    pub fn of(kind: ScopeKind) -> Option<ScopeClass> {
        match kind {
            ScopeKind::Universal => None,
            ScopeKind::UsState => Some(ScopeClass::RegionalUs),
            ScopeKind::NonUs | ScopeKind::ChildrenOrTransferSpecial => Some(ScopeClass::International),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Explicitness {
    Explicit,
    Implied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Verified,
    StronglyInferred,
    ModeratelyInferred,
    WeaklyInferred,
}

impl Tier {
    pub const ALL: [Tier; 4] = [
        Tier::Verified,
        Tier::StronglyInferred,
        Tier::ModeratelyInferred,
        Tier::WeaklyInferred,
    ];
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Verified => "verified",
            Tier::StronglyInferred => "strongly_inferred",
            Tier::ModeratelyInferred => "moderately_inferred",
            Tier::WeaklyInferred => "weakly_inferred",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    PracticeIdentity,
    Specificity,
    SemanticClarity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceVerdict {
    pub equivalent: bool,
    pub failed_criterion: Option<Criterion>,
    pub matched_universal_segment: Option<SegmentId>,
    /// The match rests on wording a person should confirm.
    #[serde(default)]
    pub needs_review: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub segment_id: SegmentId,
    pub heading_path: Vec<String>,
    pub excerpt: String,
    pub explicitness: Explicitness,
    pub failed_criterion: Criterion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiloedInstance {
    pub company: String,
    pub industry: String,
    pub category: Category,
    /// Lowest-id regional segment behind the instance.
    pub regional_segment_id: SegmentId,
    pub jurisdiction: JurisdictionScope,
    pub scope_class: ScopeClass,
    pub explicitness: Explicitness,
    pub tier: Tier,
    #[serde(default)]
    pub foundational_collection: bool,
    pub evidence: Vec<Evidence>,
}

/// A regional/universal pair whose equivalence needs a human decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub company: String,
    pub category: Category,
    pub regional_segment_id: SegmentId,
    pub universal_segment_id: SegmentId,
    /// What the item counted as while awaiting review.
    pub counted_as_equivalent: bool,
}

#[derive(Debug, Clone)]
pub struct DetectorConfig {
    pub lexicon: JurisdictionLexicon,
    pub cues: DetectorCues,
    /// Count review-queue items as not equivalent.
    pub strict_clarity: bool,
    /// Categories eligible for detection; always a subset of the
    /// substantive categories.
    pub categories: Vec<Category>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            lexicon: JurisdictionLexicon::default(),
            cues: DetectorCues::default(),
            strict_clarity: false,
            categories: Category::SUBSTANTIVE.to_vec(),
        }
    }
}

impl DetectorConfig {
    /// Restrict detection to `categories`; non-substantive entries are dropped
    /// with a warning.
    pub fn with_categories(mut self, categories: &[Category]) -> Self {
        self.categories = categories
            .iter()
            .copied()
            .filter(|c| {
                let ok = c.is_substantive();
                if !ok {
                    warn!("{c} is not a substantive category; ignored for detection");
                }
                ok
            })
            .collect();
        self.categories.sort();
        self.categories.dedup();
        self
    }
}

/// Scope used for detection: the stored scope if any, else the lexicon's
/// reading of the heading path. Universal-path segments labeled
/// INTL_SPECIFIC with substantive secondaries count as international.
pub fn effective_scope(seg: &PolicySegment, lexicon: &JurisdictionLexicon) -> JurisdictionScope {
    let scope = seg.jurisdiction.clone().unwrap_or_else(|| tag_jurisdiction(&seg.heading_path, lexicon));
    if scope.is_universal() {
        if let Some(c) = &seg.consensus {
            if c.primary == Category::IntlSpecific && c.secondary.iter().any(|s| s.is_substantive()) {
                return JurisdictionScope {
                    kind: ScopeKind::ChildrenOrTransferSpecial,
                    label: INTERNATIONAL_LABEL.to_string(),
                    matched_cue: String::new(),
                };
            }
        }
    }
    scope
}

/// Decide whether universal text already discloses the practice a regional
/// segment describes. Candidates are checked in segment-id order.
pub fn equivalence_check(
    regional: &PolicySegment,
    universal: &[&PolicySegment],
    category: Category,
    cues: &DetectorCues,
    strict_clarity: bool,
) -> EquivalenceVerdict {
    let fail = |criterion| EquivalenceVerdict {
        equivalent: false,
        failed_criterion: Some(criterion),
        matched_universal_segment: None,
        needs_review: false,
    };
    let mut same_practice: Vec<&PolicySegment> = universal
        .iter()
        .copied()
        .filter(|u| u.consensus.as_ref().is_some_and(|c| c.carries(category)))
        .collect();
    if same_practice.is_empty() {
        return fail(Criterion::PracticeIdentity);
    }
    same_practice.sort_by(|a, b| a.segment_id.cmp(&b.segment_id));
    let needed = cues.specificity_classes(&regional.text);
    let specific: Vec<&PolicySegment> = same_practice
        .into_iter()
        .filter(|u| {
            let have = cues.specificity_classes(&u.text);
            needed.iter().all(|n| have.contains(n))
        })
        .collect();
    let Some(first) = specific.first() else {
        return fail(Criterion::Specificity);
    };
    if let Some(clear) = specific.iter().find(|u| !cues.is_euphemistic(&u.text)) {
        return EquivalenceVerdict {
            equivalent: true,
            failed_criterion: None,
            matched_universal_segment: Some(clear.segment_id.clone()),
            needs_review: false,
        };
    }
    if strict_clarity {
        EquivalenceVerdict {
            needs_review: true,
            ..fail(Criterion::SemanticClarity)
        }
    } else {
        EquivalenceVerdict {
            equivalent: true,
            failed_criterion: None,
            matched_universal_segment: Some(first.segment_id.clone()),
            needs_review: true,
        }
    }
}

/// Explicit when the text asserts the practice in the first person;
/// otherwise the practice is only implied by rights language.
pub fn classify_explicitness(segment: &PolicySegment, category: Category, cues: &DetectorCues) -> Explicitness {
    if cues.asserts(category, &segment.text) {
        Explicitness::Explicit
    } else {
        Explicitness::Implied
    }
}

/// Universality-inference tier for a populated instance.
pub fn assign_tier(instance: &SiloedInstance, company: &Company) -> Tier {
    if company.external_verification {
        Tier::Verified
    } else if (matches!(instance.category, Category::FirstParty | Category::ThirdParty)
        && instance.scope_class == ScopeClass::International)
        || company.global_platform_infrastructure
    {
        Tier::StronglyInferred
    } else if matches!(instance.category, Category::AutomatedDecisions | Category::SensitiveData)
        || instance.foundational_collection
    {
        Tier::ModeratelyInferred
    } else {
        Tier::WeaklyInferred
    }
}

fn excerpt(text: &str) -> String {
    match text.char_indices().nth(EXCERPT_CHARS) {
        Some((i, _)) => format!("{}...", text[..i].trim_end()),
        None => text.to_string(),
    }
}

/// Result of scanning one company.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompanyDetection {
    pub instances: Vec<SiloedInstance>,
    pub review: Vec<ReviewItem>,
    /// Segments without a consensus label; never guessed.
    pub skipped: Vec<SegmentId>,
    /// Whether any segment sits in a jurisdiction-specific section.
    pub has_regional_sections: bool,
}

/// Siloed instances for one company's segments: one per (category,
/// jurisdiction label) where some regional segment has no equivalent
/// universal disclosure.
pub fn find_siloed(company: &Company, segments: &[PolicySegment], config: &DetectorConfig) -> CompanyDetection {
    let mut ordered: Vec<&PolicySegment> = segments.iter().collect();
    ordered.sort_by(|a, b| a.segment_id.cmp(&b.segment_id));

    let mut out = CompanyDetection::default();
    let mut universal = Vec::new();
    let mut regional = Vec::new();
    for seg in ordered {
        let scope = effective_scope(seg, &config.lexicon);
        if !scope.is_universal() {
            out.has_regional_sections = true;
        }
        if seg.consensus.is_none() {
            warn!("{}: {} has no consensus label; skipped", company.name, seg.segment_id);
            out.skipped.push(seg.segment_id.clone());
            continue;
        }
        if scope.is_universal() {
            universal.push(seg);
        } else {
            regional.push((seg, scope));
        }
    }

    let mut groups: BTreeMap<(Category, String), (JurisdictionScope, SegmentId, Vec<Evidence>)> = BTreeMap::new();
    for (seg, scope) in &regional {
        let label = seg.consensus.as_ref().expect("labeled");
        for category in config.categories.iter().copied().filter(|c| label.carries(*c)) {
            let verdict = equivalence_check(seg, &universal, category, &config.cues, config.strict_clarity);
            if verdict.needs_review {
                out.review.push(ReviewItem {
                    company: company.name.clone(),
                    category,
                    regional_segment_id: seg.segment_id.clone(),
                    universal_segment_id: verdict
                        .matched_universal_segment
                        .clone()
                        .unwrap_or_else(|| SegmentId(String::new())),
                    counted_as_equivalent: verdict.equivalent,
                });
            }
            let Some(failed) = verdict.failed_criterion else { continue };
            let entry = groups
                .entry((category, scope.label.clone()))
                .or_insert_with(|| (scope.clone(), seg.segment_id.clone(), Vec::new()));
            entry.2.push(Evidence {
                segment_id: seg.segment_id.clone(),
                heading_path: seg.heading_path.clone(),
                excerpt: excerpt(&seg.text),
                explicitness: classify_explicitness(seg, category, &config.cues),
                failed_criterion: failed,
            });
        }
    }

    for ((category, _), (jurisdiction, first_id, evidence)) in groups {
        let scope_class = ScopeClass::of(jurisdiction.kind).expect("regional scope");
        let explicitness = if evidence.iter().any(|e| e.explicitness == Explicitness::Explicit) {
            Explicitness::Explicit
        } else {
            Explicitness::Implied
        };
        let foundational = category == Category::FirstParty
            && segments
                .iter()
                .filter(|s| evidence.iter().any(|e| e.segment_id == s.segment_id))
                .any(|s| config.cues.is_foundational(&s.text));
        let mut instance = SiloedInstance {
            company: company.name.clone(),
            industry: company.industry.clone(),
            category,
            regional_segment_id: first_id,
            jurisdiction,
            scope_class,
            explicitness,
            tier: Tier::WeaklyInferred,
            foundational_collection: foundational,
            evidence,
        };
        instance.tier = assign_tier(&instance, company);
        if foundational {
            info!(
                "{}: {} at {} marked foundational collection (tier {})",
                company.name, category, instance.jurisdiction.label, instance.tier
            );
        }
        out.instances.push(instance);
    }
    out
}

/// Detection over a whole corpus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Detection {
    pub instances: Vec<SiloedInstance>,
    pub review: Vec<ReviewItem>,
    pub skipped: Vec<SegmentId>,
    /// Companies with at least one jurisdiction-specific section.
    pub companies_with_regional_sections: Vec<String>,
    /// Every company scanned, in name order.
    pub companies: Vec<String>,
}

/// Run [`find_siloed`] for every company in parallel; output is ordered by
/// company name.
pub fn detect_corpus(corpus: &Corpus, meta: &CompanyMeta, config: &DetectorConfig) -> Detection {
    let mut per_company: Vec<(String, CompanyDetection)> = corpus
        .groups
        .par_iter()
        .map(|group| {
            let company = meta.get(&group.name).cloned().unwrap_or_else(|| {
                warn!("{}: no company metadata; assuming no verification or platform flags", group.name);
                Company::new(&group.name, &group.industry)
            });
            (group.name.clone(), find_siloed(&company, &group.segments, config))
        })
        .collect();
    per_company.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out = Detection::default();
    for (name, det) in per_company {
        if det.has_regional_sections {
            out.companies_with_regional_sections.push(name.clone());
        }
        out.companies.push(name);
        out.instances.extend(det.instances);
        out.review.extend(det.review);
        out.skipped.extend(det.skipped);
    }
    out
}
