//! Aggregate tables over detected instances.

pub mod render;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CompanyGroup, CompanyMeta, Corpus};
use crate::detector::{effective_scope, Explicitness, ScopeClass, SiloedInstance, Tier};
use crate::model::Category;
use crate::reliability::{wilson_interval, CiVariant, Interval, StatsError};
use crate::segmenter::JurisdictionLexicon;

pub use render::{render_csv_tables, render_json, render_text, write_report};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("instance references company `{0}` which is not in the corpus")]
    UnknownCompany(String),
    #[error("report failed consistency check: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone)]
pub struct ReportOptions {
    /// Variant for the overall prevalence interval.
    pub headline_ci: CiVariant,
    /// Variant for per-industry intervals.
    pub industry_ci: CiVariant,
    pub confidence: f64,
    /// Used to decide which companies have jurisdiction-specific sections.
    pub lexicon: JurisdictionLexicon,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            headline_ci: CiVariant::ContinuityCorrected,
            industry_ci: CiVariant::Uncorrected,
            confidence: 0.95,
            lexicon: JurisdictionLexicon::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: Category,
    pub regional_us: usize,
    pub international: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndustryRow {
    pub industry: String,
    pub affected: usize,
    pub companies: usize,
    pub proportion: f64,
    pub ci: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub company: String,
    pub instances: usize,
    /// `✓` verified, `H` global platform, `—` otherwise.
    pub mark: String,
    pub categories: Vec<Category>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageGroupKind {
    NoRegionalSections,
    RegionalProceduralOnly,
    Siloed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageGroup {
    pub group: CoverageGroupKind,
    pub companies: usize,
    /// Mean number of substantive categories disclosed anywhere in the policy.
    pub mean_coverage: Option<f64>,
    /// Share of companies disclosing all substantive categories.
    pub full_coverage_share: Option<f64>,
}

/// Siloed-segment rate inside and outside a company group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRate {
    pub group: String,
    pub segments_in_group: usize,
    pub siloed_in_group: usize,
    pub segments_outside: usize,
    pub siloed_outside: usize,
    /// `None` when the side has no segments.
    pub rate_in_group: Option<f64>,
    pub rate_outside: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    /// Categories the instances were restricted to.
    pub categories: Vec<Category>,
    pub excluded_company: Option<String>,
    pub total_instances: usize,
    pub affected_companies: usize,
    pub sample_size: usize,
    pub prevalence: f64,
    pub prevalence_ci: Interval,
    pub category_table: Vec<CategoryRow>,
    pub industry_table: Vec<IndustryRow>,
    pub tier_totals: BTreeMap<Tier, usize>,
    /// (explicit, implied)
    pub explicit_implied: (usize, usize),
    pub ranking: Vec<RankRow>,
    pub coverage: Vec<CoverageGroup>,
    pub segment_rates: Vec<SegmentRate>,
}

/// Rank companies by instance count, ties alphabetical.
pub fn company_ranking(instances: &[SiloedInstance], meta: &CompanyMeta) -> Vec<RankRow> {
    let mut by_company: BTreeMap<&str, Vec<&SiloedInstance>> = BTreeMap::new();
    for i in instances {
        by_company.entry(&i.company).or_default().push(i);
    }
    let mut rows: Vec<RankRow> = by_company
        .into_iter()
        .map(|(company, list)| {
            let mut counts: BTreeMap<Category, usize> = BTreeMap::new();
            for i in &list {
                *counts.entry(i.category).or_default() += 1;
            }
            let mut categories: Vec<(Category, usize)> = counts.into_iter().collect();
            categories.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            let mark = match meta.get(company) {
                Some(c) if c.external_verification => "✓",
                Some(c) if c.global_platform_infrastructure => "H",
                _ => "—",
            };
            RankRow {
                company: company.to_string(),
                instances: list.len(),
                mark: mark.to_string(),
                categories: categories.into_iter().map(|(c, _)| c).collect(),
            }
        })
        .collect();
    rows.sort_by(|a, b| b.instances.cmp(&a.instances).then_with(|| a.company.cmp(&b.company)));
    rows
}

/// Keep only instances in `categories`.
pub fn restrict_categories(instances: &[SiloedInstance], categories: &[Category]) -> Vec<SiloedInstance> {
    instances.iter().filter(|i| categories.contains(&i.category)).cloned().collect()
}

fn substantive_coverage(group: &CompanyGroup) -> usize {
    Category::SUBSTANTIVE
        .iter()
        .filter(|c| group.segments.iter().any(|s| s.consensus.as_ref().is_some_and(|l| l.carries(**c))))
        .count()
}

fn has_regional_sections(group: &CompanyGroup, lexicon: &JurisdictionLexicon) -> bool {
    group.segments.iter().any(|s| !effective_scope(s, lexicon).is_universal())
}

/// Mean substantive-category coverage for companies without regional
/// sections, with procedural-only regional sections, and with siloed
/// disclosures.
pub fn coverage_comparison(
    corpus: &Corpus,
    instances: &[SiloedInstance],
    lexicon: &JurisdictionLexicon,
) -> Vec<CoverageGroup> {
    let siloed: BTreeSet<&str> = instances.iter().map(|i| i.company.as_str()).collect();
    let mut buckets: BTreeMap<CoverageGroupKind, Vec<usize>> = BTreeMap::new();
    for group in &corpus.groups {
        let kind = if siloed.contains(group.name.as_str()) {
            CoverageGroupKind::Siloed
        } else if has_regional_sections(group, lexicon) {
            CoverageGroupKind::RegionalProceduralOnly
        } else {
            CoverageGroupKind::NoRegionalSections
        };
        buckets.entry(kind).or_default().push(substantive_coverage(group));
    }
    let full = Category::SUBSTANTIVE.len();
    [
        CoverageGroupKind::NoRegionalSections,
        CoverageGroupKind::RegionalProceduralOnly,
        CoverageGroupKind::Siloed,
    ]
    .into_iter()
    .map(|kind| {
        let values = buckets.remove(&kind).unwrap_or_default();
        let n = values.len();
        let (mean, share) = if n == 0 {
            (None, None)
        } else {
            (
                Some(values.iter().sum::<usize>() as f64 / n as f64),
                Some(values.iter().filter(|v| **v == full).count() as f64 / n as f64),
            )
        };
        CoverageGroup {
            group: kind,
            companies: n,
            mean_coverage: mean,
            full_coverage_share: share,
        }
    })
    .collect()
}

/// Share of segments that contributed evidence to an instance, inside and
/// outside the companies selected by `in_group`.
pub fn per_segment_rate(
    corpus: &Corpus,
    instances: &[SiloedInstance],
    group_name: &str,
    in_group: impl Fn(&CompanyGroup) -> bool,
) -> SegmentRate {
    let siloed: BTreeSet<(&str, &str)> = instances
        .iter()
        .flat_map(|i| i.evidence.iter().map(move |e| (i.company.as_str(), e.segment_id.as_str())))
        .collect();
    let mut counts = [[0usize; 2]; 2];
    for group in &corpus.groups {
        let side = if in_group(group) { 0 } else { 1 };
        for seg in &group.segments {
            counts[side][0] += 1;
            if siloed.contains(&(group.name.as_str(), seg.segment_id.as_str())) {
                counts[side][1] += 1;
            }
        }
    }
    let rate = |c: [usize; 2]| (c[0] > 0).then(|| c[1] as f64 / c[0] as f64);
    SegmentRate {
        group: group_name.to_string(),
        segments_in_group: counts[0][0],
        siloed_in_group: counts[0][1],
        segments_outside: counts[1][0],
        siloed_outside: counts[1][1],
        rate_in_group: rate(counts[0]),
        rate_outside: rate(counts[1]),
    }
}

fn industry_of<'a>(meta: &'a CompanyMeta, group: &'a CompanyGroup) -> &'a str {
    meta.get(&group.name).map(|c| c.industry.as_str()).unwrap_or(group.industry.as_str())
}

/// Build the full report. `instances` must come from detection on `corpus`.
pub fn build_report(
    instances: &[SiloedInstance],
    corpus: &Corpus,
    meta: &CompanyMeta,
    options: &ReportOptions,
) -> Result<AuditReport, ReportError> {
    build_inner(instances, corpus, meta, options, Category::SUBSTANTIVE.to_vec(), None)
}

fn build_inner(
    instances: &[SiloedInstance],
    corpus: &Corpus,
    meta: &CompanyMeta,
    options: &ReportOptions,
    categories: Vec<Category>,
    excluded_company: Option<String>,
) -> Result<AuditReport, ReportError> {
    let names: BTreeSet<&str> = corpus.company_names().collect();
    if let Some(bad) = instances.iter().find(|i| !names.contains(i.company.as_str())) {
        return Err(ReportError::UnknownCompany(bad.company.clone()));
    }
    let sample_size = corpus.company_count();
    let affected: BTreeSet<&str> = instances.iter().map(|i| i.company.as_str()).collect();
    let prevalence = if sample_size == 0 { 0.0 } else { affected.len() as f64 / sample_size as f64 };
    let prevalence_ci = if sample_size == 0 {
        Interval {
            lower: 0.0,
            upper: 1.0,
            confidence: options.confidence,
            variant: options.headline_ci,
        }
    } else {
        wilson_interval(
            affected.len() as u64,
            sample_size as u64,
            options.confidence,
            options.headline_ci.is_corrected(),
        )?
    };

    let mut category_counts: BTreeMap<Category, [usize; 2]> = BTreeMap::new();
    let mut tier_totals: BTreeMap<Tier, usize> = Tier::ALL.iter().map(|t| (*t, 0)).collect();
    let mut explicit_implied = (0, 0);
    for i in instances {
        let slot = match i.scope_class {
            ScopeClass::RegionalUs => 0,
            ScopeClass::International => 1,
        };
        category_counts.entry(i.category).or_default()[slot] += 1;
        *tier_totals.entry(i.tier).or_default() += 1;
        match i.explicitness {
            Explicitness::Explicit => explicit_implied.0 += 1,
            Explicitness::Implied => explicit_implied.1 += 1,
        }
    }
    let mut category_table: Vec<CategoryRow> = category_counts
        .into_iter()
        .map(|(category, [us, intl])| CategoryRow {
            category,
            regional_us: us,
            international: intl,
            total: us + intl,
        })
        .collect();
    category_table.sort_by(|a, b| b.total.cmp(&a.total).then(a.category.cmp(&b.category)));

    let mut industries: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for group in &corpus.groups {
        let entry = industries.entry(industry_of(meta, group)).or_default();
        entry.1 += 1;
        if affected.contains(group.name.as_str()) {
            entry.0 += 1;
        }
    }
    let mut industry_table = industries
        .into_iter()
        .map(|(industry, (hit, total))| {
            Ok(IndustryRow {
                industry: industry.to_string(),
                affected: hit,
                companies: total,
                proportion: hit as f64 / total as f64,
                ci: wilson_interval(hit as u64, total as u64, options.confidence, options.industry_ci.is_corrected())?,
            })
        })
        .collect::<Result<Vec<_>, ReportError>>()?;
    industry_table.sort_by(|a, b| {
        b.proportion
            .total_cmp(&a.proportion)
            .then(b.companies.cmp(&a.companies))
            .then_with(|| a.industry.cmp(&b.industry))
    });

    let industry_names: Vec<String> = industry_table.iter().map(|r| r.industry.clone()).collect();
    let company_industry: HashMap<&str, &str> =
        corpus.groups.iter().map(|g| (g.name.as_str(), industry_of(meta, g))).collect();
    let segment_rates = industry_names
        .iter()
        .map(|ind| per_segment_rate(corpus, instances, ind, |g| company_industry[g.name.as_str()] == ind))
        .collect();

    let report = AuditReport {
        categories,
        excluded_company,
        total_instances: instances.len(),
        affected_companies: affected.len(),
        sample_size,
        prevalence,
        prevalence_ci,
        category_table,
        industry_table,
        tier_totals,
        explicit_implied,
        ranking: company_ranking(instances, meta),
        coverage: coverage_comparison(corpus, instances, &options.lexicon),
        segment_rates,
    };
    check_report(&report)?;
    Ok(report)
}

/// Re-verify the report's internal invariants.
pub fn check_report(r: &AuditReport) -> Result<(), ReportError> {
    let fail = |m: String| Err(ReportError::Inconsistent(m));
    let cat_sum: usize = r.category_table.iter().map(|c| c.total).sum();
    if cat_sum != r.total_instances {
        return fail(format!("category totals {cat_sum} != instances {}", r.total_instances));
    }
    if r.category_table.iter().any(|c| c.regional_us + c.international != c.total) {
        return fail("category row scope split does not add up".into());
    }
    let tier_sum: usize = r.tier_totals.values().sum();
    if tier_sum != r.total_instances {
        return fail(format!("tier totals {tier_sum} != instances {}", r.total_instances));
    }
    if r.explicit_implied.0 + r.explicit_implied.1 != r.total_instances {
        return fail("explicit + implied != instances".into());
    }
    let expected = if r.sample_size == 0 { 0.0 } else { r.affected_companies as f64 / r.sample_size as f64 };
    if r.prevalence != expected || r.affected_companies > r.sample_size {
        return fail(format!("prevalence {} != {}/{}", r.prevalence, r.affected_companies, r.sample_size));
    }
    let ranked: usize = r.ranking.iter().map(|row| row.instances).sum();
    if ranked != r.total_instances || r.ranking.len() != r.affected_companies {
        return fail("ranking does not cover every instance".into());
    }
    Ok(())
}

/// Report recomputed without one company.
pub fn sensitivity_exclude(
    instances: &[SiloedInstance],
    corpus: &Corpus,
    meta: &CompanyMeta,
    options: &ReportOptions,
    company: &str,
) -> Result<AuditReport, ReportError> {
    if corpus.group(company).is_none() {
        return Err(ReportError::UnknownCompany(company.to_string()));
    }
    let kept: Vec<SiloedInstance> = instances.iter().filter(|i| i.company != company).cloned().collect();
    build_inner(
        &kept,
        &corpus.without_company(company),
        meta,
        options,
        Category::SUBSTANTIVE.to_vec(),
        Some(company.to_string()),
    )
}

/// Report restricted to the given categories.
pub fn category_report(
    instances: &[SiloedInstance],
    corpus: &Corpus,
    meta: &CompanyMeta,
    options: &ReportOptions,
    categories: &[Category],
) -> Result<AuditReport, ReportError> {
    build_inner(
        &restrict_categories(instances, categories),
        corpus,
        meta,
        options,
        categories.to_vec(),
        None,
    )
}

/// Report over the categories with an external human-annotated reference.
pub fn conservative_estimate(
    instances: &[SiloedInstance],
    corpus: &Corpus,
    meta: &CompanyMeta,
    options: &ReportOptions,
) -> Result<AuditReport, ReportError> {
    category_report(instances, corpus, meta, options, &Category::REFERENCE_VALIDATED)
}
