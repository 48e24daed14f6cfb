//! End-to-end run: segment, classify, vote, detect, report.
//!
//! Every stage writes its artifacts under the output directory and records
//! input and output digests in `manifest.json`. A stage whose recorded
//! inputs match and whose outputs are still intact is reused.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classifier::vote::{disputes_template, parse_resolutions, resolve_disputes, vote_corpus};
use crate::classifier::{classify_corpus, load_annotators, Annotator, BoundaryRuleSet};
use crate::corpus::{load_company_meta, load_corpus, save_corpus, CompanyMeta, Corpus};
use crate::detector::{detect_corpus, Detection, DetectorConfig, DetectorCues, SiloedInstance, Tier};
use crate::fetcher::{fixture_files, ingest_fixture, slug};
use crate::model::{Category, Company};
use crate::reliability::CiVariant;
use crate::reporter::{self, AuditReport, ReportOptions};
use crate::segmenter::{segment_document, tag_jurisdiction, JurisdictionLexicon};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl PipelineError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 1,
            PipelineError::Stage { .. } => 2,
        }
    }
}

/// Exit status when a `--check` comparison finds mismatches.
pub const EXIT_CHECK_MISMATCH: i32 = 3;

fn stage_err(stage: &'static str) -> impl Fn(String) -> PipelineError {
    move |message| PipelineError::Stage { stage, message }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Segmented corpus, possibly already labeled.
    pub corpus: Option<PathBuf>,
    /// Directory of saved policy HTML files, one per company.
    pub policies: Option<PathBuf>,
    pub company_meta: Option<PathBuf>,
    /// Replaces the bundled jurisdiction lexicon.
    pub lexicon: Option<PathBuf>,
    pub detector_cues: Option<PathBuf>,
    /// Annotator list; the lexical baseline alone when absent.
    pub annotators: Option<PathBuf>,
    pub resolutions: Option<PathBuf>,
    /// Expected numbers for `--check`.
    pub expected: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub strict_clarity: bool,
    pub ci_variant: CiVariant,
    pub conservative: bool,
    pub exclude: Option<String>,
    pub parallel: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            policies: None,
            company_meta: None,
            lexicon: None,
            detector_cues: None,
            annotators: None,
            resolutions: None,
            expected: None,
            out_dir: PathBuf::from("siloscan-out"),
            strict_clarity: false,
            ci_variant: CiVariant::ContinuityCorrected,
            conservative: false,
            exclude: None,
            parallel: 4,
        }
    }
}

impl RunConfig {
    /// Read a TOML config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.corpus,
            &mut cfg.policies,
            &mut cfg.company_meta,
            &mut cfg.lexicon,
            &mut cfg.detector_cues,
            &mut cfg.annotators,
            &mut cfg.resolutions,
            &mut cfg.expected,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let invalid = |m: String| Err(PipelineError::Validation(m));
        match (&self.corpus, &self.policies) {
            (Some(_), Some(_)) => return invalid("give either a corpus or a policies directory, not both".into()),
            (None, None) => return invalid("no input: set a corpus or a policies directory".into()),
            _ => {}
        }
        if self.parallel == 0 {
            return invalid("parallel limit must be at least 1".into());
        }
        let named = [
            ("corpus", &self.corpus),
            ("policies", &self.policies),
            ("company metadata", &self.company_meta),
            ("lexicon", &self.lexicon),
            ("detector cues", &self.detector_cues),
            ("annotator config", &self.annotators),
            ("resolutions", &self.resolutions),
            ("expected results", &self.expected),
        ];
        for (what, path) in named {
            if let Some(p) = path {
                if !p.exists() {
                    return invalid(format!("{what} path {} does not exist", p.display()));
                }
            }
        }
        if let Some(p) = &self.policies {
            if !p.is_dir() {
                return invalid(format!("policies path {} is not a directory", p.display()));
            }
        }
        Ok(())
    }
}

/// Numbers a run is expected to reproduce. Absent fields are not checked.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Expectations {
    pub total_instances: Option<usize>,
    pub affected_companies: Option<usize>,
    pub sample_size: Option<usize>,
    /// category token → [regional_us, international, total]
    pub categories: BTreeMap<Category, [usize; 3]>,
    pub tier_totals: BTreeMap<Tier, usize>,
    pub explicit_implied: Option<[usize; 2]>,
}

/// Human-readable differences between `report` and `expected`.
pub fn compare_expected(report: &AuditReport, expected: &Expectations) -> Vec<String> {
    let mut out = Vec::new();
    let mut cmp = |what: &str, want: Option<usize>, got: usize| {
        if let Some(w) = want {
            if w != got {
                out.push(format!("{what}: expected {w}, got {got}"));
            }
        }
    };
    cmp("instances", expected.total_instances, report.total_instances);
    cmp("affected companies", expected.affected_companies, report.affected_companies);
    cmp("sample size", expected.sample_size, report.sample_size);
    for (cat, want) in &expected.categories {
        let got = report
            .category_table
            .iter()
            .find(|r| r.category == *cat)
            .map(|r| [r.regional_us, r.international, r.total])
            .unwrap_or_default();
        if got != *want {
            out.push(format!("{cat}: expected {want:?}, got {got:?}"));
        }
    }
    for (tier, want) in &expected.tier_totals {
        let got = report.tier_totals.get(tier).copied().unwrap_or(0);
        if got != *want {
            out.push(format!("tier {tier}: expected {want}, got {got}"));
        }
    }
    if let Some(want) = expected.explicit_implied {
        let got = [report.explicit_implied.0, report.explicit_implied.1];
        if got != want {
            out.push(format!("explicit/implied: expected {want:?}, got {got:?}"));
        }
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_digest(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub version: String,
    /// Logical input name → sha256.
    pub inputs: BTreeMap<String, String>,
    pub params: BTreeMap<String, String>,
    /// Output path relative to the output directory → sha256.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    fn load(dir: &Path) -> Option<Manifest> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
        serde_json::from_str(&text).ok()
    }
}

/// Outcome of a completed run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: AuditReport,
    pub manifest: Manifest,
    /// Stages whose previous outputs were reused.
    pub reused: Vec<String>,
    /// Differences against the expected numbers, if any were given.
    pub mismatches: Vec<String>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.mismatches.is_empty() {
            0
        } else {
            EXIT_CHECK_MISMATCH
        }
    }
}

struct Runner<'a> {
    out: &'a Path,
    previous: Option<Manifest>,
    manifest: Manifest,
    reused: Vec<String>,
}

impl Runner<'_> {
    /// Run `body` unless an identical earlier run left intact outputs.
    fn stage(
        &mut self,
        stage: &'static str,
        inputs: BTreeMap<String, String>,
        params: BTreeMap<String, String>,
        body: impl FnOnce(&Path) -> Result<Vec<String>, String>,
    ) -> Result<(), PipelineError> {
        let version = env!("CARGO_PKG_VERSION").to_string();
        let prior = self.previous.as_ref().and_then(|m| {
            m.stages
                .iter()
                .find(|s| s.stage == stage && s.version == version && s.inputs == inputs && s.params == params)
        });
        if let Some(prior) = prior {
            let intact = prior
                .outputs
                .iter()
                .all(|(rel, digest)| file_digest(&self.out.join(rel)).is_ok_and(|d| &d == digest));
            if intact {
                info!("{stage}: inputs unchanged, reusing outputs");
                self.reused.push(stage.to_string());
                self.manifest.stages.push(prior.clone());
                return Ok(());
            }
        }
        info!("{stage}: running");
        let files = body(self.out).map_err(stage_err(stage))?;
        let mut outputs = BTreeMap::new();
        for rel in files {
            let digest = file_digest(&self.out.join(&rel)).map_err(|e| stage_err(stage)(format!("{rel}: {e}")))?;
            outputs.insert(rel, digest);
        }
        self.manifest.stages.push(StageRecord {
            stage: stage.to_string(),
            version,
            inputs,
            params,
            outputs,
        });
        // Record progress so a later failure keeps the finished stages.
        self.write_manifest().map_err(stage_err(stage))
    }

    fn write_manifest(&self) -> Result<(), String> {
        let mut text = serde_json::to_string_pretty(&self.manifest).map_err(|e| e.to_string())?;
        text.push('\n');
        std::fs::write(self.out.join(MANIFEST_FILE), text).map_err(|e| e.to_string())
    }

    fn output_digest(&self, rel: &str) -> Result<String, PipelineError> {
        file_digest(&self.out.join(rel))
            .map_err(|e| PipelineError::Validation(format!("{rel}: {e}")))
    }
}

fn digest_input(name: &str, path: &Path, into: &mut BTreeMap<String, String>) -> Result<(), PipelineError> {
    let d = file_digest(path).map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
    into.insert(name.to_string(), d);
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), String> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item).map_err(|e| e.to_string())?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| e.to_string())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1)))
        .collect()
}

/// Segment every policy file in `dir`; files map to companies by the slug
/// of the company name.
pub fn segment_policies(
    dir: &Path,
    meta: &CompanyMeta,
    lexicon: &JurisdictionLexicon,
) -> Result<Corpus, String> {
    let by_slug: BTreeMap<String, &Company> = meta.iter().map(|c| (slug(&c.name), c)).collect();
    let mut segments = Vec::new();
    for path in fixture_files(dir).map_err(|e| e.to_string())? {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let company = match by_slug.get(&stem) {
            Some(c) => (*c).clone(),
            None => {
                warn!("{}: no company metadata for `{stem}`; using the file name", path.display());
                Company::new(&stem, "Unknown")
            }
        };
        let doc = ingest_fixture(&path, &company).map_err(|e| e.to_string())?;
        let mut segs = segment_document(&doc).map_err(|e| e.to_string())?;
        for s in &mut segs {
            s.jurisdiction = Some(tag_jurisdiction(&s.heading_path, lexicon));
        }
        segments.extend(segs);
    }
    if segments.is_empty() {
        return Err(format!("{}: no policy files", dir.display()));
    }
    Ok(Corpus::from_segments(segments))
}

fn is_labeled(corpus: &Corpus) -> bool {
    !corpus.is_empty() && corpus.segments().all(|s| s.consensus.is_some() || s.has_flag(crate::model::FLAG_DISPUTED))
}

/// Run every stage described by `config`.
pub fn run_pipeline(config: &RunConfig) -> Result<RunOutcome, PipelineError> {
    config.validate()?;
    let out = config.out_dir.as_path();
    std::fs::create_dir_all(out)
        .map_err(|e| PipelineError::Validation(format!("{}: {e}", out.display())))?;

    let lexicon = match &config.lexicon {
        Some(p) => JurisdictionLexicon::load(p).map_err(|e| PipelineError::Validation(format!("{}: {e}", p.display())))?,
        None => JurisdictionLexicon::default(),
    };
    let cues = match &config.detector_cues {
        Some(p) => DetectorCues::load(p).map_err(|e| PipelineError::Validation(format!("{}: {e}", p.display())))?,
        None => DetectorCues::default(),
    };
    let annotators: Vec<Annotator> = match &config.annotators {
        Some(p) => load_annotators(p).map_err(|e| PipelineError::Validation(e.to_string()))?,
        None => vec![Annotator::lexical("lexical_baseline", BoundaryRuleSet::default())],
    };
    let resolutions = match &config.resolutions {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| PipelineError::Validation(format!("{}: {e}", p.display())))?;
            parse_resolutions(&text).map_err(|e| PipelineError::Validation(format!("{}: {e}", p.display())))?
        }
        None => Vec::new(),
    };
    let expected: Option<Expectations> = match &config.expected {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| PipelineError::Validation(format!("{}: {e}", p.display())))?;
            Some(serde_json::from_str(&text).map_err(|e| PipelineError::Validation(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let meta_file = match &config.company_meta {
        Some(p) => Some(load_company_meta(p).map_err(|e| PipelineError::Validation(e.to_string()))?),
        None => None,
    };

    let mut common = BTreeMap::new();
    if let Some(p) = &config.lexicon {
        digest_input("lexicon", p, &mut common)?;
    }
    let mut meta_inputs = BTreeMap::new();
    if let Some(p) = &config.company_meta {
        digest_input("company_meta", p, &mut meta_inputs)?;
    }

    let mut runner = Runner {
        out,
        previous: Manifest::load(out),
        manifest: Manifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            stages: Vec::new(),
        },
        reused: Vec::new(),
    };

    // segment
    let corpus_path: PathBuf = if let Some(dir) = &config.policies {
        let mut inputs = common.clone();
        inputs.extend(meta_inputs.clone());
        for f in fixture_files(dir).map_err(|e| PipelineError::Validation(e.to_string()))? {
            let name = f.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            digest_input(&format!("policy:{name}"), &f, &mut inputs)?;
        }
        let empty = CompanyMeta::default();
        let meta = meta_file.as_ref().unwrap_or(&empty);
        runner.stage("segment", inputs, BTreeMap::new(), |out| {
            let corpus = segment_policies(dir, meta, &lexicon)?;
            save_corpus(&corpus, out.join("segments.jsonl")).map_err(|e| e.to_string())?;
            Ok(vec!["segments.jsonl".into()])
        })?;
        out.join("segments.jsonl")
    } else {
        config.corpus.clone().expect("validated")
    };

    let corpus = load_corpus(&corpus_path).map_err(|e| PipelineError::Validation(e.to_string()))?;
    let labeled = is_labeled(&corpus);

    // classify and vote, unless the corpus already carries consensus labels
    let consensus_path = if labeled {
        info!("corpus already carries consensus labels; skipping classify and vote");
        corpus_path.clone()
    } else {
        let mut inputs = BTreeMap::new();
        digest_input("corpus", &corpus_path, &mut inputs)?;
        if let Some(p) = &config.annotators {
            digest_input("annotators", p, &mut inputs)?;
        }
        let params = BTreeMap::from([(
            "annotators".to_string(),
            annotators.iter().map(|a| a.annotator_id.as_str()).collect::<Vec<_>>().join(","),
        )]);
        let parallel = config.parallel;
        runner.stage("classify", inputs, params, |out| {
            let mut corpus = corpus.clone();
            classify_corpus(&mut corpus, &annotators, parallel).map_err(|e| e.to_string())?;
            save_corpus(&corpus, out.join("annotated.jsonl")).map_err(|e| e.to_string())?;
            Ok(vec!["annotated.jsonl".into()])
        })?;

        let mut inputs = BTreeMap::from([("annotated".to_string(), runner.output_digest("annotated.jsonl")?)]);
        if let Some(p) = &config.resolutions {
            digest_input("resolutions", p, &mut inputs)?;
        }
        let ensemble = if config.annotators.is_some() { annotators.len() } else { 1 };
        let params = BTreeMap::from([("ensemble_size".to_string(), ensemble.to_string())]);
        runner.stage("vote", inputs, params, |out| {
            let mut corpus = load_corpus(out.join("annotated.jsonl")).map_err(|e| e.to_string())?;
            let summary = vote_corpus(&mut corpus, Some(ensemble));
            info!(
                "vote: {} unanimous, {} majority, {} disputed",
                summary.unanimous, summary.majority, summary.disputed
            );
            if !resolutions.is_empty() {
                let r = resolve_disputes(&mut corpus, &resolutions);
                for w in &r.warnings {
                    warn!("resolve: {w}");
                }
            }
            std::fs::write(out.join("disputes.txt"), disputes_template(&corpus)).map_err(|e| e.to_string())?;
            save_corpus(&corpus, out.join("consensus.jsonl")).map_err(|e| e.to_string())?;
            Ok(vec!["consensus.jsonl".into(), "disputes.txt".into()])
        })?;
        out.join("consensus.jsonl")
    };

    // detect
    let mut inputs = common.clone();
    inputs.extend(meta_inputs.clone());
    digest_input("corpus", &consensus_path, &mut inputs)?;
    if let Some(p) = &config.detector_cues {
        digest_input("detector_cues", p, &mut inputs)?;
    }
    let params = BTreeMap::from([("strict_clarity".to_string(), config.strict_clarity.to_string())]);
    let consensus = if labeled {
        corpus
    } else {
        load_corpus(&consensus_path).map_err(|e| PipelineError::Validation(e.to_string()))?
    };
    let meta = meta_file.unwrap_or_default().complete_from(&consensus);
    let detector = DetectorConfig {
        lexicon: lexicon.clone(),
        cues,
        strict_clarity: config.strict_clarity,
        categories: Category::SUBSTANTIVE.to_vec(),
    };
    runner.stage("detect", inputs, params, |out| {
        let Detection {
            instances,
            review,
            skipped,
            ..
        } = detect_corpus(&consensus, &meta, &detector);
        if !skipped.is_empty() {
            warn!("detect: {} unlabeled segments skipped", skipped.len());
        }
        write_jsonl(&out.join("instances.jsonl"), &instances)?;
        write_jsonl(&out.join("review.jsonl"), &review)?;
        Ok(vec!["instances.jsonl".into(), "review.jsonl".into()])
    })?;

    // report
    let instances: Vec<SiloedInstance> =
        read_jsonl(&out.join("instances.jsonl")).map_err(stage_err("report"))?;
    let mut inputs = BTreeMap::from([
        ("instances".to_string(), runner.output_digest("instances.jsonl")?),
        ("corpus".to_string(), runner.output_digest_any(&consensus_path)?),
    ]);
    inputs.extend(meta_inputs);
    inputs.extend(common);
    let params = BTreeMap::from([
        ("ci_variant".to_string(), format!("{:?}", config.ci_variant)),
        ("conservative".to_string(), config.conservative.to_string()),
        ("exclude".to_string(), config.exclude.clone().unwrap_or_default()),
    ]);
    let options = ReportOptions {
        headline_ci: config.ci_variant,
        lexicon,
        ..ReportOptions::default()
    };
    let report = make_report(&instances, &consensus, &meta, &options, config.conservative, config.exclude.as_deref())
        .map_err(stage_err("report"))?;
    runner.stage("report", inputs, params, |out| {
        let files = reporter::write_report(&report, &out.join("report")).map_err(|e| e.to_string())?;
        Ok(files
            .iter()
            .map(|f| format!("report/{}", f.file_name().and_then(|n| n.to_str()).unwrap_or_default()))
            .collect())
    })?;
    runner.write_manifest().map_err(stage_err("report"))?;

    let mismatches = expected.map(|e| compare_expected(&report, &e)).unwrap_or_default();
    for m in &mismatches {
        warn!("check: {m}");
    }
    Ok(RunOutcome {
        report,
        manifest: runner.manifest,
        reused: runner.reused,
        mismatches,
    })
}

impl Runner<'_> {
    fn output_digest_any(&self, path: &Path) -> Result<String, PipelineError> {
        file_digest(path).map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))
    }
}

/// Build the report variant selected by the flags.
pub fn make_report(
    instances: &[SiloedInstance],
    corpus: &Corpus,
    meta: &CompanyMeta,
    options: &ReportOptions,
    conservative: bool,
    exclude: Option<&str>,
) -> Result<AuditReport, String> {
    let chosen: Vec<SiloedInstance> = if conservative {
        reporter::restrict_categories(instances, &Category::REFERENCE_VALIDATED)
    } else {
        instances.to_vec()
    };
    let categories: &[Category] =
        if conservative { &Category::REFERENCE_VALIDATED } else { &Category::SUBSTANTIVE };
    match exclude {
        Some(company) => {
            let reduced = corpus.without_company(company);
            if corpus.group(company).is_none() {
                return Err(format!("unknown company `{company}`"));
            }
            let kept: Vec<SiloedInstance> = chosen.into_iter().filter(|i| i.company != company).collect();
            let mut r = reporter::category_report(&kept, &reduced, meta, options, categories).map_err(|e| e.to_string())?;
            r.excluded_company = Some(company.to_string());
            Ok(r)
        }
        None => reporter::category_report(&chosen, corpus, meta, options, categories).map_err(|e| e.to_string()),
    }
}
