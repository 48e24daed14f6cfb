//! `siloscan` command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use siloscan::classifier::vote::{disputes_template, parse_resolutions, resolve_disputes, vote_corpus};
use siloscan::classifier::{classify_corpus, load_annotators, Annotator, BoundaryRuleSet};
use siloscan::corpus::{load_company_meta, load_corpus, save_company_meta, save_corpus, CompanyMeta};
use siloscan::detector::{detect_corpus, DetectorConfig, DetectorCues, SiloedInstance};
use siloscan::fetcher::{ingest_dir, parse_url_list, slug, FetchConfig, Fetcher, RawPolicyDocument};
use siloscan::fixtures::{write_generated, write_synthetic_fixture};
use siloscan::model::{Category, Company};
use siloscan::pipeline::{make_report, read_jsonl, run_pipeline, segment_policies, PipelineError, RunConfig};
use siloscan::reliability::{agreement_report, validate_against, wilson_interval, CiVariant};
use siloscan::reporter::{render_text, write_report, ReportOptions};
use siloscan::segmenter::JurisdictionLexicon;

#[derive(Parser)]
#[command(name = "siloscan", version, about = "Audit privacy policies for jurisdiction-siloed disclosures")]
struct Cli {
    /// Run configuration (TOML) used by `audit`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Only log warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
    /// Seed for synthetic fixture generation.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download policies listed as `company<TAB>industry<TAB>url`.
    Fetch {
        #[arg(long)]
        urls: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        timeout: u64,
        #[arg(long, default_value_t = 2)]
        retries: u32,
        #[arg(long, default_value_t = 4)]
        parallel: usize,
    },
    /// Register saved HTML files as policy documents.
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        company_meta: Option<PathBuf>,
    },
    /// Split policy HTML files into a segment corpus.
    Segment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        company_meta: Option<PathBuf>,
    },
    /// Label every segment with each configured annotator.
    Classify {
        #[arg(long)]
        corpus: PathBuf,
        /// Defaults to the bundled lexical baseline.
        #[arg(long)]
        annotators: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        parallel: usize,
    },
    /// Derive consensus labels and write a disputes file.
    Vote {
        #[arg(long)]
        corpus: PathBuf,
        /// Defaults to rewriting the input corpus.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Defaults to `<out>.disputes.tsv`.
        #[arg(long)]
        disputes: Option<PathBuf>,
        #[arg(long)]
        ensemble_size: Option<usize>,
    },
    /// Apply expert resolutions to disputed segments.
    Resolve {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        resolutions: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Find siloed disclosures.
    Detect {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        company_meta: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        strict_clarity: bool,
        /// Comma-separated category tokens.
        #[arg(long)]
        categories: Option<String>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        detector_cues: Option<PathBuf>,
    },
    /// Agreement, validation and interval statistics.
    Stats {
        #[command(subcommand)]
        command: StatsCommand,
    },
    /// Build report tables from detected instances.
    Report {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        company_meta: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        exclude: Option<String>,
        #[arg(long)]
        conservative: bool,
        #[arg(long, value_enum, default_value_t = CiArg::Corrected)]
        ci: CiArg,
    },
    /// Run the whole chain on a corpus, a policy directory or a fixture.
    Audit(AuditArgs),
}

#[derive(Subcommand)]
enum StatsCommand {
    /// Inter-annotator agreement over a labeled corpus.
    Agreement {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Compare consensus labels with a reference corpus.
    Validate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Wilson interval for k successes out of n.
    Ci {
        #[arg(long)]
        k: u64,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        corrected: bool,
        #[arg(long, default_value_t = 0.95)]
        confidence: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CiArg {
    Corrected,
    Uncorrected,
}

impl From<CiArg> for CiVariant {
    fn from(c: CiArg) -> Self {
        match c {
            CiArg::Corrected => CiVariant::ContinuityCorrected,
            CiArg::Uncorrected => CiVariant::Uncorrected,
        }
    }
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    policies: Option<PathBuf>,
    /// Use the bundled three-policy fixture.
    #[arg(long, conflicts_with_all = ["corpus", "policies", "synthetic"])]
    fixture: bool,
    /// Generate this many seeded synthetic policies.
    #[arg(long, conflicts_with_all = ["corpus", "policies"])]
    synthetic: Option<usize>,
    #[arg(long)]
    company_meta: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    detector_cues: Option<PathBuf>,
    #[arg(long)]
    annotators: Option<PathBuf>,
    #[arg(long)]
    resolutions: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    strict_clarity: bool,
    #[arg(long, value_enum)]
    ci: Option<CiArg>,
    #[arg(long)]
    conservative: bool,
    #[arg(long)]
    exclude: Option<String>,
    #[arg(long)]
    parallel: Option<usize>,
    /// JSON file of expected numbers; exit 3 on mismatch.
    #[arg(long)]
    check: Option<PathBuf>,
}

/// An error with the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn invalid(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 1,
        error: error.into(),
    }
}

fn failed(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 2,
        error: error.into(),
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            error: e.into(),
        }
    }
}

type Outcome = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Fetch {
            urls,
            out,
            timeout,
            retries,
            parallel,
        } => fetch(&urls, &out, timeout, retries, parallel),
        Command::Ingest {
            input,
            out,
            company_meta,
        } => ingest(&input, &out, company_meta.as_deref()),
        Command::Segment {
            input,
            out,
            lexicon,
            company_meta,
        } => {
            let lexicon = load_lexicon(lexicon.as_deref())?;
            let meta = load_meta(company_meta.as_deref())?.unwrap_or_default();
            let corpus = segment_policies(&input, &meta, &lexicon).map_err(|e| failed(anyhow!(e)))?;
            save_corpus(&corpus, &out).map_err(failed)?;
            info!("{} segments from {} companies", corpus.segment_count(), corpus.company_count());
            Ok(0)
        }
        Command::Classify {
            corpus,
            annotators,
            out,
            parallel,
        } => {
            let mut c = load_corpus(&corpus).map_err(invalid)?;
            let annotators = match annotators {
                Some(p) => load_annotators(&p).map_err(invalid)?,
                None => vec![Annotator::lexical("lexical_baseline", BoundaryRuleSet::default())],
            };
            let summary = classify_corpus(&mut c, &annotators, parallel).map_err(failed)?;
            for (id, n) in &summary.labeled {
                println!("{id}: {n} labeled");
            }
            for (id, ids) in &summary.unlabeled {
                println!("{id}: {} unlabeled", ids.len());
            }
            save_corpus(&c, &out).map_err(failed)?;
            Ok(0)
        }
        Command::Vote {
            corpus,
            out,
            disputes,
            ensemble_size,
        } => {
            let mut c = load_corpus(&corpus).map_err(invalid)?;
            let s = vote_corpus(&mut c, ensemble_size);
            let out = out.unwrap_or(corpus);
            let disputes = disputes.unwrap_or_else(|| with_suffix(&out, ".disputes.tsv"));
            save_corpus(&c, &out).map_err(failed)?;
            std::fs::write(&disputes, disputes_template(&c)).map_err(failed)?;
            println!(
                "unanimous {}  majority {}  disputed {}  kept resolved {}  unlabeled {}  incomplete {}",
                s.unanimous, s.majority, s.disputed, s.kept_resolved, s.unlabeled, s.incomplete
            );
            println!("disputes written to {}", disputes.display());
            Ok(0)
        }
        Command::Resolve {
            corpus,
            resolutions,
            out,
        } => {
            let mut c = load_corpus(&corpus).map_err(invalid)?;
            let text = std::fs::read_to_string(&resolutions)
                .with_context(|| resolutions.display().to_string())
                .map_err(invalid)?;
            let list = parse_resolutions(&text).map_err(|e| invalid(anyhow!("{}: {e}", resolutions.display())))?;
            let s = resolve_disputes(&mut c, &list);
            for w in &s.warnings {
                warn!("{w}");
            }
            save_corpus(&c, out.unwrap_or(corpus)).map_err(failed)?;
            println!("resolved {}  still disputed {}", s.resolved, s.still_disputed);
            Ok(0)
        }
        Command::Detect {
            corpus,
            company_meta,
            out,
            strict_clarity,
            categories,
            lexicon,
            detector_cues,
        } => {
            let c = load_corpus(&corpus).map_err(invalid)?;
            let meta = load_meta(company_meta.as_deref())?.unwrap_or_default().complete_from(&c);
            let mut config = DetectorConfig {
                lexicon: load_lexicon(lexicon.as_deref())?,
                strict_clarity,
                ..DetectorConfig::default()
            };
            if let Some(p) = detector_cues {
                config.cues = DetectorCues::load(&p).map_err(|e| invalid(anyhow!("{}: {e}", p.display())))?;
            }
            if let Some(list) = categories {
                let cats = Category::parse_list(&list).map_err(invalid)?;
                config = config.with_categories(&cats);
            }
            let d = detect_corpus(&c, &meta, &config);
            write_lines(&out, &d.instances).map_err(failed)?;
            if !d.review.is_empty() {
                let review = with_suffix(&out, ".review.jsonl");
                write_lines(&review, &d.review).map_err(failed)?;
                println!("{} pairs queued for review in {}", d.review.len(), review.display());
            }
            let affected: std::collections::BTreeSet<&str> = d.instances.iter().map(|i| i.company.as_str()).collect();
            println!(
                "{} instances across {} of {} companies ({} unlabeled segments skipped)",
                d.instances.len(),
                affected.len(),
                d.companies.len(),
                d.skipped.len()
            );
            Ok(0)
        }
        Command::Stats { command } => stats(command),
        Command::Report {
            corpus,
            instances,
            company_meta,
            out,
            exclude,
            conservative,
            ci,
        } => {
            let c = load_corpus(&corpus).map_err(invalid)?;
            let meta = load_meta(company_meta.as_deref())?.unwrap_or_default().complete_from(&c);
            let list: Vec<SiloedInstance> = read_jsonl(&instances).map_err(|e| invalid(anyhow!(e)))?;
            let options = ReportOptions {
                headline_ci: ci.into(),
                ..ReportOptions::default()
            };
            let report = make_report(&list, &c, &meta, &options, conservative, exclude.as_deref())
                .map_err(|e| failed(anyhow!(e)))?;
            write_report(&report, &out).map_err(failed)?;
            print!("{}", render_text(&report));
            Ok(0)
        }
        Command::Audit(args) => audit(cli.config.as_deref(), cli.seed, args),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_lines<T: serde::Serialize>(path: &Path, items: &[T]) -> anyhow::Result<()> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item)?);
        text.push('\n');
    }
    std::fs::write(path, text).with_context(|| path.display().to_string())
}

fn load_lexicon(path: Option<&Path>) -> Result<JurisdictionLexicon, Failure> {
    match path {
        Some(p) => JurisdictionLexicon::load(p).map_err(|e| invalid(anyhow!("{}: {e}", p.display()))),
        None => Ok(JurisdictionLexicon::default()),
    }
}

fn load_meta(path: Option<&Path>) -> Result<Option<CompanyMeta>, Failure> {
    path.map(|p| load_company_meta(p).map_err(invalid)).transpose()
}

fn fetch(urls: &Path, out: &Path, timeout: u64, retries: u32, parallel: usize) -> Outcome {
    let text = std::fs::read_to_string(urls).with_context(|| urls.display().to_string()).map_err(invalid)?;
    let jobs = parse_url_list(&text).map_err(|e| invalid(anyhow!("{}: {e}", urls.display())))?;
    if parallel == 0 {
        return Err(invalid(anyhow!("--parallel must be at least 1")));
    }
    let fetcher = Fetcher::new(FetchConfig {
        timeout: std::time::Duration::from_secs(timeout),
        retries,
        ..FetchConfig::default()
    })
    .map_err(invalid)?;
    let results = fetcher.fetch_batch(&jobs, parallel);
    let mut docs = Vec::new();
    let mut failures = 0;
    for ((company, url), result) in jobs.iter().zip(results) {
        match result {
            Ok(doc) => docs.push(doc),
            Err(e) => {
                failures += 1;
                warn!("{} ({url}): {e}", company.name);
            }
        }
    }
    save_documents(out, &docs, jobs.iter().map(|(c, _)| c.clone()))?;
    println!("fetched {} of {} policies", docs.len(), jobs.len());
    Ok(if failures > 0 && docs.is_empty() { 2 } else { 0 })
}

fn ingest(input: &Path, out: &Path, company_meta: Option<&Path>) -> Outcome {
    let meta = load_meta(company_meta)?.unwrap_or_default();
    let by_slug: std::collections::BTreeMap<String, Company> =
        meta.iter().map(|c| (slug(&c.name), c.clone())).collect();
    let docs = ingest_dir(input, |stem| {
        by_slug.get(stem).cloned().unwrap_or_else(|| {
            warn!("no company metadata for `{stem}`; using the file name");
            Company::new(stem, "Unknown")
        })
    })
    .map_err(invalid)?;
    let companies: Vec<Company> = docs.iter().map(|d| d.company.clone()).collect();
    save_documents(out, &docs, companies)?;
    println!("ingested {} policies", docs.len());
    Ok(0)
}

/// Write `<slug>.html` per document, `documents.jsonl` and `company_meta.jsonl`.
fn save_documents(out: &Path, docs: &[RawPolicyDocument], companies: impl IntoIterator<Item = Company>) -> Result<(), Failure> {
    std::fs::create_dir_all(out).map_err(failed)?;
    for d in docs {
        std::fs::write(out.join(format!("{}.html", slug(&d.company.name))), &d.body).map_err(failed)?;
    }
    write_lines(&out.join("documents.jsonl"), docs).map_err(failed)?;
    let meta = CompanyMeta::new(companies).map_err(invalid)?;
    save_company_meta(&meta, out.join("company_meta.jsonl")).map_err(failed)
}

fn stats(command: StatsCommand) -> Outcome {
    match command {
        StatsCommand::Agreement { corpus } => {
            let c = load_corpus(&corpus).map_err(invalid)?;
            let r = agreement_report(&c).map_err(failed)?;
            println!("annotators: {}", r.annotators.join(", "));
            println!("items: {}", r.n_items);
            println!("unanimous: {:.1}%", r.unanimous_rate * 100.0);
            println!("majority:  {:.1}%", r.majority_rate * 100.0);
            println!("disputed:  {:.1}%", r.disputed_rate * 100.0);
            for (pair, v) in &r.pairwise {
                println!("pairwise {pair}: {:.1}%", v * 100.0);
            }
            match r.fleiss_kappa {
                Some(k) => println!("fleiss kappa: {k:.3}"),
                None => println!("fleiss kappa: n/a"),
            }
            println!("{}", serde_json::to_string(&r).map_err(failed)?);
        }
        StatsCommand::Validate { pred, reference } => {
            let p = load_corpus(&pred).map_err(invalid)?;
            let r = load_corpus(&reference).map_err(invalid)?;
            let v = validate_against(&p, &r).map_err(failed)?;
            let opt = |x: Option<f64>| x.map(|v| format!("{:.1}%", v * 100.0)).unwrap_or_else(|| "n/a".into());
            println!("items: {}", v.n_items);
            println!("cohen kappa: {:.3}", v.cohen_kappa);
            println!("accuracy: {:.1}%", v.accuracy_overall * 100.0);
            println!("accuracy on unanimous: {}", opt(v.accuracy_on_unanimous));
            println!("accuracy on disputed: {}", opt(v.accuracy_on_disputed));
            println!("{}", serde_json::to_string(&v).map_err(failed)?);
        }
        StatsCommand::Ci {
            k,
            n,
            corrected,
            confidence,
        } => {
            let i = wilson_interval(k, n, confidence, corrected).map_err(invalid)?;
            println!(
                "{k}/{n} = {:.1}%  {:.0}% CI [{:.1}%, {:.1}%] ({})",
                if n > 0 { k as f64 / n as f64 * 100.0 } else { 0.0 },
                confidence * 100.0,
                i.lower * 100.0,
                i.upper * 100.0,
                i.variant
            );
            println!("{}", serde_json::to_string(&i).map_err(failed)?);
        }
    }
    Ok(0)
}

fn audit(config: Option<&Path>, seed: u64, args: AuditArgs) -> Outcome {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($($field:ident <- $value:expr),* $(,)?) => {
            $(if let Some(v) = $value { cfg.$field = Some(v); })*
        };
    }
    set!(
        corpus <- args.corpus,
        policies <- args.policies,
        company_meta <- args.company_meta,
        lexicon <- args.lexicon,
        detector_cues <- args.detector_cues,
        annotators <- args.annotators,
        resolutions <- args.resolutions,
        expected <- args.check,
        exclude <- args.exclude,
    );
    if let Some(out) = args.out {
        cfg.out_dir = out;
    }
    if let Some(ci) = args.ci {
        cfg.ci_variant = ci.into();
    }
    if let Some(p) = args.parallel {
        cfg.parallel = p;
    }
    cfg.strict_clarity |= args.strict_clarity;
    cfg.conservative |= args.conservative;

    if args.fixture || args.synthetic.is_some() {
        let input = cfg.out_dir.join("input");
        match args.synthetic {
            Some(n) => {
                write_generated(&input, seed, n).map_err(failed)?;
            }
            None => write_synthetic_fixture(&input).map_err(failed)?,
        }
        cfg.corpus = None;
        cfg.policies = Some(input.join("policies"));
        cfg.company_meta = Some(input.join("company_meta.jsonl"));
    }

    let outcome = run_pipeline(&cfg)?;
    print!("{}", render_text(&outcome.report));
    if !outcome.reused.is_empty() {
        info!("reused stages: {}", outcome.reused.join(", "));
    }
    for m in &outcome.mismatches {
        println!("CHECK MISMATCH {m}");
    }
    println!("artifacts in {}", cfg.out_dir.display());
    Ok(outcome.exit_code() as u8)
}
