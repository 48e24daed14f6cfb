//! Bundled and seeded synthetic policy fixtures.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{save_company_meta, CompanyMeta, CorpusError};
use crate::fetcher::slug;
use crate::model::Company;

/// The three-policy fixture: (file name, html).
pub const SYNTHETIC_POLICIES: [(&str, &str); 3] = [
    ("acme-games.html", include_str!("../fixtures/synthetic/policies/acme-games.html")),
    ("harbor-health.html", include_str!("../fixtures/synthetic/policies/harbor-health.html")),
    ("northwind-cloud.html", include_str!("../fixtures/synthetic/policies/northwind-cloud.html")),
];

pub const SYNTHETIC_META: &str = include_str!("../fixtures/synthetic/company_meta.jsonl");

/// Write the bundled fixture as `dir/policies/*.html` and
/// `dir/company_meta.jsonl`.
pub fn write_synthetic_fixture(dir: &Path) -> std::io::Result<()> {
    let policies = dir.join("policies");
    std::fs::create_dir_all(&policies)?;
    for (name, html) in SYNTHETIC_POLICIES {
        std::fs::write(policies.join(name), html)?;
    }
    std::fs::write(dir.join("company_meta.jsonl"), SYNTHETIC_META)
}

const INDUSTRIES: [&str; 6] = ["Big Tech", "Gaming", "Healthcare", "Financial Services", "E-commerce", "Travel"];

const NAME_A: [&str; 10] = [
    "Acme", "Blue", "Cedar", "Delta", "Ember", "Falcon", "Granite", "Harbor", "Iris", "Juniper",
];
const NAME_B: [&str; 8] = ["Labs", "Games", "Health", "Pay", "Cloud", "Travel", "Market", "Media"];

/// (heading, body) sections that disclose one practice.
const PRACTICES: [(&str, &str); 5] = [
    (
        "Information We Collect",
        "We collect account information you provide, such as your name and email address, and we automatically collect device identifiers.",
    ),
    (
        "How We Share Information",
        "We share personal information with service providers and affiliates who process it on our behalf.",
    ),
    (
        "Sale of Personal Information",
        "We sell personal information, including browsing history, to advertising partners and data brokers.",
    ),
    (
        "Sensitive Information",
        "We collect biometric identifiers such as scans of face geometry to verify your identity.",
    ),
    (
        "Automated Decision-Making",
        "We use automated processing and profiling to make decisions about account eligibility.",
    ),
];

const BOILERPLATE: [(&str, &str); 3] = [
    ("Data Retention", "We retain account data for as long as your account is active."),
    ("Security", "We protect your data with encryption in transit and at rest."),
    ("Contact Us", "Questions about this policy can be sent to our privacy team."),
];

const REGIONS: [&str; 5] = [
    "California Residents",
    "Virginia Residents",
    "Colorado Residents",
    "European Economic Area Residents",
    "United Kingdom Users",
];

const RIGHTS_ONLY: &str =
    "You may request access to or deletion of your personal information by contacting us, and we will respond within 45 days.";

/// A generated policy with the practices it was built from.
#[derive(Debug, Clone)]
pub struct GeneratedPolicy {
    pub company: Company,
    pub html: String,
    /// Indexes into the practice list disclosed in universal sections.
    pub universal: Vec<usize>,
    /// (region heading, practice index or `None` for rights-only text).
    pub regional: Vec<(String, Option<usize>)>,
}

/// `n` seeded random policies with unique company names.
pub fn generate_policies(seed: u64, n: usize) -> Vec<GeneratedPolicy> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let name = format!(
            "{} {} {}",
            NAME_A.choose(&mut rng).expect("non-empty"),
            NAME_B.choose(&mut rng).expect("non-empty"),
            i + 1
        );
        let industry = INDUSTRIES.choose(&mut rng).expect("non-empty");
        let mut company = Company::new(&name, *industry);
        company.global_platform_infrastructure = rng.gen_bool(0.1);

        let universal: Vec<usize> = (0..PRACTICES.len()).filter(|_| rng.gen_bool(0.6)).collect();
        let region_count = rng.gen_range(0..=2);
        let mut regions: Vec<&str> = REGIONS.to_vec();
        regions.shuffle(&mut rng);
        let regional: Vec<(String, Option<usize>)> = regions[..region_count]
            .iter()
            .map(|r| {
                let practice = rng.gen_bool(0.6).then(|| rng.gen_range(0..PRACTICES.len()));
                (r.to_string(), practice)
            })
            .collect();

        let mut html = String::new();
        let _ = write!(html, "<html><body>\n<h1>{name} Privacy Policy</h1>\n<p>This policy describes how {name} handles personal information.</p>\n");
        for &p in &universal {
            let (h, b) = PRACTICES[p];
            let _ = writeln!(html, "<h2>{h}</h2>\n<p>{b}</p>");
        }
        for (h, b) in BOILERPLATE {
            if rng.gen_bool(0.5) {
                let _ = writeln!(html, "<h2>{h}</h2>\n<p>{b}</p>");
            }
        }
        for (region, practice) in &regional {
            let body = match practice {
                Some(p) => format!("{} {RIGHTS_ONLY}", PRACTICES[*p].1),
                None => RIGHTS_ONLY.to_string(),
            };
            let _ = writeln!(html, "<h2>{region}</h2>\n<p>{body}</p>");
        }
        html.push_str("</body></html>\n");
        out.push(GeneratedPolicy {
            company,
            html,
            universal,
            regional,
        });
    }
    out
}

/// Write generated policies in the bundled fixture layout.
pub fn write_generated(dir: &Path, seed: u64, n: usize) -> Result<Vec<GeneratedPolicy>, CorpusError> {
    let io = |source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let policies = generate_policies(seed, n);
    let pdir = dir.join("policies");
    std::fs::create_dir_all(&pdir).map_err(io)?;
    for p in &policies {
        std::fs::write(pdir.join(format!("{}.html", slug(&p.company.name))), &p.html).map_err(io)?;
    }
    let meta = CompanyMeta::new(policies.iter().map(|p| p.company.clone()))?;
    save_company_meta(&meta, dir.join("company_meta.jsonl"))?;
    Ok(policies)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_company_meta;

    #[test]
    fn same_seed_same_policies() {
        let a = generate_policies(7, 20);
        let b = generate_policies(7, 20);
        assert!(a.iter().zip(&b).all(|(x, y)| x.html == y.html && x.company == y.company));
        let c = generate_policies(8, 20);
        assert!(a.iter().zip(&c).any(|(x, y)| x.html != y.html));
    }

    #[test]
    fn names_are_unique() {
        let p = generate_policies(1, 200);
        let mut names: Vec<_> = p.iter().map(|p| slug(&p.company.name)).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 200);
    }

    #[test]
    fn bundled_fixture_layout() {
        let dir = tempfile::tempdir().unwrap();
        write_synthetic_fixture(dir.path()).unwrap();
        let meta = load_company_meta(dir.path().join("company_meta.jsonl")).unwrap();
        assert_eq!(meta.len(), 3);
        for c in meta.iter() {
            assert!(dir.path().join("policies").join(format!("{}.html", slug(&c.name))).exists());
        }
    }

    #[test]
    fn generated_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_generated(dir.path(), 3, 5).unwrap();
        assert_eq!(p.len(), 5);
        assert_eq!(load_company_meta(dir.path().join("company_meta.jsonl")).unwrap().len(), 5);
    }
}
