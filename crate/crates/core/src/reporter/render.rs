//! Text, CSV and JSON renderings of an [`AuditReport`].

use std::fmt::Write as _;
use std::path::Path;

use super::{AuditReport, CoverageGroupKind};
use crate::detector::Tier;

fn pct(x: f64) -> String {
    format!("{:.1}%", x * 100.0)
}

fn opt_pct(x: Option<f64>) -> String {
    x.map(pct).unwrap_or_else(|| "n/a".into())
}

fn opt_num(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.2}")).unwrap_or_else(|| "n/a".into())
}

fn coverage_name(k: CoverageGroupKind) -> &'static str {
    match k {
        CoverageGroupKind::NoRegionalSections => "no_regional_sections",
        CoverageGroupKind::RegionalProceduralOnly => "regional_procedural_only",
        CoverageGroupKind::Siloed => "siloed",
    }
}

/// Left-aligned first column, right-aligned rest.
fn table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            let pad = w - cell.chars().count();
            if i == 0 {
                s.push_str(cell);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str("  ");
                s.push_str(&" ".repeat(pad));
                s.push_str(cell);
            }
        }
        s.trim_end().to_string()
    };
    let _ = writeln!(out, "{}", line(header.to_vec()));
    let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    for row in rows {
        let _ = writeln!(out, "{}", line(row.iter().map(String::as_str).collect()));
    }
    out.push('\n');
}

pub fn render_text(r: &AuditReport) -> String {
    let mut out = String::new();
    let cats: Vec<&str> = r.categories.iter().map(|c| c.token()).collect();
    let _ = writeln!(out, "Siloed disclosure audit");
    let _ = writeln!(out, "categories: {}", cats.join(", "));
    if let Some(c) = &r.excluded_company {
        let _ = writeln!(out, "excluded company: {c}");
    }
    let _ = writeln!(out, "instances: {}", r.total_instances);
    let _ = writeln!(
        out,
        "affected companies: {} of {} ({}), {:.0}% CI [{}, {}] ({})",
        r.affected_companies,
        r.sample_size,
        pct(r.prevalence),
        r.prevalence_ci.confidence * 100.0,
        pct(r.prevalence_ci.lower),
        pct(r.prevalence_ci.upper),
        r.prevalence_ci.variant,
    );
    let (explicit, implied) = r.explicit_implied;
    let _ = writeln!(out, "explicit / implied: {explicit} / {implied}\n");

    let rows: Vec<Vec<String>> = r
        .category_table
        .iter()
        .map(|c| {
            vec![
                c.category.token().to_string(),
                c.regional_us.to_string(),
                c.international.to_string(),
                c.total.to_string(),
            ]
        })
        .chain(std::iter::once(vec![
            "TOTAL".to_string(),
            r.category_table.iter().map(|c| c.regional_us).sum::<usize>().to_string(),
            r.category_table.iter().map(|c| c.international).sum::<usize>().to_string(),
            r.total_instances.to_string(),
        ]))
        .collect();
    table(&mut out, &["category", "regional_us", "international", "total"], &rows);

    let variant = r.industry_table.first().map(|i| i.ci.variant.to_string()).unwrap_or_default();
    let ci_header = format!("ci ({variant})");
    let rows: Vec<Vec<String>> = r
        .industry_table
        .iter()
        .map(|i| {
            vec![
                i.industry.clone(),
                format!("{}/{}", i.affected, i.companies),
                pct(i.proportion),
                format!("[{}, {}]", pct(i.ci.lower), pct(i.ci.upper)),
            ]
        })
        .collect();
    table(&mut out, &["industry", "affected", "proportion", &ci_header], &rows);

    let rows: Vec<Vec<String>> = Tier::ALL
        .iter()
        .map(|t| vec![t.to_string(), r.tier_totals.get(t).copied().unwrap_or(0).to_string()])
        .collect();
    table(&mut out, &["tier", "instances"], &rows);

    let rows: Vec<Vec<String>> = r
        .ranking
        .iter()
        .enumerate()
        .map(|(i, row)| {
            vec![
                (i + 1).to_string(),
                row.company.clone(),
                row.instances.to_string(),
                row.mark.clone(),
                row.categories.iter().map(|c| c.token()).collect::<Vec<_>>().join(" "),
            ]
        })
        .collect();
    table(&mut out, &["rank", "company", "instances", "mark", "categories"], &rows);

    let rows: Vec<Vec<String>> = r
        .coverage
        .iter()
        .map(|g| {
            vec![
                coverage_name(g.group).to_string(),
                g.companies.to_string(),
                opt_num(g.mean_coverage),
                opt_pct(g.full_coverage_share),
            ]
        })
        .collect();
    table(&mut out, &["coverage group", "companies", "mean categories", "full coverage"], &rows);

    let rows: Vec<Vec<String>> = r
        .segment_rates
        .iter()
        .map(|s| {
            vec![
                s.group.clone(),
                format!("{}/{}", s.siloed_in_group, s.segments_in_group),
                opt_pct(s.rate_in_group),
                format!("{}/{}", s.siloed_outside, s.segments_outside),
                opt_pct(s.rate_outside),
            ]
        })
        .collect();
    table(&mut out, &["segment rate", "in group", "rate", "outside", "rate"], &rows);
    out
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("write to memory");
    for row in rows {
        w.write_record(&row).expect("write to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8 input")
}

/// One CSV document per table, keyed by file name.
pub fn render_csv_tables(r: &AuditReport) -> Vec<(&'static str, String)> {
    let f = |x: f64| format!("{x:.6}");
    let of = |x: Option<f64>| x.map(f).unwrap_or_default();
    vec![
        (
            "summary.csv",
            csv_string(
                &["metric", "value"],
                [
                    ("instances", r.total_instances.to_string()),
                    ("affected_companies", r.affected_companies.to_string()),
                    ("sample_size", r.sample_size.to_string()),
                    ("prevalence", f(r.prevalence)),
                    ("prevalence_percent", pct(r.prevalence)),
                    ("ci_lower", f(r.prevalence_ci.lower)),
                    ("ci_upper", f(r.prevalence_ci.upper)),
                    ("ci_variant", r.prevalence_ci.variant.to_string()),
                    ("explicit", r.explicit_implied.0.to_string()),
                    ("implied", r.explicit_implied.1.to_string()),
                    ("excluded_company", r.excluded_company.clone().unwrap_or_default()),
                ]
                .into_iter()
                .map(|(k, v)| vec![k.to_string(), v]),
            ),
        ),
        (
            "categories.csv",
            csv_string(
                &["category", "regional_us", "international", "total"],
                r.category_table.iter().map(|c| {
                    vec![
                        c.category.token().to_string(),
                        c.regional_us.to_string(),
                        c.international.to_string(),
                        c.total.to_string(),
                    ]
                }),
            ),
        ),
        (
            "industries.csv",
            csv_string(
                &["industry", "affected", "companies", "proportion", "percent", "ci_lower", "ci_upper", "ci_variant"],
                r.industry_table.iter().map(|i| {
                    vec![
                        i.industry.clone(),
                        i.affected.to_string(),
                        i.companies.to_string(),
                        f(i.proportion),
                        pct(i.proportion),
                        f(i.ci.lower),
                        f(i.ci.upper),
                        i.ci.variant.to_string(),
                    ]
                }),
            ),
        ),
        (
            "tiers.csv",
            csv_string(
                &["tier", "instances"],
                Tier::ALL
                    .iter()
                    .map(|t| vec![t.to_string(), r.tier_totals.get(t).copied().unwrap_or(0).to_string()]),
            ),
        ),
        (
            "ranking.csv",
            csv_string(
                &["rank", "company", "instances", "mark", "categories"],
                r.ranking.iter().enumerate().map(|(i, row)| {
                    vec![
                        (i + 1).to_string(),
                        row.company.clone(),
                        row.instances.to_string(),
                        row.mark.clone(),
                        row.categories.iter().map(|c| c.token()).collect::<Vec<_>>().join(" "),
                    ]
                }),
            ),
        ),
        (
            "coverage.csv",
            csv_string(
                &["group", "companies", "mean_categories", "full_coverage_share"],
                r.coverage.iter().map(|g| {
                    vec![
                        coverage_name(g.group).to_string(),
                        g.companies.to_string(),
                        of(g.mean_coverage),
                        of(g.full_coverage_share),
                    ]
                }),
            ),
        ),
        (
            "segment_rates.csv",
            csv_string(
                &["group", "segments_in_group", "siloed_in_group", "segments_outside", "siloed_outside", "rate_in_group", "rate_outside"],
                r.segment_rates.iter().map(|s| {
                    vec![
                        s.group.clone(),
                        s.segments_in_group.to_string(),
                        s.siloed_in_group.to_string(),
                        s.segments_outside.to_string(),
                        s.siloed_outside.to_string(),
                        of(s.rate_in_group),
                        of(s.rate_outside),
                    ]
                }),
            ),
        ),
    ]
}

pub fn render_json(r: &AuditReport) -> String {
    let mut s = serde_json::to_string_pretty(r).expect("report serializes");
    s.push('\n');
    s
}

/// Write `report.txt`, `report.json` and the CSV tables into `dir`.
pub fn write_report(r: &AuditReport, dir: &Path) -> std::io::Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files = vec![("report.txt", render_text(r)), ("report.json", render_json(r))];
    files.extend(render_csv_tables(r));
    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}
