//! Heading-structure segmentation of policy HTML.
//!
//! Headings are `h1`–`h6` and any element with `role="heading"` (level from
//! `aria-level`, default 2). Text between two headings belongs to the first.
//! Collapsed or hidden content is kept: DOM presence defines the corpus.

pub mod jurisdiction;

use ego_tree::NodeRef;
use scraper::{Html, Node};
use thiserror::Error;

use crate::fetcher::{slug, RawPolicyDocument};
use crate::model::{normalize_whitespace, PolicySegment, FLAG_PREAMBLE};

pub use jurisdiction::{tag_jurisdiction, JurisdictionLexicon, LexiconError};

/// Heading title given to text that precedes the first heading.
pub const ROOT_TITLE: &str = "Document";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SegmentError {
    #[error("{company}: document has no extractable text")]
    EmptyDocument { company: String },
}

/// A node of the document outline. The root is synthetic with level 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadingNode {
    pub level: u8,
    pub title: String,
    /// Whitespace-normalized text directly under this heading.
    pub body: String,
    pub children: Vec<HeadingNode>,
}

impl HeadingNode {
    /// Pre-order walk yielding each node with its root-to-node title path.
    /// The synthetic root is reported with the path `[ROOT_TITLE]`.
    pub fn walk(&self) -> Vec<(Vec<String>, &HeadingNode)> {
        fn go<'a>(node: &'a HeadingNode, path: &mut Vec<String>, out: &mut Vec<(Vec<String>, &'a HeadingNode)>) {
            for child in &node.children {
                path.push(child.title.clone());
                out.push((path.clone(), child));
                go(child, path, out);
                path.pop();
            }
        }
        let mut out = vec![(vec![ROOT_TITLE.to_string()], self)];
        go(self, &mut Vec::new(), &mut out);
        out
    }

    /// Visible text in document order: each title followed by its body.
    pub fn visible_text(&self) -> String {
        let parts: Vec<&str> = self
            .walk()
            .into_iter()
            .enumerate()
            .flat_map(|(i, (_, n))| {
                let title = if i == 0 { "" } else { n.title.as_str() };
                [title, n.body.as_str()]
            })
            .filter(|s| !s.is_empty())
            .collect();
        parts.join(" ")
    }
}

const SKIPPED: &[&str] = &["script", "style", "noscript", "template", "head", "svg", "iframe"];

const BLOCK: &[&str] = &[
    "address", "article", "aside", "blockquote", "br", "dd", "details", "div", "dl", "dt", "fieldset",
    "figcaption", "figure", "footer", "form", "header", "hr", "li", "main", "nav", "ol", "p", "pre", "section",
    "summary", "table", "tbody", "td", "tfoot", "th", "thead", "tr", "ul", "body", "html",
];

fn heading_level(el: &scraper::node::Element) -> Option<u8> {
    let name = el.name();
    if let [b'h', d @ b'1'..=b'6'] = name.as_bytes() {
        return Some(d - b'0');
    }
    if el.attr("role").is_some_and(|r| r.trim().eq_ignore_ascii_case("heading")) {
        let level = el
            .attr("aria-level")
            .and_then(|l| l.trim().parse::<u8>().ok())
            .filter(|l| (1..=6).contains(l))
            .unwrap_or(2);
        return Some(level);
    }
    None
}

fn collect_text(node: NodeRef<'_, Node>, out: &mut String) {
    match node.value() {
        Node::Text(t) => out.push_str(t),
        Node::Element(el) => {
            if SKIPPED.contains(&el.name()) {
                return;
            }
            let block = BLOCK.contains(&el.name());
            if block {
                out.push(' ');
            }
            for child in node.children() {
                collect_text(child, out);
            }
            if block {
                out.push(' ');
            }
        }
        _ => {
            for child in node.children() {
                collect_text(child, out);
            }
        }
    }
}

struct FlatSection {
    level: u8,
    title: String,
    body: String,
}

fn flatten(node: NodeRef<'_, Node>, sections: &mut Vec<FlatSection>) {
    match node.value() {
        Node::Text(t) => sections.last_mut().expect("root section").body.push_str(t),
        Node::Element(el) => {
            if SKIPPED.contains(&el.name()) {
                return;
            }
            if let Some(level) = heading_level(el) {
                let mut title = String::new();
                collect_text(node, &mut title);
                let title = normalize_whitespace(&title);
                if !title.is_empty() {
                    sections.push(FlatSection {
                        level,
                        title,
                        body: String::new(),
                    });
                    return;
                }
            }
            let block = BLOCK.contains(&el.name());
            if block {
                sections.last_mut().expect("root section").body.push(' ');
            }
            for child in node.children() {
                flatten(child, sections);
            }
            if block {
                sections.last_mut().expect("root section").body.push(' ');
            }
        }
        _ => {
            for child in node.children() {
                flatten(child, sections);
            }
        }
    }
}

fn nest(flat: &[FlatSection], i: &mut usize, parent_level: u8) -> Vec<HeadingNode> {
    let mut out = Vec::new();
    while *i < flat.len() && flat[*i].level > parent_level {
        let s = &flat[*i];
        *i += 1;
        let children = nest(flat, i, s.level);
        out.push(HeadingNode {
            level: s.level,
            title: s.title.clone(),
            body: normalize_whitespace(&s.body),
            children,
        });
    }
    out
}

/// Parse HTML into its heading outline. Malformed markup is repaired by the
/// parser, never rejected.
pub fn parse_outline(html: &str) -> HeadingNode {
    let doc = Html::parse_document(html);
    let mut flat = vec![FlatSection {
        level: 0,
        title: ROOT_TITLE.to_string(),
        body: String::new(),
    }];
    for child in doc.tree.root().children() {
        flatten(child, &mut flat);
    }
    let root_body = normalize_whitespace(&flat[0].body);
    let mut i = 1;
    let children = nest(&flat, &mut i, 0);
    HeadingNode {
        level: 0,
        title: ROOT_TITLE.to_string(),
        body: root_body,
        children,
    }
}

/// Split a policy into one unlabeled segment per heading with a non-empty
/// body, in document order.
pub fn segment_document(doc: &RawPolicyDocument) -> Result<Vec<PolicySegment>, SegmentError> {
    let outline = parse_outline(&doc.body);
    let company = &doc.company;
    let prefix = slug(&company.name);
    let mut segments = Vec::new();
    for (idx, (path, node)) in outline.walk().into_iter().enumerate() {
        if node.body.is_empty() {
            continue;
        }
        let id = format!("{prefix}-{:04}", segments.len() + 1);
        let mut seg = PolicySegment::new(&company.name, id, path, node.body.clone());
        seg.industry = company.industry.clone();
        if idx == 0 {
            seg.set_flag(FLAG_PREAMBLE);
        }
        segments.push(seg);
    }
    if segments.is_empty() {
        return Err(SegmentError::EmptyDocument {
            company: company.name.clone(),
        });
    }
    Ok(segments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fetcher::RetrievalMethod;
    use crate::model::Company;

    fn doc(body: &str) -> RawPolicyDocument {
        RawPolicyDocument {
            company: Company::new("Acme Corp", "Big Tech"),
            source_url: "file://acme.html".into(),
            final_url: None,
            retrieval_method: RetrievalMethod::LocalFixture,
            archive_snapshot_url: None,
            retrieved_at: 0,
            body: body.into(),
        }
    }

    #[test]
    fn two_level_document() {
        let segs = segment_document(&doc("<h1>Policy</h1><p>A</p><h2>Sharing</h2><p>B</p>")).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].heading_path, vec!["Policy"]);
        assert_eq!(segs[0].text, "A");
        assert_eq!(segs[1].heading_path, vec!["Policy", "Sharing"]);
        assert_eq!(segs[1].text, "B");
        assert_eq!(segs[0].segment_id.as_str(), "acme-corp-0001");
        assert!(segs.iter().all(|s| s.annotations.is_empty() && s.consensus.is_none()));
    }

    #[test]
    fn empty_heading_stays_on_child_path() {
        let segs = segment_document(&doc("<h1>Policy</h1><h2>Your Rights</h2><p>Ask us.</p>")).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].heading_path, vec!["Policy", "Your Rights"]);
    }

    #[test]
    fn skipped_levels_keep_order() {
        let html = "<h1>A</h1><p>a</p><h4>B</h4><p>b</p><h2>C</h2><p>c</p><h3>D</h3><p>d</p>";
        let segs = segment_document(&doc(html)).unwrap();
        let paths: Vec<_> = segs.iter().map(|s| s.heading_path.join("/")).collect();
        assert_eq!(paths, vec!["A", "A/B", "A/C", "A/C/D"]);
    }

    #[test]
    fn preamble_goes_under_synthetic_root() {
        let segs = segment_document(&doc("<p>Effective 2026.</p><h1>Policy</h1><p>A</p>")).unwrap();
        assert_eq!(segs[0].heading_path, vec![ROOT_TITLE]);
        assert!(segs[0].has_flag(FLAG_PREAMBLE));
        assert_eq!(segs[1].heading_path, vec!["Policy"]);
    }

    #[test]
    fn aria_headings_count_and_bold_paragraphs_do_not() {
        let html = r#"<h1>Policy</h1><div role="heading" aria-level="2">Cookies</div><p>We use cookies.</p>
                      <p><b>Not a heading</b></p><p>More.</p>"#;
        let segs = segment_document(&doc(html)).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].heading_path, vec!["Policy", "Cookies"]);
        assert_eq!(segs[0].text, "We use cookies. Not a heading More.");
    }

    #[test]
    fn accordion_and_hidden_content_included() {
        let html = r#"<h1>Policy</h1><details><summary>California</summary><div hidden>We sell data.</div></details>
                      <div style="display:none">Hidden note.</div><script>var x = 1;</script>"#;
        let segs = segment_document(&doc(html)).unwrap();
        assert_eq!(segs[0].text, "California We sell data. Hidden note.");
    }

    #[test]
    fn malformed_markup_is_repaired() {
        let segs = segment_document(&doc("<h1>Policy<p>Unclosed <b>bold</h1><p>Body text")).unwrap();
        assert!(!segs.is_empty());
    }

    #[test]
    fn empty_document_errors() {
        let err = segment_document(&doc("<html><head><title>x</title></head><body> <script>1</script></body></html>"))
            .unwrap_err();
        assert!(matches!(err, SegmentError::EmptyDocument { .. }));
        // headings alone carry no body text
        assert!(segment_document(&doc("<h1>Only a heading</h1>")).is_err());
    }

    #[test]
    fn segmentation_is_idempotent() {
        let html = "<h1>P</h1><p>x</p><h2>Q</h2><ul><li>one</li><li>two</li></ul>";
        assert_eq!(segment_document(&doc(html)).unwrap(), segment_document(&doc(html)).unwrap());
    }

    #[test]
    fn outline_visible_text_conserves_content() {
        let html = "<p>pre</p><h1>A</h1><p>a1</p><p>a2</p><h2>B</h2><p>b</p>";
        let outline = parse_outline(html);
        assert_eq!(outline.visible_text(), "pre A a1 a2 B b");
        assert_eq!(outline.children.len(), 1);
        assert_eq!(outline.children[0].children[0].title, "B");
    }
}
