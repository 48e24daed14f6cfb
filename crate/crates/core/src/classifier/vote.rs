//! Majority voting over annotator labels and expert adjudication of the
//! remaining disputes.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use log::warn;
use thiserror::Error;

use crate::corpus::Corpus;
use crate::model::{
    AnnotationSet, Category, ConsensusLabel, ConsensusType, SegmentId, FLAG_DISPUTED, FLAG_INCOMPLETE,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VoteOutcome {
    Agreed(ConsensusLabel),
    /// No single category reached a majority.
    Disputed,
    /// The segment carries no annotations at all.
    NoVotes,
}

/// Merge annotator labels.
///
/// All primaries equal gives `unanimous`; exactly one category with at least
/// two votes gives `majority`; anything else is disputed. A secondary label
/// survives when at least two entries list it (one, for a single annotator)
/// and it differs from the winning primary.
pub fn vote_consensus(entries: &AnnotationSet) -> VoteOutcome {
    let n = entries.len();
    if n == 0 {
        return VoteOutcome::NoVotes;
    }
    let mut votes: BTreeMap<Category, usize> = BTreeMap::new();
    for e in &entries.entries {
        *votes.entry(e.primary).or_default() += 1;
    }
    let (primary, consensus_type) = if votes.len() == 1 {
        (*votes.keys().next().unwrap(), ConsensusType::Unanimous)
    } else {
        let leaders: Vec<Category> = votes.iter().filter(|(_, v)| **v >= 2).map(|(c, _)| *c).collect();
        match leaders[..] {
            [only] => (only, ConsensusType::Majority),
            _ => return VoteOutcome::Disputed,
        }
    };
    let threshold = n.min(2);
    let mut secondary_votes: BTreeMap<Category, usize> = BTreeMap::new();
    for e in &entries.entries {
        let distinct: HashSet<Category> = e.secondary.iter().copied().collect();
        for c in distinct {
            *secondary_votes.entry(c).or_default() += 1;
        }
    }
    let secondary = secondary_votes
        .into_iter()
        .filter(|(c, v)| *v >= threshold && *c != primary)
        .map(|(c, _)| c)
        .collect();
    VoteOutcome::Agreed(ConsensusLabel {
        primary,
        secondary,
        consensus_type,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VoteSummary {
    pub unanimous: usize,
    pub majority: usize,
    pub disputed: usize,
    /// Expert-resolved labels kept from an earlier adjudication.
    pub kept_resolved: usize,
    pub unlabeled: usize,
    pub incomplete: usize,
}

/// Vote every segment. Expert-resolved labels are left untouched; segments
/// with fewer than `ensemble_size` entries are flagged incomplete.
pub fn vote_corpus(corpus: &mut Corpus, ensemble_size: Option<usize>) -> VoteSummary {
    let mut summary = VoteSummary::default();
    for seg in corpus.segments_mut() {
        if let Some(expected) = ensemble_size {
            if seg.annotations.len() < expected {
                seg.set_flag(FLAG_INCOMPLETE);
                summary.incomplete += 1;
            } else {
                seg.clear_flag(FLAG_INCOMPLETE);
            }
        }
        if seg.consensus.as_ref().is_some_and(|c| c.consensus_type == ConsensusType::ExpertResolved) {
            summary.kept_resolved += 1;
            continue;
        }
        match vote_consensus(&seg.annotations) {
            VoteOutcome::Agreed(label) => {
                match label.consensus_type {
                    ConsensusType::Unanimous => summary.unanimous += 1,
                    _ => summary.majority += 1,
                }
                seg.consensus = Some(label);
                seg.clear_flag(FLAG_DISPUTED);
            }
            VoteOutcome::Disputed => {
                seg.consensus = None;
                seg.set_flag(FLAG_DISPUTED);
                summary.disputed += 1;
            }
            VoteOutcome::NoVotes => {
                seg.consensus = None;
                seg.clear_flag(FLAG_DISPUTED);
                summary.unlabeled += 1;
            }
        }
    }
    summary
}

/// A TSV skeleton listing every disputed segment with an empty label column,
/// preceded by comment lines showing each annotator's vote.
pub fn disputes_template(corpus: &Corpus) -> String {
    let mut out = String::from("# segment_id\tPRIMARY\tsecondary,list\n");
    for seg in corpus.segments().filter(|s| s.has_flag(FLAG_DISPUTED)) {
        let votes: Vec<String> = seg
            .annotations
            .entries
            .iter()
            .map(|e| format!("{}={}", e.annotator_id, e.primary))
            .collect();
        let _ = writeln!(out, "# {} [{}] {}", seg.segment_id, seg.heading_path.join(" > "), votes.join(" "));
        let _ = writeln!(out, "{}\t\t", seg.segment_id);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolution {
    pub segment_id: SegmentId,
    pub primary: Category,
    pub secondary: Vec<Category>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("resolution line {line}: {message}")]
pub struct ResolutionError {
    pub line: usize,
    pub message: String,
}

/// Parse `segment_id<TAB>PRIMARY<TAB>sec1,sec2` lines. Blank lines, `#`
/// comments and rows whose primary is still empty are skipped.
pub fn parse_resolutions(text: &str) -> Result<Vec<Resolution>, ResolutionError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
            continue;
        }
        let mut fields = raw.split('\t');
        let id = fields.next().unwrap_or_default().trim();
        let primary = fields.next().unwrap_or_default().trim();
        let secondary = fields.next().unwrap_or_default();
        if fields.next().is_some() {
            return Err(ResolutionError {
                line,
                message: "more than three tab-separated fields".into(),
            });
        }
        if id.is_empty() {
            return Err(ResolutionError {
                line,
                message: "missing segment id".into(),
            });
        }
        if primary.is_empty() {
            continue;
        }
        let err = |e: crate::model::UnknownCategory| ResolutionError {
            line,
            message: e.to_string(),
        };
        let primary: Category = primary.parse().map_err(err)?;
        let mut secondary = Category::parse_list(secondary).map_err(err)?;
        secondary.retain(|c| *c != primary);
        secondary.sort();
        secondary.dedup();
        out.push(Resolution {
            segment_id: SegmentId(id.to_string()),
            primary,
            secondary,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResolveSummary {
    pub resolved: usize,
    pub still_disputed: usize,
    pub warnings: Vec<String>,
}

/// Apply expert labels to disputed segments. Entries for segments that are
/// not disputed, or not in the corpus, are ignored with a warning.
pub fn resolve_disputes(corpus: &mut Corpus, resolutions: &[Resolution]) -> ResolveSummary {
    let mut summary = ResolveSummary::default();
    let mut pending: BTreeMap<&SegmentId, &Resolution> = BTreeMap::new();
    for r in resolutions {
        if pending.insert(&r.segment_id, r).is_some() {
            summary.warnings.push(format!("{}: repeated resolution, last one kept", r.segment_id));
        }
    }
    for seg in corpus.segments_mut() {
        let Some(r) = pending.remove(&seg.segment_id) else {
            if seg.has_flag(FLAG_DISPUTED) {
                summary.still_disputed += 1;
            }
            continue;
        };
        if !seg.has_flag(FLAG_DISPUTED) {
            summary.warnings.push(format!("{}: segment is not disputed, resolution ignored", r.segment_id));
            continue;
        }
        seg.consensus = Some(ConsensusLabel {
            primary: r.primary,
            secondary: r.secondary.clone(),
            consensus_type: ConsensusType::ExpertResolved,
        });
        seg.clear_flag(FLAG_DISPUTED);
        summary.resolved += 1;
    }
    for id in pending.keys() {
        summary.warnings.push(format!("{id}: unknown segment id, resolution ignored"));
    }
    for w in &summary.warnings {
        warn!("{w}");
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AnnotationEntry, PolicySegment};
    use proptest::prelude::*;
    use Category::*;

    fn set(labels: &[(Category, &[Category])]) -> AnnotationSet {
        AnnotationSet {
            entries: labels
                .iter()
                .enumerate()
                .map(|(i, (p, s))| AnnotationEntry {
                    annotator_id: format!("m{i}"),
                    primary: *p,
                    secondary: s.to_vec(),
                })
                .collect(),
        }
    }

    fn agreed(o: VoteOutcome) -> ConsensusLabel {
        match o {
            VoteOutcome::Agreed(l) => l,
            other => panic!("expected agreement, got {other:?}"),
        }
    }

    #[test]
    fn unanimous_majority_disputed() {
        let l = agreed(vote_consensus(&set(&[(Tracking, &[]), (Tracking, &[]), (Tracking, &[])])));
        assert_eq!((l.primary, l.consensus_type), (Tracking, ConsensusType::Unanimous));
        let l = agreed(vote_consensus(&set(&[(Tracking, &[]), (Tracking, &[]), (FirstParty, &[])])));
        assert_eq!((l.primary, l.consensus_type), (Tracking, ConsensusType::Majority));
        assert_eq!(
            vote_consensus(&set(&[(Tracking, &[]), (FirstParty, &[]), (Other, &[])])),
            VoteOutcome::Disputed
        );
        assert_eq!(vote_consensus(&AnnotationSet::default()), VoteOutcome::NoVotes);
    }

    #[test]
    fn two_way_tie_among_four_is_disputed() {
        let s = set(&[(Tracking, &[]), (Tracking, &[]), (Other, &[]), (Other, &[])]);
        assert_eq!(vote_consensus(&s), VoteOutcome::Disputed);
    }

    #[test]
    fn secondary_needs_two_votes_and_excludes_primary() {
        let l = agreed(vote_consensus(&set(&[
            (ThirdParty, &[SaleSharing, Tracking]),
            (SaleSharing, &[ThirdParty, Tracking]),
            (ThirdParty, &[SaleSharing, FirstParty]),
        ])));
        assert_eq!(l.primary, ThirdParty);
        assert_eq!(l.secondary, vec![Tracking, SaleSharing]);
    }

    #[test]
    fn resolution_flow() {
        let mut a = PolicySegment::new("Acme", "acme-0001", vec!["P".into()], "x");
        a.annotations = set(&[(Tracking, &[]), (FirstParty, &[]), (Other, &[])]);
        let mut b = a.clone();
        b.segment_id = SegmentId("acme-0002".into());
        let mut c = a.clone();
        c.segment_id = SegmentId("acme-0003".into());
        c.annotations = set(&[(Tracking, &[]), (Tracking, &[]), (Tracking, &[])]);
        let mut corpus = Corpus::from_segments([a, b, c]);
        let votes = vote_corpus(&mut corpus, Some(3));
        assert_eq!((votes.unanimous, votes.disputed), (1, 2));
        assert!(disputes_template(&corpus).contains("acme-0001\t\t"));

        let file = "# header\nacme-0001\tTRACKING\tFIRST_PARTY\nacme-0002\t\t\nacme-0003\tOTHER\t\nghost-0009\tOTHER\t\n";
        let res = parse_resolutions(file).unwrap();
        assert_eq!(res.len(), 3);
        let summary = resolve_disputes(&mut corpus, &res);
        assert_eq!(summary.resolved, 1);
        assert_eq!(summary.still_disputed, 1);
        assert!(summary.warnings.iter().any(|w| w.contains("acme-0003") && w.contains("not disputed")));
        assert!(summary.warnings.iter().any(|w| w.contains("ghost-0009")));
        let segs: Vec<_> = corpus.segments().collect();
        let first = segs[0].consensus.as_ref().unwrap();
        assert_eq!(first.consensus_type, ConsensusType::ExpertResolved);
        assert_eq!(first.secondary, vec![FirstParty]);
        assert!(!segs[0].has_flag(FLAG_DISPUTED));
        assert!(segs[1].has_flag(FLAG_DISPUTED) && segs[1].consensus.is_none());
        assert_eq!(segs[2].consensus.as_ref().unwrap().primary, Tracking);

        // re-voting keeps the adjudicated label
        let votes = vote_corpus(&mut corpus, Some(3));
        assert_eq!(votes.kept_resolved, 1);
        assert_eq!(
            corpus.segments().next().unwrap().consensus.as_ref().unwrap().consensus_type,
            ConsensusType::ExpertResolved
        );
    }

    #[test]
    fn incomplete_segments_are_flagged() {
        let mut a = PolicySegment::new("Acme", "acme-0001", vec!["P".into()], "x");
        a.annotations = set(&[(Tracking, &[]), (Tracking, &[])]);
        let mut corpus = Corpus::from_segments([a]);
        let votes = vote_corpus(&mut corpus, Some(3));
        assert_eq!(votes.incomplete, 1);
        assert!(corpus.segments().next().unwrap().has_flag(FLAG_INCOMPLETE));
    }

    #[test]
    fn malformed_resolution_lines() {
        assert_eq!(parse_resolutions("x\tNOPE\t").unwrap_err().line, 1);
        assert!(parse_resolutions("\n\tOTHER\t").is_err());
        assert!(parse_resolutions("x\tOTHER\t\textra").is_err());
    }

    fn category() -> impl Strategy<Value = Category> {
        (0..Category::ALL.len()).prop_map(|i| Category::ALL[i])
    }

    fn entry() -> impl Strategy<Value = (Category, Vec<Category>)> {
        (category(), proptest::collection::vec(category(), 0..3))
    }

    proptest! {
        #[test]
        fn permutation_invariant(entries in proptest::collection::vec(entry(), 1..6), seed in any::<u64>()) {
            let base: Vec<(Category, &[Category])> = entries.iter().map(|(p, s)| (*p, s.as_slice())).collect();
            let mut shuffled = base.clone();
            let len = shuffled.len();
            shuffled.rotate_left((seed as usize) % len);
            if seed % 2 == 0 { shuffled.reverse(); }
            prop_assert_eq!(vote_consensus(&set(&base)), vote_consensus(&set(&shuffled)));
        }

        #[test]
        fn three_annotators_partition(a in category(), b in category(), c in category()) {
            let outcome = vote_consensus(&set(&[(a, &[]), (b, &[]), (c, &[])]));
            let unanimous = a == b && b == c;
            let majority = !unanimous && (a == b || b == c || a == c);
            let disputed = a != b && b != c && a != c;
            prop_assert_eq!([unanimous, majority, disputed].iter().filter(|x| **x).count(), 1);
            match outcome {
                VoteOutcome::Agreed(l) if l.consensus_type == ConsensusType::Unanimous => prop_assert!(unanimous),
                VoteOutcome::Agreed(_) => prop_assert!(majority),
                VoteOutcome::Disputed => prop_assert!(disputed),
                VoteOutcome::NoVotes => prop_assert!(false),
            }
        }
    }
}
