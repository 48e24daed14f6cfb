//! Agreement and uncertainty statistics for the annotation ensemble.

pub mod wilson;

use std::collections::{BTreeMap, BTreeSet};

use log::{info, warn};
use serde::Serialize;
use thiserror::Error;

use crate::corpus::Corpus;
use crate::model::{Category, ConsensusType, PolicySegment, FLAG_DISPUTED, FLAG_INCOMPLETE};

pub use wilson::{normal_quantile, wilson_interval, z_for_confidence, CiVariant, Interval};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no items")]
    Empty,
    #[error("{0}")]
    Invalid(String),
}

/// Share of items on which two label vectors agree, for every unordered
/// pair of annotators. Keys are ordered `(a, b)` with `a < b`.
pub fn pairwise_agreement<T: PartialEq>(
    labels: &BTreeMap<String, Vec<T>>,
) -> Result<BTreeMap<(String, String), f64>, StatsError> {
    let mut lens = labels.values().map(Vec::len);
    let Some(n) = lens.next() else {
        return Ok(BTreeMap::new());
    };
    if let Some(m) = lens.find(|m| *m != n) {
        return Err(StatsError::LengthMismatch(n, m));
    }
    if n == 0 {
        return Err(StatsError::Empty);
    }
    let names: Vec<&String> = labels.keys().collect();
    let mut out = BTreeMap::new();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            let same = labels[*a].iter().zip(&labels[*b]).filter(|(x, y)| x == y).count();
            out.insert(((*a).clone(), (*b).clone()), same as f64 / n as f64);
        }
    }
    Ok(out)
}

/// Fleiss' kappa over items, each rated by the same number of raters.
pub fn fleiss_kappa<T: Ord + Clone>(items: &[Vec<T>]) -> Result<f64, StatsError> {
    let Some(first) = items.first() else {
        return Err(StatsError::Empty);
    };
    let n = first.len();
    if n < 2 {
        return Err(StatsError::Invalid("fleiss kappa needs at least 2 raters per item".into()));
    }
    if let Some(bad) = items.iter().find(|i| i.len() != n) {
        return Err(StatsError::LengthMismatch(n, bad.len()));
    }
    let nf = n as f64;
    let mut totals: BTreeMap<&T, usize> = BTreeMap::new();
    let mut p_sum = 0.0;
    for item in items {
        let mut counts: BTreeMap<&T, usize> = BTreeMap::new();
        for label in item {
            *counts.entry(label).or_default() += 1;
            *totals.entry(label).or_default() += 1;
        }
        let sq: usize = counts.values().map(|c| c * c).sum();
        p_sum += (sq as f64 - nf) / (nf * (nf - 1.0));
    }
    let p_bar = p_sum / items.len() as f64;
    let all = (items.len() * n) as f64;
    let p_e: f64 = totals.values().map(|c| (*c as f64 / all).powi(2)).sum();
    if (1.0 - p_e).abs() < 1e-15 {
        info!("fleiss kappa: every rating is the same category; defined as 1.0");
        return Ok(1.0);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Cohen's kappa between two aligned label vectors.
pub fn cohens_kappa<T: Ord + Clone>(pred: &[T], reference: &[T]) -> Result<f64, StatsError> {
    if pred.len() != reference.len() {
        return Err(StatsError::LengthMismatch(pred.len(), reference.len()));
    }
    if pred.is_empty() {
        return Err(StatsError::Empty);
    }
    let n = pred.len() as f64;
    let p_o = pred.iter().zip(reference).filter(|(a, b)| a == b).count() as f64 / n;
    let mut a: BTreeMap<&T, usize> = BTreeMap::new();
    let mut b: BTreeMap<&T, usize> = BTreeMap::new();
    for x in pred {
        *a.entry(x).or_default() += 1;
    }
    for x in reference {
        *b.entry(x).or_default() += 1;
    }
    let p_e: f64 = a
        .iter()
        .map(|(k, ca)| *ca as f64 / n * b.get(k).copied().unwrap_or(0) as f64 / n)
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        let k = if p_o == 1.0 { 1.0 } else { 0.0 };
        info!("cohen kappa: chance agreement is 1; defined as {k}");
        return Ok(k);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceValidation {
    pub n_items: usize,
    pub cohen_kappa: f64,
    pub accuracy_overall: f64,
    /// Absent when the reference carries no consensus-type metadata.
    pub accuracy_on_unanimous: Option<f64>,
    pub accuracy_on_disputed: Option<f64>,
}

fn accuracy<T: PartialEq>(pairs: impl Iterator<Item = (T, T)>) -> Option<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for (a, b) in pairs {
        total += 1;
        hit += (a == b) as usize;
    }
    (total > 0).then(|| hit as f64 / total as f64)
}

/// Compare predictions with reference labels. `ref_unanimous[i]` says
/// whether item `i` was unanimous among the reference's own annotators.
pub fn reference_validation<T: Ord + Clone>(
    pred: &[T],
    reference: &[T],
    ref_unanimous: Option<&[bool]>,
) -> Result<ReferenceValidation, StatsError> {
    let cohen_kappa = cohens_kappa(pred, reference)?;
    let accuracy_overall = accuracy(pred.iter().zip(reference)).unwrap_or(0.0);
    let (accuracy_on_unanimous, accuracy_on_disputed) = match ref_unanimous {
        Some(flags) if flags.len() == pred.len() => {
            let split = |want: bool| {
                accuracy(pred.iter().zip(reference).zip(flags).filter(|(_, u)| **u == want).map(|(pair, _)| pair))
            };
            (split(true), split(false))
        }
        Some(flags) => return Err(StatsError::LengthMismatch(pred.len(), flags.len())),
        None => {
            warn!("reference has no consensus-type metadata; reporting overall accuracy only");
            (None, None)
        }
    };
    Ok(ReferenceValidation {
        n_items: pred.len(),
        cohen_kappa,
        accuracy_overall,
        accuracy_on_unanimous,
        accuracy_on_disputed,
    })
}

/// Validate a labeled corpus against a reference corpus, matching segments
/// by id. Segments without a consensus label on either side are skipped.
pub fn validate_against(pred: &Corpus, reference: &Corpus) -> Result<ReferenceValidation, StatsError> {
    let by_id: BTreeMap<&str, &PolicySegment> = pred.segments().map(|s| (s.segment_id.as_str(), s)).collect();
    let (mut p, mut r, mut unanimous) = (Vec::new(), Vec::new(), Vec::new());
    let mut skipped = 0usize;
    for seg in reference.segments() {
        let pair = by_id
            .get(seg.segment_id.as_str())
            .and_then(|ps| ps.consensus.as_ref())
            .zip(seg.consensus.as_ref());
        match pair {
            Some((pl, rl)) => {
                p.push(pl.primary);
                r.push(rl.primary);
                unanimous.push(rl.consensus_type == ConsensusType::Unanimous);
            }
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        warn!("validation: {skipped} reference segments had no matching labeled prediction");
    }
    reference_validation(&p, &r, Some(&unanimous))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConsensusDistribution {
    pub counted: usize,
    /// Segments left out: incompletely annotated or never labeled.
    pub excluded: usize,
    pub unanimous: f64,
    pub majority: f64,
    pub disputed: f64,
}

fn consensus_class(seg: &PolicySegment, ensemble_size: Option<usize>) -> Option<ConsensusType> {
    let partial = ensemble_size.is_some_and(|k| !seg.annotations.is_empty() && seg.annotations.len() < k);
    if seg.has_flag(FLAG_INCOMPLETE) || partial {
        return None;
    }
    match &seg.consensus {
        Some(c) => Some(c.consensus_type),
        // counted with resolved segments: both were disputed among annotators
        None if seg.has_flag(FLAG_DISPUTED) => Some(ConsensusType::ExpertResolved),
        None => None,
    }
}

/// Shares of unanimous, majority and disputed (including later resolved)
/// segments, over completely annotated segments.
pub fn consensus_distribution(corpus: &Corpus, ensemble_size: Option<usize>) -> ConsensusDistribution {
    let mut counts = [0usize; 3];
    let mut excluded = 0;
    for seg in corpus.segments() {
        match consensus_class(seg, ensemble_size) {
            Some(ConsensusType::Unanimous) => counts[0] += 1,
            Some(ConsensusType::Majority) => counts[1] += 1,
            Some(ConsensusType::ExpertResolved) => counts[2] += 1,
            None => excluded += 1,
        }
    }
    if excluded > 0 {
        warn!("consensus distribution: {excluded} segments excluded (incomplete or unlabeled)");
    }
    let counted: usize = counts.iter().sum();
    let share = |c: usize| if counted == 0 { 0.0 } else { c as f64 / counted as f64 };
    ConsensusDistribution {
        counted,
        excluded,
        unanimous: share(counts[0]),
        majority: share(counts[1]),
        disputed: share(counts[2]),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementReport {
    pub annotators: Vec<String>,
    /// Segments labeled by every annotator.
    pub n_items: usize,
    pub unanimous_rate: f64,
    pub majority_rate: f64,
    pub disputed_rate: f64,
    pub pairwise: BTreeMap<String, f64>,
    pub fleiss_kappa: Option<f64>,
}

/// Per-annotator primary labels over the segments every annotator labeled,
/// in corpus order.
pub fn primary_vectors(corpus: &Corpus) -> BTreeMap<String, Vec<Category>> {
    let ids: BTreeSet<&str> = corpus
        .segments()
        .flat_map(|s| s.annotations.entries.iter().map(|e| e.annotator_id.as_str()))
        .collect();
    let mut out: BTreeMap<String, Vec<Category>> = ids.iter().map(|id| (id.to_string(), Vec::new())).collect();
    for seg in corpus.segments() {
        let labels: Option<Vec<Category>> = ids.iter().map(|id| seg.annotations.get(id).map(|e| e.primary)).collect();
        if let Some(labels) = labels {
            for (id, label) in ids.iter().zip(labels) {
                out.get_mut(*id).unwrap().push(label);
            }
        }
    }
    out
}

/// Agreement among the annotators recorded in the corpus, computed from
/// their raw primaries.
pub fn agreement_report(corpus: &Corpus) -> Result<AgreementReport, StatsError> {
    let vectors = primary_vectors(corpus);
    let annotators: Vec<String> = vectors.keys().cloned().collect();
    let n_items = vectors.values().next().map_or(0, Vec::len);
    if n_items == 0 {
        return Err(StatsError::Empty);
    }
    let items: Vec<Vec<Category>> = (0..n_items).map(|i| vectors.values().map(|v| v[i]).collect()).collect();
    let mut counts = [0usize; 3];
    for item in &items {
        let distinct: BTreeSet<_> = item.iter().collect();
        let top = distinct.iter().map(|c| item.iter().filter(|x| x == c).count()).max().unwrap_or(0);
        let leaders = distinct
            .iter()
            .filter(|c| item.iter().filter(|x| x == *c).count() >= 2)
            .count();
        let slot = if distinct.len() == 1 {
            0
        } else if leaders == 1 && top >= 2 {
            1
        } else {
            2
        };
        counts[slot] += 1;
    }
    let pairwise = pairwise_agreement(&vectors)?
        .into_iter()
        .map(|((a, b), v)| (format!("{a}~{b}"), v))
        .collect();
    let fleiss = if annotators.len() >= 2 { Some(fleiss_kappa(&items)?) } else { None };
    let nf = n_items as f64;
    Ok(AgreementReport {
        annotators,
        n_items,
        unanimous_rate: counts[0] as f64 / nf,
        majority_rate: counts[1] as f64 / nf,
        disputed_rate: counts[2] as f64 / nf,
        pairwise,
        fleiss_kappa: fleiss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AnnotationEntry, AnnotationSet, ConsensusLabel};
    use proptest::prelude::*;

    #[test]
    fn pairwise_extremes() {
        let same: BTreeMap<String, Vec<u8>> =
            [("a", vec![1, 2, 3]), ("b", vec![1, 2, 3]), ("c", vec![1, 2, 3])].into_iter().map(|(k, v)| (k.into(), v)).collect();
        let pw = pairwise_agreement(&same).unwrap();
        assert_eq!(pw.len(), 3);
        assert!(pw.values().all(|v| *v == 1.0));
        let diff: BTreeMap<String, Vec<u8>> = [("a", vec![1, 2]), ("b", vec![2, 1])].into_iter().map(|(k, v)| (k.into(), v)).collect();
        assert_eq!(pairwise_agreement(&diff).unwrap()[&("a".into(), "b".into())], 0.0);
        let bad: BTreeMap<String, Vec<u8>> = [("a", vec![1, 2]), ("b", vec![2])].into_iter().map(|(k, v)| (k.into(), v)).collect();
        assert!(matches!(pairwise_agreement(&bad), Err(StatsError::LengthMismatch(..))));
    }

    #[test]
    fn corpus_validation_matches_by_id() {
        let label = |c: Category, t: ConsensusType| ConsensusLabel {
            primary: c,
            secondary: vec![],
            consensus_type: t,
        };
        let seg = |id: &str, l: Option<ConsensusLabel>| {
            let mut s = PolicySegment::new("Co", id, vec!["H".into()], "t");
            s.consensus = l;
            s
        };
        let pred = Corpus::from_segments([
            seg("s1", Some(label(Category::FirstParty, ConsensusType::Majority))),
            seg("s2", Some(label(Category::Other, ConsensusType::Unanimous))),
            seg("s3", None),
        ]);
        let reference = Corpus::from_segments([
            seg("s2", Some(label(Category::ThirdParty, ConsensusType::Majority))),
            seg("s1", Some(label(Category::FirstParty, ConsensusType::Unanimous))),
            seg("s3", Some(label(Category::Other, ConsensusType::Unanimous))),
        ]);
        let v = validate_against(&pred, &reference).unwrap();
        assert_eq!(v.n_items, 2);
        assert_eq!(v.accuracy_overall, 0.5);
        assert_eq!((v.accuracy_on_unanimous, v.accuracy_on_disputed), (Some(1.0), Some(0.0)));
    }

    #[test]
    fn fleiss_hand_example() {
        // P1 = 1, P2 = (4+1-3)/6 = 1/3, P̄ = 2/3; p_A = 5/6, p_B = 1/6, P̄e = 26/36
        let p_bar = (1.0 + 1.0 / 3.0) / 2.0;
        let p_e = (5.0f64 / 6.0).powi(2) + (1.0f64 / 6.0).powi(2);
        let oracle = (p_bar - p_e) / (1.0 - p_e);
        let k = fleiss_kappa(&[vec!['A', 'A', 'A'], vec!['A', 'A', 'B']]).unwrap();
        assert!((k - oracle).abs() < 1e-12);
        assert!((k + 0.2).abs() < 1e-12);
    }

    #[test]
    fn fleiss_perfect_and_degenerate() {
        assert_eq!(fleiss_kappa(&[vec![1, 1], vec![2, 2], vec![3, 3]]).unwrap(), 1.0);
        assert_eq!(fleiss_kappa(&[vec![1, 1, 1], vec![1, 1, 1]]).unwrap(), 1.0);
        assert!(fleiss_kappa(&[vec![1, 1], vec![1]]).is_err());
        assert!(fleiss_kappa::<u8>(&[]).is_err());
    }

    #[test]
    fn cohen_hand_example() {
        // p_o = 3/4; marginals X: 1/2·1/4, Y: 1/2·3/4 → p_e = 1/2
        let p_o = 0.75;
        let p_e = 0.5 * 0.25 + 0.5 * 0.75;
        let k = cohens_kappa(&['X', 'X', 'Y', 'Y'], &['X', 'Y', 'Y', 'Y']).unwrap();
        assert!((k - (p_o - p_e) / (1.0 - p_e)).abs() < 1e-12);
        assert!((k - 0.5).abs() < 1e-12);
        assert_eq!(cohens_kappa(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
    }

    #[test]
    fn cohen_degenerate_conventions() {
        assert_eq!(cohens_kappa(&[1, 1], &[1, 1]).unwrap(), 1.0);
        assert!(cohens_kappa(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn reference_split() {
        let v = reference_validation(&[1, 2, 3], &[1, 2, 3], Some(&[true, false, true])).unwrap();
        assert_eq!(
            (v.accuracy_overall, v.accuracy_on_unanimous, v.accuracy_on_disputed),
            (1.0, Some(1.0), Some(1.0))
        );
        let v = reference_validation(&[1, 2, 9, 9], &[1, 2, 3, 4], Some(&[true, true, false, false])).unwrap();
        assert_eq!((v.accuracy_on_unanimous, v.accuracy_on_disputed), (Some(1.0), Some(0.0)));
        assert_eq!(v.accuracy_overall, 0.5);
        let v = reference_validation(&[1, 2], &[1, 2], None).unwrap();
        assert!(v.accuracy_on_unanimous.is_none() && v.accuracy_on_disputed.is_none());
    }

    fn seg(id: &str, consensus: Option<ConsensusType>, entries: usize) -> PolicySegment {
        let mut s = PolicySegment::new("Acme", id, vec!["P".into()], "x");
        s.annotations = AnnotationSet {
            entries: (0..entries)
                .map(|i| AnnotationEntry {
                    annotator_id: format!("m{i}"),
                    primary: Category::Other,
                    secondary: vec![],
                })
                .collect(),
        };
        match consensus {
            Some(t) => {
                s.consensus = Some(ConsensusLabel {
                    primary: Category::Other,
                    secondary: vec![],
                    consensus_type: t,
                })
            }
            None => s.set_flag(FLAG_DISPUTED),
        }
        s
    }

    #[test]
    fn distribution_toy_corpora() {
        let c = Corpus::from_segments([seg("a", Some(ConsensusType::Unanimous), 3), seg("b", Some(ConsensusType::Unanimous), 3)]);
        let d = consensus_distribution(&c, Some(3));
        assert_eq!((d.unanimous, d.majority, d.disputed), (1.0, 0.0, 0.0));
        let c = Corpus::from_segments([
            seg("a", Some(ConsensusType::Unanimous), 3),
            seg("b", Some(ConsensusType::Majority), 3),
            seg("c", Some(ConsensusType::Majority), 2),
        ]);
        let d = consensus_distribution(&c, Some(3));
        assert_eq!((d.unanimous, d.majority, d.disputed), (0.5, 0.5, 0.0));
        assert_eq!(d.excluded, 1);
        let c = Corpus::from_segments([seg("a", None, 3), seg("b", Some(ConsensusType::ExpertResolved), 3)]);
        assert_eq!(consensus_distribution(&c, Some(3)).disputed, 1.0);
    }

    #[test]
    fn agreement_from_annotations() {
        let mut segs = Vec::new();
        for (i, labels) in [[Category::Other; 3], [Category::Other, Category::Other, Category::Tracking]].iter().enumerate() {
            let mut s = PolicySegment::new("Acme", format!("s{i}"), vec!["P".into()], "x");
            for (j, l) in labels.iter().enumerate() {
                s.annotations.upsert(AnnotationEntry {
                    annotator_id: format!("m{j}"),
                    primary: *l,
                    secondary: vec![],
                });
            }
            segs.push(s);
        }
        let r = agreement_report(&Corpus::from_segments(segs)).unwrap();
        assert_eq!(r.n_items, 2);
        assert_eq!((r.unanimous_rate, r.majority_rate, r.disputed_rate), (0.5, 0.5, 0.0));
        assert!((r.fleiss_kappa.unwrap() + 0.2).abs() < 1e-12);
        assert_eq!(r.pairwise["m0~m1"], 1.0);
        assert_eq!(r.pairwise["m0~m2"], 0.5);
    }

    fn ratings() -> impl Strategy<Value = Vec<Vec<u8>>> {
        proptest::collection::vec(proptest::collection::vec(0u8..4, 3), 1..15)
    }

    proptest! {
        #[test]
        fn fleiss_invariances(items in ratings(), perm in Just([2u8, 0, 3, 1]), rot in 0usize..15) {
            let Ok(k) = fleiss_kappa(&items) else { return Ok(()); };
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&k));
            let relabeled: Vec<Vec<u8>> = items.iter().map(|i| i.iter().map(|x| perm[*x as usize]).collect()).collect();
            prop_assert!((fleiss_kappa(&relabeled).unwrap() - k).abs() < 1e-12);
            let mut rotated = items.clone();
            let len = rotated.len();
            rotated.rotate_left(rot % len);
            prop_assert!((fleiss_kappa(&rotated).unwrap() - k).abs() < 1e-12);
        }

        #[test]
        fn cohen_relabel_invariant(pairs in proptest::collection::vec((0u8..4, 0u8..4), 1..30)) {
            let perm = [3u8, 1, 0, 2];
            let (a, b): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
            let k = cohens_kappa(&a, &b).unwrap();
            let a2: Vec<u8> = a.iter().map(|x| perm[*x as usize]).collect();
            let b2: Vec<u8> = b.iter().map(|x| perm[*x as usize]).collect();
            prop_assert!((cohens_kappa(&a2, &b2).unwrap() - k).abs() < 1e-12);
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&k));
        }

        #[test]
        fn pairwise_symmetric(a in proptest::collection::vec(0u8..3, 5), b in proptest::collection::vec(0u8..3, 5)) {
            let ab: BTreeMap<String, Vec<u8>> = [("x".to_string(), a.clone()), ("y".to_string(), b.clone())].into();
            let ba: BTreeMap<String, Vec<u8>> = [("x".to_string(), b), ("y".to_string(), a)].into();
            prop_assert_eq!(pairwise_agreement(&ab).unwrap().into_values().collect::<Vec<_>>(),
                            pairwise_agreement(&ba).unwrap().into_values().collect::<Vec<_>>());
        }
    }
}
