//! Exact ranking arithmetic.
//!
//! Ranks are stored in half-units so that every mid-rank `(a + b) / 2` is an
//! integer and tie detection never depends on float comparison. All metrics
//! here are pure functions and can be called from any number of threads.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RankingError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("alignment error: {0}")]
    Alignment(String),
}

pub type Result<T> = std::result::Result<T, RankingError>;

/// A rank value on the half-integer lattice (1, 1.5, 2, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rank(u32);

impl Rank {
    pub fn from_half_units(half: u32) -> Self {
        Rank(half)
    }

    pub fn whole(rank: u32) -> Self {
        Rank(rank * 2)
    }

    pub fn half_units(self) -> u32 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 2.0
    }

    /// Accepts only finite, positive multiples of 0.5.
    pub fn from_f64(value: f64) -> Result<Self> {
        if !value.is_finite() || value <= 0.0 {
            return Err(RankingError::InvalidInput(format!(
                "rank {value} is not a positive finite number"
            )));
        }
        let doubled = value * 2.0;
        if doubled.fract() != 0.0 || doubled > u32::MAX as f64 {
            return Err(RankingError::InvalidInput(format!(
                "rank {value} is not a multiple of 0.5"
            )));
        }
        Ok(Rank(doubled as u32))
    }
}

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_multiple_of(2) {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}.5", self.0 / 2)
        }
    }
}

impl Serialize for Rank {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for Rank {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Rank::from_f64(v).map_err(serde::de::Error::custom)
    }
}

/// Per-candidate ranks forming a valid mid-rank assignment.
///
/// Construction validates that sorting the ranks and replacing each tie block
/// spanning positions `[a, b]` with `(a + b) / 2` reproduces the stored values,
/// which also pins the rank sum to `G(G+1)/2`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct RankVector(Vec<Rank>);

impl RankVector {
    pub fn new(ranks: Vec<Rank>) -> Result<Self> {
        validate_mid_ranks(&ranks)?;
        Ok(RankVector(ranks))
    }

    pub fn from_f64s(values: &[f64]) -> Result<Self> {
        let ranks = values
            .iter()
            .map(|&v| Rank::from_f64(v))
            .collect::<Result<Vec<_>>>()?;
        Self::new(ranks)
    }

    /// Strict ordering from a permutation-like list of whole ranks.
    pub fn from_whole(values: &[u32]) -> Result<Self> {
        Self::new(values.iter().map(|&v| Rank::whole(v)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ranks(&self) -> &[Rank] {
        &self.0
    }

    pub fn get(&self, i: usize) -> Option<Rank> {
        self.0.get(i).copied()
    }

    pub fn to_f64s(&self) -> Vec<f64> {
        self.0.iter().map(|r| r.value()).collect()
    }

    /// Indices of candidates holding the minimum rank.
    pub fn best_set(&self) -> Vec<usize> {
        extreme_set(&self.0, self.0.iter().min().copied())
    }

    /// Indices of candidates holding the maximum rank.
    pub fn worst_set(&self) -> Vec<usize> {
        extreme_set(&self.0, self.0.iter().max().copied())
    }

    /// Applies `perm` so that output position `p` holds the rank of input
    /// candidate `perm[p]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.len() {
            return Err(RankingError::InvalidInput("permutation length mismatch".into()));
        }
        let mut seen = vec![false; perm.len()];
        let mut out = Vec::with_capacity(perm.len());
        for &p in perm {
            if p >= self.len() || std::mem::replace(&mut seen[p], true) {
                return Err(RankingError::InvalidInput("not a permutation".into()));
            }
            out.push(self.0[p]);
        }
        Ok(RankVector(out))
    }
}

impl<'de> Deserialize<'de> for RankVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let ranks = Vec::<Rank>::deserialize(d)?;
        RankVector::new(ranks).map_err(serde::de::Error::custom)
    }
}

/// Accepts either mid-ranks (`[1.5, 1.5, 3, 4]`) or standard competition
/// ranks as typed by annotators (`[1, 1, 3, 4]`) and returns mid-ranks.
///
/// Competition ranks must give each tie block the position of its first
/// member, so `[1, 1, 2, 4]` is rejected under both readings.
pub fn canonicalize_tied_ranks(values: &[f64]) -> Result<RankVector> {
    if let Ok(r) = RankVector::from_f64s(values) {
        return Ok(r);
    }
    let invalid = || {
        RankingError::InvalidInput(format!("ranks {values:?} are neither mid-ranks nor competition ranks"))
    };
    let whole = values
        .iter()
        .map(|&v| (v.is_finite() && v >= 1.0 && v.fract() == 0.0).then_some(v as u32))
        .collect::<Option<Vec<u32>>>()
        .ok_or_else(invalid)?;
    for &v in &whole {
        let better = whole.iter().filter(|&&w| w < v).count() as u32;
        if v != better + 1 {
            return Err(invalid());
        }
    }
    Ok(mid_ranks_ascending(&whole))
}

fn extreme_set(ranks: &[Rank], extreme: Option<Rank>) -> Vec<usize> {
    match extreme {
        Some(e) => ranks
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == e)
            .map(|(i, _)| i)
            .collect(),
        None => Vec::new(),
    }
}

fn validate_mid_ranks(ranks: &[Rank]) -> Result<()> {
    if ranks.is_empty() {
        return Err(RankingError::InvalidInput("rank vector is empty".into()));
    }
    let mut sorted: Vec<u32> = ranks.iter().map(|r| r.0).collect();
    sorted.sort_unstable();
    let mut start = 0;
    while start < sorted.len() {
        let mut end = start;
        while end + 1 < sorted.len() && sorted[end + 1] == sorted[start] {
            end += 1;
        }
        // 1-based positions a = start + 1, b = end + 1; half-unit mid-rank is a + b.
        let expected = (start + 1 + end + 1) as u32;
        if sorted[start] != expected {
            return Err(RankingError::InvalidInput(format!(
                "ranks {:?} are not a valid mid-rank assignment",
                ranks.iter().map(|r| r.value()).collect::<Vec<_>>()
            )));
        }
        start = end + 1;
    }
    Ok(())
}

/// Mid-ranks from sort keys where a smaller key is a better (smaller) rank.
pub fn mid_ranks_ascending<K: Ord>(keys: &[K]) -> RankVector {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    let mut ranks = vec![Rank(0); keys.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && keys[order[end + 1]] == keys[order[start]] {
            end += 1;
        }
        let mid = Rank((start + end + 2) as u32);
        for &idx in &order[start..=end] {
            ranks[idx] = mid;
        }
        start = end + 1;
    }
    RankVector(ranks)
}

/// Quality score rounded to two decimals, in hundredths.
pub fn canonical_score(score: f64) -> i64 {
    (score * 100.0).round() as i64
}

/// Converts quality scores (higher is better) into mid-ranks.
///
/// Scores are compared after rounding to two decimal places.
pub fn scores_to_ranks(scores: &[f64]) -> Result<RankVector> {
    if scores.is_empty() {
        return Err(RankingError::InvalidInput("no scores".into()));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(RankingError::InvalidInput(format!("non-finite score {bad}")));
    }
    let keys: Vec<i64> = scores.iter().map(|&s| -canonical_score(s)).collect();
    Ok(mid_ranks_ascending(&keys))
}

/// Sign-encoded order of candidate `i` relative to `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OrderRelation {
    /// `i` ranked better (smaller rank).
    Better = -1,
    Tied = 0,
    /// `i` ranked worse (larger rank).
    Worse = 1,
}

impl OrderRelation {
    pub fn value(self) -> i8 {
        self as i8
    }

    pub fn reversed(self) -> Self {
        match self {
            OrderRelation::Better => OrderRelation::Worse,
            OrderRelation::Tied => OrderRelation::Tied,
            OrderRelation::Worse => OrderRelation::Better,
        }
    }
}

pub fn pairwise_order(rank_i: Rank, rank_j: Rank) -> OrderRelation {
    match rank_i.cmp(&rank_j) {
        Ordering::Greater => OrderRelation::Worse,
        Ordering::Less => OrderRelation::Better,
        Ordering::Equal => OrderRelation::Tied,
    }
}

/// Float entry point for callers holding raw rank values.
pub fn pairwise_order_f64(rank_i: f64, rank_j: f64) -> Result<OrderRelation> {
    if !rank_i.is_finite() || !rank_j.is_finite() {
        return Err(RankingError::InvalidInput("non-finite rank".into()));
    }
    Ok(match rank_i.partial_cmp(&rank_j) {
        Some(Ordering::Greater) => OrderRelation::Worse,
        Some(Ordering::Less) => OrderRelation::Better,
        _ => OrderRelation::Tied,
    })
}

fn check_aligned(pred: &[RankVector], gt: &[RankVector]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(RankingError::Alignment(format!(
            "{} predicted groups vs {} ground-truth groups",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(RankingError::InvalidInput("no groups to evaluate".into()));
    }
    for (g, (p, t)) in pred.iter().zip(gt).enumerate() {
        if p.len() != t.len() {
            return Err(RankingError::Alignment(format!(
                "group {g}: {} predicted candidates vs {} ground-truth candidates",
                p.len(),
                t.len()
            )));
        }
    }
    Ok(())
}

/// Matching and total pair counts for one group.
fn pair_matches(pred: &RankVector, gt: &RankVector) -> (usize, usize) {
    let n = pred.len();
    let mut matched = 0;
    let mut total = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            total += 1;
            if pairwise_order(pred.0[i], pred.0[j]) == pairwise_order(gt.0[i], gt.0[j]) {
                matched += 1;
            }
        }
    }
    (matched, total)
}

/// Fraction of candidate pairs, pooled over all groups, whose order relation
/// (including ties) matches between prediction and ground truth.
pub fn agreement(pred: &[RankVector], gt: &[RankVector]) -> Result<f64> {
    check_aligned(pred, gt)?;
    let (matched, total) = pred
        .iter()
        .zip(gt)
        .map(|(p, t)| pair_matches(p, t))
        .fold((0, 0), |(m, t), (dm, dt)| (m + dm, t + dt));
    if total == 0 {
        return Err(RankingError::InvalidInput("groups contain no candidate pairs".into()));
    }
    Ok(matched as f64 / total as f64)
}

fn sets_intersect(a: &[usize], b: &[usize]) -> bool {
    a.iter().any(|x| b.contains(x))
}

/// Fraction of groups where the human-best set meets the predicted-best set.
pub fn recall_at_1(pred: &[RankVector], gt: &[RankVector]) -> Result<f64> {
    check_aligned(pred, gt)?;
    let hits = pred
        .iter()
        .zip(gt)
        .filter(|(p, t)| sets_intersect(&p.best_set(), &t.best_set()))
        .count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Fraction of groups where the human-worst set meets the predicted-worst set.
pub fn filter_at_1(pred: &[RankVector], gt: &[RankVector]) -> Result<f64> {
    check_aligned(pred, gt)?;
    let hits = pred
        .iter()
        .zip(gt)
        .filter(|(p, t)| sets_intersect(&p.worst_set(), &t.worst_set()))
        .count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Average-rank aggregation: per-candidate mean rank, re-ranked with mid-rank
/// ties. Means are compared exactly through their integer half-unit sums.
pub fn aggregate_ranks(annotations: &[RankVector]) -> Result<RankVector> {
    let first = annotations
        .first()
        .ok_or_else(|| RankingError::InvalidInput("no annotations to aggregate".into()))?;
    let g = first.len();
    if annotations.iter().any(|a| a.len() != g) {
        return Err(RankingError::InvalidInput(
            "annotations have differing candidate counts".into(),
        ));
    }
    let sums: Vec<u64> = (0..g)
        .map(|c| annotations.iter().map(|a| a.0[c].0 as u64).sum())
        .collect();
    Ok(mid_ranks_ascending(&sums))
}

/// Per-candidate mean ranks, for reporting.
pub fn mean_ranks(annotations: &[RankVector]) -> Result<Vec<f64>> {
    let first = annotations
        .first()
        .ok_or_else(|| RankingError::InvalidInput("no annotations".into()))?;
    if annotations.iter().any(|a| a.len() != first.len()) {
        return Err(RankingError::InvalidInput(
            "annotations have differing candidate counts".into(),
        ));
    }
    let n = annotations.len() as f64;
    Ok((0..first.len())
        .map(|c| annotations.iter().map(|a| a.0[c].value()).sum::<f64>() / n)
        .collect())
}

/// Ground-truth preference of candidate `i` over `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PreferenceLabel {
    Loss,
    Tie,
    Win,
}

impl PreferenceLabel {
    pub fn value(self) -> f64 {
        match self {
            PreferenceLabel::Loss => 0.0,
            PreferenceLabel::Tie => 0.5,
            PreferenceLabel::Win => 1.0,
        }
    }

    pub fn from_value(v: f64) -> Result<Self> {
        if v == 0.0 {
            Ok(PreferenceLabel::Loss)
        } else if v == 0.5 {
            Ok(PreferenceLabel::Tie)
        } else if v == 1.0 {
            Ok(PreferenceLabel::Win)
        } else {
            Err(RankingError::InvalidInput(format!(
                "preference label {v} is not one of 0, 0.5, 1"
            )))
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            PreferenceLabel::Loss => PreferenceLabel::Win,
            PreferenceLabel::Tie => PreferenceLabel::Tie,
            PreferenceLabel::Win => PreferenceLabel::Loss,
        }
    }
}

impl Serialize for PreferenceLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for PreferenceLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        PreferenceLabel::from_value(v).map_err(serde::de::Error::custom)
    }
}

pub fn preference_label(ranks: &RankVector, i: usize, j: usize) -> Result<PreferenceLabel> {
    if i == j {
        return Err(RankingError::InvalidInput("a candidate has no preference against itself".into()));
    }
    let (ri, rj) = match (ranks.get(i), ranks.get(j)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(RankingError::InvalidInput(format!(
                "index out of range for {} candidates",
                ranks.len()
            )))
        }
    };
    Ok(match ri.cmp(&rj) {
        Ordering::Less => PreferenceLabel::Win,
        Ordering::Equal => PreferenceLabel::Tie,
        Ordering::Greater => PreferenceLabel::Loss,
    })
}

/// Mean pairwise agreement over all unordered annotator pairs of one group.
pub fn annotator_agreement(annotations: &[RankVector]) -> Result<f64> {
    if annotations.len() < 2 {
        return Err(RankingError::InvalidInput(
            "annotator agreement needs at least two annotations".into(),
        ));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for a in 0..annotations.len() {
        for b in (a + 1)..annotations.len() {
            sum += agreement(
                std::slice::from_ref(&annotations[a]),
                std::slice::from_ref(&annotations[b]),
            )?;
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// A finalized ranking together with each candidate's source tag.
#[derive(Debug, Clone, PartialEq)]
pub struct SourcedRanking {
    pub sources: Vec<String>,
    pub ranks: RankVector,
}

/// Pairwise win rates between source models; ties count as half a win.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRateMatrix {
    pub sources: Vec<String>,
    /// `win_rate[a][b]`, `None` where `a` and `b` were never compared.
    pub win_rate: Vec<Vec<Option<f64>>>,
    pub comparisons: Vec<Vec<u32>>,
}

impl WinRateMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let ia = self.sources.iter().position(|s| s == a)?;
        let ib = self.sources.iter().position(|s| s == b)?;
        self.win_rate[ia][ib]
    }
}

pub fn win_rate_matrix(groups: &[SourcedRanking], sources: &[String]) -> Result<WinRateMatrix> {
    let n = sources.len();
    let index = |tag: &str| -> Result<usize> {
        sources
            .iter()
            .position(|s| s == tag)
            .ok_or_else(|| RankingError::InvalidInput(format!("unknown source tag {tag:?}")))
    };
    // Wins in half units so ties stay integral.
    let mut half_wins = vec![vec![0u32; n]; n];
    let mut comparisons = vec![vec![0u32; n]; n];
    for group in groups {
        if group.sources.len() != group.ranks.len() {
            return Err(RankingError::InvalidInput(
                "source tags do not match candidate count".into(),
            ));
        }
        let idx = group
            .sources
            .iter()
            .map(|s| index(s))
            .collect::<Result<Vec<_>>>()?;
        for i in 0..idx.len() {
            for j in 0..idx.len() {
                if i == j || idx[i] == idx[j] {
                    continue;
                }
                comparisons[idx[i]][idx[j]] += 1;
                half_wins[idx[i]][idx[j]] += match group.ranks.0[i].cmp(&group.ranks.0[j]) {
                    Ordering::Less => 2,
                    Ordering::Equal => 1,
                    Ordering::Greater => 0,
                };
            }
        }
    }
    let win_rate = (0..n)
        .map(|a| {
            (0..n)
                .map(|b| {
                    (comparisons[a][b] > 0)
                        .then(|| half_wins[a][b] as f64 / (2.0 * comparisons[a][b] as f64))
                })
                .collect()
        })
        .collect();
    Ok(WinRateMatrix {
        sources: sources.to_vec(),
        win_rate,
        comparisons,
    })
}

/// Which reference each annotator's own agreement is measured against when
/// computing the spread across annotators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationBasis {
    /// The annotator's raw ranking.
    #[default]
    RawAnnotator,
    /// The average-rank aggregate of every other annotator of the group.
    LeaveOneOut,
}

/// One annotator's ranking of one evaluated group (by index into the
/// prediction list).
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatorRanking {
    pub annotator_id: String,
    pub group: usize,
    pub ranks: RankVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub agreement: f64,
    /// Maximum deviation of per-annotator agreement from its mean; 0 when no
    /// per-annotator rankings are supplied.
    pub agreement_dev: f64,
    pub recall_at_1: f64,
    pub filter_at_1: f64,
}

/// Agreement of `pred` against each annotator separately, keyed by annotator
/// id in first-seen order.
pub fn per_annotator_agreement(
    pred: &[RankVector],
    annotators: &[AnnotatorRanking],
    basis: DeviationBasis,
) -> Result<Vec<(String, f64)>> {
    let mut ids: Vec<&str> = Vec::new();
    for a in annotators {
        if a.group >= pred.len() {
            return Err(RankingError::Alignment(format!(
                "annotator {} ranks unknown group index {}",
                a.annotator_id, a.group
            )));
        }
        if a.ranks.len() != pred[a.group].len() {
            return Err(RankingError::Alignment(format!(
                "annotator {} ranking length differs from prediction",
                a.annotator_id
            )));
        }
        if !ids.contains(&a.annotator_id.as_str()) {
            ids.push(&a.annotator_id);
        }
    }
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let mut preds = Vec::new();
        let mut refs = Vec::new();
        for a in annotators.iter().filter(|a| a.annotator_id == id) {
            let reference = match basis {
                DeviationBasis::RawAnnotator => a.ranks.clone(),
                DeviationBasis::LeaveOneOut => {
                    let others: Vec<RankVector> = annotators
                        .iter()
                        .filter(|o| o.group == a.group && o.annotator_id != id)
                        .map(|o| o.ranks.clone())
                        .collect();
                    if others.is_empty() {
                        continue;
                    }
                    aggregate_ranks(&others)?
                }
            };
            preds.push(pred[a.group].clone());
            refs.push(reference);
        }
        if !preds.is_empty() {
            out.push((id.to_string(), agreement(&preds, &refs)?));
        }
    }
    Ok(out)
}

pub fn metrics_report(
    pred: &[RankVector],
    gt: &[RankVector],
    annotators: &[AnnotatorRanking],
    basis: DeviationBasis,
) -> Result<MetricsReport> {
    let agreement_value = agreement(pred, gt)?;
    let per = per_annotator_agreement(pred, annotators, basis)?;
    let agreement_dev = if per.is_empty() {
        0.0
    } else {
        let mean = per.iter().map(|(_, a)| a).sum::<f64>() / per.len() as f64;
        per.iter().map(|(_, a)| (a - mean).abs()).fold(0.0, f64::max)
    };
    Ok(MetricsReport {
        agreement: agreement_value,
        agreement_dev,
        recall_at_1: recall_at_1(pred, gt)?,
        filter_at_1: filter_at_1(pred, gt)?,
    })
}
