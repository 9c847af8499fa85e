//! Statistics over annotation dumps: annotator filtering, agreement,
//! accuracy, distance histogram, grouped points, skill percentiles and
//! comment statistics.
//!
//! Every function is pure over the dump. Sums are accumulated in integers and
//! groups are keyed by ordered maps, so results do not depend on the order of
//! records in the input.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::AnnotationRecord;
use crate::scoring::{self, distance_support, ScoreConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("bucket edges must be finite, strictly increasing and at least two")]
    InvalidBuckets,
    #[error("decoding_p {p} of annotation {annotation_id} is not covered by the bucket spec")]
    UncoveredP { p: f64, annotation_id: String },
    #[error("percentile fraction must lie in (0, 0.5), got {0}")]
    InvalidFraction(f64),
    #[error("need at least {needed} annotators, have {available}")]
    InsufficientData { needed: usize, available: usize },
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn ceil_tolerant(x: f64) -> usize {
    (x - 1e-9).ceil().max(0.0) as usize
}

/// True iff the annotator named any sentence on any attention check.
/// Annotators who saw no checks pass.
pub fn failed_attention_check(annotator_id: &str, dump: &[AnnotationRecord]) -> bool {
    dump.iter().any(|r| {
        r.annotation.annotator_id == annotator_id
            && r.attention_check
            && r.annotation.guess_index.is_some()
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataError {
    pub annotation_id: String,
    pub example_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub total_annotations: usize,
    pub failing_annotators: Vec<String>,
    pub filtered_annotations: usize,
    /// Ids of the surviving annotations, in dump order.
    pub filtered_set: Vec<String>,
    pub data_errors: Vec<DataError>,
}

/// Records whose example reference cannot be resolved to one consistent set of
/// example metadata, or whose indices are out of range for `n` sentences.
fn data_errors(dump: &[AnnotationRecord], n: u32) -> Vec<DataError> {
    type Meta = (String, Option<u64>, Option<u32>, bool);
    let meta = |r: &AnnotationRecord| -> Meta {
        (
            r.category.as_str().to_string(),
            r.decoding_p.map(f64::to_bits),
            r.boundary_index,
            r.attention_check,
        )
    };
    let mut variants: HashMap<&str, BTreeSet<Meta>> = HashMap::new();
    for r in dump {
        variants.entry(&r.annotation.example_id).or_default().insert(meta(r));
    }
    let mut errors = Vec::new();
    for r in dump {
        let a = &r.annotation;
        let reason = if a.example_id.is_empty() {
            Some("missing example reference".to_string())
        } else if variants[a.example_id.as_str()].len() > 1 {
            Some("example metadata disagrees across records".to_string())
        } else if a.guess_index.is_some_and(|g| g == 0 || g > n) {
            Some(format!("guess_index outside [1, {n}]"))
        } else if r.boundary_index.is_some_and(|b| b < 2 || b > n) {
            Some(format!("boundary_index outside [2, {n}]"))
        } else if r.attention_check && r.boundary_index.is_some() {
            Some("attention check with a boundary".to_string())
        } else {
            None
        };
        if let Some(reason) = reason {
            errors.push(DataError {
                annotation_id: a.id.clone(),
                example_id: a.example_id.clone(),
                reason,
            });
        }
    }
    errors
}

/// Drop every annotation by an annotator who failed an attention check, then
/// drop the remaining attention-check annotations.
pub fn build_filtered_set(dump: &[AnnotationRecord], n: u32) -> FilterReport {
    let errors = data_errors(dump, n);
    let bad: BTreeSet<&str> = errors.iter().map(|e| e.annotation_id.as_str()).collect();
    let valid: Vec<&AnnotationRecord> = dump
        .iter()
        .filter(|r| !bad.contains(r.annotation.id.as_str()))
        .collect();
    let failing: BTreeSet<&str> = valid
        .iter()
        .filter(|r| r.attention_check && r.annotation.guess_index.is_some())
        .map(|r| r.annotation.annotator_id.as_str())
        .collect();
    let filtered_set: Vec<String> = valid
        .iter()
        .filter(|r| !failing.contains(r.annotation.annotator_id.as_str()) && !r.attention_check)
        .map(|r| r.annotation.id.clone())
        .collect();
    FilterReport {
        total_annotations: dump.len(),
        failing_annotators: failing.into_iter().map(String::from).collect(),
        filtered_annotations: filtered_set.len(),
        filtered_set,
        data_errors: errors,
    }
}

/// The filtered records themselves, in dump order.
pub fn filter_dump(dump: &[AnnotationRecord], n: u32) -> (FilterReport, Vec<AnnotationRecord>) {
    let report = build_filtered_set(dump, n);
    let keep: BTreeSet<&str> = report.filtered_set.iter().map(String::as_str).collect();
    let records = dump
        .iter()
        .filter(|r| keep.contains(r.annotation.id.as_str()))
        .cloned()
        .collect();
    (report, records)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub multi_annotated_examples: u64,
    pub pair_count: u64,
    pub exact_matches: u64,
    pub within_one_matches: u64,
    /// `None` when there are no pairs.
    pub exact_match_fraction: Option<f64>,
    pub within_one_fraction: Option<f64>,
}

/// Pairwise agreement among annotations of the same example. An absent guess
/// matches only another absent guess, exactly and within one.
pub fn agreement(dump: &[AnnotationRecord]) -> AgreementReport {
    // example -> guess -> count
    let mut by_example: BTreeMap<&str, BTreeMap<Option<u32>, u64>> = BTreeMap::new();
    for r in dump {
        *by_example
            .entry(&r.annotation.example_id)
            .or_default()
            .entry(r.annotation.guess_index)
            .or_default() += 1;
    }
    let pairs = |c: u64| c * c.saturating_sub(1) / 2;
    let mut report = AgreementReport::default();
    for guesses in by_example.values() {
        let total: u64 = guesses.values().sum();
        if total >= 2 {
            report.multi_annotated_examples += 1;
        }
        report.pair_count += pairs(total);
        let exact: u64 = guesses.values().map(|&c| pairs(c)).sum();
        let adjacent: u64 = guesses
            .iter()
            .filter_map(|(g, &c)| {
                let next = guesses.get(&Some((*g)? + 1))?;
                Some(c * next)
            })
            .sum();
        report.exact_matches += exact;
        report.within_one_matches += exact + adjacent;
    }
    report.exact_match_fraction = ratio(report.exact_matches, report.pair_count);
    report.within_one_fraction = ratio(report.within_one_matches, report.pair_count);
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub distance: i32,
    pub count: u64,
    /// Boundary positions that admit this distance.
    pub support: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceHistogram {
    pub n_sentences: u32,
    /// Annotations with both a guess and a boundary.
    pub total: u64,
    /// Every distance in `[-(n-1), n-2]`, plus any observed outside it.
    pub bins: Vec<HistogramBin>,
    pub mean_distance: Option<f64>,
    /// Mean over guesses strictly after the boundary.
    pub positive_mean_distance: Option<f64>,
    pub exact_fraction: Option<f64>,
    pub left_mass: u64,
    pub right_mass: u64,
}

impl DistanceHistogram {
    pub fn count(&self, d: i32) -> u64 {
        self.bins
            .iter()
            .find(|b| b.distance == d)
            .map_or(0, |b| b.count)
    }
}

pub fn distance_histogram(dump: &[AnnotationRecord], n: u32) -> DistanceHistogram {
    let mut counts: BTreeMap<i32, u64> = BTreeMap::new();
    let lo = -(n as i32 - 1);
    let hi = n as i32 - 2;
    for d in lo..=hi {
        counts.insert(d, 0);
    }
    let (mut total, mut sum, mut pos_sum, mut pos_n) = (0u64, 0i64, 0i64, 0u64);
    let (mut left, mut right) = (0u64, 0u64);
    for r in dump {
        let Some(d) = scoring::distance(r.annotation.guess_index, r.boundary_index) else {
            continue;
        };
        *counts.entry(d).or_default() += 1;
        total += 1;
        sum += i64::from(d);
        if d > 0 {
            right += 1;
            pos_sum += i64::from(d);
            pos_n += 1;
        } else if d < 0 {
            left += 1;
        }
    }
    let exact = counts.get(&0).copied().unwrap_or(0);
    DistanceHistogram {
        n_sentences: n,
        total,
        bins: counts
            .into_iter()
            .map(|(distance, count)| HistogramBin {
                distance,
                count,
                support: distance_support(distance, n),
            })
            .collect(),
        mean_distance: (total > 0).then(|| sum as f64 / total as f64),
        positive_mean_distance: (pos_n > 0).then(|| pos_sum as f64 / pos_n as f64),
        exact_fraction: ratio(exact, total),
        left_mass: left,
        right_mass: right,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    /// Annotations on examples that have a boundary.
    pub with_boundary: u64,
    pub exact: u64,
    pub exact_fraction: Option<f64>,
    /// Of those, annotations that named no sentence.
    pub no_guess: u64,
    /// Signed mean over annotations with both a guess and a boundary.
    pub mean_distance: Option<f64>,
}

pub fn accuracy_summary(filtered: &[AnnotationRecord]) -> AccuracySummary {
    let (mut with_boundary, mut exact, mut no_guess, mut guessed, mut sum) = (0u64, 0u64, 0u64, 0u64, 0i64);
    for r in filtered {
        let Some(b) = r.boundary_index else { continue };
        with_boundary += 1;
        match r.annotation.guess_index {
            Some(g) => {
                guessed += 1;
                sum += i64::from(g) - i64::from(b);
                exact += u64::from(g == b);
            }
            None => no_guess += 1,
        }
    }
    AccuracySummary {
        with_boundary,
        exact,
        exact_fraction: ratio(exact, with_boundary),
        no_guess,
        mean_distance: (guessed > 0).then(|| sum as f64 / guessed as f64),
    }
}

/// Points a record should carry under `cfg`.
pub fn recompute_points(
    r: &AnnotationRecord,
    n: u32,
    cfg: &ScoreConfig,
) -> Result<u32, scoring::ScoreError> {
    scoring::score(r.annotation.guess_index, r.boundary_index, n, cfg)
}

/// Half-open `[a, b)` buckets over decoding_p; the last bucket also holds its
/// upper edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketSpec {
    edges: Vec<f64>,
}

impl BucketSpec {
    pub fn new(edges: Vec<f64>) -> Result<Self, AnalyticsError> {
        let ok = edges.len() >= 2
            && edges.iter().all(|e| e.is_finite())
            && edges.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(AnalyticsError::InvalidBuckets);
        }
        Ok(BucketSpec { edges })
    }

    /// `count` equal-width buckets over `[0, 1]`.
    pub fn uniform(count: u32) -> Result<Self, AnalyticsError> {
        if count == 0 {
            return Err(AnalyticsError::InvalidBuckets);
        }
        Self::new((0..=count).map(|i| f64::from(i) / f64::from(count)).collect())
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn bucket_of(&self, p: f64) -> Option<usize> {
        let last = self.edges.len() - 2;
        if p == self.edges[last + 1] {
            return Some(last);
        }
        self.edges.windows(2).position(|w| w[0] <= p && p < w[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    OrderIndex,
    PBucket,
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupKey {
    Order { order_index: u32 },
    PBucket { lower: f64, upper: f64, closed: bool },
    /// Annotations on examples without a generated continuation.
    NoDecodingP,
}

impl GroupKey {
    pub fn label(&self) -> String {
        match self {
            GroupKey::Order { order_index } => order_index.to_string(),
            GroupKey::PBucket {
                lower,
                upper,
                closed,
            } => format!("[{lower},{upper}{}", if *closed { "]" } else { ")" }),
            GroupKey::NoDecodingP => "none".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointGroup {
    pub key: GroupKey,
    pub n: u64,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single annotation.
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedPoints {
    pub group_by: GroupBy,
    pub groups: Vec<PointGroup>,
}

#[derive(Default, Clone, Copy)]
struct Moments {
    n: u64,
    sum: u64,
    sum_sq: u64,
}

impl Moments {
    fn push(&mut self, x: u32) {
        self.n += 1;
        self.sum += u64::from(x);
        self.sum_sq += u64::from(x) * u64::from(x);
    }

    fn mean(&self) -> f64 {
        self.sum as f64 / self.n as f64
    }

    fn sample_sd(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        // Exact integer numerator: n * sum(x^2) - sum(x)^2.
        let n = u128::from(self.n);
        let num = n * u128::from(self.sum_sq) - u128::from(self.sum) * u128::from(self.sum);
        (num as f64 / (n * (n - 1)) as f64).sqrt()
    }
}

pub fn points_by_group(
    dump: &[AnnotationRecord],
    group_by: GroupBy,
    buckets: &BucketSpec,
) -> Result<GroupedPoints, AnalyticsError> {
    // Integer sort keys; floats are only attached for output.
    let mut groups: BTreeMap<(u8, usize), Moments> = BTreeMap::new();
    for r in dump {
        let key = match group_by {
            GroupBy::OrderIndex => (0, r.annotation.order_index as usize),
            GroupBy::PBucket => match r.decoding_p {
                None => (1, 0),
                Some(p) => (
                    0,
                    buckets.bucket_of(p).ok_or_else(|| AnalyticsError::UncoveredP {
                        p,
                        annotation_id: r.annotation.id.clone(),
                    })?,
                ),
            },
        };
        groups.entry(key).or_default().push(r.annotation.points);
    }
    let edges = buckets.edges();
    let groups = groups
        .into_iter()
        .map(|((tag, idx), m)| {
            let key = match (group_by, tag) {
                (GroupBy::OrderIndex, _) => GroupKey::Order {
                    order_index: idx as u32,
                },
                (GroupBy::PBucket, 0) => GroupKey::PBucket {
                    lower: edges[idx],
                    upper: edges[idx + 1],
                    closed: idx + 2 == edges.len(),
                },
                (GroupBy::PBucket, _) => GroupKey::NoDecodingP,
            };
            PointGroup {
                key,
                n: m.n,
                mean: m.mean(),
                sd: m.sample_sd(),
            }
        })
        .collect();
    Ok(GroupedPoints { group_by, groups })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorMean {
    pub annotator_id: String,
    pub annotations: u64,
    pub mean_points: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileReport {
    pub q: f64,
    pub annotators: usize,
    pub slice_size: usize,
    pub top_mean: f64,
    pub bottom_mean: f64,
    pub top: Vec<AnnotatorMean>,
    pub bottom: Vec<AnnotatorMean>,
}

/// Average points-per-annotation of the best and worst `ceil(q * A)`
/// annotators, where each annotator is weighted equally.
pub fn annotator_percentiles(
    dump: &[AnnotationRecord],
    q: f64,
) -> Result<PercentileReport, AnalyticsError> {
    if !(q > 0.0 && q < 0.5) {
        return Err(AnalyticsError::InvalidFraction(q));
    }
    let mut totals: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for r in dump {
        let t = totals.entry(&r.annotation.annotator_id).or_default();
        t.0 += u64::from(r.annotation.points);
        t.1 += 1;
    }
    let needed = ceil_tolerant(1.0 / q);
    if totals.len() < needed {
        return Err(AnalyticsError::InsufficientData {
            needed,
            available: totals.len(),
        });
    }
    let mut ranked: Vec<(&str, u64, u64)> = totals.into_iter().map(|(id, (p, n))| (id, p, n)).collect();
    // Descending by p/n compared exactly, then ascending id.
    ranked.sort_by(|a, b| {
        (u128::from(b.1) * u128::from(a.2))
            .cmp(&(u128::from(a.1) * u128::from(b.2)))
            .then_with(|| a.0.cmp(b.0))
    });
    let slice = ceil_tolerant(q * ranked.len() as f64).max(1);
    let describe = |items: &[(&str, u64, u64)]| -> Vec<AnnotatorMean> {
        items
            .iter()
            .map(|&(id, p, n)| AnnotatorMean {
                annotator_id: id.to_string(),
                annotations: n,
                mean_points: p as f64 / n as f64,
            })
            .collect()
    };
    let top = describe(&ranked[..slice]);
    let bottom = describe(&ranked[ranked.len() - slice..]);
    let avg = |xs: &[AnnotatorMean]| xs.iter().map(|a| a.mean_points).sum::<f64>() / xs.len() as f64;
    Ok(PercentileReport {
        q,
        annotators: ranked.len(),
        slice_size: slice,
        top_mean: avg(&top),
        bottom_mean: avg(&bottom),
        top,
        bottom,
    })
}

pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "all", "also", "an", "and", "any", "are", "as", "at", "be", "because", "been",
    "but", "by", "can", "could", "did", "do", "does", "for", "from", "had", "has", "have", "he",
    "her", "his", "how", "i", "if", "in", "into", "is", "it", "its", "just", "me", "more", "my",
    "no", "not", "of", "on", "one", "or", "other", "our", "she", "so", "some", "than", "that",
    "the", "their", "them", "then", "there", "these", "they", "this", "to", "too", "was", "we",
    "were", "what", "when", "which", "who", "why", "will", "with", "would", "you", "your",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCount {
    pub token: String,
    pub count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommentStats {
    /// Nonempty comments.
    pub total_comments: u64,
    pub unique_comment_count: u64,
    /// Sorted by descending count, then token.
    pub tokens: Vec<TokenCount>,
}

fn normalize_comment(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Deduplicate comments (trimmed, case-folded) and count tokens over the
/// unique ones. Tokens are maximal alphanumeric runs of the lowercased text.
pub fn comment_stats(dump: &[AnnotationRecord], stopwords: &BTreeSet<String>) -> CommentStats {
    let mut unique: BTreeSet<String> = BTreeSet::new();
    let mut total = 0;
    for r in dump {
        let c = normalize_comment(&r.annotation.explanation);
        if c.is_empty() {
            continue;
        }
        total += 1;
        unique.insert(c);
    }
    let mut freq: BTreeMap<&str, u64> = BTreeMap::new();
    for c in &unique {
        for token in c.split(|ch: char| !ch.is_alphanumeric()).filter(|t| !t.is_empty()) {
            if !stopwords.contains(token) {
                *freq.entry(token).or_default() += 1;
            }
        }
    }
    let mut tokens: Vec<TokenCount> = freq
        .into_iter()
        .map(|(token, count)| TokenCount {
            token: token.to_string(),
            count,
        })
        .collect();
    tokens.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.token.cmp(&b.token)));
    CommentStats {
        total_comments: total,
        unique_comment_count: unique.len() as u64,
        tokens,
    }
}

pub fn default_stopwords() -> BTreeSet<String> {
    DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect()
}
