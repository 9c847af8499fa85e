//! Named analytics reports with versioned JSON and CSV renderings.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use serde_json::json;

use crate::analytics::{
    self, AccuracySummary, AgreementReport, AnalyticsError, BucketSpec, CommentStats,
    DistanceHistogram, FilterReport, GroupBy, GroupedPoints, PercentileReport,
};
use crate::domain::{AnnotationRecord, DEFAULT_SENTENCES};
use crate::ingestion::canonicalize;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    Filter,
    Agreement,
    Histogram,
    PointsByOrder,
    PointsByP,
    Percentiles,
    Comments,
    Accuracy,
}

impl ReportKind {
    pub const ALL: [ReportKind; 8] = [
        ReportKind::Filter,
        ReportKind::Agreement,
        ReportKind::Histogram,
        ReportKind::PointsByOrder,
        ReportKind::PointsByP,
        ReportKind::Percentiles,
        ReportKind::Comments,
        ReportKind::Accuracy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReportKind::Filter => "filter",
            ReportKind::Agreement => "agreement",
            ReportKind::Histogram => "histogram",
            ReportKind::PointsByOrder => "points-by-order",
            ReportKind::PointsByP => "points-by-p",
            ReportKind::Percentiles => "percentiles",
            ReportKind::Comments => "comments",
            ReportKind::Accuracy => "accuracy",
        }
    }
}

impl fmt::Display for ReportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReportKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ReportKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown report {s}"))
    }
}

#[derive(Debug, Clone)]
pub struct ReportOptions {
    pub n_sentences: u32,
    /// Run on the dump as given instead of the filtered set.
    pub unfiltered: bool,
    pub percentile: f64,
    pub buckets: BucketSpec,
    pub stopwords: BTreeSet<String>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            n_sentences: DEFAULT_SENTENCES,
            unfiltered: false,
            percentile: 0.05,
            buckets: BucketSpec::uniform(10).expect("ten buckets are valid"),
            stopwords: analytics::default_stopwords(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementVariants {
    pub all_annotations: AgreementReport,
    pub filtered: AgreementReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Report {
    Filter(FilterReport),
    Agreement(AgreementVariants),
    Histogram(DistanceHistogram),
    Points(GroupedPoints),
    Percentiles(PercentileReport),
    Comments(CommentStats),
    Accuracy(AccuracySummary),
}

pub fn run_report(
    kind: ReportKind,
    dump: &[AnnotationRecord],
    opts: &ReportOptions,
) -> Result<Report, AnalyticsError> {
    let n = opts.n_sentences;
    let (filter, filtered) = analytics::filter_dump(dump, n);
    let data: &[AnnotationRecord] = if opts.unfiltered { dump } else { &filtered };
    Ok(match kind {
        ReportKind::Filter => Report::Filter(filter),
        ReportKind::Agreement => Report::Agreement(AgreementVariants {
            all_annotations: analytics::agreement(dump),
            filtered: analytics::agreement(&filtered),
        }),
        ReportKind::Histogram => Report::Histogram(analytics::distance_histogram(data, n)),
        ReportKind::PointsByOrder => Report::Points(analytics::points_by_group(
            data,
            GroupBy::OrderIndex,
            &opts.buckets,
        )?),
        ReportKind::PointsByP => Report::Points(analytics::points_by_group(
            data,
            GroupBy::PBucket,
            &opts.buckets,
        )?),
        ReportKind::Percentiles => {
            Report::Percentiles(analytics::annotator_percentiles(data, opts.percentile)?)
        }
        ReportKind::Comments => Report::Comments(analytics::comment_stats(data, &opts.stopwords)),
        ReportKind::Accuracy => Report::Accuracy(analytics::accuracy_summary(data)),
    })
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl Report {
    /// Pretty JSON envelope with sorted keys.
    pub fn to_json(&self, kind: ReportKind) -> String {
        let envelope = json!({
            "schema_version": SCHEMA_VERSION,
            "report": kind.name(),
            "data": self,
        });
        serde_json::to_string_pretty(&canonicalize(envelope)).expect("reports serialize")
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut row = |fields: &[String]| w.write_record(fields).expect("in-memory write");
        let s = |v: &dyn ToString| v.to_string();
        match self {
            Report::Filter(r) => {
                row(&["metric".into(), "value".into()]);
                row(&["total_annotations".into(), s(&r.total_annotations)]);
                row(&["failing_annotators".into(), s(&r.failing_annotators.len())]);
                row(&["filtered_annotations".into(), s(&r.filtered_annotations)]);
                row(&["data_errors".into(), s(&r.data_errors.len())]);
            }
            Report::Agreement(v) => {
                row(&[
                    "variant".into(),
                    "multi_annotated_examples".into(),
                    "pair_count".into(),
                    "exact_match_fraction".into(),
                    "within_one_fraction".into(),
                ]);
                for (name, r) in [("all", &v.all_annotations), ("filtered", &v.filtered)] {
                    row(&[
                        name.into(),
                        s(&r.multi_annotated_examples),
                        s(&r.pair_count),
                        opt(r.exact_match_fraction),
                        opt(r.within_one_fraction),
                    ]);
                }
            }
            Report::Histogram(h) => {
                row(&["distance".into(), "count".into(), "support".into()]);
                for b in &h.bins {
                    row(&[s(&b.distance), s(&b.count), s(&b.support)]);
                }
            }
            Report::Points(g) => {
                row(&["group".into(), "n".into(), "mean".into(), "sd".into()]);
                for p in &g.groups {
                    row(&[p.key.label(), s(&p.n), s(&p.mean), s(&p.sd)]);
                }
            }
            Report::Percentiles(p) => {
                row(&["slice".into(), "annotators".into(), "mean_points".into()]);
                row(&["top".into(), s(&p.slice_size), s(&p.top_mean)]);
                row(&["bottom".into(), s(&p.slice_size), s(&p.bottom_mean)]);
            }
            Report::Comments(c) => {
                row(&["token".into(), "count".into()]);
                for t in &c.tokens {
                    row(&[t.token.clone(), s(&t.count)]);
                }
            }
            Report::Accuracy(a) => {
                row(&["metric".into(), "value".into()]);
                row(&["with_boundary".into(), s(&a.with_boundary)]);
                row(&["exact_fraction".into(), opt(a.exact_fraction)]);
                row(&["mean_distance".into(), opt(a.mean_distance)]);
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}
