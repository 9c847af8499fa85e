//! Leaderboard ranking and profile aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{Annotation, AnnotatorAccount, Category};
use crate::scoring::{self, ScoreConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub rank: u32,
    pub account_id: String,
    pub display_name: String,
    pub total_points: u64,
    pub total_annotations: u64,
}

/// Dense ranking by total points. Tied accounts share a rank and are listed
/// oldest first; `accounts` is expected in creation order, which breaks ties
/// between accounts created in the same millisecond. At most `top_n` entries.
pub fn rank(accounts: &[AnnotatorAccount], top_n: usize) -> Vec<LeaderboardEntry> {
    let mut sorted: Vec<&AnnotatorAccount> = accounts.iter().collect();
    sorted.sort_by(|a, b| {
        b.total_points
            .cmp(&a.total_points)
            .then(a.created_at.cmp(&b.created_at))
    });
    let mut out = Vec::with_capacity(top_n.min(sorted.len()));
    let mut rank = 0;
    let mut last = None;
    for a in sorted.into_iter().take(top_n) {
        if last != Some(a.total_points) {
            rank += 1;
            last = Some(a.total_points);
        }
        out.push(LeaderboardEntry {
            rank,
            account_id: a.id.clone(),
            display_name: a.display_name.clone(),
            total_points: a.total_points,
            total_annotations: a.total_annotations,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileView {
    pub account_id: String,
    pub display_name: String,
    pub total_annotations: u64,
    pub total_points: u64,
    pub perfect_count: u64,
    pub per_category: BTreeMap<String, u64>,
}

pub fn profile<F>(account: &AnnotatorAccount, annotations: &[Annotation], category_of: F) -> ProfileView
where
    F: Fn(&str) -> Option<Category>,
{
    let mut per_category = BTreeMap::new();
    for a in annotations {
        if let Some(c) = category_of(&a.example_id) {
            *per_category.entry(c.as_str().to_string()).or_default() += 1;
        }
    }
    ProfileView {
        account_id: account.id.clone(),
        display_name: account.display_name.clone(),
        total_annotations: account.total_annotations,
        total_points: account.total_points,
        perfect_count: account.perfect_count,
        per_category,
    }
}

/// `(total_points, total_annotations, perfect_count)` recomputed from scratch.
pub fn recompute_aggregates(annotations: &[Annotation], cfg: &ScoreConfig) -> (u64, u64, u64) {
    annotations.iter().fold((0, 0, 0), |(p, n, perfect), a| {
        (
            p + u64::from(a.points),
            n + 1,
            perfect + u64::from(scoring::is_perfect(a.points, cfg)),
        )
    })
}
