//! Persistence contract consumed by the round engine, ingestion and the API,
//! plus an in-memory implementation.

use std::collections::{BTreeMap, HashMap, HashSet};

use parking_lot::RwLock;
use thiserror::Error;

use crate::domain::{
    AccountType, Annotation, AnnotationRecord, AnnotatorAccount, Category, Example, TimestampMs,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("storage backend: {0}")]
    Backend(String),
}

/// Everything needed to persist a finished round. The store assigns
/// `order_index` and updates the account aggregates in the same transaction.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationDraft {
    pub id: String,
    pub annotator_id: String,
    pub example_id: String,
    pub guess_index: Option<u32>,
    pub explanation: String,
    pub points: u32,
    pub perfect: bool,
    pub duration_ms: i64,
    pub created_at: TimestampMs,
}

impl AnnotationDraft {
    pub fn into_annotation(self, order_index: u32) -> Annotation {
        Annotation {
            id: self.id,
            annotator_id: self.annotator_id,
            example_id: self.example_id,
            guess_index: self.guess_index,
            explanation: self.explanation,
            points: self.points,
            duration_ms: self.duration_ms,
            order_index,
            created_at: self.created_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExampleSummary {
    pub id: String,
    pub attention_check: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExportFilter {
    pub category: Option<Category>,
    pub account_type: Option<AccountType>,
    /// Inclusive lower bound on `created_at`.
    pub since: Option<TimestampMs>,
    /// Exclusive upper bound on `created_at`.
    pub until: Option<TimestampMs>,
    pub include_attention_checks: bool,
}

impl ExportFilter {
    pub fn matches(&self, record: &AnnotationRecord, account_type: AccountType) -> bool {
        self.category.as_ref().is_none_or(|c| *c == record.category)
            && self.account_type.is_none_or(|t| t == account_type)
            && self.since.is_none_or(|t| record.annotation.created_at >= t)
            && self.until.is_none_or(|t| record.annotation.created_at < t)
            && (self.include_attention_checks || !record.attention_check)
    }
}

pub trait Store: Send + Sync {
    /// Fails with `Conflict` when the id already exists.
    fn insert_example(&self, example: &Example) -> Result<(), StoreError>;
    fn example(&self, id: &str) -> Result<Option<Example>, StoreError>;
    /// All examples ordered by id.
    fn examples(&self) -> Result<Vec<Example>, StoreError>;
    /// Example counts per category, ordered by category name.
    fn categories(&self) -> Result<Vec<(Category, u64)>, StoreError>;
    /// Examples in `category` the annotator has no annotation for, ordered by id.
    fn unseen_examples(
        &self,
        annotator_id: &str,
        category: &Category,
    ) -> Result<Vec<ExampleSummary>, StoreError>;

    /// Fails with `Conflict` on a duplicate id or display name.
    fn create_account(&self, account: &AnnotatorAccount, token_hash: &str)
        -> Result<(), StoreError>;
    fn account(&self, id: &str) -> Result<Option<AnnotatorAccount>, StoreError>;
    fn account_by_token(&self, token_hash: &str) -> Result<Option<AnnotatorAccount>, StoreError>;
    /// All accounts in creation order.
    fn accounts(&self) -> Result<Vec<AnnotatorAccount>, StoreError>;

    /// Atomically append the annotation at the annotator's next order index and
    /// fold it into the account aggregates. Fails with `Conflict` if the
    /// annotator already has an annotation for the example.
    fn commit_annotation(&self, draft: AnnotationDraft) -> Result<Annotation, StoreError>;
    /// The annotator's annotations ordered by `order_index`.
    fn annotations_of(&self, annotator_id: &str) -> Result<Vec<Annotation>, StoreError>;
    /// Denormalized dump from one consistent snapshot, ordered by
    /// `(annotator_id, order_index)`.
    fn export(&self, filter: &ExportFilter) -> Result<Vec<AnnotationRecord>, StoreError>;
}

pub(crate) fn denormalize(annotation: Annotation, example: &Example) -> AnnotationRecord {
    AnnotationRecord {
        annotation,
        category: example.category.clone(),
        decoding_p: example.decoding_p,
        boundary_index: example.boundary_index,
        attention_check: example.attention_check,
    }
}

#[derive(Default)]
struct Inner {
    examples: BTreeMap<String, Example>,
    accounts: BTreeMap<String, AnnotatorAccount>,
    creation_order: Vec<String>,
    tokens: HashMap<String, String>,
    names: HashSet<String>,
    annotations: BTreeMap<String, Vec<Annotation>>,
    seen: HashMap<String, HashSet<String>>,
}

/// Store backed by maps behind a single reader-writer lock. Every method is one
/// critical section, so reads are snapshots and commits are atomic.
#[derive(Default)]
pub struct MemoryStore {
    inner: RwLock<Inner>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Store for MemoryStore {
    fn insert_example(&self, example: &Example) -> Result<(), StoreError> {
        let mut inner = self.inner.write();
        if inner.examples.contains_key(&example.id) {
            return Err(StoreError::Conflict(format!("duplicate example id {}", example.id)));
        }
        inner.examples.insert(example.id.clone(), example.clone());
        Ok(())
    }

    fn example(&self, id: &str) -> Result<Option<Example>, StoreError> {
        Ok(self.inner.read().examples.get(id).cloned())
    }

    fn examples(&self) -> Result<Vec<Example>, StoreError> {
        Ok(self.inner.read().examples.values().cloned().collect())
    }

    fn categories(&self) -> Result<Vec<(Category, u64)>, StoreError> {
        let inner = self.inner.read();
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for e in inner.examples.values() {
            *counts.entry(e.category.as_str().to_string()).or_default() += 1;
        }
        Ok(counts.into_iter().map(|(c, n)| (Category::from(c), n)).collect())
    }

    fn unseen_examples(
        &self,
        annotator_id: &str,
        category: &Category,
    ) -> Result<Vec<ExampleSummary>, StoreError> {
        let inner = self.inner.read();
        let seen = inner.seen.get(annotator_id);
        Ok(inner
            .examples
            .values()
            .filter(|e| e.category == *category)
            .filter(|e| seen.is_none_or(|s| !s.contains(&e.id)))
            .map(|e| ExampleSummary {
                id: e.id.clone(),
                attention_check: e.attention_check,
            })
            .collect())
    }

    fn create_account(
        &self,
        account: &AnnotatorAccount,
        token_hash: &str,
    ) -> Result<(), StoreError> {
        let mut inner = self.inner.write();
        if inner.accounts.contains_key(&account.id) {
            return Err(StoreError::Conflict(format!("duplicate account id {}", account.id)));
        }
        if inner.names.contains(&account.display_name) {
            return Err(StoreError::Conflict(format!(
                "display name {} is taken",
                account.display_name
            )));
        }
        inner.names.insert(account.display_name.clone());
        inner.tokens.insert(token_hash.to_string(), account.id.clone());
        inner.creation_order.push(account.id.clone());
        inner.accounts.insert(account.id.clone(), account.clone());
        Ok(())
    }

    fn account(&self, id: &str) -> Result<Option<AnnotatorAccount>, StoreError> {
        Ok(self.inner.read().accounts.get(id).cloned())
    }

    fn account_by_token(&self, token_hash: &str) -> Result<Option<AnnotatorAccount>, StoreError> {
        let inner = self.inner.read();
        Ok(inner
            .tokens
            .get(token_hash)
            .and_then(|id| inner.accounts.get(id))
            .cloned())
    }

    fn accounts(&self) -> Result<Vec<AnnotatorAccount>, StoreError> {
        let inner = self.inner.read();
        Ok(inner
            .creation_order
            .iter()
            .map(|id| inner.accounts[id].clone())
            .collect())
    }

    fn commit_annotation(&self, draft: AnnotationDraft) -> Result<Annotation, StoreError> {
        let mut inner = self.inner.write();
        if !inner.examples.contains_key(&draft.example_id) {
            return Err(StoreError::NotFound(format!("example {}", draft.example_id)));
        }
        if !inner.accounts.contains_key(&draft.annotator_id) {
            return Err(StoreError::NotFound(format!("account {}", draft.annotator_id)));
        }
        let seen = inner.seen.entry(draft.annotator_id.clone()).or_default();
        if !seen.insert(draft.example_id.clone()) {
            return Err(StoreError::Conflict(format!(
                "annotator {} already annotated {}",
                draft.annotator_id, draft.example_id
            )));
        }
        let history = inner.annotations.entry(draft.annotator_id.clone()).or_default();
        let perfect = draft.perfect;
        let annotation = draft.into_annotation(history.len() as u32);
        history.push(annotation.clone());

        let account = inner
            .accounts
            .get_mut(&annotation.annotator_id)
            .expect("checked above");
        account.total_points += u64::from(annotation.points);
        account.total_annotations += 1;
        account.perfect_count += u64::from(perfect);
        Ok(annotation)
    }

    fn annotations_of(&self, annotator_id: &str) -> Result<Vec<Annotation>, StoreError> {
        Ok(self
            .inner
            .read()
            .annotations
            .get(annotator_id)
            .cloned()
            .unwrap_or_default())
    }

    fn export(&self, filter: &ExportFilter) -> Result<Vec<AnnotationRecord>, StoreError> {
        let inner = self.inner.read();
        let mut out = Vec::new();
        for (annotator_id, history) in &inner.annotations {
            let account_type = inner.accounts[annotator_id].account_type;
            for a in history {
                let example = inner
                    .examples
                    .get(&a.example_id)
                    .ok_or_else(|| StoreError::NotFound(format!("example {}", a.example_id)))?;
                let record = denormalize(a.clone(), example);
                if filter.matches(&record, account_type) {
                    out.push(record);
                }
            }
        }
        Ok(out)
    }
}
