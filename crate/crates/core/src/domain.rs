//! Shared data model: examples, annotations, accounts and their validation.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Default passage length.
pub const DEFAULT_SENTENCES: u32 = 10;

/// Milliseconds since the Unix epoch, UTC.
pub type TimestampMs = i64;

/// Text domain an example belongs to.
///
/// `news` and `stories` are the seed domains; any other tag is carried verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    News,
    Stories,
    Other(String),
}

impl Category {
    pub fn as_str(&self) -> &str {
        match self {
            Category::News => "news",
            Category::Stories => "stories",
            Category::Other(tag) => tag,
        }
    }
}

impl From<&str> for Category {
    fn from(tag: &str) -> Self {
        match tag {
            "news" => Category::News,
            "stories" => Category::Stories,
            other => Category::Other(other.to_string()),
        }
    }
}

impl From<String> for Category {
    fn from(tag: String) -> Self {
        match tag.as_str() {
            "news" => Category::News,
            "stories" => Category::Stories,
            _ => Category::Other(tag),
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Category {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer).map(Category::from)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccountType {
    Paid,
    Organic,
}

impl AccountType {
    pub fn as_str(self) -> &'static str {
        match self {
            AccountType::Paid => "paid",
            AccountType::Organic => "organic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "paid" => Some(AccountType::Paid),
            "organic" => Some(AccountType::Organic),
            _ => None,
        }
    }
}

/// An example record as it appears on the wire, before validation.
///
/// Every field is optional so that a record missing several fields reports all
/// of them at once instead of failing on the first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawExample {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub category: Option<String>,
    #[serde(default)]
    pub sentences: Option<Vec<String>>,
    #[serde(default)]
    pub boundary_index: Option<u32>,
    #[serde(default)]
    pub prompt_source: Option<String>,
    #[serde(default)]
    pub generator: Option<String>,
    #[serde(default)]
    pub decoding_p: Option<f64>,
    #[serde(default)]
    pub attention_check: Option<bool>,
}

/// A passage of `N` sentences whose first `boundary_index - 1` sentences are
/// human-written and the rest machine-generated. `boundary_index = None` means
/// the whole passage is human-written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub category: Category,
    pub sentences: Vec<String>,
    /// 1-based index of the first machine-generated sentence.
    pub boundary_index: Option<u32>,
    pub prompt_source: String,
    pub generator: String,
    /// Nucleus sampling parameter used for the continuation.
    pub decoding_p: Option<f64>,
    pub attention_check: bool,
}

impl Example {
    pub fn n_sentences(&self) -> u32 {
        self.sentences.len() as u32
    }

    /// Re-run validation on an already constructed example.
    pub fn check(&self, n: u32) -> Result<(), ValidationErrors> {
        validate_example(RawExample::from(self.clone()), n).map(|_| ())
    }

    /// 1-based sentence text.
    pub fn sentence(&self, index: u32) -> Option<&str> {
        let i = usize::try_from(index).ok()?.checked_sub(1)?;
        self.sentences.get(i).map(String::as_str)
    }
}

impl From<Example> for RawExample {
    fn from(e: Example) -> Self {
        RawExample {
            id: Some(e.id),
            category: Some(e.category.as_str().to_string()),
            sentences: Some(e.sentences),
            boundary_index: e.boundary_index,
            prompt_source: Some(e.prompt_source),
            generator: Some(e.generator),
            decoding_p: e.decoding_p,
            attention_check: Some(e.attention_check),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("missing field `{0}`")]
    Missing(&'static str),
    #[error("id must be nonempty")]
    EmptyId,
    #[error("expected {expected} sentences, found {found}")]
    SentenceCount { expected: u32, found: usize },
    #[error("sentence {0} is empty")]
    EmptySentence(u32),
    #[error("first sentence must be human: boundary_index must be at least 2")]
    BoundaryAtFirstSentence,
    #[error("boundary_index {index} exceeds passage length {n}")]
    BoundaryOutOfRange { index: u32, n: u32 },
    #[error("attention check examples cannot have a boundary")]
    AttentionCheckWithBoundary,
    #[error("decoding_p must be present exactly when a boundary is present")]
    DecodingPMismatch,
    #[error("decoding_p {0} outside [0, 1]")]
    DecodingPOutOfRange(f64),
    #[error("generator must be empty when there is no boundary")]
    GeneratorWithoutBoundary,
}

/// The complete list of problems found in one record.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
pub struct ValidationErrors(pub Vec<ValidationError>);

impl ValidationErrors {
    pub fn contains(&self, e: &ValidationError) -> bool {
        self.0.contains(e)
    }
}

/// Validate a raw record against a passage length of `n` sentences.
pub fn validate_example(raw: RawExample, n: u32) -> Result<Example, ValidationErrors> {
    let mut errors = Vec::new();

    let id = raw.id.unwrap_or_default();
    if id.is_empty() {
        errors.push(ValidationError::EmptyId);
    }
    let category = match raw.category {
        Some(c) if !c.is_empty() => Some(Category::from(c)),
        _ => {
            errors.push(ValidationError::Missing("category"));
            None
        }
    };
    let sentences = raw.sentences.unwrap_or_default();
    if sentences.len() != n as usize {
        errors.push(ValidationError::SentenceCount {
            expected: n,
            found: sentences.len(),
        });
    }
    for (i, s) in sentences.iter().enumerate() {
        if s.trim().is_empty() {
            errors.push(ValidationError::EmptySentence(i as u32 + 1));
        }
    }

    let attention_check = raw.attention_check.unwrap_or(false);
    match raw.boundary_index {
        Some(1) | Some(0) => errors.push(ValidationError::BoundaryAtFirstSentence),
        Some(b) if b > n => errors.push(ValidationError::BoundaryOutOfRange { index: b, n }),
        _ => {}
    }
    if attention_check && raw.boundary_index.is_some() {
        errors.push(ValidationError::AttentionCheckWithBoundary);
    }
    if raw.decoding_p.is_some() != raw.boundary_index.is_some() {
        errors.push(ValidationError::DecodingPMismatch);
    }
    if let Some(p) = raw.decoding_p {
        if !(0.0..=1.0).contains(&p) {
            errors.push(ValidationError::DecodingPOutOfRange(p));
        }
    }
    let generator = raw.generator.unwrap_or_default();
    if raw.boundary_index.is_none() && !generator.is_empty() {
        errors.push(ValidationError::GeneratorWithoutBoundary);
    }

    match category {
        Some(category) if errors.is_empty() => Ok(Example {
            id,
            category,
            sentences,
            boundary_index: raw.boundary_index,
            prompt_source: raw.prompt_source.unwrap_or_default(),
            generator,
            decoding_p: raw.decoding_p,
            attention_check,
        }),
        _ => Err(ValidationErrors(errors)),
    }
}

/// One completed round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: String,
    pub annotator_id: String,
    pub example_id: String,
    /// 1-based; `None` when every sentence was judged human-written.
    pub guess_index: Option<u32>,
    pub explanation: String,
    pub points: u32,
    pub duration_ms: i64,
    /// Position within the annotator's history, starting at 0.
    pub order_index: u32,
    pub created_at: TimestampMs,
}

/// Annotation dump line: the annotation plus the example metadata needed to
/// analyze it standalone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    #[serde(flatten)]
    pub annotation: Annotation,
    pub category: Category,
    pub decoding_p: Option<f64>,
    pub boundary_index: Option<u32>,
    pub attention_check: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorAccount {
    pub id: String,
    pub display_name: String,
    pub account_type: AccountType,
    pub total_points: u64,
    pub total_annotations: u64,
    pub perfect_count: u64,
    pub created_at: TimestampMs,
}
