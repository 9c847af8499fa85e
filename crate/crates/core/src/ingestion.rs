//! Building examples from human documents and pre-generated continuations,
//! and moving corpora and annotation dumps in and out as JSONL.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::domain::{validate_example, AnnotationRecord, Category, Example, RawExample, ValidationErrors};
use crate::store::{ExportFilter, Store, StoreError};

/// A human document and a model continuation of it, both pre-segmented.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPair {
    pub id: String,
    pub human_sentences: Vec<String>,
    pub generated_sentences: Vec<String>,
    pub generator: String,
    pub decoding_p: f64,
    pub category: String,
    #[serde(default)]
    pub prompt_source: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssemblyError {
    #[error("prompt length {k} outside [1, {max}]")]
    PromptLength { k: u32, max: u32 },
    #[error("need {needed} human sentences, have {available}")]
    NotEnoughHuman { needed: u32, available: usize },
    #[error("need {needed} generated sentences, have {available}")]
    NotEnoughGenerated { needed: u32, available: usize },
    #[error("need both human and generated shortfalls fixed: {0}; {1}")]
    NotEnoughBoth(Box<AssemblyError>, Box<AssemblyError>),
    #[error("expected {expected} instruction sentences, found {found}")]
    CheckLength { expected: u32, found: usize },
    #[error("invalid example: {0}")]
    Invalid(#[from] ValidationErrors),
}

/// First `k` human sentences followed by the first `n - k` generated ones;
/// the boundary lands on sentence `k + 1`.
pub fn assemble_example(pair: &RawPair, k: u32, n: u32) -> Result<Example, AssemblyError> {
    if k < 1 || k + 1 > n {
        return Err(AssemblyError::PromptLength {
            k,
            max: n.saturating_sub(1),
        });
    }
    let human_short = (pair.human_sentences.len() < k as usize).then_some(AssemblyError::NotEnoughHuman {
        needed: k,
        available: pair.human_sentences.len(),
    });
    let gen_short = (pair.generated_sentences.len() < (n - k) as usize).then_some(AssemblyError::NotEnoughGenerated {
        needed: n - k,
        available: pair.generated_sentences.len(),
    });
    match (human_short, gen_short) {
        (Some(h), Some(g)) => return Err(AssemblyError::NotEnoughBoth(Box::new(h), Box::new(g))),
        (Some(e), None) | (None, Some(e)) => return Err(e),
        (None, None) => {}
    }
    let sentences = pair.human_sentences[..k as usize]
        .iter()
        .chain(&pair.generated_sentences[..(n - k) as usize])
        .cloned()
        .collect();
    let raw = RawExample {
        id: Some(pair.id.clone()),
        category: Some(pair.category.clone()),
        sentences: Some(sentences),
        boundary_index: Some(k + 1),
        prompt_source: Some(pair.prompt_source.clone()),
        generator: Some(pair.generator.clone()),
        decoding_p: Some(pair.decoding_p),
        attention_check: Some(false),
    };
    Ok(validate_example(raw, n)?)
}

/// Prompt length drawn uniformly from `[1, n - 1]`.
pub fn sample_assembly_params<R: Rng + ?Sized>(rng: &mut R, n: u32) -> u32 {
    assert!(n >= 2, "passage needs at least two sentences");
    rng.random_range(1..n)
}

/// An all-human example whose text tells the reader to answer human-written
/// at every step.
pub fn make_attention_check(
    id: &str,
    category: &Category,
    instruction_sentences: Vec<String>,
    n: u32,
) -> Result<Example, AssemblyError> {
    if instruction_sentences.len() != n as usize {
        return Err(AssemblyError::CheckLength {
            expected: n,
            found: instruction_sentences.len(),
        });
    }
    let raw = RawExample {
        id: Some(id.to_string()),
        category: Some(category.as_str().to_string()),
        sentences: Some(instruction_sentences),
        boundary_index: None,
        prompt_source: Some("attention-check".into()),
        generator: Some(String::new()),
        decoding_p: None,
        attention_check: Some(true),
    };
    Ok(validate_example(raw, n)?)
}

/// Recursively sort object keys so output does not depend on map ordering.
pub fn canonicalize(value: Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<_> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(
                entries
                    .into_iter()
                    .map(|(k, v)| (k, canonicalize(v)))
                    .collect::<Map<_, _>>(),
            )
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        other => other,
    }
}

/// Single-line JSON with sorted keys.
pub fn to_canonical_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    serde_json::to_string(&canonicalize(serde_json::to_value(value)?))
}

fn nfc(s: String) -> String {
    s.nfc().collect()
}

fn normalize_raw(raw: RawExample) -> RawExample {
    RawExample {
        id: raw.id.map(nfc),
        category: raw.category.map(nfc),
        sentences: raw.sentences.map(|v| v.into_iter().map(nfc).collect()),
        prompt_source: raw.prompt_source.map(nfc),
        generator: raw.generator.map(nfc),
        ..raw
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    /// 1-based line number in the input.
    pub line: usize,
    pub id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ImportReport {
    pub imported: usize,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Default)]
pub struct ImportOptions {
    pub n_sentences: u32,
    /// Replaces the category of every record.
    pub category_override: Option<Category>,
}

/// Import example records line by line. Bad lines are reported and skipped;
/// the rest are inserted. Blank lines are ignored.
pub fn import_corpus<R: BufRead, S: Store + ?Sized>(
    reader: R,
    store: &S,
    opts: &ImportOptions,
) -> Result<ImportReport, IngestError> {
    let mut report = ImportReport::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut reject = |id: Option<String>, reason: String| {
            report.rejected.push(Rejection {
                line: lineno,
                id,
                reason,
            })
        };
        let mut raw: RawExample = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                reject(None, format!("malformed JSON: {e}"));
                continue;
            }
        };
        if let Some(c) = &opts.category_override {
            raw.category = Some(c.as_str().to_string());
        }
        let raw = normalize_raw(raw);
        let id = raw.id.clone();
        let example = match validate_example(raw, opts.n_sentences) {
            Ok(e) => e,
            Err(e) => {
                reject(id, e.to_string());
                continue;
            }
        };
        match store.insert_example(&example) {
            Ok(()) => report.imported += 1,
            Err(StoreError::Conflict(msg)) => reject(id, msg),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(report)
}

/// Write every stored example, ordered by id, as canonical JSONL.
pub fn export_examples<W: Write, S: Store + ?Sized>(store: &S, mut out: W) -> Result<usize, IngestError> {
    let examples = store.examples()?;
    for e in &examples {
        writeln!(out, "{}", to_canonical_json(e).map_err(|source| IngestError::Json { line: 0, source })?)?;
    }
    Ok(examples.len())
}

/// Write the filtered annotation dump as canonical JSONL ordered by
/// `(annotator_id, order_index)`.
pub fn export_annotations<W: Write, S: Store + ?Sized>(
    store: &S,
    filter: &ExportFilter,
    mut out: W,
) -> Result<usize, IngestError> {
    let records = store.export(filter)?;
    write_dump(&records, &mut out)?;
    Ok(records.len())
}

pub fn write_dump<W: Write>(records: &[AnnotationRecord], mut out: W) -> Result<(), IngestError> {
    for (i, r) in records.iter().enumerate() {
        let line = to_canonical_json(r).map_err(|source| IngestError::Json { line: i + 1, source })?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Parse an annotation dump. Unlike corpus import, any bad line is fatal.
pub fn read_dump<R: BufRead>(reader: R) -> Result<Vec<AnnotationRecord>, IngestError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line).map_err(|source| IngestError::Json { line: i + 1, source })?,
        );
    }
    Ok(records)
}
