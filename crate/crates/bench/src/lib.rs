//! Synthetic fixtures shared by the benchmarks.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seam_core::store::{MemoryStore, Store};
use seam_core::{
    scoring, AccountType, Annotation, AnnotationRecord, AnnotatorAccount, Category, EngineConfig,
    Example, RoundEngine, ScoreConfig,
};

pub const N: u32 = 10;

pub fn example(id: &str, boundary: Option<u32>, check: bool) -> Example {
    Example {
        id: id.into(),
        category: Category::News,
        sentences: (1..=N).map(|i| format!("{id} sentence {i}.")).collect(),
        boundary_index: boundary,
        prompt_source: "bench".into(),
        generator: boundary.map(|_| "gen".to_string()).unwrap_or_default(),
        decoding_p: boundary.map(|b| f64::from(b) / 10.0),
        attention_check: check,
    }
}

pub fn account(id: &str) -> AnnotatorAccount {
    AnnotatorAccount {
        id: id.into(),
        display_name: id.into(),
        account_type: AccountType::Organic,
        total_points: 0,
        total_annotations: 0,
        perfect_count: 0,
        created_at: 0,
    }
}

/// A dump of `annotators * per_annotator` records over `examples` shared
/// examples, one in ten of them attention checks.
/// Every tenth annotator fails the checks.
pub fn synthetic_dump(annotators: u32, per_annotator: u32, examples: u32, seed: u64) -> Vec<AnnotationRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let meta: Vec<(Option<u32>, bool)> = (0..examples)
        .map(|e| if e % 10 == 0 { (None, true) } else { (Some(rng.random_range(2..=N)), false) })
        .collect();
    let cfg = ScoreConfig::default();
    let mut dump = Vec::with_capacity((annotators * per_annotator) as usize);
    for a in 0..annotators {
        for k in 0..per_annotator {
            let e = rng.random_range(0..examples);
            let (boundary, check) = meta[e as usize];
            let guess = if check && a % 10 != 0 || rng.random_bool(0.1) {
                None
            } else {
                Some(rng.random_range(1..=N))
            };
            dump.push(AnnotationRecord {
                annotation: Annotation {
                    id: format!("a{a}-{k}"),
                    annotator_id: format!("a{a}"),
                    example_id: format!("e{e}"),
                    guess_index: guess,
                    explanation: "the phrasing repeats itself".into(),
                    points: scoring::score(guess, boundary, N, &cfg).unwrap(),
                    duration_ms: 5_000,
                    order_index: k,
                    created_at: i64::from(k),
                },
                category: Category::News,
                decoding_p: boundary.map(|b| f64::from(b) / 10.0),
                boundary_index: boundary,
                attention_check: check,
            });
        }
    }
    dump
}

/// An engine over `examples` boundary examples and `annotators` accounts.
pub fn engine(examples: u32, annotators: u32) -> RoundEngine<MemoryStore> {
    let store = Arc::new(MemoryStore::new());
    for e in 0..examples {
        store.insert_example(&example(&format!("e{e}"), Some(2 + e % 9), false)).unwrap();
    }
    for a in 0..annotators {
        store.create_account(&account(&format!("a{a}")), &format!("t{a}")).unwrap();
    }
    RoundEngine::new(store, EngineConfig::default())
}
