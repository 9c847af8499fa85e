//! Core of the human/machine boundary game: the shared data model, scoring,
//! the live round state machine, corpus ingestion, and analytics over
//! annotation dumps.

pub mod analytics;
pub mod domain;
pub mod ingestion;
pub mod leaderboard;
pub mod report;
pub mod round;
pub mod scoring;
pub mod store;

pub use domain::{
    validate_example, AccountType, Annotation, AnnotationRecord, AnnotatorAccount, Category,
    Example, RawExample, TimestampMs, ValidationError, ValidationErrors, DEFAULT_SENTENCES,
};
pub use leaderboard::{LeaderboardEntry, ProfileView};
pub use round::{
    Clock, DecisionOutcome, EngineConfig, ManualClock, RoundEngine, RoundError, RoundResult,
    RoundState, RoundStatus, StartedRound, SystemClock, Verdict,
};
pub use scoring::{distance, is_perfect, score, ScoreConfig};
pub use store::{ExportFilter, MemoryStore, Store, StoreError};
