//! Live round state machine.
//!
//! A round reveals one sentence at a time. Each revealed sentence gets a
//! verdict: `human` reveals the next one, `machine` ends the reveal with that
//! sentence as the guess, and `human` on the last sentence ends it with no
//! guess. The annotator then explains the decision, the annotation is
//! committed, and only then is the true boundary returned.
//!
//! ```text
//! in_progress --decide(machine | human@N)--> awaiting_explanation
//! awaiting_explanation --submit_explanation--> completed
//! in_progress | awaiting_explanation --abandon | ttl--> abandoned
//! ```
//!
//! Mutations on one round are serialized by a per-round mutex and every
//! transition checks the current status first, so a second submission on a
//! completed round is rejected instead of producing a second annotation.

use std::collections::HashSet;
use std::fmt;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use dashmap::DashMap;
use parking_lot::Mutex;
use rand::seq::IndexedRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Category, Example, TimestampMs, DEFAULT_SENTENCES};
use crate::scoring::{self, ScoreConfig, ScoreError};
use crate::store::{AnnotationDraft, Store, StoreError};

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> TimestampMs;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> TimestampMs {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as i64)
            .unwrap_or(0)
    }
}

/// Clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicI64);

impl ManualClock {
    pub fn new(start: TimestampMs) -> Self {
        ManualClock(AtomicI64::new(start))
    }

    pub fn advance(&self, ms: i64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> TimestampMs {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub n_sentences: u32,
    pub score: ScoreConfig,
    /// Probability of serving an attention check when both kinds are available.
    pub attention_check_rate: f64,
    pub session_ttl_ms: i64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            n_sentences: DEFAULT_SENTENCES,
            score: ScoreConfig::default(),
            attention_check_rate: 0.10,
            session_ttl_ms: 24 * 60 * 60 * 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundStatus {
    InProgress,
    AwaitingExplanation,
    Completed,
    Abandoned,
}

impl fmt::Display for RoundStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RoundStatus::InProgress => "in_progress",
            RoundStatus::AwaitingExplanation => "awaiting_explanation",
            RoundStatus::Completed => "completed",
            RoundStatus::Abandoned => "abandoned",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Human,
    Machine,
}

/// Client-safe view of a round. Carries nothing about the boundary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundState {
    pub round_id: String,
    pub annotator_id: String,
    pub example_id: String,
    pub revealed_count: u32,
    pub status: RoundStatus,
    pub started_at: TimestampMs,
    /// The pending guess once the reveal has ended.
    pub guess: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StartedRound {
    pub state: RoundState,
    pub sentence: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecisionOutcome {
    NextSentence { index: u32, text: String },
    /// Reveal over; `guess = None` means the whole passage was judged human.
    AwaitingExplanation { guess: Option<u32> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundResult {
    pub annotation_id: String,
    pub example_id: String,
    pub true_boundary: Option<u32>,
    pub guess: Option<u32>,
    pub points: u32,
    pub distance: Option<i32>,
    pub perfect: bool,
    pub order_index: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operation {
    Decide,
    SubmitExplanation,
    Abandon,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RoundError {
    #[error("no unseen examples left in category {0}")]
    NoContent(String),
    #[error("round {0} not found")]
    NotFound(String),
    #[error("unknown annotator {0}")]
    UnknownAnnotator(String),
    #[error("round belongs to another annotator")]
    Forbidden,
    #[error("cannot {op:?} a round that is {status}")]
    InvalidState { status: RoundStatus, op: Operation },
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

struct Round {
    state: RoundState,
    example: Example,
    result: Option<RoundResult>,
}

/// Runs rounds for many annotators concurrently over a shared store.
pub struct RoundEngine<S> {
    store: Arc<S>,
    cfg: EngineConfig,
    clock: Arc<dyn Clock>,
    rounds: DashMap<String, Arc<Mutex<Round>>>,
    /// Examples each annotator currently has an open round on.
    open: DashMap<String, HashSet<String>>,
    rng: Mutex<ChaCha8Rng>,
}

impl<S: Store> RoundEngine<S> {
    pub fn new(store: Arc<S>, cfg: EngineConfig) -> Self {
        Self::with_clock(store, cfg, Arc::new(SystemClock), rand::rng().next_u64())
    }

    pub fn with_clock(store: Arc<S>, cfg: EngineConfig, clock: Arc<dyn Clock>, seed: u64) -> Self {
        RoundEngine {
            store,
            cfg,
            clock,
            rounds: DashMap::new(),
            open: DashMap::new(),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn store(&self) -> &Arc<S> {
        &self.store
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    fn new_id(&self, prefix: &str) -> String {
        let mut rng = self.rng.lock();
        format!("{prefix}-{:016x}{:016x}", rng.next_u64(), rng.next_u64())
    }

    pub fn start_round(
        &self,
        annotator_id: &str,
        category: &Category,
    ) -> Result<StartedRound, RoundError> {
        if self.store.account(annotator_id)?.is_none() {
            return Err(RoundError::UnknownAnnotator(annotator_id.to_string()));
        }
        // Holding the entry serializes starts for this annotator, so two
        // concurrent starts cannot pick the same example.
        let mut open = self.open.entry(annotator_id.to_string()).or_default();
        let candidates: Vec<_> = self
            .store
            .unseen_examples(annotator_id, category)?
            .into_iter()
            .filter(|e| !open.contains(&e.id))
            .collect();
        let (checks, regular): (Vec<_>, Vec<_>) =
            candidates.iter().partition(|e| e.attention_check);

        let chosen = {
            let mut rng = self.rng.lock();
            let pool = if checks.is_empty() {
                &regular
            } else if regular.is_empty() || rng.random_bool(self.cfg.attention_check_rate) {
                &checks
            } else {
                &regular
            };
            pool.choose(&mut *rng).map(|e| e.id.clone())
        };
        let Some(example_id) = chosen else {
            return Err(RoundError::NoContent(category.to_string()));
        };
        let example = self
            .store
            .example(&example_id)?
            .ok_or_else(|| StoreError::NotFound(format!("example {example_id}")))?;
        let sentence = example
            .sentence(1)
            .ok_or_else(|| RoundError::Validation(format!("example {example_id} is empty")))?
            .to_string();

        let state = RoundState {
            round_id: self.new_id("rnd"),
            annotator_id: annotator_id.to_string(),
            example_id: example_id.clone(),
            revealed_count: 1,
            status: RoundStatus::InProgress,
            started_at: self.clock.now_ms(),
            guess: None,
        };
        open.insert(example_id);
        self.rounds.insert(
            state.round_id.clone(),
            Arc::new(Mutex::new(Round {
                state: state.clone(),
                example,
                result: None,
            })),
        );
        Ok(StartedRound { state, sentence })
    }

    pub fn decide(
        &self,
        annotator_id: &str,
        round_id: &str,
        verdict: Verdict,
    ) -> Result<DecisionOutcome, RoundError> {
        let slot = self.slot(round_id)?;
        let mut round = slot.lock();
        self.check_access(&mut round, annotator_id)?;
        if round.state.status != RoundStatus::InProgress {
            return Err(RoundError::InvalidState {
                status: round.state.status,
                op: Operation::Decide,
            });
        }
        let n = round.example.n_sentences();
        let revealed = round.state.revealed_count;
        match verdict {
            Verdict::Human if revealed < n => {
                round.state.revealed_count += 1;
                let text = round
                    .example
                    .sentence(revealed + 1)
                    .expect("index within passage")
                    .to_string();
                Ok(DecisionOutcome::NextSentence {
                    index: revealed + 1,
                    text,
                })
            }
            Verdict::Human => {
                round.state.status = RoundStatus::AwaitingExplanation;
                round.state.guess = None;
                Ok(DecisionOutcome::AwaitingExplanation { guess: None })
            }
            Verdict::Machine => {
                round.state.status = RoundStatus::AwaitingExplanation;
                round.state.guess = Some(revealed);
                Ok(DecisionOutcome::AwaitingExplanation {
                    guess: Some(revealed),
                })
            }
        }
    }

    pub fn submit_explanation(
        &self,
        annotator_id: &str,
        round_id: &str,
        explanation: &str,
    ) -> Result<RoundResult, RoundError> {
        let slot = self.slot(round_id)?;
        let mut round = slot.lock();
        self.check_access(&mut round, annotator_id)?;
        if round.state.status != RoundStatus::AwaitingExplanation {
            return Err(RoundError::InvalidState {
                status: round.state.status,
                op: Operation::SubmitExplanation,
            });
        }
        let guess = round.state.guess;
        let explanation = explanation.trim();
        if guess.is_some() && explanation.is_empty() {
            return Err(RoundError::Validation(
                "an explanation is required for a machine verdict".into(),
            ));
        }

        let boundary = round.example.boundary_index;
        let n = round.example.n_sentences();
        let points = scoring::score(guess, boundary, n, &self.cfg.score)?;
        let perfect = scoring::is_perfect(points, &self.cfg.score);
        let now = self.clock.now_ms();
        let annotation = self.store.commit_annotation(AnnotationDraft {
            id: self.new_id("ann"),
            annotator_id: annotator_id.to_string(),
            example_id: round.state.example_id.clone(),
            guess_index: guess,
            explanation: explanation.to_string(),
            points,
            perfect,
            duration_ms: now - round.state.started_at,
            created_at: now,
        })?;

        round.state.status = RoundStatus::Completed;
        self.release(&round.state);
        let result = RoundResult {
            annotation_id: annotation.id,
            example_id: annotation.example_id,
            true_boundary: boundary,
            guess,
            points,
            distance: scoring::distance(guess, boundary),
            perfect,
            order_index: annotation.order_index,
        };
        round.result = Some(result.clone());
        Ok(result)
    }

    /// Idempotent on an already abandoned round.
    pub fn abandon_round(&self, annotator_id: &str, round_id: &str) -> Result<(), RoundError> {
        let slot = self.slot(round_id)?;
        let mut round = slot.lock();
        if round.state.annotator_id != annotator_id {
            return Err(RoundError::Forbidden);
        }
        match round.state.status {
            RoundStatus::Completed => Err(RoundError::InvalidState {
                status: RoundStatus::Completed,
                op: Operation::Abandon,
            }),
            RoundStatus::Abandoned => Ok(()),
            RoundStatus::InProgress | RoundStatus::AwaitingExplanation => {
                round.state.status = RoundStatus::Abandoned;
                self.release(&round.state);
                Ok(())
            }
        }
    }

    pub fn round(&self, round_id: &str) -> Option<RoundState> {
        let slot = self.rounds.get(round_id).map(|r| Arc::clone(r.value()))?;
        let state = slot.lock().state.clone();
        Some(state)
    }

    /// Text of the sentences revealed so far.
    pub fn revealed_sentences(&self, round_id: &str) -> Option<Vec<String>> {
        let slot = self.rounds.get(round_id).map(|r| Arc::clone(r.value()))?;
        let round = slot.lock();
        Some(round.example.sentences[..round.state.revealed_count as usize].to_vec())
    }

    /// The stored result of a completed round.
    pub fn result(&self, round_id: &str) -> Option<RoundResult> {
        let slot = self.rounds.get(round_id).map(|r| Arc::clone(r.value()))?;
        let result = slot.lock().result.clone();
        result
    }

    /// Abandon open rounds older than the session TTL and forget finished
    /// rounds older than twice the TTL. Returns the number abandoned.
    pub fn expire_stale(&self) -> usize {
        let now = self.clock.now_ms();
        let ttl = self.cfg.session_ttl_ms;
        let slots: Vec<_> = self
            .rounds
            .iter()
            .map(|r| (r.key().clone(), Arc::clone(r.value())))
            .collect();
        let mut abandoned = 0;
        for (id, slot) in slots {
            let mut round = slot.lock();
            let age = now - round.state.started_at;
            if self.expire_if_stale(&mut round, now) {
                abandoned += 1;
            } else if age > 2 * ttl
                && matches!(
                    round.state.status,
                    RoundStatus::Completed | RoundStatus::Abandoned
                )
            {
                drop(round);
                self.rounds.remove(&id);
            }
        }
        abandoned
    }

    pub fn active_rounds(&self) -> usize {
        self.rounds
            .iter()
            .filter(|r| {
                matches!(
                    r.value().lock().state.status,
                    RoundStatus::InProgress | RoundStatus::AwaitingExplanation
                )
            })
            .count()
    }

    fn slot(&self, round_id: &str) -> Result<Arc<Mutex<Round>>, RoundError> {
        self.rounds
            .get(round_id)
            .map(|r| Arc::clone(r.value()))
            .ok_or_else(|| RoundError::NotFound(round_id.to_string()))
    }

    fn check_access(&self, round: &mut Round, annotator_id: &str) -> Result<(), RoundError> {
        if round.state.annotator_id != annotator_id {
            return Err(RoundError::Forbidden);
        }
        self.expire_if_stale(round, self.clock.now_ms());
        Ok(())
    }

    fn expire_if_stale(&self, round: &mut Round, now: TimestampMs) -> bool {
        let open = matches!(
            round.state.status,
            RoundStatus::InProgress | RoundStatus::AwaitingExplanation
        );
        if open && now - round.state.started_at > self.cfg.session_ttl_ms {
            round.state.status = RoundStatus::Abandoned;
            self.release(&round.state);
            return true;
        }
        false
    }

    fn release(&self, state: &RoundState) {
        if let Some(mut open) = self.open.get_mut(&state.annotator_id) {
            open.remove(&state.example_id);
        }
    }
}
