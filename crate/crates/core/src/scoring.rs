//! Point system and signed distance from the boundary.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub max_points: u32,
    pub decay_per_sentence: u32,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            max_points: 5,
            decay_per_sentence: 1,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.max_points == 0 || self.decay_per_sentence == 0 {
            return Err(ScoreError::InvalidConfig(*self));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("index {index} outside [1, {n}]")]
    IndexOutOfRange { index: u32, n: u32 },
    #[error("invalid score config {0:?}: both values must be positive")]
    InvalidConfig(ScoreConfig),
}

/// Points awarded for a guess.
///
/// An exact guess earns `max_points`, each sentence past the boundary costs
/// `decay_per_sentence` down to zero, and any guess before the boundary earns
/// nothing. Judging an all-human passage as all-human earns `max_points`.
pub fn score(
    guess: Option<u32>,
    boundary: Option<u32>,
    n_sentences: u32,
    cfg: &ScoreConfig,
) -> Result<u32, ScoreError> {
    cfg.validate()?;
    for index in guess.into_iter().chain(boundary) {
        if index == 0 || index > n_sentences {
            return Err(ScoreError::IndexOutOfRange {
                index,
                n: n_sentences,
            });
        }
    }
    Ok(match (guess, boundary) {
        (Some(g), Some(b)) if g < b => 0,
        (Some(g), Some(b)) => {
            let penalty = u64::from(cfg.decay_per_sentence) * u64::from(g - b);
            u64::from(cfg.max_points).saturating_sub(penalty) as u32
        }
        (None, Some(_)) => 0,
        (None, None) => cfg.max_points,
        (Some(_), None) => 0,
    })
}

/// `guess - boundary`; negative when a human-written sentence was picked.
/// `None` when either side is absent.
pub fn distance(guess: Option<u32>, boundary: Option<u32>) -> Option<i32> {
    Some(guess? as i32 - boundary? as i32)
}

pub fn is_perfect(points: u32, cfg: &ScoreConfig) -> bool {
    points == cfg.max_points
}

/// Number of boundary positions in `[2, n]` for which a guess in `[1, n]` can
/// sit at distance `d`. Zero outside `[-(n-1), n-2]`.
pub fn distance_support(d: i32, n: u32) -> u32 {
    let n = n as i32;
    (2..=n).filter(|b| (1..=n).contains(&(b + d))).count() as u32
}
