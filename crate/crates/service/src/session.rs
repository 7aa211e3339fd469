//! Session state machine. Pure: persistence happens in [`crate::store`],
//! and live play and log replay go through the same [`SessionState::apply`].

use gtl_core::commentary::{CommentaryError, Commentator, Utterance};
use gtl_core::game::{GameError, PlayLogEntry, RoundOutcome, SessionConfig, GATES};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Practice,
    Playing,
    Complete,
}

/// What is written to `session.json` when a session is created.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub config: SessionConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_session_id: Option<String>,
    pub created_ms: u64,
}

/// A comment made after a game round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Emitted {
    /// Global position of the round whose acknowledgment carried it.
    pub round_index: usize,
    /// Game rounds completed when it fired, counting from 1.
    pub after_game_round: usize,
    pub utterance: Utterance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub record: SessionRecord,
    /// One entry per completed round, practice included, in order.
    pub log: Vec<PlayLogEntry>,
    pub emitted: Vec<Emitted>,
}

#[derive(Debug, Error, PartialEq)]
pub enum SessionError {
    #[error("gate {0} out of range 0..=7")]
    InvalidGate(usize),
    #[error("session is complete; fetch its results instead")]
    Complete,
    #[error("session is not complete; {remaining} rounds remain")]
    NotComplete { remaining: usize },
    #[error("round {submitted} was already submitted")]
    Duplicate { submitted: usize },
    #[error("expected a choice for round {expected}, got round {submitted}")]
    OutOfOrder { expected: usize, submitted: usize },
    #[error("token already used for round {round_index} gate {gate}")]
    TokenReuse { round_index: usize, gate: usize },
    #[error("log entry {index}: {message}")]
    Replay { index: usize, message: String },
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Commentary(#[from] CommentaryError),
}

/// A choice as submitted by the client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub round_index: usize,
    pub gate: usize,
    #[serde(default)]
    pub token: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    /// A retry of a choice already logged under the same token.
    Repeat { position: usize },
    /// A new choice; the entry must be persisted before it is applied.
    Record(PlayLogEntry),
}

impl SessionState {
    pub fn new(record: SessionRecord) -> Self {
        SessionState {
            record,
            log: Vec::new(),
            emitted: Vec::new(),
        }
    }

    /// Rebuilds a session from its record and play log, re-deriving every
    /// outcome and comment and checking them against what was logged.
    pub fn replay(
        record: SessionRecord,
        entries: Vec<PlayLogEntry>,
        commentator: &Commentator,
    ) -> Result<Self, SessionError> {
        let mut state = SessionState::new(record);
        for (index, entry) in entries.into_iter().enumerate() {
            let fail = |message: String| SessionError::Replay { index, message };
            if entry.session_id != state.id() {
                return Err(fail(format!("belongs to session {}", entry.session_id)));
            }
            if entry.round_index != index {
                return Err(fail(format!("round_index {} out of sequence", entry.round_index)));
            }
            if index >= state.config().total_rounds() {
                return Err(fail("more entries than rounds".into()));
            }
            let expected = state.config().play(index, entry.chosen_gate)?;
            if expected != entry.outcome() {
                return Err(fail(format!(
                    "logged outcome {:?} does not match the seeded draw {expected:?}",
                    entry.outcome()
                )));
            }
            state.apply(entry, commentator)?;
        }
        Ok(state)
    }

    pub fn id(&self) -> &str {
        &self.record.config.session_id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.record.config
    }

    pub fn practice_count(&self) -> usize {
        self.config().practice_rounds.len()
    }

    /// Global position of the next round to play.
    pub fn current_round(&self) -> usize {
        self.log.len()
    }

    pub fn phase(&self) -> Phase {
        phase_at(self.config(), self.current_round())
    }

    pub fn game_rounds_completed(&self) -> usize {
        self.current_round().saturating_sub(self.practice_count())
    }

    pub fn outcomes(&self) -> Vec<RoundOutcome> {
        self.log.iter().map(PlayLogEntry::outcome).collect()
    }

    /// Validates a choice without changing anything.
    pub fn decide(&self, choice: &Choice, timestamp_ms: u64) -> Result<Decision, SessionError> {
        if choice.gate >= GATES {
            return Err(SessionError::InvalidGate(choice.gate));
        }
        if let Some(token) = &choice.token {
            if let Some(prior) = self.log.iter().find(|e| e.token.as_ref() == Some(token)) {
                if prior.round_index == choice.round_index && prior.chosen_gate == choice.gate {
                    return Ok(Decision::Repeat {
                        position: prior.round_index,
                    });
                }
                return Err(SessionError::TokenReuse {
                    round_index: prior.round_index,
                    gate: prior.chosen_gate,
                });
            }
        }
        if self.phase() == Phase::Complete {
            return Err(SessionError::Complete);
        }
        let expected = self.current_round();
        if choice.round_index < expected {
            return Err(SessionError::Duplicate {
                submitted: choice.round_index,
            });
        }
        if choice.round_index > expected {
            return Err(SessionError::OutOfOrder {
                expected,
                submitted: choice.round_index,
            });
        }
        let outcome = self.config().play(expected, choice.gate)?;
        Ok(Decision::Record(PlayLogEntry {
            session_id: self.id().to_string(),
            round_index: expected,
            chosen_gate: choice.gate,
            guard_present: outcome.guard_present,
            payoff: outcome.payoff,
            timestamp_ms,
            token: choice.token.clone(),
        }))
    }

    /// Adds a persisted entry and fires any comment it schedules.
    pub fn apply(
        &mut self,
        entry: PlayLogEntry,
        commentator: &Commentator,
    ) -> Result<(), SessionError> {
        let position = entry.round_index;
        self.log.push(entry);
        let completed = self.game_rounds_completed();
        if position >= self.practice_count() {
            let seed = self.config().seeds().commentary;
            if let Some(utterance) =
                commentator.schedule_commentary(self.config().condition, seed, completed)?
            {
                self.emitted.push(Emitted {
                    round_index: position,
                    after_game_round: completed,
                    utterance,
                });
            }
        }
        Ok(())
    }

    /// Comment carried by the acknowledgment of the round at `position`.
    pub fn utterance_at(&self, position: usize) -> Option<&Utterance> {
        self.emitted
            .iter()
            .find(|e| e.round_index == position)
            .map(|e| &e.utterance)
    }
}

/// Phase of a session about to play the round at `position`.
pub fn phase_at(config: &SessionConfig, position: usize) -> Phase {
    if position >= config.total_rounds() {
        Phase::Complete
    } else if position < config.practice_rounds.len() {
        Phase::Practice
    } else {
        Phase::Playing
    }
}
