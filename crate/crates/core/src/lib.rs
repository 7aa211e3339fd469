//! Guards and Treasures: an eight-gate security game, quantal-response
//! models of how boundedly rational players choose gates, and an
//! affect-aware n-gram model that writes the opponent's commentary.
//!
//! - [`game`]: rounds, expected utilities, outcome sampling, scoring, file formats.
//! - [`rationality`]: QR and SUQR choice models, maximum-likelihood fits,
//!   synthetic players, interval and between-session analyses.
//! - [`commentary`]: bidirectional smoothed n-grams, valence-weighted
//!   fill-in-the-blank completion, commentary scheduling.
//! - [`reference`]: published population fits as fixtures.
//!
//! The guide in `book/` walks through each piece; its code listings are
//! compiled and run as doctests of this crate.

pub mod commentary;
pub mod game;
pub mod rationality;
pub mod reference;

pub use commentary::{
    candidate_set, complete_stem, score_word, AffectLexicon, Commentator, Direction, NGramCounts,
    ScorerWeights, SentenceStem, Utterance,
};
pub use game::{
    expected_utility, generate_rounds, round_utilities, sample_outcome, score_session, Condition,
    GateSpec, RoundOutcome, RoundSpec, SessionConfig, SessionSeeds, GATES,
};
pub use rationality::{
    fit_by_intervals, fit_lambda, fit_w, qr_choice_probs, qr_log_likelihood, session_change,
    simulate_player, suqr_choice_probs, suqr_log_likelihood, ChoiceModel, FitOptions, FitResult,
    ModelKind, PlayDataset, PlayEntry,
};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/game.md")]
    mod game {}
    #[doc = include_str!("../../../book/src/quantal-response.md")]
    mod quantal_response {}
    #[doc = include_str!("../../../book/src/suqr.md")]
    mod suqr {}
    #[doc = include_str!("../../../book/src/intervals.md")]
    mod intervals {}
    #[doc = include_str!("../../../book/src/commentary.md")]
    mod commentary {}
}
