//! Rounds, gates, expected utilities, outcome sampling and scoring for the
//! Guards and Treasures game.
//!
//! A round shows the attacker eight gates. Each gate carries an integer
//! reward `R`, an integer penalty `Y` and the probability `g` that a guard
//! stands behind it. The attacker picks one gate; an unguarded gate pays
//! `+R`, a guarded one costs `-Y`.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of gates shown in every round.
pub const GATES: usize = 8;

pub const MIN_POINTS: i32 = 1;
pub const MAX_POINTS: i32 = 10;

/// Rounds played before the scored session starts.
pub const DEFAULT_PRACTICE_ROUNDS: usize = 2;
/// Rounds in one scored session.
pub const DEFAULT_GAME_ROUNDS: usize = 35;

#[derive(Debug, Error, PartialEq)]
pub enum GameError {
    #[error("reward {0} outside [1, 10]")]
    RewardOutOfRange(i64),
    #[error("penalty {0} outside [1, 10]")]
    PenaltyOutOfRange(i64),
    #[error("coverage {0} outside [0, 1]")]
    CoverageOutOfRange(f64),
    #[error("gate index {0} out of range (expected 0..=7)")]
    GateIndexOutOfRange(usize),
    #[error("round {round}: expected 8 gates, found {found}")]
    WrongGateCount { round: usize, found: usize },
    #[error("round {round}, gate {gate}: {source}")]
    InvalidGate {
        round: usize,
        gate: usize,
        #[source]
        source: Box<GameError>,
    },
    #[error("round position {0} is past the end of the session")]
    PositionOutOfRange(usize),
    #[error("coverage budget {0} outside (0, 8]")]
    BudgetOutOfRange(f64),
    #[error("round count must be at least 1")]
    NoRounds,
    #[error("cannot score an empty outcome list")]
    EmptyOutcomes,
    #[error("unknown condition {0:?} (expected \"encouraging\" or \"discouraging\")")]
    UnknownCondition(String),
    #[error("malformed round file: {0}")]
    Malformed(String),
    #[error("play log line {line}: {message}")]
    BadLogLine { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for GameError {
    fn from(e: std::io::Error) -> Self {
        GameError::Io(e.to_string())
    }
}

/// One gate: reward, penalty and guard coverage probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GateSpec {
    reward: i32,
    penalty: i32,
    coverage: f64,
}

impl GateSpec {
    pub fn new(reward: i32, penalty: i32, coverage: f64) -> Result<Self, GameError> {
        if !(MIN_POINTS..=MAX_POINTS).contains(&reward) {
            return Err(GameError::RewardOutOfRange(reward.into()));
        }
        if !(MIN_POINTS..=MAX_POINTS).contains(&penalty) {
            return Err(GameError::PenaltyOutOfRange(penalty.into()));
        }
        if !(0.0..=1.0).contains(&coverage) {
            return Err(GameError::CoverageOutOfRange(coverage));
        }
        Ok(GateSpec {
            reward,
            penalty,
            coverage,
        })
    }

    pub fn reward(&self) -> i32 {
        self.reward
    }

    pub fn penalty(&self) -> i32 {
        self.penalty
    }

    pub fn coverage(&self) -> f64 {
        self.coverage
    }

    /// The `[R, Y, g]` attribute row used by the subjective-utility model.
    pub fn features(&self) -> [f64; 3] {
        [f64::from(self.reward), f64::from(self.penalty), self.coverage]
    }
}

impl<'de> Deserialize<'de> for GateSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawGate::deserialize(d)?;
        raw.validate().map_err(serde::de::Error::custom)
    }
}

/// Unvalidated gate as it appears on disk.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGate {
    reward: i64,
    penalty: i64,
    coverage: f64,
}

impl RawGate {
    fn validate(&self) -> Result<GateSpec, GameError> {
        let reward =
            i32::try_from(self.reward).map_err(|_| GameError::RewardOutOfRange(self.reward))?;
        let penalty =
            i32::try_from(self.penalty).map_err(|_| GameError::PenaltyOutOfRange(self.penalty))?;
        GateSpec::new(reward, penalty, self.coverage)
    }
}

/// One round: its ordinal and exactly eight gates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSpec {
    pub round_index: usize,
    pub gates: [GateSpec; GATES],
}

impl RoundSpec {
    pub fn new(round_index: usize, gates: Vec<GateSpec>) -> Result<Self, GameError> {
        let found = gates.len();
        let gates: [GateSpec; GATES] = gates.try_into().map_err(|_| GameError::WrongGateCount {
            round: round_index,
            found,
        })?;
        Ok(RoundSpec { round_index, gates })
    }

    pub fn gate(&self, index: usize) -> Result<&GateSpec, GameError> {
        self.gates
            .get(index)
            .ok_or(GameError::GateIndexOutOfRange(index))
    }

    pub fn features(&self) -> [[f64; 3]; GATES] {
        self.gates.map(|g| g.features())
    }

    /// Index of the gate with the highest expected utility (lowest index on ties).
    pub fn best_gate(&self) -> usize {
        let utilities = round_utilities(self);
        let mut best = 0;
        for (i, &u) in utilities.iter().enumerate() {
            if u > utilities[best] {
                best = i;
            }
        }
        best
    }
}

/// What happened when the attacker opened a gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub chosen_gate: usize,
    pub guard_present: bool,
    pub payoff: i32,
}

impl RoundOutcome {
    /// Builds an outcome from a gate and guard draw, deriving the payoff.
    pub fn resolve(gate: &GateSpec, chosen_gate: usize, guard_present: bool) -> Self {
        let payoff = if guard_present {
            -gate.penalty
        } else {
            gate.reward
        };
        RoundOutcome {
            chosen_gate,
            guard_present,
            payoff,
        }
    }
}

/// Affect of the opponent's commentary for a whole session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Encouraging,
    Discouraging,
}

impl Condition {
    /// `+1` for encouraging, `-1` for discouraging.
    pub fn affect_sign(self) -> i8 {
        match self {
            Condition::Encouraging => 1,
            Condition::Discouraging => -1,
        }
    }

    pub fn inverted(self) -> Self {
        match self {
            Condition::Encouraging => Condition::Discouraging,
            Condition::Discouraging => Condition::Encouraging,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Encouraging => "encouraging",
            Condition::Discouraging => "discouraging",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = GameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "encouraging" => Ok(Condition::Encouraging),
            "discouraging" => Ok(Condition::Discouraging),
            other => Err(GameError::UnknownCondition(other.to_string())),
        }
    }
}

/// Coverage budget used when rounds are generated without an explicit one.
pub const DEFAULT_COVERAGE_BUDGET: f64 = 3.0;

/// Independent seeds for the parts of a session, all derived from one
/// session seed. Deriving them keeps, say, the guard draw for round 0 from
/// reusing the numbers that generated round 0's coverages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionSeeds {
    pub game_rounds: u64,
    pub practice_rounds: u64,
    pub outcomes: u64,
    pub commentary: u64,
}

impl SessionSeeds {
    pub fn derive(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        SessionSeeds {
            game_rounds: rng.random(),
            practice_rounds: rng.random(),
            outcomes: rng.random(),
            commentary: rng.random(),
        }
    }
}

/// Everything needed to run one session deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub session_id: String,
    pub condition: Condition,
    /// Practice rounds come from their own pool and never carry commentary.
    pub practice_rounds: Vec<RoundSpec>,
    pub game_rounds: Vec<RoundSpec>,
    /// Session seed; see [`SessionSeeds`] for what is derived from it.
    pub rng_seed: u64,
}

impl SessionConfig {
    pub fn new(
        session_id: impl Into<String>,
        condition: Condition,
        practice_rounds: Vec<RoundSpec>,
        game_rounds: Vec<RoundSpec>,
        rng_seed: u64,
    ) -> Result<Self, GameError> {
        if game_rounds.is_empty() {
            return Err(GameError::NoRounds);
        }
        Ok(SessionConfig {
            session_id: session_id.into(),
            condition,
            practice_rounds,
            game_rounds,
            rng_seed,
        })
    }

    /// Generates practice and game rounds from the session seed.
    pub fn generate(
        session_id: impl Into<String>,
        condition: Condition,
        rng_seed: u64,
        practice_count: usize,
        game_count: usize,
        coverage_budget: f64,
    ) -> Result<Self, GameError> {
        let seeds = SessionSeeds::derive(rng_seed);
        let practice_rounds = if practice_count == 0 {
            Vec::new()
        } else {
            generate_rounds(practice_count, seeds.practice_rounds, coverage_budget)?
        };
        let game_rounds = generate_rounds(game_count, seeds.game_rounds, coverage_budget)?;
        SessionConfig::new(session_id, condition, practice_rounds, game_rounds, rng_seed)
    }

    pub fn seeds(&self) -> SessionSeeds {
        SessionSeeds::derive(self.rng_seed)
    }

    /// Guard-draw generator for a global round position.
    pub fn outcome_rng(&self, position: usize) -> ChaCha8Rng {
        outcome_rng(self.seeds().outcomes, position)
    }

    /// Resolves the choice made at a global round position.
    pub fn play(&self, position: usize, chosen_gate: usize) -> Result<RoundOutcome, GameError> {
        let round = self
            .round_at(position)
            .ok_or(GameError::PositionOutOfRange(position))?;
        sample_outcome(round, chosen_gate, &mut self.outcome_rng(position))
    }

    pub fn total_rounds(&self) -> usize {
        self.practice_rounds.len() + self.game_rounds.len()
    }

    /// Round at a global position: practice rounds first, then game rounds.
    pub fn round_at(&self, position: usize) -> Option<&RoundSpec> {
        let practice = self.practice_rounds.len();
        if position < practice {
            self.practice_rounds.get(position)
        } else {
            self.game_rounds.get(position - practice)
        }
    }
}

/// Expected attacker utility of a gate: `R(1 - g) - gY`.
pub fn expected_utility(gate: &GateSpec) -> f64 {
    f64::from(gate.reward) * (1.0 - gate.coverage) - gate.coverage * f64::from(gate.penalty)
}

pub fn round_utilities(round: &RoundSpec) -> [f64; GATES] {
    round.gates.map(|g| expected_utility(&g))
}

/// Generator used for the guard draw at a given global round position.
///
/// Each position gets its own ChaCha stream, so the draw for a round depends
/// only on the seed and the position, never on how many draws came before.
pub fn outcome_rng(seed: u64, position: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(position as u64);
    rng
}

/// Draws the guard for `chosen_gate` and resolves the payoff.
pub fn sample_outcome<R: Rng + ?Sized>(
    round: &RoundSpec,
    chosen_gate: usize,
    rng: &mut R,
) -> Result<RoundOutcome, GameError> {
    let gate = round.gate(chosen_gate)?;
    let guard_present = rng.random::<f64>() < gate.coverage;
    Ok(RoundOutcome::resolve(gate, chosen_gate, guard_present))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Winner {
    Attacker,
    Defender,
    Draw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub attacker_total: i64,
    pub defender_total: i64,
    pub winner: Winner,
}

/// Totals a session.
///
/// The defender is scored with the mirrored zero-sum convention: `+Y` for a
/// catch, `-R` for a miss. This only feeds the win/loss comparison.
pub fn score_session(outcomes: &[RoundOutcome]) -> Result<ScoreSummary, GameError> {
    if outcomes.is_empty() {
        return Err(GameError::EmptyOutcomes);
    }
    let attacker_total: i64 = outcomes.iter().map(|o| i64::from(o.payoff)).sum();
    // catch: payoff = -Y so defender gets +Y; miss: payoff = +R so defender gets -R
    let defender_total: i64 = outcomes.iter().map(|o| -i64::from(o.payoff)).sum();
    let winner = match attacker_total.cmp(&defender_total) {
        std::cmp::Ordering::Greater => Winner::Attacker,
        std::cmp::Ordering::Less => Winner::Defender,
        std::cmp::Ordering::Equal => Winner::Draw,
    };
    Ok(ScoreSummary {
        attacker_total,
        defender_total,
        winner,
    })
}

/// Generates `count` random rounds.
///
/// Rewards and penalties are uniform integers in `[1, 10]`. Coverages are a
/// uniform point on the simplex scaled to `coverage_budget`, with any gate
/// above 1 clipped and the excess spread over the remaining gates.
pub fn generate_rounds(
    count: usize,
    rng_seed: u64,
    coverage_budget: f64,
) -> Result<Vec<RoundSpec>, GameError> {
    if count == 0 {
        return Err(GameError::NoRounds);
    }
    if !(coverage_budget > 0.0 && coverage_budget <= GATES as f64) {
        return Err(GameError::BudgetOutOfRange(coverage_budget));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut rounds = Vec::with_capacity(count);
    for round_index in 0..count {
        let mut weights = [0.0f64; GATES];
        for w in weights.iter_mut() {
            *w = Exp1.sample(&mut rng);
        }
        let coverages = fill_coverage(&weights, coverage_budget);
        let mut gates = Vec::with_capacity(GATES);
        for &coverage in coverages.iter() {
            let reward = rng.random_range(MIN_POINTS..=MAX_POINTS);
            let penalty = rng.random_range(MIN_POINTS..=MAX_POINTS);
            gates.push(GateSpec::new(reward, penalty, coverage)?);
        }
        rounds.push(RoundSpec::new(round_index, gates)?);
    }
    Ok(rounds)
}

/// Distributes `budget` proportionally to `weights`, capping each share at 1.
fn fill_coverage(weights: &[f64; GATES], budget: f64) -> [f64; GATES] {
    let mut out = [0.0; GATES];
    let mut saturated = [false; GATES];
    loop {
        let fixed = saturated.iter().filter(|&&s| s).count() as f64;
        let remaining = budget - fixed;
        let free_weight: f64 = weights
            .iter()
            .zip(saturated.iter())
            .filter(|(_, &s)| !s)
            .map(|(w, _)| *w)
            .sum();
        let mut clipped_any = false;
        for i in 0..GATES {
            if saturated[i] {
                out[i] = 1.0;
                continue;
            }
            let share = if free_weight > 0.0 {
                remaining * weights[i] / free_weight
            } else {
                remaining / (GATES as f64 - fixed)
            };
            if share >= 1.0 {
                saturated[i] = true;
                clipped_any = true;
            }
            out[i] = share.clamp(0.0, 1.0);
        }
        if !clipped_any {
            return out;
        }
    }
}

/// Reads a round-config file: a JSON array of rounds, each an array of
/// eight `{"reward", "penalty", "coverage"}` objects.
pub fn load_rounds(path: impl AsRef<Path>) -> Result<Vec<RoundSpec>, GameError> {
    let text = fs::read_to_string(path)?;
    parse_rounds(&text)
}

pub fn parse_rounds(text: &str) -> Result<Vec<RoundSpec>, GameError> {
    let raw: Vec<Vec<RawGate>> =
        serde_json::from_str(text).map_err(|e| GameError::Malformed(e.to_string()))?;
    raw.into_iter()
        .enumerate()
        .map(|(round, gates)| {
            if gates.len() != GATES {
                return Err(GameError::WrongGateCount {
                    round,
                    found: gates.len(),
                });
            }
            let gates = gates
                .iter()
                .enumerate()
                .map(|(gate, g)| {
                    g.validate().map_err(|e| GameError::InvalidGate {
                        round,
                        gate,
                        source: Box::new(e),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            RoundSpec::new(round, gates)
        })
        .collect()
}

pub fn rounds_to_json(rounds: &[RoundSpec]) -> String {
    let raw: Vec<&[GateSpec; GATES]> = rounds.iter().map(|r| &r.gates).collect();
    serde_json::to_string_pretty(&raw).expect("gate specs always serialize")
}

pub fn save_rounds(rounds: &[RoundSpec], path: impl AsRef<Path>) -> Result<(), GameError> {
    fs::write(path, rounds_to_json(rounds) + "\n")?;
    Ok(())
}

/// One completed round as written to a session's play log (JSON lines).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayLogEntry {
    pub session_id: String,
    pub round_index: usize,
    pub chosen_gate: usize,
    pub guard_present: bool,
    pub payoff: i32,
    pub timestamp_ms: u64,
    /// Client idempotency token, when one was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
}

impl PlayLogEntry {
    pub fn outcome(&self) -> RoundOutcome {
        RoundOutcome {
            chosen_gate: self.chosen_gate,
            guard_present: self.guard_present,
            payoff: self.payoff,
        }
    }
}

pub fn append_play_log<W: Write>(out: &mut W, entry: &PlayLogEntry) -> Result<(), GameError> {
    let line = serde_json::to_string(entry).map_err(|e| GameError::Io(e.to_string()))?;
    writeln!(out, "{line}")?;
    Ok(())
}

/// Parses a play log. Errors carry the 1-based line number.
pub fn read_play_log<R: BufRead>(input: R) -> Result<Vec<PlayLogEntry>, GameError> {
    let mut entries = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: PlayLogEntry =
            serde_json::from_str(&line).map_err(|e| GameError::BadLogLine {
                line: i + 1,
                message: e.to_string(),
            })?;
        if entry.chosen_gate >= GATES {
            return Err(GameError::BadLogLine {
                line: i + 1,
                message: format!("chosen_gate {} out of range", entry.chosen_gate),
            });
        }
        entries.push(entry);
    }
    Ok(entries)
}

pub fn load_play_log(path: impl AsRef<Path>) -> Result<Vec<PlayLogEntry>, GameError> {
    let file = fs::File::open(path)?;
    read_play_log(BufReader::new(file))
}

pub fn save_play_log(entries: &[PlayLogEntry], path: impl AsRef<Path>) -> Result<(), GameError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for e in entries {
        append_play_log(&mut out, e)?;
    }
    out.flush()?;
    Ok(())
}
