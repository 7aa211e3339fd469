//! The `gtl` command line. Each subcommand is a thin adapter: it parses
//! arguments, calls the library, and renders the result as JSON (or as a
//! table with `--pretty`). [`execute`] returns the text that `gtl` prints,
//! so tests can compare it with direct library calls.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use gtl_core::commentary::{
    complete_stem_with, AffectLexicon, Commentator, NGramCounts, ScorerWeights, Selection,
    SentenceStem, Utterance, DEFAULT_Z,
};
use gtl_core::game::{
    generate_rounds, load_rounds, rounds_to_json, SessionSeeds,
    DEFAULT_COVERAGE_BUDGET, DEFAULT_GAME_ROUNDS,
};
use gtl_core::rationality::{
    fit_by_intervals, fit_model, session_change, simulate_player, ChoiceModel, FitExport,
    FitOptions, FitResult, IntervalSeries, ModelError, ModelKind, PlayDataset, SessionChange,
};
use gtl_core::Condition;
use gtl_service::session::{Phase, SessionState};
use gtl_service::store::Store;
use gtl_service::ServiceConfig;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or unreadable/invalid input. Exit code 1.
    #[error("{0}")]
    Validation(String),
    /// Anything that failed after the inputs were accepted. Exit code 2.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn invalid(e: impl ToString) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl ToString) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "gtl", version, about = "Guards and Treasures: rounds, player models, commentary and sessions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Count n-grams in corpus files and save the model.
    Train(TrainArgs),
    /// Complete sentence stems with encouraging or discouraging words.
    Say(SayArgs),
    /// Generate random rounds.
    GenRounds(GenRoundsArgs),
    /// Simulate players following a QR or SUQR model.
    Simulate(SimulateArgs),
    /// Fit λ or W to play data.
    Fit(FitArgs),
    /// Fit every condition in a session directory and compare linked sessions.
    Analyze(AnalyzeArgs),
    /// Run the HTTP session server.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Plain-text corpus files.
    #[arg(long, required = true, num_args = 1..)]
    pub corpus: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Affect {
    Pos,
    Neg,
}

impl Affect {
    pub fn sign(self) -> i8 {
        match self {
            Affect::Pos => 1,
            Affect::Neg => -1,
        }
    }
}

#[derive(Debug, Args)]
pub struct SayArgs {
    /// Trained model from `gtl train`; the bundled corpus when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// AFINN-format lexicon; the bundled sample when omitted.
    #[arg(long)]
    pub afinn: Option<PathBuf>,
    /// Stems file; the bundled stems when omitted.
    #[arg(long)]
    pub stems: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub affect: Affect,
    /// z1..z5 as five comma-separated numbers.
    #[arg(long, value_delimiter = ',', num_args = 5)]
    pub weights: Option<Vec<f64>>,
    /// Only these stem ids.
    #[arg(long = "stem")]
    pub stem_ids: Vec<String>,
    /// Sample words in proportion to score instead of taking the best.
    #[arg(long)]
    pub sample_seed: Option<u64>,
    #[arg(long)]
    pub pretty: bool,
}

#[derive(Debug, Args)]
pub struct GenRoundsArgs {
    #[arg(long, default_value_t = DEFAULT_GAME_ROUNDS)]
    pub count: usize,
    #[arg(long)]
    pub seed: u64,
    /// Total guard coverage per round, in (0, 8].
    #[arg(long, default_value_t = DEFAULT_COVERAGE_BUDGET)]
    pub budget: f64,
    /// Write here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    /// λ for qr; w1,w2,w3 for suqr.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub params: Vec<f64>,
    /// Rounds every participant plays; generated per participant when omitted.
    #[arg(long)]
    pub rounds: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub participants: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Rounds per generated participant.
    #[arg(long, default_value_t = DEFAULT_GAME_ROUNDS)]
    pub count: usize,
    #[arg(long, default_value_t = DEFAULT_COVERAGE_BUDGET)]
    pub budget: f64,
    /// Write here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Qr,
    Suqr,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Qr => ModelKind::Qr,
            ModelArg::Suqr => ModelKind::Suqr,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    /// JSON-lines play data, as written by `gtl simulate`.
    #[arg(long)]
    pub data: PathBuf,
    /// Rounds per interval for `--by-interval`.
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    #[arg(long)]
    pub by_interval: bool,
    #[arg(long)]
    pub pretty: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupBy {
    Condition,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// A server data directory.
    #[arg(long)]
    pub sessions: PathBuf,
    #[arg(long, value_enum, default_value = "condition")]
    pub group_by: GroupBy,
    #[arg(long)]
    pub pretty: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "GTL_HOST", default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = "GTL_PORT", default_value_t = gtl_service::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, env = "GTL_DATA_DIR", default_value = gtl_service::DEFAULT_DATA_DIR)]
    pub data_dir: PathBuf,
}

/// Runs a subcommand other than `serve` and returns what it prints.
pub fn execute(command: &Command) -> Result<String, CliError> {
    match command {
        Command::Train(a) => train(a),
        Command::Say(a) => say(a),
        Command::GenRounds(a) => gen_rounds(a),
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Analyze(a) => analyze(a),
        Command::Serve(_) => Err(invalid("serve is run with `serve`, not `execute`")),
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("outputs always serialize") + "\n"
}

fn write_out(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

#[derive(Debug, Serialize)]
struct TrainSummary<'a> {
    out: &'a Path,
    vocabulary: usize,
    corpus_hash: &'a str,
}

fn train(a: &TrainArgs) -> Result<String, CliError> {
    let counts = NGramCounts::train(&a.corpus).map_err(invalid)?;
    counts.save(&a.out).map_err(runtime)?;
    Ok(to_json(&TrainSummary {
        out: &a.out,
        vocabulary: counts.vocabulary().len(),
        corpus_hash: counts.corpus_hash(),
    }))
}

/// Completes each stem (or each requested stem) under one affect sign.
pub fn say_utterances(
    counts: &NGramCounts,
    lexicon: &AffectLexicon,
    stems: &[SentenceStem],
    weights: &ScorerWeights,
    selection: Selection,
) -> Result<Vec<Utterance>, CliError> {
    stems
        .iter()
        .map(|stem| complete_stem_with(counts, lexicon, weights, stem, selection).map_err(runtime))
        .collect()
}

fn say(a: &SayArgs) -> Result<String, CliError> {
    let counts = match &a.model {
        Some(path) => NGramCounts::load(path).map_err(invalid)?,
        None => NGramCounts::bundled(),
    };
    let lexicon = match &a.afinn {
        Some(path) => AffectLexicon::load(path).map_err(invalid)?,
        None => AffectLexicon::bundled(),
    };
    let mut stems = match &a.stems {
        Some(path) => SentenceStem::load_list(path).map_err(invalid)?,
        None => SentenceStem::bundled(),
    };
    if !a.stem_ids.is_empty() {
        for id in &a.stem_ids {
            if !stems.iter().any(|s| s.id() == id) {
                return Err(invalid(format!("no stem with id {id:?}")));
            }
        }
        stems.retain(|s| a.stem_ids.iter().any(|id| id == s.id()));
    }
    let z = match &a.weights {
        Some(w) => <[f64; 5]>::try_from(w.as_slice())
            .map_err(|_| invalid("--weights takes exactly five numbers"))?,
        None => DEFAULT_Z,
    };
    let weights = ScorerWeights::new(z, a.affect.sign()).map_err(invalid)?;
    let selection = match a.sample_seed {
        Some(seed) => Selection::Sample { seed },
        None => Selection::Argmax,
    };
    let utterances = say_utterances(&counts, &lexicon, &stems, &weights, selection)?;
    if !a.pretty {
        return Ok(to_json(&utterances));
    }
    let mut out = String::new();
    for u in &utterances {
        let valence: i32 = u.chosen_words.iter().map(|w| lexicon.valence(w)).sum();
        writeln!(out, "{:<20} {:+3}  {}", u.stem_id, valence, u.text).unwrap();
    }
    Ok(out)
}

fn gen_rounds(a: &GenRoundsArgs) -> Result<String, CliError> {
    let rounds = generate_rounds(a.count, a.seed, a.budget).map_err(invalid)?;
    let text = rounds_to_json(&rounds) + "\n";
    match &a.out {
        Some(path) => {
            write_out(path, &text)?;
            Ok(String::new())
        }
        None => Ok(text),
    }
}

pub fn choice_model(model: ModelArg, params: &[f64]) -> Result<ChoiceModel, CliError> {
    match (model, params) {
        (ModelArg::Qr, [lambda]) if lambda.is_finite() => Ok(ChoiceModel::Qr { lambda: *lambda }),
        (ModelArg::Qr, _) => Err(invalid("qr takes one finite parameter: --params LAMBDA")),
        (ModelArg::Suqr, [w1, w2, w3]) if params.iter().all(|x| x.is_finite()) => {
            Ok(ChoiceModel::Suqr { w: [*w1, *w2, *w3] })
        }
        (ModelArg::Suqr, _) => Err(invalid("suqr takes three finite parameters: --params W1,W2,W3")),
    }
}

/// Play data for `participants` simulated players. Participant `i` uses
/// seed `seed + i`, split into a round seed and a choice seed.
pub fn simulate_participants(
    model: &ChoiceModel,
    rounds: Option<&[gtl_core::RoundSpec]>,
    participants: u64,
    seed: u64,
    count: usize,
    budget: f64,
) -> Result<PlayDataset, CliError> {
    if participants == 0 {
        return Err(invalid("--participants must be at least 1"));
    }
    let mut entries = Vec::new();
    for i in 0..participants {
        let seeds = SessionSeeds::derive(seed.wrapping_add(i));
        let generated;
        let played = match rounds {
            Some(r) => r,
            None => {
                generated = generate_rounds(count, seeds.game_rounds, budget).map_err(invalid)?;
                &generated
            }
        };
        let data = simulate_player(model, played, seeds.outcomes).map_err(runtime)?;
        entries.extend(data.entries().iter().cloned());
    }
    let label = format!("{participants} simulated participants");
    PlayDataset::new(label, entries).map_err(runtime)
}

fn simulate(a: &SimulateArgs) -> Result<String, CliError> {
    let model = choice_model(a.model, &a.params)?;
    let rounds = match &a.rounds {
        Some(path) => Some(load_rounds(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?),
        None => None,
    };
    let data = simulate_participants(&model, rounds.as_deref(), a.participants, a.seed, a.count, a.budget)?;
    let mut text = Vec::new();
    data.write_jsonl(&mut text).map_err(runtime)?;
    let text = String::from_utf8(text).expect("json is utf-8");
    match &a.out {
        Some(path) => {
            write_out(path, &text)?;
            Ok(String::new())
        }
        None => Ok(text),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalRow {
    pub interval_index: usize,
    pub entries: usize,
    pub fit: FitExport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalReport {
    pub window: usize,
    pub partial_trailing: bool,
    pub intervals: Vec<IntervalRow>,
}

impl From<&IntervalSeries> for IntervalReport {
    fn from(s: &IntervalSeries) -> Self {
        IntervalReport {
            window: s.window_size,
            partial_trailing: s.partial_trailing,
            intervals: s
                .points
                .iter()
                .map(|p| IntervalRow {
                    interval_index: p.interval_index,
                    entries: p.entries,
                    fit: p.fit.export(),
                })
                .collect(),
        }
    }
}

fn params_cell(fit: &FitExport) -> String {
    if let Some(l) = fit.params.get("lambda").and_then(|v| v.as_f64()) {
        return format!("lambda={l:.4}");
    }
    match fit.params.get("w").and_then(|v| v.as_array()) {
        Some(w) => {
            let parts: Vec<String> = w
                .iter()
                .map(|x| format!("{:.4}", x.as_f64().unwrap_or(f64::NAN)))
                .collect();
            format!("w=[{}]", parts.join(", "))
        }
        None => fit.params.to_string(),
    }
}

fn fit_row(label: &str, entries: usize, fit: &FitExport) -> String {
    let flags = if fit.warnings.is_empty() {
        String::new()
    } else {
        format!("  ({})", fit.warnings.join(", "))
    };
    format!(
        "{label:<14} {entries:>6}  {:<40} logL={:.3}{flags}\n",
        params_cell(fit),
        fit.log_likelihood
    )
}

fn load_data(path: &Path) -> Result<PlayDataset, CliError> {
    PlayDataset::load(path).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn fit(a: &FitArgs) -> Result<String, CliError> {
    let data = load_data(&a.data)?;
    let options = FitOptions::default();
    if a.by_interval {
        let series = fit_by_intervals(&data, a.window, a.model.into(), &options).map_err(model_error)?;
        let report = IntervalReport::from(&series);
        if !a.pretty {
            return Ok(to_json(&report));
        }
        let mut out = format!("{:<14} {:>6}  params\n", "interval", "rounds");
        for row in &report.intervals {
            let start = row.interval_index * report.window + 1;
            let end = start + report.window - 1;
            out.push_str(&fit_row(&format!("{start}-{end}"), row.entries, &row.fit));
        }
        return Ok(out);
    }
    let result = fit_model(&data, a.model.into(), &options).map_err(model_error)?;
    let export = result.export();
    if a.pretty {
        Ok(fit_row("all", data.len(), &export))
    } else {
        Ok(to_json(&export))
    }
}

fn model_error(e: ModelError) -> CliError {
    match e {
        ModelError::BadWindow | ModelError::EmptyDataset | ModelError::InvalidEntry { .. } => invalid(e),
        other => runtime(other),
    }
}

/// Fits of one population.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationFit {
    pub sessions: usize,
    pub rounds: usize,
    pub qr: FitExport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub suqr: Option<FitExport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub suqr_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairChange {
    pub parent_session_id: String,
    pub session_id: String,
    /// Condition of the first session of the pair.
    pub first: Condition,
    #[serde(flatten)]
    pub change: Option<SessionChange>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderChange {
    pub first: Condition,
    pub pairs: usize,
    #[serde(flatten)]
    pub change: Option<SessionChange>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Analysis {
    pub complete_sessions: usize,
    pub incomplete_sessions: usize,
    pub by_condition: BTreeMap<String, PopulationFit>,
    pub session_changes: Vec<PairChange>,
    /// Pooled first sessions against pooled second sessions, per order.
    pub by_order: Vec<OrderChange>,
}

fn fit_population(sessions: &[&SessionState]) -> Result<(PopulationFit, FitResult, Option<FitResult>), CliError> {
    let mut entries = Vec::new();
    for s in sessions {
        let data = gtl_service::api::game_dataset(s).map_err(runtime)?;
        entries.extend(data.entries().iter().cloned());
    }
    let data = PlayDataset::new("population", entries).map_err(runtime)?;
    let options = FitOptions::default();
    let qr = fit_model(&data, ModelKind::Qr, &options).map_err(runtime)?;
    let suqr = fit_model(&data, ModelKind::Suqr, &options);
    let population = PopulationFit {
        sessions: sessions.len(),
        rounds: data.len(),
        qr: qr.export(),
        suqr: suqr.as_ref().ok().map(FitResult::export),
        suqr_error: suqr.as_ref().err().map(ToString::to_string),
    };
    Ok((population, qr, suqr.ok()))
}

fn change(
    first: &(PopulationFit, FitResult, Option<FitResult>),
    second: &(PopulationFit, FitResult, Option<FitResult>),
) -> (Option<SessionChange>, Option<String>) {
    match (&first.2, &second.2) {
        (Some(a), Some(b)) => match session_change((&first.1, a), (&second.1, b)) {
            Ok(c) => (Some(c), None),
            Err(e) => (None, Some(e.to_string())),
        },
        _ => (None, Some("SUQR fit unavailable".into())),
    }
}

/// Per-condition fits over all complete sessions in a data directory, and
/// the change between each linked pair of sessions.
pub fn analyze_sessions(dir: &Path) -> Result<Analysis, CliError> {
    if !dir.is_dir() {
        return Err(invalid(format!("{}: not a directory", dir.display())));
    }
    let store = Store::open(dir).map_err(invalid)?;
    let commentator = Commentator::bundled();
    let mut states = Vec::new();
    for stored in store.load_all().map_err(invalid)? {
        let path = stored.log_path.clone();
        let state = SessionState::replay(stored.record, stored.entries, &commentator)
            .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        states.push(state);
    }
    let (complete, incomplete): (Vec<&SessionState>, Vec<&SessionState>) =
        states.iter().partition(|s| s.phase() == Phase::Complete);

    let mut by_condition = BTreeMap::new();
    for condition in [Condition::Encouraging, Condition::Discouraging] {
        let group: Vec<&SessionState> = complete
            .iter()
            .copied()
            .filter(|s| s.config().condition == condition)
            .collect();
        if !group.is_empty() {
            by_condition.insert(condition.to_string(), fit_population(&group)?.0);
        }
    }

    let find = |id: &str| complete.iter().copied().find(|s| s.id() == id);
    let mut session_changes = Vec::new();
    let mut orders: BTreeMap<&'static str, (Condition, Vec<&SessionState>, Vec<&SessionState>)> = BTreeMap::new();
    for child in &complete {
        let Some(parent_id) = child.record.parent_session_id.as_deref() else {
            continue;
        };
        let Some(parent) = find(parent_id) else {
            continue;
        };
        let first = fit_population(&[parent])?;
        let second = fit_population(&[child])?;
        let (c, error) = change(&first, &second);
        let first_condition = parent.config().condition;
        session_changes.push(PairChange {
            parent_session_id: parent.id().to_string(),
            session_id: child.id().to_string(),
            first: first_condition,
            change: c,
            error,
        });
        let slot = orders
            .entry(first_condition.as_str())
            .or_insert_with(|| (first_condition, Vec::new(), Vec::new()));
        slot.1.push(parent);
        slot.2.push(child);
    }
    let mut by_order = Vec::new();
    for (first_condition, parents, children) in orders.into_values() {
        let (c, error) = change(&fit_population(&parents)?, &fit_population(&children)?);
        by_order.push(OrderChange {
            first: first_condition,
            pairs: parents.len(),
            change: c,
            error,
        });
    }
    Ok(Analysis {
        complete_sessions: complete.len(),
        incomplete_sessions: incomplete.len(),
        by_condition,
        session_changes,
        by_order,
    })
}

fn analyze(a: &AnalyzeArgs) -> Result<String, CliError> {
    let GroupBy::Condition = a.group_by;
    let analysis = analyze_sessions(&a.sessions)?;
    if !a.pretty {
        return Ok(to_json(&analysis));
    }
    let mut out = format!(
        "{} complete sessions, {} incomplete\n\n{:<14} {:>6}  params\n",
        analysis.complete_sessions, analysis.incomplete_sessions, "condition", "rounds"
    );
    for (condition, fit) in &analysis.by_condition {
        out.push_str(&fit_row(condition, fit.rounds, &fit.qr));
        match &fit.suqr {
            Some(s) => out.push_str(&fit_row("", fit.rounds, s)),
            None => writeln!(out, "{:<14} suqr: {}", "", fit.suqr_error.as_deref().unwrap_or("")).unwrap(),
        }
    }
    if !analysis.by_order.is_empty() {
        writeln!(out, "\n{:<14} {:>6}  {:>10}  {:>10}", "first", "pairs", "dlambda%", "d|W|1%").unwrap();
        for o in &analysis.by_order {
            match &o.change {
                Some(c) => writeln!(
                    out,
                    "{:<14} {:>6}  {:>10.1}  {:>10.1}",
                    o.first.as_str(),
                    o.pairs,
                    c.delta_lambda_pct,
                    c.delta_w_l1_pct
                )
                .unwrap(),
                None => writeln!(out, "{:<14} {:>6}  {}", o.first.as_str(), o.pairs, o.error.as_deref().unwrap_or("")).unwrap(),
            }
        }
    }
    Ok(out)
}

/// Service settings for `serve`: environment first, then flags.
pub fn serve_config(a: &ServeArgs) -> Result<ServiceConfig, CliError> {
    let mut config = ServiceConfig::from_env().map_err(invalid)?;
    config.host = a.host.clone();
    config.port = a.port;
    config.data_dir = a.data_dir.clone();
    Ok(config)
}

