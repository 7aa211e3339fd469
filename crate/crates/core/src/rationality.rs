//! Quantal-response (QR) and subjective-utility quantal-response (SUQR)
//! choice models, their maximum-likelihood fits, a synthetic player that
//! samples from either model, and the per-interval and between-session
//! analyses built on top of the fits.
//!
//! Both models are conditional logits over the eight gates of a round. QR
//! scores gate `i` as `λ·U_i` with `U_i` the expected utility; SUQR scores it
//! as `w·x_i` with `x_i = [R, Y, g]`. Their log-likelihoods are concave in
//! the parameters, so a local optimizer finds the global maximum.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{round_utilities, RoundSpec, GATES, MAX_POINTS, MIN_POINTS};

/// Number of SUQR attributes: reward, penalty, guard probability.
pub const FEATURES: usize = 3;

pub type Utilities = [f64; GATES];
pub type FeatureRows = [[f64; FEATURES]; GATES];

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("feature and weight dimensions differ ({features} vs {weights})")]
    DimensionMismatch { features: usize, weights: usize },
    #[error("no choice options")]
    NoOptions,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("entry {entry}: {message}")]
    InvalidEntry { entry: usize, message: String },
    #[error("need at least {needed} entries, found {found}")]
    TooFewEntries { needed: usize, found: usize },
    #[error("non-identifiable direction {0:?}: features do not vary along it within any round")]
    NonIdentifiable([f64; FEATURES]),
    #[error("window size must be at least 1")]
    BadWindow,
    #[error("interval {interval} has no entries")]
    EmptyInterval { interval: usize },
    #[error("change from a zero {0} is undefined")]
    UndefinedChange(&'static str),
    #[error("expected a {expected} fit, found {found}")]
    WrongModel {
        expected: &'static str,
        found: &'static str,
    },
    #[error("dataset line {line}: {message}")]
    BadLine { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for ModelError {
    fn from(e: std::io::Error) -> Self {
        ModelError::Io(e.to_string())
    }
}

/// One observed round: what the player saw and which gate they opened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayEntry {
    pub utilities: Utilities,
    pub features: FeatureRows,
    pub chosen: usize,
    /// Position of the round within its session. When every entry of a
    /// dataset carries one, interval analysis pools entries by it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round_index: Option<usize>,
}

impl PlayEntry {
    pub fn from_round(round: &RoundSpec, chosen: usize) -> Self {
        PlayEntry {
            utilities: round_utilities(round),
            features: round.features(),
            chosen,
            round_index: Some(round.round_index),
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.chosen >= GATES {
            return Err(format!("chosen gate {} out of range", self.chosen));
        }
        if self.utilities.iter().any(|u| !u.is_finite()) {
            return Err("non-finite utility".into());
        }
        let points = f64::from(MIN_POINTS)..=f64::from(MAX_POINTS);
        for (gate, row) in self.features.iter().enumerate() {
            let [r, y, g] = *row;
            if !points.contains(&r) || !points.contains(&y) || !(0.0..=1.0).contains(&g) {
                return Err(format!("gate {gate} features {row:?} out of range"));
            }
        }
        Ok(())
    }
}

/// The rounds pooled into one fit, with a population label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayDataset {
    pub label: String,
    entries: Vec<PlayEntry>,
}

impl PlayDataset {
    pub fn new(label: impl Into<String>, entries: Vec<PlayEntry>) -> Result<Self, ModelError> {
        if entries.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        for (entry, e) in entries.iter().enumerate() {
            e.validate()
                .map_err(|message| ModelError::InvalidEntry { entry, message })?;
        }
        Ok(PlayDataset {
            label: label.into(),
            entries,
        })
    }

    pub fn entries(&self) -> &[PlayEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Pools several datasets into one, as population fits do.
    pub fn pooled<'a>(
        label: impl Into<String>,
        parts: impl IntoIterator<Item = &'a PlayDataset>,
    ) -> Result<Self, ModelError> {
        let entries = parts
            .into_iter()
            .flat_map(|d| d.entries.iter().cloned())
            .collect();
        PlayDataset::new(label, entries)
    }

    pub fn subset(&self, label: impl Into<String>, range: std::ops::Range<usize>) -> Result<Self, ModelError> {
        PlayDataset::new(label, self.entries[range].to_vec())
    }

    /// Writes one JSON object per line.
    pub fn write_jsonl<W: Write>(&self, out: &mut W) -> Result<(), ModelError> {
        for e in &self.entries {
            let line = serde_json::to_string(e).map_err(|e| ModelError::Io(e.to_string()))?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(label: impl Into<String>, input: R) -> Result<Self, ModelError> {
        let mut entries = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: PlayEntry = serde_json::from_str(&line).map_err(|e| ModelError::BadLine {
                line: i + 1,
                message: e.to_string(),
            })?;
            entries.push(entry);
        }
        PlayDataset::new(label, entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        PlayDataset::read_jsonl(label, BufReader::new(fs::File::open(path)?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        self.write_jsonl(&mut out)?;
        out.flush()?;
        Ok(())
    }
}

/// Fitted rationality. Negative values are kept (the fit is unconstrained)
/// but flagged: they describe a player who prefers worse gates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QRParams {
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub negative: bool,
}

impl QRParams {
    pub fn new(lambda: f64) -> Result<Self, ModelError> {
        if !lambda.is_finite() {
            return Err(ModelError::NonFinite("lambda"));
        }
        Ok(QRParams {
            lambda,
            negative: lambda < 0.0,
        })
    }
}

/// Strategic prioritization `W = [w_reward, w_penalty, w_guard]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SUQRParams {
    pub w: [f64; FEATURES],
}

impl SUQRParams {
    pub fn new(w: [f64; FEATURES]) -> Result<Self, ModelError> {
        if w.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::NonFinite("w"));
        }
        Ok(SUQRParams { w })
    }

    pub fn l1_norm(&self) -> f64 {
        self.w.iter().map(|x| x.abs()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum FittedParams {
    Qr(QRParams),
    Suqr(SUQRParams),
}

impl FittedParams {
    pub fn model_name(&self) -> &'static str {
        match self {
            FittedParams::Qr(_) => "qr",
            FittedParams::Suqr(_) => "suqr",
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match self {
            FittedParams::Qr(p) => Some(p.lambda),
            FittedParams::Suqr(_) => None,
        }
    }

    pub fn w(&self) -> Option<[f64; FEATURES]> {
        match self {
            FittedParams::Suqr(p) => Some(p.w),
            FittedParams::Qr(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: FittedParams,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    /// The maximum lies beyond the largest allowed parameter magnitude.
    pub at_bound: bool,
    /// The likelihood does not depend on the parameter at all.
    pub non_identifiable: bool,
}

impl FitResult {
    pub fn warnings(&self) -> Vec<&'static str> {
        let mut w = Vec::new();
        if let FittedParams::Qr(p) = self.params {
            if p.negative {
                w.push("negative-lambda");
            }
        }
        if self.at_bound {
            w.push("at-bound");
        }
        if self.non_identifiable {
            w.push("non-identifiable");
        }
        w
    }

    pub fn export(&self) -> FitExport {
        let params = match self.params {
            FittedParams::Qr(p) => serde_json::json!({ "lambda": p.lambda }),
            FittedParams::Suqr(p) => serde_json::json!({ "w": p.w }),
        };
        FitExport {
            model: self.params.model_name().to_string(),
            params,
            log_likelihood: self.log_likelihood,
            converged: self.converged,
            iterations: self.iterations,
            gradient_norm: self.gradient_norm,
            warnings: self.warnings().into_iter().map(String::from).collect(),
        }
    }
}

/// JSON form of a fit: `{"model", "params", "log_likelihood", "converged", "iterations", ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitExport {
    pub model: String,
    pub params: serde_json::Value,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Optimizer settings shared by both fits.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Starting half-width of the λ search interval.
    pub lambda_bracket: f64,
    /// Largest half-width the λ interval may be widened to.
    pub lambda_bound: f64,
    /// λ converges when |dL/dλ| is at most this times the entry count.
    pub lambda_tolerance_per_entry: f64,
    /// W converges when the gradient's ∞-norm is at most this.
    pub w_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            lambda_bracket: 10.0,
            lambda_bound: 1e4,
            lambda_tolerance_per_entry: 1e-9,
            w_tolerance: 1e-8,
            max_iterations: 500,
        }
    }
}

/// Numerically stable softmax: the maximum score is subtracted before
/// exponentiating, so no term overflows.
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>, ModelError> {
    if scores.is_empty() {
        return Err(ModelError::NoOptions);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(ModelError::NonFinite("score"));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Choice probabilities of a conditional logit whose option scores are the
/// dot products of each option's features with `weights`.
pub fn linear_choice_probs<F: AsRef<[f64]>>(
    features: &[F],
    weights: &[f64],
) -> Result<Vec<f64>, ModelError> {
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(ModelError::NonFinite("weight"));
    }
    let scores = features
        .iter()
        .map(|row| {
            let row = row.as_ref();
            if row.len() != weights.len() {
                return Err(ModelError::DimensionMismatch {
                    features: row.len(),
                    weights: weights.len(),
                });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(ModelError::NonFinite("feature"));
            }
            Ok(row.iter().zip(weights).map(|(x, w)| x * w).sum())
        })
        .collect::<Result<Vec<f64>, _>>()?;
    softmax(&scores)
}

/// Quantal response: `q_i ∝ exp(λ U_i)`.
pub fn qr_choice_probs(utilities: &Utilities, lambda: f64) -> Result<Utilities, ModelError> {
    if !lambda.is_finite() {
        return Err(ModelError::NonFinite("lambda"));
    }
    let scores = utilities.map(|u| lambda * u);
    Ok(to_array(softmax(&scores)?))
}

/// Subjective-utility quantal response: `s_i ∝ exp(w · [R_i, Y_i, g_i])`.
pub fn suqr_choice_probs(
    features: &FeatureRows,
    w: &[f64; FEATURES],
) -> Result<Utilities, ModelError> {
    Ok(to_array(linear_choice_probs(features, w)?))
}

fn to_array(v: Vec<f64>) -> Utilities {
    v.try_into().expect("eight gates in, eight probabilities out")
}

/// Log-likelihood of a conditional logit with `K` features, plus its
/// gradient and Hessian.
#[derive(Debug, Clone, Copy)]
struct LogitEval<const K: usize> {
    value: f64,
    gradient: [f64; K],
    hessian: [[f64; K]; K],
}

fn logit_eval<'a, const K: usize, I>(rows: I, w: &[f64; K]) -> LogitEval<K>
where
    I: IntoIterator<Item = (&'a [[f64; K]; GATES], usize)>,
{
    let mut value = 0.0;
    let mut gradient = [0.0; K];
    let mut hessian = [[0.0; K]; K];
    for (x, chosen) in rows {
        let mut scores = [0.0; GATES];
        for (s, row) in scores.iter_mut().zip(x.iter()) {
            *s = row.iter().zip(w).map(|(a, b)| a * b).sum();
        }
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut exps = [0.0; GATES];
        let mut total = 0.0;
        for (e, s) in exps.iter_mut().zip(scores.iter()) {
            *e = (s - max).exp();
            total += *e;
        }
        value += scores[chosen] - max - total.ln();

        let mut mean = [0.0; K];
        for (e, row) in exps.iter().zip(x.iter()) {
            let p = e / total;
            for k in 0..K {
                mean[k] += p * row[k];
            }
        }
        for k in 0..K {
            gradient[k] += x[chosen][k] - mean[k];
        }
        for (e, row) in exps.iter().zip(x.iter()) {
            let p = e / total;
            for a in 0..K {
                let da = row[a] - mean[a];
                for b in 0..K {
                    hessian[a][b] -= p * da * (row[b] - mean[b]);
                }
            }
        }
    }
    LogitEval {
        value,
        gradient,
        hessian,
    }
}

/// QR rows wrap each utility in a one-element feature vector.
fn qr_rows(data: &PlayDataset) -> Vec<([[f64; 1]; GATES], usize)> {
    data.entries
        .iter()
        .map(|e| (e.utilities.map(|u| [u]), e.chosen))
        .collect()
}

fn qr_eval(rows: &[([[f64; 1]; GATES], usize)], lambda: f64) -> LogitEval<1> {
    logit_eval(rows.iter().map(|(x, c)| (x, *c)), &[lambda])
}

fn suqr_eval(data: &PlayDataset, w: &[f64; FEATURES]) -> LogitEval<FEATURES> {
    logit_eval(data.entries.iter().map(|e| (&e.features, e.chosen)), w)
}

/// Value and derivative of a log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLikelihood<G> {
    pub value: f64,
    pub gradient: G,
}

/// `Σ_r log q_{c_r}` and its derivative `Σ_r (U_{c_r} − E_q[U])`.
pub fn qr_log_likelihood(data: &PlayDataset, lambda: f64) -> LogLikelihood<f64> {
    let eval = qr_eval(&qr_rows(data), lambda);
    LogLikelihood {
        value: eval.value,
        gradient: eval.gradient[0],
    }
}

/// `Σ_r log s_{c_r}` and its gradient `Σ_r (X_{c_r} − E_s[X])`.
pub fn suqr_log_likelihood(
    data: &PlayDataset,
    w: &[f64; FEATURES],
) -> LogLikelihood<[f64; FEATURES]> {
    let eval = suqr_eval(data, w);
    LogLikelihood {
        value: eval.value,
        gradient: eval.gradient,
    }
}

enum Separation {
    None,
    /// Every chosen gate is a best gate: the likelihood rises forever in λ.
    Rational,
    /// Every chosen gate is a worst gate.
    AntiRational,
    /// All gates tie in every round.
    Flat,
}

fn qr_separation(data: &PlayDataset) -> Separation {
    let mut all_flat = true;
    let mut all_best = true;
    let mut all_worst = true;
    for e in &data.entries {
        let max = e.utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = e.utilities.iter().copied().fold(f64::INFINITY, f64::min);
        let chosen = e.utilities[e.chosen];
        all_flat &= max == min;
        all_best &= chosen == max;
        all_worst &= chosen == min;
    }
    match (all_flat, all_best, all_worst) {
        (true, _, _) => Separation::Flat,
        (false, true, _) => Separation::Rational,
        (false, _, true) => Separation::AntiRational,
        _ => Separation::None,
    }
}

/// Maximum-likelihood λ by safeguarded Newton iteration on `dL/dλ = 0`.
///
/// The search starts on `[-bracket, bracket]`, doubling the side where the
/// gradient still points outward until `lambda_bound`. When the maximum
/// lies beyond the bound the result sits on it with `converged = false`.
pub fn fit_lambda(data: &PlayDataset, options: &FitOptions) -> FitResult {
    let rows = qr_rows(data);
    let tolerance = options.lambda_tolerance_per_entry * data.len() as f64;
    let result = |lambda: f64, iterations, converged, at_bound, non_identifiable| {
        let eval = qr_eval(&rows, lambda);
        FitResult {
            params: FittedParams::Qr(QRParams::new(lambda).expect("finite lambda")),
            log_likelihood: eval.value,
            iterations,
            converged,
            gradient_norm: eval.gradient[0].abs(),
            at_bound,
            non_identifiable,
        }
    };

    match qr_separation(data) {
        Separation::Flat => return result(0.0, 0, true, false, true),
        Separation::Rational => return result(options.lambda_bound, 0, false, true, false),
        Separation::AntiRational => return result(-options.lambda_bound, 0, false, true, false),
        Separation::None => {}
    }

    let grad = |lambda: f64| qr_eval(&rows, lambda).gradient[0];
    let mut iterations = 0;
    let mut hi = options.lambda_bracket.min(options.lambda_bound);
    while grad(hi) > 0.0 {
        iterations += 1;
        if hi >= options.lambda_bound {
            return result(hi, iterations, false, true, false);
        }
        hi = (hi * 2.0).min(options.lambda_bound);
    }
    let mut lo = -options.lambda_bracket.min(options.lambda_bound);
    while grad(lo) < 0.0 {
        iterations += 1;
        if lo <= -options.lambda_bound {
            return result(lo, iterations, false, true, false);
        }
        lo = (lo * 2.0).max(-options.lambda_bound);
    }

    let mut lambda = 0.0f64.clamp(lo, hi);
    while iterations < options.max_iterations {
        iterations += 1;
        let eval = qr_eval(&rows, lambda);
        let g = eval.gradient[0];
        let h = eval.hessian[0][0];
        if g.abs() <= tolerance {
            return result(lambda, iterations, true, false, false);
        }
        if g > 0.0 {
            lo = lambda;
        } else {
            hi = lambda;
        }
        let newton = lambda - g / h;
        let next = if h < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if next == lambda {
            break;
        }
        lambda = next;
    }
    let g = grad(lambda);
    result(lambda, iterations, g.abs() <= tolerance, false, false)
}

/// Pooled within-round scatter of the features. A zero eigenvalue means
/// some direction of `W` leaves every round's choice probabilities unchanged.
fn within_round_scatter(data: &PlayDataset) -> Matrix3<f64> {
    let mut scatter = Matrix3::zeros();
    for e in &data.entries {
        let mean = e
            .features
            .iter()
            .fold(Vector3::zeros(), |acc, row| acc + Vector3::from(*row))
            / GATES as f64;
        for row in &e.features {
            let d = Vector3::from(*row) - mean;
            scatter += d * d.transpose();
        }
    }
    scatter
}

fn check_identifiable(data: &PlayDataset) -> Result<(), ModelError> {
    let eigen = SymmetricEigen::new(within_round_scatter(data));
    let (imin, min) = eigen.eigenvalues.argmin();
    let max = eigen.eigenvalues.max();
    if max <= 0.0 || min <= 1e-10 * max {
        let v = eigen.eigenvectors.column(imin);
        // sign-normalize so the largest component is positive
        let (imax_abs, _) = v.iamax_full();
        let s = if v[imax_abs] < 0.0 { -1.0 } else { 1.0 };
        return Err(ModelError::NonIdentifiable([s * v[0], s * v[1], s * v[2]]));
    }
    Ok(())
}

/// Maximum-likelihood `W` by line-searched ascent from `[0, 0, 0]`.
///
/// Each step moves along the Newton direction `-H⁻¹∇L` (a gradient step
/// preconditioned by the negative-definite Hessian), falling back to the
/// raw gradient when the Hessian cannot be factored. Step length is halved
/// until the Armijo condition holds.
pub fn fit_w(data: &PlayDataset, options: &FitOptions) -> Result<FitResult, ModelError> {
    if data.len() < FEATURES {
        return Err(ModelError::TooFewEntries {
            needed: FEATURES,
            found: data.len(),
        });
    }
    check_identifiable(data)?;

    let mut w = Vector3::zeros();
    let mut eval = suqr_eval(data, &w.into());
    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_iterations {
        let g = Vector3::from(eval.gradient);
        if g.amax() <= options.w_tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let neg_hessian = -Matrix3::from_fn(|a, b| eval.hessian[a][b]);
        let direction = neg_hessian
            .cholesky()
            .map(|c| c.solve(&g))
            .filter(|d| d.dot(&g) > 0.0 && d.iter().all(|x| x.is_finite()))
            .unwrap_or(g);
        let slope = g.dot(&direction);

        // Once the predicted gain is below the rounding error of the summed
        // log-likelihood, comparing values is noise; judge the full step by
        // whether it shrinks the gradient instead.
        let noise = 64.0 * f64::EPSILON * eval.value.abs().max(1.0);
        if slope <= noise {
            let candidate = w + direction;
            let trial = suqr_eval(data, &candidate.into());
            if Vector3::from(trial.gradient).amax() < g.amax() {
                w = candidate;
                eval = trial;
                continue;
            }
            break;
        }

        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-16 {
            let candidate = w + direction * step;
            let trial = suqr_eval(data, &candidate.into());
            if trial.value >= eval.value + 1e-4 * step * slope {
                accepted = Some((candidate, trial));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((next_w, next_eval)) => {
                w = next_w;
                eval = next_eval;
            }
            // no ascent possible at double precision
            None => break,
        }
    }
    let gradient_norm = Vector3::from(eval.gradient).amax();
    Ok(FitResult {
        params: FittedParams::Suqr(SUQRParams::new(w.into())?),
        log_likelihood: eval.value,
        iterations,
        converged: converged || gradient_norm <= options.w_tolerance,
        gradient_norm,
        at_bound: false,
        non_identifiable: false,
    })
}

/// A choice model with fixed parameters, used to generate synthetic play.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ChoiceModel {
    Qr { lambda: f64 },
    Suqr { w: [f64; FEATURES] },
}

impl ChoiceModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            ChoiceModel::Qr { .. } => ModelKind::Qr,
            ChoiceModel::Suqr { .. } => ModelKind::Suqr,
        }
    }

    pub fn choice_probs(&self, round: &RoundSpec) -> Result<Utilities, ModelError> {
        match self {
            ChoiceModel::Qr { lambda } => qr_choice_probs(&round_utilities(round), *lambda),
            ChoiceModel::Suqr { w } => suqr_choice_probs(&round.features(), w),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Qr,
    Suqr,
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "qr" => Ok(ModelKind::Qr),
            "suqr" => Ok(ModelKind::Suqr),
            other => Err(format!("unknown model {other:?} (expected qr or suqr)")),
        }
    }
}

/// Draws an index from a probability vector by inverting its CDF.
fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        cumulative += p;
        if u < cumulative {
            return i;
        }
    }
    last_positive
}

/// Plays `rounds` as a boundedly rational player following `model`.
pub fn simulate_player(
    model: &ChoiceModel,
    rounds: &[RoundSpec],
    rng_seed: u64,
) -> Result<PlayDataset, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let entries = rounds
        .iter()
        .map(|round| {
            let probs = model.choice_probs(round)?;
            Ok(PlayEntry::from_round(round, sample_index(&probs, &mut rng)))
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let label = match model {
        ChoiceModel::Qr { lambda } => format!("simulated qr lambda={lambda}"),
        ChoiceModel::Suqr { w } => format!("simulated suqr w={w:?}"),
    };
    PlayDataset::new(label, entries)
}

pub fn fit_model(
    data: &PlayDataset,
    kind: ModelKind,
    options: &FitOptions,
) -> Result<FitResult, ModelError> {
    match kind {
        ModelKind::Qr => Ok(fit_lambda(data, options)),
        ModelKind::Suqr => fit_w(data, options),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalPoint {
    pub interval_index: usize,
    pub entries: usize,
    pub fit: FitResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSeries {
    pub window_size: usize,
    pub points: Vec<IntervalPoint>,
    /// The last interval covers fewer than `window_size` rounds.
    pub partial_trailing: bool,
}

/// Fits each consecutive window of rounds independently.
///
/// When every entry carries a `round_index`, interval `k` pools all entries
/// whose round falls in `[k·window, (k+1)·window)`, which is how a trend is
/// computed across many players. Otherwise entries are windowed by position.
pub fn fit_by_intervals(
    data: &PlayDataset,
    window_size: usize,
    kind: ModelKind,
    options: &FitOptions,
) -> Result<IntervalSeries, ModelError> {
    if window_size == 0 {
        return Err(ModelError::BadWindow);
    }
    let positions: Vec<usize> = if data.entries.iter().all(|e| e.round_index.is_some()) {
        data.entries.iter().map(|e| e.round_index.unwrap()).collect()
    } else {
        (0..data.len()).collect()
    };
    let span = positions.iter().max().map_or(0, |m| m + 1);
    let intervals = span.div_ceil(window_size);
    let mut buckets: Vec<Vec<PlayEntry>> = vec![Vec::new(); intervals];
    for (entry, &pos) in data.entries.iter().zip(&positions) {
        buckets[pos / window_size].push(entry.clone());
    }
    let points = buckets
        .into_iter()
        .enumerate()
        .map(|(interval_index, entries)| {
            if entries.is_empty() {
                return Err(ModelError::EmptyInterval {
                    interval: interval_index,
                });
            }
            let count = entries.len();
            let label = format!("{} [interval {interval_index}]", data.label);
            let subset = PlayDataset::new(label, entries)?;
            Ok(IntervalPoint {
                interval_index,
                entries: count,
                fit: fit_model(&subset, kind, options)?,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(IntervalSeries {
        window_size,
        points,
        partial_trailing: span % window_size != 0,
    })
}

/// Percent change of λ and of `‖W‖₁` between two sessions of the same player.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionChange {
    pub delta_lambda_pct: f64,
    pub delta_w_l1_pct: f64,
}

pub fn percent_change(before: f64, after: f64, what: &'static str) -> Result<f64, ModelError> {
    if before == 0.0 {
        return Err(ModelError::UndefinedChange(what));
    }
    Ok(100.0 * (after - before) / before.abs())
}

fn expect_qr(fit: &FitResult) -> Result<f64, ModelError> {
    fit.params.lambda().ok_or(ModelError::WrongModel {
        expected: "qr",
        found: fit.params.model_name(),
    })
}

fn expect_suqr(fit: &FitResult) -> Result<f64, ModelError> {
    match fit.params {
        FittedParams::Suqr(p) => Ok(p.l1_norm()),
        other => Err(ModelError::WrongModel {
            expected: "suqr",
            found: other.model_name(),
        }),
    }
}

/// Compares a basic session's `(QR, SUQR)` fits with an additional session's.
pub fn session_change(
    basic: (&FitResult, &FitResult),
    additional: (&FitResult, &FitResult),
) -> Result<SessionChange, ModelError> {
    Ok(SessionChange {
        delta_lambda_pct: percent_change(expect_qr(basic.0)?, expect_qr(additional.0)?, "lambda")?,
        delta_w_l1_pct: percent_change(
            expect_suqr(basic.1)?,
            expect_suqr(additional.1)?,
            "W 1-norm",
        )?,
    })
}
