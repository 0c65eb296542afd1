//! Waypoint decision policies, confirmation handling and reply parsing.

pub mod server;
pub mod vlm;

use crate::poi::CandidateSet;
use crate::prompting::{ConfirmationPrompt, DecisionPrompt};
use crate::rng::StreamRng;
use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::LazyLock;
use thiserror::Error;

pub use vlm::{RemoteVlmConfig, ScriptedResponder, VlmClient};

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("no choices to decide between")]
    EmptyChoices,
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("remote model configuration rejected: {0}")]
    Fatal(String),
    #[error("policy needs a decision prompt")]
    MissingPrompt,
}

/// Answer to a waypoint decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "choice", rename_all = "snake_case")]
pub enum Decision {
    /// Display number in `1..=n`.
    Choose(usize),
    Rotate,
    Uncertain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfirmResult {
    Confirmed,
    Rejected,
    Unsure,
}

/// Canonical reply for a decision.
pub fn format_decision(d: Decision) -> String {
    match d {
        Decision::Choose(k) => format!("ANSWER: {k}"),
        Decision::Rotate => "ANSWER: 0".to_string(),
        Decision::Uncertain => "ANSWER: unsure".to_string(),
    }
}

static ANSWER_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*\**answer\**\s*[:=]\s*\**\s*(\d+)\s*\**\s*\.?\s*$").expect("valid regex"));
static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").expect("valid regex"));

fn decision_for(k: usize, n: usize) -> Decision {
    match k {
        0 => Decision::Rotate,
        k if k <= n => Decision::Choose(k),
        _ => Decision::Uncertain,
    }
}

/// Extracts a decision from free text. A final line `ANSWER: k` wins;
/// otherwise the last standalone integer in `0..=n` is used. `0` means
/// rotate; no usable number means uncertain.
pub fn parse_decision(text: &str, n: usize) -> Decision {
    if let Some(last) = text.lines().rev().find(|l| !l.trim().is_empty()) {
        if let Some(c) = ANSWER_LINE.captures(last) {
            return c[1].parse::<usize>().map_or(Decision::Uncertain, |k| decision_for(k, n));
        }
    }
    let bytes = text.as_bytes();
    let mut found = None;
    for m in NUMBER.find_iter(text) {
        let before = text[..m.start()].chars().next_back();
        let after = text[m.end()..].chars().next();
        let glued_before = before.is_some_and(|c| c.is_alphanumeric() || c == '_')
            || (before == Some('.') && m.start() >= 2 && bytes[m.start() - 2].is_ascii_digit());
        let decimal = after == Some('.') && bytes.get(m.end() + 1).is_some_and(|b| b.is_ascii_digit());
        let glued_after = after.is_some_and(|c| c.is_alphanumeric() || c == '_');
        if glued_before || glued_after || decimal {
            continue;
        }
        if let Ok(k) = m.as_str().parse::<usize>() {
            if k <= n {
                found = Some(k);
            }
        }
    }
    found.map_or(Decision::Uncertain, |k| decision_for(k, n))
}

static UNSURE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(unsure|not sure|uncertain|can(no|')t tell|unclear|hard to say)\b").expect("valid regex")
});
static YES_NO: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(yes|no)\b").expect("valid regex"));

/// Reads a yes/no/unsure confirmation reply.
pub fn parse_confirmation(text: &str) -> ConfirmResult {
    if UNSURE.is_match(text) {
        return ConfirmResult::Unsure;
    }
    match YES_NO.find(text).map(|m| m.as_str().to_ascii_lowercase()) {
        Some(w) if w == "yes" => ConfirmResult::Confirmed,
        Some(_) => ConfirmResult::Rejected,
        None => ConfirmResult::Unsure,
    }
}

/// Index of the smallest distance as a display number; ties go to the
/// lowest number.
pub fn greedy_oracle_decide(distances: &[f64]) -> Result<Decision, PolicyError> {
    let (best, _) = distances
        .iter()
        .enumerate()
        .fold(None, |acc: Option<(usize, f64)>, (i, &d)| match acc {
            Some((_, bd)) if bd <= d || d.is_nan() => acc,
            _ => Some((i, d)),
        })
        .ok_or(PolicyError::EmptyChoices)?;
    Ok(Decision::Choose(best + 1))
}

/// Greedy with probability `t_prob`, otherwise a uniform choice.
pub fn epsilon_greedy_decide(distances: &[f64], t_prob: f64, rng: &mut StreamRng) -> Result<Decision, PolicyError> {
    if !(0.0..=1.0).contains(&t_prob) {
        return Err(PolicyError::InvalidProbability(t_prob));
    }
    if distances.is_empty() {
        return Err(PolicyError::EmptyChoices);
    }
    if rng.random::<f64>() < t_prob {
        greedy_oracle_decide(distances)
    } else {
        Ok(Decision::Choose(rng.random_range(0..distances.len()) + 1))
    }
}

/// Everything a policy may look at when choosing a waypoint.
pub struct DecisionInput<'a> {
    pub candidates: &'a CandidateSet,
    /// Ground-truth geodesic distance from each candidate to the goal.
    pub distances: &'a [f64],
    /// Geodesic distance from the agent to each candidate on its own map.
    pub travel: &'a [f64],
    pub prompt: Option<&'a DecisionPrompt>,
}

pub trait DecisionPolicy: Send {
    fn name(&self) -> &'static str;

    fn decide(&mut self, input: &DecisionInput<'_>) -> Result<Decision, PolicyError>;

    /// Whether `decide` reads the rendered prompt.
    fn needs_prompt(&self) -> bool {
        false
    }

    /// Confirms a suspected goal object. `is_goal` is ground truth, used only
    /// by policies without a vision model.
    fn confirm(&mut self, _prompt: &ConfirmationPrompt, is_goal: bool) -> ConfirmResult {
        if is_goal {
            ConfirmResult::Confirmed
        } else {
            ConfirmResult::Rejected
        }
    }

    /// Requests sent to a remote model so far.
    fn remote_calls(&self) -> u32 {
        0
    }
}

/// Picks the candidate closest to the goal.
pub struct GreedyOracle;

impl DecisionPolicy for GreedyOracle {
    fn name(&self) -> &'static str {
        "greedy"
    }

    fn decide(&mut self, input: &DecisionInput<'_>) -> Result<Decision, PolicyError> {
        greedy_oracle_decide(input.distances)
    }
}

pub struct EpsilonGreedy {
    pub t_prob: f64,
    pub rng: StreamRng,
}

impl DecisionPolicy for EpsilonGreedy {
    fn name(&self) -> &'static str {
        "epsilon"
    }

    fn decide(&mut self, input: &DecisionInput<'_>) -> Result<Decision, PolicyError> {
        epsilon_greedy_decide(input.distances, self.t_prob, &mut self.rng)
    }
}

/// Uniform random choice.
pub struct RandomChoice {
    pub rng: StreamRng,
}

impl DecisionPolicy for RandomChoice {
    fn name(&self) -> &'static str {
        "random"
    }

    fn decide(&mut self, input: &DecisionInput<'_>) -> Result<Decision, PolicyError> {
        epsilon_greedy_decide(input.distances, 0.0, &mut self.rng)
    }
}

/// Always heads for the nearest frontier candidate (by travel distance),
/// falling back to the nearest candidate of any kind.
pub struct NearestFrontier;

impl DecisionPolicy for NearestFrontier {
    fn name(&self) -> &'static str {
        "nearest-frontier"
    }

    fn decide(&mut self, input: &DecisionInput<'_>) -> Result<Decision, PolicyError> {
        let masked: Vec<f64> = input
            .candidates
            .candidates
            .iter()
            .zip(input.travel)
            .map(|(p, &d)| if p.kind.is_frontier() { d } else { f64::INFINITY })
            .collect();
        if masked.iter().any(|d| d.is_finite()) {
            greedy_oracle_decide(&masked)
        } else {
            greedy_oracle_decide(input.travel)
        }
    }
}

/// Asks a chat model (remote or scripted) through the wire protocol.
pub struct VlmPolicy {
    pub client: VlmClient,
}

impl DecisionPolicy for VlmPolicy {
    fn name(&self) -> &'static str {
        "vlm"
    }

    fn decide(&mut self, input: &DecisionInput<'_>) -> Result<Decision, PolicyError> {
        let prompt = input.prompt.ok_or(PolicyError::MissingPrompt)?;
        self.client.decide(prompt)
    }

    fn needs_prompt(&self) -> bool {
        true
    }

    fn confirm(&mut self, prompt: &ConfirmationPrompt, _is_goal: bool) -> ConfirmResult {
        self.client.confirm(prompt)
    }

    fn remote_calls(&self) -> u32 {
        self.client.calls()
    }
}

/// Per-object limit on single-image confirmation attempts.
#[derive(Clone, Debug, Default)]
pub struct ConfirmBudget {
    pub limit: u32,
    attempts: HashMap<u32, u32>,
}

impl ConfirmBudget {
    pub fn new(limit: u32) -> Self {
        Self {
            limit,
            attempts: HashMap::new(),
        }
    }

    pub fn attempts(&self, object_id: u32) -> u32 {
        self.attempts.get(&object_id).copied().unwrap_or(0)
    }

    pub fn exhausted(&self, object_id: u32) -> bool {
        self.attempts(object_id) >= self.limit
    }

    fn consume(&mut self, object_id: u32) {
        *self.attempts.entry(object_id).or_insert(0) += 1;
    }
}

/// Runs a confirmation. Single-image checks draw on the object's budget and
/// return `Unsure` without asking once it is spent; multi-view checks are
/// unlimited.
pub fn confirm_object(
    policy: &mut dyn DecisionPolicy,
    prompt: &ConfirmationPrompt,
    object_id: u32,
    is_goal: bool,
    single_image: bool,
    budget: &mut ConfirmBudget,
) -> ConfirmResult {
    if single_image {
        if budget.exhausted(object_id) {
            return ConfirmResult::Unsure;
        }
        budget.consume(object_id);
    }
    policy.confirm(prompt, is_goal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Streams, POLICY};

    #[test]
    fn parse_examples() {
        assert_eq!(parse_decision("ANSWER: 2", 4), Decision::Choose(2));
        assert_eq!(parse_decision("options 1 and 2 are bad, go to 3", 3), Decision::Choose(3));
        assert_eq!(parse_decision("7", 3), Decision::Uncertain);
        assert_eq!(parse_decision("I choose 3.", 5), Decision::Choose(3));
        assert_eq!(parse_decision("0 - I need to look around", 5), Decision::Rotate);
        assert_eq!(parse_decision("maybe the kitchen?", 5), Decision::Uncertain);
    }

    #[test]
    fn answer_line_takes_precedence() {
        assert_eq!(parse_decision("I like 1 and 4.\nANSWER: 2", 4), Decision::Choose(2));
        assert_eq!(parse_decision("thinking about 3\nANSWER: 9", 4), Decision::Uncertain);
        assert_eq!(parse_decision("answer = 0", 4), Decision::Rotate);
    }

    #[test]
    fn glued_and_decimal_numbers_ignored() {
        assert_eq!(parse_decision("room2 is 2.5 m away", 4), Decision::Uncertain);
        assert_eq!(parse_decision("go to 2, it is 3.5m", 4), Decision::Choose(2));
    }

    #[test]
    fn format_round_trip() {
        for n in 1..12 {
            for k in 1..=n {
                assert_eq!(parse_decision(&format_decision(Decision::Choose(k)), n), Decision::Choose(k));
            }
            assert_eq!(parse_decision(&format_decision(Decision::Rotate), n), Decision::Rotate);
        }
    }

    #[test]
    fn confirmation_keywords() {
        assert_eq!(parse_confirmation("Yes, that is a potted plant"), ConfirmResult::Confirmed);
        assert_eq!(parse_confirmation("No - it is a painting of flowers"), ConfirmResult::Rejected);
        assert_eq!(parse_confirmation("I'm not sure, yes maybe"), ConfirmResult::Unsure);
        assert_eq!(parse_confirmation("Nothing to say"), ConfirmResult::Unsure);
    }

    #[test]
    fn greedy_examples() {
        assert_eq!(greedy_oracle_decide(&[3.0, 1.0, 2.0]), Ok(Decision::Choose(2)));
        assert_eq!(greedy_oracle_decide(&[1.0, 1.0]), Ok(Decision::Choose(1)));
        assert_eq!(greedy_oracle_decide(&[5.0]), Ok(Decision::Choose(1)));
        assert_eq!(greedy_oracle_decide(&[]), Err(PolicyError::EmptyChoices));
        assert_eq!(greedy_oracle_decide(&[f64::INFINITY, 2.0]), Ok(Decision::Choose(2)));
    }

    #[test]
    fn epsilon_extremes() {
        let mut rng = Streams::new(4).stream(POLICY);
        for _ in 0..100 {
            assert_eq!(epsilon_greedy_decide(&[3.0, 1.0, 2.0], 1.0, &mut rng), Ok(Decision::Choose(2)));
        }
        assert_eq!(
            epsilon_greedy_decide(&[1.0], 1.5, &mut rng),
            Err(PolicyError::InvalidProbability(1.5))
        );
    }

    #[test]
    fn epsilon_zero_is_uniform() {
        let mut rng = Streams::new(11).stream(POLICY);
        let n = 4;
        let draws = 10_000;
        let mut counts = vec![0usize; n];
        for _ in 0..draws {
            match epsilon_greedy_decide(&[1.0, 2.0, 3.0, 4.0], 0.0, &mut rng).unwrap() {
                Decision::Choose(k) => counts[k - 1] += 1,
                other => panic!("unexpected {other:?}"),
            }
        }
        let expected = draws as f64 / n as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 3 degrees of freedom, 99.9th percentile
        assert!(chi2 < 16.27, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn budget_skips_after_limit() {
        struct Counting(u32);
        impl DecisionPolicy for Counting {
            fn name(&self) -> &'static str {
                "counting"
            }
            fn decide(&mut self, _: &DecisionInput<'_>) -> Result<Decision, PolicyError> {
                Ok(Decision::Uncertain)
            }
            fn confirm(&mut self, _: &ConfirmationPrompt, _: bool) -> ConfirmResult {
                self.0 += 1;
                ConfirmResult::Unsure
            }
        }
        let prompt = ConfirmationPrompt {
            images: vec![],
            instruction: String::new(),
        };
        let mut p = Counting(0);
        let mut budget = ConfirmBudget::new(3);
        for _ in 0..5 {
            confirm_object(&mut p, &prompt, 7, true, true, &mut budget);
        }
        assert_eq!(p.0, 3);
        assert_eq!(confirm_object(&mut p, &prompt, 7, true, true, &mut budget), ConfirmResult::Unsure);
        assert_eq!(p.0, 3);
        confirm_object(&mut p, &prompt, 7, true, false, &mut budget);
        assert_eq!(p.0, 4);
    }
}
