//! Episode scoring: success rate, SPL, Soft-SPL and aggregate reports.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no episode records")]
    Empty,
    #[error("shortest path length must be positive, got {0}")]
    NonPositiveShortestPath(f64),
    #[error("every episode has zero initial distance")]
    NoSoftEligible,
}

/// Outcome of one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub scene: String,
    pub seed: u64,
    pub policy: String,
    pub success: bool,
    /// Meters actually travelled (`p`).
    pub path_length: f64,
    /// Geodesic start-to-goal distance on the ground truth (`l`).
    pub shortest_path: f64,
    pub final_distance: f64,
    pub initial_distance: f64,
    pub steps: u32,
    pub decision_count: u32,
    pub vlm_calls: u32,
    /// Seconds; zero when timing is disabled.
    pub wall_time: f64,
    /// Why the episode ended abnormally, if it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl EpisodeRecord {
    /// `l / max(l, p)`.
    pub fn efficiency(&self) -> f64 {
        self.shortest_path / self.shortest_path.max(self.path_length)
    }

    /// Distance-reduction credit `1 - d_T / d_init`, clamped to [0, 1].
    /// `None` when `d_init` is zero.
    pub fn soft_success(&self) -> Option<f64> {
        (self.initial_distance > 0.0).then(|| (1.0 - self.final_distance / self.initial_distance).clamp(0.0, 1.0))
    }
}

// Order-independent mean: terms are summed in sorted order.
fn mean(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum::<f64>() / terms.len() as f64
}

fn check(records: &[EpisodeRecord]) -> Result<(), MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(r) = records.iter().find(|r| !(r.shortest_path > 0.0)) {
        return Err(MetricsError::NonPositiveShortestPath(r.shortest_path));
    }
    Ok(())
}

/// Percentage of successful episodes.
pub fn success_rate(records: &[EpisodeRecord]) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(100.0 * records.iter().filter(|r| r.success).count() as f64 / records.len() as f64)
}

/// Success weighted by inverse path length, as a percentage.
pub fn spl(records: &[EpisodeRecord]) -> Result<f64, MetricsError> {
    check(records)?;
    Ok(100.0
        * mean(
            records
                .iter()
                .map(|r| if r.success { r.efficiency() } else { 0.0 })
                .collect(),
        ))
}

/// Soft-SPL as a percentage. Episodes with zero initial distance are left
/// out; see [`soft_spl_excluded`].
pub fn soft_spl(records: &[EpisodeRecord]) -> Result<f64, MetricsError> {
    check(records)?;
    let terms: Vec<f64> = records
        .iter()
        .filter_map(|r| r.soft_success().map(|s| s * r.efficiency()))
        .collect();
    if terms.is_empty() {
        return Err(MetricsError::NoSoftEligible);
    }
    Ok(100.0 * mean(terms))
}

/// Episodes skipped by [`soft_spl`].
pub fn soft_spl_excluded(records: &[EpisodeRecord]) -> usize {
    records.iter().filter(|r| r.soft_success().is_none()).count()
}

/// Summary over a set of episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub episodes: usize,
    pub sr: f64,
    pub spl: f64,
    pub soft_spl: f64,
    pub mean_steps: f64,
    pub mean_decisions: f64,
    pub mean_vlm_calls: f64,
    pub mean_wall_time: f64,
    pub soft_spl_excluded: usize,
    /// Episodes that ended with a recorded failure cause.
    pub failures: usize,
    /// Inputs that produced no episode at all (e.g. scenes that failed to load).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Aggregates records; the result does not depend on record order.
pub fn aggregate_report(records: &[EpisodeRecord]) -> Result<Report, MetricsError> {
    let soft = match soft_spl(records) {
        Err(MetricsError::NoSoftEligible) => 0.0,
        other => other?,
    };
    let avg = |f: &dyn Fn(&EpisodeRecord) -> f64| mean(records.iter().map(f).collect());
    Ok(Report {
        episodes: records.len(),
        sr: success_rate(records)?,
        spl: spl(records)?,
        soft_spl: soft,
        mean_steps: avg(&|r| r.steps as f64),
        mean_decisions: avg(&|r| r.decision_count as f64),
        mean_vlm_calls: avg(&|r| r.vlm_calls as f64),
        mean_wall_time: avg(&|r| r.wall_time),
        soft_spl_excluded: soft_spl_excluded(records),
        failures: records.iter().filter(|r| r.failure.is_some()).count(),
        notes: Vec::new(),
    })
}

impl Report {
    /// Aligned two-column table.
    pub fn to_table(&self) -> String {
        let rows = [
            ("episodes", self.episodes.to_string()),
            ("SR", format!("{:.2}", self.sr)),
            ("SPL", format!("{:.2}", self.spl)),
            ("Soft-SPL", format!("{:.2}", self.soft_spl)),
            ("mean steps", format!("{:.2}", self.mean_steps)),
            ("mean decisions", format!("{:.2}", self.mean_decisions)),
            ("mean VLM calls", format!("{:.2}", self.mean_vlm_calls)),
            ("mean wall time (s)", format!("{:.3}", self.mean_wall_time)),
            ("failures", self.failures.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<20}{v:>10}");
        }
        if self.soft_spl_excluded > 0 {
            let _ = writeln!(out, "note: {} episode(s) with zero initial distance excluded from Soft-SPL", self.soft_spl_excluded);
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
