use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BurstError {
    #[error("no dated events to analyse")]
    EmptyInput,
    #[error("invalid burst parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurstParams {
    pub window_days: u32,
    pub step_days: u32,
    pub z: f64,
    pub min_count: usize,
}

impl Default for BurstParams {
    fn default() -> Self {
        Self {
            window_days: 7,
            step_days: 1,
            z: 2.0,
            min_count: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstWindow {
    /// Inclusive bounds.
    pub start: NaiveDate,
    pub end: NaiveDate,
    /// Events dated within [start, end].
    pub count: usize,
    /// Baseline of the strongest flagged window in the run.
    pub baseline_mean: f64,
    pub baseline_std: f64,
    /// `None` when the baseline has zero spread.
    pub z_score: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Window {
    start: NaiveDate,
    end: NaiveDate,
    count: usize,
    mean: f64,
    std: f64,
}

fn count_between(sorted: &[NaiveDate], start: NaiveDate, end: NaiveDate) -> usize {
    sorted.partition_point(|d| *d <= end) - sorted.partition_point(|d| *d < start)
}

fn z_of(w: &Window) -> Option<f64> {
    (w.std > 0.0).then(|| (w.count as f64 - w.mean) / w.std)
}

/// Sliding-window burst detection. Windows start at the earliest date and
/// advance by `step_days` while the start is on or before the latest date.
/// A window is flagged when its count reaches `mean + z * std` of all
/// preceding windows, strictly exceeds that mean, and reaches `min_count`.
/// Overlapping flagged windows merge into maximal runs.
pub fn detect_bursts(dates: &[NaiveDate], params: &BurstParams) -> Result<Vec<BurstWindow>, BurstError> {
    if params.window_days == 0 || params.step_days == 0 {
        return Err(BurstError::InvalidParams(
            "window_days and step_days must be positive".into(),
        ));
    }
    if !params.z.is_finite() {
        return Err(BurstError::InvalidParams("z must be finite".into()));
    }
    let mut sorted = dates.to_vec();
    sorted.sort_unstable();
    let (Some(&first), Some(&last)) = (sorted.first(), sorted.last()) else {
        return Err(BurstError::EmptyInput);
    };

    let span = Duration::days(i64::from(params.window_days) - 1);
    let step = Duration::days(i64::from(params.step_days));
    let mut flagged: Vec<Window> = Vec::new();
    let (mut sum, mut sum_sq, mut n) = (0.0f64, 0.0f64, 0usize);
    let mut start = first;
    while start <= last {
        let end = start + span;
        let count = count_between(&sorted, start, end);
        if n > 0 {
            let mean = sum / n as f64;
            let std = (sum_sq / n as f64 - mean * mean).max(0.0).sqrt();
            let c = count as f64;
            if c >= mean + params.z * std && c > mean && count >= params.min_count {
                flagged.push(Window {
                    start,
                    end,
                    count,
                    mean,
                    std,
                });
            }
        }
        sum += count as f64;
        sum_sq += (count * count) as f64;
        n += 1;
        start += step;
    }

    let mut runs: Vec<(Window, Window)> = Vec::new();
    for w in flagged {
        match runs.last_mut() {
            Some((run, peak)) if w.start <= run.end => {
                run.end = run.end.max(w.end);
                if w.count > peak.count {
                    *peak = w;
                }
            }
            _ => runs.push((w, w)),
        }
    }
    Ok(runs
        .into_iter()
        .map(|(run, peak)| BurstWindow {
            start: run.start,
            end: run.end,
            count: count_between(&sorted, run.start, run.end),
            baseline_mean: peak.mean,
            baseline_std: peak.std,
            z_score: z_of(&peak),
        })
        .collect())
}
