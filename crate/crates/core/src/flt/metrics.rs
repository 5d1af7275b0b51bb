//! Completion rate, overshoot, path efficiency and throughput.

use serde::{Deserialize, Serialize};

use super::{CursorConfig, TrialRecord};

/// Width constant in the throughput index of difficulty.
pub const FITTS_WIDTH: f64 = 0.05;

/// `N_S / N`. `None` for an empty block.
pub fn completion_rate(records: &[TrialRecord]) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    let successes = records.iter().filter(|r| r.is_success()).count();
    Some(successes as f64 / records.len() as f64)
}

/// Overshoots in one trajectory, counted per dimension: the cursor enters
/// the target band from one side and leaves through the other. A step that
/// jumps across the whole band also counts. Leaving through the entry side
/// does not.
pub fn overshoot_count(trajectory: &[CursorConfig], target: &CursorConfig, half_width: f64) -> u32 {
    let r: Vec<f64> = trajectory.iter().map(|s| s.r).collect();
    let phi: Vec<f64> = trajectory.iter().map(|s| s.phi).collect();
    overshoots_1d(&r, target.r, half_width) + overshoots_1d(&phi, target.phi, half_width)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Below,
    Inside,
    Above,
}

fn overshoots_1d(values: &[f64], center: f64, half_width: f64) -> u32 {
    let side = |v: f64| {
        if v < center - half_width {
            Side::Below
        } else if v > center + half_width {
            Side::Above
        } else {
            Side::Inside
        }
    };
    let mut count = 0;
    let Some(first) = values.first() else {
        return 0;
    };
    let mut current = side(*first);
    // side the band was entered from; None if it started inside
    let mut entered_from = None;
    for v in &values[1..] {
        let next = side(*v);
        match (current, next) {
            (Side::Below, Side::Inside) | (Side::Above, Side::Inside) => entered_from = Some(current),
            (Side::Inside, Side::Below) | (Side::Inside, Side::Above) => {
                if entered_from.is_some_and(|from| from != next) {
                    count += 1;
                }
                entered_from = None;
            }
            (Side::Below, Side::Above) | (Side::Above, Side::Below) => count += 1,
            _ => {}
        }
        current = next;
    }
    count
}

/// `N_OT / N_S` over successful trials; `None` without successes.
pub fn overshoot(records: &[TrialRecord]) -> Option<f64> {
    let successes: Vec<&TrialRecord> = records.iter().filter(|r| r.is_success()).collect();
    if successes.is_empty() {
        return None;
    }
    let total: u32 = successes.iter().map(|r| r.overshoots).sum();
    Some(total as f64 / successes.len() as f64)
}

fn path_length(trajectory: &[CursorConfig]) -> f64 {
    trajectory.windows(2).map(|w| w[1].distance(&w[0])).sum()
}

/// Mean of `100 · ‖s0 − s_f‖ / path length` over successful trials, with
/// `s_f` the configuration at which the target was acquired. Trials with a
/// zero-length path are left out; the second value counts them.
pub fn path_efficiency(records: &[TrialRecord]) -> (Option<f64>, usize) {
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut excluded = 0usize;
    for r in records.iter().filter(|r| r.is_success()) {
        let path = path_length(&r.trajectory);
        if path <= 0.0 || r.trajectory.len() < 2 {
            excluded += 1;
            continue;
        }
        sum += 100.0 * r.s0.distance(&r.final_config()) / path;
        used += 1;
    }
    ((used > 0).then(|| sum / used as f64), excluded)
}

/// Mean over successful trials of `log2(D / 0.05 + 1) / T`, bits per second.
pub fn throughput(records: &[TrialRecord]) -> Option<f64> {
    let rates: Vec<f64> = records
        .iter()
        .filter(|r| r.is_success())
        .filter_map(|r| {
            let t = r.completion_s?;
            (t > 0.0).then(|| (r.target_distance() / FITTS_WIDTH + 1.0).log2() / t)
        })
        .collect();
    if rates.is_empty() {
        return None;
    }
    Some(rates.iter().sum::<f64>() / rates.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FltMetrics {
    pub trials: usize,
    pub successes: usize,
    pub completion_rate: f64,
    pub overshoot: Option<f64>,
    pub path_efficiency: Option<f64>,
    pub throughput: Option<f64>,
    /// Successful trials left out of path efficiency (zero path length).
    pub pe_excluded: usize,
}

impl FltMetrics {
    pub fn from_records(records: &[TrialRecord]) -> Self {
        let (pe, excluded) = path_efficiency(records);
        FltMetrics {
            trials: records.len(),
            successes: records.iter().filter(|r| r.is_success()).count(),
            completion_rate: completion_rate(records).unwrap_or(0.0),
            overshoot: overshoot(records),
            path_efficiency: pe,
            throughput: throughput(records),
            pe_excluded: excluded,
        }
    }
}
