//! Fitts' law target task over cursor aperture and orientation.
//!
//! A trial presents a prompted closing grasp and a target `(r, phi)`.
//! Decisions move the cursor at a fixed rate per step. The trial succeeds
//! once the user holds Rest for the dwell time inside the tolerance band,
//! and times out if that does not happen within the time limit after the
//! first non-Rest decision.

mod metrics;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::movement::{Location, Movement};
use crate::session::ProtocolStage;

pub use metrics::{completion_rate, overshoot, overshoot_count, path_efficiency, throughput, FltMetrics, FITTS_WIDTH};

/// Aperture and normalized orientation `θ / 2π`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CursorConfig {
    pub r: f64,
    pub phi: f64,
}

impl CursorConfig {
    pub fn new(r: f64, phi: f64) -> Self {
        CursorConfig { r, phi }
    }

    /// Euclidean distance in `(r, phi)`, without wrapping orientation.
    pub fn distance(&self, other: &CursorConfig) -> f64 {
        (self.r - other.r).hypot(self.phi - other.phi)
    }

    /// Orientation folded into `[0, 1)` for display.
    pub fn rendered_phi(&self) -> f64 {
        self.phi.rem_euclid(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Handedness {
    #[default]
    Right,
    Left,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rotation {
    /// Target orientation below the start orientation.
    Clockwise,
    CounterClockwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FltConfig {
    /// Full width of the acceptance band in each dimension.
    pub tolerance_width: f64,
    pub initial: CursorConfig,
    /// Aperture units per second.
    pub aperture_rate: f64,
    /// Orientation units per second.
    pub orientation_rate: f64,
    pub step_ms: u32,
    pub time_limit_ms: u32,
    pub dwell_ms: u32,
    /// A trial with no non-Rest decision this long after presentation times out.
    pub idle_limit_ms: u32,
    pub handedness: Handedness,
    pub aperture_range: (f64, f64),
    pub orientation_range: (f64, f64),
}

impl Default for FltConfig {
    fn default() -> Self {
        FltConfig {
            tolerance_width: 0.05,
            initial: CursorConfig::new(1.0, 0.5),
            aperture_rate: 0.4,
            orientation_rate: 0.4,
            step_ms: 50,
            time_limit_ms: 15_000,
            dwell_ms: 1_000,
            idle_limit_ms: 15_000,
            handedness: Handedness::Right,
            aperture_range: (0.25, 0.75),
            orientation_range: (0.25, 0.75),
        }
    }
}

impl FltConfig {
    pub fn step_seconds(&self) -> f64 {
        self.step_ms as f64 / 1000.0
    }

    fn steps(&self, ms: u32) -> usize {
        (ms as f64 / self.step_ms as f64).ceil() as usize
    }

    pub fn dwell_steps(&self) -> usize {
        self.steps(self.dwell_ms).max(1)
    }

    pub fn limit_steps(&self) -> usize {
        self.steps(self.time_limit_ms)
    }

    pub fn idle_steps(&self) -> usize {
        self.steps(self.idle_limit_ms)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.step_ms > 0
            && self.tolerance_width > 0.0
            && self.aperture_rate > 0.0
            && self.orientation_rate > 0.0
            && self.aperture_range.0 <= self.aperture_range.1
            && self.orientation_range.0 < self.orientation_range.1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("invalid FLT configuration".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub gesture: Movement,
    pub target: CursorConfig,
    /// Half of the tolerance width, per dimension.
    pub half_width: f64,
    pub rotation: Rotation,
    pub location: Location,
}

impl TargetSpec {
    pub fn contains(&self, s: &CursorConfig) -> bool {
        (s.r - self.target.r).abs() <= self.half_width && (s.phi - self.target.phi).abs() <= self.half_width
    }
}

/// Targets for one assessment block. Gestures are dealt round-robin over
/// the stage's calibrated closing grasps and rotations alternate, so both
/// are balanced to within one trial; order is then shuffled under `seed`.
pub fn sample_targets(stage: &ProtocolStage, config: &FltConfig, seed: u64) -> Result<Vec<TargetSpec>> {
    sample_n_targets(stage, stage.flt_trials(), config, seed)
}

pub fn sample_n_targets(stage: &ProtocolStage, total: usize, config: &FltConfig, seed: u64) -> Result<Vec<TargetSpec>> {
    config.validate()?;
    let gestures = stage.flt_gestures();
    if gestures.is_empty() {
        return Err(Error::Protocol("stage has no FLT-eligible gestures".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let odd_extra = if rng.random_bool(0.5) {
        Rotation::Clockwise
    } else {
        Rotation::CounterClockwise
    };
    let mut plan: Vec<(Movement, Rotation, Location)> = (0..total)
        .map(|i| {
            let rotation = if total % 2 == 1 && i == total - 1 {
                odd_extra
            } else if i % 2 == 0 {
                Rotation::Clockwise
            } else {
                Rotation::CounterClockwise
            };
            let location = Location::ALL[(i / gestures.len()) % Location::ALL.len()];
            (gestures[i % gestures.len()], rotation, location)
        })
        .collect();
    plan.shuffle(&mut rng);

    let (a_lo, a_hi) = config.aperture_range;
    let (o_lo, o_hi) = config.orientation_range;
    let start = config.initial.phi.clamp(o_lo, o_hi);
    Ok(plan
        .into_iter()
        .map(|(gesture, rotation, location)| {
            let r = if a_hi > a_lo {
                rng.random_range(a_lo..a_hi)
            } else {
                a_lo
            };
            let phi = match rotation {
                Rotation::Clockwise if start > o_lo => rng.random_range(o_lo..start),
                Rotation::CounterClockwise if o_hi > start => o_hi - rng.random_range(0.0..o_hi - start),
                _ => start,
            };
            TargetSpec {
                gesture,
                target: CursorConfig::new(r, phi),
                half_width: config.tolerance_width / 2.0,
                rotation,
                location,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Timeout,
}

/// A finished FLT trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub prompt: Movement,
    pub target: CursorConfig,
    pub half_width: f64,
    pub location: Location,
    pub s0: CursorConfig,
    /// `s0` followed by the cursor after every decision.
    pub trajectory: Vec<CursorConfig>,
    /// Decision label applied at each step.
    pub labels: Vec<Movement>,
    pub step_ms: u32,
    pub outcome: Outcome,
    /// Seconds from the first non-Rest decision to dwell completion.
    pub completion_s: Option<f64>,
    pub overshoots: u32,
    pub misclassifications: u32,
}

impl TrialRecord {
    pub fn is_success(&self) -> bool {
        self.outcome == Outcome::Success
    }

    pub fn final_config(&self) -> CursorConfig {
        *self.trajectory.last().unwrap_or(&self.s0)
    }

    /// `‖s0 − target‖`.
    pub fn target_distance(&self) -> f64 {
        self.s0.distance(&self.target)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Waiting,
    Running,
    Finished(Outcome),
}

/// An active trial, stepped once per decision.
#[derive(Debug, Clone)]
pub struct Trial {
    spec: TargetSpec,
    config: FltConfig,
    cursor: CursorConfig,
    trajectory: Vec<CursorConfig>,
    labels: Vec<Movement>,
    started_at: Option<usize>,
    dwell: usize,
    misclassifications: u32,
    outcome: Option<Outcome>,
    completion_steps: Option<usize>,
}

impl Trial {
    pub fn new(spec: TargetSpec, config: &FltConfig) -> Self {
        Trial {
            spec,
            cursor: config.initial,
            trajectory: vec![config.initial],
            labels: Vec::new(),
            started_at: None,
            dwell: 0,
            misclassifications: 0,
            outcome: None,
            completion_steps: None,
            config: config.clone(),
        }
    }

    pub fn spec(&self) -> &TargetSpec {
        &self.spec
    }

    pub fn cursor(&self) -> CursorConfig {
        self.cursor
    }

    pub fn steps(&self) -> usize {
        self.labels.len()
    }

    pub fn dwell_steps(&self) -> usize {
        self.dwell
    }

    pub fn misclassifications(&self) -> u32 {
        self.misclassifications
    }

    /// Milliseconds since the first non-Rest decision.
    pub fn elapsed_ms(&self) -> u64 {
        self.started_at
            .map(|s| (self.labels.len() - s) as u64 * self.config.step_ms as u64)
            .unwrap_or(0)
    }

    pub fn status(&self) -> TrialStatus {
        match (self.outcome, self.started_at) {
            (Some(o), _) => TrialStatus::Finished(o),
            (None, Some(_)) => TrialStatus::Running,
            (None, None) => TrialStatus::Waiting,
        }
    }

    /// Apply one decision label.
    pub fn step(&mut self, label: Movement) -> Result<TrialStatus> {
        if self.outcome.is_some() {
            return Err(Error::TrialFinished);
        }
        let dt = self.config.step_seconds();
        let da = self.config.aperture_rate * dt;
        let dphi = self.config.orientation_rate * dt;
        let cw_sign = match self.config.handedness {
            Handedness::Right => -1.0,
            Handedness::Left => 1.0,
        };
        match label {
            Movement::Rest => {}
            Movement::HandOpen => self.cursor.r += da,
            Movement::WristPronate => self.cursor.phi += cw_sign * dphi,
            Movement::WristSupinate => self.cursor.phi -= cw_sign * dphi,
            m if m == self.spec.gesture => self.cursor.r -= da,
            _ => self.misclassifications += 1,
        }
        self.cursor.r = self.cursor.r.clamp(0.0, 1.0);

        let step = self.labels.len();
        self.labels.push(label);
        self.trajectory.push(self.cursor);
        if self.started_at.is_none() && label != Movement::Rest {
            self.started_at = Some(step);
        }

        match self.started_at {
            None => {
                if self.labels.len() >= self.config.idle_steps() {
                    self.outcome = Some(Outcome::Timeout);
                }
            }
            Some(start) => {
                if label == Movement::Rest && self.spec.contains(&self.cursor) {
                    self.dwell += 1;
                } else {
                    self.dwell = 0;
                }
                let elapsed = step - start + 1;
                if self.dwell >= self.config.dwell_steps() && elapsed <= self.config.limit_steps() {
                    self.outcome = Some(Outcome::Success);
                    self.completion_steps = Some(elapsed);
                } else if elapsed >= self.config.limit_steps() {
                    self.outcome = Some(Outcome::Timeout);
                }
            }
        }
        Ok(self.status())
    }

    /// Close the trial. An unfinished trial is recorded as a timeout.
    pub fn finish(self) -> TrialRecord {
        let outcome = self.outcome.unwrap_or(Outcome::Timeout);
        let overshoots = overshoot_count(&self.trajectory, &self.spec.target, self.spec.half_width);
        TrialRecord {
            prompt: self.spec.gesture,
            target: self.spec.target,
            half_width: self.spec.half_width,
            location: self.spec.location,
            s0: self.config.initial,
            trajectory: self.trajectory,
            labels: self.labels,
            step_ms: self.config.step_ms,
            outcome,
            completion_s: self
                .completion_steps
                .map(|n| n as f64 * self.config.step_ms as f64 / 1000.0),
            overshoots,
            misclassifications: self.misclassifications,
        }
    }
}

/// Decide a recorded trial from its label sequence and trajectory alone.
pub fn adjudicate(record: &TrialRecord, config: &FltConfig) -> Outcome {
    let in_band = |s: &CursorConfig| {
        (s.r - record.target.r).abs() <= record.half_width && (s.phi - record.target.phi).abs() <= record.half_width
    };
    let Some(start) = record.labels.iter().position(|l| *l != Movement::Rest) else {
        return Outcome::Timeout;
    };
    let mut run = 0;
    for (j, label) in record.labels.iter().enumerate().skip(start) {
        let elapsed = j - start + 1;
        if elapsed > config.limit_steps() {
            break;
        }
        match record.trajectory.get(j + 1) {
            Some(s) if *label == Movement::Rest && in_band(s) => run += 1,
            _ => run = 0,
        }
        if run >= config.dwell_steps() {
            return Outcome::Success;
        }
    }
    Outcome::Timeout
}
