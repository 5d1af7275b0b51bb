//! Longitudinal protocol: which movements each session trains, calibration
//! across limb positions, the exploration budget with recalibration
//! accounting, and the assessment block.

mod log;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classifier::{Decoder, DEFAULT_REST_THRESHOLD};
use crate::error::{Error, Result};
use crate::flt::{sample_targets, FltConfig, FltMetrics, TargetSpec, TrialRecord};
use crate::movement::Movement;
use crate::subspace::{fit_lda, CalibrationSet, Regularization, SubspaceModel};

pub use log::{read_log, read_log_str, write_log, write_log_string, LogRecord, SessionEvent, SessionReport};

/// Exploration allowance per calibrated (non-Rest) movement.
pub const EXPLORATION_MS_PER_MOVEMENT: u64 = 120_000;

/// Assessment trials per stage level.
pub const TRIALS_PER_LEVEL: usize = 18;

pub const LAST_SESSION: u32 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    A,
    B,
    C,
}

impl Stage {
    pub fn level(self) -> usize {
        match self {
            Stage::A => 1,
            Stage::B => 2,
            Stage::C => 3,
        }
    }

    pub fn movements(self) -> Vec<Movement> {
        use Movement::*;
        let mut m = vec![Rest, HandOpen, PowerGrasp, WristPronate, WristSupinate];
        if self >= Stage::B {
            m.extend([TripodGrasp, KeyGrasp]);
        }
        if self >= Stage::C {
            m.extend([IndexPoint, PrecisionPinch]);
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolStage {
    pub session_index: u32,
    pub stage: Stage,
    pub movements: Vec<Movement>,
}

impl ProtocolStage {
    /// `2 min × (movements − 1)`.
    pub fn t_max_ms(&self) -> u64 {
        EXPLORATION_MS_PER_MOVEMENT * (self.movements.len() as u64 - 1)
    }

    pub fn flt_trials(&self) -> usize {
        TRIALS_PER_LEVEL * self.stage.level()
    }

    /// Calibrated closing grasps, the only gestures an FLT trial prompts.
    pub fn flt_gestures(&self) -> Vec<Movement> {
        self.movements
            .iter()
            .copied()
            .filter(|m| m.is_closing_grasp())
            .collect()
    }

    pub fn contains(&self, movement: Movement) -> bool {
        self.movements.contains(&movement)
    }
}

pub fn plan_session(index: u32) -> Result<ProtocolStage> {
    let stage = match index {
        1..=4 => Stage::A,
        5..=7 => Stage::B,
        // the retention session repeats session 10
        8..=LAST_SESSION => Stage::C,
        _ => return Err(Error::SessionIndex(index)),
    };
    Ok(ProtocolStage {
        session_index: index,
        stage,
        movements: stage.movements(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectionConfig {
    /// Checkerboard positions cycled through for every movement.
    pub positions: Vec<u8>,
    pub seconds_per_position: f64,
}

impl Default for CollectionConfig {
    fn default() -> Self {
        CollectionConfig {
            positions: vec![5, 4, 6, 3, 1],
            seconds_per_position: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub collection: CollectionConfig,
    pub regularization: Regularization,
    pub t_rest: f64,
    /// Decision cadence; one collected feature vector per step.
    pub step_ms: u32,
    /// Nominal time charged for each refit on top of collection time.
    pub refit_cost_ms: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            collection: CollectionConfig::default(),
            regularization: Regularization::Auto,
            t_rest: DEFAULT_REST_THRESHOLD,
            step_ms: 50,
            refit_cost_ms: 0,
        }
    }
}

impl SessionConfig {
    pub fn samples_per_position(&self) -> usize {
        (self.collection.seconds_per_position * 1000.0 / self.step_ms as f64).round() as usize
    }
}

/// Supplies labeled feature vectors while a movement is being collected.
pub trait FeatureSource {
    fn next_features(&mut self, movement: Movement, position: u8) -> Option<Vec<f64>>;
}

impl<F> FeatureSource for F
where
    F: FnMut(Movement, u8) -> Option<Vec<f64>>,
{
    fn next_features(&mut self, movement: Movement, position: u8) -> Option<Vec<f64>> {
        self(movement, position)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Calibration,
    Exploration,
    Assessment,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationLog {
    pub t_d_ms: u64,
    pub t_max_ms: u64,
    pub recalibrations: Vec<(Movement, u64)>,
}

impl ExplorationLog {
    pub fn nr(&self) -> usize {
        self.recalibrations.len()
    }
}

/// `T_d / T_max`.
pub fn normalized_training_time(log: &ExplorationLog) -> Result<f64> {
    if log.t_max_ms == 0 {
        return Err(Error::InvalidArgument("maximum exploration time is zero".into()));
    }
    Ok(log.t_d_ms as f64 / log.t_max_ms as f64)
}

/// A fitted model together with the calibration data it came from.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub model: Arc<SubspaceModel>,
    pub calibration: Arc<CalibrationSet>,
}

/// Single-writer session state machine. Time is a deterministic clock in
/// milliseconds advanced by collection and by [`Session::advance`].
#[derive(Debug, Clone)]
pub struct Session {
    stage: ProtocolStage,
    config: SessionConfig,
    phase: Phase,
    clock_ms: u64,
    working: CalibrationSet,
    positions: BTreeMap<Movement, Vec<u8>>,
    decoder: Option<Decoder>,
    snapshots: Vec<Snapshot>,
    exploration_start: Option<u64>,
    exploration_end: Option<u64>,
    recalibrations: Vec<(Movement, u64)>,
    targets: Vec<TargetSpec>,
    trials: Vec<TrialRecord>,
    log: Vec<LogRecord>,
}

impl Session {
    pub fn new(stage: ProtocolStage, config: SessionConfig) -> Self {
        let mut session = Session {
            stage,
            config,
            phase: Phase::Calibration,
            clock_ms: 0,
            working: CalibrationSet::new(),
            positions: BTreeMap::new(),
            decoder: None,
            snapshots: Vec::new(),
            exploration_start: None,
            exploration_end: None,
            recalibrations: Vec::new(),
            targets: Vec::new(),
            trials: Vec::new(),
            log: Vec::new(),
        };
        session.emit(SessionEvent::SessionStarted {
            session_index: session.stage.session_index,
            stage: session.stage.stage,
            movements: session.stage.movements.clone(),
            t_max_ms: session.stage.t_max_ms(),
        });
        session
    }

    fn emit(&mut self, event: SessionEvent) {
        self.log.push(LogRecord {
            t_ms: self.clock_ms,
            event,
        });
    }

    pub fn stage(&self) -> &ProtocolStage {
        &self.stage
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn clock_ms(&self) -> u64 {
        self.clock_ms
    }

    pub fn decoder(&self) -> Option<&Decoder> {
        self.decoder.as_ref()
    }

    pub fn calibration(&self) -> &CalibrationSet {
        &self.working
    }

    /// Position tag of every stored sample of `movement`, in order.
    pub fn positions(&self, movement: Movement) -> Option<&[u8]> {
        self.positions.get(&movement).map(Vec::as_slice)
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn trials(&self) -> &[TrialRecord] {
        &self.trials
    }

    pub fn targets(&self) -> &[TargetSpec] {
        &self.targets
    }

    pub fn nr(&self) -> usize {
        self.recalibrations.len()
    }

    /// Elapsed exploration time, clamped at the budget.
    pub fn t_d_ms(&self) -> u64 {
        match self.exploration_start {
            None => 0,
            Some(start) => {
                let end = self.exploration_end.unwrap_or(self.clock_ms);
                (end - start).min(self.stage.t_max_ms())
            }
        }
    }

    pub fn exploration(&self) -> ExplorationLog {
        ExplorationLog {
            t_d_ms: self.t_d_ms(),
            t_max_ms: self.stage.t_max_ms(),
            recalibrations: self.recalibrations.clone(),
        }
    }

    /// Let time pass, e.g. while the user explores their control.
    pub fn advance(&mut self, ms: u64) {
        self.clock_ms += ms;
    }

    fn require(&self, phase: Phase, action: &str) -> Result<()> {
        if self.phase != phase {
            return Err(Error::Protocol(format!("cannot {action} during {:?}", self.phase)));
        }
        Ok(())
    }

    fn gather(&mut self, movement: Movement, source: &mut dyn FeatureSource) -> Result<(Vec<Vec<f64>>, Vec<u8>)> {
        if !self.stage.contains(movement) {
            return Err(Error::UnknownMovement { movement });
        }
        let per_position = self.config.samples_per_position();
        let mut samples = Vec::new();
        let mut tags = Vec::new();
        'positions: for &position in &self.config.collection.positions {
            for _ in 0..per_position {
                match source.next_features(movement, position) {
                    Some(x) => {
                        samples.push(x);
                        tags.push(position);
                    }
                    None => break 'positions,
                }
            }
        }
        if samples.is_empty() {
            return Err(Error::EmptyStream(movement));
        }
        self.clock_ms += samples.len() as u64 * self.config.step_ms as u64;
        Ok((samples, tags))
    }

    /// Collect a movement across the configured positions. During
    /// calibration this (re)places the class; during exploration it is a
    /// recalibration.
    pub fn collect_movement(&mut self, movement: Movement, source: &mut dyn FeatureSource) -> Result<usize> {
        match self.phase {
            Phase::Calibration => {
                let (samples, tags) = self.gather(movement, source)?;
                let n = samples.len();
                let replaced = self.working.class(movement).is_some();
                self.working.set_class(movement, samples);
                self.positions.insert(movement, tags);
                self.emit(SessionEvent::Collected {
                    movement,
                    samples: n,
                    positions: self.config.collection.positions.clone(),
                    replaced,
                });
                Ok(n)
            }
            Phase::Exploration => {
                self.recalibrate(movement, source)?;
                Ok(self.working.class(movement).map(|c| c.len()).unwrap_or(0))
            }
            _ => Err(Error::Protocol(format!("cannot collect during {:?}", self.phase))),
        }
    }

    fn refit(&mut self) -> Result<()> {
        let model = fit_lda(&self.working, self.config.regularization)?;
        let decoder = Decoder::new(model, self.config.t_rest)?;
        let provenance = decoder.model.provenance().to_string();
        self.snapshots.push(Snapshot {
            model: decoder.model.clone(),
            calibration: Arc::new(self.working.clone()),
        });
        self.emit(SessionEvent::ModelFitted {
            snapshot: self.snapshots.len() - 1,
            provenance,
            p: decoder.model.p(),
            lambda: decoder.model.lambda(),
            degenerate: decoder.model.is_degenerate(),
        });
        self.decoder = Some(decoder);
        Ok(())
    }

    /// Fit the first model and open the exploration phase.
    pub fn finish_calibration(&mut self) -> Result<&Decoder> {
        self.require(Phase::Calibration, "finish calibration")?;
        if let Some(missing) = self.stage.movements.iter().find(|m| self.working.class(**m).is_none()) {
            return Err(Error::Protocol(format!("{missing} has not been collected")));
        }
        self.refit()?;
        self.phase = Phase::Exploration;
        self.exploration_start = Some(self.clock_ms);
        self.emit(SessionEvent::ExplorationStarted {
            t_max_ms: self.stage.t_max_ms(),
        });
        Ok(self.decoder.as_ref().expect("refit sets the decoder"))
    }

    /// Replace one movement's samples and refit. Other classes keep their
    /// stored samples untouched. On a failed refit the working set is
    /// restored; the collection time still counts.
    pub fn recalibrate(&mut self, movement: Movement, source: &mut dyn FeatureSource) -> Result<&Decoder> {
        self.require(Phase::Exploration, "recalibrate")?;
        let t_max = self.stage.t_max_ms();
        if self.t_d_ms() >= t_max {
            return Err(Error::BudgetExhausted {
                elapsed_ms: self.t_d_ms(),
                max_ms: t_max,
            });
        }
        let (samples, tags) = self.gather(movement, source)?;
        let n = samples.len();
        self.clock_ms += self.config.refit_cost_ms;
        let previous = self.working.class(movement).map(<[Vec<f64>]>::to_vec);
        self.working.set_class(movement, samples);
        if let Err(e) =
            fit_lda(&self.working, self.config.regularization).and_then(|m| Decoder::new(m, self.config.t_rest))
        {
            match previous {
                Some(prev) => self.working.set_class(movement, prev),
                None => unreachable!("stage movements are collected before exploration"),
            }
            return Err(e);
        }
        self.positions.insert(movement, tags);
        self.recalibrations.push((movement, self.clock_ms));
        self.emit(SessionEvent::Recalibrated {
            movement,
            samples: n,
            nr: self.recalibrations.len(),
        });
        self.refit()?;
        Ok(self.decoder.as_ref().expect("refit sets the decoder"))
    }

    /// Close exploration (early or at the budget) and open the assessment.
    pub fn end_exploration(&mut self) -> Result<ExplorationLog> {
        self.require(Phase::Exploration, "end exploration")?;
        let start = self.exploration_start.expect("exploration has started");
        let end = self.clock_ms.min(start + self.stage.t_max_ms());
        self.exploration_end = Some(end);
        self.phase = Phase::Assessment;
        let log = self.exploration();
        self.log.push(LogRecord {
            t_ms: end,
            event: SessionEvent::ExplorationEnded {
                t_d_ms: log.t_d_ms,
                t_max_ms: log.t_max_ms,
                nr: log.nr(),
                ntt: normalized_training_time(&log)?,
                early: log.t_d_ms < log.t_max_ms,
            },
        });
        Ok(log)
    }

    /// Draw the assessment targets for this stage.
    pub fn begin_assessment(&mut self, flt: &FltConfig, seed: u64) -> Result<&[TargetSpec]> {
        self.require(Phase::Assessment, "begin assessment")?;
        if !self.targets.is_empty() {
            return Err(Error::Protocol("assessment already started".into()));
        }
        self.targets = sample_targets(&self.stage, flt, seed)?;
        self.emit(SessionEvent::AssessmentStarted {
            trials: self.targets.len(),
            seed,
        });
        Ok(&self.targets)
    }

    pub fn record_trial(&mut self, record: TrialRecord) -> Result<()> {
        self.require(Phase::Assessment, "record a trial")?;
        self.clock_ms += record.labels.len() as u64 * record.step_ms as u64;
        let provenance = self
            .decoder
            .as_ref()
            .map(|d| d.model.provenance().to_string())
            .unwrap_or_default();
        self.trials.push(record.clone());
        self.emit(SessionEvent::Trial { provenance, record });
        Ok(())
    }

    /// Close the assessment and log the block metrics.
    pub fn complete(&mut self) -> Result<FltMetrics> {
        self.require(Phase::Assessment, "complete the session")?;
        let metrics = FltMetrics::from_records(&self.trials);
        self.phase = Phase::Complete;
        self.emit(SessionEvent::AssessmentSummary { metrics });
        Ok(metrics)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Well-separated Gaussian clusters, one per movement id.
    pub(crate) fn cluster_source(seed: u64) -> impl FnMut(Movement, u8) -> Option<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        move |m: Movement, _pos: u8| {
            let id = m.id() as usize;
            Some(
                (0..12)
                    .map(|j| if j == id { 8.0 } else { 0.0 } + rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            )
        }
    }

    pub(crate) fn calibrated(index: u32) -> Session {
        let mut s = Session::new(plan_session(index).unwrap(), SessionConfig::default());
        let mut src = cluster_source(1);
        for m in s.stage().movements.clone() {
            s.collect_movement(m, &mut src).unwrap();
        }
        s.finish_calibration().unwrap();
        s
    }

    #[test]
    fn protocol_table() {
        let a = plan_session(3).unwrap();
        assert_eq!(a.movements.len(), 5);
        assert_eq!(a.t_max_ms(), 480_000);
        assert_eq!(a.flt_trials(), 18);
        let b = plan_session(6).unwrap();
        assert_eq!(b.movements.len(), 7);
        assert_eq!(b.t_max_ms(), 720_000);
        assert_eq!(b.flt_trials(), 36);
        let c = plan_session(9).unwrap();
        assert_eq!((c.movements.len(), c.t_max_ms(), c.flt_trials()), (9, 960_000, 54));
        let ten = plan_session(10).unwrap();
        let eleven = plan_session(11).unwrap();
        assert_eq!(ten.stage, eleven.stage);
        assert_eq!(ten.movements, eleven.movements);
        assert!(matches!(plan_session(0), Err(Error::SessionIndex(0))));
        assert!(matches!(plan_session(12), Err(Error::SessionIndex(12))));
    }

    #[test]
    fn collection_counts_and_tags() {
        let mut s = Session::new(plan_session(1).unwrap(), SessionConfig::default());
        let n = s.collect_movement(Movement::Rest, &mut cluster_source(0)).unwrap();
        assert_eq!(n, 200);
        let tags = s.positions(Movement::Rest).unwrap();
        assert_eq!(&tags[..40], &[5; 40]);
        assert_eq!(&tags[160..], &[1; 40]);
        assert_eq!(s.clock_ms(), 10_000);
    }

    #[test]
    fn calibration_recollection_replaces() {
        let mut s = Session::new(plan_session(1).unwrap(), SessionConfig::default());
        s.collect_movement(Movement::Rest, &mut cluster_source(0)).unwrap();
        let before = s.calibration().class(Movement::Rest).unwrap().to_vec();
        s.collect_movement(Movement::Rest, &mut cluster_source(99)).unwrap();
        assert_ne!(s.calibration().class(Movement::Rest).unwrap(), &before[..]);
        assert!(matches!(
            s.log().last().unwrap().event,
            SessionEvent::Collected { replaced: true, .. }
        ));
        assert_eq!(s.nr(), 0);
    }

    #[test]
    fn illegal_transitions() {
        let mut s = Session::new(plan_session(1).unwrap(), SessionConfig::default());
        assert!(matches!(s.end_exploration(), Err(Error::Protocol(_))));
        assert!(matches!(s.finish_calibration(), Err(Error::Protocol(_))));
        assert!(matches!(
            s.collect_movement(Movement::KeyGrasp, &mut cluster_source(0)),
            Err(Error::UnknownMovement { .. })
        ));
        let mut empty = |_: Movement, _: u8| None;
        assert!(matches!(
            s.collect_movement(Movement::Rest, &mut empty),
            Err(Error::EmptyStream(_))
        ));

        let mut s = calibrated(1);
        assert!(matches!(s.finish_calibration(), Err(Error::Protocol(_))));
        s.end_exploration().unwrap();
        assert_eq!(s.phase(), Phase::Assessment);
        assert!(matches!(
            s.collect_movement(Movement::PowerGrasp, &mut cluster_source(0)),
            Err(Error::Protocol(_))
        ));
        assert!(matches!(
            s.recalibrate(Movement::PowerGrasp, &mut cluster_source(0)),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn recalibration_accounting() {
        let mut s = calibrated(2);
        assert_eq!(s.nr(), 0);
        assert_eq!(s.snapshots().len(), 1);
        s.recalibrate(Movement::PowerGrasp, &mut cluster_source(5)).unwrap();
        assert_eq!(s.nr(), 1);
        assert_eq!(s.snapshots().len(), s.nr() + 1);
        // collection time counts toward T_d
        assert_eq!(s.t_d_ms(), 10_000);
    }

    #[test]
    fn recalibration_touches_one_class() {
        let mut s = calibrated(2);
        let before = s.calibration().clone();
        s.recalibrate(Movement::PowerGrasp, &mut cluster_source(77)).unwrap();
        for (m, samples) in before.classes() {
            let after = s.calibration().class(m).unwrap();
            let same = samples
                .iter()
                .flatten()
                .zip(after.iter().flatten())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert_eq!(same, m != Movement::PowerGrasp, "{m}");
        }
    }

    #[test]
    fn budget_is_enforced() {
        let mut s = calibrated(1);
        s.advance(480_000);
        assert_eq!(s.t_d_ms(), 480_000);
        assert!(matches!(
            s.recalibrate(Movement::PowerGrasp, &mut cluster_source(0)),
            Err(Error::BudgetExhausted { .. })
        ));
        s.advance(10_000);
        assert_eq!(s.t_d_ms(), 480_000, "T_d is clamped");
        let log = s.end_exploration().unwrap();
        assert_eq!(normalized_training_time(&log).unwrap(), 1.0);
    }

    #[test]
    fn degenerate_recalibration_is_rolled_back() {
        let mut s = calibrated(1);
        let before = s.calibration().clone();
        let rest_mean: Vec<f64> = {
            let c = s.calibration().class(Movement::Rest).unwrap();
            (0..12)
                .map(|j| c.iter().map(|x| x[j]).sum::<f64>() / c.len() as f64)
                .collect()
        };
        // a class whose mean sits on the rest centroid collapses its axis
        let mut i = 0;
        let mut cloned_rest = |_: Movement, _: u8| {
            i += 1;
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            Some(
                rest_mean
                    .iter()
                    .enumerate()
                    .map(|(j, v)| if j == 0 { v + sign } else { *v })
                    .collect(),
            )
        };
        let err = s.recalibrate(Movement::PowerGrasp, &mut cloned_rest).unwrap_err();
        assert!(matches!(err, Error::DegenerateAxis(Movement::PowerGrasp)), "{err}");
        assert_eq!(s.calibration(), &before);
        assert_eq!(s.nr(), 0);
        assert_eq!(s.snapshots().len(), 1);
    }

    #[test]
    fn ntt_examples() {
        let log = |t_d_ms| ExplorationLog {
            t_d_ms,
            t_max_ms: 480_000,
            recalibrations: vec![],
        };
        assert_eq!(normalized_training_time(&log(0)).unwrap(), 0.0);
        assert_eq!(normalized_training_time(&log(480_000)).unwrap(), 1.0);
        assert_eq!(normalized_training_time(&log(96_000)).unwrap(), 0.2);
        let zero = ExplorationLog {
            t_d_ms: 0,
            t_max_ms: 0,
            recalibrations: vec![],
        };
        assert!(normalized_training_time(&zero).is_err());
    }
}
