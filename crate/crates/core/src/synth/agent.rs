use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ClassProfile, SignalGenerator, SynthConfig};
use crate::classifier::Decoder;
use crate::error::{Error, Result};
use crate::flt::{
    sample_targets, CursorConfig, FltConfig, FltMetrics, Handedness, TargetSpec, Trial, TrialRecord, TrialStatus,
};
use crate::movement::Movement;
use crate::session::{FeatureSource, ProtocolStage, Session, SessionConfig};
use crate::signal::{FeatureConfig, FeatureExtractor, WindowSpec, Windower};

/// How the simulated user chooses an intended movement each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentPolicy {
    /// The agent acts on the cursor as it was this many steps ago.
    pub reaction_delay_steps: usize,
    /// Release a movement this many steps of travel before the band edge,
    /// allowing for reaction delay and window latency.
    pub lead_steps: f64,
    /// Contraction strength, relative to calibration, for a correction
    /// that starts within `lead_steps` of travel of the band.
    pub correction_effort: f64,
    /// Probability of intending a wrong movement on a step.
    pub error_rate: f64,
    /// Rest steps between trials.
    pub inter_trial_steps: usize,
}

impl Default for AgentPolicy {
    fn default() -> Self {
        AgentPolicy {
            reaction_delay_steps: 1,
            lead_steps: 4.0,
            correction_effort: 0.3,
            error_rate: 0.0,
            inter_trial_steps: 20,
        }
    }
}

impl AgentPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.error_rate) {
            return Err(Error::InvalidArgument(format!(
                "error rate {} outside [0, 1]",
                self.error_rate
            )));
        }
        if !(self.correction_effort > 0.0 && self.correction_effort <= 1.0) {
            return Err(Error::InvalidArgument("correction effort must be in (0, 1]".into()));
        }
        if !(self.lead_steps >= 0.0) {
            return Err(Error::InvalidArgument("lead steps must be ≥ 0".into()));
        }
        Ok(())
    }

    /// Intended movement given the cursor as currently observed (`seen`),
    /// as observed one step earlier, and the previous intent.
    ///
    /// Both dimensions in band: Rest. Otherwise the dimension with the
    /// larger normalized error is driven. A movement already under way is
    /// released `lead_steps` of travel before the band edge; after a
    /// release the agent waits for the cursor to settle before correcting.
    pub fn intent(
        &self,
        spec: &TargetSpec,
        seen: CursorConfig,
        before: CursorConfig,
        last: Movement,
        config: &FltConfig,
    ) -> (Movement, f64) {
        let dt = config.step_seconds();
        let hw = spec.half_width;
        let er = spec.target.r - seen.r;
        let ephi = spec.target.phi - seen.phi;
        if er.abs() <= hw && ephi.abs() <= hw {
            return (Movement::Rest, 1.0);
        }
        if last == Movement::Rest && seen != before {
            return (Movement::Rest, 1.0);
        }
        let (movement, error, rate) = if er.abs() / hw >= ephi.abs() / hw {
            let m = if er < 0.0 { spec.gesture } else { Movement::HandOpen };
            (m, er.abs(), config.aperture_rate)
        } else {
            let decrease = ephi < 0.0;
            let m = match (config.handedness, decrease) {
                (Handedness::Right, true) | (Handedness::Left, false) => Movement::WristPronate,
                _ => Movement::WristSupinate,
            };
            (m, ephi.abs(), config.orientation_rate)
        };
        let near = error <= hw + self.lead_steps * rate * dt;
        match (last == movement, near) {
            (true, true) => (Movement::Rest, 1.0),
            (false, true) => (movement, self.correction_effort),
            _ => (movement, 1.0),
        }
    }
}

/// Per-class diagonal Gaussian over feature vectors, estimated from the
/// signal-level generator. Used by the feature-level shortcut.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureModel {
    classes: BTreeMap<Movement, (Vec<f64>, Vec<f64>)>,
}

impl FeatureModel {
    pub fn estimate(
        profiles: &[ClassProfile],
        synth: &SynthConfig,
        features: &FeatureConfig,
        windows: usize,
        seed: u64,
    ) -> Result<Self> {
        if windows < 2 {
            return Err(Error::InvalidArgument("need at least 2 windows per class".into()));
        }
        let mut classes = BTreeMap::new();
        for (i, profile) in profiles.iter().enumerate() {
            let mut user =
                SyntheticUser::new(profiles.to_vec(), synth.clone(), *features, seed.wrapping_add(i as u64))?;
            user.settle(profile.movement, 5)?;
            let xs: Vec<Vec<f64>> = (0..windows)
                .map(|_| user.step(profile.movement, 5))
                .collect::<Result<_>>()?;
            let d = xs[0].len();
            let n = xs.len() as f64;
            let mean: Vec<f64> = (0..d).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n).collect();
            let std: Vec<f64> = (0..d)
                .map(|j| (xs.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
                .collect();
            classes.insert(profile.movement, (mean, std));
        }
        Ok(FeatureModel { classes })
    }

    pub fn sample(&self, movement: Movement, rng: &mut impl Rng) -> Option<Vec<f64>> {
        let (mean, std) = self.classes.get(&movement)?;
        Some(
            mean.iter()
                .zip(std)
                .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        )
    }
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
enum Mode {
    Signal {
        generator: SignalGenerator,
        windower: Windower,
        extractor: FeatureExtractor,
        step_len: usize,
        prime_len: usize,
    },
    Features {
        model: FeatureModel,
        rng: ChaCha8Rng,
    },
}

/// A simulated user wearing the synthetic armband: performing a movement
/// yields one feature vector per decision step.
#[derive(Debug, Clone)]
pub struct SyntheticUser {
    profiles: BTreeMap<Movement, ClassProfile>,
    mode: Mode,
    last: Option<(Movement, u8)>,
}

impl SyntheticUser {
    pub fn new(profiles: Vec<ClassProfile>, synth: SynthConfig, features: FeatureConfig, seed: u64) -> Result<Self> {
        let windower = Windower::new(WindowSpec::default(), synth.rate_hz)?;
        let step_len = windower.step_len();
        let prime_len = windower.window_len() - step_len;
        Ok(SyntheticUser {
            profiles: profiles.into_iter().map(|p| (p.movement, p)).collect(),
            mode: Mode::Signal {
                generator: SignalGenerator::new(synth, seed),
                windower,
                extractor: FeatureExtractor::new(features),
                step_len,
                prime_len,
            },
            last: None,
        })
    }

    /// Feature-level shortcut: skips signal synthesis and draws features
    /// from `model` directly. There is no window latency in this mode.
    pub fn feature_level(profiles: Vec<ClassProfile>, model: FeatureModel, seed: u64) -> Self {
        SyntheticUser {
            profiles: profiles.into_iter().map(|p| (p.movement, p)).collect(),
            mode: Mode::Features {
                model,
                rng: ChaCha8Rng::seed_from_u64(seed),
            },
            last: None,
        }
    }

    fn profile(&self, movement: Movement) -> Result<&ClassProfile> {
        self.profiles.get(&movement).ok_or(Error::MissingClass(movement))
    }

    /// Hold `movement` long enough that the next window contains nothing
    /// else.
    pub fn settle(&mut self, movement: Movement, position: u8) -> Result<()> {
        let profile = self.profile(movement)?.clone();
        if let Mode::Signal {
            generator,
            windower,
            prime_len,
            ..
        } = &mut self.mode
        {
            for s in generator.generate(&profile, position, *prime_len)? {
                windower.push(s)?;
            }
        }
        self.last = Some((movement, position));
        Ok(())
    }

    /// Perform `movement` for one decision step and return the features of
    /// the newest window.
    pub fn step(&mut self, movement: Movement, position: u8) -> Result<Vec<f64>> {
        self.step_with_effort(movement, position, 1.0)
    }

    /// As [`step`](Self::step), with the contraction above the Rest level
    /// scaled by `effort`.
    pub fn step_with_effort(&mut self, movement: Movement, position: u8, effort: f64) -> Result<Vec<f64>> {
        let mut profile = self.profile(movement)?.clone();
        if let Some(rest) = self.profiles.get(&Movement::Rest) {
            profile = profile.with_effort(rest, effort);
        }
        self.last = Some((movement, position));
        match &mut self.mode {
            Mode::Signal {
                generator,
                windower,
                extractor,
                step_len,
                ..
            } => {
                let mut window = None;
                for s in generator.generate(&profile, position, *step_len)? {
                    if let Some(w) = windower.push(s)? {
                        window = Some(w);
                    }
                }
                match window {
                    Some(w) => Ok(extractor.extract(&w).values),
                    None => {
                        // Stream not yet primed: hold the movement until it is.
                        self.settle(movement, position)?;
                        self.step_with_effort(movement, position, effort)
                    }
                }
            }
            Mode::Features { model, rng } => model.sample(movement, rng).ok_or(Error::MissingClass(movement)),
        }
    }
}

impl FeatureSource for SyntheticUser {
    fn next_features(&mut self, movement: Movement, position: u8) -> Option<Vec<f64>> {
        if self.last != Some((movement, position)) {
            self.settle(movement, position).ok()?;
        }
        self.step(movement, position).ok()
    }
}

/// Build a session for `stage` and collect every movement from `user`.
pub fn calibrate_session(stage: &ProtocolStage, config: SessionConfig, user: &mut SyntheticUser) -> Result<Session> {
    let mut session = Session::new(stage.clone(), config);
    for &m in &stage.movements {
        session.collect_movement(m, user)?;
    }
    session.finish_calibration()?;
    Ok(session)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRun {
    pub records: Vec<TrialRecord>,
    pub metrics: FltMetrics,
    /// Fraction of trial decisions equal to the agent's intent.
    pub intent_agreement: f64,
}

/// Run one FLT block with the simulated user in the loop: each step the
/// agent picks an intent, the user performs it, and the decoder's label
/// moves the cursor.
pub fn run_agent(
    policy: &AgentPolicy,
    stage: &ProtocolStage,
    decoder: &Decoder,
    flt: &FltConfig,
    user: &mut SyntheticUser,
    seed: u64,
) -> Result<AgentRun> {
    policy.validate()?;
    let targets = sample_targets(stage, flt, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a6e7);
    let mut records = Vec::with_capacity(targets.len());
    let (mut agree, mut total) = (0usize, 0usize);

    for spec in targets {
        let position = spec.location.board_position();
        for _ in 0..policy.inter_trial_steps {
            user.step(Movement::Rest, position)?;
        }
        let mut trial = Trial::new(spec, flt);
        let mut seen = vec![trial.cursor()];
        let mut last = Movement::Rest;
        loop {
            let at = seen.len().saturating_sub(1 + policy.reaction_delay_steps);
            let (mut intent, effort) = policy.intent(&spec, seen[at], seen[at.saturating_sub(1)], last, flt);
            if policy.error_rate > 0.0 && rng.random_bool(policy.error_rate) {
                let wrong: Vec<Movement> = stage.movements.iter().copied().filter(|m| *m != intent).collect();
                intent = *wrong.choose(&mut rng).unwrap_or(&intent);
            }
            last = intent;
            let features = user.step_with_effort(intent, position, effort)?;
            let label = decoder.decide(&features)?.label;
            agree += usize::from(label == intent);
            total += 1;
            let status = trial.step(label)?;
            seen.push(trial.cursor());
            if matches!(status, TrialStatus::Finished(_)) {
                break;
            }
        }
        records.push(trial.finish());
    }
    Ok(AgentRun {
        metrics: FltMetrics::from_records(&records),
        intent_agreement: if total == 0 { 0.0 } else { agree as f64 / total as f64 },
        records,
    })
}

/// Fraction of `holdout` vectors the decoder labels with their own class.
pub fn holdout_accuracy(decoder: &Decoder, holdout: &[(Movement, Vec<f64>)]) -> Result<f64> {
    if holdout.is_empty() {
        return Err(Error::InvalidArgument("empty holdout set".into()));
    }
    let mut correct = 0;
    for (m, x) in holdout {
        correct += usize::from(decoder.decide(x)?.label == *m);
    }
    Ok(correct as f64 / holdout.len() as f64)
}
