//! Record a synthetic session: a simulated user performs calibration,
//! exploration with recalibrations, and an FLT block against a live
//! engine. The EMG and the timed commands are captured so that a replay
//! reproduces the session exactly.

use serde::{Deserialize, Serialize};

use myoreview::flt::{CursorConfig, TrialStatus};
use myoreview::session::{plan_session, Phase};
use myoreview::signal::EmgRecording;
use myoreview::synth::{class_profiles, AgentPolicy, ClassProfile, SignalGenerator, SweepParams, SynthConfig};
use myoreview::Movement;

use crate::engine::{Engine, EngineConfig};
use crate::error::{GatewayError, Result};
use crate::script::Script;
use crate::wire::{ClientCommand, ServerMessage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecordPlan {
    pub session_index: u32,
    pub seed: u64,
    /// Class spacing in units of `params.sigma`.
    pub level: f64,
    pub params: SweepParams,
    pub synth: SynthConfig,
    /// Intent errors are not simulated here; `error_rate` is ignored.
    pub policy: AgentPolicy,
    /// Movements recalibrated during exploration, in order.
    pub recalibrations: Vec<Movement>,
    /// Free use before each recalibration and before ending exploration.
    pub explore_ms: u64,
    /// Trials to run; `None` runs the whole block.
    pub trials: Option<usize>,
}

impl Default for RecordPlan {
    fn default() -> Self {
        RecordPlan {
            session_index: 1,
            seed: 1,
            level: 6.0,
            params: SweepParams::default(),
            synth: SynthConfig::default(),
            policy: AgentPolicy::default(),
            recalibrations: vec![Movement::PowerGrasp],
            explore_ms: 5_000,
            trials: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Recorded {
    pub recording: EmgRecording,
    pub script: Script,
    /// Commands rejected while recording; empty for a valid plan.
    pub rejected: Vec<String>,
}

struct Recorder {
    engine: Engine,
    generator: SignalGenerator,
    profiles: Vec<ClassProfile>,
    recording: EmgRecording,
    script: Script,
    rejected: Vec<String>,
    step_len: usize,
    prime_len: usize,
    last_flt: Option<(CursorConfig, TrialStatus)>,
}

impl Recorder {
    fn now_ms(&self) -> u64 {
        (self.recording.samples.len() as f64 * 1000.0 / self.recording.rate_hz).round() as u64
    }

    fn command(&mut self, command: ClientCommand) {
        self.script.push(self.now_ms(), command.clone());
        match self.engine.command(&command) {
            Ok(msgs) => self.observe(&msgs),
            Err(e) => self.rejected.push(e.message),
        }
    }

    fn observe(&mut self, msgs: &[ServerMessage]) {
        for m in msgs {
            if let ServerMessage::FltState(f) = m {
                self.last_flt = Some((f.cursor, f.status));
            }
        }
    }

    fn profile(&self, movement: Movement, effort: f64) -> Result<ClassProfile> {
        let find = |m: Movement| {
            self.profiles
                .iter()
                .find(|p| p.movement == m)
                .ok_or(myoreview::Error::MissingClass(m))
        };
        Ok(find(movement)?.with_effort(find(Movement::Rest)?, effort))
    }

    fn perform(&mut self, movement: Movement, position: u8, effort: f64, samples: usize) -> Result<()> {
        let profile = self.profile(movement, effort)?;
        for s in self.generator.generate(&profile, position, samples)? {
            self.recording.push(s.channels.clone());
            let msgs = self.engine.push_sample(s)?;
            self.observe(&msgs);
        }
        Ok(())
    }

    fn collect(&mut self, movement: Movement, positions: &[u8], per_position: usize, recal: bool) -> Result<()> {
        self.perform(movement, positions[0], 1.0, self.prime_len)?;
        self.command(if recal {
            ClientCommand::Recalibrate {
                movement: movement.to_string(),
            }
        } else {
            ClientCommand::Collect {
                movement: movement.to_string(),
            }
        });
        for &p in positions {
            self.perform(movement, p, 1.0, per_position * self.step_len)?;
        }
        Ok(())
    }

    fn explore(&mut self, movements: &[Movement], ms: u64) -> Result<()> {
        let steps = (ms as usize) / 50;
        for i in 0..steps {
            let m = movements[(i / 20) % movements.len()];
            self.perform(m, 5, 1.0, self.step_len)?;
        }
        Ok(())
    }
}

/// Run the plan and capture its inputs.
pub fn record_session(plan: &RecordPlan, config: &EngineConfig) -> Result<Recorded> {
    let stage = plan_session(plan.session_index)?;
    let synth = SynthConfig {
        rate_hz: config.rate_hz,
        channels: config.channels,
        ..plan.synth.clone()
    };
    let engine = Engine::new(config.clone())?;
    let (window, step) = config.window.sample_counts(config.rate_hz)?;
    let mut r = Recorder {
        engine,
        generator: SignalGenerator::new(synth.clone(), plan.seed),
        profiles: class_profiles(&stage.movements, plan.level, synth.channels, &plan.params),
        recording: EmgRecording::new(synth.channels, synth.rate_hz),
        script: Script::new(),
        rejected: Vec::new(),
        step_len: step,
        prime_len: window - step,
        last_flt: None,
    };
    let positions = config.session.collection.positions.clone();
    let per_position = config.session.samples_per_position();

    r.command(ClientCommand::StartCalibration {
        session: plan.session_index,
        seed: None,
    });
    for &m in &stage.movements {
        r.collect(m, &positions, per_position, false)?;
    }
    for &m in &plan.recalibrations {
        r.explore(&stage.movements, plan.explore_ms)?;
        r.collect(m, &positions, per_position, true)?;
    }
    r.explore(&stage.movements, plan.explore_ms)?;
    r.perform(Movement::Rest, 5, 1.0, r.prime_len)?;
    if r.engine.session().map(|s| s.phase()) == Some(Phase::Exploration) {
        r.command(ClientCommand::EndExploration {});
    }

    let total = plan.trials.unwrap_or(stage.flt_trials()).min(stage.flt_trials());
    let flt = config.flt.clone();
    for _ in 0..total {
        r.perform(Movement::Rest, 5, 1.0, plan.policy.inter_trial_steps * r.step_len)?;
        r.last_flt = None;
        r.command(ClientCommand::StartTrial {});
        let Some(spec) = r
            .engine
            .session()
            .and_then(|s| s.targets().get(s.trials().len()).copied())
        else {
            break;
        };
        let position = spec.location.board_position();
        let mut seen = vec![flt.initial];
        let mut last = Movement::Rest;
        loop {
            let at = seen.len().saturating_sub(1 + plan.policy.reaction_delay_steps);
            let (intent, effort) = plan
                .policy
                .intent(&spec, seen[at], seen[at.saturating_sub(1)], last, &flt);
            last = intent;
            r.perform(intent, position, effort, r.step_len)?;
            match r.last_flt {
                Some((_, TrialStatus::Finished(_))) => break,
                Some((cursor, _)) => seen.push(cursor),
                None => return Err(GatewayError::Protocol("trial produced no state".into())),
            }
        }
    }
    Ok(Recorded {
        recording: r.recording,
        script: r.script,
        rejected: r.rejected,
    })
}
