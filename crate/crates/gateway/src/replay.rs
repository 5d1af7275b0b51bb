//! Offline drive of an [`Engine`] from a recorded EMG stream and a command
//! script.

use myoreview::signal::EmgRecording;

use crate::engine::{Engine, EngineConfig};
use crate::error::Result;
use crate::script::Script;
use crate::wire::{ErrorPayload, Sequencer, ServerMessage};

/// Output of one driver step.
#[derive(Debug, Default)]
pub struct StepOutput {
    pub broadcast: Vec<ServerMessage>,
    /// Rejections of scripted commands.
    pub errors: Vec<ErrorPayload>,
}

/// Interleaves scripted commands with samples: a command at `t_ms` runs
/// before the first sample at or after `t_ms`; commands after the last
/// sample run at the end.
#[derive(Debug, Clone)]
pub struct Driver {
    recording: EmgRecording,
    script: Script,
    next_sample: usize,
    next_entry: usize,
}

impl Driver {
    pub fn new(recording: EmgRecording, script: Script) -> Self {
        Driver {
            recording,
            script,
            next_sample: 0,
            next_entry: 0,
        }
    }

    pub fn is_done(&self) -> bool {
        self.next_sample >= self.recording.samples.len() && self.next_entry >= self.script.entries.len()
    }

    pub fn samples_remaining(&self) -> usize {
        self.recording.samples.len() - self.next_sample
    }

    fn run_commands(&mut self, engine: &mut Engine, until: Option<f64>, out: &mut StepOutput) {
        while let Some(entry) = self.script.entries.get(self.next_entry) {
            if until.is_some_and(|t| entry.t_ms as f64 > t) {
                break;
            }
            match engine.command(&entry.command) {
                Ok(msgs) => out.broadcast.extend(msgs),
                Err(e) => out.errors.push(e),
            }
            self.next_entry += 1;
        }
    }

    /// Advance by one sample, running any commands due before it.
    pub fn step(&mut self, engine: &mut Engine) -> Result<StepOutput> {
        let mut out = StepOutput::default();
        match self.recording.samples.get(self.next_sample).cloned() {
            Some(sample) => {
                self.run_commands(engine, Some(sample.timestamp_ms), &mut out);
                out.broadcast.extend(engine.push_sample(sample)?);
                self.next_sample += 1;
            }
            None => self.run_commands(engine, None, &mut out),
        }
        Ok(out)
    }
}

/// Engine settings adjusted to the recording's channel count and rate.
pub fn config_for(recording: &EmgRecording, base: &EngineConfig) -> EngineConfig {
    EngineConfig {
        rate_hz: recording.rate_hz,
        channels: recording.channels,
        ..base.clone()
    }
}

#[derive(Debug)]
pub struct Replay {
    pub engine: Engine,
    /// Encoded observer transcript: the initial snapshot, then every
    /// broadcast message, one per line.
    pub transcript: Vec<String>,
    pub errors: Vec<ErrorPayload>,
}

impl Replay {
    pub fn transcript_text(&self) -> String {
        let mut s = self.transcript.join("\n");
        s.push('\n');
        s
    }

    pub fn log_text(&self) -> String {
        self.engine
            .session()
            .map(|s| myoreview::session::write_log_string(s.log()))
            .unwrap_or_default()
    }
}

pub fn replay(recording: &EmgRecording, script: &Script, config: &EngineConfig) -> Result<Replay> {
    let mut engine = Engine::new(config_for(recording, config))?;
    let mut seq = Sequencer::new();
    let mut transcript: Vec<String> = engine.snapshot().iter().map(|m| seq.encode(m)).collect();
    let mut errors = Vec::new();
    let mut driver = Driver::new(recording.clone(), script.clone());
    while !driver.is_done() {
        let out = driver.step(&mut engine)?;
        transcript.extend(out.broadcast.iter().map(|m| seq.encode(m)));
        errors.extend(out.errors);
    }
    Ok(Replay {
        engine,
        transcript,
        errors,
    })
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("config", self.config())
            .finish_non_exhaustive()
    }
}
