//! Implementations behind the `myoreview` subcommands. Each returns the
//! text to print.

use std::fmt::Write as _;
use std::path::Path;

use myoreview::classifier::Decoder;
use myoreview::flt::{sample_targets, FltMetrics, Trial, TrialRecord, TrialStatus};
use myoreview::session::{read_log, ProtocolStage, SessionReport};
use myoreview::signal::{window_stream, EmgRecording, FeatureExtractor};
use myoreview::subspace::read_model_file;
use myoreview::synth::{run_sweep, LevelResult, SweepConfig};

use crate::engine::EngineConfig;
use crate::error::{GatewayError, Result};
use crate::replay::{replay, Replay};
use crate::script::Script;

pub fn metrics_table(m: &FltMetrics) -> String {
    let cell = |v: Option<f64>, prec: usize| v.map(|x| format!("{x:.prec$}")).unwrap_or_else(|| "-".into());
    format!(
        "{:<8}{:<11}{:<8}{:<8}{:<8}{}\n{:<8}{:<11}{:<8.3}{:<8}{:<8}{}\n",
        "trials",
        "successes",
        "CR",
        "OT",
        "PE",
        "TP",
        m.trials,
        m.successes,
        m.completion_rate,
        cell(m.overshoot, 3),
        cell(m.path_efficiency, 2),
        cell(m.throughput, 3),
    )
}

/// Replay and fail if any scripted command was rejected.
pub fn strict_replay(recording: &EmgRecording, script: &Script, config: &EngineConfig) -> Result<Replay> {
    let r = replay(recording, script, config)?;
    if let Some(e) = r.errors.first() {
        return Err(GatewayError::Protocol(format!(
            "{} command(s) rejected; first: {}{}",
            r.errors.len(),
            e.command.as_deref().map(|c| format!("{c}: ")).unwrap_or_default(),
            e.message
        )));
    }
    Ok(r)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| GatewayError::io(path, e))
}

pub struct ReplayOutputs<'a> {
    pub log: Option<&'a Path>,
    pub transcript: Option<&'a Path>,
}

pub fn write_outputs(r: &Replay, out: &ReplayOutputs) -> Result<()> {
    if let Some(p) = out.log {
        write(p, &r.log_text())?;
    }
    if let Some(p) = out.transcript {
        write(p, &r.transcript_text())?;
    }
    Ok(())
}

fn session_of(r: &Replay) -> Result<&myoreview::session::Session> {
    r.engine
        .session()
        .ok_or_else(|| GatewayError::Protocol("script never starts a session".into()))
}

pub fn calibrate(r: &Replay, model_out: &Path) -> Result<String> {
    let s = session_of(r)?;
    let snap = s
        .snapshots()
        .first()
        .ok_or_else(|| GatewayError::Protocol("calibration did not finish".into()))?;
    myoreview::subspace::write_model_file(&snap.model, model_out)?;
    Ok(format!(
        "calibrated session {} ({} classes, p = {}, lambda = {:.3e})\nmodel {} written to {}\n",
        s.stage().session_index,
        snap.model.classes().len(),
        snap.model.p(),
        snap.model.lambda(),
        snap.model.provenance(),
        model_out.display()
    ))
}

pub fn explore(r: &Replay, model_out: Option<&Path>) -> Result<String> {
    let s = session_of(r)?;
    let e = s.exploration();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "session {}: NR = {}, T_d = {} ms, T_max = {} ms, NTT = {:.3}",
        s.stage().session_index,
        e.nr(),
        e.t_d_ms,
        e.t_max_ms,
        myoreview::session::normalized_training_time(&e)?
    );
    for (m, t) in &e.recalibrations {
        let _ = writeln!(out, "  recalibrated {m} at {t} ms");
    }
    if let Some(path) = model_out {
        let snap = s
            .snapshots()
            .last()
            .ok_or_else(|| GatewayError::Protocol("no model was fitted".into()))?;
        myoreview::subspace::write_model_file(&snap.model, path)?;
        let _ = writeln!(out, "model {} written to {}", snap.model.provenance(), path.display());
    }
    Ok(out)
}

pub fn assess_replay(r: &Replay) -> Result<String> {
    let s = session_of(r)?;
    if s.trials().is_empty() {
        return Err(GatewayError::Protocol("script runs no FLT trials".into()));
    }
    Ok(metrics_table(&FltMetrics::from_records(s.trials())))
}

/// Trials driven back to back by a fixed model over a recorded stream.
/// Returns finished trials and whether a trial was cut off by the end of
/// the stream.
pub fn assess_with_model(
    recording: &EmgRecording,
    decoder: &Decoder,
    stage: &ProtocolStage,
    config: &EngineConfig,
) -> Result<(Vec<TrialRecord>, bool)> {
    let targets = sample_targets(stage, &config.flt, config.seed)?;
    let windows = window_stream(&recording.samples, recording.rate_hz, config.window)?;
    let mut extractor = FeatureExtractor::new(config.features);
    let mut records = Vec::new();
    let mut targets = targets.into_iter();
    let mut trial = targets.next().map(|t| Trial::new(t, &config.flt));
    for w in &windows {
        let Some(active) = trial.as_mut() else { break };
        let label = decoder.decide(&extractor.extract(w).values)?.label;
        if let TrialStatus::Finished(_) = active.step(label)? {
            records.push(trial.take().expect("active").finish());
            trial = targets.next().map(|t| Trial::new(t, &config.flt));
        }
    }
    let cut = trial.is_some_and(|t| t.steps() > 0);
    Ok((records, cut))
}

pub fn assess_model(recording: &EmgRecording, model: &Path, session: u32, config: &EngineConfig) -> Result<String> {
    let stage = myoreview::session::plan_session(session)?;
    let decoder = Decoder::new(read_model_file(model)?, config.session.t_rest)?;
    let (records, cut) = assess_with_model(recording, &decoder, &stage, config)?;
    let mut out = metrics_table(&FltMetrics::from_records(&records));
    if cut {
        out.push_str("(last trial cut off by the end of the recording; not counted)\n");
    }
    Ok(out)
}

pub fn simulate_sweep(path: &Path) -> Result<String> {
    let config = SweepConfig::read(path)?;
    let levels = run_sweep(&config)?;
    let mut out = format!("{}\n", LevelResult::csv_header());
    for l in &levels {
        out.push_str(&l.csv_row());
        out.push('\n');
    }
    Ok(out)
}

/// Report text and whether recomputed figures match the logged ones.
pub fn report(log: &Path, csv: bool) -> Result<(String, bool)> {
    let records = read_log(log)?;
    let report = SessionReport::from_log(&records)?;
    let text = if csv {
        format!("{}\n{}\n", SessionReport::csv_header(), report.csv_row())
    } else {
        report.render()
    };
    Ok((text, report.is_consistent()))
}
