use myoreview::flt::FltConfig;
use myoreview::session::{plan_session, read_log_str, write_log_string, Phase, SessionConfig, SessionReport};
use myoreview::signal::FeatureConfig;
use myoreview::signal::{parse_emg, write_emg};
use myoreview::subspace::{decode_model, encode_model, read_model_file, write_model_file};
use myoreview::synth::{
    calibrate_session, class_profiles, gen_signal, run_agent, to_recording, AgentPolicy, SweepParams, SynthConfig,
    SyntheticUser,
};
use myoreview::Movement;
use std::path::Path;

fn user(movements: &[Movement], level: f64, seed: u64) -> SyntheticUser {
    let profiles = class_profiles(movements, level, 8, &SweepParams::default());
    SyntheticUser::new(profiles, SynthConfig::default(), FeatureConfig::default(), seed).unwrap()
}

#[test]
fn full_session_from_raw_signal() {
    let stage = plan_session(5).unwrap();
    let mut user = user(&stage.movements, 6.0, 11);
    let mut session = calibrate_session(&stage, SessionConfig::default(), &mut user).unwrap();
    assert_eq!(session.phase(), Phase::Exploration);
    assert_eq!(session.decoder().unwrap().model.p(), stage.movements.len() - 1);

    session.advance(30_000);
    session.recalibrate(Movement::KeyGrasp, &mut user).unwrap();
    session.advance(20_000);
    let exploration = session.end_exploration().unwrap();
    assert_eq!(exploration.nr(), 1);
    assert_eq!(session.nr(), session.snapshots().len() - 1);

    let flt = FltConfig::default();
    session.begin_assessment(&flt, 3).unwrap();
    let decoder = session.decoder().unwrap().clone();
    let run = run_agent(&AgentPolicy::default(), &stage, &decoder, &flt, &mut user, 3).unwrap();
    assert_eq!(run.records.len(), stage.flt_trials());
    for record in run.records {
        session.record_trial(record).unwrap();
    }
    let metrics = session.complete().unwrap();
    assert!(metrics.completion_rate >= 0.8, "{metrics:?}");

    // The log alone reproduces the reported numbers.
    let text = write_log_string(session.log());
    let report = SessionReport::from_log(&read_log_str(&text, Path::new("session.log")).unwrap()).unwrap();
    assert!(report.is_consistent());
    assert_eq!(report.nr, 1);
    assert_eq!(report.metrics.unwrap().completion_rate, metrics.completion_rate);
}

#[test]
fn recording_and_model_round_trip() {
    let stage = plan_session(1).unwrap();
    let profiles = class_profiles(&stage.movements, 4.0, 8, &SweepParams::default());
    let synth = SynthConfig::default();
    let samples = gen_signal(&profiles[1], 2_000.0, 5, &synth).unwrap();
    let rec = to_recording(&samples, &synth);
    let back = parse_emg(&write_emg(&rec), Path::new("x.emg")).unwrap();
    assert_eq!(back, rec);

    let mut user = user(&stage.movements, 4.0, 2);
    let session = calibrate_session(&stage, SessionConfig::default(), &mut user).unwrap();
    let model = &session.decoder().unwrap().model;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    write_model_file(model, &path).unwrap();
    let loaded = read_model_file(&path).unwrap();
    assert_eq!(encode_model(&loaded), encode_model(model));
    assert!(decode_model(&[1, 2, 3], Path::new("bad.bin")).is_err());
}
