use myoreview::session::Phase;
use myoreview_gateway::record::{record_session, RecordPlan};
use myoreview_gateway::replay::replay;
use myoreview_gateway::EngineConfig;

#[test]
fn recorded_session_replays_identically() {
    let plan = RecordPlan {
        trials: Some(4),
        ..RecordPlan::default()
    };
    let config = EngineConfig::default();
    let rec = record_session(&plan, &config).unwrap();
    assert!(rec.rejected.is_empty(), "{:?}", rec.rejected);
    let a = replay(&rec.recording, &rec.script, &config).unwrap();
    let b = replay(&rec.recording, &rec.script, &config).unwrap();
    assert!(a.errors.is_empty(), "{:?}", a.errors);
    assert_eq!(a.transcript_text(), b.transcript_text());
    assert_eq!(a.log_text(), b.log_text());
    let s = a.engine.session().unwrap();
    assert_eq!(s.phase(), Phase::Assessment);
    assert_eq!(s.trials().len(), 4);
    assert_eq!(s.nr(), 1);
    println!(
        "{} messages, {} samples, successes {}",
        a.transcript.len(),
        rec.recording.samples.len(),
        s.trials().iter().filter(|t| t.is_success()).count()
    );
}
