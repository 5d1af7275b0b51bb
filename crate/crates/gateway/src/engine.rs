//! Deterministic live engine: EMG samples and commands in, wire messages
//! out. Collection, recalibration and FLT trials consume the live window
//! stream at the 50 ms decision cadence.

use std::path::Path;

use serde::{Deserialize, Serialize};

use myoreview::classifier::Decision;
use myoreview::flt::{FltConfig, Trial, TrialStatus};
use myoreview::session::{normalized_training_time, plan_session, Phase, Session, SessionConfig};
use myoreview::signal::{EmgSample, FeatureConfig, FeatureExtractor, WindowSpec, Windower};
use myoreview::Movement;

use crate::error::{GatewayError, Result};
use crate::wire::{
    ClientCommand, ClusterView, Clusters, Collecting, Cursor3d, DecisionView, ErrorPayload, FltState, ServerMessage,
    SessionState,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub rate_hz: f64,
    pub channels: usize,
    pub window: WindowSpec,
    pub features: FeatureConfig,
    pub session: SessionConfig,
    pub flt: FltConfig,
    /// Seed for assessment targets unless `start_calibration` gives one.
    pub seed: u64,
    /// Calibration points per class in a `clusters` message.
    pub max_cluster_points: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            rate_hz: 200.0,
            channels: 8,
            window: WindowSpec::default(),
            features: FeatureConfig::default(),
            session: SessionConfig::default(),
            flt: FltConfig::default(),
            seed: 0,
            max_cluster_points: 200,
        }
    }
}

impl EngineConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| GatewayError::Parse {
            path: path.to_path_buf(),
            line: e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(0),
            message: e.message().to_string(),
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GatewayError::io(path, e))?;
        Self::from_toml(&text, path)
    }
}

#[derive(Debug, Clone)]
struct Pending {
    movement: Movement,
    features: Vec<Vec<f64>>,
    required: usize,
}

#[derive(Debug, Clone)]
struct ActiveTrial {
    index: usize,
    trial: Trial,
}

type CommandResult = std::result::Result<Vec<ServerMessage>, ErrorPayload>;

fn reject(command: &ClientCommand, message: impl Into<String>) -> ErrorPayload {
    ErrorPayload {
        message: message.into(),
        command: Some(command.kind().to_string()),
        movement: None,
    }
}

pub struct Engine {
    config: EngineConfig,
    windower: Windower,
    extractor: FeatureExtractor,
    session: Option<Session>,
    seed: u64,
    pending: Option<Pending>,
    trial: Option<ActiveTrial>,
    next_trial: usize,
    clusters: Option<Clusters>,
    last_decision: Option<Decision>,
    windows: u64,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.flt.validate()?;
        let windower = Windower::new(config.window, config.rate_hz)?;
        Ok(Engine {
            extractor: FeatureExtractor::new(config.features),
            seed: config.seed,
            windower,
            config,
            session: None,
            pending: None,
            trial: None,
            next_trial: 0,
            clusters: None,
            last_decision: None,
            windows: 0,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn session(&self) -> Option<&Session> {
        self.session.as_ref()
    }

    pub fn last_decision(&self) -> Option<&Decision> {
        self.last_decision.as_ref()
    }

    /// State a newly connected subscriber needs before incremental
    /// messages: the current clusters, session state and trial state.
    pub fn snapshot(&self) -> Vec<ServerMessage> {
        let mut out = Vec::new();
        if let Some(c) = &self.clusters {
            out.push(ServerMessage::Clusters(c.clone()));
        }
        out.push(ServerMessage::SessionState(self.session_state()));
        if let Some(active) = &self.trial {
            out.push(ServerMessage::FltState(self.flt_state(active)));
        }
        out
    }

    pub fn session_state(&self) -> SessionState {
        let Some(s) = &self.session else {
            return SessionState {
                phase: None,
                session_index: None,
                stage: None,
                movements: Vec::new(),
                collected: Vec::new(),
                clock_ms: 0,
                t_d_ms: 0,
                t_max_ms: 0,
                nr: 0,
                ntt: None,
                snapshots: 0,
                collecting: None,
                trials_done: 0,
                trials_total: 0,
                metrics: None,
            };
        };
        let exploration = s.exploration();
        let per_position = self.config.session.samples_per_position().max(1);
        let positions = &self.config.session.collection.positions;
        SessionState {
            phase: Some(s.phase()),
            session_index: Some(s.stage().session_index),
            stage: Some(s.stage().stage),
            movements: s.stage().movements.clone(),
            collected: s.calibration().movements().collect(),
            clock_ms: s.clock_ms(),
            t_d_ms: exploration.t_d_ms,
            t_max_ms: exploration.t_max_ms,
            nr: exploration.nr(),
            ntt: normalized_training_time(&exploration).ok(),
            snapshots: s.snapshots().len(),
            collecting: self.pending.as_ref().map(|p| Collecting {
                movement: p.movement,
                collected: p.features.len(),
                required: p.required,
                position: positions
                    .get((p.features.len() / per_position).min(positions.len().saturating_sub(1)))
                    .copied()
                    .unwrap_or(0),
            }),
            trials_done: s.trials().len(),
            trials_total: s.stage().flt_trials(),
            metrics: (s.phase() == Phase::Complete).then(|| myoreview::flt::FltMetrics::from_records(s.trials())),
        }
    }

    fn flt_state(&self, active: &ActiveTrial) -> FltState {
        let t = &active.trial;
        let spec = t.spec();
        let cursor = t.cursor();
        FltState {
            trial: active.index,
            trials_total: self.session.as_ref().map_or(0, |s| s.targets().len()),
            prompt: spec.gesture,
            target: spec.target,
            half_width: spec.half_width,
            cursor,
            rendered_phi: cursor.rendered_phi(),
            status: t.status(),
            dwell_steps: t.dwell_steps(),
            dwell_required: self.config.flt.dwell_steps(),
            elapsed_ms: t.elapsed_ms(),
            time_limit_ms: self.config.flt.time_limit_ms,
            outcome: match t.status() {
                TrialStatus::Finished(o) => Some(o),
                _ => None,
            },
        }
    }

    fn build_clusters(&self) -> Option<Clusters> {
        let s = self.session.as_ref()?;
        let snap = s.snapshots().last()?;
        let model = &snap.model;
        let centroids = model.reviewer_centroids().ok()?;
        let classes = centroids
            .into_iter()
            .map(|(movement, centroid)| {
                let samples = snap.calibration.class(movement).unwrap_or(&[]);
                let stride = samples.len().div_ceil(self.config.max_cluster_points.max(1)).max(1);
                let points = samples
                    .iter()
                    .step_by(stride)
                    .filter_map(|x| model.reviewer_coords(x).ok())
                    .collect();
                ClusterView {
                    movement,
                    id: movement.id(),
                    centroid,
                    points,
                }
            })
            .collect();
        Some(Clusters {
            snapshot: s.snapshots().len() - 1,
            provenance: model.provenance().to_string(),
            p: model.p(),
            degenerate: model.is_degenerate(),
            classes,
        })
    }

    fn refresh_clusters(&mut self, out: &mut Vec<ServerMessage>) {
        self.clusters = self.build_clusters();
        if let Some(c) = &self.clusters {
            out.push(ServerMessage::Clusters(c.clone()));
        }
    }

    fn parse_movement(command: &ClientCommand, name: &str) -> std::result::Result<Movement, ErrorPayload> {
        name.parse().map_err(|_| ErrorPayload {
            message: format!("unknown movement {name:?}"),
            command: Some(command.kind().to_string()),
            movement: Some(name.to_string()),
        })
    }

    /// Apply one client command. The error, if any, goes back to the
    /// sender only; the returned messages go to every subscriber.
    pub fn command(&mut self, command: &ClientCommand) -> CommandResult {
        let core = |e: myoreview::Error| reject(command, e.to_string());
        match command {
            ClientCommand::Subscribe { .. } => Ok(Vec::new()),
            ClientCommand::StartCalibration { session, seed } => {
                if let Some(s) = &self.session {
                    if s.phase() != Phase::Complete {
                        return Err(reject(command, "a session is already running"));
                    }
                }
                let stage = plan_session(*session).map_err(core)?;
                self.session = Some(Session::new(stage, self.config.session.clone()));
                self.seed = seed.unwrap_or(self.config.seed);
                self.pending = None;
                self.trial = None;
                self.next_trial = 0;
                self.clusters = None;
                Ok(vec![ServerMessage::SessionState(self.session_state())])
            }
            ClientCommand::Collect { movement } | ClientCommand::Recalibrate { movement } => {
                let m = Self::parse_movement(command, movement)?;
                let required =
                    self.config.session.collection.positions.len() * self.config.session.samples_per_position();
                let Some(s) = &self.session else {
                    return Err(reject(command, "no session; send start_calibration first"));
                };
                let phase_ok = match command {
                    ClientCommand::Recalibrate { .. } => s.phase() == Phase::Exploration,
                    _ => matches!(s.phase(), Phase::Calibration | Phase::Exploration),
                };
                if !phase_ok {
                    return Err(reject(
                        command,
                        format!("cannot {} during {:?}", command.kind(), s.phase()),
                    ));
                }
                if !s.stage().contains(m) {
                    return Err(ErrorPayload {
                        movement: Some(m.to_string()),
                        ..reject(command, format!("{m} is not part of this stage"))
                    });
                }
                if let Some(p) = &self.pending {
                    return Err(reject(command, format!("already collecting {}", p.movement)));
                }
                if s.phase() == Phase::Exploration && s.t_d_ms() >= s.stage().t_max_ms() {
                    return Err(reject(command, "exploration budget exhausted"));
                }
                if required == 0 {
                    return Err(reject(command, "collection is configured to take no samples"));
                }
                self.pending = Some(Pending {
                    movement: m,
                    features: Vec::with_capacity(required),
                    required,
                });
                Ok(vec![ServerMessage::SessionState(self.session_state())])
            }
            ClientCommand::EndExploration {} => {
                if self.pending.is_some() {
                    return Err(reject(command, "collection in progress"));
                }
                let s = self.session.as_mut().ok_or_else(|| reject(command, "no session"))?;
                s.end_exploration().map_err(core)?;
                Ok(vec![ServerMessage::SessionState(self.session_state())])
            }
            ClientCommand::StartTrial {} => {
                if self.trial.is_some() {
                    return Err(reject(command, "a trial is already running"));
                }
                let flt = self.config.flt.clone();
                let seed = self.seed;
                let s = self.session.as_mut().ok_or_else(|| reject(command, "no session"))?;
                if s.phase() != Phase::Assessment {
                    return Err(reject(command, format!("cannot start a trial during {:?}", s.phase())));
                }
                if s.targets().is_empty() {
                    s.begin_assessment(&flt, seed).map_err(core)?;
                }
                let Some(spec) = s.targets().get(self.next_trial).copied() else {
                    return Err(reject(command, "all trials are done"));
                };
                let active = ActiveTrial {
                    index: self.next_trial,
                    trial: Trial::new(spec, &flt),
                };
                let msg = ServerMessage::FltState(self.flt_state(&active));
                self.trial = Some(active);
                Ok(vec![msg, ServerMessage::SessionState(self.session_state())])
            }
        }
    }

    /// Feed one sample; returns the messages produced if it completed a
    /// window.
    pub fn push_sample(&mut self, sample: EmgSample) -> Result<Vec<ServerMessage>> {
        match self.windower.push(sample)? {
            Some(w) => {
                let t_ms = (w.start_ms + self.config.window.window_ms as f64).round() as u64;
                let features = self.extractor.extract(&w).values;
                self.on_window(t_ms, features)
            }
            None => Ok(Vec::new()),
        }
    }

    fn on_window(&mut self, t_ms: u64, features: Vec<f64>) -> Result<Vec<ServerMessage>> {
        self.windows += 1;
        let mut out = Vec::new();
        let decoder = self.session.as_ref().and_then(|s| s.decoder()).cloned();
        let mut label = None;
        if let Some(d) = &decoder {
            let decision = d.decide(&features)?;
            let coords = d.model.reviewer_coords(&features)?;
            out.push(ServerMessage::Cursor3d(Cursor3d { t_ms, coords }));
            out.push(ServerMessage::Decision(DecisionView { t_ms, decision }));
            label = Some(decision.label);
            self.last_decision = Some(decision);
        }

        if let Some(p) = self.pending.as_mut() {
            p.features.push(features);
            let per_position = self.config.session.samples_per_position().max(1);
            if p.features.len() == p.required {
                self.finish_collection(&mut out)?;
            } else if p.features.len() % per_position == 0 {
                out.push(ServerMessage::SessionState(self.session_state()));
            }
            return Ok(out);
        }

        if let (Some(active), Some(label)) = (self.trial.as_mut(), label) {
            let status = active.trial.step(label)?;
            let index = active.index;
            if let TrialStatus::Finished(_) = status {
                let active = self.trial.take().expect("trial is active");
                out.push(ServerMessage::FltState(self.flt_state(&active)));
                let s = self.session.as_mut().expect("trials run inside a session");
                s.record_trial(active.trial.finish())?;
                self.next_trial = index + 1;
                if self.next_trial >= s.targets().len() {
                    s.complete()?;
                }
                out.push(ServerMessage::SessionState(self.session_state()));
            } else {
                let active = self.trial.as_ref().expect("trial is active");
                out.push(ServerMessage::FltState(self.flt_state(active)));
            }
            return Ok(out);
        }

        if let Some(s) = self.session.as_mut() {
            match s.phase() {
                Phase::Calibration | Phase::Exploration => {
                    s.advance(self.config.session.step_ms as u64);
                    self.check_budget(&mut out)?;
                }
                _ => {}
            }
        }
        Ok(out)
    }

    fn check_budget(&mut self, out: &mut Vec<ServerMessage>) -> Result<()> {
        if let Some(s) = self.session.as_mut() {
            if s.phase() == Phase::Exploration && s.t_d_ms() >= s.stage().t_max_ms() {
                s.end_exploration()?;
                out.push(ServerMessage::SessionState(self.session_state()));
            }
        }
        Ok(())
    }

    fn finish_collection(&mut self, out: &mut Vec<ServerMessage>) -> Result<()> {
        let pending = self.pending.take().expect("collection is pending");
        let s = self.session.as_mut().expect("collection runs inside a session");
        let mut buffered = pending.features.into_iter();
        let mut source = |_: Movement, _: u8| buffered.next();
        let phase = s.phase();
        let result = s
            .collect_movement(pending.movement, &mut source)
            .map(|_| ())
            .and_then(|_| {
                let all = s.stage().movements.iter().all(|m| s.calibration().class(*m).is_some());
                if phase == Phase::Calibration && all {
                    s.finish_calibration().map(|_| ())
                } else {
                    Ok(())
                }
            });
        match result {
            Ok(()) => {
                if s.phase() == Phase::Exploration {
                    self.refresh_clusters(out);
                }
            }
            Err(e) => out.push(ServerMessage::error(
                e.to_string(),
                Some(if phase == Phase::Exploration {
                    "recalibrate"
                } else {
                    "collect"
                }),
                Some(pending.movement.to_string()),
            )),
        }
        out.push(ServerMessage::SessionState(self.session_state()));
        self.check_budget(out)
    }
}
