use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::agent::{calibrate_session, holdout_accuracy, run_agent, AgentPolicy, SyntheticUser};
use super::{ClassProfile, SynthConfig};
use crate::error::{Error, Result};
use crate::flt::{FltConfig, FltMetrics};
use crate::movement::Movement;
use crate::session::{plan_session, FeatureSource, SessionConfig};
use crate::signal::FeatureConfig;
use crate::subspace::CalibrationSet;

/// Class layout shared by every spacing level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepParams {
    /// Gain of every channel at Rest.
    pub floor: f64,
    /// Within-class jitter of the active classes; spacing levels are
    /// multiples of it.
    pub sigma: f64,
    /// Jitter at Rest, where there is no contraction to vary.
    pub rest_within: f64,
    pub band: (f64, f64),
    pub drift_per_min: f64,
    /// Concentration of each active class's channel bump.
    pub bump_kappa: f64,
}

impl Default for SweepParams {
    fn default() -> Self {
        SweepParams {
            floor: 0.02,
            sigma: 0.1,
            rest_within: 0.005,
            band: (20.0, 90.0),
            drift_per_min: 0.0,
            bump_kappa: 2.0,
        }
    }
}

/// Unit-norm, non-negative channel pattern for active class `i` of `n`.
fn bump(i: usize, n: usize, channels: usize, kappa: f64) -> Vec<f64> {
    let center = i as f64 * channels as f64 / n as f64;
    let v: Vec<f64> = (0..channels)
        .map(|c| (kappa * (2.0 * PI * (c as f64 - center) / channels as f64).cos()).exp())
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Profiles for `movements` with active centroids `level · sigma` from Rest
/// in gain space.
pub fn class_profiles(movements: &[Movement], level: f64, channels: usize, params: &SweepParams) -> Vec<ClassProfile> {
    let actives: Vec<Movement> = movements.iter().copied().filter(|m| *m != Movement::Rest).collect();
    movements
        .iter()
        .map(|&movement| {
            let (gains, within) = match actives.iter().position(|m| *m == movement) {
                None => (vec![params.floor; channels], params.rest_within),
                Some(i) => (
                    bump(i, actives.len(), channels, params.bump_kappa)
                        .into_iter()
                        .map(|v| params.floor + level * params.sigma * v)
                        .collect(),
                    params.sigma,
                ),
            };
            ClassProfile {
                movement,
                gains,
                within,
                drift_per_min: params.drift_per_min,
                band: params.band,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SweepLevel {
    pub level: f64,
    pub profiles: Vec<ClassProfile>,
    pub calibration: CalibrationSet,
}

/// One calibration set per spacing level, collected from the synthetic
/// user over the session's positions.
pub fn separability_sweep(
    levels: &[f64],
    movements: &[Movement],
    params: &SweepParams,
    synth: &SynthConfig,
    session: &SessionConfig,
    seed: u64,
) -> Result<Vec<SweepLevel>> {
    if levels.len() < 2 {
        return Err(Error::InvalidArgument("a sweep needs at least 2 levels".into()));
    }
    levels
        .iter()
        .map(|&level| {
            let profiles = class_profiles(movements, level, synth.channels, params);
            let mut user = SyntheticUser::new(profiles.clone(), synth.clone(), FeatureConfig::default(), seed)?;
            let mut calibration = CalibrationSet::new();
            for &m in movements {
                for &position in &session.collection.positions {
                    for _ in 0..session.samples_per_position() {
                        let x = user.next_features(m, position).ok_or(Error::EmptyStream(m))?;
                        calibration.push(m, x);
                    }
                }
            }
            Ok(SweepLevel {
                level,
                profiles,
                calibration,
            })
        })
        .collect()
}

/// Declarative sweep, as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    /// Spacings in units of `params.sigma`.
    pub levels: Vec<f64>,
    pub seeds: u64,
    pub base_seed: u64,
    pub session_index: u32,
    /// Holdout windows per class for the offline accuracy column.
    pub holdout_per_class: usize,
    pub params: SweepParams,
    pub synth: SynthConfig,
    pub policy: AgentPolicy,
    pub flt: FltConfig,
    pub session: SessionConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            levels: vec![6.0, 4.0, 3.0, 2.0, 1.0],
            seeds: 10,
            base_seed: 0,
            session_index: 1,
            holdout_per_class: 40,
            params: SweepParams::default(),
            synth: SynthConfig::default(),
            policy: AgentPolicy::default(),
            flt: FltConfig::default(),
            session: SessionConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(0);
            Error::parse(path, line, e.message())
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// `None` when calibration failed (for example identical classes).
    pub metrics: Option<FltMetrics>,
    pub holdout_accuracy: Option<f64>,
    pub error: Option<String>,
}

impl SeedResult {
    /// Completion rate, counting a failed calibration as 0.
    pub fn completion_rate(&self) -> f64 {
        self.metrics.map(|m| m.completion_rate).unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub level: f64,
    pub runs: Vec<SeedResult>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl LevelResult {
    pub fn mean_completion_rate(&self) -> f64 {
        mean(self.runs.iter().map(SeedResult::completion_rate)).unwrap_or(0.0)
    }

    pub fn mean_holdout_accuracy(&self) -> Option<f64> {
        mean(self.runs.iter().filter_map(|r| r.holdout_accuracy))
    }

    fn mean_metric(&self, f: impl Fn(&FltMetrics) -> Option<f64>) -> Option<f64> {
        mean(self.runs.iter().filter_map(|r| r.metrics.as_ref().and_then(&f)))
    }

    pub fn csv_header() -> &'static str {
        "level,seeds,cr,ot,pe,tp,holdout_accuracy,failed_calibrations"
    }

    pub fn csv_row(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        format!(
            "{},{},{:.4},{},{},{},{},{}",
            self.level,
            self.runs.len(),
            self.mean_completion_rate(),
            cell(self.mean_metric(|m| m.overshoot)),
            cell(self.mean_metric(|m| m.path_efficiency)),
            cell(self.mean_metric(|m| m.throughput)),
            cell(self.mean_holdout_accuracy()),
            self.runs.iter().filter(|r| r.metrics.is_none()).count(),
        )
    }
}

fn run_one(config: &SweepConfig, level: f64, seed: u64) -> Result<SeedResult> {
    let stage = plan_session(config.session_index)?;
    let profiles = class_profiles(&stage.movements, level, config.synth.channels, &config.params);
    let mut user = SyntheticUser::new(profiles, config.synth.clone(), FeatureConfig::default(), seed)?;
    let session = match calibrate_session(&stage, config.session.clone(), &mut user) {
        Ok(s) => s,
        Err(e) => {
            return Ok(SeedResult {
                seed,
                metrics: None,
                holdout_accuracy: None,
                error: Some(e.to_string()),
            })
        }
    };
    let decoder = session.decoder().expect("calibrated session has a decoder").clone();

    let mut holdout = Vec::new();
    for &m in &stage.movements {
        user.settle(m, 5)?;
        for _ in 0..config.holdout_per_class {
            holdout.push((m, user.step(m, 5)?));
        }
    }
    let accuracy = if holdout.is_empty() {
        None
    } else {
        Some(holdout_accuracy(&decoder, &holdout)?)
    };
    let run = run_agent(&config.policy, &stage, &decoder, &config.flt, &mut user, seed)?;
    Ok(SeedResult {
        seed,
        metrics: Some(run.metrics),
        holdout_accuracy: accuracy,
        error: None,
    })
}

/// Every (level, seed) pair, in parallel. Results are ordered as the
/// configured levels and independent of thread scheduling.
pub fn run_sweep(config: &SweepConfig) -> Result<Vec<LevelResult>> {
    if config.levels.len() < 2 {
        return Err(Error::InvalidArgument("a sweep needs at least 2 levels".into()));
    }
    let pairs: Vec<(usize, u64)> = (0..config.levels.len())
        .flat_map(|l| (0..config.seeds).map(move |s| (l, config.base_seed + s)))
        .collect();
    let results: Vec<Result<SeedResult>> = pairs
        .par_iter()
        .map(|&(l, seed)| run_one(config, config.levels[l], seed))
        .collect();
    let mut levels: Vec<LevelResult> = config
        .levels
        .iter()
        .map(|&level| LevelResult {
            level,
            runs: Vec::new(),
        })
        .collect();
    for ((l, _), r) in pairs.into_iter().zip(results) {
        levels[l].runs.push(r?);
    }
    Ok(levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Decoder;
    use crate::session::plan_session;
    use crate::subspace::{fit_lda, Regularization};
    use crate::synth::agent::SyntheticUser;

    fn movements() -> Vec<Movement> {
        plan_session(1).unwrap().movements
    }

    /// trace(S_b) straight from the definition.
    fn between_trace(cal: &CalibrationSet) -> f64 {
        let d = cal.dim().unwrap();
        let n = cal.num_samples() as f64;
        let mut grand = vec![0.0; d];
        for (_, xs) in cal.classes() {
            for x in xs {
                for j in 0..d {
                    grand[j] += x[j] / n;
                }
            }
        }
        cal.classes()
            .map(|(_, xs)| {
                let m: Vec<f64> = (0..d)
                    .map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / xs.len() as f64)
                    .collect();
                xs.len() as f64 * m.iter().zip(&grand).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .sum()
    }

    fn sweep(levels: &[f64], params: &SweepParams, seed: u64) -> Vec<SweepLevel> {
        separability_sweep(
            levels,
            &movements(),
            params,
            &SynthConfig::default(),
            &SessionConfig::default(),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn bumps_are_unit_and_distinct() {
        let vs: Vec<Vec<f64>> = (0..4).map(|i| bump(i, 4, 8, 2.0)).collect();
        for v in &vs {
            assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(v.iter().all(|x| *x > 0.0));
        }
        assert_ne!(vs[0], vs[1]);
    }

    #[test]
    fn profiles_place_actives_at_level_sigma() {
        let params = SweepParams::default();
        let ps = class_profiles(&movements(), 3.0, 8, &params);
        let rest = &ps[0];
        assert_eq!(rest.movement, Movement::Rest);
        assert!(rest.gains.iter().all(|g| *g == params.floor));
        for p in &ps[1..] {
            let dist = p
                .gains
                .iter()
                .zip(&rest.gains)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!((dist - 3.0 * params.sigma).abs() < 1e-12);
            assert_eq!(p.within, params.sigma);
        }
        let flat = class_profiles(&movements(), 0.0, 8, &params);
        assert!(flat.iter().all(|p| p.gains == flat[0].gains));
    }

    #[test]
    fn needs_two_levels() {
        let r = separability_sweep(
            &[1.0],
            &movements(),
            &SweepParams::default(),
            &SynthConfig::default(),
            &SessionConfig::default(),
            0,
        );
        assert!(r.is_err());
    }

    #[test]
    fn zero_spacing_collapses_the_subspace() {
        let params = SweepParams {
            rest_within: SweepParams::default().sigma,
            ..SweepParams::default()
        };
        let levels = sweep(&[0.0, 6.0], &params, 2);
        let flat = fit_lda(&levels[0].calibration, Regularization::Auto).unwrap();
        let wide = fit_lda(&levels[1].calibration, Regularization::Auto).unwrap();
        assert!(flat.eigenvalues()[0] < 0.05 * wide.eigenvalues()[0]);
    }

    #[test]
    fn between_scatter_grows_with_spacing() {
        let levels = sweep(&[0.0, 1.0, 2.0, 4.0, 6.0], &SweepParams::default(), 7);
        let traces: Vec<f64> = levels.iter().map(|l| between_trace(&l.calibration)).collect();
        assert!(traces.windows(2).all(|w| w[1] >= w[0]), "{traces:?}");
    }

    #[test]
    fn holdout_accuracy_higher_when_wider() {
        let accuracy = |level: f64| {
            let levels = sweep(&[level, level], &SweepParams::default(), 11);
            let decoder = Decoder::new(fit_lda(&levels[0].calibration, Regularization::Auto).unwrap(), 0.15).unwrap();
            let mut user = SyntheticUser::new(
                levels[0].profiles.clone(),
                SynthConfig::default(),
                FeatureConfig::default(),
                99,
            )
            .unwrap();
            let mut holdout = Vec::new();
            for m in movements() {
                user.settle(m, 5).unwrap();
                for _ in 0..60 {
                    holdout.push((m, user.step(m, 5).unwrap()));
                }
            }
            holdout_accuracy(&decoder, &holdout).unwrap()
        };
        let (wide, narrow) = (accuracy(6.0), accuracy(1.0));
        assert!(wide > narrow, "{wide} vs {narrow}");
        assert!(wide > 0.95);
    }

    #[test]
    fn paired_seeds_complete_more_when_wider() {
        let config = SweepConfig {
            levels: vec![6.0, 1.0],
            seeds: 2,
            ..SweepConfig::default()
        };
        let results = run_sweep(&config).unwrap();
        for (wide, narrow) in results[0].runs.iter().zip(&results[1].runs) {
            assert!(wide.completion_rate() > narrow.completion_rate());
        }
        assert_eq!(run_sweep(&config).unwrap(), results);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let text = "levels = [5.0, 2.0]\nseeds = 3\n\n[params]\nsigma = 0.2\n\n[policy]\nerror_rate = 0.1\n";
        let c = SweepConfig::from_toml(text, Path::new("s.toml")).unwrap();
        assert_eq!(c.levels, vec![5.0, 2.0]);
        assert_eq!(c.params.sigma, 0.2);
        assert_eq!(c.params.floor, SweepParams::default().floor);
        assert_eq!(c.policy.error_rate, 0.1);
        let back = SweepConfig::from_toml(&toml::to_string(&c).unwrap(), Path::new("s.toml")).unwrap();
        assert_eq!(back, c);
        let err = SweepConfig::from_toml("levels = [1.0]\nseeds = \"x\"\n", Path::new("s.toml")).unwrap_err();
        assert!(err.to_string().starts_with("s.toml:2:"), "{err}");
    }

    #[test]
    fn csv_row_matches_header() {
        let r = LevelResult {
            level: 2.0,
            runs: vec![SeedResult {
                seed: 0,
                metrics: None,
                holdout_accuracy: None,
                error: Some("x".into()),
            }],
        };
        assert_eq!(
            r.csv_row().split(',').count(),
            LevelResult::csv_header().split(',').count()
        );
        assert_eq!(r.mean_completion_rate(), 0.0);
    }
}
