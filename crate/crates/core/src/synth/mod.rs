//! Seeded synthetic EMG and a simulated user that closes the loop.
//!
//! Each channel is band-limited Gaussian noise whose amplitude follows the
//! movement's gain vector, a limb-position perturbation, slow drift and a
//! piecewise-constant within-class jitter. The same seed always produces
//! the same samples.

mod agent;
mod sweep;

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::movement::Movement;
use crate::signal::{EmgRecording, EmgSample};

pub use agent::{calibrate_session, holdout_accuracy, run_agent, AgentPolicy, AgentRun, SyntheticUser};
pub use sweep::{class_profiles, run_sweep, separability_sweep, LevelResult, SweepConfig, SweepLevel, SweepParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub movement: Movement,
    /// Per-channel gain, ≥ 0.
    pub gains: Vec<f64>,
    /// Standard deviation of the within-class gain jitter, gain units. The
    /// jittered amplitude is clipped at zero.
    pub within: f64,
    /// Relative gain change per minute.
    pub drift_per_min: f64,
    /// Pass band, Hz.
    pub band: (f64, f64),
}

impl ClassProfile {
    /// The same movement performed at `effort` of full strength: gains and
    /// jitter above the `rest` level are scaled.
    pub fn with_effort(&self, rest: &ClassProfile, effort: f64) -> ClassProfile {
        let mut p = self.clone();
        if effort != 1.0 {
            for (g, r) in p.gains.iter_mut().zip(&rest.gains) {
                let base = r.min(*g);
                *g = base + effort * (*g - base);
            }
            p.within = rest.within + effort * (p.within - rest.within).max(0.0);
        }
        p
    }

    pub fn validate(&self, rate_hz: f64) -> Result<()> {
        let (lo, hi) = self.band;
        if !(lo > 0.0 && hi > lo && hi < rate_hz / 2.0) {
            return Err(Error::InvalidArgument(format!(
                "empty or invalid band ({lo}, {hi}) Hz at {rate_hz} Hz"
            )));
        }
        if self.gains.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "{} gains must be finite and ≥ 0",
                self.movement
            )));
        }
        if !(self.within >= 0.0) {
            return Err(Error::InvalidArgument("within-class jitter must be ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub rate_hz: f64,
    pub channels: usize,
    /// Jitter is redrawn this often.
    pub jitter_ms: f64,
    /// Additive white sensor noise, standard deviation.
    pub noise_floor: f64,
    /// Peak relative gain change between limb positions.
    pub position_effect: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            rate_hz: 200.0,
            channels: 8,
            jitter_ms: 200.0,
            noise_floor: 0.01,
            position_effect: 0.1,
        }
    }
}

/// Multiplicative gain of `channel` at checkerboard `position`, within
/// `1 ± effect`.
pub fn position_gain(position: u8, channel: usize, effect: f64) -> f64 {
    1.0 + effect * (1.7 * position as f64 + 0.9 * channel as f64).sin()
}

/// Second-order band-pass section scaled to unit output variance for unit
/// white input.
#[derive(Debug, Clone)]
struct Bandpass {
    b: [f64; 3],
    a: [f64; 2],
    x: [f64; 2],
    y: [f64; 2],
}

impl Bandpass {
    fn new(lo: f64, hi: f64, rate_hz: f64) -> Self {
        let f0 = (lo * hi).sqrt();
        let q = f0 / (hi - lo);
        let w0 = 2.0 * PI * f0 / rate_hz;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        let mut bp = Bandpass {
            b: [alpha / a0, 0.0, -alpha / a0],
            a: [-2.0 * w0.cos() / a0, (1.0 - alpha) / a0],
            x: [0.0; 2],
            y: [0.0; 2],
        };
        let mut probe = bp.clone();
        let energy: f64 = (0..4096)
            .map(|i| {
                let h = probe.filter(if i == 0 { 1.0 } else { 0.0 });
                h * h
            })
            .sum();
        let scale = 1.0 / energy.sqrt();
        bp.b.iter_mut().for_each(|b| *b *= scale);
        bp
    }

    fn filter(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.b[1] * self.x[0] + self.b[2] * self.x[1]
            - self.a[0] * self.y[0]
            - self.a[1] * self.y[1];
        self.x = [x, self.x[0]];
        self.y = [y, self.y[0]];
        y
    }
}

/// Continuous multichannel generator. Filter state, jitter and time carry
/// over when the profile changes between calls.
#[derive(Debug, Clone)]
pub struct SignalGenerator {
    config: SynthConfig,
    rng: ChaCha8Rng,
    filters: HashMap<(u64, u64), Vec<Bandpass>>,
    jitter: Vec<f64>,
    jitter_len: usize,
    produced: usize,
}

impl SignalGenerator {
    pub fn new(config: SynthConfig, seed: u64) -> Self {
        let jitter_len = ((config.jitter_ms * config.rate_hz / 1000.0).round() as usize).max(1);
        SignalGenerator {
            rng: ChaCha8Rng::seed_from_u64(seed),
            filters: HashMap::new(),
            jitter: vec![0.0; config.channels],
            jitter_len,
            produced: 0,
            config,
        }
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    pub fn samples_produced(&self) -> usize {
        self.produced
    }

    /// Next `n` samples of `profile` performed at board `position`.
    pub fn generate(&mut self, profile: &ClassProfile, position: u8, n: usize) -> Result<Vec<EmgSample>> {
        profile.validate(self.config.rate_hz)?;
        if profile.gains.len() != self.config.channels {
            return Err(Error::DimensionMismatch {
                expected: self.config.channels,
                actual: profile.gains.len(),
            });
        }
        let channels = self.config.channels;
        let rate = self.config.rate_hz;
        let key = (profile.band.0.to_bits(), profile.band.1.to_bits());
        let filters = self
            .filters
            .entry(key)
            .or_insert_with(|| vec![Bandpass::new(profile.band.0, profile.band.1, rate); channels]);
        let gains: Vec<f64> = profile
            .gains
            .iter()
            .enumerate()
            .map(|(c, g)| g * position_gain(position, c, self.config.position_effect))
            .collect();

        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            if self.produced.is_multiple_of(self.jitter_len) {
                for z in self.jitter.iter_mut() {
                    *z = self.rng.sample(StandardNormal);
                }
            }
            let minutes = self.produced as f64 / rate / 60.0;
            let drift = 1.0 + profile.drift_per_min * minutes;
            let mut amplitudes = Vec::with_capacity(channels);
            for c in 0..channels {
                let white: f64 = self.rng.sample(StandardNormal);
                let floor: f64 = self.rng.sample(StandardNormal);
                let amplitude = (gains[c] * drift + profile.within * self.jitter[c]).max(0.0);
                amplitudes.push(amplitude * filters[c].filter(white) + self.config.noise_floor * floor);
            }
            out.push(EmgSample {
                channels: amplitudes,
                timestamp_ms: self.produced as f64 * 1000.0 / rate,
            });
            self.produced += 1;
        }
        Ok(out)
    }
}

/// `duration_ms` of one profile from a fresh generator.
pub fn gen_signal(profile: &ClassProfile, duration_ms: f64, seed: u64, config: &SynthConfig) -> Result<Vec<EmgSample>> {
    if !(duration_ms > 0.0) {
        return Err(Error::InvalidArgument("duration must be positive".into()));
    }
    let n = (duration_ms * config.rate_hz / 1000.0).round() as usize;
    SignalGenerator::new(config.clone(), seed).generate(profile, 5, n)
}

pub fn to_recording(samples: &[EmgSample], config: &SynthConfig) -> EmgRecording {
    let mut rec = EmgRecording::new(config.channels, config.rate_hz);
    for s in samples {
        rec.push(s.channels.clone());
    }
    rec
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{window_stream, FeatureConfig, FeatureExtractor, WindowSpec};

    fn profile(gain: f64) -> ClassProfile {
        ClassProfile {
            movement: Movement::PowerGrasp,
            gains: vec![gain; 8],
            within: 0.05,
            drift_per_min: 0.0,
            band: (20.0, 90.0),
        }
    }

    fn mean_mav(samples: &[EmgSample]) -> f64 {
        let windows = window_stream(samples, 200.0, WindowSpec::default()).unwrap();
        let mut ex = FeatureExtractor::new(FeatureConfig::default());
        // MAV is the first of each channel's six features.
        let total: f64 = windows
            .iter()
            .map(|w| ex.extract(w).values.iter().step_by(6).sum::<f64>() / 8.0)
            .sum();
        total / windows.len() as f64
    }

    #[test]
    fn same_seed_same_stream() {
        let config = SynthConfig::default();
        let a = gen_signal(&profile(1.0), 1000.0, 7, &config).unwrap();
        let b = gen_signal(&profile(1.0), 1000.0, 7, &config).unwrap();
        let c = gen_signal(&profile(1.0), 1000.0, 8, &config).unwrap();
        assert_eq!(a.len(), 200);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rest_is_near_silent() {
        let rest = ClassProfile {
            movement: Movement::Rest,
            gains: vec![0.0; 8],
            within: 0.0,
            ..profile(0.0)
        };
        let mav = mean_mav(&gen_signal(&rest, 5000.0, 1, &SynthConfig::default()).unwrap());
        assert!(mav < 0.02, "{mav}");
    }

    #[test]
    fn doubling_gain_doubles_mav() {
        // 100 windows ≈ 5.15 s
        let config = SynthConfig::default();
        let one = mean_mav(&gen_signal(&profile(1.0), 5150.0, 11, &config).unwrap());
        let two = mean_mav(&gen_signal(&profile(2.0), 5150.0, 13, &config).unwrap());
        assert!(((two / one) - 2.0).abs() <= 0.1, "ratio {}", two / one);
    }

    #[test]
    fn bandpass_output_has_unit_variance() {
        let mut bp = Bandpass::new(20.0, 90.0, 200.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let var: f64 = (0..n)
            .map(|_| {
                let y = bp.filter(rng.sample(StandardNormal));
                y * y
            })
            .sum::<f64>()
            / n as f64;
        assert!((var - 1.0).abs() < 0.03, "{var}");
    }

    #[test]
    fn invalid_profiles_rejected() {
        let config = SynthConfig::default();
        let mut p = profile(1.0);
        p.band = (50.0, 50.0);
        assert!(gen_signal(&p, 100.0, 1, &config).is_err());
        p.band = (20.0, 120.0);
        assert!(gen_signal(&p, 100.0, 1, &config).is_err());
        assert!(gen_signal(&profile(1.0), 0.0, 1, &config).is_err());
        let mut short = profile(1.0);
        short.gains.pop();
        assert!(gen_signal(&short, 100.0, 1, &config).is_err());
    }

    #[test]
    fn positions_perturb_within_bounds() {
        for pos in 1..=9 {
            for c in 0..8 {
                let g = position_gain(pos, c, 0.1);
                assert!((0.9..=1.1).contains(&g));
            }
        }
        assert_ne!(position_gain(5, 0, 0.1), position_gain(3, 0, 0.1));
    }
}
