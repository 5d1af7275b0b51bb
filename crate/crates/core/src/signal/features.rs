use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{EmgWindow, FeatureVector};

/// MAV, WL, ZC, SSC, mean frequency, median frequency.
pub const FEATURES_PER_CHANNEL: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Minimum step across zero for a zero crossing to count.
    pub zc_threshold: f64,
    /// Minimum slope on either side for a slope-sign change to count.
    pub ssc_threshold: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            zc_threshold: 0.0,
            ssc_threshold: 0.0,
        }
    }
}

impl FeatureConfig {
    pub fn dim(&self, channels: usize) -> usize {
        channels * FEATURES_PER_CHANNEL
    }
}

/// Feature extractor with a cache of FFT plans keyed by window length.
pub struct FeatureExtractor {
    config: FeatureConfig,
    planner: FftPlanner<f64>,
    plans: HashMap<usize, Arc<dyn Fft<f64>>>,
    scratch: Vec<Complex<f64>>,
}

impl Clone for FeatureExtractor {
    /// The clone starts with an empty plan cache.
    fn clone(&self) -> Self {
        FeatureExtractor::new(self.config)
    }
}

impl std::fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeatureExtractor")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig) -> Self {
        FeatureExtractor {
            config,
            planner: FftPlanner::new(),
            plans: HashMap::new(),
            scratch: Vec::new(),
        }
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn extract(&mut self, window: &EmgWindow) -> FeatureVector {
        let mut values = Vec::with_capacity(self.config.dim(window.num_channels()));
        for channel in &window.channels {
            values.push(mean_absolute_value(channel));
            values.push(waveform_length(channel));
            values.push(zero_crossings(channel, self.config.zc_threshold) as f64);
            values.push(slope_sign_changes(channel, self.config.ssc_threshold) as f64);
            let (mean_freq, median_freq) = self.spectral_moments(channel, window.rate_hz);
            values.push(mean_freq);
            values.push(median_freq);
        }
        FeatureVector::new(values)
    }

    /// Mean and median frequency of the one-sided power spectrum of the
    /// mean-removed channel (rectangular window). Both are 0 when the
    /// channel carries no energy after mean removal.
    fn spectral_moments(&mut self, channel: &[f64], rate_hz: f64) -> (f64, f64) {
        let n = channel.len();
        if n < 2 {
            return (0.0, 0.0);
        }
        let mean = channel.iter().sum::<f64>() / n as f64;
        let energy: f64 = channel.iter().map(|x| (x - mean) * (x - mean)).sum();
        let raw_energy: f64 = channel.iter().map(|x| x * x).sum();
        if energy <= 1e-24 * raw_energy.max(1.0) {
            return (0.0, 0.0);
        }

        let planner = &mut self.planner;
        let fft = self
            .plans
            .entry(n)
            .or_insert_with(|| planner.plan_fft_forward(n))
            .clone();
        self.scratch.clear();
        self.scratch.extend(channel.iter().map(|x| Complex::new(x - mean, 0.0)));
        fft.process(&mut self.scratch);

        let bin_hz = rate_hz / n as f64;
        let power: Vec<f64> = self.scratch[..=n / 2].iter().map(|c| c.norm_sqr()).collect();
        let total: f64 = power.iter().sum();
        if total <= 0.0 {
            return (0.0, 0.0);
        }
        let mean_freq = power
            .iter()
            .enumerate()
            .map(|(k, p)| k as f64 * bin_hz * p)
            .sum::<f64>()
            / total;
        let half = total / 2.0;
        let mut cumulative = 0.0;
        let mut median_bin = power.len() - 1;
        for (k, p) in power.iter().enumerate() {
            cumulative += p;
            if cumulative >= half {
                median_bin = k;
                break;
            }
        }
        (mean_freq, median_bin as f64 * bin_hz)
    }
}

/// One-shot extraction; prefer [`FeatureExtractor`] in loops.
pub fn extract_features(window: &EmgWindow, config: &FeatureConfig) -> FeatureVector {
    FeatureExtractor::new(*config).extract(window)
}

fn mean_absolute_value(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v.abs()).sum::<f64>() / x.len() as f64
}

fn waveform_length(x: &[f64]) -> f64 {
    x.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

fn zero_crossings(x: &[f64], threshold: f64) -> usize {
    x.windows(2)
        .filter(|w| w[0] * w[1] < 0.0 && (w[0] - w[1]).abs() >= threshold)
        .count()
}

fn slope_sign_changes(x: &[f64], threshold: f64) -> usize {
    x.windows(3)
        .filter(|w| {
            let left = w[1] - w[0];
            let right = w[1] - w[2];
            left * right > 0.0 && (left.abs() >= threshold || right.abs() >= threshold)
        })
        .count()
}
