//! Raw EMG streams, sliding windows and per-window feature vectors.

mod emg_file;
mod features;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::movement::Movement;

pub use emg_file::{parse_emg, read_emg_file, write_emg, write_emg_file, EmgRecording};
pub use features::{extract_features, FeatureConfig, FeatureExtractor, FEATURES_PER_CHANNEL};

pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 200.0;
pub const DEFAULT_CHANNELS: usize = 8;

/// One multichannel sample. Amplitudes are in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct EmgSample {
    pub channels: Vec<f64>,
    /// Milliseconds since stream start.
    pub timestamp_ms: f64,
}

/// Window length and hop, both in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window_ms: u32,
    pub step_ms: u32,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            window_ms: 200,
            step_ms: 50,
        }
    }
}

impl WindowSpec {
    /// Samples per window and per step at `rate_hz`. Both must come out as
    /// whole numbers of samples.
    pub fn sample_counts(&self, rate_hz: f64) -> Result<(usize, usize)> {
        if self.step_ms == 0 || self.window_ms == 0 {
            return Err(Error::InvalidArgument("window and step must be positive".into()));
        }
        if !self.window_ms.is_multiple_of(self.step_ms) {
            return Err(Error::InvalidArgument(format!(
                "window {} ms is not a multiple of step {} ms",
                self.window_ms, self.step_ms
            )));
        }
        let whole = |ms: u32| -> Result<usize> {
            let n = ms as f64 * rate_hz / 1000.0;
            if n < 1.0 || (n - n.round()).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "{ms} ms at {rate_hz} Hz is not a whole number of samples"
                )));
            }
            Ok(n.round() as usize)
        };
        Ok((whole(self.window_ms)?, whole(self.step_ms)?))
    }

    pub fn step_seconds(&self) -> f64 {
        self.step_ms as f64 / 1000.0
    }
}

/// W consecutive samples, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmgWindow {
    /// Position of the window in the stream (k-th window).
    pub index: usize,
    pub start_ms: f64,
    pub rate_hz: f64,
    pub channels: Vec<Vec<f64>>,
}

impl EmgWindow {
    pub fn from_channels(channels: Vec<Vec<f64>>, rate_hz: f64) -> Result<Self> {
        let len = channels.first().map(Vec::len).unwrap_or(0);
        if len == 0 || channels.iter().any(|c| c.len() != len) {
            return Err(Error::StreamFormat(
                "window channels must be non-empty and equal length".into(),
            ));
        }
        Ok(EmgWindow {
            index: 0,
            start_ms: 0.0,
            rate_hz,
            channels,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels.first().map(Vec::len).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Feature representation of one window; `label` is set only for
/// calibration data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub label: Option<Movement>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        FeatureVector { values, label: None }
    }

    pub fn labeled(values: Vec<f64>, label: Movement) -> Self {
        FeatureVector {
            values,
            label: Some(label),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Incremental splitter: push samples one at a time, get a window back
/// every `step` samples once the first window has filled.
#[derive(Debug, Clone)]
pub struct Windower {
    window_len: usize,
    step_len: usize,
    rate_hz: f64,
    channels: Option<usize>,
    last_timestamp: Option<f64>,
    buffer: VecDeque<EmgSample>,
    pushed: usize,
    emitted: usize,
}

impl Windower {
    pub fn new(spec: WindowSpec, rate_hz: f64) -> Result<Self> {
        let (window_len, step_len) = spec.sample_counts(rate_hz)?;
        Ok(Windower {
            window_len,
            step_len,
            rate_hz,
            channels: None,
            last_timestamp: None,
            buffer: VecDeque::with_capacity(window_len),
            pushed: 0,
            emitted: 0,
        })
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn step_len(&self) -> usize {
        self.step_len
    }

    pub fn push(&mut self, sample: EmgSample) -> Result<Option<EmgWindow>> {
        match self.channels {
            None => self.channels = Some(sample.channels.len()),
            Some(c) if c != sample.channels.len() => {
                return Err(Error::StreamFormat(format!(
                    "sample {} has {} channels, stream has {c}",
                    self.pushed,
                    sample.channels.len()
                )))
            }
            Some(_) => {}
        }
        if !sample.timestamp_ms.is_finite() {
            return Err(Error::StreamFormat(format!(
                "sample {} has a non-finite timestamp",
                self.pushed
            )));
        }
        if let Some(prev) = self.last_timestamp {
            if sample.timestamp_ms <= prev {
                return Err(Error::StreamFormat(format!(
                    "timestamps must increase strictly (sample {}: {} after {prev})",
                    self.pushed, sample.timestamp_ms
                )));
            }
        }
        self.last_timestamp = Some(sample.timestamp_ms);
        if self.buffer.len() == self.window_len {
            self.buffer.pop_front();
        }
        self.buffer.push_back(sample);
        self.pushed += 1;

        if self.pushed < self.window_len || !(self.pushed - self.window_len).is_multiple_of(self.step_len) {
            return Ok(None);
        }
        let channels = self.channels.unwrap_or(0);
        let data = (0..channels)
            .map(|c| self.buffer.iter().map(|s| s.channels[c]).collect())
            .collect();
        let window = EmgWindow {
            index: self.emitted,
            start_ms: self.buffer[0].timestamp_ms,
            rate_hz: self.rate_hz,
            channels: data,
        };
        self.emitted += 1;
        Ok(Some(window))
    }
}

/// Split a finite stream into overlapping windows. The trailing partial
/// window is dropped; a stream shorter than one window yields nothing.
pub fn window_stream(stream: &[EmgSample], rate_hz: f64, spec: WindowSpec) -> Result<Vec<EmgWindow>> {
    let mut windower = Windower::new(spec, rate_hz)?;
    let mut out = Vec::new();
    for sample in stream {
        if let Some(w) = windower.push(sample.clone())? {
            out.push(w);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn stream(n: usize, channels: usize, rate: f64) -> Vec<EmgSample> {
        (0..n)
            .map(|i| EmgSample {
                channels: (0..channels).map(|c| (i * channels + c) as f64).collect(),
                timestamp_ms: i as f64 * 1000.0 / rate,
            })
            .collect()
    }

    #[test]
    fn four_hundred_ms_gives_five_windows() {
        let windows = window_stream(&stream(80, 8, 200.0), 200.0, WindowSpec::default()).unwrap();
        assert_eq!(windows.len(), 5);
        assert!(windows.iter().all(|w| w.len() == 40 && w.num_channels() == 8));
        let starts: Vec<f64> = windows.iter().map(|w| w.start_ms).collect();
        assert_eq!(starts, vec![0.0, 50.0, 100.0, 150.0, 200.0]);
    }

    #[test]
    fn exactly_one_window() {
        let windows = window_stream(&stream(40, 8, 200.0), 200.0, WindowSpec::default()).unwrap();
        assert_eq!(windows.len(), 1);
    }

    #[test]
    fn short_stream_is_empty() {
        // 199 ms at 1 kHz
        let windows = window_stream(&stream(199, 2, 1000.0), 1000.0, WindowSpec::default()).unwrap();
        assert!(windows.is_empty());
        let windows = window_stream(&stream(39, 2, 200.0), 200.0, WindowSpec::default()).unwrap();
        assert!(windows.is_empty());
    }

    #[test]
    fn mismatched_channels_rejected() {
        let mut s = stream(50, 4, 200.0);
        s[10].channels.pop();
        let err = window_stream(&s, 200.0, WindowSpec::default()).unwrap_err();
        assert!(matches!(err, Error::StreamFormat(_)));
    }

    #[test]
    fn non_increasing_timestamps_rejected() {
        let mut s = stream(50, 4, 200.0);
        s[5].timestamp_ms = s[4].timestamp_ms;
        assert!(matches!(
            window_stream(&s, 200.0, WindowSpec::default()),
            Err(Error::StreamFormat(_))
        ));
    }

    #[test]
    fn window_must_be_multiple_of_step() {
        let spec = WindowSpec {
            window_ms: 200,
            step_ms: 30,
        };
        assert!(spec.sample_counts(200.0).is_err());
        let spec = WindowSpec {
            window_ms: 200,
            step_ms: 50,
        };
        // 50 ms at 30 Hz is 1.5 samples
        assert!(spec.sample_counts(30.0).is_err());
    }

    #[test]
    fn consecutive_windows_overlap() {
        let windows = window_stream(&stream(60, 1, 200.0), 200.0, WindowSpec::default()).unwrap();
        // overlap is 150 ms = 30 samples
        assert_eq!(windows[0].channels[0][10..], windows[1].channels[0][..30]);
    }

    proptest! {
        #[test]
        fn windows_tile_with_constant_stride(n in 0usize..400, steps in 1u32..5) {
            let spec = WindowSpec { window_ms: 200, step_ms: 200 / [1, 2, 4, 5, 8][steps as usize % 5] };
            let rate = 200.0;
            let windows = window_stream(&stream(n, 2, rate), rate, spec).unwrap();
            let (w, s) = spec.sample_counts(rate).unwrap();
            let expected = if n < w { 0 } else { (n - w) / s + 1 };
            prop_assert_eq!(windows.len(), expected);
            for (k, win) in windows.iter().enumerate() {
                prop_assert_eq!(win.index, k);
                prop_assert_eq!(win.start_ms, (k as u32 * spec.step_ms) as f64);
            }
        }
    }
}
