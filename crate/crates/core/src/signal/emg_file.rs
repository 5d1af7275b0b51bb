//! Plain-text EMG recordings.
//!
//! ```text
//! emg/v1 channels=<C> rate=<Hz>
//! <a_0>,<a_1>,...,<a_{C-1}>
//! ...
//! ```
//!
//! Sample `i` has timestamp `i * 1000 / rate` ms. Amplitudes are written
//! with the shortest representation that parses back to the same `f64`.

use std::fmt::Write as _;
use std::path::Path;

use super::EmgSample;
use crate::error::{Error, Result};

const MAGIC: &str = "emg/v1";

#[derive(Debug, Clone, PartialEq)]
pub struct EmgRecording {
    pub channels: usize,
    pub rate_hz: f64,
    pub samples: Vec<EmgSample>,
}

impl EmgRecording {
    pub fn new(channels: usize, rate_hz: f64) -> Self {
        EmgRecording {
            channels,
            rate_hz,
            samples: Vec::new(),
        }
    }

    /// Append amplitudes, assigning the next timestamp.
    pub fn push(&mut self, amplitudes: Vec<f64>) {
        let timestamp_ms = self.samples.len() as f64 * 1000.0 / self.rate_hz;
        self.samples.push(EmgSample {
            channels: amplitudes,
            timestamp_ms,
        });
    }

    pub fn duration_ms(&self) -> f64 {
        self.samples.len() as f64 * 1000.0 / self.rate_hz
    }
}

pub fn parse_emg(text: &str, source: &Path) -> Result<EmgRecording> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(source, 1, "empty file, expected `emg/v1` header"))?;
    let (channels, rate_hz) = parse_header(header).map_err(|m| Error::parse(source, 1, m))?;

    let mut rec = EmgRecording::new(channels, rate_hz);
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let values = line
            .split(',')
            .map(|v| {
                let v = v.trim();
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::parse(source, line_no, format!("invalid amplitude `{v}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != channels {
            return Err(Error::parse(
                source,
                line_no,
                format!("expected {channels} channels, found {}", values.len()),
            ));
        }
        rec.push(values);
    }
    Ok(rec)
}

fn parse_header(header: &str) -> std::result::Result<(usize, f64), String> {
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(format!("expected `{MAGIC} channels=<C> rate=<Hz>` header"));
    }
    let mut channels = None;
    let mut rate = None;
    for part in parts {
        match part.split_once('=') {
            Some(("channels", v)) => {
                channels = Some(v.parse::<usize>().map_err(|_| format!("invalid channel count `{v}`"))?)
            }
            Some(("rate", v)) => rate = Some(v.parse::<f64>().map_err(|_| format!("invalid rate `{v}`"))?),
            _ => return Err(format!("unexpected header field `{part}`")),
        }
    }
    let channels = channels.filter(|c| *c > 0).ok_or("missing or zero `channels=`")?;
    let rate = rate
        .filter(|r| r.is_finite() && *r > 0.0)
        .ok_or("missing or non-positive `rate=`")?;
    Ok((channels, rate))
}

pub fn read_emg_file(path: impl AsRef<Path>) -> Result<EmgRecording> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_emg(&text, path)
}

pub fn write_emg(rec: &EmgRecording) -> String {
    let mut out = String::with_capacity(rec.samples.len() * rec.channels * 12);
    let _ = writeln!(out, "{MAGIC} channels={} rate={}", rec.channels, rec.rate_hz);
    for sample in &rec.samples {
        for (i, v) in sample.channels.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_emg_file(rec: &EmgRecording, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_emg(rec)).map_err(|e| Error::io(path, e))
}
