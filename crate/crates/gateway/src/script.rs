//! Timed command scripts.
//!
//! ```text
//! script/v1
//! # t_ms command [argument]
//! 0 start_calibration 3
//! 0 collect rest
//! 10000 collect hand_open
//! ```
//!
//! A command at `t_ms` is applied before the first sample whose timestamp
//! is at or after `t_ms`. Times must be non-decreasing.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{GatewayError, Result};
use crate::wire::{ClientCommand, Role};

pub const SCRIPT_HEADER: &str = "script/v1";

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptEntry {
    pub t_ms: u64,
    pub command: ClientCommand,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Script {
    pub entries: Vec<ScriptEntry>,
}

impl Script {
    pub fn new() -> Self {
        Script::default()
    }

    pub fn push(&mut self, t_ms: u64, command: ClientCommand) {
        self.entries.push(ScriptEntry { t_ms, command });
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| GatewayError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == SCRIPT_HEADER => {}
            _ => return Err(err(1, format!("expected header {SCRIPT_HEADER}"))),
        }
        let mut script = Script::new();
        let mut last = 0;
        for (i, raw) in lines {
            let lineno = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let t_ms: u64 = parts
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| err(lineno, "expected a time in milliseconds".into()))?;
            if t_ms < last {
                return Err(err(lineno, format!("time {t_ms} goes backwards")));
            }
            last = t_ms;
            let name = parts.next().ok_or_else(|| err(lineno, "missing command".into()))?;
            let arg = parts.next();
            if parts.next().is_some() {
                return Err(err(lineno, "too many arguments".into()));
            }
            let need = |arg: Option<&str>| {
                arg.map(str::to_string)
                    .ok_or_else(|| err(lineno, format!("{name} needs an argument")))
            };
            let command = match name {
                "start_calibration" => {
                    let session = need(arg)?
                        .parse()
                        .map_err(|_| err(lineno, "session must be an integer".into()))?;
                    ClientCommand::StartCalibration { session, seed: None }
                }
                "collect" => ClientCommand::Collect { movement: need(arg)? },
                "recalibrate" => ClientCommand::Recalibrate { movement: need(arg)? },
                "end_exploration" => ClientCommand::EndExploration {},
                "start_trial" => ClientCommand::StartTrial {},
                "subscribe" => ClientCommand::Subscribe { role: Role::Observer },
                other => return Err(err(lineno, format!("unknown command {other:?}"))),
            };
            if matches!(command, ClientCommand::EndExploration {} | ClientCommand::StartTrial {}) && arg.is_some() {
                return Err(err(lineno, format!("{name} takes no argument")));
            }
            script.push(t_ms, command);
        }
        Ok(script)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GatewayError::io(path, e))?;
        Script::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{SCRIPT_HEADER}\n");
        for e in &self.entries {
            let _ = match &e.command {
                ClientCommand::StartCalibration { session, .. } => {
                    writeln!(out, "{} start_calibration {session}", e.t_ms)
                }
                ClientCommand::Collect { movement } => writeln!(out, "{} collect {movement}", e.t_ms),
                ClientCommand::Recalibrate { movement } => writeln!(out, "{} recalibrate {movement}", e.t_ms),
                ClientCommand::EndExploration {} => writeln!(out, "{} end_exploration", e.t_ms),
                ClientCommand::StartTrial {} => writeln!(out, "{} start_trial", e.t_ms),
                ClientCommand::Subscribe { .. } => continue,
            };
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| GatewayError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_round_trips() {
        let text = "script/v1\n# comment\n0 start_calibration 3\n0 collect rest  # inline\n\n10000 collect hand_open\n20000 end_exploration\n20000 start_trial\n";
        let s = Script::parse(text, Path::new("a.script")).unwrap();
        assert_eq!(s.entries.len(), 5);
        assert_eq!(
            s.entries[0].command,
            ClientCommand::StartCalibration { session: 3, seed: None }
        );
        assert_eq!(s.entries[2].t_ms, 10000);
        assert_eq!(Script::parse(&s.to_text(), Path::new("b")).unwrap(), s);
    }

    #[test]
    fn diagnostics_name_file_and_line() {
        let cases = [
            ("nope\n", "a.script:1:"),
            ("script/v1\n0 collect\n", "a.script:2:"),
            ("script/v1\n5 collect rest\n3 collect rest\n", "a.script:3:"),
            ("script/v1\nx collect rest\n", "a.script:2:"),
            ("script/v1\n0 fly away\n", "a.script:2:"),
            ("script/v1\n0 start_trial now\n", "a.script:2:"),
        ];
        for (text, prefix) in cases {
            let e = Script::parse(text, Path::new("a.script")).unwrap_err().to_string();
            assert!(e.starts_with(prefix), "{text:?} -> {e}");
        }
    }
}
