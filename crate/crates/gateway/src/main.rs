use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use tokio::net::TcpListener;

use myoreview::signal::{read_emg_file, write_emg_file};
use myoreview_gateway::commands::{self, ReplayOutputs};
use myoreview_gateway::record::{record_session, RecordPlan};
use myoreview_gateway::replay::{config_for, Driver};
use myoreview_gateway::script::Script;
use myoreview_gateway::server::{serve, ServeOptions, BIND_ENV, DEFAULT_BIND};
use myoreview_gateway::{Engine, EngineConfig};

#[derive(Parser)]
#[command(
    name = "myoreview",
    version,
    about = "Myoelectric training loop: replay, assess, simulate and serve"
)]
struct Cli {
    /// Engine settings (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Inputs {
    /// Raw EMG recording (emg/v1).
    #[arg(long)]
    input: PathBuf,
    /// Timed commands (script/v1). Defaults to the input with a .script extension.
    #[arg(long)]
    script: Option<PathBuf>,
}

impl Inputs {
    fn script_path(&self) -> PathBuf {
        self.script
            .clone()
            .unwrap_or_else(|| self.input.with_extension("script"))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Replay calibration and write the fitted model.
    Calibrate {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Replay through exploration and print NR and NTT.
    Explore {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        log: Option<PathBuf>,
        /// Write the final model here.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run FLT trials over a recording and print CR/OT/PE/TP.
    Assess {
        /// Session number (1-11); selects the stage and trial count.
        #[arg(long)]
        session: Option<u32>,
        #[arg(long)]
        input: PathBuf,
        /// Decode with this model instead of replaying a script.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        script: Option<PathBuf>,
        /// Target seed (model mode).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Separability sweeps and synthetic session recordings.
    Simulate {
        /// Sweep definition (TOML); prints one CSV row per level.
        #[arg(long, conflicts_with = "record")]
        sweep: Option<PathBuf>,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Record a synthetic session into this directory.
        #[arg(long)]
        record: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        session: u32,
        /// Class spacing in units of the within-class jitter.
        #[arg(long, default_value_t = 6.0)]
        level: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Limit the FLT block to this many trials.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Replay a recorded session; write the session log and wire transcript.
    Replay {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Recompute NR, NTT and FLT metrics from a session log.
    Report {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        csv: bool,
    },
    /// Serve the reviewer/v1 protocol over WebSocket at /ws.
    Serve {
        #[arg(long, env = BIND_ENV, default_value = DEFAULT_BIND)]
        bind: String,
        /// Recording to stream; without it the engine waits for input.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        script: Option<PathBuf>,
        /// Playback speed; 0 streams as fast as possible.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Start streaming when the first client connects.
        #[arg(long)]
        wait: bool,
    },
}

fn load_config(path: Option<&Path>) -> anyhow::Result<EngineConfig> {
    Ok(match path {
        Some(p) => EngineConfig::read(p)?,
        None => EngineConfig::default(),
    })
}

fn load_script(path: &Path, required: bool) -> anyhow::Result<Script> {
    if !required && !path.exists() {
        return Ok(Script::new());
    }
    Ok(Script::read(path)?)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let config = load_config(cli.config.as_deref())?;
    let replay_inputs = |inputs: &Inputs| -> anyhow::Result<_> {
        let recording = read_emg_file(&inputs.input)?;
        let script = load_script(&inputs.script_path(), true)?;
        Ok(commands::strict_replay(&recording, &script, &config)?)
    };
    match cli.command {
        Command::Calibrate { inputs, model, log } => {
            let r = replay_inputs(&inputs)?;
            commands::write_outputs(
                &r,
                &ReplayOutputs {
                    log: log.as_deref(),
                    transcript: None,
                },
            )?;
            print!("{}", commands::calibrate(&r, &model)?);
        }
        Command::Explore { inputs, log, model } => {
            let r = replay_inputs(&inputs)?;
            commands::write_outputs(
                &r,
                &ReplayOutputs {
                    log: log.as_deref(),
                    transcript: None,
                },
            )?;
            print!("{}", commands::explore(&r, model.as_deref())?);
        }
        Command::Assess {
            session,
            input,
            model,
            script,
            seed,
        } => {
            let config = EngineConfig {
                seed: seed.unwrap_or(config.seed),
                ..config.clone()
            };
            match model {
                Some(model) => {
                    let Some(session) = session else {
                        bail!("--session is required with --model")
                    };
                    let recording = read_emg_file(&input)?;
                    print!("{}", commands::assess_model(&recording, &model, session, &config)?);
                }
                None => {
                    let script_path = script.unwrap_or_else(|| input.with_extension("script"));
                    if !script_path.exists() {
                        bail!("no model given and no script at {}", script_path.display());
                    }
                    let recording = read_emg_file(&input)?;
                    let r = commands::strict_replay(&recording, &Script::read(&script_path)?, &config)?;
                    if let (Some(want), Some(s)) = (session, r.engine.session()) {
                        if s.stage().session_index != want {
                            bail!("script runs session {}, not {want}", s.stage().session_index);
                        }
                    }
                    print!("{}", commands::assess_replay(&r)?);
                }
            }
        }
        Command::Simulate {
            sweep,
            out,
            record,
            session,
            level,
            seed,
            trials,
        } => match (sweep, record) {
            (Some(sweep), _) => {
                let csv = commands::simulate_sweep(&sweep)?;
                match out {
                    Some(p) => std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?,
                    None => print!("{csv}"),
                }
            }
            (None, Some(dir)) => {
                let plan = RecordPlan {
                    session_index: session,
                    level,
                    seed,
                    trials,
                    ..RecordPlan::default()
                };
                let rec = record_session(&plan, &config)?;
                if let Some(e) = rec.rejected.first() {
                    bail!("recording rejected a command: {e}");
                }
                std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                let emg = dir.join("session.emg");
                write_emg_file(&rec.recording, &emg)?;
                rec.script.write(dir.join("session.script"))?;
                println!(
                    "wrote {} ({} samples) and {}",
                    emg.display(),
                    rec.recording.samples.len(),
                    dir.join("session.script").display()
                );
            }
            (None, None) => bail!("simulate needs --sweep or --record"),
        },
        Command::Replay {
            inputs,
            log,
            transcript,
        } => {
            let recording = read_emg_file(&inputs.input)?;
            let script = load_script(&inputs.script_path(), true)?;
            let r = myoreview_gateway::replay::replay(&recording, &script, &config)?;
            commands::write_outputs(
                &r,
                &ReplayOutputs {
                    log: log.as_deref(),
                    transcript: transcript.as_deref(),
                },
            )?;
            println!("{} messages", r.transcript.len());
            for e in &r.errors {
                eprintln!("rejected {}: {}", e.command.as_deref().unwrap_or("?"), e.message);
            }
            if !r.errors.is_empty() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Report { log, csv } => {
            let (text, consistent) = commands::report(&log, csv)?;
            print!("{text}");
            if !consistent {
                eprintln!("recomputed figures differ from the logged ones");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Serve {
            bind,
            input,
            script,
            speed,
            wait,
        } => {
            let (engine_config, driver) = match input {
                Some(input) => {
                    let recording = read_emg_file(&input)?;
                    let script = match script {
                        Some(p) => Script::read(p)?,
                        None => load_script(&input.with_extension("script"), false)?,
                    };
                    (config_for(&recording, &config), Some(Driver::new(recording, script)))
                }
                None => (config.clone(), None),
            };
            let engine = Engine::new(engine_config)?;
            let options = ServeOptions {
                speed,
                wait_for_subscriber: wait,
                ..ServeOptions::default()
            };
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                let listener = TcpListener::bind(&bind)
                    .await
                    .with_context(|| format!("binding {bind}"))?;
                let server = serve(listener, engine, driver, options).await?;
                println!("listening on ws://{}/ws", server.addr);
                tokio::signal::ctrl_c().await?;
                server.abort();
                anyhow::Ok(())
            })?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
