use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use drivewatch_core::alerts::{OperatingMode, VisualForm, VisualPosition};
use drivewatch_core::features::{FeatureParams, WindowSpec};
use drivewatch_core::model::{IrregularityModel, KMeansConfig, SweepConfig, TrainConfig};
use drivewatch_core::pipeline::{PipelineConfig, PipelineOutput};
use drivewatch_core::service::commands::{
    eval_corpus, feature_dump, load_corpus, sweep_corpus, train_corpus, TrainOptions,
};
use drivewatch_core::service::replay::{load_privacy_script, write_alert_log};
use drivewatch_core::service::{replay_session, ReplayClock, Server, ServerContext};
use drivewatch_core::synth::{generate_corpus, SynthOptions};
use drivewatch_core::telemetry::{load_session, save_session, Group};

#[derive(Parser)]
#[command(name = "drivewatch", version, about = "Driving-state monitoring: train, evaluate, replay and serve")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Copy)]
struct WindowArgs {
    /// Window length in milliseconds.
    #[arg(long, default_value_t = 10_000)]
    window_ms: u64,
    /// Fractional overlap between consecutive windows.
    #[arg(long, default_value_t = 0.5)]
    overlap: f64,
}

impl WindowArgs {
    fn spec(self) -> Result<WindowSpec> {
        Ok(WindowSpec::new(self.window_ms, self.overlap)?)
    }
}

#[derive(clap::Args, Clone, Copy)]
struct SessionArgs {
    #[arg(long, default_value = "experience")]
    mode: OperatingMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    position: Option<VisualPosition>,
    #[arg(long)]
    form: Option<VisualForm>,
}

impl SessionArgs {
    fn config(self, window: WindowSpec) -> PipelineConfig {
        let mut cfg = PipelineConfig { window, mode: self.mode, seed: self.seed, ..PipelineConfig::default() };
        if let Some(p) = self.position {
            cfg.presentation.visual_position = p;
        }
        if let Some(f) = self.form {
            cfg.presentation.visual_form = f;
        }
        cfg
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a directory of recorded sessions.
    Train {
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long, default_value = "non_pd")]
        baseline_group: Group,
        #[arg(long)]
        out: PathBuf,
        /// Also write the training report here.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        window: WindowArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Label every window of every session and summarise agreement.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        window: WindowArgs,
    },
    /// Replay a recorded session and write its alert log.
    Replay {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Playback speed; `inf` disables pacing.
        #[arg(long, default_value_t = f64::INFINITY)]
        speed: f64,
        #[arg(long)]
        emit: PathBuf,
        #[arg(long)]
        privacy_script: Option<PathBuf>,
        /// Also write every window outcome here as NDJSON.
        #[arg(long)]
        windows: Option<PathBuf>,
        #[command(flatten)]
        window: WindowArgs,
        #[command(flatten)]
        session_args: SessionArgs,
    },
    /// Retrain at several window lengths and rank them.
    Sweep {
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1000,3000,5000,10000")]
        lengths: Vec<u64>,
        #[arg(long, default_value_t = 0.5)]
        overlap: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the live wire service.
    Serve {
        #[arg(long)]
        port: u16,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Write per-session alert logs here.
        #[arg(long)]
        log_dir: Option<PathBuf>,
        #[command(flatten)]
        window: WindowArgs,
        #[command(flatten)]
        session_args: SessionArgs,
    },
    /// Write a synthetic session corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 9)]
        irregular: usize,
        #[arg(long, default_value_t = 13)]
        regular: usize,
        #[arg(long, default_value_t = 600)]
        duration_s: u64,
        #[arg(long, default_value_t = 0.0)]
        gaze_loss: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Dump per-window buffer reports and features as NDJSON.
    Features {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        window: WindowArgs,
    },
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Prints to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn load_model(path: &Path) -> Result<Arc<IrregularityModel>> {
    Ok(Arc::new(IrregularityModel::load(path).with_context(|| format!("loading model {}", path.display()))?))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { sessions, baseline_group, out, report, window, seed } => {
            let corpus = load_corpus(&sessions)?;
            let opts = TrainOptions {
                window: window.spec()?,
                baseline_group,
                train: TrainConfig { kmeans: KMeansConfig { seed, ..KMeansConfig::default() } },
                ..TrainOptions::default()
            };
            let (model, rep) = train_corpus(&corpus, &opts)?;
            for w in &rep.warnings {
                log::warn!("{w}");
            }
            model.save(&out)?;
            emit(&serde_json::to_string_pretty(&rep)?)?;
            if let Some(p) = report {
                write_json(&p, &rep)?;
            }
        }
        Command::Eval { model, sessions, report, window } => {
            let model = load_model(&model)?;
            let corpus = load_corpus(&sessions)?;
            let rep = eval_corpus(&model, &corpus, &window.spec()?, &FeatureParams::default())?;
            write_json(&report, &rep)?;
            if let Some(a) = rep.agreement {
                println!("agreement {:.4} over {} windows", a, rep.judged_windows);
            }
        }
        Command::Replay { session, model, speed, emit, privacy_script, windows, window, session_args } => {
            let record = load_session(&session)?;
            let model = model.as_deref().map(load_model).transpose()?;
            let privacy = privacy_script.as_deref().map(load_privacy_script).transpose()?.unwrap_or_default();
            let clock = ReplayClock::new(speed)?;
            let cfg = session_args.config(window.spec()?);
            let mut window_log = windows.as_deref().map(fs::File::create).transpose()?.map(io::BufWriter::new);
            let mut write_err = None;
            let alerts = replay_session(&record, model, &cfg, &privacy, &clock, |o| {
                if let (Some(w), PipelineOutput::Window { .. }) = (window_log.as_mut(), o) {
                    if let Err(e) = writeln!(w, "{}", serde_json::to_string(o).expect("output serializes")) {
                        write_err.get_or_insert(e);
                    }
                }
            })?;
            if let Some(e) = write_err {
                return Err(e.into());
            }
            if let Some(mut w) = window_log {
                w.flush()?;
            }
            write_alert_log(&alerts, &emit)?;
            let presented = alerts.iter().filter(|a| a.presented()).count();
            println!("{} alerts ({} presented, {} suppressed)", alerts.len(), presented, alerts.len() - presented);
        }
        Command::Sweep { sessions, lengths, overlap, seed, report } => {
            if lengths.is_empty() {
                bail!("no window lengths given");
            }
            let corpus = load_corpus(&sessions)?;
            let mut cfg = SweepConfig { overlap_frac: overlap, ..SweepConfig::default() };
            cfg.train.kmeans.seed = seed;
            let rep = sweep_corpus(&corpus, &lengths, &cfg)?;
            emit(&serde_json::to_string_pretty(&rep)?)?;
            if let Some(p) = report {
                write_json(&p, &rep)?;
            }
        }
        Command::Serve { port, model, host, log_dir, window, session_args } => {
            let model = model.as_deref().map(load_model).transpose()?;
            let ctx = ServerContext::new(model, session_args.config(window.spec()?));
            let mut server = Server::bind((host.as_str(), port), ctx)?;
            if let Some(d) = log_dir {
                server = server.with_log_dir(d);
            }
            println!("listening on {}", server.local_addr()?);
            server.run()?;
        }
        Command::Synth { out, irregular, regular, duration_s, gaze_loss, seed } => {
            let opts = SynthOptions { duration_ms: duration_s * 1000, gaze_loss, scenarios: true };
            let corpus = generate_corpus(irregular, regular, seed, &opts);
            fs::create_dir_all(&out)?;
            for s in &corpus {
                save_session(s, &out.join(&s.meta.session_id))?;
            }
            println!("wrote {} sessions to {}", corpus.len(), out.display());
        }
        Command::Features { session, out, window } => {
            let record = load_session(&session)?;
            let dump = feature_dump(&record, &window.spec()?, &FeatureParams::default())?;
            match out {
                Some(p) => fs::write(&p, dump).with_context(|| format!("writing {}", p.display()))?,
                None => emit(dump.trim_end())?,
            }
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
