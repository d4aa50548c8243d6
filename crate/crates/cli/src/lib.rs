//! The `htlstm` command-line tool.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage error, 3 training
//! divergence, 4 I/O or model-file error.

pub mod config;
pub mod model_file;
pub mod verify;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{ArgAction, CommandFactory, Parser, Subcommand};
use htlstm_core::complexity::{preset, presets, sweep, to_csv, FormatConfig, Format};
use htlstm_core::train::{evaluate, train_with};
use htlstm_core::{Error as CoreError, InteriorSplit, LstmParams};
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, RunConfig};
use crate::verify::{run_verify, VerifyOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "htlstm", version, about = "Hierarchical Tucker LSTM toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check HT forward passes and gradients against dense and finite-difference oracles.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        forward_cases: usize,
        #[arg(long, default_value_t = 20)]
        gradient_cases: usize,
        #[arg(long, default_value_t = 10)]
        lstm_cases: usize,
        /// Corrupt one transfer tensor after the dense snapshot (negative control).
        #[arg(long)]
        inject_fault: bool,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print parameter and flop counts as a CSV table.
    Analyze {
        /// One of: figure3, ucf11-e2e, youtube-e2e, ucf11-cnn, hmdb51-cnn.
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        /// TOML file with in_shape, out_shape and optionally ranks, cp_rank, split.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated ranks to sweep, e.g. 2,4,8,16.
        #[arg(long, value_parser = parse_ranks)]
        ranks: Option<RankList>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train an HT-LSTM on the synthetic sequence task.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed for data, initialization and training order.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Model output path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Training log path (one JSON record per epoch).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Leave wall-clock times out of the log so reruns are byte-identical.
        #[arg(long, default_value_t = true, action = ArgAction::Set)]
        deterministic: bool,
    },
    /// Evaluate a saved model on the synthetic task.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankList(pub Vec<usize>);

/// Parses `2,4,8`.
pub fn parse_ranks(s: &str) -> Result<RankList, String> {
    let ranks: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| format!("'{t}' is not a rank")))
        .collect::<Result<_, _>>()?;
    if ranks.contains(&0) {
        return Err("ranks must be at least 1".into());
    }
    Ok(RankList(ranks))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    #[serde(default = "default_ranks")]
    pub ranks: Vec<usize>,
    #[serde(default = "one")]
    pub cp_rank: usize,
    #[serde(default)]
    pub split: InteriorSplit,
}

fn default_ranks() -> Vec<usize> {
    vec![2, 4, 8, 16]
}

fn one() -> usize {
    1
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let code = match e {
            ConfigError::Io { .. } => EXIT_IO,
            ConfigError::Invalid(_) => EXIT_USAGE,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        let code = match e {
            CoreError::Divergence { .. } => EXIT_DIVERGENCE,
            _ => EXIT_USAGE,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<model_file::ModelFileError> for Failure {
    fn from(e: model_file::ModelFileError) -> Self {
        Failure::new(EXIT_IO, e.to_string())
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(EXIT_IO, format!("cannot write {}: {e}", path.display()))
}

fn emit(out: &mut dyn Write, path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| io_failure(p, e)),
        None => out
            .write_all(text.as_bytes())
            .map_err(|e| Failure::new(EXIT_IO, format!("cannot write output: {e}"))),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn cmd_analyze(
    out: &mut dyn Write,
    preset_name: Option<&str>,
    config: Option<&Path>,
    ranks: Option<Vec<usize>>,
    out_path: Option<&Path>,
) -> Result<(), Failure> {
    let rows = if let Some(path) = config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::new(EXIT_IO, format!("cannot read {}: {e}", path.display())))?;
        let cfg: AnalyzeConfig = toml::from_str(&text).map_err(|e| Failure::new(EXIT_USAGE, format!("invalid analyze config: {e}")))?;
        let template = FormatConfig {
            split: cfg.split,
            cp_rank: cfg.cp_rank,
            ..FormatConfig::new(Format::Ht, &cfg.in_shape, &cfg.out_shape, 1)
        };
        sweep(&template, &ranks.unwrap_or(cfg.ranks))?
    } else {
        let name = preset_name.unwrap_or("figure3");
        let p = preset(name).ok_or_else(|| {
            let known: Vec<&str> = presets().iter().map(|p| p.name).collect();
            Failure::new(EXIT_USAGE, format!("unknown preset '{name}' (known: {})", known.join(", ")))
        })?;
        if ranks.is_some() || name == "figure3" {
            let template = FormatConfig::new(Format::Ht, &p.in_shape, &p.out_shape, 1);
            sweep(&template, &ranks.unwrap_or(p.ranks))?
        } else {
            p.report()?
        }
    };
    emit(out, out_path, &to_csv(&rows))
}

fn cmd_train(
    out: &mut dyn Write,
    config: Option<&Path>,
    seed: Option<u64>,
    epochs: Option<usize>,
    model_out: Option<PathBuf>,
    log_out: Option<PathBuf>,
    deterministic: bool,
) -> Result<(), Failure> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    cfg.train.record_time = !deterministic;
    let model_path = model_out.unwrap_or_else(|| cfg.output.model.clone());
    let log_path = log_out.unwrap_or_else(|| cfg.output.log.clone());

    let data = cfg.dataset.build()?;
    let mut model = LstmParams::new(&cfg.lstm_config())?;
    let log_file = File::create(&log_path).map_err(|e| io_failure(&log_path, e))?;
    let mut log = BufWriter::new(log_file);
    let mut write_err = None;
    let result = train_with(&mut model, &data, &cfg.train, |rec| {
        let line = serde_json::to_string(rec).expect("records serialize");
        if let Err(e) = writeln!(log, "{line}") {
            write_err.get_or_insert(e);
        }
    });
    if let Some(e) = write_err {
        return Err(io_failure(&log_path, e));
    }
    log.flush().map_err(|e| io_failure(&log_path, e))?;
    let records = result?;
    model_file::save_model(&model_path, &model)?;
    let summary = match records.last() {
        Some(r) => format!(
            "trained {} epochs: loss {:.6} train_acc {:.4} test_acc {:.4}\n",
            r.epoch, r.loss, r.train_acc, r.test_acc
        ),
        None => "trained 0 epochs: model holds the initialization\n".to_string(),
    };
    emit(out, None, &summary)?;
    emit(
        out,
        None,
        &format!("model written to {}\nlog written to {}\n", model_path.display(), log_path.display()),
    )
}

fn cmd_eval(out: &mut dyn Write, model: &Path, config: Option<&Path>, seed: Option<u64>) -> Result<(), Failure> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    let params = model_file::load_model(model)?;
    let data = cfg.dataset.build()?;
    if params.input_dim() != data.n || params.classes() != data.classes {
        return Err(Failure::new(
            EXIT_USAGE,
            format!(
                "model expects N={} and C={}, dataset has N={} and C={}",
                params.input_dim(),
                params.classes(),
                data.n,
                data.classes
            ),
        ));
    }
    let batch = cfg.train.batch_size;
    let (train_loss, train_acc) = evaluate(&params, &data.train, data.n, data.steps, batch)?;
    let (test_loss, test_acc) = evaluate(&params, &data.test, data.n, data.steps, batch)?;
    let line = serde_json::json!({
        "train_loss": train_loss,
        "train_acc": train_acc,
        "test_loss": test_loss,
        "test_acc": test_acc,
    });
    emit(out, None, &format!("{line}\n"))
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<i32, Failure> {
    match cli.command {
        Command::Verify {
            seed,
            forward_cases,
            gradient_cases,
            lstm_cases,
            inject_fault,
            out: path,
        } => {
            let report = run_verify(&VerifyOptions {
                seed,
                forward_cases,
                gradient_cases,
                lstm_cases,
                inject_fault,
            });
            emit(out, path.as_deref(), &report.text)?;
            Ok(if report.passed { EXIT_OK } else { EXIT_VERIFY })
        }
        Command::Analyze {
            preset,
            config,
            ranks,
            out: path,
        } => {
            cmd_analyze(out, preset.as_deref(), config.as_deref(), ranks.map(|r| r.0), path.as_deref())?;
            Ok(EXIT_OK)
        }
        Command::Train {
            config,
            seed,
            epochs,
            out: path,
            log,
            deterministic,
        } => {
            cmd_train(out, config.as_deref(), seed, epochs, path, log, deterministic)?;
            Ok(EXIT_OK)
        }
        Command::Eval { model, config, seed } => {
            cmd_eval(out, &model, config.as_deref(), seed)?;
            Ok(EXIT_OK)
        }
    }
}

/// Runs the tool on `args` (program name first) and returns the exit code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let mut text = e.render().to_string();
            if e.use_stderr() {
                if !text.contains("Usage:") {
                    text.push_str(&format!("\n{}\n", Cli::command().render_usage()));
                }
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            if f.code == EXIT_USAGE {
                let _ = writeln!(err, "run 'htlstm --help' for usage");
            }
            f.code
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}
