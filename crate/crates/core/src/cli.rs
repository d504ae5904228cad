//! Command-line front end.
//!
//! Exit status: 0 on success, 1 on a usage error, 2 on a runtime failure
//! (divergence, I/O, bad checkpoint, failed gradient check).

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::backprop::GradMode;
use crate::checkpoint::Checkpoint;
use crate::corpus::{Corpus, Split, VOCAB_SIZE};
use crate::error::{Error, Result};
use crate::gradcheck::{self, OraclePrecision};
use crate::model::{CellConvention, CellKind, ModelConfig};
use crate::optimizer::{OptConfig, DEFAULT_DECAY, DEFAULT_EPS, DEFAULT_LR};
use crate::trainer::{self, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "sfrnn",
    version,
    about = "Surprisal-feedback RNN/LSTM byte-level language models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model with truncated BPTT and windowed Adagrad.
    Train(TrainArgs),
    /// Bits per character of a checkpoint on one split.
    Eval(EvalArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Draw bytes from a checkpoint. An inspection aid only; it plays no part
    /// in training or evaluation.
    Sample(SampleArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Cell {
    Lstm,
    #[value(alias = "simple_rnn")]
    Rnn,
}

impl From<Cell> for CellKind {
    fn from(c: Cell) -> Self {
        match c {
            Cell::Lstm => CellKind::Lstm,
            Cell::Rnn => CellKind::SimpleRnn,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Exact,
    Paper,
}

impl From<Mode> for GradMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Exact => GradMode::Exact,
            Mode::Paper => GradMode::Paper,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Convention {
    /// `c = (1 - f)·c_prev + i·u`
    Paper,
    /// `c = f·c_prev + i·u`
    Standard,
}

impl From<Convention> for CellConvention {
    fn from(c: Convention) -> Self {
        match c {
            Convention::Paper => CellConvention::Paper,
            Convention::Standard => CellConvention::Standard,
        }
    }
}

fn parse_clip(s: &str) -> std::result::Result<Option<f64>, String> {
    if s == "off" {
        return Ok(None);
    }
    let v: f64 = s
        .parse()
        .map_err(|_| format!("'{s}' is not a number or 'off'"))?;
    if v.is_finite() && v > 0.0 {
        Ok(Some(v))
    } else {
        Err(format!("clip bound '{s}' must be positive"))
    }
}

fn parse_positive(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("'{s}' must be a positive number"))
    }
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    s.parse()
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Byte corpus, split 90/5/5 into train/valid/test.
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "lstm")]
    cell: Cell,
    #[arg(long, value_enum, default_value = "on")]
    feedback: Switch,
    /// Hidden units N.
    #[arg(long, default_value_t = trainer::DEFAULT_HIDDEN)]
    hidden: usize,
    /// BPTT window length S.
    #[arg(long, default_value_t = trainer::DEFAULT_BPTT)]
    bptt: usize,
    /// Parallel lanes B.
    #[arg(long, default_value_t = trainer::DEFAULT_BATCH)]
    batch: usize,
    /// Length L of the sequence each lane reads before resampling.
    #[arg(long = "seq-len", default_value_t = trainer::DEFAULT_SEQ_LEN)]
    seq_len: usize,
    #[arg(long, default_value_t = DEFAULT_LR, value_parser = parse_positive)]
    lr: f64,
    /// EMA coefficient of the squared-gradient accumulator.
    #[arg(long, default_value_t = DEFAULT_DECAY)]
    decay: f64,
    /// Denominator offset added after the square root.
    #[arg(long = "opt-eps", default_value_t = DEFAULT_EPS)]
    opt_eps: f64,
    /// Elementwise gradient clip bound, or `off`.
    #[arg(long, default_value = "off", value_parser = parse_clip)]
    clip: ::std::option::Option<f64>,
    #[arg(long = "grad-mode", value_enum, default_value = "exact")]
    grad_mode: Mode,
    #[arg(long = "cell-convention", value_enum, default_value = "paper")]
    cell_convention: Convention,
    /// Number of parameter updates.
    #[arg(long, default_value_t = 1000)]
    steps: u64,
    /// Validation interval in updates (0 disables).
    #[arg(long = "eval-every", default_value_t = 100)]
    eval_every: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Checkpoint written at every evaluation and at the end.
    #[arg(long, value_name = "PATH")]
    ckpt: Option<PathBuf>,
    /// JSON-lines metrics file (each run truncates it).
    #[arg(long, value_name = "PATH")]
    metrics: Option<PathBuf>,
    /// Record elapsed seconds in the metrics; runs are then no longer
    /// byte-for-byte reproducible.
    #[arg(long)]
    wallclock: bool,
    /// Print the resolved configuration as JSON before running.
    #[arg(long = "print-config")]
    print_config: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    ckpt: PathBuf,
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// train, valid or test.
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    /// Number of contiguous shards read in parallel.
    #[arg(long, default_value_t = trainer::DEFAULT_BATCH)]
    batch: usize,
    /// Expected cell; the checkpoint must match when given.
    #[arg(long, value_enum)]
    cell: Option<Cell>,
    /// Expected hidden size; the checkpoint must match when given.
    #[arg(long)]
    hidden: Option<usize>,
    /// Expected feedback setting; the checkpoint must match when given.
    #[arg(long, value_enum)]
    feedback: Option<Switch>,
    #[arg(long = "cell-convention", value_enum)]
    cell_convention: Option<Convention>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "lstm")]
    cell: Cell,
    #[arg(long, value_enum, default_value = "on")]
    feedback: Switch,
    #[arg(long = "grad-mode", value_enum, default_value = "exact")]
    grad_mode: Mode,
    #[arg(long = "cell-convention", value_enum, default_value = "paper")]
    cell_convention: Convention,
    /// Alphabet size M of the random problem.
    #[arg(long, default_value_t = 5)]
    inputs: usize,
    #[arg(long, default_value_t = 4)]
    hidden: usize,
    #[arg(long, default_value_t = 4)]
    bptt: usize,
    #[arg(long, default_value_t = gradcheck::SMALL_BATCH)]
    batch: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Finite-difference step.
    #[arg(long, default_value_t = gradcheck::DEFAULT_EPS, value_parser = parse_positive)]
    eps: f64,
    /// Largest accepted relative error.
    #[arg(long = "tol", default_value_t = gradcheck::DEFAULT_TOLERANCE, value_parser = parse_positive)]
    tolerance: f64,
    /// Arithmetic for the perturbed loss evaluations: dd or f64.
    #[arg(long, default_value = "dd")]
    oracle: OraclePrecision,
    /// Run the exact-mode sweep on all four cell × feedback combinations.
    #[arg(long)]
    all: bool,
    /// Print JSON instead of the text report.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long, value_name = "PATH")]
    ckpt: PathBuf,
    /// Number of bytes to draw.
    #[arg(long, default_value_t = 200)]
    length: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match dispatch(cli.command, &mut out) {
        Ok(code) => code,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
        Command::Sample(a) => cmd_sample(a, out),
    }
}

fn train_config(a: &TrainArgs) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            cell: a.cell.into(),
            inputs: VOCAB_SIZE,
            hidden: a.hidden,
            feedback: a.feedback.on(),
            bptt: a.bptt,
            convention: a.cell_convention.into(),
        },
        data: a.data.clone(),
        batch: a.batch,
        seq_len: a.seq_len,
        steps: a.steps,
        eval_every: a.eval_every,
        seed: a.seed,
        mode: a.grad_mode.into(),
        opt: OptConfig {
            lr: a.lr,
            decay: a.decay,
            eps: a.opt_eps,
            clip: a.clip,
        },
        checkpoint: a.ckpt.clone(),
        metrics: a.metrics.clone(),
        wallclock: a.wallclock,
    }
}

/// Flat JSON view of a training configuration.
pub fn config_json(c: &TrainConfig) -> serde_json::Value {
    json!({
        "data": c.data.display().to_string(),
        "cell": c.model.cell.name(),
        "cell_convention": c.model.convention.name(),
        "feedback": c.model.feedback,
        "inputs": c.model.inputs,
        "hidden": c.model.hidden,
        "bptt": c.model.bptt,
        "batch": c.batch,
        "seq_len": c.seq_len,
        "lr": c.opt.lr,
        "decay": c.opt.decay,
        "opt_eps": c.opt.eps,
        "clip": c.opt.clip,
        "grad_mode": c.mode.name(),
        "steps": c.steps,
        "eval_every": c.eval_every,
        "seed": c.seed,
        "ckpt": c.checkpoint.as_ref().map(|p| p.display().to_string()),
        "metrics": c.metrics.as_ref().map(|p| p.display().to_string()),
        "wallclock": c.wallclock,
    })
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let config = train_config(&a);
    if a.print_config {
        writeln!(out, "{}", config_json(&config))?;
    }
    config.validate()?;
    let corpus = Corpus::load(&config.data)?;
    trainer::train_with(&corpus, &config, |r| {
        serde_json::to_writer(&mut *out, r).map_err(std::io::Error::from)?;
        writeln!(out)?;
        Ok(())
    })?;
    Ok(EXIT_OK)
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let ck = Checkpoint::load(&a.ckpt)?;
    let mut expected = ck.config;
    if let Some(c) = a.cell {
        expected.cell = c.into();
    }
    if let Some(n) = a.hidden {
        expected.hidden = n;
    }
    if let Some(f) = a.feedback {
        expected.feedback = f.on();
    }
    if let Some(c) = a.cell_convention {
        expected.convention = c.into();
    }
    ck.expect_shape(&expected)?;
    let corpus = Corpus::load(&a.data)?;
    let r = trainer::evaluate(&ck.params, &ck.config, &corpus, a.split, a.batch)?;
    writeln!(out, "{}", r.bpc)?;
    Ok(EXIT_OK)
}

fn cmd_gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let cells: Vec<(CellKind, bool)> = if a.all {
        [CellKind::SimpleRnn, CellKind::Lstm]
            .into_iter()
            .flat_map(|c| [(c, true), (c, false)])
            .collect()
    } else {
        vec![(a.cell.into(), a.feedback.on())]
    };
    let mut all_pass = true;
    let mut reports = Vec::new();
    for (cell, feedback) in cells {
        let config = ModelConfig {
            cell,
            inputs: a.inputs,
            hidden: a.hidden,
            feedback,
            bptt: a.bptt,
            convention: a.cell_convention.into(),
        };
        let r = gradcheck::check_with(
            &config,
            a.batch,
            a.seed,
            a.grad_mode.into(),
            a.eps,
            a.tolerance,
            a.oracle,
        )?;
        all_pass &= r.pass;
        if !a.json {
            writeln!(out, "{r}")?;
        }
        reports.push(r);
    }
    if a.json {
        let v = if a.all {
            serde_json::to_string(&json!({ "pass": all_pass, "reports": reports }))
        } else {
            serde_json::to_string(&reports[0])
        };
        writeln!(out, "{}", v.map_err(|e| Error::Format(e.to_string()))?)?;
    }
    Ok(if all_pass { EXIT_OK } else { EXIT_RUNTIME })
}

fn cmd_sample(a: SampleArgs, out: &mut dyn Write) -> Result<i32> {
    let ck = Checkpoint::load(&a.ckpt)?;
    let bytes = trainer::sample(&ck.params, &ck.config, a.length, a.seed)?;
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(EXIT_OK)
}
