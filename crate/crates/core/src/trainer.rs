//! Training loop, evaluation, sampling and metrics.
//!
//! Every window of every lane is predicted from the carried state of the
//! previous window; when the lanes reach the end of their length-`L`
//! sequences the whole batch draws new starts and the state goes back to
//! zero activity with a uniform previous prediction.
//!
//! Metrics are JSON lines, one per update:
//!
//! * `train_bpc` is the mean over the `B·S` predictions of that window.
//! * `smoothed_train_bpc` is an EMA with coefficient 0.99, started at the
//!   first window's value.
//! * `valid_bpc` is `null` except at evaluation points.
//! * `wallclock_seconds` is `null` unless timing was requested, so that
//!   identical runs produce identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backprop::{backward_window, GradMode};
use crate::checkpoint::Checkpoint;
use crate::corpus::{decode, encode, BatchCursor, Corpus, ShardStream, Split};
use crate::error::{Error, Result};
use crate::model::{
    forward_step, init_params, step_loss, CarryState, CellConvention, CellKind, ModelConfig, Params,
};
use crate::optimizer::{opt_step, OptConfig, OptState};
use crate::rng::SplitMix64;

pub const DEFAULT_BPTT: usize = 100;
pub const DEFAULT_BATCH: usize = 128;
pub const DEFAULT_SEQ_LEN: usize = 10_000;
pub const DEFAULT_HIDDEN: usize = 128;
pub const SMOOTHING: f64 = 0.99;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub data: PathBuf,
    pub batch: usize,
    /// Length `L` of the sequence each lane reads before resampling.
    pub seq_len: usize,
    pub steps: u64,
    /// Validation interval in updates; 0 disables periodic evaluation.
    pub eval_every: u64,
    pub seed: u64,
    pub mode: GradMode,
    pub opt: OptConfig,
    pub checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    /// Record elapsed seconds in the metrics (makes files run-dependent).
    pub wallclock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                cell: CellKind::Lstm,
                inputs: crate::corpus::VOCAB_SIZE,
                hidden: DEFAULT_HIDDEN,
                feedback: true,
                bptt: DEFAULT_BPTT,
                convention: CellConvention::Paper,
            },
            data: PathBuf::new(),
            batch: DEFAULT_BATCH,
            seq_len: DEFAULT_SEQ_LEN,
            steps: 1000,
            eval_every: 100,
            seed: 1,
            mode: GradMode::Exact,
            opt: OptConfig::default(),
            checkpoint: None,
            metrics: None,
            wallclock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.opt.validate()?;
        if self.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        if self.seq_len < self.model.bptt + 1 {
            return Err(Error::Config(format!(
                "sequence length {} must be at least bptt + 1 = {}",
                self.seq_len,
                self.model.bptt + 1
            )));
        }
        Ok(())
    }

    /// Seeds for parameter init and lane sampling, both derived from `seed`.
    fn derived_seeds(&self) -> (u64, u64) {
        let mut rng = SplitMix64::new(self.seed);
        (rng.next_u64(), rng.next_u64())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub chars_seen: u64,
    pub train_bpc: f64,
    pub smoothed_train_bpc: f64,
    pub valid_bpc: Option<f64>,
    pub wallclock_seconds: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: Params<f64>,
    pub opt: OptState<f64>,
    pub records: Vec<MetricsRecord>,
}

impl TrainOutcome {
    pub fn final_smoothed_bpc(&self) -> Option<f64> {
        self.records.last().map(|r| r.smoothed_train_bpc)
    }

    pub fn last_valid_bpc(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.valid_bpc)
    }
}

/// Loads `config.data` and trains on it.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    let corpus = Corpus::load(&config.data)?;
    train_on(&corpus, config)
}

pub fn train_on(corpus: &Corpus, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(corpus, config, |_| Ok(()))
}

/// [`train_on`] with a hook that sees every metrics record as it is made.
pub fn train_with<F>(
    corpus: &Corpus,
    config: &TrainConfig,
    mut on_record: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&MetricsRecord) -> Result<()>,
{
    config.validate()?;
    if config.model.inputs != crate::corpus::VOCAB_SIZE {
        return Err(Error::Config(format!(
            "byte corpora need M = {}, got {}",
            crate::corpus::VOCAB_SIZE,
            config.model.inputs
        )));
    }
    let model = &config.model;
    let (init_seed, cursor_seed) = config.derived_seeds();
    let mut params: Params<f64> = init_params(model, init_seed)?;
    let mut opt = OptState::new(model, &config.opt)?;
    let mut cursor = BatchCursor::new(config.batch, config.seq_len, model.bptt, cursor_seed)?;
    // Fail on unusable splits before doing any work.
    cursor.resample(corpus, Split::Train)?;
    if config.eval_every > 0 && config.steps >= config.eval_every {
        ShardStream::new(corpus, Split::Valid, config.batch, model.bptt)?;
    }
    let mut carry = CarryState::fresh(model, config.batch);

    let mut sink = match &config.metrics {
        Some(path) => Some(MetricsSink::create(path)?),
        None => None,
    };
    let save = |params: &Params<f64>, opt: &OptState<f64>| -> Result<()> {
        match &config.checkpoint {
            Some(path) => Checkpoint {
                config: *model,
                mode: config.mode,
                params: params.clone(),
                opt: opt.clone(),
            }
            .save(path),
            None => Ok(()),
        }
    };

    let started = Instant::now();
    let per_window = (config.batch * model.bptt) as u64;
    let mut chars_seen = 0u64;
    let mut smoothed: Option<f64> = None;
    let mut records = Vec::with_capacity(config.steps.min(1 << 20) as usize);

    for step in 1..=config.steps {
        if cursor.needs_resample() {
            cursor.resample(corpus, Split::Train)?;
            carry = CarryState::fresh(model, config.batch);
        }
        let window = cursor.next_window(corpus)?;
        let fp =
            crate::model::forward_window(&params, model, carry, &window.inputs, &window.targets)?;
        let loss = fp.total_loss();
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {step}")));
        }
        let grads = backward_window(&params, model, &fp.cache, &window.targets, config.mode)?;
        opt_step(&mut params, &grads.params, &mut opt, model)?;
        carry = fp.carry;
        chars_seen += per_window;

        let train_bpc = crate::model::bpc(loss, per_window as usize)?;
        let s = match smoothed {
            None => train_bpc,
            Some(prev) => SMOOTHING * prev + (1.0 - SMOOTHING) * train_bpc,
        };
        smoothed = Some(s);

        let eval_now = config.eval_every > 0 && step % config.eval_every == 0;
        let valid_bpc = if eval_now {
            Some(evaluate(&params, model, corpus, Split::Valid, config.batch)?.bpc)
        } else {
            None
        };
        let record = MetricsRecord {
            step,
            chars_seen,
            train_bpc,
            smoothed_train_bpc: s,
            valid_bpc,
            wallclock_seconds: config.wallclock.then(|| started.elapsed().as_secs_f64()),
        };
        if let Some(sink) = sink.as_mut() {
            sink.write(&record)?;
        }
        on_record(&record)?;
        records.push(record);
        if eval_now {
            save(&params, &opt)?;
        }
    }
    save(&params, &opt)?;
    if let Some(sink) = sink.as_mut() {
        sink.flush()?;
    }
    Ok(TrainOutcome {
        params,
        opt,
        records,
    })
}

struct MetricsSink {
    out: BufWriter<File>,
}

impl MetricsSink {
    /// Each run owns its metrics file: it is truncated, then only appended to.
    fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
        })
    }

    fn write(&mut self, r: &MetricsRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, r).map_err(std::io::Error::from)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        Ok(self.out.flush()?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub bpc: f64,
    pub nats: f64,
    pub predictions: usize,
}

/// Neumaier-compensated sum.
fn compensated_sum(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Forward-only bits per character over a whole split.
///
/// The split is read as `batch` contiguous shards in parallel lanes, each
/// starting from the fresh state. The mean is a corrected two-pass mean, so
/// a model that predicts uniformly scores exactly 8 bits.
pub fn evaluate(
    params: &Params<f64>,
    config: &ModelConfig,
    corpus: &Corpus,
    split: Split,
    batch: usize,
) -> Result<EvalResult> {
    params.check_shapes(config)?;
    let stream = ShardStream::new(corpus, split, batch, config.bptt)?;
    let mut losses = Vec::with_capacity(stream.predictions());
    let mut state = CarryState::fresh(config, batch);
    for window in stream {
        for (x, tgt) in window.inputs.iter().zip(&window.targets) {
            let rec = forward_step(params, config, &mut state, x)?;
            losses.extend(step_loss(&rec.p, tgt));
        }
    }
    let n = losses.len();
    if n == 0 {
        return Err(Error::ZeroCount);
    }
    let m0 = compensated_sum(losses.iter().copied()) / n as f64;
    let mean = m0 + compensated_sum(losses.iter().map(|l| l - m0)) / n as f64;
    if !mean.is_finite() {
        return Err(Error::NonFinite(format!("{split} loss")));
    }
    Ok(EvalResult {
        bpc: mean / std::f64::consts::LN_2,
        nats: mean * n as f64,
        predictions: n,
    })
}

/// Draws `length` bytes, feeding each draw back as the next input.
///
/// The first byte comes from the uniform start-of-sequence prediction.
pub fn sample(
    params: &Params<f64>,
    config: &ModelConfig,
    length: usize,
    seed: u64,
) -> Result<Vec<u8>> {
    params.check_shapes(config)?;
    let mut rng = SplitMix64::new(seed);
    let mut state = CarryState::fresh(config, 1);
    let mut out = Vec::with_capacity(length);
    for _ in 0..length {
        let p = state.p_prev.row(0);
        let u = rng.next_f64();
        let mut cum = 0.0;
        let mut pick = p.len() - 1;
        for (k, &pk) in p.iter().enumerate() {
            cum += pk;
            if u < cum {
                pick = k;
                break;
            }
        }
        let byte = decode(pick);
        out.push(byte);
        forward_step(params, config, &mut state, &[encode(byte)])?;
    }
    Ok(out)
}

/// Same run with feedback on and off; everything else (seed, data, budget,
/// initial W, U, W_y) is shared.
#[derive(Clone, Debug)]
pub struct FeedbackComparison {
    pub on: TrainOutcome,
    pub off: TrainOutcome,
    pub valid_on: EvalResult,
    pub valid_off: EvalResult,
}

impl FeedbackComparison {
    pub fn table(&self) -> String {
        let row = |name: &str, o: &TrainOutcome, v: &EvalResult| {
            format!(
                "{name:<12} {:>18.4} {:>12.4}\n",
                o.final_smoothed_bpc().unwrap_or(f64::NAN),
                v.bpc
            )
        };
        let mut s = format!(
            "{:<12} {:>18} {:>12}\n",
            "model", "smoothed train bpc", "valid bpc"
        );
        s += &row("feedback on", &self.on, &self.valid_on);
        s += &row("feedback off", &self.off, &self.valid_off);
        s
    }
}

pub fn compare_feedback(corpus: &Corpus, base: &TrainConfig) -> Result<FeedbackComparison> {
    let run = |feedback: bool| -> Result<(TrainOutcome, EvalResult)> {
        let mut c = base.clone();
        c.model.feedback = feedback;
        c.checkpoint = None;
        c.metrics = None;
        let o = train_on(corpus, &c)?;
        let v = evaluate(&o.params, &c.model, corpus, Split::Valid, c.batch)?;
        Ok((o, v))
    };
    let (on, valid_on) = run(true)?;
    let (off, valid_off) = run(false)?;
    Ok(FeedbackComparison {
        on,
        off,
        valid_on,
        valid_off,
    })
}
