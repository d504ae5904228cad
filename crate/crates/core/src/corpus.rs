//! Byte corpora, the 90/5/5 split, and batched next-byte windows.

use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Alphabet size: every byte value is its own symbol.
pub const VOCAB_SIZE: usize = 256;

#[inline]
pub fn encode(byte: u8) -> usize {
    byte as usize
}

#[inline]
pub fn decode(index: usize) -> u8 {
    u8::try_from(index).expect("symbol index below 256")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!(
                "unknown split '{other}' (expected train|valid|test)"
            )),
        }
    }
}

/// Raw bytes with contiguous train/valid/test ranges. Train gets
/// `floor(0.9 n)`, valid `floor(0.05 n)`, test the remainder.
#[derive(Clone, Debug)]
pub struct Corpus {
    bytes: Vec<u8>,
    train: Range<usize>,
    valid: Range<usize>,
    test: Range<usize>,
}

impl Corpus {
    pub const MIN_LEN: usize = 40;

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| Error::CorpusIo {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(bytes)
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        let n = bytes.len();
        if n < Self::MIN_LEN {
            return Err(Error::CorpusTooSmall {
                len: n,
                min: Self::MIN_LEN,
            });
        }
        let train_len = n * 9 / 10;
        let valid_len = n / 20;
        Ok(Self {
            bytes,
            train: 0..train_len,
            valid: train_len..train_len + valid_len,
            test: train_len + valid_len..n,
        })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Valid => self.valid.clone(),
            Split::Test => self.test.clone(),
        }
    }

    pub fn split_bytes(&self, split: Split) -> &[u8] {
        &self.bytes[self.range(split)]
    }
}

/// `S` timesteps of `B` lanes: `inputs[t][lane]` is the symbol fed at step
/// `t`, `targets[t][lane]` the symbol that follows it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Window {
    pub inputs: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
}

impl Window {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn batch(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn one_hot_inputs<T: Scalar>(&self) -> Vec<Matrix<T>> {
        self.inputs
            .iter()
            .map(|x| Matrix::one_hot(x, VOCAB_SIZE))
            .collect()
    }

    fn from_lanes(corpus: &[u8], lane_pos: &[usize], steps: usize) -> Self {
        let inputs = (0..steps)
            .map(|t| lane_pos.iter().map(|&p| encode(corpus[p + t])).collect())
            .collect();
        let targets = (0..steps)
            .map(|t| {
                lane_pos
                    .iter()
                    .map(|&p| encode(corpus[p + t + 1]))
                    .collect()
            })
            .collect();
        Self { inputs, targets }
    }
}

/// Per-lane read positions into randomly drawn length-`L` sequences.
#[derive(Clone, Debug)]
pub struct BatchCursor {
    lane_starts: Vec<usize>,
    lane_pos: Vec<usize>,
    batch: usize,
    seq_len: usize,
    window: usize,
    rng: SplitMix64,
}

impl BatchCursor {
    pub fn new(batch: usize, seq_len: usize, window: usize, seed: u64) -> Result<Self> {
        if batch == 0 || window == 0 {
            return Err(Error::Config("batch and window must be positive".into()));
        }
        if seq_len < window {
            return Err(Error::Config(format!(
                "sequence length {seq_len} is shorter than the window {window}"
            )));
        }
        Ok(Self {
            lane_starts: Vec::new(),
            lane_pos: Vec::new(),
            batch,
            seq_len,
            window,
            rng: SplitMix64::new(seed),
        })
    }

    pub fn lane_starts(&self) -> &[usize] {
        &self.lane_starts
    }

    pub fn lane_positions(&self) -> &[usize] {
        &self.lane_pos
    }

    /// Draws a fresh start for every lane, uniform over
    /// `[split_begin, split_end - L - 1]`, in lane order.
    pub fn resample(&mut self, corpus: &Corpus, split: Split) -> Result<()> {
        let range = corpus.range(split);
        let required = self.seq_len + 1;
        if range.len() < required {
            return Err(Error::SplitTooShort {
                split: split.name(),
                len: range.len(),
                required,
            });
        }
        let choices = (range.len() - required + 1) as u64;
        self.lane_starts = (0..self.batch)
            .map(|_| range.start + self.rng.below(choices) as usize)
            .collect();
        self.lane_pos = self.lane_starts.clone();
        Ok(())
    }

    /// True when the next window would read past a lane's sequence.
    pub fn needs_resample(&self) -> bool {
        match (self.lane_pos.first(), self.lane_starts.first()) {
            (Some(&p), Some(&s)) => p - s + self.window > self.seq_len,
            _ => true,
        }
    }

    pub fn next_window(&mut self, corpus: &Corpus) -> Result<Window> {
        if self.needs_resample() {
            return Err(Error::ResampleNeeded);
        }
        let w = Window::from_lanes(corpus.bytes(), &self.lane_pos, self.window);
        for p in &mut self.lane_pos {
            *p += self.window;
        }
        Ok(w)
    }
}

/// Sequential full-coverage reader for evaluation.
///
/// The split is cut into `B` contiguous shards of `floor(len / B)` bytes
/// (leftover bytes at the split's tail are dropped). Each shard yields
/// `shard_len - 1` predictions, served `S` steps at a time; the final window
/// of a shard may be shorter.
#[derive(Clone, Debug)]
pub struct ShardStream<'a> {
    bytes: &'a [u8],
    shard_starts: Vec<usize>,
    shard_len: usize,
    offset: usize,
    window: usize,
}

impl<'a> ShardStream<'a> {
    pub fn new(corpus: &'a Corpus, split: Split, batch: usize, window: usize) -> Result<Self> {
        if batch == 0 || window == 0 {
            return Err(Error::Config("batch and window must be positive".into()));
        }
        let range = corpus.range(split);
        let shard_len = range.len() / batch;
        if shard_len < 2 {
            return Err(Error::SplitTooShort {
                split: split.name(),
                len: range.len(),
                required: 2 * batch,
            });
        }
        Ok(Self {
            bytes: corpus.bytes(),
            shard_starts: (0..batch).map(|i| range.start + i * shard_len).collect(),
            shard_len,
            offset: 0,
            window,
        })
    }

    pub fn shard_len(&self) -> usize {
        self.shard_len
    }

    /// Total predictions across all shards.
    pub fn predictions(&self) -> usize {
        self.shard_starts.len() * (self.shard_len - 1)
    }
}

impl Iterator for ShardStream<'_> {
    type Item = Window;

    fn next(&mut self) -> Option<Window> {
        let remaining = self.shard_len - 1 - self.offset;
        if remaining == 0 {
            return None;
        }
        let steps = remaining.min(self.window);
        let pos: Vec<usize> = self.shard_starts.iter().map(|s| s + self.offset).collect();
        self.offset += steps;
        Some(Window::from_lanes(self.bytes, &pos, steps))
    }
}
