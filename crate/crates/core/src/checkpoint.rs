//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! "SFRN"  version:u8 = 1
//! cell:u8 (0 = rnn, 1 = lstm, 2 = lstm with the standard forget convention)
//! feedback:u8  grad_mode:u8 (0 = exact, 1 = paper)
//! M:u32  N:u32  S:u32
//! W U V b W_y b_y                 as f64, row-major
//! accumulators in the same order  as f64
//! decay lr eps                    as f64
//! ```
//!
//! Files are written to a sibling temporary and renamed into place, so an
//! interrupted save never clobbers the previous checkpoint.

use std::fs;
use std::path::{Path, PathBuf};

use crate::backprop::GradMode;
use crate::error::{Error, Result};
use crate::model::{CellConvention, CellKind, ModelConfig, ParamBlock, Params};
use crate::optimizer::OptState;

pub const MAGIC: &[u8; 4] = b"SFRN";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 3 + 12;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub mode: GradMode,
    pub params: Params<f64>,
    pub opt: OptState<f64>,
}

fn cell_byte(c: &ModelConfig) -> u8 {
    match (c.cell, c.convention) {
        (CellKind::SimpleRnn, _) => 0,
        (CellKind::Lstm, CellConvention::Paper) => 1,
        (CellKind::Lstm, CellConvention::Standard) => 2,
    }
}

fn shape_string(c: &ModelConfig) -> String {
    c.fingerprint()
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format(format!(
                "truncated file: {what} needs {n} bytes at offset {}, only {} remain",
                self.pos,
                self.buf.len() - self.pos
            ))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, out: &mut [f64], what: &str) -> Result<()> {
        let raw = self.take(out.len() * 8, what)?;
        for (o, chunk) in out.iter_mut().zip(raw.chunks_exact(8)) {
            *o = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(HEADER_LEN + 16 * self.params.total_len() + 24);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(cell_byte(c));
        out.push(c.feedback as u8);
        out.push(match self.mode {
            GradMode::Exact => 0,
            GradMode::Paper => 1,
        });
        for d in [c.inputs, c.hidden, c.bptt] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for set in [&self.params, &self.opt.acc] {
            for k in ParamBlock::ALL {
                for v in set.block(k).as_slice() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        for v in [self.opt.decay, self.opt.lr, self.opt.eps] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {magic:02x?}, expected \"SFRN\""
            )));
        }
        let version = r.u8("version")?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported version {version}, this build reads {VERSION}"
            )));
        }
        let (cell, convention) = match r.u8("cell kind")? {
            0 => (CellKind::SimpleRnn, CellConvention::Paper),
            1 => (CellKind::Lstm, CellConvention::Paper),
            2 => (CellKind::Lstm, CellConvention::Standard),
            b => return Err(Error::Format(format!("unknown cell kind byte {b}"))),
        };
        let feedback = match r.u8("feedback flag")? {
            0 => false,
            1 => true,
            b => {
                return Err(Error::Format(format!(
                    "feedback flag byte {b} is not 0 or 1"
                )))
            }
        };
        let mode = match r.u8("grad mode")? {
            0 => GradMode::Exact,
            1 => GradMode::Paper,
            b => return Err(Error::Format(format!("unknown grad mode byte {b}"))),
        };
        let inputs = r.u32("M")? as usize;
        let hidden = r.u32("N")? as usize;
        let bptt = r.u32("S")? as usize;
        let config = ModelConfig {
            cell,
            inputs,
            hidden,
            feedback,
            bptt,
            convention,
        };
        config
            .validate()
            .map_err(|e| Error::Format(format!("header describes an invalid model: {e}")))?;

        // Size check before allocating anything proportional to the header.
        // u32 dimensions cannot overflow u128 here.
        let (m, n, g) = (inputs as u128, hidden as u128, config.gate_width() as u128);
        let per_set = m * g + n * g + 2 * g + n * m + m;
        let expected = HEADER_LEN as u128 + 8 * (2 * per_set + 3);
        let have = buf.len() as u128;
        if have < expected {
            return Err(Error::Format(format!(
                "truncated file: {have} bytes, header {} implies {expected}",
                config.fingerprint()
            )));
        }
        if have > expected {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload for {}",
                have - expected,
                config.fingerprint()
            )));
        }

        let mut params = Params::zeros(&config);
        let mut acc = Params::zeros(&config);
        for k in ParamBlock::ALL {
            r.f64s(params.block_mut(k).as_mut_slice(), k.name())?;
        }
        for k in ParamBlock::ALL {
            r.f64s(acc.block_mut(k).as_mut_slice(), k.name())?;
        }
        let mut hyper = [0.0; 3];
        r.f64s(&mut hyper, "optimizer hyperparameters")?;
        let [decay, lr, eps] = hyper;
        Ok(Self {
            config,
            mode,
            params,
            opt: OptState {
                acc,
                decay,
                lr,
                eps,
                clip: None,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |source| Error::CheckpointIo {
            path: path.to_path_buf(),
            source,
        };
        let mut tmp: PathBuf = path.to_path_buf();
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".tmp");
        tmp.set_file_name(name);
        fs::write(&tmp, self.to_bytes()).map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|source| Error::CheckpointIo {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&buf)
    }

    /// Fails unless the stored model has exactly the shape `expected`.
    pub fn expect_shape(&self, expected: &ModelConfig) -> Result<()> {
        let a = &self.config;
        let same = a.cell == expected.cell
            && a.inputs == expected.inputs
            && a.hidden == expected.hidden
            && a.feedback == expected.feedback
            && (a.cell == CellKind::SimpleRnn || a.convention == expected.convention);
        if same {
            Ok(())
        } else {
            Err(Error::CheckpointShape {
                found: shape_string(a),
                expected: shape_string(expected),
            })
        }
    }
}
