//! Central finite-difference oracle for the analytic backward pass.
//!
//! Every perturbed evaluation reruns the whole window from the same fresh
//! state (zero activity, uniform first prediction), so the numeric gradient
//! sees the full surprisal chain the analytic pass differentiates.

use std::fmt;

use serde::Serialize;
use twofloat::TwoFloat;

use crate::backprop::{backward_window, GradMode};
use crate::error::{Error, Result};
use crate::model::{
    forward_window, init_params, CarryState, CellConvention, CellKind, ModelConfig, ParamBlock,
    Params,
};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

// twofloat's own exp/ln/tanh are only good to ~1e-12 and its division to
// ~1e-17, so the oracle uses these instead.
impl Scalar for TwoFloat {
    fn div_acc(self, rhs: Self) -> Self {
        dd_div(self, rhs)
    }

    fn exp_acc(self) -> Self {
        dd_exp(self)
    }

    fn ln_acc(self) -> Self {
        if !(self.hi().is_finite() && self.hi() > 0.0) {
            return TwoFloat::from(self.hi().ln());
        }
        // One Newton step on exp(y) = x doubles the digits of the f64 guess.
        let y = TwoFloat::from(self.hi().ln());
        y + self * dd_exp(-y) - 1.0
    }

    fn tanh_acc(self) -> Self {
        let e = dd_exp(self.abs() * -2.0);
        let t = dd_div(TwoFloat::from(1.0) - e, e + 1.0);
        if self.hi() < 0.0 {
            -t
        } else {
            t
        }
    }
}

/// Long division: three f64 quotient digits, each taken from the remainder.
fn dd_div(a: TwoFloat, b: TwoFloat) -> TwoFloat {
    let bh = b.hi();
    if bh == 0.0 || !bh.is_finite() || !a.hi().is_finite() {
        return TwoFloat::from(a.hi() / bh);
    }
    let q1 = a.hi() / bh;
    let r = a - b * q1;
    let q2 = r.hi() / bh;
    let r = r - b * q2;
    let q3 = r.hi() / bh;
    TwoFloat::new_add(q1, q2) + q3
}

fn dd_exp(x: TwoFloat) -> TwoFloat {
    const SQUARINGS: i32 = 10;
    let hi = x.hi();
    if hi.is_nan() {
        return x;
    }
    if hi > 709.0 {
        return TwoFloat::from(f64::INFINITY);
    }
    if hi < -745.0 {
        return TwoFloat::from(0.0);
    }
    let ln2 = TwoFloat::new_add(std::f64::consts::LN_2, 2.319_046_813_846_299_6e-17);
    let k = (hi / std::f64::consts::LN_2).round();
    let r = (x - ln2 * k) * 2f64.powi(-SQUARINGS);
    // |r| < 3.4e-4, so 12 Taylor terms are far below double-double resolution.
    let mut term = TwoFloat::from(1.0);
    let mut sum = TwoFloat::from(1.0);
    for n in 1..=12 {
        term = term * r / n as f64;
        sum += term;
    }
    for _ in 0..SQUARINGS {
        sum = sum * sum;
    }
    // Split the power of two so neither factor over- or underflows.
    let k = k as i32;
    let half = k / 2;
    sum * 2f64.powi(half) * 2f64.powi(k - half)
}

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
/// Denominator floor in [`relative_error`].
pub const REL_FLOOR: f64 = 1e-8;

/// Arithmetic used for the perturbed loss evaluations.
///
/// In `f64` the loss of a small window carries ~1e-15 of rounding noise,
/// which central differences at ε = 1e-5 turn into ~5e-11 of absolute error
/// on every numeric gradient. Coordinates whose true gradient is below about
/// 1e-4 then cannot meet a 1e-6 relative tolerance no matter how correct the
/// analytic pass is. Double-double evaluation pushes that floor below the
/// O(ε²) truncation term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OraclePrecision {
    F64,
    #[default]
    DoubleDouble,
}

impl OraclePrecision {
    pub fn name(self) -> &'static str {
        match self {
            OraclePrecision::F64 => "f64",
            OraclePrecision::DoubleDouble => "double-double",
        }
    }
}

impl std::str::FromStr for OraclePrecision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "f64" => Ok(OraclePrecision::F64),
            "dd" | "double-double" => Ok(OraclePrecision::DoubleDouble),
            other => Err(format!(
                "unknown oracle precision '{other}' (expected dd|f64)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Coordinate {
    pub block: ParamBlock,
    pub index: usize,
}

/// `(L(θ + ε e) - L(θ - ε e)) / 2ε` for the coordinate `e`.
pub fn numeric_grad<T, F>(loss_fn: F, params: &Params<T>, coord: Coordinate, eps: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&Params<T>) -> Result<T>,
{
    if eps <= T::zero() {
        return Err(Error::Config(
            "finite-difference step must be positive".into(),
        ));
    }
    let mut probe = params.clone();
    let theta = params.block(coord.block).as_slice()[coord.index];
    probe.block_mut(coord.block).as_mut_slice()[coord.index] = theta + eps;
    let plus = loss_fn(&probe)?;
    probe.block_mut(coord.block).as_mut_slice()[coord.index] = theta - eps;
    let minus = loss_fn(&probe)?;
    if !plus.is_finite() || !minus.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss at perturbed {}[{}]",
            coord.block, coord.index
        )));
    }
    Ok((plus - minus) / (eps + eps))
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Total window loss from a fresh state.
pub fn window_loss<T: Scalar>(
    params: &Params<T>,
    config: &ModelConfig,
    inputs: &[Vec<usize>],
    targets: &[Vec<usize>],
) -> Result<T> {
    let batch = inputs.first().map_or(0, Vec::len);
    let fp = forward_window(
        params,
        config,
        CarryState::fresh(config, batch),
        inputs,
        targets,
    )?;
    Ok(fp.total_loss())
}

/// A hermetic problem: parameters plus a seeded random symbol stream.
#[derive(Clone, Debug)]
pub struct CheckProblem<T> {
    pub config: ModelConfig,
    pub params: Params<T>,
    pub inputs: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
}

impl<T: Scalar> CheckProblem<T> {
    pub fn new(config: ModelConfig, batch: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SplitMix64::new(seed);
        let params = init_params(&config, rng.next_u64())?;
        let stream: Vec<Vec<usize>> = (0..=config.bptt)
            .map(|_| {
                (0..batch)
                    .map(|_| rng.below(config.inputs as u64) as usize)
                    .collect()
            })
            .collect();
        Ok(Self {
            config,
            params,
            inputs: stream[..config.bptt].to_vec(),
            targets: stream[1..].to_vec(),
        })
    }

    pub fn loss(&self, params: &Params<T>) -> Result<T> {
        window_loss(params, &self.config, &self.inputs, &self.targets)
    }

    /// Same problem with every parameter converted to another scalar type.
    pub fn convert<U: Scalar>(&self) -> CheckProblem<U> {
        let conv = |m: &Matrix<T>| {
            Matrix::from_vec(
                m.rows(),
                m.cols(),
                m.as_slice()
                    .iter()
                    .map(|&v| U::from_f64_lossy(v.to_f64_lossy()))
                    .collect(),
            )
            .expect("same shape")
        };
        let mut params = Params::<U>::zeros(&self.config);
        for k in ParamBlock::ALL {
            *params.block_mut(k) = conv(self.params.block(k));
        }
        CheckProblem {
            config: self.config,
            params,
            inputs: self.inputs.clone(),
            targets: self.targets.clone(),
        }
    }

    /// Central difference of the window loss at one coordinate, as `f64`.
    pub fn numeric_grad(&self, coord: Coordinate, eps: f64) -> Result<f64> {
        let g = numeric_grad(
            |p: &Params<T>| self.loss(p),
            &self.params,
            coord,
            T::from_f64_lossy(eps),
        )?;
        Ok(g.to_f64_lossy())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockReport {
    pub block: String,
    pub max_rel_error: f64,
    /// `(row, col)` of the worst coordinate.
    pub argmax: (usize, usize),
    pub analytic_at_max: f64,
    pub numeric_at_max: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub fingerprint: String,
    pub mode: String,
    pub oracle: String,
    pub batch: usize,
    pub seed: u64,
    pub eps: f64,
    pub tolerance: f64,
    pub blocks: Vec<BlockReport>,
    pub pass: bool,
}

impl CheckReport {
    pub fn block(&self, which: ParamBlock) -> Option<&BlockReport> {
        self.blocks.iter().find(|b| b.block == which.name())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "gradcheck {} B={} mode={} oracle={} eps={:e} tol={:e} seed={}",
            self.fingerprint,
            self.batch,
            self.mode,
            self.oracle,
            self.eps,
            self.tolerance,
            self.seed
        )?;
        for b in &self.blocks {
            writeln!(
                f,
                "  {:<4} max_rel_err={:.3e} at ({}, {}) analytic={:+.6e} numeric={:+.6e} {}",
                b.block,
                b.max_rel_error,
                b.argmax.0,
                b.argmax.1,
                b.analytic_at_max,
                b.numeric_at_max,
                if b.pass { "ok" } else { "FAIL" }
            )?;
        }
        write!(f, "  overall {}", if self.pass { "PASS" } else { "FAIL" })
    }
}

/// [`check_with`] using the double-double oracle.
pub fn check(
    config: &ModelConfig,
    batch: usize,
    seed: u64,
    mode: GradMode,
    eps: f64,
    tolerance: f64,
) -> Result<CheckReport> {
    check_with(
        config,
        batch,
        seed,
        mode,
        eps,
        tolerance,
        OraclePrecision::default(),
    )
}

/// Sweeps every coordinate of every parameter block and compares the
/// analytic (`f64`) window gradient with central differences.
pub fn check_with(
    config: &ModelConfig,
    batch: usize,
    seed: u64,
    mode: GradMode,
    eps: f64,
    tolerance: f64,
    oracle: OraclePrecision,
) -> Result<CheckReport> {
    let problem = CheckProblem::<f64>::new(*config, batch, seed)?;
    let fp = forward_window(
        &problem.params,
        config,
        CarryState::fresh(config, batch),
        &problem.inputs,
        &problem.targets,
    )?;
    let grads = backward_window(&problem.params, config, &fp.cache, &problem.targets, mode)?;

    let wide = problem.convert::<TwoFloat>();
    let numeric = |coord| match oracle {
        OraclePrecision::F64 => problem.numeric_grad(coord, eps),
        OraclePrecision::DoubleDouble => wide.numeric_grad(coord, eps),
    };
    let mut blocks = Vec::with_capacity(ParamBlock::ALL.len());
    for block in ParamBlock::ALL {
        let analytic = grads.params.block(block);
        let cols = analytic.cols();
        let mut worst = BlockReport {
            block: block.name().to_string(),
            max_rel_error: 0.0,
            argmax: (0, 0),
            analytic_at_max: 0.0,
            numeric_at_max: 0.0,
            pass: true,
        };
        for index in 0..analytic.len() {
            let a = analytic.as_slice()[index];
            let n = numeric(Coordinate { block, index })?;
            let err = relative_error(a, n);
            if err > worst.max_rel_error || index == 0 {
                worst.max_rel_error = err;
                worst.argmax = (index / cols, index % cols);
                worst.analytic_at_max = a;
                worst.numeric_at_max = n;
            }
        }
        worst.pass = worst.max_rel_error <= tolerance;
        blocks.push(worst);
    }
    Ok(CheckReport {
        fingerprint: config.fingerprint(),
        mode: mode.name().to_string(),
        oracle: oracle.name().to_string(),
        batch,
        seed,
        eps,
        tolerance,
        pass: blocks.iter().all(|b| b.pass),
        blocks,
    })
}

/// The standard small problem: M=5, N=4, S=4 (checked at B=2).
pub fn small_config(cell: CellKind, feedback: bool) -> ModelConfig {
    ModelConfig {
        cell,
        inputs: 5,
        hidden: 4,
        feedback,
        bptt: 4,
        convention: CellConvention::Paper,
    }
}

pub const SMALL_BATCH: usize = 2;

/// Exact-mode sweep over {rnn, lstm} × {feedback on, off}. The library only
/// counts as healthy when all four pass.
pub fn self_test(seed: u64) -> Result<(bool, Vec<CheckReport>)> {
    let mut reports = Vec::with_capacity(4);
    for cell in [CellKind::SimpleRnn, CellKind::Lstm] {
        for feedback in [true, false] {
            reports.push(check(
                &small_config(cell, feedback),
                SMALL_BATCH,
                seed,
                GradMode::Exact,
                DEFAULT_EPS,
                DEFAULT_TOLERANCE,
            )?);
        }
    }
    Ok((reports.iter().all(|r| r.pass), reports))
}
