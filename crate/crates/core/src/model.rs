//! Parameters, initialization and the forward pass.
//!
//! Both cells take the previous step's surprisal as an extra input. With
//! `p_{t-1}` the prediction made one step earlier and `x_t` the symbol that
//! actually arrived,
//!
//! ```text
//! s_t = -ln p_{t-1}[x_t]                       (one scalar per lane)
//! z_t = x_t·W + h_{t-1}·U + s_t·V + b          (V is one row per gate block)
//! ```
//!
//! The simple RNN sets `h_t = tanh(z_t)`. The LSTM splits `z_t` into gate
//! blocks `[i | f | o | u]` and updates
//!
//! ```text
//! c_t = (1 - f_t)⊙c_{t-1} + i_t⊙u_t            (CellConvention::Paper)
//! c_t =      f_t ⊙c_{t-1} + i_t⊙u_t            (CellConvention::Standard)
//! h_t = o_t ⊙ tanh(c_t)
//! ```
//!
//! Outputs are `p_t = softmax(h_t·W_y + b_y)`, scored against the next symbol
//! and fed to the following step's surprisal.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::scalar::{sigmoid, Scalar};
use crate::tensor::{self, Matrix};

/// Probabilities are floored here (then renormalized) so `ln p` stays finite.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CellKind {
    SimpleRnn,
    Lstm,
}

impl CellKind {
    /// Number of gate blocks stacked along the columns of W, U, V and b.
    pub fn blocks(self) -> usize {
        match self {
            CellKind::SimpleRnn => 1,
            CellKind::Lstm => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellKind::SimpleRnn => "rnn",
            CellKind::Lstm => "lstm",
        }
    }
}

impl FromStr for CellKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "rnn" | "simple_rnn" => Ok(CellKind::SimpleRnn),
            "lstm" => Ok(CellKind::Lstm),
            other => Err(format!("unknown cell '{other}' (expected lstm|rnn)")),
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How the forget gate enters the LSTM cell update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum CellConvention {
    /// `c_t = (1 - f_t)⊙c_{t-1} + i_t⊙u_t`
    #[default]
    Paper,
    /// `c_t = f_t⊙c_{t-1} + i_t⊙u_t`
    Standard,
}

impl CellConvention {
    pub fn name(self) -> &'static str {
        match self {
            CellConvention::Paper => "paper",
            CellConvention::Standard => "standard",
        }
    }
}

impl FromStr for CellConvention {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "paper" => Ok(CellConvention::Paper),
            "standard" => Ok(CellConvention::Standard),
            other => Err(format!(
                "unknown cell convention '{other}' (expected paper|standard)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub cell: CellKind,
    /// Alphabet size `M`.
    pub inputs: usize,
    /// Hidden units `N`.
    pub hidden: usize,
    pub feedback: bool,
    /// BPTT window length `S`.
    pub bptt: usize,
    pub convention: CellConvention,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inputs < 2 {
            return Err(Error::Config(format!("input count {} < 2", self.inputs)));
        }
        if self.hidden < 1 {
            return Err(Error::Config("hidden count must be at least 1".into()));
        }
        if self.bptt < 2 {
            return Err(Error::Config(format!("bptt length {} < 2", self.bptt)));
        }
        Ok(())
    }

    /// Width of the concatenated gate pre-activation.
    pub fn gate_width(&self) -> usize {
        self.cell.blocks() * self.hidden
    }

    /// Short human-readable identity, e.g. `lstm/paper fb=on M=256 N=128 S=100`.
    pub fn fingerprint(&self) -> String {
        let cell = match self.cell {
            CellKind::Lstm => format!("lstm/{}", self.convention.name()),
            CellKind::SimpleRnn => "rnn".to_string(),
        };
        format!(
            "{cell} fb={} M={} N={} S={}",
            if self.feedback { "on" } else { "off" },
            self.inputs,
            self.hidden,
            self.bptt
        )
    }
}

/// Names of the trainable blocks, in checkpoint order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamBlock {
    W,
    U,
    V,
    B,
    Wy,
    By,
}

impl ParamBlock {
    pub const ALL: [ParamBlock; 6] = [
        ParamBlock::W,
        ParamBlock::U,
        ParamBlock::V,
        ParamBlock::B,
        ParamBlock::Wy,
        ParamBlock::By,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamBlock::W => "W",
            ParamBlock::U => "U",
            ParamBlock::V => "V",
            ParamBlock::B => "b",
            ParamBlock::Wy => "W_y",
            ParamBlock::By => "b_y",
        }
    }
}

impl fmt::Display for ParamBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Six matrices with the same shapes as [`Params`]. Used for parameters,
/// their gradients and optimizer accumulators alike.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    /// `M × G` input weights.
    pub w: Matrix<T>,
    /// `N × G` recurrent weights.
    pub u: Matrix<T>,
    /// `1 × G` surprisal feedback weights.
    pub v: Matrix<T>,
    /// `1 × G` gate biases.
    pub b: Matrix<T>,
    /// `N × M` output projection.
    pub wy: Matrix<T>,
    /// `1 × M` output bias.
    pub by: Matrix<T>,
}

pub type Params<T> = ParamSet<T>;

impl<T: Scalar> ParamSet<T> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let (m, n, g) = (config.inputs, config.hidden, config.gate_width());
        Self {
            w: Matrix::zeros(m, g),
            u: Matrix::zeros(n, g),
            v: Matrix::zeros(1, g),
            b: Matrix::zeros(1, g),
            wy: Matrix::zeros(n, m),
            by: Matrix::zeros(1, m),
        }
    }

    pub fn block(&self, which: ParamBlock) -> &Matrix<T> {
        match which {
            ParamBlock::W => &self.w,
            ParamBlock::U => &self.u,
            ParamBlock::V => &self.v,
            ParamBlock::B => &self.b,
            ParamBlock::Wy => &self.wy,
            ParamBlock::By => &self.by,
        }
    }

    pub fn block_mut(&mut self, which: ParamBlock) -> &mut Matrix<T> {
        match which {
            ParamBlock::W => &mut self.w,
            ParamBlock::U => &mut self.u,
            ParamBlock::V => &mut self.v,
            ParamBlock::B => &mut self.b,
            ParamBlock::Wy => &mut self.wy,
            ParamBlock::By => &mut self.by,
        }
    }

    pub fn total_len(&self) -> usize {
        ParamBlock::ALL.iter().map(|&k| self.block(k).len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        ParamBlock::ALL.iter().all(|&k| self.block(k).is_finite())
    }

    /// Checks every block against the shapes implied by `config`.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let expect = Self::zeros(config);
        for k in ParamBlock::ALL {
            let (have, want) = (self.block(k), expect.block(k));
            if have.shape() != want.shape() {
                return Err(Error::Shape {
                    op: k.name(),
                    lhs: have.shape(),
                    rhs: want.shape(),
                });
            }
        }
        Ok(())
    }
}

/// Xavier-uniform weights and zero biases, except the LSTM forget-gate bias
/// block which starts at 1.
///
/// W, U, V and W_y are each drawn from `±sqrt(6 / (rows + cols))` of the
/// whole concatenated matrix, in that order, row-major, from one SplitMix64
/// stream. V is drawn even without feedback and then zeroed, so models that
/// differ only in the feedback flag start from identical W, U and W_y.
pub fn init_params<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<Params<T>> {
    config.validate()?;
    let mut p = Params::zeros(config);
    let mut rng = SplitMix64::new(seed);
    for k in [ParamBlock::W, ParamBlock::U, ParamBlock::V, ParamBlock::Wy] {
        let m = p.block_mut(k);
        let bound = (6.0 / (m.rows() + m.cols()) as f64).sqrt();
        for x in m.as_mut_slice() {
            *x = T::from_f64_lossy(rng.uniform_f64(-bound, bound));
        }
    }
    if !config.feedback {
        p.v.fill(T::zero());
    }
    if config.cell == CellKind::Lstm {
        let n = config.hidden;
        for x in &mut p.b.as_mut_slice()[n..2 * n] {
            *x = T::one();
        }
    }
    Ok(p)
}

/// State handed from one window to the next.
#[derive(Clone, Debug, PartialEq)]
pub struct CarryState<T> {
    /// `B × N`
    pub h: Matrix<T>,
    /// `B × N`; all zeros and unused for the simple RNN.
    pub c: Matrix<T>,
    /// `B × M` last prediction.
    pub p_prev: Matrix<T>,
}

impl<T: Scalar> CarryState<T> {
    /// Start-of-sequence state: zero activity and a uniform prediction.
    pub fn fresh(config: &ModelConfig, batch: usize) -> Self {
        let uniform = T::one().div_acc(T::from_usize_lossy(config.inputs));
        Self {
            h: Matrix::zeros(batch, config.hidden),
            c: Matrix::zeros(batch, config.hidden),
            p_prev: Matrix::filled(batch, config.inputs, uniform),
        }
    }

    pub fn batch(&self) -> usize {
        self.h.rows()
    }
}

/// Activations of one timestep, kept for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord<T> {
    /// Input symbol per lane (the one-hot `x_t`).
    pub x: Vec<usize>,
    /// `B × 1` surprisal.
    pub s: Matrix<T>,
    /// `B × G` post-nonlinearity gates: `[i | f | o | u]` for the LSTM,
    /// `h_t` itself for the simple RNN.
    pub gates: Matrix<T>,
    /// `B × N` cell state (zeros for the simple RNN).
    pub c: Matrix<T>,
    /// `B × N` `tanh(c_t)` (zeros for the simple RNN).
    pub c_hat: Matrix<T>,
    pub h: Matrix<T>,
    pub y: Matrix<T>,
    pub p: Matrix<T>,
}

/// All steps of one window plus the state the window started from.
#[derive(Clone, Debug, PartialEq)]
pub struct StepCache<T> {
    pub initial: CarryState<T>,
    pub steps: Vec<StepRecord<T>>,
}

impl<T: Scalar> StepCache<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn h_prev(&self, t: usize) -> &Matrix<T> {
        if t == 0 {
            &self.initial.h
        } else {
            &self.steps[t - 1].h
        }
    }

    pub fn c_prev(&self, t: usize) -> &Matrix<T> {
        if t == 0 {
            &self.initial.c
        } else {
            &self.steps[t - 1].c
        }
    }

    pub fn p_prev(&self, t: usize) -> &Matrix<T> {
        if t == 0 {
            &self.initial.p_prev
        } else {
            &self.steps[t - 1].p
        }
    }
}

/// `s[i] = -Σ_j ln(p_prev[i, j]) · x[i, j]` for a general (one-hot) `x`.
pub fn surprisal<T: Scalar>(p_prev: &Matrix<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    if p_prev.shape() != x.shape() {
        return Err(Error::Shape {
            op: "surprisal",
            lhs: p_prev.shape(),
            rhs: x.shape(),
        });
    }
    let mut s = Matrix::zeros(p_prev.rows(), 1);
    for i in 0..p_prev.rows() {
        let mut acc = T::zero();
        for (&p, &xi) in p_prev.row(i).iter().zip(x.row(i)) {
            if xi != T::zero() {
                // NaN passes through and is caught as a non-finite loss.
                assert!(
                    p > T::zero() || p.is_nan(),
                    "zero probability on an observed symbol"
                );
                acc -= p.ln_acc() * xi;
            }
        }
        s.set(i, 0, acc);
    }
    Ok(s)
}

/// Surprisal for symbol indices: `s[i] = -ln p_prev[i, x[i]]`.
pub fn surprisal_at<T: Scalar>(p_prev: &Matrix<T>, x: &[usize]) -> Matrix<T> {
    assert_eq!(p_prev.rows(), x.len(), "surprisal: lane count");
    let mut s = Matrix::zeros(x.len(), 1);
    for (i, &k) in x.iter().enumerate() {
        let p = p_prev.get(i, k);
        // NaN passes through and is caught as a non-finite loss.
        assert!(
            p > T::zero() || p.is_nan(),
            "zero probability on an observed symbol"
        );
        s.set(i, 0, -p.ln_acc());
    }
    s
}

/// `x·W + h_prev·U (+ s·V) + b`, summed in that order.
pub fn gate_preactivation<T: Scalar>(
    params: &Params<T>,
    config: &ModelConfig,
    h_prev: &Matrix<T>,
    x: &[usize],
    s: &Matrix<T>,
) -> Result<Matrix<T>> {
    let batch = x.len();
    if h_prev.shape() != (batch, config.hidden) || s.shape() != (batch, 1) {
        return Err(Error::Shape {
            op: "gate_preactivation",
            lhs: h_prev.shape(),
            rhs: s.shape(),
        });
    }
    let mut z = tensor::gather_rows(&params.w, x);
    let hu = tensor::matmul(h_prev, &params.u)?;
    z.add_assign(&hu)?;
    if config.feedback {
        let g = z.cols();
        let v = params.v.as_slice();
        for (row, &si) in z.as_mut_slice().chunks_exact_mut(g).zip(s.as_slice()) {
            for (zj, &vj) in row.iter_mut().zip(v) {
                *zj += si * vj;
            }
        }
    }
    tensor::row_broadcast_add_assign(&mut z, &params.b)?;
    Ok(z)
}

/// Simple RNN update `h_t = tanh(x·W + h_prev·U + s·V + b)`.
pub fn rnn_step<T: Scalar>(
    params: &Params<T>,
    config: &ModelConfig,
    h_prev: &Matrix<T>,
    x: &[usize],
    s: &Matrix<T>,
) -> Result<Matrix<T>> {
    let mut z = gate_preactivation(params, config, h_prev, x, s)?;
    tensor::map_in_place(&mut z, tensor::Activation::Tanh);
    Ok(z)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmStep<T> {
    pub gates: Matrix<T>,
    pub c: Matrix<T>,
    pub c_hat: Matrix<T>,
    pub h: Matrix<T>,
}

pub fn lstm_step<T: Scalar>(
    params: &Params<T>,
    config: &ModelConfig,
    h_prev: &Matrix<T>,
    c_prev: &Matrix<T>,
    x: &[usize],
    s: &Matrix<T>,
) -> Result<LstmStep<T>> {
    let n = config.hidden;
    if c_prev.shape() != h_prev.shape() {
        return Err(Error::Shape {
            op: "lstm_step",
            lhs: h_prev.shape(),
            rhs: c_prev.shape(),
        });
    }
    let mut gates = gate_preactivation(params, config, h_prev, x, s)?;
    let batch = gates.rows();
    let mut c = Matrix::zeros(batch, n);
    let mut c_hat = Matrix::zeros(batch, n);
    let mut h = Matrix::zeros(batch, n);
    for r in 0..batch {
        let g = gates.row_mut(r);
        for v in &mut g[..3 * n] {
            *v = sigmoid(*v);
        }
        for v in &mut g[3 * n..] {
            *v = v.tanh_acc();
        }
        let (i, rest) = g.split_at(n);
        let (f, rest) = rest.split_at(n);
        let (o, u) = rest.split_at(n);
        let cp = c_prev.row(r);
        let c_row = c.row_mut(r);
        for j in 0..n {
            let keep = match config.convention {
                CellConvention::Paper => T::one() - f[j],
                CellConvention::Standard => f[j],
            };
            c_row[j] = keep * cp[j] + i[j] * u[j];
        }
        let ch = c_hat.row_mut(r);
        for j in 0..n {
            ch[j] = c_row[j].tanh_acc();
        }
        let h_row = h.row_mut(r);
        for j in 0..n {
            h_row[j] = o[j] * ch[j];
        }
    }
    Ok(LstmStep { gates, c, c_hat, h })
}

/// `y = h·W_y + b_y` and its row-wise softmax, floored at [`PROB_FLOOR`].
pub fn output_probs<T: Scalar>(
    params: &Params<T>,
    h: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    let mut y = tensor::matmul(h, &params.wy)?;
    tensor::row_broadcast_add_assign(&mut y, &params.by)?;
    let p = softmax_rows(&y);
    Ok((y, p))
}

/// Max-shifted softmax per row. Rows with any entry below the floor are
/// clamped and renormalized; other rows are left exactly as computed.
pub fn softmax_rows<T: Scalar>(y: &Matrix<T>) -> Matrix<T> {
    let floor = T::from_f64_lossy(PROB_FLOOR);
    let mut p = y.clone();
    let m = y.cols();
    if m == 0 {
        return p;
    }
    for row in p.as_mut_slice().chunks_exact_mut(m) {
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp_acc();
            sum += *v;
        }
        let mut clamped = false;
        for v in row.iter_mut() {
            *v = v.div_acc(sum);
            if *v < floor {
                *v = floor;
                clamped = true;
            }
        }
        if clamped {
            let total = row.iter().fold(T::zero(), |a, &b| a + b);
            row.iter_mut().for_each(|v| *v = v.div_acc(total));
        }
    }
    p
}

/// Runs one timestep from `state`, advancing it in place.
pub fn forward_step<T: Scalar>(
    params: &Params<T>,
    config: &ModelConfig,
    state: &mut CarryState<T>,
    x: &[usize],
) -> Result<StepRecord<T>> {
    let s = surprisal_at(&state.p_prev, x);
    let (gates, c, c_hat, h) = match config.cell {
        CellKind::SimpleRnn => {
            let h = rnn_step(params, config, &state.h, x, &s)?;
            let z = Matrix::zeros(h.rows(), h.cols());
            (h.clone(), z.clone(), z, h)
        }
        CellKind::Lstm => {
            let st = lstm_step(params, config, &state.h, &state.c, x, &s)?;
            (st.gates, st.c, st.c_hat, st.h)
        }
    };
    let (y, p) = output_probs(params, &h)?;
    state.h.clone_from(&h);
    state.c.clone_from(&c);
    state.p_prev.clone_from(&p);
    Ok(StepRecord {
        x: x.to_vec(),
        s,
        gates,
        c,
        c_hat,
        h,
        y,
        p,
    })
}

/// Cross-entropy `-ln p[i, target[i]]` per lane.
pub fn step_loss<T: Scalar>(p: &Matrix<T>, targets: &[usize]) -> Vec<T> {
    targets
        .iter()
        .enumerate()
        .map(|(i, &k)| -p.get(i, k).ln_acc())
        .collect()
}

#[derive(Clone, Debug)]
pub struct ForwardPass<T> {
    pub cache: StepCache<T>,
    /// Summed cross-entropy per lane, in nats.
    pub loss: Vec<T>,
    pub carry: CarryState<T>,
}

impl<T: Scalar> ForwardPass<T> {
    pub fn total_loss(&self) -> T {
        self.loss.iter().fold(T::zero(), |a, &b| a + b)
    }
}

/// Forward pass over a window, keeping every step for backprop.
pub fn forward_window<T: Scalar>(
    params: &Params<T>,
    config: &ModelConfig,
    carry: CarryState<T>,
    inputs: &[Vec<usize>],
    targets: &[Vec<usize>],
) -> Result<ForwardPass<T>> {
    if inputs.len() != targets.len() {
        return Err(Error::Config(format!(
            "{} input steps but {} target steps",
            inputs.len(),
            targets.len()
        )));
    }
    let batch = carry.batch();
    let mut state = carry.clone();
    let mut steps = Vec::with_capacity(inputs.len());
    let mut loss = vec![T::zero(); batch];
    for (x, tgt) in inputs.iter().zip(targets) {
        if x.len() != batch || tgt.len() != batch {
            return Err(Error::Config(format!(
                "step has {} inputs and {} targets for batch {batch}",
                x.len(),
                tgt.len()
            )));
        }
        let rec = forward_step(params, config, &mut state, x)?;
        for (l, v) in loss.iter_mut().zip(step_loss(&rec.p, tgt)) {
            *l += v;
        }
        steps.push(rec);
    }
    Ok(ForwardPass {
        cache: StepCache {
            initial: carry,
            steps,
        },
        loss,
        carry: state,
    })
}

/// Converts a total loss in nats to bits per character.
pub fn bpc(loss_nats: f64, char_count: usize) -> Result<f64> {
    if char_count == 0 {
        return Err(Error::ZeroCount);
    }
    Ok(loss_nats / char_count as f64 / std::f64::consts::LN_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(cell: CellKind, m: usize, n: usize, feedback: bool) -> ModelConfig {
        ModelConfig {
            cell,
            inputs: m,
            hidden: n,
            feedback,
            bptt: 4,
            convention: CellConvention::Paper,
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg(CellKind::Lstm, 1, 4, true).validate().is_err());
        assert!(cfg(CellKind::Lstm, 2, 0, true).validate().is_err());
        let mut c = cfg(CellKind::Lstm, 2, 1, true);
        c.bptt = 1;
        assert!(c.validate().is_err());
        c.bptt = 2;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn init_biases_and_bounds() {
        let c = cfg(CellKind::Lstm, 256, 32, true);
        let p: Params<f64> = init_params(&c, 5).unwrap();
        let n = c.hidden;
        let b = p.b.as_slice();
        assert!(b[..n].iter().all(|&v| v == 0.0));
        assert!(b[n..2 * n].iter().all(|&v| v == 1.0));
        assert!(b[2 * n..].iter().all(|&v| v == 0.0));
        assert!(p.by.as_slice().iter().all(|&v| v == 0.0));
        let bound = (6.0f64 / (256.0 + 128.0)).sqrt();
        assert!(p.w.as_slice().iter().all(|v| v.abs() <= bound));
        assert!(p.w.as_slice().iter().any(|v| v.abs() > 0.9 * bound));
        assert!(p.v.as_slice().iter().any(|&v| v != 0.0));
        assert_eq!(p, init_params(&c, 5).unwrap());
        assert_ne!(p, init_params(&c, 6).unwrap());
    }

    #[test]
    fn feedback_off_zeroes_v_only() {
        let on: Params<f64> = init_params(&cfg(CellKind::Lstm, 8, 3, true), 2).unwrap();
        let off: Params<f64> = init_params(&cfg(CellKind::Lstm, 8, 3, false), 2).unwrap();
        assert!(off.v.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(on.w, off.w);
        assert_eq!(on.u, off.u);
        assert_eq!(on.wy, off.wy);
    }

    #[test]
    fn rnn_init_has_no_forget_bias() {
        let p: Params<f64> = init_params(&cfg(CellKind::SimpleRnn, 8, 3, true), 2).unwrap();
        assert_eq!(p.b.shape(), (1, 3));
        assert!(p.b.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn surprisal_examples() {
        let u = Matrix::filled(1, 4, 0.25f64);
        let x = Matrix::one_hot(&[2], 4);
        assert!((surprisal(&u, &x).unwrap().get(0, 0) - 4f64.ln()).abs() < 1e-15);
        assert!((surprisal(&u, &x).unwrap().get(0, 0) - 1.386294).abs() < 1e-6);
        assert_eq!(surprisal(&x, &x).unwrap().get(0, 0), 0.0);
        let p = Matrix::from_rows(&[[0.5, 0.25, 0.125, 0.125]]);
        let s = surprisal(&p, &x).unwrap().get(0, 0);
        assert_eq!(s, -(0.125f64.ln()));
        let s2 = surprisal(&p, &Matrix::one_hot(&[1], 4)).unwrap().get(0, 0);
        assert!((s2 - 1.386294).abs() < 1e-6);
        assert_eq!(surprisal_at(&p, &[1]).get(0, 0), s2);
    }

    #[test]
    fn rnn_step_reductions() {
        let c = cfg(CellKind::SimpleRnn, 3, 2, true);
        let zero = Params::<f64>::zeros(&c);
        let h = rnn_step(
            &zero,
            &c,
            &Matrix::zeros(1, 2),
            &[1],
            &Matrix::filled(1, 1, 0.7),
        )
        .unwrap();
        assert_eq!(h, Matrix::zeros(1, 2));
    }

    /// Scalar re-evaluation of the RNN update for B=1, M=2, N=2.
    #[test]
    fn rnn_step_matches_scalar_oracle() {
        let c = cfg(CellKind::SimpleRnn, 2, 2, true);
        let mut p = Params::<f64>::zeros(&c);
        p.w = Matrix::from_rows(&[[0.1, -0.2], [0.3, 0.4]]);
        p.u = Matrix::from_rows(&[[0.5, -0.6], [0.7, 0.8]]);
        p.v = Matrix::from_rows(&[[0.9, -1.0]]);
        p.b = Matrix::from_rows(&[[0.05, -0.05]]);
        let h_prev = Matrix::from_rows(&[[0.2, -0.3]]);
        let s = std::f64::consts::LN_2;
        let h = rnn_step(&p, &c, &h_prev, &[1], &Matrix::filled(1, 1, s)).unwrap();
        let want0 = (0.3 + (0.2 * 0.5 + -0.3 * 0.7) + s * 0.9 + 0.05f64).tanh();
        let want1 = (0.4 + (0.2 * -0.6 + -0.3 * 0.8) + -s - 0.05f64).tanh();
        assert!((h.get(0, 0) - want0).abs() < 1e-15);
        assert!((h.get(0, 1) - want1).abs() < 1e-15);
    }

    #[test]
    fn lstm_step_zero_params() {
        let c = cfg(CellKind::Lstm, 4, 3, true);
        let p = Params::<f64>::zeros(&c);
        let z = Matrix::zeros(2, 3);
        let st = lstm_step(&p, &c, &z, &z, &[0, 3], &Matrix::filled(2, 1, 1.0)).unwrap();
        assert!(st.gates.as_slice()[..]
            .chunks(12)
            .all(|r| r[..9].iter().all(|&g| g == 0.5) && r[9..].iter().all(|&g| g == 0.0)));
        assert_eq!(st.c, z);
        assert_eq!(st.h, z);
    }

    #[test]
    fn lstm_step_forget_bias_hand_values() {
        let c = cfg(CellKind::Lstm, 4, 3, false);
        let mut p = Params::<f64>::zeros(&c);
        for x in &mut p.b.as_mut_slice()[3..6] {
            *x = 1.0;
        }
        let ones = Matrix::filled(1, 3, 1.0);
        let st = lstm_step(
            &p,
            &c,
            &Matrix::zeros(1, 3),
            &ones,
            &[2],
            &Matrix::zeros(1, 1),
        )
        .unwrap();
        for j in 0..3 {
            assert!((st.gates.get(0, 3 + j) - 0.731059).abs() < 1e-6);
            assert!((st.c.get(0, j) - 0.268941).abs() < 1e-6);
            // 0.5 * tanh(1 - σ(1)), evaluated independently
            assert!((st.h.get(0, j) - 0.131319776).abs() < 1e-6);
        }
        let std = ModelConfig {
            convention: CellConvention::Standard,
            ..c
        };
        let st = lstm_step(
            &p,
            &std,
            &Matrix::zeros(1, 3),
            &ones,
            &[2],
            &Matrix::zeros(1, 1),
        )
        .unwrap();
        assert!((st.c.get(0, 0) - 0.731059).abs() < 1e-6);
    }

    #[test]
    fn output_probs_examples() {
        let c = cfg(CellKind::Lstm, 4, 2, true);
        let p = Params::<f64>::zeros(&c);
        let (_, probs) = output_probs(&p, &Matrix::filled(3, 2, 0.3)).unwrap();
        assert!(probs.as_slice().iter().all(|&v| v == 0.25));

        let y = Matrix::from_rows(&[[1f64.ln(), 2f64.ln(), 3f64.ln(), 4f64.ln()]]);
        let sm = softmax_rows(&y);
        for (j, want) in [0.1, 0.2, 0.3, 0.4].iter().enumerate() {
            assert!((sm.get(0, j) - want).abs() < 1e-15);
        }
        let mut shifted = y.clone();
        shifted.as_mut_slice().iter_mut().for_each(|v| *v += 17.5);
        assert!(softmax_rows(&shifted).max_abs_diff(&sm) < 1e-15);
    }

    #[test]
    fn softmax_floor_keeps_logs_finite() {
        let y = Matrix::from_rows(&[[0.0f64, -800.0, 5.0]]);
        let p = softmax_rows(&y);
        assert!(p.as_slice().iter().all(|&v| v >= PROB_FLOOR * 0.999));
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(surprisal_at(&p, &[1]).get(0, 0) <= -(PROB_FLOOR.ln()) + 1e-6);
    }

    #[test]
    fn first_step_surprisal_is_log_m() {
        let c = cfg(CellKind::Lstm, 256, 4, true);
        let p: Params<f64> = init_params(&c, 3).unwrap();
        let fp = forward_window(
            &p,
            &c,
            CarryState::fresh(&c, 3),
            &[vec![1, 2, 3], vec![4, 5, 6]],
            &[vec![4, 5, 6], vec![7, 8, 9]],
        )
        .unwrap();
        for i in 0..3 {
            assert!((fp.cache.steps[0].s.get(i, 0) - 256f64.ln()).abs() < 1e-12);
        }
        assert_eq!(fp.cache.len(), 2);
        let per_step: f64 = fp
            .cache
            .steps
            .iter()
            .zip([[4, 5, 6], [7, 8, 9]])
            .map(|(r, t)| step_loss(&r.p, &t).iter().sum::<f64>())
            .sum();
        assert!((fp.total_loss() - per_step).abs() < 1e-12);
    }

    #[test]
    fn window_split_invariance() {
        for cell in [CellKind::SimpleRnn, CellKind::Lstm] {
            let c = cfg(cell, 7, 5, true);
            let p: Params<f64> = init_params(&c, 11).unwrap();
            let mut rng = SplitMix64::new(4);
            let seq: Vec<Vec<usize>> = (0..9)
                .map(|_| (0..2).map(|_| rng.below(7) as usize).collect())
                .collect();
            let (xs, ts) = (&seq[..8], &seq[1..]);
            let whole = forward_window(&p, &c, CarryState::fresh(&c, 2), xs, ts).unwrap();
            let a = forward_window(&p, &c, CarryState::fresh(&c, 2), &xs[..4], &ts[..4]).unwrap();
            let b = forward_window(&p, &c, a.carry.clone(), &xs[4..], &ts[4..]).unwrap();
            for (w, part) in whole
                .cache
                .steps
                .iter()
                .zip(a.cache.steps.iter().chain(&b.cache.steps))
            {
                assert!(w.h.max_abs_diff(&part.h) <= 1e-12);
                assert!(w.p.max_abs_diff(&part.p) <= 1e-12);
                assert!(w.c.max_abs_diff(&part.c) <= 1e-12);
            }
            assert_eq!(whole.carry, b.carry);
        }
    }

    #[test]
    fn bpc_examples() {
        assert_eq!(bpc(0.0, 10).unwrap(), 0.0);
        assert_eq!(bpc(4f64.ln(), 1).unwrap(), 2.0);
        assert_eq!(bpc(256f64.ln(), 1).unwrap(), 8.0);
        assert!(matches!(bpc(1.0, 0), Err(Error::ZeroCount)));
    }
}
