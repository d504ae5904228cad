//! Backward pass over one truncated-BPTT window.
//!
//! Steps are visited last to first. Each step seeds `δy_t = p_t - x_{t+1}`,
//! pushes it through the output layer into `δh_t`, through the cell into the
//! gate gradient `δg_t`, and from `δg_t` into the weight gradients, the
//! previous hidden and cell state, and (with feedback on) through the
//! surprisal `s_t` into the logits of step `t - 1`.
//!
//! The surprisal path has two variants, see [`GradMode`]. For a one-hot `x_t`
//! they differ exactly by sign.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{CellConvention, CellKind, ModelConfig, ParamSet, Params, StepCache};
use crate::scalar::Scalar;
use crate::tensor::{self, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum GradMode {
    /// True derivative of `s_t = -ln p_{t-1}[x_t]` w.r.t. `y_{t-1}`:
    /// `δy_{t-1} += δs_t · (p_{t-1} - x_t)`.
    #[default]
    Exact,
    /// `δp_{t-1} = δs_t ⊙ x_t`, then `δy_{t-1} = δp_{t-1} - p_{t-1} ⊙ Σ δp_{t-1}`.
    Paper,
}

impl GradMode {
    pub fn name(self) -> &'static str {
        match self {
            GradMode::Exact => "exact",
            GradMode::Paper => "paper",
        }
    }
}

impl FromStr for GradMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "exact" => Ok(GradMode::Exact),
            "paper" => Ok(GradMode::Paper),
            other => Err(format!(
                "unknown grad mode '{other}' (expected exact|paper)"
            )),
        }
    }
}

impl fmt::Display for GradMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Weight gradients for one window plus the gradients that would cross the
/// window's start if backprop were not truncated there.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub params: ParamSet<T>,
    /// `∂E/∂h` at the window's initial hidden state.
    pub dh: Matrix<T>,
    /// `∂E/∂c` at the window's initial cell state.
    pub dc: Matrix<T>,
    /// Surprisal-path gradient into the previous window's last logits.
    pub dy_prev: Matrix<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros(config: &ModelConfig, batch: usize) -> Self {
        Self {
            params: ParamSet::zeros(config),
            dh: Matrix::zeros(batch, config.hidden),
            dc: Matrix::zeros(batch, config.hidden),
            dy_prev: Matrix::zeros(batch, config.inputs),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.is_finite()
    }
}

/// Gradient arriving at a window's last step from later steps. Zero under
/// truncated BPTT; supplying a later window's [`Gradients`] boundary terms
/// chains two windows into one exact backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySeed<T> {
    pub dh: Matrix<T>,
    pub dc: Matrix<T>,
    pub dy: Matrix<T>,
}

impl<T: Scalar> BoundarySeed<T> {
    pub fn from_gradients(g: &Gradients<T>) -> Self {
        Self {
            dh: g.dh.clone(),
            dc: g.dc.clone(),
            dy: g.dy_prev.clone(),
        }
    }
}

/// `p - onehot(targets)`.
pub fn softmax_xent_grad<T: Scalar>(p: &Matrix<T>, targets: &[usize]) -> Matrix<T> {
    let mut dy = p.clone();
    for (i, &k) in targets.iter().enumerate() {
        let v = dy.get(i, k);
        dy.set(i, k, v - T::one());
    }
    dy
}

/// Output layer backward for one step.
///
/// Forms `δy = p_t - x_{t+1}` plus any surprisal-path term from step `t + 1`,
/// accumulates `δW_y += h_tᵀ·δy` and `δb_y += Σ_lanes δy`, and returns
/// `(δy, δy·W_yᵀ)`, the latter being this step's contribution to `δh_t`.
/// `wy_t` is `W_yᵀ`, transposed once per window by the caller.
pub fn output_backward<T: Scalar>(
    wy_t: &Matrix<T>,
    p: &Matrix<T>,
    targets: &[usize],
    h: &Matrix<T>,
    extra_dy: Option<&Matrix<T>>,
    grads: &mut ParamSet<T>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    let mut dy = softmax_xent_grad(p, targets);
    if let Some(extra) = extra_dy {
        dy.add_assign(extra)?;
    }
    grads.wy.add_assign(&tensor::matmul_at(h, &dy)?)?;
    tensor::column_sums_acc(&dy, &mut grads.by)?;
    let dh = tensor::matmul(&dy, wy_t)?;
    Ok((dy, dh))
}

/// Simple RNN cell backward: `δg = δh ⊙ (1 - h²)`, `δh_prev = δg·Uᵀ`, with
/// `u_t` = `Uᵀ`.
pub fn rnn_backward_step<T: Scalar>(
    u_t: &Matrix<T>,
    h: &Matrix<T>,
    dh: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    let tp = tensor::map(h, tensor::Activation::TanhPrimeFromAct);
    let dg = tensor::ewise(dh, &tp, tensor::EwiseOp::Mul)?;
    let dh_prev = tensor::matmul(&dg, u_t)?;
    Ok((dg, dh_prev))
}

/// LSTM cell backward for one step.
///
/// `dc` holds the cell gradient carried from step `t + 1` on entry. Returns
/// `(δg, δh_prev, δc_prev)` with `δg = [δi | δf | δo | δu]`; `u_t` is `Uᵀ`.
pub fn lstm_backward_step<T: Scalar>(
    u_t: &Matrix<T>,
    convention: CellConvention,
    gates: &Matrix<T>,
    c_prev: &Matrix<T>,
    c_hat: &Matrix<T>,
    dh: &Matrix<T>,
    dc: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>)> {
    let (batch, n) = dh.shape();
    if dc.shape() != (batch, n) || gates.shape() != (batch, 4 * n) {
        return Err(Error::Shape {
            op: "lstm_backward_step",
            lhs: gates.shape(),
            rhs: dh.shape(),
        });
    }
    let one = T::one();
    let mut dg = Matrix::zeros(batch, 4 * n);
    let mut dc_prev = Matrix::zeros(batch, n);
    for r in 0..batch {
        let g = gates.row(r);
        let (i, rest) = g.split_at(n);
        let (f, rest) = rest.split_at(n);
        let (o, u) = rest.split_at(n);
        let (dh_r, dc_r, cp, ch) = (dh.row(r), dc.row(r), c_prev.row(r), c_hat.row(r));
        let dcp = dc_prev.row_mut(r);
        let mut dcell = vec![T::zero(); n];
        for j in 0..n {
            dcell[j] = dc_r[j] + dh_r[j] * o[j] * (one - ch[j] * ch[j]);
            dcp[j] = match convention {
                CellConvention::Paper => dcell[j] * (one - f[j]),
                CellConvention::Standard => dcell[j] * f[j],
            };
        }
        let dgr = dg.row_mut(r);
        for j in 0..n {
            let sig_f = f[j] * (one - f[j]);
            dgr[j] = dcell[j] * u[j] * (i[j] * (one - i[j]));
            dgr[n + j] = match convention {
                CellConvention::Paper => -(dcell[j] * cp[j] * sig_f),
                CellConvention::Standard => dcell[j] * cp[j] * sig_f,
            };
            dgr[2 * n + j] = dh_r[j] * ch[j] * (o[j] * (one - o[j]));
            dgr[3 * n + j] = dcell[j] * i[j] * (one - u[j] * u[j]);
        }
    }
    let dh_prev = tensor::matmul(&dg, u_t)?;
    Ok((dg, dh_prev, dc_prev))
}

/// `δb += Σ_lanes δg`, `δU += h_prevᵀ·δg`, `δW += x_tᵀ·δg`.
pub fn linear_backward<T: Scalar>(
    dg: &Matrix<T>,
    x: &[usize],
    h_prev: &Matrix<T>,
    grads: &mut ParamSet<T>,
) -> Result<()> {
    tensor::column_sums_acc(dg, &mut grads.b)?;
    grads.u.add_assign(&tensor::matmul_at(h_prev, dg)?)?;
    tensor::scatter_add_rows(&mut grads.w, x, dg)
}

/// `δx = δg·Wᵀ`. Inputs are data, so the training loop never asks for this.
pub fn input_gradient<T: Scalar>(params: &Params<T>, dg: &Matrix<T>) -> Result<Matrix<T>> {
    tensor::matmul_bt(dg, &params.w)
}

/// Surprisal-path backward for step `t`.
///
/// Accumulates `δV += s_tᵀ·δg_t` and returns the step-`t-1` logit gradient
/// implied by `δs_t = δg_t·Vᵀ`, according to `mode`.
pub fn surprisal_backward<T: Scalar>(
    params: &Params<T>,
    dg: &Matrix<T>,
    s: &Matrix<T>,
    p_prev: &Matrix<T>,
    x: &[usize],
    mode: GradMode,
    grads: &mut ParamSet<T>,
) -> Result<Matrix<T>> {
    grads.v.add_assign(&tensor::matmul_at(s, dg)?)?;
    let ds = tensor::matmul_bt(dg, &params.v)?;
    Ok(surprisal_logit_grad(&ds, p_prev, x, mode))
}

/// Maps `δs` (one value per lane) onto the previous step's logits.
pub fn surprisal_logit_grad<T: Scalar>(
    ds: &Matrix<T>,
    p_prev: &Matrix<T>,
    x: &[usize],
    mode: GradMode,
) -> Matrix<T> {
    let (batch, m) = p_prev.shape();
    let mut dy = Matrix::zeros(batch, m);
    for r in 0..batch {
        let d = ds.get(r, 0);
        let p = p_prev.row(r);
        let out = dy.row_mut(r);
        match mode {
            GradMode::Exact => {
                for (o, &pj) in out.iter_mut().zip(p) {
                    *o = d * pj;
                }
                out[x[r]] -= d;
            }
            GradMode::Paper => {
                let mut dp = vec![T::zero(); m];
                dp[x[r]] = d;
                let total = dp.iter().fold(T::zero(), |a, &b| a + b);
                for ((o, &dpj), &pj) in out.iter_mut().zip(&dp).zip(p) {
                    *o = dpj - pj * total;
                }
            }
        }
    }
    dy
}

/// Truncated-BPTT backward pass: nothing flows in from beyond the window.
pub fn backward_window<T: Scalar>(
    params: &Params<T>,
    config: &ModelConfig,
    cache: &StepCache<T>,
    targets: &[Vec<usize>],
    mode: GradMode,
) -> Result<Gradients<T>> {
    backward_window_seeded(params, config, cache, targets, mode, None)
}

pub fn backward_window_seeded<T: Scalar>(
    params: &Params<T>,
    config: &ModelConfig,
    cache: &StepCache<T>,
    targets: &[Vec<usize>],
    mode: GradMode,
    seed: Option<&BoundarySeed<T>>,
) -> Result<Gradients<T>> {
    if cache.is_empty() {
        return Err(Error::IncompleteCache("no steps recorded".into()));
    }
    if targets.len() != cache.len() {
        return Err(Error::IncompleteCache(format!(
            "{} cached steps but {} target steps",
            cache.len(),
            targets.len()
        )));
    }
    let batch = cache.initial.batch();
    let mut grads = Gradients::zeros(config, batch);
    let u_t = params.u.transpose();
    let wy_t = params.wy.transpose();
    let (mut dh_next, mut dc_next, mut dy_next) = match seed {
        Some(s) => (s.dh.clone(), s.dc.clone(), Some(s.dy.clone())),
        None => (
            Matrix::zeros(batch, config.hidden),
            Matrix::zeros(batch, config.hidden),
            None,
        ),
    };

    for t in (0..cache.len()).rev() {
        let step = &cache.steps[t];
        let (_, dh_out) = output_backward(
            &wy_t,
            &step.p,
            &targets[t],
            &step.h,
            dy_next.as_ref(),
            &mut grads.params,
        )?;
        let mut dh = dh_next;
        dh.add_assign(&dh_out)?;

        let (dg, dh_prev, dc_prev) = match config.cell {
            CellKind::SimpleRnn => {
                let (dg, dh_prev) = rnn_backward_step(&u_t, &step.h, &dh)?;
                (dg, dh_prev, Matrix::zeros(batch, config.hidden))
            }
            CellKind::Lstm => lstm_backward_step(
                &u_t,
                config.convention,
                &step.gates,
                cache.c_prev(t),
                &step.c_hat,
                &dh,
                &dc_next,
            )?,
        };
        linear_backward(&dg, &step.x, cache.h_prev(t), &mut grads.params)?;

        dy_next = if config.feedback {
            Some(surprisal_backward(
                params,
                &dg,
                &step.s,
                cache.p_prev(t),
                &step.x,
                mode,
                &mut grads.params,
            )?)
        } else {
            None
        };
        dh_next = dh_prev;
        dc_next = dc_prev;
    }

    grads.dh = dh_next;
    grads.dc = dc_next;
    if let Some(dy) = dy_next {
        grads.dy_prev = dy;
    }
    Ok(grads)
}
