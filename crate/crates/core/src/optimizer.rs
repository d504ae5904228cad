//! Windowed Adagrad.
//!
//! The squared-gradient history is an exponential moving average rather than
//! an explicit buffer of recent updates:
//!
//! ```text
//! acc ← ρ·acc + (1 − ρ)·g²
//! θ   ← θ − η·g / (√acc + eps)
//! ```

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ParamBlock, Params};
use crate::scalar::Scalar;

pub const DEFAULT_LR: f64 = 0.001;
pub const DEFAULT_DECAY: f64 = 0.95;
pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptConfig {
    pub lr: f64,
    /// EMA coefficient `ρ` of the squared-gradient accumulator.
    pub decay: f64,
    pub eps: f64,
    /// Elementwise clip bound applied to gradients before accumulation.
    pub clip: Option<f64>,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LR,
            decay: DEFAULT_DECAY,
            eps: DEFAULT_EPS,
            clip: None,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::Config(format!(
                "decay {} must lie in (0, 1)",
                self.decay
            )));
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(Error::Config(format!(
                "eps {} must be non-negative",
                self.eps
            )));
        }
        if let Some(c) = self.clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Config(format!("clip {c} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptState<T> {
    pub acc: Params<T>,
    pub decay: f64,
    pub lr: f64,
    pub eps: f64,
    pub clip: Option<f64>,
}

impl<T: Scalar> OptState<T> {
    /// Zero accumulators.
    pub fn new(model: &ModelConfig, opt: &OptConfig) -> Result<Self> {
        opt.validate()?;
        Ok(Self {
            acc: Params::zeros(model),
            decay: opt.decay,
            lr: opt.lr,
            eps: opt.eps,
            clip: opt.clip,
        })
    }

    pub fn config(&self) -> OptConfig {
        OptConfig {
            lr: self.lr,
            decay: self.decay,
            eps: self.eps,
            clip: self.clip,
        }
    }
}

/// Applies one update in place. V is left alone when feedback is off.
///
/// Every gradient block is checked before anything is touched, so a
/// non-finite gradient leaves both parameters and accumulators unchanged.
pub fn opt_step<T: Scalar>(
    params: &mut Params<T>,
    grads: &Params<T>,
    state: &mut OptState<T>,
    config: &ModelConfig,
) -> Result<()> {
    for k in ParamBlock::ALL {
        let (p, g, a) = (params.block(k), grads.block(k), state.acc.block(k));
        if p.shape() != g.shape() || a.shape() != g.shape() {
            return Err(Error::Shape {
                op: k.name(),
                lhs: p.shape(),
                rhs: g.shape(),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {k}")));
        }
    }
    let rho = T::from_f64_lossy(state.decay);
    let one_minus_rho = T::from_f64_lossy(1.0 - state.decay);
    let lr = T::from_f64_lossy(state.lr);
    let eps = T::from_f64_lossy(state.eps);
    let clip = state.clip.map(T::from_f64_lossy);
    for k in ParamBlock::ALL {
        if k == ParamBlock::V && !config.feedback {
            continue;
        }
        let theta = params.block_mut(k).as_mut_slice();
        let acc = state.acc.block_mut(k).as_mut_slice();
        for ((t, a), &g) in theta.iter_mut().zip(acc).zip(grads.block(k).as_slice()) {
            let g = match clip {
                Some(c) => g.max(-c).min(c),
                None => g,
            };
            *a = rho * *a + one_minus_rho * g * g;
            *t -= lr * g / (a.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, CellConvention, CellKind};

    fn scalar_model() -> ModelConfig {
        ModelConfig {
            cell: CellKind::SimpleRnn,
            inputs: 2,
            hidden: 1,
            feedback: true,
            bptt: 2,
            convention: CellConvention::Paper,
        }
    }

    fn setup(feedback: bool) -> (ModelConfig, Params<f64>, OptState<f64>) {
        let c = ModelConfig {
            feedback,
            ..scalar_model()
        };
        let p = init_params(&c, 3).unwrap();
        let s = OptState::new(&c, &OptConfig::default()).unwrap();
        (c, p, s)
    }

    #[test]
    fn zero_gradient_only_decays() {
        let (c, mut p, mut s) = setup(true);
        s.acc.w.fill(2.0);
        let before = p.clone();
        opt_step(&mut p, &Params::zeros(&c), &mut s, &c).unwrap();
        assert_eq!(p, before);
        assert!(s.acc.w.as_slice().iter().all(|&a| a == 0.95 * 2.0));
    }

    #[test]
    fn hand_evaluated_update() {
        let (c, mut p, mut s) = setup(true);
        let mut g = Params::zeros(&c);
        g.by.set(0, 0, 0.1);
        let before = p.by.get(0, 0);
        opt_step(&mut p, &g, &mut s, &c).unwrap();
        assert!((s.acc.by.get(0, 0) - 5e-4).abs() < 1e-18);
        let delta = p.by.get(0, 0) - before;
        assert!((delta + 4.4721e-3).abs() < 1e-7, "{delta}");
        assert_eq!(p.by.get(0, 1), 0.0);
    }

    #[test]
    fn equal_gradients_equal_updates() {
        let (c, mut p, mut s) = setup(true);
        p.by.fill(0.0);
        let mut g = Params::zeros(&c);
        g.by.fill(0.3);
        opt_step(&mut p, &g, &mut s, &c).unwrap();
        assert_eq!(p.by.get(0, 0), p.by.get(0, 1));
    }

    #[test]
    fn update_scales_with_learning_rate() {
        let (c, p0, s0) = setup(true);
        let mut g = Params::zeros(&c);
        for (i, v) in g.w.as_mut_slice().iter_mut().enumerate() {
            *v = 0.25 * (i as f64 + 1.0);
        }
        let run = |lr: f64| {
            let mut p = p0.clone();
            let mut s = s0.clone();
            s.lr = lr;
            opt_step(&mut p, &g, &mut s, &c).unwrap();
            p.w.as_slice()
                .iter()
                .zip(p0.w.as_slice())
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>()
        };
        // Power-of-two scaling is exact in binary floating point.
        let (d1, d2) = (run(0.001), run(0.002));
        for (a, b) in d1.iter().zip(&d2) {
            assert!((2.0 * a - b).abs() <= 1e-18, "{a} {b}");
        }
    }

    #[test]
    fn deterministic() {
        let (c, p0, s0) = setup(true);
        let mut g = Params::zeros(&c);
        g.u.fill(-0.7);
        g.v.fill(0.2);
        let go = || {
            let (mut p, mut s) = (p0.clone(), s0.clone());
            opt_step(&mut p, &g, &mut s, &c).unwrap();
            (p, s)
        };
        assert_eq!(go(), go());
    }

    #[test]
    fn non_finite_gradient_names_block_and_changes_nothing() {
        let (c, mut p, mut s) = setup(true);
        let mut g = Params::zeros(&c);
        g.w.fill(1.0);
        g.wy.set(0, 1, f64::NAN);
        let (p0, s0) = (p.clone(), s.clone());
        let err = opt_step(&mut p, &g, &mut s, &c).unwrap_err();
        assert!(err.to_string().contains("W_y"), "{err}");
        assert_eq!((p, s), (p0, s0));
    }

    #[test]
    fn feedback_off_leaves_v_untouched() {
        let (c, mut p, mut s) = setup(false);
        let mut g = Params::zeros(&c);
        g.v.fill(1.0);
        opt_step(&mut p, &g, &mut s, &c).unwrap();
        assert!(p.v.as_slice().iter().all(|&v| v == 0.0));
        assert!(s.acc.v.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn clip_bounds_gradient() {
        let (c, mut p, mut s) = setup(true);
        s.clip = Some(0.5);
        let mut g = Params::zeros(&c);
        g.by.set(0, 0, 10.0);
        opt_step(&mut p, &g, &mut s, &c).unwrap();
        assert!((s.acc.by.get(0, 0) - 0.05 * 0.25).abs() < 1e-15);
    }

    #[test]
    fn accumulator_stays_bounded() {
        let (c, mut p, mut s) = setup(true);
        let mut g = Params::zeros(&c);
        for step in 0..200 {
            g.b.fill(if step % 3 == 0 { 2.0 } else { -0.5 });
            opt_step(&mut p, &g, &mut s, &c).unwrap();
            let a = s.acc.b.get(0, 0);
            assert!((0.0..=4.0).contains(&a));
        }
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let c = scalar_model();
        for bad in [
            OptConfig {
                lr: 0.0,
                ..OptConfig::default()
            },
            OptConfig {
                decay: 1.0,
                ..OptConfig::default()
            },
            OptConfig {
                clip: Some(-1.0),
                ..OptConfig::default()
            },
        ] {
            assert!(OptState::<f64>::new(&c, &bad).is_err());
        }
    }
}
