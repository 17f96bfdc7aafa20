//! Adam over named parameter tensors, plus a finite-difference gradient
//! reference used by the gradient-check command and the test suite.

use crate::error::{CamilError, Result};
use crate::tensor::Matrix;

/// One trainable matrix with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub name: &'static str,
    pub value: Matrix,
    pub grad: Matrix,
}

impl ParamTensor {
    pub fn new(name: &'static str, value: Matrix) -> ParamTensor {
        let grad = Matrix::zeros(value.rows(), value.cols());
        ParamTensor { name, value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

/// Anything exposing its parameters as an ordered list. Order is part of the
/// contract: optimizer state and gradient reports index by position.
pub trait ParamSet {
    fn tensors(&self) -> Vec<&ParamTensor>;
    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor>;
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are allocated on the first step
/// and must keep their shapes afterwards.
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Adam {
        Adam {
            cfg,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    /// Applies one update from the accumulated gradients and zeroes them.
    pub fn step<P: ParamSet>(&mut self, params: &mut P) -> Result<()> {
        let mut tensors = params.tensors_mut();
        if self.t == 0 {
            self.m = tensors
                .iter()
                .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect();
            self.v = self.m.clone();
        }
        if tensors.len() != self.m.len() {
            return Err(CamilError::InvalidArgument(format!(
                "optimizer holds state for {} tensors, got {}",
                self.m.len(),
                tensors.len()
            )));
        }
        self.t += 1;
        let b1t = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for (idx, p) in tensors.iter_mut().enumerate() {
            if p.value.shape() != self.m[idx].shape() {
                return Err(CamilError::shape(
                    "adam state",
                    self.m[idx].shape(),
                    p.value.shape(),
                ));
            }
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            for ((mv, vv), (val, &g)) in m
                .data_mut()
                .iter_mut()
                .zip(v.data_mut())
                .zip(p.value.data_mut().iter_mut().zip(p.grad.data()))
            {
                *mv = self.cfg.beta1 * *mv + (1.0 - self.cfg.beta1) * g;
                *vv = self.cfg.beta2 * *vv + (1.0 - self.cfg.beta2) * g * g;
                let mhat = *mv / b1t;
                let vhat = *vv / b2t;
                *val -= self.cfg.lr * mhat / (vhat.sqrt() + self.cfg.eps);
            }
            p.zero_grad();
        }
        Ok(())
    }
}

/// Central finite differences of `f` with respect to every parameter entry,
/// returned in tensor order. `f` must be a pure function of the parameter
/// values.
pub fn finite_diff_grad<P: ParamSet>(
    params: &mut P,
    mut f: impl FnMut(&P) -> Result<f64>,
    eps: f64,
) -> Result<Vec<Matrix>> {
    let shapes: Vec<(usize, usize)> = params
        .tensors()
        .iter()
        .map(|p| p.value.shape())
        .collect();
    let mut grads: Vec<Matrix> = shapes
        .iter()
        .map(|&(r, c)| Matrix::zeros(r, c))
        .collect();
    for (ti, &(rows, cols)) in shapes.iter().enumerate() {
        for i in 0..rows {
            for j in 0..cols {
                let orig = params.tensors()[ti].value.get(i, j);
                params.tensors_mut()[ti].value.set(i, j, orig + eps);
                let fp = f(&*params)?;
                params.tensors_mut()[ti].value.set(i, j, orig - eps);
                let fm = f(&*params)?;
                params.tensors_mut()[ti].value.set(i, j, orig);
                grads[ti].set(i, j, (fp - fm) / (2.0 * eps));
            }
        }
    }
    Ok(grads)
}
