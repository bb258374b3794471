//! Dense tensors, activations, losses and the Adam optimizer.
//!
//! Everything is `f64`, row-major, and hand-differentiated: each forward op
//! has a matching `*_backward` that maps an upstream gradient to gradients
//! of its inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense n-dimensional array, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} holds {n} elements, data has {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape.to_vec(), self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        check_same_shape(self, other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }
}

pub(crate) fn check_same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    Ok(())
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient of ReLU; the subgradient at exactly zero is 0.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    check_same_shape(x, dy)?;
    let data = x
        .data
        .iter()
        .zip(&dy.data)
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape.clone(), data)
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    // Split by sign so exp never overflows.
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Takes the sigmoid *output* `y`.
pub fn sigmoid_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    check_same_shape(y, dy)?;
    let data = y
        .data
        .iter()
        .zip(&dy.data)
        .map(|(&y, &g)| g * y * (1.0 - y))
        .collect();
    Tensor::new(y.shape.clone(), data)
}

/// Mean squared error over all elements and its gradient w.r.t. `pred`.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    check_same_shape(pred, target)?;
    let n = pred.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, Tensor::new(pred.shape.clone(), grad)?))
}

/// Fully connected layer on a batch: `x[B, in]`, `w[out, in]`, `b[out]` → `y[B, out]`.
pub fn fc_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (batch, inputs, outputs) = fc_dims(x, w, b)?;
    let mut y = vec![0.0; batch * outputs];
    for s in 0..batch {
        let xs = &x.data[s * inputs..(s + 1) * inputs];
        for o in 0..outputs {
            let row = &w.data[o * inputs..(o + 1) * inputs];
            y[s * outputs + o] = b.data[o] + dot(row, xs);
        }
    }
    Tensor::new(vec![batch, outputs], y)
}

/// Gradients of [`fc_forward`]: returns `(dx, dw, db)`.
pub fn fc_backward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (batch, inputs, outputs) = fc_dims(x, w, b)?;
    if dy.shape != [batch, outputs] {
        return Err(Error::ShapeMismatch(format!(
            "fc upstream gradient {:?}, expected [{batch}, {outputs}]",
            dy.shape
        )));
    }
    let mut dx = vec![0.0; batch * inputs];
    let mut dw = vec![0.0; outputs * inputs];
    let mut db = vec![0.0; outputs];
    for s in 0..batch {
        let xs = &x.data[s * inputs..(s + 1) * inputs];
        let dxs = &mut dx[s * inputs..(s + 1) * inputs];
        for o in 0..outputs {
            let g = dy.data[s * outputs + o];
            if g == 0.0 {
                continue;
            }
            db[o] += g;
            let row = &w.data[o * inputs..(o + 1) * inputs];
            let drow = &mut dw[o * inputs..(o + 1) * inputs];
            for i in 0..inputs {
                dxs[i] += g * row[i];
                drow[i] += g * xs[i];
            }
        }
    }
    Ok((
        Tensor::new(vec![batch, inputs], dx)?,
        Tensor::new(vec![outputs, inputs], dw)?,
        Tensor::new(vec![outputs], db)?,
    ))
}

fn fc_dims(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    let (&[batch, inputs], &[outputs, w_in], &[b_out]) =
        (x.shape.as_slice(), w.shape.as_slice(), b.shape.as_slice())
    else {
        return Err(Error::ShapeMismatch(format!(
            "fc expects x[B,in], w[out,in], b[out]; got {:?}, {:?}, {:?}",
            x.shape, w.shape, b.shape
        )));
    };
    if w_in != inputs || b_out != outputs {
        return Err(Error::ShapeMismatch(format!(
            "fc inner dimensions disagree: x {:?}, w {:?}, b {:?}",
            x.shape, w.shape, b.shape
        )));
    }
    Ok((batch, inputs, outputs))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Moment estimates for one flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam: {} params, {} grads, state for {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
