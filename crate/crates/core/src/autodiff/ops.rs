//! Eager (tape-free) versions of the core tensor ops.

use super::kernels;
use super::Tape;
use crate::error::Result;
use crate::tensor::Tensor;

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let out = tape.matmul(va, vb)?;
    Ok(tape.value(out).clone())
}

pub fn gelu(x: &Tensor) -> Tensor {
    map(x, kernels::gelu)
}

pub fn softplus(x: &Tensor) -> Tensor {
    map(x, kernels::softplus)
}

/// Softmax over the last axis.
pub fn softmax(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    let d = out.last_dim();
    for row in out.data_mut().chunks_mut(d) {
        kernels::softmax_in_place(row);
    }
    out
}

pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vx = tape.constant(x.clone());
    let vg = tape.constant(gain.clone());
    let vb = tape.constant(bias.clone());
    let out = tape.layer_norm(vx, vg, vb)?;
    Ok(tape.value(out).clone())
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}
