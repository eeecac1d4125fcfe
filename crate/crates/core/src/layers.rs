//! Affine layers and learning-ReLU units.
//!
//! A learning ReLU scales every input neuron by its own learnable slope before
//! rectifying, `z = relu(a ⊙ x)`. The hybrid form follows it with a linear map,
//! `z = W · relu(a ⊙ x)`.

use alloc::vec::Vec;

use crate::error::{dim_err, Result};
use crate::tape::{Tape, Var};
use crate::{Rng, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct FullyConnected {
    /// `n_out × n_in`
    pub w: Tensor,
    pub b: Tensor,
}

impl FullyConnected {
    pub fn new(n_in: usize, n_out: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            w: Tensor::seeded_init(&[n_out, n_in], n_in, rng)?,
            b: Tensor::zeros(&[n_out]),
        })
    }

    pub fn from_parts(w: Tensor, b: Tensor) -> Result<Self> {
        let (n_out, _) = w.require_matrix("FullyConnected")?;
        if b.numel() != n_out || b.rank() != 1 {
            return dim_err("FullyConnected bias", &[n_out], b.shape());
        }
        Ok(Self { w, b })
    }

    pub fn n_in(&self) -> usize {
        self.w.cols()
    }

    pub fn n_out(&self) -> usize {
        self.w.rows()
    }

    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        alloc::vec![("w", &self.w), ("b", &self.b)]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        alloc::vec![&mut self.w, &mut self.b]
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundFc {
        BoundFc {
            w: tape.param(self.w.clone()),
            b: tape.param(self.b.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundFc {
    pub w: Var,
    pub b: Var,
}

impl BoundFc {
    /// `W x + b`, bias broadcast over columns.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let wx = tape.matmul(self.w, x)?;
        tape.add_col_bias(wx, self.b)
    }
}

/// Learning ReLU with per-neuron slopes, optionally in hybrid form.
#[derive(Debug, Clone, PartialEq)]
pub struct LrRelu {
    pub a: Tensor,
    /// `n × m` trailing map of the hybrid form.
    pub w: Option<Tensor>,
}

impl LrRelu {
    /// Plain unit with all slopes at 1, i.e. an ordinary ReLU to start with.
    pub fn new(m: usize) -> Self {
        Self {
            a: Tensor::ones(&[m]),
            w: None,
        }
    }

    pub fn hybrid(m: usize, n: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            a: Tensor::ones(&[m]),
            w: Some(Tensor::seeded_init(&[n, m], m, rng)?),
        })
    }

    pub fn width(&self) -> usize {
        self.a.numel()
    }

    pub fn output_width(&self) -> usize {
        self.w.as_ref().map_or(self.width(), Tensor::rows)
    }

    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out = alloc::vec![("a", &self.a)];
        if let Some(w) = &self.w {
            out.push(("w", w));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = alloc::vec![&mut self.a];
        if let Some(w) = &mut self.w {
            out.push(w);
        }
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundLrRelu {
        BoundLrRelu {
            a: tape.param(self.a.clone()),
            w: self.w.as_ref().map(|w| tape.param(w.clone())),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLrRelu {
    pub a: Var,
    pub w: Option<Var>,
}

impl BoundLrRelu {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let (m, a) = (tape.value(x).rows(), tape.value(self.a).numel());
        if m != a {
            return dim_err("lrrelu", &[a], tape.value(x).shape());
        }
        let y = tape.scale_rows(x, self.a)?;
        let z = tape.relu(y);
        match self.w {
            Some(w) => tape.matmul(w, z),
            None => Ok(z),
        }
    }
}

/// Elementwise `max(0, y)` on a plain tensor.
pub fn relu(y: &Tensor) -> Tensor {
    y.map(|v| if v > 0.0 { v } else { 0.0 })
}
