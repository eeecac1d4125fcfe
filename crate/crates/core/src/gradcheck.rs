//! Central finite differences and the gradient verification suite.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::attention::{AttentionHead, KqNonlinearity, Variant};
use crate::error::{Error, Result};
use crate::layers::{FullyConnected, LrRelu};
use crate::model::{Model, ModelSpec, PatchShape};
use crate::tape::{Tape, Var};
use crate::{Rng, Tensor};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Default acceptance threshold for [`gradient_suite`] reports.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// `(f(x + h e_i) − f(x − h e_i)) / 2h` for every coordinate of `x`.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor) -> Result<f64>, x: &Tensor, h: f64) -> Result<Tensor> {
    let all: Vec<usize> = (0..x.numel()).collect();
    let vals = finite_diff_at(&mut f, x, h, &all)?;
    Tensor::new(x.shape(), vals)
}

/// Central differences at the listed coordinates only.
pub fn finite_diff_at(
    mut f: impl FnMut(&Tensor) -> Result<f64>,
    x: &Tensor,
    h: f64,
    coords: &[usize],
) -> Result<Vec<f64>> {
    let mut probe = x.clone();
    coords
        .iter()
        .map(|&i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let up = f(&probe)?;
            probe.data_mut()[i] = orig - h;
            let down = f(&probe)?;
            probe.data_mut()[i] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::Oracle { index: i });
            }
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

/// Normwise relative error `max|a − b| / max(max|a|, max|b|)`, with a small
/// floor on the denominator so two all-zero gradients compare as equal.
pub fn rel_error(a: &Tensor, b: &Tensor) -> f64 {
    rel_error_slices(a.data(), b.data())
}

fn rel_error_slices(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = a.iter().chain(b).fold(0.0f64, |m, x| m.max(x.abs()));
    diff / scale.max(1e-10)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    /// Normwise relative error over every checked coordinate of every input.
    /// Inputs whose true gradient vanishes (a key bias under softmax, say)
    /// are judged against the scale of the whole gradient.
    pub max_rel_error: f64,
    /// Number of coordinates compared.
    pub coordinates: usize,
}

impl CheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Builds a scalar loss from `inputs` and returns the tape, the loss and the
/// tape variable standing for each input.
type Builder<'a> = dyn Fn(&[Tensor]) -> Result<(Tape, Var, Vec<Var>)> + 'a;

/// Compares reverse-mode gradients against central differences for every
/// input tensor, sampling at most `max_coords` coordinates per tensor.
pub fn check_gradients(
    name: &str,
    inputs: &[Tensor],
    max_coords: usize,
    rng: &mut Rng,
    build: &Builder<'_>,
) -> Result<CheckReport> {
    let (tape, loss, vars) = build(inputs)?;
    let grads = tape.backward(loss)?;
    let mut all_analytic = Vec::new();
    let mut all_numeric = Vec::new();
    for (t, (input, var)) in inputs.iter().zip(&vars).enumerate() {
        let analytic = grads.get(*var).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
        let mut coords: Vec<usize> = (0..input.numel()).collect();
        if coords.len() > max_coords {
            rng.shuffle(&mut coords);
            coords.truncate(max_coords);
            coords.sort_unstable();
        }
        let numeric = finite_diff_at(
            |x| {
                let mut probe = inputs.to_vec();
                probe[t] = x.clone();
                let (tape, loss, _) = build(&probe)?;
                Ok(tape.value(loss).data()[0])
            },
            input,
            DEFAULT_STEP,
            &coords,
        )?;
        all_analytic.extend(coords.iter().map(|&i| analytic.data()[i]));
        all_numeric.extend(numeric);
    }
    Ok(CheckReport {
        name: name.to_string(),
        max_rel_error: rel_error_slices(&all_analytic, &all_numeric),
        coordinates: all_numeric.len(),
    })
}

fn head_tensors(head: &AttentionHead) -> Vec<Tensor> {
    head.params().into_iter().map(|(_, t)| t.clone()).collect()
}

fn head_from(template: &AttentionHead, ts: &[Tensor]) -> AttentionHead {
    let mut h = template.clone();
    for (slot, t) in h.params_mut().into_iter().zip(ts) {
        *slot = t.clone();
    }
    h
}

fn head_check(name: &str, variant: Variant, nl: KqNonlinearity, rng: &mut Rng) -> Result<CheckReport> {
    let (m, b) = (5, 4);
    let value = variant == Variant::DotProduct;
    let mut template = AttentionHead::new(variant, m, m, nl, value, rng)?;
    for p in template.params_mut() {
        *p = Tensor::uniform(p.shape(), -1.0, 1.0, rng);
    }
    let x = Tensor::uniform(&[m, b], -1.0, 1.0, rng);
    let out_shape = if variant == Variant::BatchPc { [b, m] } else { [m, b] };
    let weights = Tensor::uniform(&out_shape, -1.0, 1.0, rng);
    let mut inputs = head_tensors(&template);
    inputs.push(x);
    let n_params = inputs.len() - 1;
    let build = |ts: &[Tensor]| -> Result<(Tape, Var, Vec<Var>)> {
        let head = head_from(&template, &ts[..n_params]);
        let mut tape = Tape::new();
        let bound = head.bind(&mut tape);
        let xv = tape.leaf(ts[n_params].clone());
        let y = match variant {
            Variant::DotProduct => bound.dot_product_attention(&mut tape, xv, None)?.y,
            Variant::CosinePe => bound.cosine_pe_attention(&mut tape, xv)?.y,
            Variant::BatchPc => bound.bpc_attention(&mut tape, xv)?.y,
        };
        let loss = tape.weighted_sum(y, weights.clone())?;
        let mut vars = tape.params().to_vec();
        vars.push(xv);
        Ok((tape, loss, vars))
    };
    check_gradients(name, &inputs, usize::MAX, rng, &build)
}

fn fc_check(rng: &mut Rng) -> Result<CheckReport> {
    let w = Tensor::uniform(&[3, 4], -1.0, 1.0, rng);
    let b = Tensor::uniform(&[3], -1.0, 1.0, rng);
    let x = Tensor::uniform(&[4, 5], -1.0, 1.0, rng);
    let weights = Tensor::uniform(&[3, 5], -1.0, 1.0, rng);
    let build = |ts: &[Tensor]| -> Result<(Tape, Var, Vec<Var>)> {
        let fc = FullyConnected::from_parts(ts[0].clone(), ts[1].clone())?;
        let mut tape = Tape::new();
        let bound = fc.bind(&mut tape);
        let xv = tape.leaf(ts[2].clone());
        let y = bound.forward(&mut tape, xv)?;
        let loss = tape.weighted_sum(y, weights.clone())?;
        Ok((tape, loss, alloc::vec![bound.w, bound.b, xv]))
    };
    check_gradients("fc", &[w, b, x], usize::MAX, rng, &build)
}

/// Draws `a` and `x` so that every product `a_i · x_ij` is at least `margin`
/// away from the ReLU kink.
fn away_from_kink(m: usize, b: usize, margin: f64, rng: &mut Rng) -> (Tensor, Tensor) {
    loop {
        let a = Tensor::uniform(&[m], -1.0, 1.0, rng);
        let x = Tensor::uniform(&[m, b], -1.0, 1.0, rng);
        let ok = (0..m).all(|i| (0..b).all(|j| (a.data()[i] * x.at(i, j)).abs() > margin));
        if ok {
            return (a, x);
        }
    }
}

fn lrrelu_check(hybrid: bool, rng: &mut Rng) -> Result<CheckReport> {
    let (m, n, b) = (4, 3, 5);
    let (a, x) = away_from_kink(m, b, 1e-3, rng);
    let w = Tensor::uniform(&[n, m], -1.0, 1.0, rng);
    let out_rows = if hybrid { n } else { m };
    let weights = Tensor::uniform(&[out_rows, b], -1.0, 1.0, rng);
    let mut inputs = alloc::vec![a];
    if hybrid {
        inputs.push(w);
    }
    inputs.push(x);
    let build = |ts: &[Tensor]| -> Result<(Tape, Var, Vec<Var>)> {
        let unit = LrRelu {
            a: ts[0].clone(),
            w: if hybrid { Some(ts[1].clone()) } else { None },
        };
        let mut tape = Tape::new();
        let bound = unit.bind(&mut tape);
        let xv = tape.leaf(ts[ts.len() - 1].clone());
        let y = bound.forward(&mut tape, xv)?;
        let loss = tape.weighted_sum(y, weights.clone())?;
        let mut vars = tape.params().to_vec();
        vars.push(xv);
        Ok((tape, loss, vars))
    };
    let name = if hybrid { "lrrelu_hybrid" } else { "lrrelu" };
    check_gradients(name, &inputs, usize::MAX, rng, &build)
}

/// Gradient check of a whole model with respect to every parameter tensor and
/// the input images, sampling `max_coords` coordinates per tensor.
pub fn model_check(name: &str, spec: &ModelSpec, batch: usize, max_coords: usize, rng: &mut Rng) -> Result<CheckReport> {
    let mut template = Model::build(spec, rng)?;
    // Zero biases would put a dead unit's successor exactly on a ReLU kink.
    for p in template.params_mut() {
        *p = Tensor::uniform(p.shape(), -1.0, 1.0, rng);
    }
    let images = Tensor::uniform(&[spec.image_dim(), batch], -1.0, 1.0, rng);
    let meta = Tensor::uniform(&[spec.meta_width(), batch], -1.0, 1.0, rng);
    let weights = Tensor::uniform(&[spec.output_dim(), batch], -1.0, 1.0, rng);
    let mut inputs: Vec<Tensor> = template.named_params().into_iter().map(|(_, t)| t.clone()).collect();
    inputs.push(images);
    let n_params = inputs.len() - 1;
    let build = |ts: &[Tensor]| -> Result<(Tape, Var, Vec<Var>)> {
        let mut model = template.clone();
        for (slot, t) in model.params_mut().into_iter().zip(&ts[..n_params]) {
            *slot = t.clone();
        }
        let mut tape = Tape::new();
        let xv = tape.leaf(ts[n_params].clone());
        let mv = tape.constant(meta.clone());
        let y = model.forward_on_tape(&mut tape, xv, mv)?;
        let loss = tape.weighted_sum(y, weights.clone())?;
        let mut vars = tape.params().to_vec();
        vars.push(xv);
        Ok((tape, loss, vars))
    };
    check_gradients(name, &inputs, max_coords, rng, &build)
}

/// Tiny Fig1 instance: 8×8 images, three classes, bottleneck of three.
pub fn tiny_fig1_spec() -> ModelSpec {
    ModelSpec::fig1(8, 8, 1, 3, 3)
}

/// Tiny Fig2 instance: 8×8 images cut into 4×4 patches.
pub fn tiny_fig2_spec() -> ModelSpec {
    ModelSpec::fig2(8, 8, 1, 3, 3, PatchShape { patch_h: 4, patch_w: 4 })
}

/// Runs every named check: the three head variants with and without `tanh`
/// keys/queries, FC, LrReLU, hybrid LrReLU and both tiny architectures.
pub fn gradient_suite(seed: u64) -> Result<Vec<CheckReport>> {
    use KqNonlinearity::{Identity, Tanh};
    let mut rng = Rng::new(seed);
    let heads = [
        ("dot_product", Variant::DotProduct, Identity),
        ("dot_product_tanh", Variant::DotProduct, Tanh),
        ("cosine_pe", Variant::CosinePe, Identity),
        ("cosine_pe_tanh", Variant::CosinePe, Tanh),
        ("bpc", Variant::BatchPc, Identity),
        ("bpc_tanh", Variant::BatchPc, Tanh),
    ];
    let mut out = Vec::new();
    for (name, variant, nl) in heads {
        out.push(head_check(name, variant, nl, &mut rng)?);
    }
    out.push(fc_check(&mut rng)?);
    out.push(lrrelu_check(false, &mut rng)?);
    out.push(lrrelu_check(true, &mut rng)?);
    out.push(model_check("fig1_end_to_end", &tiny_fig1_spec(), 4, 24, &mut rng)?);
    out.push(model_check("fig2_end_to_end", &tiny_fig2_spec(), 4, 24, &mut rng)?);
    Ok(out)
}
