//! Metadata-conditioned encoder-decoders.
//!
//! Two chains are supported:
//!
//! ```text
//! Fig1:  [image; meta] → FC mix → BPC → FC squeeze → LrReLU → FC expand → LrReLU → FC → output
//! Fig2:  image → (CosinePE) → patchy BPC([patch; meta]) → FC squeeze([·; meta], k1)
//!              → BPC → FC squeeze([·; meta], → bottleneck) → decoder as Fig1
//! ```
//!
//! The decoder's hidden widths follow the Kolmogorov-Arnold rule `(m, 2m + 1)`
//! for a bottleneck of width `m`, unless an explicit expansion ratio is given.
//! The output layer is a plain affine map (regression output).

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::attention::{patch_split_var, AttentionHead, KqNonlinearity, PatchLayout, Variant};
use crate::error::{contract, dim_err, Error, Result};
use crate::layers::{FullyConnected, LrRelu};
use crate::tape::{Tape, Var};
use crate::{Rng, Tensor};

/// Decoder hidden widths for a bottleneck of width `m`: `(m, 2m + 1)`.
pub fn ka_decoder_sizes(m: usize) -> Result<(usize, usize)> {
    if m == 0 {
        return contract("ka_decoder_sizes: bottleneck must be positive");
    }
    Ok((m, 2 * m + 1))
}

/// Positive rational number, kept in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    num: u64,
    den: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::Spec(format!("ratio {num}/{den} must be positive")));
        }
        let g = gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    pub fn num(self) -> u64 {
        self.num
    }

    pub fn den(self) -> u64 {
        self.den
    }

    /// `ceil(width · self)` in exact integer arithmetic.
    pub fn scale_ceil(self, width: usize) -> usize {
        let p = width as u128 * self.num as u128;
        p.div_ceil(self.den as u128) as usize
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl core::str::FromStr for Ratio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Spec(format!("cannot parse ratio {s:?}"));
        let (n, d) = match s.trim().split_once('/') {
            Some((n, d)) => (n.trim(), d.trim()),
            None => (s.trim(), "1"),
        };
        Ratio::new(n.parse().map_err(|_| bad())?, d.parse().map_err(|_| bad())?)
    }
}

/// Width rule of the decoder's expansion layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Expand {
    /// `2m + 1`
    #[default]
    Ka,
    /// `ceil(m · r)`
    Ratio(Ratio),
}

impl fmt::Display for Expand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expand::Ka => f.write_str("KA"),
            Expand::Ratio(r) => r.fmt(f),
        }
    }
}

impl core::str::FromStr for Expand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("ka") {
            Ok(Expand::Ka)
        } else {
            s.parse().map(Expand::Ratio)
        }
    }
}

#[cfg(feature = "serde")]
mod serde_impls {
    use super::*;
    use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Int(u64),
        Str(String),
    }

    impl Serialize for Ratio {
        fn serialize<S: Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
            s.collect_str(self)
        }
    }

    impl<'de> Deserialize<'de> for Ratio {
        fn deserialize<D: Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
            match Repr::deserialize(d)? {
                Repr::Int(n) => Ratio::new(n, 1),
                Repr::Str(s) => s.parse(),
            }
            .map_err(de::Error::custom)
        }
    }

    impl Serialize for Expand {
        fn serialize<S: Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
            s.collect_str(self)
        }
    }

    impl<'de> Deserialize<'de> for Expand {
        fn deserialize<D: Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
            match Repr::deserialize(d)? {
                Repr::Int(n) => Ratio::new(n, 1).map(Expand::Ratio),
                Repr::Str(s) => s.parse(),
            }
            .map_err(de::Error::custom)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Arch {
    Fig1,
    Fig2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PatchShape {
    pub patch_h: usize,
    pub patch_w: usize,
}

fn default_k1() -> Ratio {
    Ratio { num: 1, den: 3 }
}

#[cfg_attr(not(feature = "serde"), allow(dead_code))]
fn default_meta_count() -> usize {
    1
}

/// Declarative description of an encoder-decoder.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelSpec {
    pub arch: Arch,
    pub image_h: usize,
    pub image_w: usize,
    pub channels: usize,
    #[cfg_attr(feature = "serde", serde(default = "default_meta_count"))]
    pub meta_count: usize,
    pub meta_dim: usize,
    pub bottleneck: usize,
    #[cfg_attr(feature = "serde", serde(default = "default_k1"))]
    pub k1: Ratio,
    #[cfg_attr(feature = "serde", serde(default))]
    pub k_expand: Expand,
    #[cfg_attr(feature = "serde", serde(default))]
    pub patch: Option<PatchShape>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub kq_nonlinearity: KqNonlinearity,
    #[cfg_attr(feature = "serde", serde(default))]
    pub value_transform: bool,
    #[cfg_attr(feature = "serde", serde(default))]
    pub use_cpe_front: bool,
}

impl ModelSpec {
    /// Fig1 chain with library defaults for everything but the dimensions.
    pub fn fig1(image_h: usize, image_w: usize, channels: usize, meta_dim: usize, bottleneck: usize) -> Self {
        Self {
            arch: Arch::Fig1,
            image_h,
            image_w,
            channels,
            meta_count: 1,
            meta_dim,
            bottleneck,
            k1: default_k1(),
            k_expand: Expand::Ka,
            patch: None,
            kq_nonlinearity: KqNonlinearity::Tanh,
            value_transform: false,
            use_cpe_front: false,
        }
    }

    /// 28×28 digits, ten one-hot classes, bottleneck of ten.
    pub fn mnist_fig1() -> Self {
        Self::fig1(28, 28, 1, 10, 10)
    }

    pub fn fig2(
        image_h: usize,
        image_w: usize,
        channels: usize,
        meta_dim: usize,
        bottleneck: usize,
        patch: PatchShape,
    ) -> Self {
        Self {
            arch: Arch::Fig2,
            patch: Some(patch),
            ..Self::fig1(image_h, image_w, channels, meta_dim, bottleneck)
        }
    }

    pub fn image_dim(&self) -> usize {
        self.image_h * self.image_w * self.channels
    }

    pub fn meta_width(&self) -> usize {
        self.meta_count * self.meta_dim
    }

    /// Output dimensionality `N`; the model reconstructs the image.
    pub fn output_dim(&self) -> usize {
        self.image_dim()
    }

    pub fn mixed_dim(&self) -> usize {
        self.image_dim() + self.meta_width()
    }

    /// Bottleneck compression coefficient `K = mixed_dim / bottleneck`.
    pub fn k_compress(&self) -> Result<Ratio> {
        Ratio::new(self.mixed_dim() as u64, self.bottleneck as u64)
    }

    pub fn patch_layout(&self) -> Result<Option<PatchLayout>> {
        self.patch
            .map(|p| PatchLayout::new(self.image_h, self.image_w, self.channels, p.patch_h, p.patch_w))
            .transpose()
    }

    pub fn expand_width(&self) -> Result<usize> {
        match self.k_expand {
            Expand::Ka => Ok(ka_decoder_sizes(self.bottleneck)?.1),
            Expand::Ratio(r) => Ok(r.scale_ceil(self.bottleneck)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.image_h, self.image_w, self.channels, self.meta_count, self.meta_dim, self.bottleneck];
        if dims.contains(&0) {
            return Err(Error::Spec(format!("all dimensions must be positive: {self:?}")));
        }
        match (self.arch, self.patch) {
            (Arch::Fig1, Some(_)) => return Err(Error::Spec("Fig1 takes no patch layout".into())),
            (Arch::Fig2, None) => return Err(Error::Spec("Fig2 needs a patch layout".into())),
            (Arch::Fig1, None) => {
                if self.use_cpe_front {
                    return Err(Error::Spec("use_cpe_front applies to Fig2 only".into()));
                }
            }
            (Arch::Fig2, Some(_)) => {
                self.patch_layout().map_err(|e| Error::Spec(e.to_string()))?;
            }
        }
        if self.bottleneck > self.mixed_dim() {
            return Err(Error::Spec(format!(
                "bottleneck {} exceeds mixed input width {}",
                self.bottleneck,
                self.mixed_dim()
            )));
        }
        Ok(())
    }

    /// Layer chain with every width resolved, without allocating parameters.
    pub fn plan(&self) -> Result<Vec<LayerPlan>> {
        self.validate()?;
        let meta = self.meta_width();
        let mut plan = Vec::new();
        let encoded = match self.arch {
            Arch::Fig1 => {
                let mixed = self.mixed_dim();
                plan.push(LayerPlan::AppendMeta);
                plan.push(LayerPlan::Fc { n_in: mixed, n_out: mixed });
                plan.push(LayerPlan::Bpc { m: mixed });
                plan.push(LayerPlan::Fc {
                    n_in: mixed,
                    n_out: self.bottleneck,
                });
                self.bottleneck
            }
            Arch::Fig2 => {
                let layout = self.patch_layout()?.expect("validated");
                if self.use_cpe_front {
                    plan.push(LayerPlan::CosinePe { m: self.image_dim() });
                }
                let head_dim = layout.patch_dim() + meta;
                plan.push(LayerPlan::PatchyBpc { layout, head_dim });
                let joined = layout.patch_count() * head_dim;
                let squeezed = self.k1.scale_ceil(joined);
                plan.push(LayerPlan::AppendMeta);
                plan.push(LayerPlan::Fc {
                    n_in: joined + meta,
                    n_out: squeezed,
                });
                plan.push(LayerPlan::Bpc { m: squeezed });
                plan.push(LayerPlan::AppendMeta);
                plan.push(LayerPlan::Fc {
                    n_in: squeezed + meta,
                    n_out: self.bottleneck,
                });
                self.bottleneck
            }
        };
        let expand = self.expand_width()?;
        plan.push(LayerPlan::LrRelu { m: encoded });
        plan.push(LayerPlan::Fc { n_in: encoded, n_out: expand });
        plan.push(LayerPlan::LrRelu { m: expand });
        plan.push(LayerPlan::Fc {
            n_in: expand,
            n_out: self.output_dim(),
        });
        Ok(plan)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.plan()?.iter().map(LayerPlan::param_count).sum())
    }
}

/// One resolved layer of a [`ModelSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerPlan {
    /// Stacks the metadata vector under the current activations.
    AppendMeta,
    CosinePe { m: usize },
    /// One BPC head per patch; each head sees `[patch; meta]`.
    PatchyBpc { layout: PatchLayout, head_dim: usize },
    Bpc { m: usize },
    Fc { n_in: usize, n_out: usize },
    LrRelu { m: usize },
}

impl LayerPlan {
    pub fn param_count(&self) -> usize {
        let head = |m: usize| 2 * (m * m + m);
        match *self {
            LayerPlan::AppendMeta => 0,
            LayerPlan::CosinePe { m } | LayerPlan::Bpc { m } => head(m),
            LayerPlan::PatchyBpc { layout, head_dim } => layout.patch_count() * head(head_dim),
            LayerPlan::Fc { n_in, n_out } => n_in * n_out + n_out,
            LayerPlan::LrRelu { m } => m,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    AppendMeta,
    CosinePe(AttentionHead),
    PatchyBpc { layout: PatchLayout, heads: Vec<AttentionHead> },
    Bpc(AttentionHead),
    Fc(FullyConnected),
    LrRelu(LrRelu),
}

impl Layer {
    fn kind(&self) -> &'static str {
        match self {
            Layer::AppendMeta => "meta",
            Layer::CosinePe(_) => "cpe",
            Layer::PatchyBpc { .. } => "patchy_bpc",
            Layer::Bpc(_) => "bpc",
            Layer::Fc(_) => "fc",
            Layer::LrRelu(_) => "lrrelu",
        }
    }

    /// Parameter names (relative to the layer) and tensors in binding order.
    fn params(&self) -> Vec<(String, &Tensor)> {
        match self {
            Layer::AppendMeta => Vec::new(),
            Layer::CosinePe(h) | Layer::Bpc(h) => named(h.params()),
            Layer::PatchyBpc { heads, .. } => heads
                .iter()
                .enumerate()
                .flat_map(|(i, h)| h.params().into_iter().map(move |(n, t)| (format!("patch{i:03}.{n}"), t)))
                .collect(),
            Layer::Fc(fc) => named(fc.params()),
            Layer::LrRelu(u) => named(u.params()),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::AppendMeta => Vec::new(),
            Layer::CosinePe(h) | Layer::Bpc(h) => h.params_mut(),
            Layer::PatchyBpc { heads, .. } => heads.iter_mut().flat_map(AttentionHead::params_mut).collect(),
            Layer::Fc(fc) => fc.params_mut(),
            Layer::LrRelu(u) => u.params_mut(),
        }
    }

    fn forward(&self, tape: &mut Tape, x: Var, meta: Var) -> Result<Var> {
        match self {
            Layer::AppendMeta => tape.concat_rows(&[x, meta]),
            Layer::CosinePe(h) => Ok(h.bind(tape).cosine_pe_attention(tape, x)?.y),
            Layer::Bpc(h) => h.bind(tape).bpc_layer(tape, x),
            Layer::PatchyBpc { layout, heads } => {
                let bound: Vec<_> = heads.iter().map(|h| h.bind(tape)).collect();
                let patches = patch_split_var(tape, x, layout)?;
                let mut outs = Vec::with_capacity(patches.len());
                for (h, p) in bound.iter().zip(patches) {
                    let input = tape.concat_rows(&[p, meta])?;
                    outs.push(h.bpc_layer(tape, input)?);
                }
                tape.concat_rows(&outs)
            }
            Layer::Fc(fc) => fc.bind(tape).forward(tape, x),
            Layer::LrRelu(u) => u.bind(tape).forward(tape, x),
        }
    }
}

/// A realised [`ModelSpec`]: its layers and their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    layers: Vec<Layer>,
}

impl Model {
    /// Builds either chain, drawing all weights from `rng`.
    pub fn build(spec: &ModelSpec, rng: &mut Rng) -> Result<Self> {
        let nl = spec.kq_nonlinearity;
        let vt = spec.value_transform;
        let head = |variant, m, rng: &mut Rng| AttentionHead::new(variant, m, m, nl, vt, rng);
        let mut layers = Vec::new();
        for step in spec.plan()? {
            layers.push(match step {
                LayerPlan::AppendMeta => Layer::AppendMeta,
                LayerPlan::CosinePe { m } => Layer::CosinePe(head(Variant::CosinePe, m, rng)?),
                LayerPlan::PatchyBpc { layout, head_dim } => Layer::PatchyBpc {
                    layout,
                    heads: (0..layout.patch_count())
                        .map(|_| head(Variant::BatchPc, head_dim, rng))
                        .collect::<Result<_>>()?,
                },
                LayerPlan::Bpc { m } => Layer::Bpc(head(Variant::BatchPc, m, rng)?),
                LayerPlan::Fc { n_in, n_out } => Layer::Fc(FullyConnected::new(n_in, n_out, rng)?),
                LayerPlan::LrRelu { m } => Layer::LrRelu(LrRelu::new(m)),
            });
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn build_fig1(spec: &ModelSpec, rng: &mut Rng) -> Result<Self> {
        if spec.arch != Arch::Fig1 {
            return Err(Error::Spec("build_fig1 needs arch = fig1".into()));
        }
        Self::build(spec, rng)
    }

    pub fn build_fig2(spec: &ModelSpec, rng: &mut Rng) -> Result<Self> {
        if spec.arch != Arch::Fig2 {
            return Err(Error::Spec("build_fig2 needs arch = fig2".into()));
        }
        Self::build(spec, rng)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Every parameter with its registry name, in binding order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                let kind = l.kind();
                l.params().into_iter().map(move |(n, t)| (format!("{i:02}.{kind}.{n}"), t))
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Replaces every parameter. Names and shapes must match the registry
    /// exactly and in order.
    pub fn load_params(&mut self, params: Vec<(String, Tensor)>) -> Result<()> {
        let expected: Vec<(String, Vec<usize>)> = self
            .named_params()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if expected.len() != params.len() {
            return contract(format!("expected {} parameters, got {}", expected.len(), params.len()));
        }
        for ((name, shape), (got_name, t)) in expected.iter().zip(&params) {
            if name != got_name {
                return contract(format!("parameter {got_name:?} where {name:?} was expected"));
            }
            if shape.as_slice() != t.shape() {
                return dim_err("load_params", shape, t.shape());
            }
        }
        for (slot, (_, t)) in self.params_mut().into_iter().zip(params) {
            *slot = t;
        }
        Ok(())
    }

    fn check_inputs(&self, images: &Tensor, meta: &Tensor) -> Result<()> {
        let (ir, ic) = images.require_matrix("forward images")?;
        let (mr, mc) = meta.require_matrix("forward meta")?;
        if ic != mc {
            return dim_err("forward batch columns", &[ic], &[mc]);
        }
        if ir != self.spec.image_dim() || mr != self.spec.meta_width() {
            return dim_err("forward", &[self.spec.image_dim(), self.spec.meta_width()], &[ir, mr]);
        }
        Ok(())
    }

    /// Records a forward pass on `tape`, binding parameters in registry order.
    pub fn forward_on_tape(&self, tape: &mut Tape, images: Var, meta: Var) -> Result<Var> {
        self.check_inputs(tape.value(images), tape.value(meta))?;
        let mut x = images;
        for layer in &self.layers {
            x = layer.forward(tape, x, meta)?;
        }
        Ok(x)
    }

    /// `N × b` reconstruction of `images` (`H·V·C × b`) under `meta` (`L·D × b`).
    pub fn forward(&self, images: &Tensor, meta: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let i = tape.constant(images.clone());
        let m = tape.constant(meta.clone());
        let y = self.forward_on_tape(&mut tape, i, m)?;
        Ok(tape.value(y).clone())
    }
}

fn named<'a>(ps: Vec<(&'static str, &'a Tensor)>) -> Vec<(String, &'a Tensor)> {
    ps.into_iter().map(|(n, t)| (n.to_string(), t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::one_hot_batch;

    fn tiny_fig1() -> ModelSpec {
        ModelSpec::fig1(4, 4, 1, 3, 3)
    }

    fn tiny_fig2() -> ModelSpec {
        ModelSpec::fig2(4, 4, 2, 3, 3, PatchShape { patch_h: 2, patch_w: 2 })
    }

    #[test]
    fn ka_sizes() {
        assert_eq!(ka_decoder_sizes(8).unwrap(), (8, 17));
        assert_eq!(ka_decoder_sizes(1).unwrap(), (1, 3));
        assert_eq!(ka_decoder_sizes(10).unwrap(), (10, 21));
        assert!(ka_decoder_sizes(0).is_err());
    }

    #[test]
    fn ratio_parsing_and_ceil() {
        let r: Ratio = "1/3".parse().unwrap();
        assert_eq!(r.scale_ceil(30075), 10025);
        assert_eq!(r.scale_ceil(10), 4);
        assert_eq!("6/4".parse::<Ratio>().unwrap(), Ratio::new(3, 2).unwrap());
        assert_eq!("KA".parse::<Expand>().unwrap(), Expand::Ka);
        assert!("0/1".parse::<Ratio>().is_err());
        assert!("x".parse::<Ratio>().is_err());
    }

    #[test]
    fn mnist_param_count_closed_form() {
        let spec = ModelSpec::mnist_fig1();
        // 794 = 784 pixels + 10 one-hot entries; decoder widths 10 and 21.
        let mix = 794 * 794 + 794;
        let bpc = 2 * (794 * 794 + 794);
        let squeeze = 794 * 10 + 10;
        let expand = 10 * 21 + 21;
        let out = 21 * 784 + 784;
        let slopes = 10 + 21;
        let want = mix + bpc + squeeze + expand + out + slopes;
        assert_eq!(spec.param_count().unwrap(), want);
        let model = Model::build_fig1(&spec, &mut Rng::new(1)).unwrap();
        assert_eq!(model.param_count(), want);
    }

    #[test]
    fn spec_invariants() {
        let mut s = tiny_fig1();
        s.patch = Some(PatchShape { patch_h: 2, patch_w: 2 });
        assert!(matches!(s.validate(), Err(Error::Spec(_))));
        let mut s = tiny_fig2();
        s.patch = None;
        assert!(s.validate().is_err());
        let mut s = tiny_fig1();
        s.bottleneck = 100;
        assert!(s.validate().is_err());
        let mut s = tiny_fig2();
        s.patch = Some(PatchShape { patch_h: 3, patch_w: 2 });
        assert!(s.validate().is_err());
        assert!(Model::build_fig2(&tiny_fig1(), &mut Rng::new(1)).is_err());
    }

    #[test]
    fn output_shape_contract() {
        for spec in [tiny_fig1(), tiny_fig2()] {
            let model = Model::build(&spec, &mut Rng::new(2)).unwrap();
            for b in [1, 2, 5] {
                let mut rng = Rng::new(b as u64);
                let x = Tensor::uniform(&[spec.image_dim(), b], 0.0, 1.0, &mut rng);
                let labels: Vec<usize> = (0..b).map(|j| j % spec.meta_dim).collect();
                let meta = one_hot_batch(&labels, spec.meta_dim).unwrap();
                let y = model.forward(&x, &meta).unwrap();
                assert_eq!(y.shape(), &[spec.output_dim(), b]);
            }
        }
    }

    #[test]
    fn zero_weights_collapse_to_final_bias() {
        let spec = tiny_fig1();
        let mut model = Model::build_fig1(&spec, &mut Rng::new(3)).unwrap();
        for p in model.params_mut() {
            p.data_mut().fill(0.0);
        }
        let bias = Tensor::uniform(&[16], 0.0, 1.0, &mut Rng::new(4));
        *model.params_mut().pop().unwrap() = bias.clone();
        let y = model.forward(&Tensor::zeros(&[16, 2]), &Tensor::zeros(&[3, 2])).unwrap();
        for j in 0..2 {
            assert_eq!(y.column(j).unwrap().data(), bias.data());
        }
    }

    #[test]
    fn identical_columns_give_identical_outputs() {
        let spec = tiny_fig1();
        let model = Model::build_fig1(&spec, &mut Rng::new(5)).unwrap();
        let x = Tensor::uniform(&[16, 1], 0.0, 1.0, &mut Rng::new(6));
        let x2 = x.select_cols(&[0, 0]).unwrap();
        let meta = one_hot_batch(&[1, 1], 3).unwrap();
        let y = model.forward(&x2, &meta).unwrap();
        assert_eq!(y.column(0).unwrap(), y.column(1).unwrap());
    }

    #[test]
    fn param_names_unique() {
        let model = Model::build(&tiny_fig2(), &mut Rng::new(7)).unwrap();
        let mut names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
    }

    #[test]
    fn cpe_front_adds_one_layer() {
        let off = Model::build(&tiny_fig2(), &mut Rng::new(8)).unwrap();
        let mut spec = tiny_fig2();
        spec.use_cpe_front = true;
        let on = Model::build(&spec, &mut Rng::new(8)).unwrap();
        assert_eq!(on.layers().len(), off.layers().len() + 1);
        assert!(matches!(on.layers()[0], Layer::CosinePe(_)));
        let shapes = |m: &Model| -> Vec<Vec<usize>> {
            m.layers()
                .iter()
                .filter(|l| !matches!(l, Layer::CosinePe(_)))
                .flat_map(|l| l.params().into_iter().map(|(_, t)| t.shape().to_vec()))
                .collect()
        };
        assert_eq!(shapes(&on), shapes(&off));
    }

    #[test]
    fn fig2_full_scale_plan() {
        let spec = ModelSpec {
            meta_dim: 1,
            ..ModelSpec::fig2(100, 100, 3, 1, 8, PatchShape { patch_h: 20, patch_w: 20 })
        };
        let plan = spec.plan().unwrap();
        let LayerPlan::PatchyBpc { layout, head_dim } = plan[0] else {
            panic!("first layer should be patchy");
        };
        assert_eq!(layout.patch_count(), 75);
        assert_eq!(head_dim, 401);
        assert_eq!(plan[2], LayerPlan::Fc { n_in: 30076, n_out: 10025 });
    }

    #[test]
    fn load_params_checks_names_and_shapes() {
        let spec = tiny_fig1();
        let a = Model::build(&spec, &mut Rng::new(9)).unwrap();
        let mut b = Model::build(&spec, &mut Rng::new(10)).unwrap();
        let params: Vec<(String, Tensor)> = a.named_params().into_iter().map(|(n, t)| (n, t.clone())).collect();
        b.load_params(params.clone()).unwrap();
        assert_eq!(a, b);
        let mut renamed = params.clone();
        renamed[0].0 = "nope".into();
        assert!(b.load_params(renamed).is_err());
        let mut reshaped = params;
        reshaped[0].1 = Tensor::zeros(&[1]);
        assert!(b.load_params(reshaped).is_err());
    }

    #[test]
    fn forward_rejects_bad_shapes() {
        let model = Model::build(&tiny_fig1(), &mut Rng::new(11)).unwrap();
        assert!(model.forward(&Tensor::zeros(&[15, 2]), &Tensor::zeros(&[3, 2])).is_err());
        assert!(model.forward(&Tensor::zeros(&[16, 2]), &Tensor::zeros(&[3, 3])).is_err());
    }
}
