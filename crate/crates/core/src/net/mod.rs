//! The patch network: a VGG-style convolutional cascade that maps each
//! 32x32 patch to a feature vector, followed by two fully connected heads
//! that predict a patch quality and a patch weight. The image score is the
//! weight-averaged patch quality.

mod file;
pub(crate) mod layers;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::{PatchGrid, PATCH_SIZE};
use crate::rng::{rng_from_seed, Rng};
use layers::{conv_backward, conv_forward, gemm, pool_backward, pool_forward, ConvShape, MatMut, MatRef};

pub use file::{load_model, save_model, MODEL_FORMAT_VERSION};
pub use layers::Scalar;

/// Number of trainable parameters of the full-size architecture.
pub const FULL_PARAMETER_COUNT: usize = 5_237_986;

/// Patches pushed through the network at once during inference.
const INFERENCE_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub patch_size: usize,
    /// Output channels of each convolution stage; every stage is
    /// `convs_per_stage` 3x3 convolutions followed by a 2x2 max-pool.
    pub stage_channels: Vec<usize>,
    pub convs_per_stage: usize,
    pub head_hidden: usize,
    pub dropout: f64,
    pub weight_floor: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            patch_size: PATCH_SIZE,
            stage_channels: vec![32, 64, 128, 256, 512],
            convs_per_stage: 2,
            head_hidden: 512,
            dropout: 0.5,
            weight_floor: 1e-6,
        }
    }
}

impl ModelSpec {
    /// Same topology with every width divided by `divisor`.
    pub fn scaled(divisor: usize) -> ModelSpec {
        let full = ModelSpec::default();
        ModelSpec {
            stage_channels: full.stage_channels.iter().map(|c| (c / divisor).max(1)).collect(),
            head_hidden: (full.head_hidden / divisor).max(1),
            ..full
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stages = self.stage_channels.len();
        if stages == 0 || self.convs_per_stage == 0 || self.head_hidden == 0 {
            return Err(Error::InvalidInput("model spec has an empty stage or head".into()));
        }
        if stages >= usize::BITS as usize || self.patch_size != 1 << stages {
            return Err(Error::InvalidInput(format!(
                "patch size {} must reduce to 1x1 after {stages} pooling stages",
                self.patch_size
            )));
        }
        if self.stage_channels.contains(&0) {
            return Err(Error::InvalidInput("zero-width convolution stage".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidInput(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.weight_floor > 0.0) {
            return Err(Error::InvalidInput("weight floor must be positive".into()));
        }
        Ok(())
    }

    /// Length of the feature vector entering the heads.
    pub fn feature_len(&self) -> usize {
        *self.stage_channels.last().expect("validated spec")
    }

    /// Hex SHA-256 of the canonical JSON form of the architecture.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Named parameter tensors in storage order.
    pub fn layout(&self) -> Vec<TensorInfo> {
        let mut out = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>, fan_in: usize| {
            let len = shape.iter().product();
            out.push(TensorInfo { name, shape, offset, len, fan_in });
            offset += len;
        };
        let mut cin = 1;
        let mut index = 0;
        for &cout in &self.stage_channels {
            for _ in 0..self.convs_per_stage {
                index += 1;
                push(format!("conv{index}.weight"), vec![cout, cin, 3, 3], cin * 9);
                push(format!("conv{index}.bias"), vec![cout], 0);
                cin = cout;
            }
        }
        let features = self.feature_len();
        for head in HEAD_NAMES {
            push(format!("{head}.fc1.weight"), vec![self.head_hidden, features], features);
            push(format!("{head}.fc1.bias"), vec![self.head_hidden], 0);
            push(format!("{head}.fc2.weight"), vec![1, self.head_hidden], self.head_hidden);
            push(format!("{head}.fc2.bias"), vec![1], 0);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().iter().map(|t| t.len).sum()
    }

    fn ops(&self) -> Vec<Op> {
        let layout = self.layout();
        let mut ops = Vec::new();
        let (mut cin, mut side, mut index) = (1, self.patch_size, 0);
        for &cout in &self.stage_channels {
            for _ in 0..self.convs_per_stage {
                let (w, b) = (&layout[2 * index], &layout[2 * index + 1]);
                ops.push(Op::Conv { cin, cout, side, weight: w.offset, bias: b.offset });
                cin = cout;
                index += 1;
            }
            ops.push(Op::Pool { channels: cout, side });
            side /= 2;
        }
        ops
    }

    fn heads(&self) -> [HeadOffsets; 2] {
        let layout = self.layout();
        let find = |name: String| layout.iter().find(|t| t.name == name).expect("layout entry").offset;
        HEAD_NAMES.map(|head| HeadOffsets {
            w1: find(format!("{head}.fc1.weight")),
            b1: find(format!("{head}.fc1.bias")),
            w2: find(format!("{head}.fc2.weight")),
            b2: find(format!("{head}.fc2.bias")),
        })
    }
}

const HEAD_NAMES: [&str; 2] = ["quality", "weight"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
    /// Inputs feeding one output unit; zero for biases.
    #[serde(skip)]
    pub fan_in: usize,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Conv { cin: usize, cout: usize, side: usize, weight: usize, bias: usize },
    Pool { channels: usize, side: usize },
}

#[derive(Debug, Clone, Copy)]
struct HeadOffsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Network parameters stored as one flat vector in [`ModelSpec::layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    spec: ModelSpec,
    params: Vec<T>,
}

/// Intermediate values kept from a training forward pass.
pub struct ForwardCache<T> {
    batch: usize,
    /// `activations[0]` is the input; `activations[i + 1]` is the output of op `i`.
    activations: Vec<Vec<T>>,
    heads: [HeadCache<T>; 2],
}

struct HeadCache<T> {
    /// Dropout scale per input element (0 or 1/(1-p)); empty when dropout is off.
    mask_in: Vec<T>,
    mask_hidden: Vec<T>,
    input: Vec<T>,
    hidden: Vec<T>,
    output: Vec<T>,
}

/// Raw head outputs of a batch: patch quality and pre-floor weight logits.
pub struct HeadOutputs<T> {
    pub quality: Vec<T>,
    pub weight_logit: Vec<T>,
}

impl<T: Scalar> Network<T> {
    /// He-normal (fan-in) weights, zero biases.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng_from_seed(seed);
        let mut params = Vec::with_capacity(spec.parameter_count());
        for t in spec.layout() {
            if t.fan_in == 0 {
                params.extend(std::iter::repeat(T::zero()).take(t.len));
            } else {
                let std = (2.0 / t.fan_in as f64).sqrt();
                params.extend((0..t.len).map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    T::of(z * std)
                }));
            }
        }
        Ok(Network { spec, params })
    }

    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.parameter_count();
        Ok(Network { spec, params: vec![T::zero(); n] })
    }

    pub fn from_params(spec: ModelSpec, params: Vec<T>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.parameter_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters supplied, spec needs {}",
                params.len(),
                spec.parameter_count()
            )));
        }
        Ok(Network { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.spec
            .layout()
            .into_iter()
            .find(|t| t.name == name)
            .map(|t| &self.params[t.offset..t.offset + t.len])
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            params: self
                .params
                .iter()
                .map(|v| U::of(v.to_f64().expect("finite parameter")))
                .collect(),
        }
    }

    fn check_input(&self, patches: &[T], batch: usize) -> Result<()> {
        let len = self.spec.patch_size * self.spec.patch_size;
        if patches.len() != batch * len {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {batch} patches of {len}",
                patches.len()
            )));
        }
        Ok(())
    }

    /// Convolutional trunk; returns the activation after every op.
    fn trunk(&self, patches: &[T], batch: usize, keep: bool) -> Vec<Vec<T>> {
        let mut acts = vec![patches.to_vec()];
        let mut col = Vec::new();
        for op in self.spec.ops() {
            let x = acts.last().expect("input present");
            let y = match op {
                Op::Conv { cin, cout, side, weight, bias } => {
                    let s = ConvShape { cin, cout, batch, height: side, width: side };
                    conv_forward(
                        x,
                        &self.params[weight..weight + cout * cin * 9],
                        &self.params[bias..bias + cout],
                        s,
                        &mut col,
                    )
                }
                Op::Pool { channels, side } => pool_forward(x, channels * batch, side, side),
            };
            if !keep {
                acts.clear();
            }
            acts.push(y);
        }
        acts
    }

    fn head_forward(&self, head: HeadOffsets, features: &[T], batch: usize, rng: Option<&mut Rng>) -> HeadCache<T> {
        let f = self.spec.feature_len();
        let hdim = self.spec.head_hidden;
        let p = self.spec.dropout;
        let (mask_in, mask_hidden, rng) = match rng {
            Some(rng) if p > 0.0 => (dropout_mask::<T>(f * batch, p, rng), Vec::new(), Some(rng)),
            _ => (Vec::new(), Vec::new(), None),
        };
        let input = apply_mask(features, &mask_in);
        let mut hidden = vec![T::zero(); hdim * batch];
        for (row, &b) in hidden.chunks_exact_mut(batch).zip(&self.params[head.b1..head.b1 + hdim]) {
            row.fill(b);
        }
        gemm(
            T::one(),
            MatRef::new(&self.params[head.w1..head.w1 + hdim * f], hdim, f, f),
            MatRef::new(&input, f, batch, batch),
            T::one(),
            MatMut::new(&mut hidden, hdim, batch, batch),
        );
        let mask_hidden = match rng {
            Some(rng) => dropout_mask::<T>(hdim * batch, p, rng),
            None => mask_hidden,
        };
        let hidden_in = apply_mask(&hidden, &mask_hidden);
        let mut output = vec![self.params[head.b2]; batch];
        gemm(
            T::one(),
            MatRef::new(&self.params[head.w2..head.w2 + hdim], 1, hdim, hdim),
            MatRef::new(&hidden_in, hdim, batch, batch),
            T::one(),
            MatMut::new(&mut output, 1, batch, batch),
        );
        HeadCache { mask_in, mask_hidden, input, hidden: hidden_in, output }
    }

    /// Forward pass over `batch` patches laid out contiguously (`[batch, p, p]`).
    /// With `dropout` set, dropout is active and the cache supports [`Network::backward`].
    pub fn forward_train(
        &self,
        patches: &[T],
        batch: usize,
        mut dropout: Option<&mut Rng>,
    ) -> Result<(HeadOutputs<T>, ForwardCache<T>)> {
        self.check_input(patches, batch)?;
        let activations = self.trunk(patches, batch, true);
        let features = activations.last().expect("trunk output");
        let [qh, wh] = self.spec.heads();
        let quality = self.head_forward(qh, features, batch, dropout.as_deref_mut());
        let weight = self.head_forward(wh, features, batch, dropout);
        let outputs = HeadOutputs {
            quality: quality.output.clone(),
            weight_logit: weight.output.clone(),
        };
        Ok((outputs, ForwardCache { batch, activations, heads: [quality, weight] }))
    }

    /// Inference forward pass without dropout, processed in chunks.
    pub fn forward(&self, patches: &[T], batch: usize) -> Result<HeadOutputs<T>> {
        self.check_input(patches, batch)?;
        let len = self.spec.patch_size * self.spec.patch_size;
        let mut quality = Vec::with_capacity(batch);
        let mut weight_logit = Vec::with_capacity(batch);
        let [qh, wh] = self.spec.heads();
        for chunk in patches.chunks(INFERENCE_CHUNK * len) {
            let n = chunk.len() / len;
            let acts = self.trunk(chunk, n, false);
            let features = acts.last().expect("trunk output");
            quality.extend(self.head_forward(qh, features, n, None).output);
            weight_logit.extend(self.head_forward(wh, features, n, None).output);
        }
        Ok(HeadOutputs { quality, weight_logit })
    }

    /// Accumulates parameter gradients into `grad` given the loss gradient
    /// w.r.t. the quality outputs and the pre-floor weight logits.
    pub fn backward(&self, cache: ForwardCache<T>, d_quality: &[T], d_weight_logit: &[T], grad: &mut [T]) {
        assert_eq!(grad.len(), self.params.len());
        let batch = cache.batch;
        let f = self.spec.feature_len();
        let mut d_features = vec![T::zero(); f * batch];
        let heads = self.spec.heads();
        for ((head, hc), dout) in heads.iter().zip(&cache.heads).zip([d_quality, d_weight_logit]) {
            self.head_backward(*head, hc, dout, batch, grad, &mut d_features);
        }

        let ops = self.spec.ops();
        let mut dy = d_features;
        let (mut col, mut dcol) = (Vec::new(), Vec::new());
        for (i, op) in ops.iter().enumerate().rev() {
            let x = &cache.activations[i];
            let y = &cache.activations[i + 1];
            dy = match *op {
                Op::Pool { channels, side } => pool_backward(x, &dy, channels * batch, side, side),
                Op::Conv { cin, cout, side, weight, bias } => {
                    let s = ConvShape { cin, cout, batch, height: side, width: side };
                    let (head, tail) = grad.split_at_mut(bias);
                    let dweight = &mut head[weight..weight + cout * cin * 9];
                    let dbias = &mut tail[..cout];
                    let mut dx = if i > 0 { vec![T::zero(); x.len()] } else { Vec::new() };
                    conv_backward(
                        x,
                        y,
                        &mut dy,
                        &self.params[weight..weight + cout * cin * 9],
                        s,
                        dweight,
                        dbias,
                        (i > 0).then_some(dx.as_mut_slice()),
                        &mut col,
                        &mut dcol,
                    );
                    dx
                }
            };
        }
    }

    fn head_backward(
        &self,
        head: HeadOffsets,
        hc: &HeadCache<T>,
        dout: &[T],
        batch: usize,
        grad: &mut [T],
        d_features: &mut [T],
    ) {
        let f = self.spec.feature_len();
        let hdim = self.spec.head_hidden;
        grad[head.b2] += dout.iter().fold(T::zero(), |a, &v| a + v);
        gemm(
            T::one(),
            MatRef::new(dout, 1, batch, batch),
            MatRef::new(&hc.hidden, hdim, batch, batch).t(),
            T::one(),
            MatMut::new(&mut grad[head.w2..head.w2 + hdim], 1, hdim, hdim),
        );
        // d hidden = w2^T dout, then through the hidden dropout mask.
        let mut dh = vec![T::zero(); hdim * batch];
        gemm(
            T::one(),
            MatRef::new(&self.params[head.w2..head.w2 + hdim], 1, hdim, hdim).t(),
            MatRef::new(dout, 1, batch, batch),
            T::zero(),
            MatMut::new(&mut dh, hdim, batch, batch),
        );
        let dh = apply_mask(&dh, &hc.mask_hidden);
        for (row, db) in dh.chunks_exact(batch).zip(&mut grad[head.b1..head.b1 + hdim]) {
            *db += row.iter().fold(T::zero(), |a, &v| a + v);
        }
        gemm(
            T::one(),
            MatRef::new(&dh, hdim, batch, batch),
            MatRef::new(&hc.input, f, batch, batch).t(),
            T::one(),
            MatMut::new(&mut grad[head.w1..head.w1 + hdim * f], hdim, f, f),
        );
        let mut din = vec![T::zero(); f * batch];
        gemm(
            T::one(),
            MatRef::new(&self.params[head.w1..head.w1 + hdim * f], hdim, f, f).t(),
            MatRef::new(&dh, hdim, batch, batch),
            T::zero(),
            MatMut::new(&mut din, f, batch, batch),
        );
        let din = apply_mask(&din, &hc.mask_in);
        for (a, b) in d_features.iter_mut().zip(din) {
            *a += b;
        }
    }
}

fn dropout_mask<T: Scalar>(len: usize, p: f64, rng: &mut Rng) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - p));
    (0..len)
        .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
        .collect()
}

fn apply_mask<T: Scalar>(x: &[T], mask: &[T]) -> Vec<T> {
    if mask.is_empty() {
        x.to_vec()
    } else {
        x.iter().zip(mask).map(|(&a, &m)| a * m).collect()
    }
}

/// Weight head activation: ReLU plus a positive floor.
#[inline]
pub fn weight_activation(logit: f64, floor: f64) -> f64 {
    logit.max(0.0) + floor
}

/// Per-patch predictions in normalized label units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchPrediction {
    pub qualities: Vec<f64>,
    pub weights: Vec<f64>,
}

impl PatchPrediction {
    pub fn len(&self) -> usize {
        self.qualities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.qualities.is_empty()
    }
}

/// Weighted mean of patch qualities.
pub fn aggregate(pred: &PatchPrediction) -> f64 {
    weighted_mean(&pred.qualities, &pred.weights)
}

pub fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    let (num, den) = values
        .iter()
        .zip(weights)
        .fold((0.0, 0.0), |(n, d), (&y, &a)| (n + a * y, d + a));
    num / den
}

/// Trained network plus the label normalization it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub network: Network<f32>,
    pub label_mean: f64,
    pub label_std: f64,
    pub target_name: String,
    /// Whether larger target values mean better images.
    pub higher_is_better: bool,
}

pub fn init_model(spec: ModelSpec, seed: u64) -> Result<Model> {
    if spec.patch_size != PATCH_SIZE {
        return Err(Error::InvalidInput(format!(
            "patch size {} differs from the {PATCH_SIZE}-pixel patch grid",
            spec.patch_size
        )));
    }
    Ok(Model {
        network: Network::init(spec, seed)?,
        label_mean: 0.0,
        label_std: 1.0,
        target_name: "unlabeled".into(),
        higher_is_better: true,
    })
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        self.network.spec()
    }

    pub fn parameter_count(&self) -> usize {
        self.network.parameter_count()
    }

    pub fn fingerprint(&self) -> String {
        self.spec().fingerprint()
    }

    pub fn denormalize(&self, value: f64) -> f64 {
        value * self.label_std + self.label_mean
    }

    pub fn normalize(&self, value: f64) -> f64 {
        (value - self.label_mean) / self.label_std
    }

    fn to_prediction(&self, out: HeadOutputs<f32>) -> PatchPrediction {
        let floor = self.spec().weight_floor;
        PatchPrediction {
            qualities: out.quality.iter().map(|&v| v as f64).collect(),
            weights: out
                .weight_logit
                .iter()
                .map(|&v| weight_activation(v as f64, floor))
                .collect(),
        }
    }
}

/// Inference over every patch of a grid (dropout off).
pub fn forward_patches(model: &Model, patches: &PatchGrid) -> Result<PatchPrediction> {
    let out = model.network.forward(patches.data(), patches.len())?;
    Ok(model.to_prediction(out))
}

/// Training-mode forward pass: dropout masks are drawn from `rng`.
pub fn forward_patches_train(model: &Model, patches: &PatchGrid, rng: &mut Rng) -> Result<PatchPrediction> {
    let (out, _) = model.network.forward_train(patches.data(), patches.len(), Some(rng))?;
    Ok(model.to_prediction(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{partition_patches, Image};

    #[test]
    fn full_parameter_count() {
        let spec = ModelSpec::default();
        assert_eq!(spec.parameter_count(), FULL_PARAMETER_COUNT);
        let conv: usize = spec
            .layout()
            .iter()
            .filter(|t| t.name.starts_with("conv"))
            .map(|t| t.len)
            .sum();
        assert_eq!(conv, 4_711_648);
        assert_eq!(spec.feature_len(), 512);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = ModelSpec::default();
        s.patch_size = 16;
        assert!(s.validate().is_err());
        let mut s = ModelSpec::default();
        s.dropout = 1.0;
        assert!(s.validate().is_err());
        let mut s = ModelSpec::default();
        s.weight_floor = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn fingerprint_tracks_spec() {
        assert_eq!(ModelSpec::default().fingerprint(), ModelSpec::default().fingerprint());
        assert_ne!(ModelSpec::default().fingerprint(), ModelSpec::scaled(8).fingerprint());
    }

    #[test]
    fn zero_network_outputs_floor() {
        let model = Model {
            network: Network::zeros(ModelSpec::scaled(8)).unwrap(),
            ..init_model(ModelSpec::scaled(8), 0).unwrap()
        };
        let img = Image::from_fn(64, 96, |r, c| ((r * c) % 7) as f32 / 7.0);
        let pred = forward_patches(&model, &partition_patches(&img).unwrap()).unwrap();
        assert_eq!(pred.len(), 6);
        assert!(pred.qualities.iter().all(|&y| y == 0.0));
        assert!(pred.weights.iter().all(|&a| a == 1e-6));
    }

    #[test]
    fn init_is_seeded() {
        let a: Network<f32> = Network::init(ModelSpec::scaled(8), 5).unwrap();
        let b: Network<f32> = Network::init(ModelSpec::scaled(8), 5).unwrap();
        let c: Network<f32> = Network::init(ModelSpec::scaled(8), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.tensor("conv1.bias").unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inference_chunking_matches_single_pass() {
        let net: Network<f64> = Network::init(ModelSpec::scaled(8), 2).unwrap();
        let n = INFERENCE_CHUNK + 3;
        let mut rng = rng_from_seed(1);
        let patches: Vec<f64> = (0..n * 1024).map(|_| rng.gen()).collect();
        let chunked = net.forward(&patches, n).unwrap();
        let (single, _) = net.forward_train(&patches, n, None).unwrap();
        for (a, b) in chunked.quality.iter().zip(&single.quality) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(chunked.weight_logit.len(), n);
    }

    #[test]
    fn dropout_changes_only_training_outputs() {
        let net: Network<f64> = Network::init(ModelSpec::scaled(8), 2).unwrap();
        let mut rng = rng_from_seed(1);
        let patches: Vec<f64> = (0..4 * 1024).map(|_| rng.gen()).collect();
        let a = net.forward(&patches, 4).unwrap();
        let b = net.forward(&patches, 4).unwrap();
        assert_eq!(a.quality, b.quality);
        let (c, _) = net.forward_train(&patches, 4, Some(&mut rng_from_seed(3))).unwrap();
        assert_ne!(a.quality, c.quality);
    }

    #[test]
    fn aggregate_examples() {
        let p = PatchPrediction { qualities: vec![0.0, 1.0], weights: vec![1.0, 3.0] };
        assert!((aggregate(&p) - 0.75).abs() < 1e-15);
        let p = PatchPrediction { qualities: vec![2.0, 4.0, 9.0], weights: vec![0.5; 3] };
        assert!((aggregate(&p) - 5.0).abs() < 1e-12);
        let p = PatchPrediction { qualities: vec![-3.5], weights: vec![1e-6] };
        assert_eq!(aggregate(&p), -3.5);
    }

    #[test]
    fn wrong_input_length_rejected() {
        let net: Network<f32> = Network::zeros(ModelSpec::scaled(8)).unwrap();
        assert!(net.forward(&[0.0; 1000], 1).is_err());
    }
}
