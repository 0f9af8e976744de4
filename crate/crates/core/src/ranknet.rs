//! Segment scoring network: fully-connected ReLU layers ending in a single
//! linear unit, trained with inverted dropout on the input and after the
//! first hidden layer. Parameters are generic over the float type so the
//! same code runs in `f32` for training and `f64` for gradient checks.

use std::fmt::Debug;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive, NumAssign};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;
use crate::types::{ContextMeta, SegmentSpan, VideoRecord};

pub const MODEL_MAGIC: &[u8; 4] = b"V2GM";

/// Float types the network can run in.
pub trait Real:
    Float + FromPrimitive + NumAssign + LinalgScalar + ScalarOperand + Debug + Default + Send + Sync + 'static
{
}
impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("expected {expected} input features, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("forward cache does not belong to this model state")]
    StaleCache,
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("category {index} out of range for {num_categories} categories")]
    CategoryOutOfRange { index: usize, num_categories: usize },
    #[error("{path}: malformed model file: {reason}")]
    FormatError { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    /// Drop probability applied to the input features.
    pub dropout_input: f64,
    /// Drop probability applied after the first hidden layer.
    pub dropout_hidden1: f64,
    /// Biases on hidden layers. The output unit always has one.
    pub include_biases: bool,
}

impl NetConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![512, 128],
            dropout_input: 0.8,
            dropout_hidden1: 0.25,
            include_biases: true,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.input_dim == 0 || self.hidden.contains(&0) {
            return Err(NetError::InvalidConfig("all layer sizes must be at least 1".into()));
        }
        for p in [self.dropout_input, self.dropout_hidden1] {
            if !(0.0..1.0).contains(&p) {
                return Err(NetError::InvalidConfig(format!("dropout {p} outside [0, 1)")));
            }
        }
        Ok(())
    }

    /// `(fan_out, fan_in, has_bias)` for every layer, output last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize, bool)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(1);
        let last = dims.len() - 2;
        dims.windows(2)
            .enumerate()
            .map(|(i, w)| (w[1], w[0], self.include_biases || i == last))
            .collect()
    }

    /// Drop probability on the input of layer `l`.
    fn dropout_at(&self, l: usize) -> f64 {
        match l {
            0 => self.dropout_input,
            1 if !self.hidden.is_empty() => self.dropout_hidden1,
            _ => 0.0,
        }
    }
}

pub fn param_count(config: &NetConfig) -> usize {
    config
        .layer_shapes()
        .iter()
        .map(|&(o, i, b)| o * i + if b { o } else { 0 })
        .sum()
}

/// Weights (`fan_out x fan_in`) and optional bias of one dense layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<F> {
    pub weights: Array2<F>,
    pub bias: Option<Array1<F>>,
}

impl<F: Real> Layer<F> {
    fn zeros(out: usize, inp: usize, bias: bool) -> Self {
        Self {
            weights: Array2::zeros((out, inp)),
            bias: bias.then(|| Array1::zeros(out)),
        }
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.weights.nrows(), self.weights.ncols(), self.bias.is_some())
    }

    fn cast<G: Real>(&self) -> Layer<G> {
        let c = |v: &F| G::from_f64(v.to_f64().unwrap()).unwrap();
        Layer {
            weights: self.weights.map(c),
            bias: self.bias.as_ref().map(|b| b.map(c)),
        }
    }
}

/// A gradient, velocity, or any other tensor set shaped like the model.
pub type ParamSet<F> = Vec<Layer<F>>;

pub fn zeros_like<F: Real>(params: &[Layer<F>]) -> ParamSet<F> {
    params.iter().map(Layer::zeros_like).collect()
}

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Debug)]
pub struct RankNetModel<F = f32> {
    config: NetConfig,
    layers: ParamSet<F>,
    generation: u64,
}

impl<F: Real> PartialEq for RankNetModel<F> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.layers == other.layers
    }
}

/// Training mode draws dropout masks from the given generator.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
}

/// Activations saved by a forward pass for the matching backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<F> {
    generation: u64,
    /// Input of each layer after dropout.
    inputs: Vec<Array2<F>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<F>>,
    /// Scaled keep-masks on each layer input, where dropout was applied.
    masks: Vec<Option<Array2<F>>>,
}

impl<F: Real> RankNetModel<F> {
    /// Glorot-uniform weights, zero biases.
    pub fn init(config: NetConfig, rng: &mut Rng) -> Result<Self, NetError> {
        config.validate()?;
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(out, inp, bias)| {
                let a = (6.0 / (inp + out) as f64).sqrt();
                let mut layer = Layer::zeros(out, inp, bias);
                layer
                    .weights
                    .iter_mut()
                    .for_each(|w| *w = F::from_f64(rng.uniform_range(-a, a)).unwrap());
                layer
            })
            .collect();
        Ok(Self {
            config,
            layers,
            generation: next_generation(),
        })
    }

    /// Build a model from explicit layers; shapes must match `config`.
    pub fn from_layers(config: NetConfig, layers: ParamSet<F>) -> Result<Self, NetError> {
        config.validate()?;
        let shapes = config.layer_shapes();
        let ok = shapes.len() == layers.len()
            && shapes.iter().zip(&layers).all(|(&(o, i, b), l)| {
                l.weights.dim() == (o, i) && l.bias.as_ref().map(|b| b.len()) == b.then_some(o)
            });
        if !ok {
            return Err(NetError::InvalidConfig("layer shapes do not match the config".into()));
        }
        if layers
            .iter()
            .any(|l| l.weights.iter().chain(l.bias.iter().flatten()).any(|v| !v.is_finite()))
        {
            return Err(NetError::InvalidConfig("non-finite parameter".into()));
        }
        Ok(Self {
            config,
            layers,
            generation: next_generation(),
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer<F>] {
        &self.layers
    }

    /// Mutable parameters. Outstanding forward caches become stale.
    pub fn layers_mut(&mut self) -> &mut [Layer<F>] {
        self.generation = next_generation();
        &mut self.layers
    }

    pub fn cast<G: Real>(&self) -> RankNetModel<G> {
        RankNetModel {
            config: self.config.clone(),
            layers: self.layers.iter().map(Layer::cast).collect(),
            generation: next_generation(),
        }
    }

    /// Forward a batch, one row per segment.
    pub fn forward_batch(&self, x: ArrayView2<F>, mode: Mode<'_>) -> Result<(Array1<F>, ForwardCache<F>), NetError> {
        if x.ncols() != self.config.input_dim {
            return Err(NetError::DimMismatch {
                expected: self.config.input_dim,
                got: x.ncols(),
            });
        }
        let mut rng = match mode {
            Mode::Train(rng) => Some(rng),
            Mode::Eval => None,
        };
        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers - 1);
        let mut masks = Vec::with_capacity(n_layers);
        let mut act = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let p = self.config.dropout_at(l);
            let mask = match rng.as_deref_mut() {
                Some(rng) if p > 0.0 => {
                    let scale = F::from_f64(1.0 / (1.0 - p)).unwrap();
                    let m = Array2::from_shape_simple_fn(act.raw_dim(), || {
                        if rng.uniform() < p {
                            F::zero()
                        } else {
                            scale
                        }
                    });
                    act *= &m;
                    Some(m)
                }
                _ => None,
            };
            let mut z = act.dot(&layer.weights.t());
            if let Some(b) = &layer.bias {
                z += b;
            }
            inputs.push(act);
            masks.push(mask);
            if l + 1 < n_layers {
                act = z.mapv(|v| v.max(F::zero()));
                pre.push(z);
            } else {
                let scores = z.column(0).to_owned();
                let cache = ForwardCache {
                    generation: self.generation,
                    inputs,
                    pre,
                    masks,
                };
                return Ok((scores, cache));
            }
        }
        unreachable!("a network has at least one layer")
    }

    /// Score one segment.
    pub fn forward(&self, x: &[F], mode: Mode<'_>) -> Result<(F, ForwardCache<F>), NetError> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let (s, cache) = self.forward_batch(view, mode)?;
        Ok((s[0], cache))
    }

    pub fn score(&self, x: &[F]) -> Result<F, NetError> {
        self.forward(x, Mode::Eval).map(|(s, _)| s)
    }

    pub fn score_batch(&self, x: ArrayView2<F>) -> Result<Array1<F>, NetError> {
        self.forward_batch(x, Mode::Eval).map(|(s, _)| s)
    }

    /// Parameter gradients of `sum_i d_scores[i] * score_i`.
    pub fn backward(&self, cache: &ForwardCache<F>, d_scores: ArrayView1<F>) -> Result<ParamSet<F>, NetError> {
        if cache.generation != self.generation || cache.inputs.len() != self.layers.len() {
            return Err(NetError::StaleCache);
        }
        let batch = cache.inputs[0].nrows();
        if d_scores.len() != batch {
            return Err(NetError::DimMismatch {
                expected: batch,
                got: d_scores.len(),
            });
        }
        let mut grads = zeros_like(&self.layers);
        let mut delta = d_scores.to_owned().insert_axis(Axis(1));
        for l in (0..self.layers.len()).rev() {
            let g = &mut grads[l];
            g.weights = delta.t().dot(&cache.inputs[l]);
            if let Some(b) = g.bias.as_mut() {
                *b = delta.sum_axis(Axis(0));
            }
            if l == 0 {
                break;
            }
            let mut d_in = delta.dot(&self.layers[l].weights);
            if let Some(m) = &cache.masks[l] {
                d_in *= m;
            }
            Zip::from(&mut d_in).and(&cache.pre[l - 1]).for_each(|d, &z| {
                if z <= F::zero() {
                    *d = F::zero();
                }
            });
            delta = d_in;
        }
        Ok(grads)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NetError> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|source| NetError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NetError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| NetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::decode(&bytes, path)
    }

    /// `V2GM`, u32 LE header length, JSON header, then every weight matrix
    /// (row-major) and bias as f32 LE, layer by layer.
    pub fn encode(&self) -> Vec<u8> {
        let header = ModelHeader {
            config: self.config.clone(),
            layers: self.config.layer_shapes(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = MODEL_MAGIC.to_vec();
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for layer in &self.layers {
            for v in layer.weights.iter().chain(layer.bias.iter().flatten()) {
                out.extend_from_slice(&(v.to_f32().unwrap()).to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self, NetError> {
        let fail = |reason: String| NetError::FormatError {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 8 || &bytes[..4] != MODEL_MAGIC {
            return Err(fail("bad magic".into()));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = bytes.get(8..8 + hlen).ok_or_else(|| fail("truncated header".into()))?;
        let header: ModelHeader = serde_json::from_slice(body).map_err(|e| fail(format!("header: {e}")))?;
        header.config.validate().map_err(|e| fail(e.to_string()))?;
        if header.layers != header.config.layer_shapes() {
            return Err(fail("declared layer shapes disagree with the config".into()));
        }
        let mut floats = bytes[8 + hlen..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let expected = param_count(&header.config);
        if bytes.len() - 8 - hlen != expected * 4 {
            return Err(fail(format!(
                "expected {expected} parameters, found {} bytes",
                bytes.len() - 8 - hlen
            )));
        }
        let mut take = |n: usize| -> Vec<F> {
            floats
                .by_ref()
                .take(n)
                .map(|v| F::from_f32(v).unwrap())
                .collect()
        };
        let layers = header
            .layers
            .iter()
            .map(|&(o, i, b)| Layer {
                weights: Array2::from_shape_vec((o, i), take(o * i)).unwrap(),
                bias: b.then(|| Array1::from_vec(take(o))),
            })
            .collect();
        Self::from_layers(header.config, layers).map_err(|e| fail(e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    config: NetConfig,
    layers: Vec<(usize, usize, bool)>,
}

/// Models with identical configs whose scores are averaged.
#[derive(Clone, Debug)]
pub struct Ensemble<F = f32> {
    models: Vec<RankNetModel<F>>,
}

impl<F: Real> PartialEq for Ensemble<F> {
    fn eq(&self, other: &Self) -> bool {
        self.models == other.models
    }
}

impl<F: Real> Ensemble<F> {
    pub fn new(models: Vec<RankNetModel<F>>) -> Result<Self, NetError> {
        let first = models
            .first()
            .ok_or_else(|| NetError::InvalidConfig("empty ensemble".into()))?;
        if models.iter().any(|m| m.config != first.config) {
            return Err(NetError::InvalidConfig("ensemble members differ in config".into()));
        }
        Ok(Self { models })
    }

    pub fn models(&self) -> &[RankNetModel<F>] {
        &self.models
    }

    pub fn input_dim(&self) -> usize {
        self.models[0].config.input_dim
    }

    /// Mean eval-mode score. Member scores are summed in sorted order so the
    /// result does not depend on member order.
    pub fn score(&self, x: &[F]) -> Result<f64, NetError> {
        let mut s = self
            .models
            .iter()
            .map(|m| m.score(x).map(|v| v.to_f64().unwrap()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(sorted_mean(&mut s))
    }

    pub fn score_batch(&self, x: ArrayView2<F>) -> Result<Vec<f64>, NetError> {
        let per_model = self
            .models
            .iter()
            .map(|m| m.score_batch(x))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((0..x.nrows())
            .map(|r| {
                let mut s: Vec<f64> = per_model.iter().map(|v| v[r].to_f64().unwrap()).collect();
                sorted_mean(&mut s)
            })
            .collect())
    }
}

fn sorted_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn ensemble_score<F: Real>(ensemble: &Ensemble<F>, x: &[F]) -> Result<f64, NetError> {
    ensemble.score(x)
}

/// Length of the context vector for `num_categories` categories.
pub fn context_dim(num_categories: usize) -> usize {
    num_categories + crate::types::TAG_EMBEDDING_DIM + 3
}

/// `[one-hot category; tag embedding; start seconds; segment index;
/// start / duration]`.
pub fn build_context_vector(
    meta: &ContextMeta,
    segment: &SegmentSpan,
    video: &VideoRecord,
    segment_index: usize,
) -> Result<Vec<f32>, NetError> {
    if meta.category_index >= meta.num_categories {
        return Err(NetError::CategoryOutOfRange {
            index: meta.category_index,
            num_categories: meta.num_categories,
        });
    }
    let mut v = vec![0.0f32; meta.num_categories];
    v[meta.category_index] = 1.0;
    v.extend_from_slice(&meta.tag_embedding);
    v.push(segment.start() as f32);
    v.push(segment_index as f32);
    v.push((segment.start() / video.duration) as f32);
    Ok(v)
}
