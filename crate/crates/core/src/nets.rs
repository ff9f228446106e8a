//! MLP encoders and decoders, their initialization, Adam updates, and
//! parameter checkpoints.
//!
//! An encoder is a chain of linear layers with ReLU between them and no
//! activation after the last, so latents live in an unbounded space. A decoder
//! mirrors the encoder's widths and ends in a sigmoid, pinning reconstructions
//! to `[0, 1]` like the pixel data they approximate. Forward passes are pure
//! functions of input and parameters; training records them on a [`Tape`] via
//! [`Mlp::on_tape`], while [`EncoderParams::encode`] / [`DecoderParams::decode`]
//! run the same code path for inference.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tape, Tensor, TensorError, TensorId};

/// Errors raised by network construction, optimization, and checkpointing.
#[derive(Debug, Error)]
pub enum NetsError {
    #[error("architecture needs at least 2 widths (input and output), got {0:?}")]
    InvalidArchitecture(Vec<usize>),
    #[error("architecture width {index} is zero in {dims:?}")]
    ZeroWidth { index: usize, dims: Vec<usize> },
    #[error("optimizer state holds {state} arrays, update got {params} params and {grads} grads")]
    ParamCountMismatch {
        state: usize,
        params: usize,
        grads: usize,
    },
    #[error("optimizer slot {index} holds {state} values, got param of {param} and grad of {grad}")]
    ParamSizeMismatch {
        index: usize,
        state: usize,
        param: usize,
        grad: usize,
    },
    #[error("checkpoint version {found} not supported (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("malformed checkpoint {path}: {detail}")]
    MalformedCheckpoint { path: String, detail: String },
    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Encoder/decoder widths: `input → hidden… → latent` and its mirror image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
}

impl NetShape {
    pub fn new(input_dim: usize, hidden: Vec<usize>, latent_dim: usize) -> Self {
        Self {
            input_dim,
            hidden,
            latent_dim,
        }
    }

    /// Layer widths of the encoder, input first.
    pub fn encoder_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend(&self.hidden);
        dims.push(self.latent_dim);
        dims
    }

    /// Layer widths of the mirrored decoder, latent first.
    pub fn decoder_dims(&self) -> Vec<usize> {
        let mut dims = self.encoder_dims();
        dims.reverse();
        dims
    }
}

/// One dense layer: weight `[fan_in × fan_out]` plus bias `[fan_out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// A stack of [`Linear`] layers; activations are chosen by the forward call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    /// Initializes weights uniformly in `±sqrt(6 / (fan_in + fan_out))`
    /// (Glorot) and biases to zero, drawing from a stream fully determined by
    /// `seed`: the same seed always reproduces the same parameters bit for bit.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self, NetsError> {
        if dims.len() < 2 {
            return Err(NetsError::InvalidArchitecture(dims.to_vec()));
        }
        if let Some(index) = dims.iter().position(|&d| d == 0) {
            return Err(NetsError::ZeroWidth {
                index,
                dims: dims.to_vec(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weight: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            layers.push(Linear {
                weight: Tensor::new(vec![fan_in, fan_out], weight).expect("sized above"),
                bias: Tensor::zeros(vec![fan_out]),
            });
        }
        Ok(Self { layers })
    }

    /// Builds an MLP from explicit layers; mainly useful in tests.
    pub fn from_layers(layers: Vec<Linear>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    /// Layer widths, input first.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].weight.shape()[0]];
        dims.extend(self.layers.iter().map(|l| l.weight.shape()[1]));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.shape()[1]
    }

    /// Flat parameter list in update order: `w0, b0, w1, b1, …`.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    /// Mutable view of [`Mlp::params`], same order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Element counts of [`Mlp::params`], for sizing an [`AdamState`].
    pub fn param_sizes(&self) -> Vec<usize> {
        self.params().iter().map(|p| p.len()).collect()
    }

    /// Registers every parameter on `tape` and returns the handles the
    /// forward functions consume. `trainable` decides whether backward will
    /// produce gradients for them.
    pub fn on_tape(&self, tape: &mut Tape) -> MlpRef {
        self.on_tape_with(tape, true)
    }

    pub fn on_tape_with(&self, tape: &mut Tape, trainable: bool) -> MlpRef {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let mut w = l.weight.clone();
                let mut b = l.bias.clone();
                if trainable {
                    w = w.with_grad();
                    b = b.with_grad();
                }
                (tape.leaf(w), tape.leaf(b))
            })
            .collect();
        MlpRef { layers }
    }
}

/// Tape handles for one [`Mlp`]'s parameters, in layer order.
#[derive(Debug, Clone)]
pub struct MlpRef {
    layers: Vec<(TensorId, TensorId)>,
}

impl MlpRef {
    /// `(weight, bias)` handles per layer.
    pub fn layers(&self) -> &[(TensorId, TensorId)] {
        &self.layers
    }

    /// Handles in the order of [`Mlp::params`]: `w0, b0, w1, b1, …`.
    pub fn param_ids(&self) -> Vec<TensorId> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

fn forward(
    tape: &mut Tape,
    x: TensorId,
    net: &MlpRef,
    final_sigmoid: bool,
) -> Result<TensorId, TensorError> {
    let last = net.layers.len() - 1;
    let mut h = x;
    for (i, &(w, b)) in net.layers.iter().enumerate() {
        let lin = tape.matmul(h, w)?;
        h = tape.add_row(lin, b)?;
        if i < last {
            h = tape.relu(h)?;
        } else if final_sigmoid {
            h = tape.sigmoid(h)?;
        }
    }
    Ok(h)
}

/// Records an encoder forward pass: linear/ReLU chain, no final activation.
/// `x` must be 2-D `[batch × input_dim]`.
pub fn encode(tape: &mut Tape, x: TensorId, enc: &MlpRef) -> Result<TensorId, TensorError> {
    forward(tape, x, enc, false)
}

/// Records a decoder forward pass: linear/ReLU chain with a final sigmoid,
/// so every output lands in `[0, 1]`. `z` must be 2-D `[batch × latent_dim]`.
pub fn decode(tape: &mut Tape, z: TensorId, dec: &MlpRef) -> Result<TensorId, TensorError> {
    forward(tape, z, dec, true)
}

fn run_inference(net: &Mlp, input: &Tensor, final_sigmoid: bool) -> Result<Tensor, TensorError> {
    let two_d = match input.shape().len() {
        1 => Tensor::new(vec![1, input.len()], input.data().to_vec())?,
        _ => input.clone(),
    };
    let mut tape = Tape::new();
    let x = tape.leaf(two_d);
    let net_ref = net.on_tape_with(&mut tape, false);
    let out = forward(&mut tape, x, &net_ref, final_sigmoid)?;
    let mut result = tape.value(out).clone();
    if input.shape().len() == 1 {
        result = Tensor::new(vec![result.len()], result.data().to_vec())?;
    }
    Ok(result)
}

/// One community member's encoder: its parameters plus its member index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub member_index: usize,
    net: Mlp,
}

impl EncoderParams {
    /// Glorot-initialized encoder for `shape`, fully determined by `seed`.
    pub fn init(shape: &NetShape, member_index: usize, seed: u64) -> Result<Self, NetsError> {
        Ok(Self {
            member_index,
            net: Mlp::init(&shape.encoder_dims(), seed)?,
        })
    }

    pub fn from_net(member_index: usize, net: Mlp) -> Self {
        Self { member_index, net }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    /// Latents for `x` (`[batch × input]` or a single `[input]` row) without
    /// touching any tape the caller holds.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        run_inference(&self.net, x, false)
    }
}

/// One community member's decoder: mirrored widths, sigmoid output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderParams {
    pub member_index: usize,
    net: Mlp,
}

impl DecoderParams {
    /// Glorot-initialized decoder for `shape`, fully determined by `seed`.
    pub fn init(shape: &NetShape, member_index: usize, seed: u64) -> Result<Self, NetsError> {
        Ok(Self {
            member_index,
            net: Mlp::init(&shape.decoder_dims(), seed)?,
        })
    }

    pub fn from_net(member_index: usize, net: Mlp) -> Self {
        Self { member_index, net }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    /// Reconstructions in `[0, 1]` for `z` (`[batch × latent]` or `[latent]`).
    pub fn decode(&self, z: &Tensor) -> Result<Tensor, TensorError> {
        run_inference(&self.net, z, true)
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Adam moment estimates for one parameter set, with bias correction.
///
/// A zero gradient on a fresh state is a no-op on the parameters for any
/// number of steps (both moments stay exactly zero), though the step counter
/// still advances.
#[derive(Debug, Clone)]
pub struct AdamState {
    hyper: AdamHyper,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Fresh zeroed state for parameter arrays of the given element counts.
    pub fn new(hyper: AdamHyper, sizes: &[usize]) -> Self {
        Self {
            hyper,
            t: 0,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    pub fn hyper(&self) -> &AdamHyper {
        &self.hyper
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one bias-corrected Adam update to `params` in place.
    ///
    /// `params` and `grads` must match the state slot-for-slot in count and
    /// element length.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&[f64]]) -> Result<(), NetsError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NetsError::ParamCountMismatch {
                state: self.m.len(),
                params: params.len(),
                grads: grads.len(),
            });
        }
        for (index, (param, grad)) in params.iter().zip(grads).enumerate() {
            if param.len() != self.m[index].len() || grad.len() != self.m[index].len() {
                return Err(NetsError::ParamSizeMismatch {
                    index,
                    state: self.m[index].len(),
                    param: param.len(),
                    grad: grad.len(),
                });
            }
        }
        self.t += 1;
        let AdamHyper {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.hyper;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(&mut self.v))
        {
            for ((p, &g), (m, v)) in param
                .data_mut()
                .iter_mut()
                .zip(grad.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// On-disk checkpoint format version this build reads and writes.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned dump of named networks plus free-form string metadata.
///
/// Serialized as JSON; `f64` values round-trip exactly (shortest-repr
/// encoding), so a load after save restores parameters bit for bit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub meta: BTreeMap<String, String>,
    pub nets: Vec<(String, Mlp)>,
}

impl Checkpoint {
    pub fn new(meta: BTreeMap<String, String>, nets: Vec<(String, Mlp)>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            meta,
            nets,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), NetsError> {
        let body = serde_json::to_string(self).expect("checkpoint serializes");
        fs::write(path, body).map_err(|source| NetsError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, NetsError> {
        let body = fs::read_to_string(path).map_err(|source| NetsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let ck: Self =
            serde_json::from_str(&body).map_err(|e| NetsError::MalformedCheckpoint {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(NetsError::UnsupportedVersion {
                found: ck.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(ck)
    }
}
