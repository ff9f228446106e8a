//! Community training: pools of encoders and decoders trained by random
//! pairing, with an optional entropy penalty that pushes encoders toward
//! indistinguishability.
//!
//! Each step samples one encoder and one decoder uniformly and updates only
//! that pair on one reconstruction batch, so members never share weights and
//! co-adapt only through the latent interface. A community of one encoder
//! and one decoder at `entropy_weight = 0` reduces exactly — bit for bit —
//! to plain autoencoder training.
//!
//! Randomness is split into independent, individually seeded streams (see
//! [`seeds`]): parameter init per member, batch sampling, pair sampling,
//! probe sampling, and the evaluation sample. Separate streams keep the pair
//! sequence invariant to dataset size and make every run reproducible from
//! one base seed.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::exp::MetricsRecord;
use crate::nets::{
    decode, encode, AdamHyper, AdamState, Checkpoint, DecoderParams, EncoderParams, NetShape,
    NetsError,
};
use crate::probes::{
    concept_probe, encoder_id_accuracy, rsa_score, LinearClassifier, ProbeConfig, ProbeError,
};
use crate::tensor::{Tape, Tensor, TensorError};

/// Images in the fixed reconstruction-evaluation sample (capped by dataset
/// size).
pub const EVAL_SAMPLE: usize = 512;

/// The deterministic seed plan: every random stream a run uses is derived
/// from the run's base seed and a stream tag, so independent streams never
/// alias and any piece of the run can be replayed in isolation.
pub mod seeds {
    /// Batch-index sampling stream.
    pub const DATA: u64 = 9101;
    /// Encoder/decoder pair-sampling stream.
    pub const PAIR: u64 = 9102;
    /// Probe subsampling/split/batch stream.
    pub const PROBE: u64 = 9103;
    /// Reconstruction-evaluation sample stream.
    pub const EVAL: u64 = 9104;

    /// Decoder member offsets start here; encoder offsets start at 0.
    pub const DECODER_BASE: u64 = 5_000;
    const MEMBER_STRIDE: u64 = 10_000;

    /// Parameter-init seed for the member at `offset` (encoder `i` uses
    /// `offset = i`, decoder `j` uses `offset = DECODER_BASE + j`).
    pub fn member(base_seed: u64, offset: u64) -> u64 {
        base_seed.wrapping_mul(MEMBER_STRIDE).wrapping_add(offset)
    }

    /// Seed for one of the auxiliary streams above.
    pub fn stream(base_seed: u64, tag: u64) -> u64 {
        base_seed.wrapping_mul(MEMBER_STRIDE).wrapping_add(tag)
    }
}

/// Draws `batch_size` dataset indices uniformly with replacement.
pub fn sample_batch_indices(rng: &mut ChaCha8Rng, n: usize, batch_size: usize) -> Vec<usize> {
    (0..batch_size).map(|_| rng.random_range(0..n)).collect()
}

/// Errors raised while building or training a community.
#[derive(Debug, Error)]
pub enum CommunityError {
    #[error("community needs at least one encoder and one decoder, got {encoders}/{decoders}")]
    EmptyCommunity { encoders: usize, decoders: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(
        "non-finite loss {loss} at step {step} (encoder {encoder}, decoder {decoder}); \
         training diverged"
    )]
    NumericalFailure {
        step: usize,
        encoder: usize,
        decoder: usize,
        loss: f64,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Nets(#[from] NetsError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Total pair updates. Zero is a degenerate no-op run.
    pub steps: usize,
    /// Images per reconstruction batch.
    pub batch_size: usize,
    /// Adam learning rate for encoders and decoders.
    pub lr: f64,
    /// Weight λ of the entropy penalty; 0 disables the penalty and the
    /// encoder-ID classifier entirely.
    pub entropy_weight: f64,
    /// Adam learning rate for the encoder-ID classifier.
    pub classifier_lr: f64,
    /// A MetricsRecord is emitted every this many steps.
    pub eval_interval: usize,
    /// Root of the run's deterministic seed plan.
    pub base_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 4000,
            batch_size: 128,
            lr: 1e-4,
            entropy_weight: 0.1,
            classifier_lr: 1e-3,
            eval_interval: 1000,
            base_seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CommunityError> {
        if self.batch_size == 0 {
            return Err(CommunityError::InvalidConfig("batch_size must be > 0".into()));
        }
        if !(self.entropy_weight >= 0.0 && self.entropy_weight.is_finite()) {
            return Err(CommunityError::InvalidConfig(format!(
                "entropy_weight must be finite and >= 0, got {}",
                self.entropy_weight
            )));
        }
        for (name, v) in [("lr", self.lr), ("classifier_lr", self.classifier_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CommunityError::InvalidConfig(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        if self.eval_interval == 0 {
            return Err(CommunityError::InvalidConfig("eval_interval must be > 0".into()));
        }
        Ok(())
    }
}

/// What one pair update did.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainStepReport {
    pub step: usize,
    pub encoder: usize,
    pub decoder: usize,
    /// Mean-squared reconstruction error of the batch.
    pub recon_loss: f64,
    /// Negative entropy of the encoder-ID classifier on the batch latents
    /// (0 when the penalty is disabled).
    pub entropy_penalty: f64,
    /// `recon_loss + λ · entropy_penalty` — the quantity differentiated.
    pub total_loss: f64,
}

/// A pool of independently initialized encoders and decoders, their Adam
/// states, and the encoder-ID classifier used by the entropy penalty.
#[derive(Debug, Clone)]
pub struct Community {
    encoders: Vec<EncoderParams>,
    decoders: Vec<DecoderParams>,
    enc_opt: Vec<AdamState>,
    dec_opt: Vec<AdamState>,
    id_classifier: LinearClassifier,
    shape: NetShape,
}

impl Community {
    /// Builds `k_enc` encoders and `k_dec` decoders with pairwise-distinct
    /// init seeds derived from `config.base_seed`, fresh Adam states at
    /// `config.lr`, and a zero-initialized encoder-ID classifier at
    /// `config.classifier_lr`.
    pub fn new(
        shape: &NetShape,
        k_enc: usize,
        k_dec: usize,
        config: &TrainConfig,
    ) -> Result<Self, CommunityError> {
        if k_enc == 0 || k_dec == 0 {
            return Err(CommunityError::EmptyCommunity {
                encoders: k_enc,
                decoders: k_dec,
            });
        }
        config.validate()?;
        let hyper = AdamHyper::with_lr(config.lr);
        let mut encoders = Vec::with_capacity(k_enc);
        let mut enc_opt = Vec::with_capacity(k_enc);
        for i in 0..k_enc {
            let member =
                EncoderParams::init(shape, i, seeds::member(config.base_seed, i as u64))?;
            enc_opt.push(AdamState::new(hyper, &member.net().param_sizes()));
            encoders.push(member);
        }
        let mut decoders = Vec::with_capacity(k_dec);
        let mut dec_opt = Vec::with_capacity(k_dec);
        for j in 0..k_dec {
            let member = DecoderParams::init(
                shape,
                j,
                seeds::member(config.base_seed, seeds::DECODER_BASE + j as u64),
            )?;
            dec_opt.push(AdamState::new(hyper, &member.net().param_sizes()));
            decoders.push(member);
        }
        let id_classifier = LinearClassifier::new(shape.latent_dim, k_enc, config.classifier_lr)?;
        Ok(Self {
            encoders,
            decoders,
            enc_opt,
            dec_opt,
            id_classifier,
            shape: shape.clone(),
        })
    }

    pub fn k_enc(&self) -> usize {
        self.encoders.len()
    }

    pub fn k_dec(&self) -> usize {
        self.decoders.len()
    }

    pub fn encoders(&self) -> &[EncoderParams] {
        &self.encoders
    }

    pub fn decoders(&self) -> &[DecoderParams] {
        &self.decoders
    }

    pub fn id_classifier(&self) -> &LinearClassifier {
        &self.id_classifier
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    /// Serializes all member networks (not optimizer state) for later
    /// re-probing.
    pub fn to_checkpoint(&self, meta: std::collections::BTreeMap<String, String>) -> Checkpoint {
        let mut nets = Vec::with_capacity(self.k_enc() + self.k_dec());
        for (i, e) in self.encoders.iter().enumerate() {
            nets.push((format!("encoder_{i}"), e.net().clone()));
        }
        for (j, d) in self.decoders.iter().enumerate() {
            nets.push((format!("decoder_{j}"), d.net().clone()));
        }
        Checkpoint::new(meta, nets)
    }

    /// Draws one (encoder, decoder) pair independently and uniformly —
    /// encoder first, then decoder.
    pub fn sample_pair(&self, rng: &mut ChaCha8Rng) -> (usize, usize) {
        let e = rng.random_range(0..self.k_enc());
        let d = rng.random_range(0..self.k_dec());
        (e, d)
    }

    /// One reconstruction update of the sampled pair on `batch`.
    ///
    /// Builds `z = enc(x)`, `x' = dec(z)`, and differentiates
    /// `mse(x', x) + λ · neg_entropy(softmax(classifier(z)))`, updating only
    /// the sampled encoder and decoder through their own Adam states. The
    /// classifier contributes gradient *through* `z` but its weights stay
    /// frozen here; with `λ = 0` the classifier is not touched at all and
    /// the step is exactly a plain autoencoder step.
    pub fn train_step(
        &mut self,
        batch: &Tensor,
        pair: (usize, usize),
        step: usize,
        config: &TrainConfig,
    ) -> Result<TrainStepReport, CommunityError> {
        let (ei, dj) = pair;
        let lambda = config.entropy_weight;
        if batch.shape().len() != 2 || batch.shape()[1] != self.shape.input_dim {
            return Err(CommunityError::Tensor(TensorError::ShapeMismatch {
                op: "train_step batch",
                left: batch.shape().to_vec(),
                right: vec![batch.shape().first().copied().unwrap_or(0), self.shape.input_dim],
            }));
        }

        let mut tape = Tape::new();
        let x = tape.leaf(batch.clone());
        let enc_ref = self.encoders[ei].net().on_tape(&mut tape);
        let z = encode(&mut tape, x, &enc_ref)?;
        let dec_ref = self.decoders[dj].net().on_tape(&mut tape);
        let x_hat = decode(&mut tape, z, &dec_ref)?;
        let mse = tape.mse_loss(x_hat, x)?;

        let (total, entropy_value) = if lambda > 0.0 {
            // Classifier weights enter as constants: gradient flows through
            // them into z and the encoder, but they receive no update.
            let w = tape.leaf(self.id_classifier.weights().clone());
            let b = tape.leaf(self.id_classifier.bias().clone());
            let wt = tape.transpose(w)?;
            let zw = tape.matmul(z, wt)?;
            let logits = tape.add_row(zw, b)?;
            let probs = tape.softmax(logits)?;
            let neg_ent = tape.neg_entropy(probs)?;
            let scaled = tape.scale(neg_ent, lambda)?;
            let total = tape.add(mse, scaled)?;
            (total, tape.value(neg_ent).item())
        } else {
            (mse, 0.0)
        };

        let total_loss = tape.value(total).item();
        let recon_loss = tape.value(mse).item();
        if !total_loss.is_finite() {
            return Err(CommunityError::NumericalFailure {
                step,
                encoder: ei,
                decoder: dj,
                loss: total_loss,
            });
        }
        tape.backward(total)?;

        let grads: Vec<Vec<f64>> = enc_ref
            .param_ids()
            .into_iter()
            .map(|id| tape.grad(id).expect("trainable param grad").to_vec())
            .collect();
        let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        let mut params = self.encoders[ei].net_mut().params_mut();
        self.enc_opt[ei].step(&mut params, &grad_refs)?;

        let grads: Vec<Vec<f64>> = dec_ref
            .param_ids()
            .into_iter()
            .map(|id| tape.grad(id).expect("trainable param grad").to_vec())
            .collect();
        let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        let mut params = self.decoders[dj].net_mut().params_mut();
        self.dec_opt[dj].step(&mut params, &grad_refs)?;

        Ok(TrainStepReport {
            step,
            encoder: ei,
            decoder: dj,
            recon_loss,
            entropy_penalty: entropy_value,
            total_loss,
        })
    }

    /// One cross-entropy step of the encoder-ID classifier: every encoder
    /// encodes the batch, each latent is labeled with its encoder's index,
    /// and the classifier trains on all `K·B` pairs at once. Encoders are
    /// only read. Returns the classification loss (exactly 0 for a single
    /// encoder, whose identity carries no information).
    pub fn update_id_classifier(&mut self, batch: &Tensor) -> Result<f64, CommunityError> {
        let b = batch.shape()[0];
        let l = self.shape.latent_dim;
        let mut data = Vec::with_capacity(self.k_enc() * b * l);
        let mut labels = Vec::with_capacity(self.k_enc() * b);
        for (k, enc) in self.encoders.iter().enumerate() {
            let z = enc.encode(batch)?;
            data.extend_from_slice(z.data());
            labels.extend(std::iter::repeat(k).take(b));
        }
        let latents = Tensor::new(vec![self.k_enc() * b, l], data).expect("sized above");
        Ok(self.id_classifier.train_step(&latents, &labels)?)
    }

    /// Runs the full training protocol: each step samples a batch (data
    /// stream) and a pair (pair stream), refreshes the encoder-ID classifier
    /// when the entropy penalty is active, and applies one pair update.
    /// Every `eval_interval` steps the community is frozen and measured —
    /// reconstruction loss over all pairs on a fixed sample, encoder-ID
    /// probe, per-encoder concept probes, and RSA when the dataset carries
    /// feature norms — yielding one [`MetricsRecord`].
    ///
    /// `steps = 0` returns no records and leaves the community untouched.
    /// The record's `experiment_id` is left empty; the experiment runner
    /// stamps it.
    pub fn train(
        &mut self,
        dataset: &Dataset,
        config: &TrainConfig,
    ) -> Result<Vec<MetricsRecord>, CommunityError> {
        config.validate()?;
        if dataset.dim() != self.shape.input_dim {
            return Err(CommunityError::InvalidConfig(format!(
                "dataset dimension {} does not match encoder input {}",
                dataset.dim(),
                self.shape.input_dim
            )));
        }
        let started = Instant::now();
        let mut data_rng =
            ChaCha8Rng::seed_from_u64(seeds::stream(config.base_seed, seeds::DATA));
        let mut pair_rng =
            ChaCha8Rng::seed_from_u64(seeds::stream(config.base_seed, seeds::PAIR));
        let eval_indices = {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::stream(config.base_seed, seeds::EVAL));
            let mut idx: Vec<usize> = (0..dataset.len()).collect();
            use rand::seq::SliceRandom;
            idx.shuffle(&mut rng);
            idx.truncate(EVAL_SAMPLE.min(dataset.len()));
            idx
        };
        let eval_batch = dataset.gather(&eval_indices);

        let mut records = Vec::new();
        for step in 1..=config.steps {
            let indices = sample_batch_indices(&mut data_rng, dataset.len(), config.batch_size);
            let batch = dataset.gather(&indices);
            let pair = self.sample_pair(&mut pair_rng);
            if config.entropy_weight > 0.0 {
                self.update_id_classifier(&batch)?;
            }
            self.train_step(&batch, pair, step, config)?;

            if step % config.eval_interval == 0 {
                let record = self.evaluate(dataset, &eval_batch, step, config, &started)?;
                records.push(record);
            }
        }
        Ok(records)
    }

    /// Mean reconstruction loss over *all* encoder–decoder pairs on the
    /// fixed evaluation batch.
    fn eval_recon_loss(&self, eval_batch: &Tensor) -> Result<f64, CommunityError> {
        let mut total = 0.0;
        for enc in &self.encoders {
            let z = enc.encode(eval_batch)?;
            for dec in &self.decoders {
                let x_hat = dec.decode(&z)?;
                let diff: f64 = x_hat
                    .data()
                    .iter()
                    .zip(eval_batch.data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                total += diff / eval_batch.len() as f64;
            }
        }
        Ok(total / (self.k_enc() * self.k_dec()) as f64)
    }

    fn evaluate(
        &self,
        dataset: &Dataset,
        eval_batch: &Tensor,
        step: usize,
        config: &TrainConfig,
        started: &Instant,
    ) -> Result<MetricsRecord, CommunityError> {
        let probe_cfg = ProbeConfig {
            seed: seeds::stream(config.base_seed, seeds::PROBE),
            ..ProbeConfig::default()
        };
        let recon_loss = self.eval_recon_loss(eval_batch)?;
        let id_report = encoder_id_accuracy(&self.encoders, dataset, &probe_cfg)?;

        let mut concept_sum = 0.0;
        for enc in &self.encoders {
            concept_sum += concept_probe(enc, dataset, &probe_cfg)?.accuracy;
        }
        let concept_accuracy = concept_sum / self.k_enc() as f64;

        let rsa_rho = match dataset.attributes() {
            Some(norms) => {
                let sample = {
                    let mut rng = ChaCha8Rng::seed_from_u64(probe_cfg.seed);
                    let mut idx: Vec<usize> = (0..dataset.len()).collect();
                    use rand::seq::SliceRandom;
                    idx.shuffle(&mut rng);
                    idx.truncate(probe_cfg.sample_cap.min(dataset.len()));
                    idx
                };
                let images = dataset.gather(&sample);
                let labels = dataset.gather_labels(&sample);
                let mut sum = 0.0;
                for enc in &self.encoders {
                    let latents = enc.encode(&images)?;
                    sum += rsa_score(&latents, &labels, norms)?.rho;
                }
                Some(sum / self.k_enc() as f64)
            }
            None => None,
        };

        let record = MetricsRecord {
            experiment_id: String::new(),
            seed: config.base_seed,
            community_size: self.k_enc(),
            lambda: config.entropy_weight,
            step,
            recon_loss,
            encoder_id_accuracy: id_report.accuracy,
            encoder_id_chance: id_report.chance,
            concept_accuracy,
            rsa_rho,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        };
        for (name, v) in [
            ("recon_loss", record.recon_loss),
            ("encoder_id_accuracy", record.encoder_id_accuracy),
            ("concept_accuracy", record.concept_accuracy),
            ("rsa_rho", record.rsa_rho.unwrap_or(0.0)),
        ] {
            if !v.is_finite() {
                return Err(CommunityError::InvalidConfig(format!(
                    "non-finite metric {name} at step {step}"
                )));
            }
        }
        Ok(record)
    }
}
