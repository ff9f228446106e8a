//! Frozen-representation evaluation: encoder-identification probes, linear
//! concept probes, and representational similarity analysis (RSA).
//!
//! Probes are strictly read-only over encoders and decoders — they train
//! small softmax classifiers on *precomputed* latents, or compare latent
//! geometry against a [`FeatureNorms`](crate::data::FeatureNorms) table.
//! Every probe draws its randomness (subsampling, train/eval split, batch
//! order) from a single seed in [`ProbeConfig`], so repeated evaluation of
//! the same frozen model reproduces the same numbers bit for bit.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, FeatureNorms};
use crate::nets::{AdamHyper, AdamState, EncoderParams, NetsError};
use crate::tensor::{Tape, Tensor, TensorError};

/// Fraction of the (capped) sample held out for probe evaluation.
pub const EVAL_FRACTION: f64 = 0.2;

/// Errors raised by probe training and similarity statistics.
#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("correlation undefined on a constant list")]
    ConstantInput,
    #[error("input contains a non-finite value")]
    NonFinite,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("classifier needs at least one class and one input dimension")]
    DegenerateClassifier,
    #[error("no encoders to probe")]
    NoEncoders,
    #[error("need at least {needed} concepts, got {got}")]
    TooFewConcepts { needed: usize, got: usize },
    #[error("concept {concept:?} has no images in the sample")]
    ConceptWithoutImages { concept: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Nets(#[from] NetsError),
}

/// Budget and sampling controls shared by all probes.
///
/// The training budget is deliberately fixed (no early stopping) so probe
/// capacity is identical across everything being compared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    /// Classifier training steps.
    pub steps: usize,
    /// Latent/label pairs per training step, sampled with replacement.
    pub batch_size: usize,
    /// Adam learning rate for the probe classifier.
    pub lr: f64,
    /// At most this many images are sampled from the dataset per probe.
    pub sample_cap: usize,
    /// Seeds subsampling, the train/eval split, and batch order.
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 128,
            lr: 1e-3,
            sample_cap: 5000,
            seed: 9103,
        }
    }
}

/// Softmax classifier over latents: `logits = z·Wᵀ + b` with `W` stored as
/// `[classes × latent_dim]`. Carries its own Adam state so one value is a
/// complete trainable probe. Weights and bias start at zero, making probe
/// training deterministic without a parameter-init seed.
#[derive(Debug, Clone)]
pub struct LinearClassifier {
    weights: Tensor,
    bias: Tensor,
    adam: AdamState,
}

impl LinearClassifier {
    pub fn new(latent_dim: usize, classes: usize, lr: f64) -> Result<Self, ProbeError> {
        if latent_dim == 0 || classes == 0 {
            return Err(ProbeError::DegenerateClassifier);
        }
        Ok(Self {
            weights: Tensor::zeros(vec![classes, latent_dim]),
            bias: Tensor::zeros(vec![classes]),
            adam: AdamState::new(AdamHyper::with_lr(lr), &[classes * latent_dim, classes]),
        })
    }

    pub fn classes(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn latent_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    /// `[classes × latent_dim]` weight matrix.
    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    /// Training steps taken so far.
    pub fn steps_taken(&self) -> u64 {
        self.adam.step_count()
    }

    fn check_latents(&self, latents: &Tensor) -> Result<usize, ProbeError> {
        if latents.shape().len() != 2 || latents.shape()[1] != self.latent_dim() {
            return Err(ProbeError::Tensor(TensorError::ShapeMismatch {
                op: "classifier forward",
                left: latents.shape().to_vec(),
                right: self.weights.shape().to_vec(),
            }));
        }
        Ok(latents.shape()[0])
    }

    /// Raw scores `[N × classes]` for a batch of latents (no softmax).
    pub fn logits(&self, latents: &Tensor) -> Result<Tensor, ProbeError> {
        let n = self.check_latents(latents)?;
        let (c, l) = (self.classes(), self.latent_dim());
        let w = self.weights.data();
        let b = self.bias.data();
        let z = latents.data();
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            let zi = &z[i * l..(i + 1) * l];
            for k in 0..c {
                let wk = &w[k * l..(k + 1) * l];
                let mut dot = 0.0;
                for (zv, wv) in zi.iter().zip(wk) {
                    dot += zv * wv;
                }
                out[i * c + k] = dot + b[k];
            }
        }
        Ok(Tensor::new(vec![n, c], out).expect("sized above"))
    }

    /// Argmax class per row; ties break toward the lowest class index.
    pub fn predict(&self, latents: &Tensor) -> Result<Vec<usize>, ProbeError> {
        let logits = self.logits(latents)?;
        let c = self.classes();
        Ok(logits
            .data()
            .chunks(c)
            .map(|row| {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect())
    }

    /// Fraction of rows whose predicted class matches the label.
    pub fn accuracy(&self, latents: &Tensor, labels: &[usize]) -> Result<f64, ProbeError> {
        let n = self.check_latents(latents)?;
        if labels.len() != n {
            return Err(ProbeError::LengthMismatch {
                left: n,
                right: labels.len(),
            });
        }
        let preds = self.predict(latents)?;
        let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(correct as f64 / n as f64)
    }

    /// One cross-entropy Adam step on the given (latent, label) pairs.
    /// Returns the batch loss before the update.
    pub fn train_step(&mut self, latents: &Tensor, labels: &[usize]) -> Result<f64, ProbeError> {
        let n = self.check_latents(latents)?;
        if labels.len() != n {
            return Err(ProbeError::LengthMismatch {
                left: n,
                right: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.classes()) {
            return Err(ProbeError::LabelOutOfRange {
                label: bad,
                classes: self.classes(),
            });
        }
        let mut tape = Tape::new();
        let w = tape.leaf(self.weights.clone().with_grad());
        let b = tape.leaf(self.bias.clone().with_grad());
        let z = tape.leaf(latents.clone());
        let wt = tape.transpose(w)?;
        let zw = tape.matmul(z, wt)?;
        let logits = tape.add_row(zw, b)?;
        let loss = tape.cross_entropy(logits, labels)?;
        tape.backward(loss)?;
        let gw = tape.grad(w).expect("weight grad").to_vec();
        let gb = tape.grad(b).expect("bias grad").to_vec();
        self.adam
            .step(&mut [&mut self.weights, &mut self.bias], &[&gw, &gb])?;
        Ok(tape.value(loss).item())
    }
}

/// Held-out evaluation of one probe run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Held-out accuracy in `[0, 1]`.
    pub accuracy: f64,
    /// `1 / classes`.
    pub chance: f64,
    /// Per-class held-out tallies (classes with at least one eval sample).
    pub per_class: Vec<ClassAccuracy>,
    /// (latent, label) pairs used for training.
    pub train_count: usize,
    /// (latent, label) pairs used for evaluation.
    pub eval_count: usize,
}

/// Held-out tally for a single class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: usize,
    pub correct: usize,
    pub total: usize,
}

impl ClassAccuracy {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// Pairwise-similarity agreement between latents and feature norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsaReport {
    /// Spearman rank correlation in `[-1, 1]` between the two similarity
    /// lists.
    pub rho: f64,
    pub concept_count: usize,
    /// `[concepts × latent_dim]` mean latent per concept, kept for audit.
    pub concept_means: Tensor,
}

fn gather_rows(t: &Tensor, indices: &[usize]) -> Tensor {
    let d = t.shape()[1];
    let mut data = Vec::with_capacity(indices.len() * d);
    for &i in indices {
        data.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
    }
    Tensor::new(vec![indices.len(), d], data).expect("sized above")
}

/// Decorrelates the rng streams a probe derives from one seed.
fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains a fresh zero-initialized softmax probe on the given latents with
/// cross-entropy, sampling `batch_size` pairs with replacement per step.
/// The latents are never modified; splitting off an evaluation set is the
/// caller's job (see [`concept_probe`] / [`encoder_id_accuracy`]).
pub fn train_probe(
    latents: &Tensor,
    labels: &[usize],
    classes: usize,
    config: &ProbeConfig,
) -> Result<LinearClassifier, ProbeError> {
    if latents.shape().len() != 2 || latents.shape()[0] == 0 {
        return Err(ProbeError::TooFewSamples {
            needed: 1,
            got: if latents.shape().is_empty() {
                0
            } else {
                latents.shape()[0]
            },
        });
    }
    let n = latents.shape()[0];
    if labels.len() != n {
        return Err(ProbeError::LengthMismatch {
            left: n,
            right: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(ProbeError::LabelOutOfRange {
            label: bad,
            classes,
        });
    }
    let mut clf = LinearClassifier::new(latents.shape()[1], classes, config.lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1));
    for _ in 0..config.steps {
        let idx: Vec<usize> = (0..config.batch_size)
            .map(|_| rng.random_range(0..n))
            .collect();
        let batch = gather_rows(latents, &idx);
        let batch_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        clf.train_step(&batch, &batch_labels)?;
    }
    Ok(clf)
}

/// Shuffles `0..n` and splits off a held-out tail of about
/// [`EVAL_FRACTION`], never leaving either side empty.
fn split_indices(n: usize, rng: &mut ChaCha8Rng) -> Result<(Vec<usize>, Vec<usize>), ProbeError> {
    if n < 2 {
        return Err(ProbeError::TooFewSamples { needed: 2, got: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let eval_count = ((n as f64 * EVAL_FRACTION).round() as usize).clamp(1, n - 1);
    let eval = idx.split_off(n - eval_count);
    Ok((idx, eval))
}

fn evaluate(
    clf: &LinearClassifier,
    latents: &Tensor,
    labels: &[usize],
    chance: f64,
    train_count: usize,
) -> Result<ProbeReport, ProbeError> {
    let preds = clf.predict(latents)?;
    let mut tallies: Vec<(usize, usize)> = vec![(0, 0); clf.classes()];
    for (&pred, &label) in preds.iter().zip(labels) {
        tallies[label].1 += 1;
        if pred == label {
            tallies[label].0 += 1;
        }
    }
    let correct: usize = tallies.iter().map(|&(c, _)| c).sum();
    let per_class = tallies
        .iter()
        .enumerate()
        .filter(|(_, &(_, total))| total > 0)
        .map(|(class, &(correct, total))| ClassAccuracy {
            class,
            correct,
            total,
        })
        .collect();
    Ok(ProbeReport {
        accuracy: correct as f64 / labels.len() as f64,
        chance,
        per_class,
        train_count,
        eval_count: labels.len(),
    })
}

/// Caps the dataset sample and returns shuffled train/eval image indices.
fn sampled_split(
    dataset: &Dataset,
    config: &ProbeConfig,
) -> Result<(Vec<usize>, Vec<usize>), ProbeError> {
    let m = dataset.len().min(config.sample_cap);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2));
    let mut all: Vec<usize> = (0..dataset.len()).collect();
    all.shuffle(&mut rng);
    all.truncate(m);
    let (train, eval) = split_indices(m, &mut rng)?;
    Ok((
        train.iter().map(|&i| all[i]).collect(),
        eval.iter().map(|&i| all[i]).collect(),
    ))
}

/// How well can a linear probe tell *which encoder* produced a latent?
///
/// Samples up to `sample_cap` images, encodes every sampled image with every
/// encoder, labels each latent with its encoder's index, and trains a fresh
/// probe on an 80/20 image-level split (all of an image's latents land on
/// the same side, so the probe cannot cheat by memorizing images). Reports
/// held-out accuracy against chance `1/K`. Above-chance accuracy is the
/// signature of encoder–decoder co-adaptation.
///
/// A single encoder is trivially identifiable: `K = 1` short-circuits to
/// accuracy 1.0 and chance 1.0 without training.
pub fn encoder_id_accuracy(
    encoders: &[EncoderParams],
    dataset: &Dataset,
    config: &ProbeConfig,
) -> Result<ProbeReport, ProbeError> {
    let k = encoders.len();
    if k == 0 {
        return Err(ProbeError::NoEncoders);
    }
    if k == 1 {
        return Ok(ProbeReport {
            accuracy: 1.0,
            chance: 1.0,
            per_class: vec![],
            train_count: 0,
            eval_count: 0,
        });
    }
    let (train_imgs, eval_imgs) = sampled_split(dataset, config)?;

    let build_pairs = |imgs: &[usize]| -> Result<(Tensor, Vec<usize>), ProbeError> {
        let images = dataset.gather(imgs);
        let latents: Vec<Tensor> = encoders
            .iter()
            .map(|e| e.encode(&images))
            .collect::<Result<_, _>>()?;
        let l = latents[0].shape()[1];
        let mut data = Vec::with_capacity(imgs.len() * k * l);
        let mut labels = Vec::with_capacity(imgs.len() * k);
        for row in 0..imgs.len() {
            for (e, z) in latents.iter().enumerate() {
                data.extend_from_slice(&z.data()[row * l..(row + 1) * l]);
                labels.push(e);
            }
        }
        Ok((
            Tensor::new(vec![imgs.len() * k, l], data).expect("sized above"),
            labels,
        ))
    };

    let (train_z, train_y) = build_pairs(&train_imgs)?;
    let (eval_z, eval_y) = build_pairs(&eval_imgs)?;
    let clf = train_probe(&train_z, &train_y, k, config)?;
    evaluate(&clf, &eval_z, &eval_y, 1.0 / k as f64, train_y.len())
}

/// How much concept information is linearly decodable from one encoder?
///
/// Samples up to `sample_cap` images, encodes them once with the (frozen)
/// encoder, trains a probe to predict concept labels on an 80/20 split, and
/// reports held-out accuracy against chance `1/concepts`.
pub fn concept_probe(
    encoder: &EncoderParams,
    dataset: &Dataset,
    config: &ProbeConfig,
) -> Result<ProbeReport, ProbeError> {
    let (train_imgs, eval_imgs) = sampled_split(dataset, config)?;
    let classes = dataset.concept_count();
    let train_z = encoder.encode(&dataset.gather(&train_imgs))?;
    let eval_z = encoder.encode(&dataset.gather(&eval_imgs))?;
    let train_y = dataset.gather_labels(&train_imgs);
    let eval_y = dataset.gather_labels(&eval_imgs);
    let clf = train_probe(&train_z, &train_y, classes, config)?;
    evaluate(
        &clf,
        &eval_z,
        &eval_y,
        1.0 / classes as f64,
        train_y.len(),
    )
}

/// Cosine similarity `dot(a,b) / (‖a‖·‖b‖)`; a zero vector reads as "no
/// similarity" and yields 0 rather than a division error.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64, ProbeError> {
    if a.len() != b.len() {
        return Err(ProbeError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Average fractional ranks (1-based); ties share the mean of the rank
/// positions they occupy.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&i, &j| xs[i].partial_cmp(&xs[j]).expect("finite values"));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = mean_rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation: Pearson correlation of average-fractional
/// ranks. Needs at least 3 points and non-constant inputs.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, ProbeError> {
    if xs.len() != ys.len() {
        return Err(ProbeError::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < 3 {
        return Err(ProbeError::TooFewSamples {
            needed: 3,
            got: xs.len(),
        });
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(ProbeError::NonFinite);
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut cov, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for (&a, &b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(ProbeError::ConstantInput);
    }
    Ok(cov / (vx.sqrt() * vy.sqrt()))
}

/// Mean latent per concept; requires every concept to have at least one row.
fn concept_means(
    latents: &Tensor,
    labels: &[usize],
    norms: &FeatureNorms,
) -> Result<Tensor, ProbeError> {
    let c = norms.concept_count();
    let n = latents.shape()[0];
    if labels.len() != n {
        return Err(ProbeError::LengthMismatch {
            left: n,
            right: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(ProbeError::LabelOutOfRange {
            label: bad,
            classes: c,
        });
    }
    let l = latents.shape()[1];
    let mut sums = vec![0.0; c * l];
    let mut counts = vec![0usize; c];
    for (row, &label) in labels.iter().enumerate() {
        counts[label] += 1;
        let src = &latents.data()[row * l..(row + 1) * l];
        let dst = &mut sums[label * l..(label + 1) * l];
        for (d, s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    }
    if let Some(empty) = counts.iter().position(|&cnt| cnt == 0) {
        return Err(ProbeError::ConceptWithoutImages {
            concept: norms.concept_names()[empty].clone(),
        });
    }
    for (concept, &cnt) in counts.iter().enumerate() {
        for v in &mut sums[concept * l..(concept + 1) * l] {
            *v /= cnt as f64;
        }
    }
    Ok(Tensor::new(vec![c, l], sums).expect("sized above"))
}

/// Upper-triangle pairwise cosines of a `[C × D]` matrix's rows, flattened
/// in row-major `(i, j), i < j` order.
fn pairwise_cosines(rows: &Tensor) -> Result<Vec<f64>, ProbeError> {
    let (c, d) = (rows.shape()[0], rows.shape()[1]);
    let mut out = Vec::with_capacity(c * (c - 1) / 2);
    for i in 0..c {
        for j in i + 1..c {
            out.push(cosine_sim(
                &rows.data()[i * d..(i + 1) * d],
                &rows.data()[j * d..(j + 1) * d],
            )?);
        }
    }
    Ok(out)
}

/// Does latent space mirror the concept geometry of the feature norms?
///
/// Averages all latents of each concept into one vector ("late fusion"),
/// computes pairwise cosine similarities among the concept means and among
/// the feature-norm rows — both flattened in the same upper-triangle order —
/// and reports the Spearman correlation between the two lists.
pub fn rsa_score(
    latents: &Tensor,
    labels: &[usize],
    norms: &FeatureNorms,
) -> Result<RsaReport, ProbeError> {
    let c = norms.concept_count();
    if c < 3 {
        return Err(ProbeError::TooFewConcepts { needed: 3, got: c });
    }
    let means = concept_means(latents, labels, norms)?;
    let latent_sims = pairwise_cosines(&means)?;
    let norm_sims = pairwise_cosines(norms.matrix())?;
    let rho = spearman(&latent_sims, &norm_sims)?;
    Ok(RsaReport {
        rho,
        concept_count: c,
        concept_means: means,
    })
}

/// Null distribution for [`rsa_score`]: the RSA rho recomputed after
/// randomly permuting which feature-norm row each concept is compared
/// against, `permutations` times. The observed rho of structureless latents
/// should sit inside this distribution; structured latents should beat its
/// upper percentiles.
pub fn rsa_permutation_null(
    latents: &Tensor,
    labels: &[usize],
    norms: &FeatureNorms,
    permutations: usize,
    seed: u64,
) -> Result<Vec<f64>, ProbeError> {
    let c = norms.concept_count();
    if c < 3 {
        return Err(ProbeError::TooFewConcepts { needed: 3, got: c });
    }
    let means = concept_means(latents, labels, norms)?;
    let latent_sims = pairwise_cosines(&means)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment: Vec<usize> = (0..c).collect();
    let a = norms.attribute_count();
    let mut rhos = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        assignment.shuffle(&mut rng);
        let mut permuted = Vec::with_capacity(c * a);
        for &row in &assignment {
            permuted.extend_from_slice(norms.row(row));
        }
        let rows = Tensor::new(vec![c, a], permuted).expect("sized above");
        let norm_sims = pairwise_cosines(&rows)?;
        rhos.push(spearman(&latent_sims, &norm_sims)?);
    }
    Ok(rhos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticSpec};
    use crate::nets::NetShape;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn quick_config(steps: usize) -> ProbeConfig {
        ProbeConfig {
            steps,
            ..ProbeConfig::default()
        }
    }

    fn small_dataset(noise: f64, seed: u64) -> Dataset {
        gen_synthetic(&SyntheticSpec {
            concepts: 3,
            attributes: 4,
            per_concept: 30,
            noise,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn zero_classifier_breaks_ties_toward_lowest_class() {
        let clf = LinearClassifier::new(3, 4, 1e-3).unwrap();
        let z = Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(clf.predict(&z).unwrap(), vec![0, 0]);
    }

    #[test]
    fn train_step_reduces_loss_on_separable_data() {
        let z = Tensor::new(
            vec![4, 2],
            vec![1.0, 0.0, 1.0, 0.1, 0.0, 1.0, 0.1, 1.0],
        )
        .unwrap();
        let labels = [0, 0, 1, 1];
        let mut clf = LinearClassifier::new(2, 2, 1e-2).unwrap();
        let first = clf.train_step(&z, &labels).unwrap();
        for _ in 0..200 {
            clf.train_step(&z, &labels).unwrap();
        }
        let last = clf.train_step(&z, &labels).unwrap();
        assert!(last < first * 0.2, "{last} vs {first}");
        assert_eq!(clf.accuracy(&z, &labels).unwrap(), 1.0);
    }

    #[test]
    fn train_probe_is_perfect_on_one_hot_latents() {
        let n = 40;
        let classes = 4;
        let mut data = vec![0.0; n * classes];
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        for (i, &l) in labels.iter().enumerate() {
            data[i * classes + l] = 1.0;
        }
        let latents = Tensor::new(vec![n, classes], data).unwrap();
        let clf = train_probe(&latents, &labels, classes, &quick_config(1500)).unwrap();
        assert_eq!(clf.accuracy(&latents, &labels).unwrap(), 1.0);
    }

    #[test]
    fn train_probe_on_zero_latents_predicts_the_majority_class() {
        let n = 100;
        let latents = Tensor::zeros(vec![n, 3]);
        let mut labels = vec![2usize; 70];
        labels.extend(vec![0usize; 20]);
        labels.extend(vec![1usize; 10]);
        let clf = train_probe(&latents, &labels, 3, &quick_config(50)).unwrap();
        assert!(clf.predict(&latents).unwrap().iter().all(|&p| p == 2));
        assert_eq!(clf.accuracy(&latents, &labels).unwrap(), 0.7);
    }

    #[test]
    fn train_probe_rejects_out_of_range_labels() {
        let latents = Tensor::zeros(vec![2, 2]);
        let err = train_probe(&latents, &[0, 3], 3, &quick_config(1));
        assert!(matches!(
            err,
            Err(ProbeError::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn train_probe_on_shuffled_labels_stays_near_chance() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 200;
        let latents = Tensor::new(
            vec![n, 8],
            (0..n * 8).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let train_z = gather_rows(&latents, &(0..160).collect::<Vec<_>>());
        let eval_z = gather_rows(&latents, &(160..200).collect::<Vec<_>>());
        let clf = train_probe(&train_z, &labels[..160], 4, &quick_config(800)).unwrap();
        let acc = clf.accuracy(&eval_z, &labels[160..]).unwrap();
        // Chance 0.25; 3 binomial sigmas on 40 samples is ±0.205.
        assert!(acc < 0.47, "no-signal probe scored {acc}");
    }

    #[test]
    fn encoder_id_shortcut_for_a_single_encoder() {
        let ds = small_dataset(0.1, 4);
        let shape = NetShape::new(ds.dim(), vec![], 4);
        let enc = EncoderParams::init(&shape, 0, 1).unwrap();
        let report = encoder_id_accuracy(&[enc], &ds, &quick_config(10)).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.chance, 1.0);
    }

    #[test]
    fn encoder_id_on_identical_encoders_sits_at_chance() {
        let ds = small_dataset(0.1, 4);
        let shape = NetShape::new(ds.dim(), vec![], 4);
        let enc = EncoderParams::init(&shape, 0, 7).unwrap();
        let pool = vec![enc.clone(), enc.clone(), enc.clone(), enc];
        let report = encoder_id_accuracy(&pool, &ds, &quick_config(300)).unwrap();
        assert_eq!(report.chance, 0.25);
        // All four latents of an image are identical, so at most one of the
        // four can be right: 3 binomial sigmas around chance.
        let sigma = (0.25 * 0.75 / report.eval_count as f64).sqrt();
        assert!(
            (report.accuracy - 0.25).abs() <= 3.0 * sigma,
            "accuracy {} eval {}",
            report.accuracy,
            report.eval_count
        );
    }

    #[test]
    fn encoder_id_separates_opposite_encoders() {
        let ds = small_dataset(0.2, 5);
        let shape = NetShape::new(ds.dim(), vec![], 8);
        let enc_a = EncoderParams::init(&shape, 0, 11).unwrap();
        let mut enc_b = enc_a.clone();
        for p in enc_b.net_mut().params_mut() {
            for v in p.data_mut() {
                *v = -*v;
            }
        }
        let report = encoder_id_accuracy(&[enc_a, enc_b], &ds, &quick_config(400)).unwrap();
        assert_eq!(report.chance, 0.5);
        assert!(report.accuracy >= 0.95, "accuracy {}", report.accuracy);
        assert_eq!(report.train_count + report.eval_count, 2 * ds.len());
    }

    #[test]
    fn probes_leave_encoder_parameters_untouched() {
        let ds = small_dataset(0.1, 6);
        let shape = NetShape::new(ds.dim(), vec![5], 4);
        let enc = EncoderParams::init(&shape, 0, 3).unwrap();
        let before: Vec<Vec<f64>> = enc.net().params().iter().map(|p| p.data().to_vec()).collect();
        encoder_id_accuracy(&[enc.clone(), enc.clone()], &ds, &quick_config(50)).unwrap();
        concept_probe(&enc, &ds, &quick_config(50)).unwrap();
        let after: Vec<Vec<f64>> = enc.net().params().iter().map(|p| p.data().to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn concept_probe_learns_separable_synthetic_concepts() {
        let ds = small_dataset(0.05, 9);
        let shape = NetShape::new(ds.dim(), vec![], 8);
        let enc = EncoderParams::init(&shape, 0, 2).unwrap();
        let report = concept_probe(&enc, &ds, &quick_config(1200)).unwrap();
        assert_relative_eq!(report.chance, 1.0 / 3.0);
        assert!(report.accuracy >= 0.9, "accuracy {}", report.accuracy);
        let class_total: usize = report.per_class.iter().map(|c| c.total).sum();
        assert_eq!(class_total, report.eval_count);
    }

    #[test]
    fn cosine_oracles() {
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_relative_eq!(
            cosine_sim(&[1.0, 1.0], &[2.0, 2.0]).unwrap(),
            1.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            cosine_sim(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap(),
            0.97463,
            epsilon = 1e-5
        );
        assert_eq!(cosine_sim(&[0.0, 0.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(matches!(
            cosine_sim(&[1.0], &[1.0, 2.0]),
            Err(ProbeError::LengthMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn spearman_oracles() {
        assert_relative_eq!(
            spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(),
            -1.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            spearman(&[1.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(),
            0.86603,
            epsilon = 1e-5
        );
    }

    #[test]
    fn spearman_rejects_degenerate_inputs() {
        assert!(matches!(
            spearman(&[1.0, 2.0], &[1.0, 2.0]),
            Err(ProbeError::TooFewSamples { needed: 3, got: 2 })
        ));
        assert!(matches!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(ProbeError::ConstantInput)
        ));
        assert!(matches!(
            spearman(&[1.0, f64::NAN, 3.0], &[1.0, 2.0, 3.0]),
            Err(ProbeError::NonFinite)
        ));
    }

    proptest! {
        #[test]
        fn spearman_ignores_strictly_monotone_transforms(
            xs in proptest::collection::vec(-50.0f64..50.0, 3..30),
            shift in -5.0f64..5.0,
        ) {
            let ys: Vec<f64> = (0..xs.len()).map(|i| ((i * 7919) % 101) as f64 + shift).collect();
            let base = spearman(&xs, &ys);
            let transformed: Vec<f64> = xs.iter().map(|&x| x.exp()).collect();
            let after = spearman(&transformed, &ys);
            match (base, after) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
                (Err(_), Err(_)) => {}
                other => prop_assert!(false, "divergent results {other:?}"),
            }
        }

        #[test]
        fn cosine_is_scale_invariant(
            a in proptest::collection::vec(-10.0f64..10.0, 2..16),
            alpha in 0.01f64..100.0,
            beta in 0.01f64..100.0,
        ) {
            let b: Vec<f64> = a.iter().rev().map(|&v| v + 1.0).collect();
            let plain = cosine_sim(&a, &b).unwrap();
            let scaled_a: Vec<f64> = a.iter().map(|&v| alpha * v).collect();
            let scaled_b: Vec<f64> = b.iter().map(|&v| beta * v).collect();
            let scaled = cosine_sim(&scaled_a, &scaled_b).unwrap();
            prop_assert!((plain - scaled).abs() < 1e-12);
        }
    }

    fn binary_norms() -> FeatureNorms {
        FeatureNorms::new(
            vec!["w".into(), "x".into(), "y".into(), "z".into()],
            vec!["a".into(), "b".into(), "c".into()],
            Tensor::new(
                vec![4, 3],
                vec![
                    1.0, 0.0, 0.0, //
                    1.0, 1.0, 0.0, //
                    0.0, 1.0, 1.0, //
                    0.0, 0.0, 1.0,
                ],
            )
            .unwrap(),
        )
        .unwrap()
    }

    /// Latents equal to each concept's norm row, several copies per concept.
    fn norm_aligned_latents(norms: &FeatureNorms, copies: usize) -> (Tensor, Vec<usize>) {
        let c = norms.concept_count();
        let a = norms.attribute_count();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for concept in 0..c {
            for _ in 0..copies {
                data.extend_from_slice(norms.row(concept));
                labels.push(concept);
            }
        }
        (
            Tensor::new(vec![c * copies, a], data).unwrap(),
            labels,
        )
    }

    #[test]
    fn rsa_is_perfect_when_latents_equal_norm_rows() {
        let norms = binary_norms();
        let (latents, labels) = norm_aligned_latents(&norms, 3);
        let report = rsa_score(&latents, &labels, &norms).unwrap();
        assert_relative_eq!(report.rho, 1.0, epsilon = 1e-12);
        assert_eq!(report.concept_count, 4);
        assert_eq!(report.concept_means.shape(), &[4, 3]);
    }

    #[test]
    fn rsa_is_invariant_to_concept_relabeling() {
        let norms = binary_norms();
        let (latents, labels) = norm_aligned_latents(&norms, 2);
        let base = rsa_score(&latents, &labels, &norms).unwrap().rho;

        // Reverse the concept order everywhere at once.
        let c = norms.concept_count();
        let perm: Vec<usize> = (0..c).rev().collect();
        let permuted_norms = FeatureNorms::new(
            perm.iter()
                .map(|&i| norms.concept_names()[i].clone())
                .collect(),
            norms.attribute_names().to_vec(),
            Tensor::new(
                vec![c, norms.attribute_count()],
                perm.iter().flat_map(|&i| norms.row(i).to_vec()).collect(),
            )
            .unwrap(),
        )
        .unwrap();
        let relabeled: Vec<usize> = labels
            .iter()
            .map(|&l| perm.iter().position(|&p| p == l).unwrap())
            .collect();
        let permuted = rsa_score(&latents, &relabeled, &permuted_norms).unwrap().rho;
        assert_relative_eq!(base, permuted, epsilon = 1e-12);
    }

    #[test]
    fn rsa_requires_three_concepts_and_full_coverage() {
        let two = FeatureNorms::new(
            vec!["p".into(), "q".into()],
            vec!["a".into(), "b".into()],
            Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
        )
        .unwrap();
        let z = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(
            rsa_score(&z, &[0, 1], &two),
            Err(ProbeError::TooFewConcepts { needed: 3, got: 2 })
        ));

        let norms = binary_norms();
        let (latents, mut labels) = norm_aligned_latents(&norms, 2);
        for l in &mut labels {
            if *l == 2 {
                *l = 1; // Concept "y" loses all its images.
            }
        }
        match rsa_score(&latents, &labels, &norms) {
            Err(ProbeError::ConceptWithoutImages { concept }) => assert_eq!(concept, "y"),
            other => panic!("expected missing-concept error, got {other:?}"),
        }
    }

    #[test]
    fn rsa_permutation_null_stays_below_true_structure() {
        let norms = binary_norms();
        let (latents, labels) = norm_aligned_latents(&norms, 2);
        let observed = rsa_score(&latents, &labels, &norms).unwrap().rho;
        let null = rsa_permutation_null(&latents, &labels, &norms, 200, 123).unwrap();
        assert_eq!(null.len(), 200);
        let beaten = null.iter().filter(|&&r| r < observed - 1e-12).count();
        assert!(
            beaten as f64 / null.len() as f64 > 0.5,
            "true structure should beat most permutations ({beaten}/200)"
        );
        assert!(null.iter().all(|r| (-1.0 - 1e-12..=1.0 + 1e-12).contains(r)));
    }
}
