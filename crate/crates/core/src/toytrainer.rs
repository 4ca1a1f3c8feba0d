//! A V×V linear "translator" with a LoRA-adapted logit map.
//!
//! Each position is translated independently: the logits for source token `t`
//! are row `t` of `base + (alpha/r)·A·B`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapters::{LoraAdapter, WeightMatrix};
use crate::corpus::TranslationPair;
use crate::error::{Error, Result};

pub const TOY_SOURCE_LANG: &str = "toy-src";
pub const TOY_TARGET_LANG: &str = "toy-tgt";

/// Frozen base of the toy translator. Never updated by training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    vocab_size: usize,
    base: WeightMatrix,
}

impl ToyModel {
    pub fn new(base: WeightMatrix) -> Result<Self> {
        let (m, n) = base.shape();
        if m != n || m == 0 {
            return Err(Error::Dimension(format!(
                "base must be square and non-empty, got {m}x{n}"
            )));
        }
        if !base.is_finite() {
            return Err(Error::Numeric("base weights must be finite".into()));
        }
        Ok(Self {
            vocab_size: m,
            base,
        })
    }

    /// All-zero base: every token starts at uniform logits.
    pub fn zeros(vocab_size: usize) -> Result<Self> {
        Self::new(WeightMatrix::zeros(vocab_size, vocab_size))
    }

    /// Base whose row `t` holds `strength` at column `mapping[t]`.
    pub fn with_mapping(mapping: &[u32], strength: f64) -> Result<Self> {
        let v = mapping.len();
        let mut base = WeightMatrix::zeros(v, v);
        for (t, &y) in mapping.iter().enumerate() {
            if y as usize >= v {
                return Err(Error::Argument(format!(
                    "mapping target {y} out of range for V={v}"
                )));
            }
            base.set(t, y as usize, strength);
        }
        Self::new(base)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn base(&self) -> &WeightMatrix {
        &self.base
    }

    /// Same model with `delta` folded into the base.
    pub fn with_delta(&self, delta: &WeightMatrix) -> Result<Self> {
        Self::new(self.base.add(delta)?)
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
            Some(t) => Err(Error::Argument(format!(
                "token {t} out of range for vocabulary of {}",
                self.vocab_size
            ))),
            None => Ok(()),
        }
    }

    fn check_adapter(&self, adapter: &LoraAdapter) -> Result<()> {
        let (m, n) = adapter.target_shape();
        if (m, n) != (self.vocab_size, self.vocab_size) {
            return Err(Error::Dimension(format!(
                "adapter updates {m}x{n} but the model is {v}x{v}",
                v = self.vocab_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub source: Vec<u32>,
    pub target: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Probability of dropping the whole adapter path for a sample.
    pub dropout: f64,
    pub max_grad_norm: f64,
    pub epochs_per_round: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            dropout: 0.5,
            max_grad_norm: 0.3,
            epochs_per_round: 1,
            batch_size: 8,
            optimizer: Optimizer::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Argument(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Argument(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(Error::Argument("max_grad_norm must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs_per_round == 0 {
            return Err(Error::Argument("batch size and epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Logits for every position of `tokens`.
pub fn forward(model: &ToyModel, adapter: &LoraAdapter, tokens: &[u32]) -> Result<Vec<Vec<f64>>> {
    model.check_adapter(adapter)?;
    model.check_tokens(tokens)?;
    let mut h = vec![0.0; adapter.rank()];
    Ok(tokens
        .iter()
        .map(|&t| {
            let mut z = vec![0.0; model.vocab_size];
            logits_into(model, adapter, t as usize, 1.0, &mut h, &mut z);
            z
        })
        .collect())
}

/// Logits of the plain base model, no adapter.
pub fn forward_base(model: &ToyModel, tokens: &[u32]) -> Result<Vec<Vec<f64>>> {
    model.check_tokens(tokens)?;
    Ok(tokens
        .iter()
        .map(|&t| model.base.row(t as usize).to_vec())
        .collect())
}

fn logits_into(
    model: &ToyModel,
    adapter: &LoraAdapter,
    token: usize,
    path: f64,
    h: &mut [f64],
    z: &mut [f64],
) {
    let s = adapter.scale() * path;
    for (hk, &a) in h.iter_mut().zip(adapter.a_factor().row(token)) {
        *hk = s * a;
    }
    z.copy_from_slice(model.base.row(token));
    if path != 0.0 {
        let b = adapter.b_factor();
        for (k, &hk) in h.iter().enumerate() {
            for (zj, &bkj) in z.iter_mut().zip(b.row(k)) {
                *zj += hk * bkj;
            }
        }
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in z.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in z.iter_mut() {
        *x /= sum;
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Lowest index among the maxima.
fn argmax(z: &[f64]) -> u32 {
    let mut best = 0;
    for (j, &x) in z.iter().enumerate() {
        if x > z[best] {
            best = j;
        }
    }
    best as u32
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub a: WeightMatrix,
    pub b: WeightMatrix,
    pub loss: f64,
}

impl Gradients {
    pub fn global_norm(&self) -> f64 {
        self.a
            .data()
            .iter()
            .chain(self.b.data())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm {
            let c = max_norm / norm;
            for x in self
                .a
                .data_mut()
                .iter_mut()
                .chain(self.b.data_mut().iter_mut())
            {
                *x *= c;
            }
        }
        norm
    }
}

fn check_batch(model: &ToyModel, batch: &[Sample]) -> Result<usize> {
    let mut positions = 0;
    for s in batch {
        if s.source.len() != s.target.len() {
            return Err(Error::Argument(format!(
                "sample has {} source but {} target tokens",
                s.source.len(),
                s.target.len()
            )));
        }
        model.check_tokens(&s.source)?;
        model.check_tokens(&s.target)?;
        positions += s.source.len();
    }
    if positions == 0 {
        return Err(Error::Argument("batch has no tokens".into()));
    }
    Ok(positions)
}

/// Mean cross-entropy over every position of `batch`, with the adapter path on.
pub fn loss(model: &ToyModel, adapter: &LoraAdapter, batch: &[Sample]) -> Result<f64> {
    model.check_adapter(adapter)?;
    let positions = check_batch(model, batch)?;
    let mut h = vec![0.0; adapter.rank()];
    let mut z = vec![0.0; model.vocab_size];
    let mut total = 0.0;
    for s in batch {
        for (&t, &y) in s.source.iter().zip(&s.target) {
            logits_into(model, adapter, t as usize, 1.0, &mut h, &mut z);
            total += log_sum_exp(&z) - z[y as usize];
        }
    }
    Ok(total / positions as f64)
}

/// Analytic gradients of [`loss`] with respect to `A` and `B`.
pub fn gradients(model: &ToyModel, adapter: &LoraAdapter, batch: &[Sample]) -> Result<Gradients> {
    model.check_adapter(adapter)?;
    check_batch(model, batch)?;
    Ok(gradients_masked(
        model,
        adapter,
        batch,
        &vec![1.0; batch.len()],
    ))
}

/// `paths[i]` multiplies the adapter path of sample `i` (0 = dropped).
fn gradients_masked(
    model: &ToyModel,
    adapter: &LoraAdapter,
    batch: &[Sample],
    paths: &[f64],
) -> Gradients {
    let r = adapter.rank();
    let v = model.vocab_size;
    let positions: usize = batch.iter().map(|s| s.source.len()).sum();
    let inv_n = 1.0 / positions as f64;
    let b = adapter.b_factor();
    let mut ga = WeightMatrix::zeros(v, r);
    let mut gb = WeightMatrix::zeros(r, v);
    let mut h = vec![0.0; r];
    let mut z = vec![0.0; v];
    let mut total = 0.0;
    for (s, &path) in batch.iter().zip(paths) {
        let scale = adapter.scale() * path;
        for (&t, &y) in s.source.iter().zip(&s.target) {
            let (t, y) = (t as usize, y as usize);
            logits_into(model, adapter, t, path, &mut h, &mut z);
            total += log_sum_exp(&z) - z[y];
            softmax_in_place(&mut z);
            z[y] -= 1.0;
            for g in z.iter_mut() {
                *g *= inv_n;
            }
            if path == 0.0 {
                continue;
            }
            let gb_data = gb.data_mut();
            for (k, &hk) in h.iter().enumerate() {
                let row = &mut gb_data[k * v..(k + 1) * v];
                for (dst, &g) in row.iter_mut().zip(z.iter()) {
                    *dst += hk * g;
                }
            }
            let ga_row = &mut ga.data_mut()[t * r..(t + 1) * r];
            for (k, dst) in ga_row.iter_mut().enumerate() {
                let dot: f64 = b.row(k).iter().zip(z.iter()).map(|(bkj, g)| bkj * g).sum();
                *dst += scale * dot;
            }
        }
    }
    Gradients {
        a: ga,
        b: gb,
        loss: total * inv_n,
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    fn update<'a>(
        &mut self,
        params: impl Iterator<Item = &'a mut f64>,
        grads: impl Iterator<Item = &'a f64>,
        cfg: &TrainConfig,
    ) {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step);
        let bc2 = 1.0 - cfg.beta2.powi(self.step);
        for (((p, &g), m), v) in params.zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Trains `A` and `B` with Adam on mean per-position cross-entropy. Batches are
/// reshuffled each epoch from `config.seed`; optimiser state starts fresh.
pub fn train_local(
    model: &ToyModel,
    adapter: &LoraAdapter,
    dataset: &[Sample],
    config: &TrainConfig,
) -> Result<LoraAdapter> {
    config.validate()?;
    model.check_adapter(adapter)?;
    if dataset.is_empty() {
        return Err(Error::Argument("training dataset is empty".into()));
    }
    check_batch(model, dataset)?;
    let mut out = adapter.clone();
    if config.learning_rate == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let len_a = out.a_factor().data().len();
    let len_b = out.b_factor().data().len();
    let mut adam_a = Adam::new(len_a);
    let mut adam_b = Adam::new(len_b);
    let keep_scale = 1.0 / (1.0 - config.dropout);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut batch = Vec::with_capacity(config.batch_size);
    let mut paths = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs_per_round {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            paths.clear();
            for &i in chunk {
                batch.push(dataset[i].clone());
                let dropped = config.dropout > 0.0 && rng.random::<f64>() < config.dropout;
                paths.push(if dropped { 0.0 } else { keep_scale });
            }
            if batch.iter().all(|s| s.source.is_empty()) {
                continue;
            }
            let mut grads = gradients_masked(model, &out, &batch, &paths);
            grads.clip(config.max_grad_norm);
            adam_a.update(
                out.a_factor_mut().data_mut().iter_mut(),
                grads.a.data().iter(),
                config,
            );
            adam_b.update(
                out.b_factor_mut().data_mut().iter_mut(),
                grads.b.data().iter(),
                config,
            );
        }
    }
    if !out.is_finite() {
        return Err(Error::Numeric(
            "training diverged to non-finite factors".into(),
        ));
    }
    Ok(out)
}

fn entry(p: &mut LoraAdapter, which: usize, i: usize) -> &mut f64 {
    if which == 0 {
        &mut p.a_factor_mut().data_mut()[i]
    } else {
        &mut p.b_factor_mut().data_mut()[i]
    }
}

/// Largest relative error between analytic gradients and central differences
/// with step `1e-5`, over every entry of `A` and `B`.
pub fn grad_check(model: &ToyModel, adapter: &LoraAdapter, batch: &[Sample]) -> Result<f64> {
    const H: f64 = 1e-5;
    let analytic = gradients(model, adapter, batch)?;
    let mut probe = adapter.clone();
    let mut worst: f64 = 0.0;
    for which in [0, 1] {
        let len = if which == 0 {
            adapter.a_factor().data().len()
        } else {
            adapter.b_factor().data().len()
        };
        for i in 0..len {
            let orig = *entry(&mut probe, which, i);
            *entry(&mut probe, which, i) = orig + H;
            let plus = loss(model, &probe, batch)?;
            *entry(&mut probe, which, i) = orig - H;
            let minus = loss(model, &probe, batch)?;
            *entry(&mut probe, which, i) = orig;
            let numeric = (plus - minus) / (2.0 * H);
            let exact = if which == 0 {
                analytic.a.data()[i]
            } else {
                analytic.b.data()[i]
            };
            let rel = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Greedy per-position decode; ties go to the lowest token id.
pub fn translate(model: &ToyModel, adapter: &LoraAdapter, source: &[u32]) -> Result<Vec<u32>> {
    Ok(forward(model, adapter, source)?
        .iter()
        .map(|z| argmax(z))
        .collect())
}

pub fn translate_base(model: &ToyModel, source: &[u32]) -> Result<Vec<u32>> {
    Ok(forward_base(model, source)?
        .iter()
        .map(|z| argmax(z))
        .collect())
}

/// Fraction of positions whose prediction equals the target.
pub fn token_accuracy(predictions: &[Vec<u32>], samples: &[Sample]) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (p, s) in predictions.iter().zip(samples) {
        total += s.target.len();
        hits += p.iter().zip(&s.target).filter(|(a, b)| a == b).count();
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

pub fn detokenize(tokens: &[u32]) -> String {
    tokens
        .iter()
        .map(|t| format!("w{t}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn parse_toy_text(text: &str) -> Result<Vec<u32>> {
    text.split_whitespace()
        .map(|w| {
            w.strip_prefix('w')
                .and_then(|d| d.parse::<u32>().ok())
                .ok_or_else(|| {
                    Error::Argument(format!("'{w}' is not a toy token (expected w<id>)"))
                })
        })
        .collect()
}

pub fn sample_to_pair(
    sample: &Sample,
    id: impl Into<String>,
    project: impl Into<String>,
) -> TranslationPair {
    TranslationPair {
        id: id.into(),
        project: project.into(),
        source_lang: TOY_SOURCE_LANG.into(),
        target_lang: TOY_TARGET_LANG.into(),
        source: detokenize(&sample.source),
        target: detokenize(&sample.target),
    }
}

pub fn pair_to_sample(pair: &TranslationPair) -> Result<Sample> {
    let sample = Sample {
        source: parse_toy_text(&pair.source)?,
        target: parse_toy_text(&pair.target)?,
    };
    if sample.source.len() != sample.target.len() {
        return Err(Error::Argument(format!(
            "pair '{}' has misaligned toy token counts",
            pair.id
        )));
    }
    Ok(sample)
}

/// A permutation "translation" task where each client only ever sees its own
/// disjoint slice of the source vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub vocab_size: usize,
    pub mapping: Vec<u32>,
    pub client_token_subsets: Vec<Vec<u32>>,
    pub sequence_length: usize,
    pub samples_per_client: usize,
    pub test_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub clients: Vec<Vec<Sample>>,
    /// Drawn from the union of all client subsets.
    pub test: Vec<Sample>,
}

impl SyntheticTaskSpec {
    pub fn generate(
        vocab_size: usize,
        clients: usize,
        subset_size: usize,
        sequence_length: usize,
        samples_per_client: usize,
        test_samples: usize,
        seed: u64,
    ) -> Result<Self> {
        if clients == 0 || subset_size == 0 || sequence_length == 0 {
            return Err(Error::Argument(
                "clients, subset size and sequence length must be >= 1".into(),
            ));
        }
        if clients * subset_size > vocab_size {
            return Err(Error::Argument(format!(
                "{clients} disjoint subsets of {subset_size} do not fit in V={vocab_size}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mapping: Vec<u32> = (0..vocab_size as u32).collect();
        mapping.shuffle(&mut rng);
        let mut ids: Vec<u32> = (0..vocab_size as u32).collect();
        ids.shuffle(&mut rng);
        let client_token_subsets = ids
            .chunks(subset_size)
            .take(clients)
            .map(|c| {
                let mut c = c.to_vec();
                c.sort_unstable();
                c
            })
            .collect();
        let spec = Self {
            vocab_size,
            mapping,
            client_token_subsets,
            sequence_length,
            samples_per_client,
            test_samples,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.vocab_size;
        let mut seen = vec![false; v];
        for &y in &self.mapping {
            if (y as usize) >= v || std::mem::replace(&mut seen[y as usize], true) {
                return Err(Error::Argument("mapping is not a permutation".into()));
            }
        }
        if self.mapping.len() != v {
            return Err(Error::Argument(
                "mapping length differs from vocabulary size".into(),
            ));
        }
        let mut owned = vec![false; v];
        for subset in &self.client_token_subsets {
            if subset.is_empty() {
                return Err(Error::Argument("client token subset is empty".into()));
            }
            for &t in subset {
                if (t as usize) >= v || std::mem::replace(&mut owned[t as usize], true) {
                    return Err(Error::Argument(format!(
                        "token {t} is out of range or shared by clients"
                    )));
                }
            }
        }
        Ok(())
    }

    fn draw(&self, pool: &[u32], count: usize, rng: &mut ChaCha8Rng) -> Vec<Sample> {
        (0..count)
            .map(|_| {
                let source: Vec<u32> = (0..self.sequence_length)
                    .map(|_| pool[rng.random_range(0..pool.len())])
                    .collect();
                let target = source.iter().map(|&t| self.mapping[t as usize]).collect();
                Sample { source, target }
            })
            .collect()
    }

    pub fn sample(&self, seed: u64) -> SyntheticCorpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clients = self
            .client_token_subsets
            .iter()
            .map(|subset| self.draw(subset, self.samples_per_client, &mut rng))
            .collect();
        let union: Vec<u32> = self.client_token_subsets.concat();
        let test = self.draw(&union, self.test_samples, &mut rng);
        SyntheticCorpus { clients, test }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::{merge, new_adapter};

    fn small_batch(v: u32, rng: &mut ChaCha8Rng) -> Vec<Sample> {
        (0..3)
            .map(|_| {
                let source: Vec<u32> = (0..4).map(|_| rng.random_range(0..v)).collect();
                let target = source.iter().map(|&t| (t * 7 + 3) % v).collect();
                Sample { source, target }
            })
            .collect()
    }

    fn random_adapter(v: usize, r: usize, rng: &mut ChaCha8Rng) -> LoraAdapter {
        let mut a = new_adapter(v, v, r, 4.0, rng.random()).unwrap();
        for x in a.b_factor_mut().data_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
        a
    }

    #[test]
    fn uniform_logits_loss_is_ln_v() {
        let model = ToyModel::zeros(16).unwrap();
        let adapter = new_adapter(16, 16, 2, 16.0, 1).unwrap();
        let batch = vec![Sample {
            source: vec![1, 2, 3],
            target: vec![4, 5, 6],
        }];
        let z = forward(&model, &adapter, &batch[0].source).unwrap();
        assert!(z.iter().flatten().all(|&x| x == 0.0));
        let l = loss(&model, &adapter, &batch).unwrap();
        assert!((l - 16f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn zero_b_gives_zero_grad_a() {
        let model = ToyModel::zeros(8).unwrap();
        let adapter = new_adapter(8, 8, 2, 16.0, 2).unwrap();
        let batch = vec![Sample {
            source: vec![1, 2],
            target: vec![3, 0],
        }];
        let g = gradients(&model, &adapter, &batch).unwrap();
        assert!(g.a.data().iter().all(|&x| x == 0.0));
        assert!(g.b.data().iter().any(|&x| x != 0.0));
    }

    #[test]
    fn gradient_check_small_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let v = rng.random_range(3..=8usize);
            let r = rng.random_range(1..=2usize);
            let model = ToyModel::new(
                WeightMatrix::from_vec(
                    v,
                    v,
                    (0..v * v).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
                .unwrap(),
            )
            .unwrap();
            let adapter = random_adapter(v, r, &mut rng);
            let batch = small_batch(v as u32, &mut rng);
            let err = grad_check(&model, &adapter, &batch).unwrap();
            assert!(err < 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn merged_matches_adapter_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = ToyModel::zeros(10).unwrap();
        let adapter = random_adapter(10, 3, &mut rng);
        let merged = ToyModel::new(merge(model.base(), &adapter).unwrap()).unwrap();
        let tokens: Vec<u32> = (0..10).collect();
        let a = forward(&model, &adapter, &tokens).unwrap();
        let b = forward_base(&merged, &tokens).unwrap();
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn dominant_base_decodes_mapping_and_ties_go_low() {
        let mapping = vec![2, 0, 3, 1];
        let model = ToyModel::with_mapping(&mapping, 10.0).unwrap();
        let adapter = new_adapter(4, 4, 2, 16.0, 0).unwrap();
        assert_eq!(translate(&model, &adapter, &[0, 1, 2, 3]).unwrap(), mapping);
        let zero = ToyModel::zeros(4).unwrap();
        assert_eq!(translate(&zero, &adapter, &[3, 1]).unwrap(), vec![0, 0]);
        assert!(translate(&zero, &adapter, &[4]).is_err());
        let ident = ToyModel::new(WeightMatrix::identity(4).scale(10.0)).unwrap();
        assert_eq!(
            translate(&ident, &adapter, &[3, 1, 2]).unwrap(),
            vec![3, 1, 2]
        );
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let model = ToyModel::zeros(8).unwrap();
        let adapter = new_adapter(8, 8, 2, 16.0, 4).unwrap();
        let data = vec![
            Sample {
                source: vec![1, 2],
                target: vec![2, 3]
            };
            5
        ];
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert_eq!(train_local(&model, &adapter, &data, &cfg).unwrap(), adapter);
        assert!(train_local(&model, &adapter, &[], &cfg).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let model = ToyModel::zeros(8).unwrap();
        let adapter = new_adapter(8, 8, 2, 16.0, 4).unwrap();
        let data = vec![
            Sample {
                source: vec![1, 2],
                target: vec![2, 3]
            };
            20
        ];
        let cfg = TrainConfig {
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train_local(&model, &adapter, &data, &cfg).unwrap();
        let b = train_local(&model, &adapter, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, adapter);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = ToyModel::zeros(6).unwrap();
        let adapter = random_adapter(6, 2, &mut rng);
        let batch = small_batch(6, &mut rng);
        let mut g = gradients(&model, &adapter, &batch).unwrap();
        let before = g.clip(1e-3);
        assert!(before > 1e-3);
        assert!(g.global_norm() <= 1e-3 + 1e-12);
    }

    #[test]
    fn ten_token_mapping_converges() {
        let spec = SyntheticTaskSpec::generate(32, 1, 10, 8, 1600, 0, 1).unwrap();
        let corpus = spec.sample(2);
        let model = ToyModel::zeros(32).unwrap();
        let adapter = new_adapter(32, 32, 8, 16.0, 3).unwrap();
        let trained = train_local(
            &model,
            &adapter,
            &corpus.clients[0],
            &TrainConfig::default(),
        )
        .unwrap();
        let train = &corpus.clients[0];
        let preds: Vec<_> = train
            .iter()
            .map(|s| translate(&model, &trained, &s.source).unwrap())
            .collect();
        assert!(
            token_accuracy(&preds, train) >= 0.99,
            "{}",
            token_accuracy(&preds, train)
        );
    }

    #[test]
    fn synthetic_subsets_disjoint() {
        let spec = SyntheticTaskSpec::generate(64, 2, 20, 8, 10, 10, 7).unwrap();
        let a: std::collections::HashSet<_> = spec.client_token_subsets[0].iter().collect();
        assert!(spec.client_token_subsets[1].iter().all(|t| !a.contains(t)));
        let corpus = spec.sample(1);
        assert!(corpus.clients[0]
            .iter()
            .flat_map(|s| &s.source)
            .all(|t| a.contains(t)));
        assert!(SyntheticTaskSpec::generate(8, 2, 5, 1, 1, 1, 0).is_err());
    }

    #[test]
    fn toy_text_roundtrip() {
        let s = Sample {
            source: vec![3, 10],
            target: vec![1, 0],
        };
        let p = sample_to_pair(&s, "0", "c0");
        assert_eq!(p.source, "w3 w10");
        assert_eq!(pair_to_sample(&p).unwrap(), s);
        assert!(parse_toy_text("x3").is_err());
    }
}
