use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use super::WeightMatrix;
use crate::error::{Error, Result};

/// LoRA rank used for every client adapter unless configured otherwise.
pub const DEFAULT_RANK: usize = 64;
/// Scale numerator; the applied scale is `alpha / rank`.
pub const DEFAULT_ALPHA: f64 = 16.0;

/// One named low-rank factor pair `A` (m×r), `B` (r×n).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    name: String,
    a_factor: WeightMatrix,
    b_factor: WeightMatrix,
    alpha: f64,
}

impl LoraAdapter {
    /// Builds an adapter from explicit factors, checking the rank contract and
    /// finiteness.
    pub fn new(
        name: impl Into<String>,
        a_factor: WeightMatrix,
        b_factor: WeightMatrix,
        alpha: f64,
    ) -> Result<Self> {
        let adapter = Self::from_parts_unchecked(name, a_factor, b_factor, alpha)?;
        if !adapter.a_factor.is_finite() || !adapter.b_factor.is_finite() {
            return Err(Error::Numeric(format!(
                "adapter '{}' has non-finite factor entries",
                adapter.name
            )));
        }
        Ok(adapter)
    }

    /// Checks only the structural contract (shapes, rank, alpha). Used when
    /// decoding submissions that are validated afterwards.
    pub fn from_parts_unchecked(
        name: impl Into<String>,
        a_factor: WeightMatrix,
        b_factor: WeightMatrix,
        alpha: f64,
    ) -> Result<Self> {
        let name = name.into();
        if a_factor.cols() != b_factor.rows() {
            return Err(Error::Dimension(format!(
                "adapter '{name}': A has {} columns but B has {} rows",
                a_factor.cols(),
                b_factor.rows()
            )));
        }
        if a_factor.cols() == 0 || a_factor.rows() == 0 || b_factor.cols() == 0 {
            return Err(Error::Dimension(format!(
                "adapter '{name}': rank and dimensions must be at least 1"
            )));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::Argument(format!(
                "adapter '{name}': alpha must be positive, got {alpha}"
            )));
        }
        Ok(Self {
            name,
            a_factor,
            b_factor,
            alpha,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn a_factor(&self) -> &WeightMatrix {
        &self.a_factor
    }

    pub fn b_factor(&self) -> &WeightMatrix {
        &self.b_factor
    }

    pub fn a_factor_mut(&mut self) -> &mut WeightMatrix {
        &mut self.a_factor
    }

    pub fn b_factor_mut(&mut self) -> &mut WeightMatrix {
        &mut self.b_factor
    }

    pub fn rank(&self) -> usize {
        self.a_factor.cols()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `(m, n)`: the shape of the weight this adapter updates.
    pub fn target_shape(&self) -> (usize, usize) {
        (self.a_factor.rows(), self.b_factor.cols())
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.a_factor.is_finite() && self.b_factor.is_finite()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

/// Standard LoRA initialisation: `A ~ N(0, (1/rank)^2)` from a seeded stream,
/// `B = 0`, so the initial delta is exactly zero.
pub fn new_adapter(m: usize, n: usize, rank: usize, alpha: f64, seed: u64) -> Result<LoraAdapter> {
    if m == 0 || n == 0 || rank == 0 {
        return Err(Error::Dimension(format!(
            "m, n and rank must be >= 1 (got m={m}, n={n}, rank={rank})"
        )));
    }
    if rank > m.min(n) {
        return Err(Error::Dimension(format!(
            "rank {rank} exceeds min(m, n) = {}",
            m.min(n)
        )));
    }
    let normal = Normal::new(0.0, 1.0 / rank as f64)
        .map_err(|e| Error::Numeric(format!("initialiser: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<f64> = (0..m * rank).map(|_| rng.sample(normal)).collect();
    LoraAdapter::new(
        "weight",
        WeightMatrix::from_vec(m, rank, a)?,
        WeightMatrix::zeros(rank, n),
        alpha,
    )
}

/// `(alpha / rank) · A·B`.
pub fn delta(adapter: &LoraAdapter) -> Result<WeightMatrix> {
    let product = adapter.a_factor.matmul(&adapter.b_factor)?;
    let out = product.scale(adapter.scale());
    if !out.is_finite() {
        return Err(Error::Numeric(format!(
            "delta of adapter '{}' is not finite",
            adapter.name
        )));
    }
    Ok(out)
}

/// `base + delta(adapter)`; `base` is left untouched.
pub fn merge(base: &WeightMatrix, adapter: &LoraAdapter) -> Result<WeightMatrix> {
    if base.shape() != adapter.target_shape() {
        let (m, n) = adapter.target_shape();
        return Err(Error::Dimension(format!(
            "base is {}x{} but adapter '{}' updates {m}x{n}",
            base.rows(),
            base.cols(),
            adapter.name
        )));
    }
    base.add(&delta(adapter)?)
}

/// Adapters keyed by slot name, sharing one rank and one alpha.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterSet {
    entries: BTreeMap<String, LoraAdapter>,
}

impl AdapterSet {
    /// Each adapter is keyed by its own name.
    pub fn new(adapters: impl IntoIterator<Item = LoraAdapter>) -> Result<Self> {
        let mut set = AdapterSet {
            entries: BTreeMap::new(),
        };
        for adapter in adapters {
            set.insert(adapter)?;
        }
        if set.entries.is_empty() {
            return Err(Error::Argument("adapter set must not be empty".into()));
        }
        Ok(set)
    }

    pub fn single(adapter: LoraAdapter) -> Self {
        let mut entries = BTreeMap::new();
        entries.insert(adapter.name.clone(), adapter);
        AdapterSet { entries }
    }

    pub fn insert(&mut self, adapter: LoraAdapter) -> Result<()> {
        if self.entries.contains_key(adapter.name()) {
            return Err(Error::Argument(format!(
                "duplicate slot '{}'",
                adapter.name()
            )));
        }
        if let Some(first) = self.entries.values().next() {
            if first.rank() != adapter.rank() {
                return Err(Error::Dimension(format!(
                    "slot '{}' has rank {} but the set uses rank {}",
                    adapter.name(),
                    adapter.rank(),
                    first.rank()
                )));
            }
            if first.alpha().to_bits() != adapter.alpha().to_bits() {
                return Err(Error::Argument(format!(
                    "slot '{}' has alpha {} but the set uses alpha {}",
                    adapter.name(),
                    adapter.alpha(),
                    first.alpha()
                )));
            }
        }
        self.entries.insert(adapter.name.clone(), adapter);
        Ok(())
    }

    pub fn rank(&self) -> usize {
        self.entries.values().next().map_or(0, LoraAdapter::rank)
    }

    pub fn alpha(&self) -> f64 {
        self.entries.values().next().map_or(0.0, LoraAdapter::alpha)
    }

    pub fn get(&self, slot: &str) -> Option<&LoraAdapter> {
        self.entries.get(slot)
    }

    pub fn get_mut(&mut self, slot: &str) -> Option<&mut LoraAdapter> {
        self.entries.get_mut(slot)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn slots(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &LoraAdapter> {
        self.entries.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut LoraAdapter> {
        self.entries.values_mut()
    }
}
