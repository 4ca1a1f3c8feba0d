//! Server-side combination of client adapters.
//!
//! FedAvg averages the `A` and `B` factors entrywise and keeps the rank. FLoRA
//! stacks them, `A = [c1·A1 | c2·A2 | ...]`, `B = [B1; B2; ...]`, so the delta of
//! the result is exactly the weighted sum of client deltas and the rank grows to
//! the sum of client ranks.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::adapters::{delta, AdapterSet, LoraAdapter, WeightMatrix};
use crate::error::{Error, Result};

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMethod {
    FedAvg,
    #[serde(rename = "flora")]
    FLoRA,
}

impl std::fmt::Display for AggregationMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AggregationMethod::FedAvg => "fedavg",
            AggregationMethod::FLoRA => "flora",
        })
    }
}

impl std::str::FromStr for AggregationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fedavg" | "m1" => Ok(AggregationMethod::FedAvg),
            "flora" | "m2" => Ok(AggregationMethod::FLoRA),
            other => Err(Error::Argument(format!(
                "unknown aggregation method '{other}' (expected fedavg or flora)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationConfig {
    pub method: AggregationMethod,
    /// Per-client weights summing to 1. When absent FedAvg uses `1/k` and
    /// FLoRA uses 1 for every client (the plain stacked sum).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_weights: Option<Vec<f64>>,
    pub clients: usize,
}

impl AggregationConfig {
    pub fn new(method: AggregationMethod, clients: usize) -> Self {
        Self {
            method,
            client_weights: None,
            clients,
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        self.client_weights = Some(weights);
        self.validate()?;
        Ok(self)
    }

    /// Weights proportional to client dataset sizes.
    pub fn with_size_weights(self, sizes: &[usize]) -> Result<Self> {
        let total: usize = sizes.iter().sum();
        if total == 0 {
            return Err(Error::Argument("dataset sizes sum to zero".into()));
        }
        let weights = sizes.iter().map(|&s| s as f64 / total as f64).collect();
        self.with_weights(weights)
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::Argument(
                "aggregation needs at least one client".into(),
            ));
        }
        if let Some(w) = &self.client_weights {
            if w.len() != self.clients {
                return Err(Error::Argument(format!(
                    "{} weights for {} clients",
                    w.len(),
                    self.clients
                )));
            }
            if w.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
                return Err(Error::Argument(
                    "client weights must be non-negative".into(),
                ));
            }
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                return Err(Error::Argument(format!(
                    "client weights sum to {sum}, not 1"
                )));
            }
        }
        Ok(())
    }

    fn weights(&self) -> Vec<f64> {
        match (&self.client_weights, self.method) {
            (Some(w), _) => w.clone(),
            (None, AggregationMethod::FedAvg) => vec![1.0 / self.clients as f64; self.clients],
            (None, AggregationMethod::FLoRA) => vec![1.0; self.clients],
        }
    }
}

fn check_inputs(adapters: &[LoraAdapter], config: &AggregationConfig) -> Result<()> {
    config.validate()?;
    let first = adapters
        .first()
        .ok_or_else(|| Error::Argument("no adapters to aggregate".into()))?;
    if adapters.len() != config.clients {
        return Err(Error::Argument(format!(
            "{} adapters for a {}-client configuration",
            adapters.len(),
            config.clients
        )));
    }
    for (i, a) in adapters.iter().enumerate() {
        if a.target_shape() != first.target_shape() {
            return Err(Error::Aggregation(format!(
                "client {i} updates a {:?} weight, client 0 a {:?} weight",
                a.target_shape(),
                first.target_shape()
            )));
        }
        if a.alpha().to_bits() != first.alpha().to_bits() {
            return Err(Error::Aggregation(format!(
                "client {i} has alpha {}, client 0 has {}",
                a.alpha(),
                first.alpha()
            )));
        }
    }
    Ok(())
}

fn cmp_bits(x: &[f64], y: &[f64]) -> Ordering {
    x.iter()
        .zip(y)
        .map(|(a, b)| a.total_cmp(b))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Weighted mean `Σ wᵢ·Xᵢ`, accumulated as `X_ref + Σ wᵢ·(Xᵢ − X_ref)` over a
/// content-defined ordering. With uniform weights the result does not depend on
/// client order, and identical inputs reproduce the input bit for bit.
fn weighted_mean(
    mats: &[&WeightMatrix],
    order: &[usize],
    weights: &[f64],
    uniform: bool,
) -> WeightMatrix {
    let reference = mats[order[0]];
    let ref_scale = if uniform {
        1.0
    } else {
        order.iter().map(|&i| weights[i]).sum()
    };
    let mut acc = reference.scale(ref_scale);
    for (j, out) in acc.data_mut().iter_mut().enumerate() {
        let r = reference.data()[j];
        let mut shift = 0.0;
        for &i in order {
            shift += weights[i] * (mats[i].data()[j] - r);
        }
        *out += shift;
    }
    acc
}

/// FedAvg over factors: `A = Σ wᵢ·Aᵢ`, `B = Σ wᵢ·Bᵢ`. All clients must share
/// target shape, rank and alpha.
pub fn fedavg(adapters: &[LoraAdapter], config: &AggregationConfig) -> Result<LoraAdapter> {
    check_inputs(adapters, config)?;
    let first = &adapters[0];
    if let Some((i, a)) = adapters
        .iter()
        .enumerate()
        .find(|(_, a)| a.rank() != first.rank())
    {
        return Err(Error::Aggregation(format!(
            "FedAvg needs equal ranks: client {i} has rank {}, client 0 has {}",
            a.rank(),
            first.rank()
        )));
    }
    let weights = config.weights();
    let mut order: Vec<usize> = (0..adapters.len()).collect();
    order.sort_by(|&x, &y| {
        weights[x]
            .total_cmp(&weights[y])
            .then_with(|| cmp_bits(adapters[x].a_factor().data(), adapters[y].a_factor().data()))
            .then_with(|| cmp_bits(adapters[x].b_factor().data(), adapters[y].b_factor().data()))
            .then(x.cmp(&y))
    });
    let uniform = config.client_weights.is_none();
    let a_mats: Vec<&WeightMatrix> = adapters.iter().map(LoraAdapter::a_factor).collect();
    let b_mats: Vec<&WeightMatrix> = adapters.iter().map(LoraAdapter::b_factor).collect();
    LoraAdapter::new(
        first.name(),
        weighted_mean(&a_mats, &order, &weights, uniform),
        weighted_mean(&b_mats, &order, &weights, uniform),
        first.alpha(),
    )
}

/// FLoRA stacking. Client ranks may differ.
///
/// The stacked adapter has rank `R = Σ rᵢ` and alpha `k·α`; block `i` of `A` is
/// scaled by `wᵢ·R / (k·rᵢ)` (which is exactly `wᵢ` when ranks are equal) so that
/// `delta(result) = Σ wᵢ·delta(clientᵢ)`. `B` blocks are copied unchanged.
pub fn flora_stack(adapters: &[LoraAdapter], config: &AggregationConfig) -> Result<LoraAdapter> {
    check_inputs(adapters, config)?;
    let weights = config.weights();
    let k = adapters.len() as f64;
    let total_rank: usize = adapters.iter().map(LoraAdapter::rank).sum();
    let a_blocks: Vec<WeightMatrix> = adapters
        .iter()
        .zip(&weights)
        .map(|(a, &w)| {
            let c = w * (total_rank as f64 / (k * a.rank() as f64));
            if c == 1.0 {
                a.a_factor().clone()
            } else {
                a.a_factor().scale(c)
            }
        })
        .collect();
    let b_blocks: Vec<WeightMatrix> = adapters.iter().map(|a| a.b_factor().clone()).collect();
    LoraAdapter::new(
        adapters[0].name(),
        WeightMatrix::hstack(&a_blocks)?,
        WeightMatrix::vstack(&b_blocks)?,
        adapters[0].alpha() * k,
    )
}

pub fn aggregate(adapters: &[LoraAdapter], config: &AggregationConfig) -> Result<LoraAdapter> {
    match config.method {
        AggregationMethod::FedAvg => fedavg(adapters, config),
        AggregationMethod::FLoRA => flora_stack(adapters, config),
    }
}

/// Delta of the aggregated adapter.
pub fn aggregate_delta(
    adapters: &[LoraAdapter],
    config: &AggregationConfig,
) -> Result<WeightMatrix> {
    delta(&aggregate(adapters, config)?)
}

/// Slot-wise aggregation of whole adapter sets. Every set must cover the same slots.
pub fn aggregate_sets(sets: &[AdapterSet], config: &AggregationConfig) -> Result<AdapterSet> {
    let first = sets
        .first()
        .ok_or_else(|| Error::Argument("no adapter sets to aggregate".into()))?;
    let slots: Vec<&str> = first.slots().collect();
    for (i, s) in sets.iter().enumerate() {
        if !s.slots().eq(slots.iter().copied()) {
            return Err(Error::Aggregation(format!(
                "client {i} submits slots {:?}, client 0 submits {:?}",
                s.slots().collect::<Vec<_>>(),
                slots
            )));
        }
    }
    let mut out = Vec::with_capacity(slots.len());
    for slot in slots {
        let per_client: Vec<LoraAdapter> = sets
            .iter()
            .map(|s| s.get(slot).expect("slot checked above").clone())
            .collect();
        out.push(aggregate(&per_client, config)?);
    }
    AdapterSet::new(out)
}
