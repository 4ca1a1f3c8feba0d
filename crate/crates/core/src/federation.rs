//! Round loop: distribute, train locally, validate, aggregate, evaluate.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adapters::{delta, new_adapter, write_adapter_bytes, AdapterSet, Checksum, LoraAdapter};
use crate::aggregation::{AggregationConfig, AggregationMethod};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_corpus, Language, MetricConfig, MetricReport, HEADLINE_METRICS};
use crate::toytrainer::{
    detokenize, token_accuracy, train_local, translate, translate_base, Sample, ToyModel,
    TrainConfig, TOY_SOURCE_LANG, TOY_TARGET_LANG,
};

pub const DEFAULT_ROUNDS: usize = 20;
pub const DEFAULT_NORM_BOUND: f64 = 1e6;
/// Slot name the toy model's single weight is stored under.
pub const TOY_SLOT: &str = "weight";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloraPolicy {
    /// Fold the stacked delta into the base and restart every client from a
    /// fresh rank-r adapter.
    #[default]
    MergeAndReinit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub rounds: usize,
    pub aggregation: AggregationConfig,
    pub client_ids: Vec<String>,
    pub seed: u64,
    #[serde(default)]
    pub flora_policy: FloraPolicy,
    pub train: TrainConfig,
    pub rank: usize,
    pub alpha: f64,
}

impl FederationConfig {
    pub fn new(method: AggregationMethod, clients: usize, seed: u64) -> Self {
        Self {
            rounds: DEFAULT_ROUNDS,
            aggregation: AggregationConfig::new(method, clients),
            client_ids: (0..clients).map(|i| format!("c{i}")).collect(),
            seed,
            flora_policy: FloraPolicy::MergeAndReinit,
            train: TrainConfig::default(),
            rank: crate::adapters::DEFAULT_RANK,
            alpha: crate::adapters::DEFAULT_ALPHA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Argument("rounds must be >= 1".into()));
        }
        if self.client_ids.is_empty() {
            return Err(Error::Argument("at least one client is required".into()));
        }
        if self.aggregation.clients != self.client_ids.len() {
            return Err(Error::Argument(format!(
                "aggregation configured for {} clients but {} ids given",
                self.aggregation.clients,
                self.client_ids.len()
            )));
        }
        self.aggregation.validate()?;
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionReport {
    pub direction: String,
    pub report: MetricReport,
    pub token_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round_index: usize,
    pub method: AggregationMethod,
    /// FLAD checksum of the aggregate (round 0: the initial shared adapter).
    pub aggregate_checksum: Checksum,
    /// Digest of the decoded test-set outputs.
    pub output_checksum: Checksum,
    pub metrics: Vec<DirectionReport>,
    pub wall_time: f64,
}

impl RoundRecord {
    /// Record equality ignoring `wall_time`.
    pub fn same_outcome(&self, other: &RoundRecord) -> bool {
        self.round_index == other.round_index
            && self.method == other.method
            && self.aggregate_checksum == other.aggregate_checksum
            && self.output_checksum == other.output_checksum
            && self.metrics == other.metrics
    }

    /// Headline scores of every direction, flattened in order.
    pub fn scores(&self) -> Vec<f64> {
        self.metrics
            .iter()
            .flat_map(|d| d.report.headline())
            .collect()
    }

    pub fn token_accuracy(&self) -> f64 {
        self.metrics.first().map_or(0.0, |d| d.token_accuracy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectionReason {
    Missing,
    Unexpected,
    Shape,
    Rank,
    Alpha,
    NonFinite,
    Norm,
}

impl RejectionReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectionReason::Missing => "missing",
            RejectionReason::Unexpected => "unexpected",
            RejectionReason::Shape => "shape",
            RejectionReason::Rank => "rank",
            RejectionReason::Alpha => "alpha",
            RejectionReason::NonFinite => "non-finite",
            RejectionReason::Norm => "norm",
        }
    }
}

impl fmt::Display for RejectionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub slot: String,
    pub reason: RejectionReason,
    pub detail: String,
}

impl Rejection {
    fn new(slot: &str, reason: RejectionReason, detail: impl Into<String>) -> Self {
        Self {
            slot: slot.to_string(),
            reason,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} in slot '{}': {}",
            self.reason, self.slot, self.detail
        )
    }
}

/// What every client submission must look like, fixed at setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionManifest {
    /// Slot name to target weight shape `(m, n)`.
    pub slots: BTreeMap<String, (usize, usize)>,
    pub rank: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub norm_bound: f64,
}

impl SubmissionManifest {
    pub fn new(slots: BTreeMap<String, (usize, usize)>, rank: usize) -> Self {
        Self {
            slots,
            rank,
            alpha: None,
            norm_bound: DEFAULT_NORM_BOUND,
        }
    }

    pub fn for_set(set: &AdapterSet) -> Self {
        let mut m = Self::new(
            set.iter()
                .map(|a| (a.name().to_string(), a.target_shape()))
                .collect(),
            set.rank(),
        );
        m.alpha = Some(set.alpha());
        m
    }
}

/// Checks one submission against the manifest, slot by slot in name order.
pub fn validate_submission(
    set: &AdapterSet,
    manifest: &SubmissionManifest,
) -> std::result::Result<(), Rejection> {
    for (slot, &(m, n)) in &manifest.slots {
        let a = set
            .get(slot)
            .ok_or_else(|| Rejection::new(slot, RejectionReason::Missing, "slot not submitted"))?;
        if a.target_shape() != (m, n) {
            let (am, an) = a.target_shape();
            return Err(Rejection::new(
                slot,
                RejectionReason::Shape,
                format!("expected {m}x{n}, got {am}x{an}"),
            ));
        }
        if a.rank() != manifest.rank {
            return Err(Rejection::new(
                slot,
                RejectionReason::Rank,
                format!("expected rank {}, got {}", manifest.rank, a.rank()),
            ));
        }
        if let Some(alpha) = manifest.alpha {
            if a.alpha().to_bits() != alpha.to_bits() {
                return Err(Rejection::new(
                    slot,
                    RejectionReason::Alpha,
                    format!("expected alpha {alpha}, got {}", a.alpha()),
                ));
            }
        }
        for (factor, w) in [("A", a.a_factor()), ("B", a.b_factor())] {
            if !w.is_finite() {
                return Err(Rejection::new(
                    slot,
                    RejectionReason::NonFinite,
                    format!("factor {factor} has NaN or infinite entries"),
                ));
            }
        }
        for (factor, w) in [("A", a.a_factor()), ("B", a.b_factor())] {
            let norm = w.frobenius_norm();
            if !(norm <= manifest.norm_bound) {
                return Err(Rejection::new(
                    slot,
                    RejectionReason::Norm,
                    format!(
                        "factor {factor} norm {norm} exceeds {}",
                        manifest.norm_bound
                    ),
                ));
            }
        }
    }
    if let Some(extra) = set.slots().find(|s| !manifest.slots.contains_key(*s)) {
        return Err(Rejection::new(
            extra,
            RejectionReason::Unexpected,
            "slot not in manifest",
        ));
    }
    Ok(())
}

/// Aggregates already-ordered submissions after validating every one of them.
/// FLoRA results are the stacked, higher-rank set.
pub fn validate_and_aggregate(
    round: usize,
    submissions: &[(String, AdapterSet)],
    manifest: &SubmissionManifest,
    config: &AggregationConfig,
) -> Result<AdapterSet> {
    for (client, set) in submissions {
        validate_submission(set, manifest).map_err(|rejection| Error::PoisonedRound {
            round,
            client: client.clone(),
            rejection,
        })?;
    }
    let sets: Vec<AdapterSet> = submissions.iter().map(|(_, s)| s.clone()).collect();
    crate::aggregation::aggregate_sets(&sets, config)
}

/// SplitMix64 finaliser, used to derive independent stream seeds.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(splitmix(splitmix(seed) ^ a) ^ b)
}

const INIT_STREAM: u64 = u64::MAX;

/// Digest of decoded token sequences, as stored in [`RoundRecord::output_checksum`].
pub fn outputs_checksum(outputs: &[Vec<u32>]) -> Checksum {
    let mut bytes = Vec::new();
    for seq in outputs {
        bytes.extend((seq.len() as u64).to_le_bytes());
        for t in seq {
            bytes.extend(t.to_le_bytes());
        }
    }
    Checksum::of(&bytes)
}

fn direction_name() -> String {
    format!("{TOY_SOURCE_LANG}->{TOY_TARGET_LANG}")
}

/// Scores decoded outputs against the test set.
pub fn evaluate_outputs(outputs: &[Vec<u32>], test: &[Sample]) -> Result<DirectionReport> {
    let cands: Vec<String> = outputs.iter().map(|o| detokenize(o)).collect();
    let refs: Vec<String> = test.iter().map(|s| detokenize(&s.target)).collect();
    let report = evaluate_corpus(&cands, &refs, Language::Toy, &MetricConfig::default())?;
    Ok(DirectionReport {
        direction: direction_name(),
        report: report.mean,
        token_accuracy: token_accuracy(outputs, test),
    })
}

/// Decoded outputs of the untrained base model.
pub fn vanilla_outputs(model: &ToyModel, test: &[Sample]) -> Result<Vec<Vec<u32>>> {
    test.iter()
        .map(|s| translate_base(model, &s.source))
        .collect()
}

/// Mutable state of one simulated federation.
#[derive(Debug, Clone)]
pub struct Federation<'a> {
    config: FederationConfig,
    manifest: SubmissionManifest,
    clients: &'a [Vec<Sample>],
    test: &'a [Sample],
    /// Base plus every folded FLoRA delta.
    model: ToyModel,
    /// Starting point handed to every client next round.
    start: LoraAdapter,
    last_checksum: Checksum,
    aggregations: usize,
}

impl<'a> Federation<'a> {
    pub fn new(
        config: FederationConfig,
        model: &ToyModel,
        clients: &'a [Vec<Sample>],
        test: &'a [Sample],
    ) -> Result<Self> {
        config.validate()?;
        if clients.len() != config.client_ids.len() {
            return Err(Error::Argument(format!(
                "{} client datasets for {} clients",
                clients.len(),
                config.client_ids.len()
            )));
        }
        if let Some(i) = clients.iter().position(Vec::is_empty) {
            return Err(Error::Argument(format!(
                "client '{}' has no local data",
                config.client_ids[i]
            )));
        }
        let v = model.vocab_size();
        let start = new_adapter(
            v,
            v,
            config.rank,
            config.alpha,
            mix_seed(config.seed, 0, INIT_STREAM),
        )?
        .with_name(TOY_SLOT);
        let initial = AdapterSet::single(start.clone());
        let manifest = SubmissionManifest::for_set(&initial);
        Ok(Self {
            last_checksum: Checksum::of(&write_adapter_bytes(&initial)),
            config,
            manifest,
            clients,
            test,
            model: model.clone(),
            start,
            aggregations: 0,
        })
    }

    pub fn config(&self) -> &FederationConfig {
        &self.config
    }

    pub fn manifest(&self) -> &SubmissionManifest {
        &self.manifest
    }

    pub fn start_adapter(&self) -> &LoraAdapter {
        &self.start
    }

    pub fn effective_model(&self) -> &ToyModel {
        &self.model
    }

    pub fn aggregations(&self) -> usize {
        self.aggregations
    }

    /// Test-set outputs of the current merged model.
    pub fn outputs(&self) -> Result<Vec<Vec<u32>>> {
        self.test
            .iter()
            .map(|s| translate(&self.model, &self.start, &s.source))
            .collect()
    }

    pub fn evaluate(&self, round_index: usize, started: Instant) -> Result<RoundRecord> {
        let outputs = self.outputs()?;
        Ok(RoundRecord {
            round_index,
            method: self.config.aggregation.method,
            aggregate_checksum: self.last_checksum,
            output_checksum: outputs_checksum(&outputs),
            metrics: vec![evaluate_outputs(&outputs, self.test)?],
            wall_time: started.elapsed().as_secs_f64(),
        })
    }

    /// Trains every client from the shared start, in parallel.
    pub fn local_training(&self, round_index: usize) -> Result<Vec<(String, AdapterSet)>> {
        let results: Vec<Result<LoraAdapter>> = std::thread::scope(|scope| {
            let handles: Vec<_> = self
                .clients
                .iter()
                .enumerate()
                .map(|(i, data)| {
                    let train = TrainConfig {
                        seed: mix_seed(self.config.seed, round_index as u64, i as u64),
                        ..self.config.train.clone()
                    };
                    let model = &self.model;
                    let start = &self.start;
                    scope.spawn(move || train_local(model, start, data, &train))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("client training thread panicked"))
                .collect()
        });
        self.config
            .client_ids
            .iter()
            .zip(results)
            .map(|(id, r)| Ok((id.clone(), AdapterSet::single(r?))))
            .collect()
    }

    /// Validates and aggregates one round of submissions, then advances the
    /// shared state. Nothing changes if any submission is rejected.
    pub fn apply_submissions(
        &mut self,
        round_index: usize,
        submissions: &[(String, AdapterSet)],
    ) -> Result<()> {
        let agg = validate_and_aggregate(
            round_index,
            submissions,
            &self.manifest,
            &self.config.aggregation,
        )?;
        let checksum = Checksum::of(&write_adapter_bytes(&agg));
        let merged = agg
            .get(TOY_SLOT)
            .ok_or_else(|| Error::Aggregation("aggregate lacks the model slot".into()))?;
        match self.config.aggregation.method {
            AggregationMethod::FedAvg => {
                self.start = merged.clone();
            }
            AggregationMethod::FLoRA => match self.config.flora_policy {
                FloraPolicy::MergeAndReinit => {
                    let folded = self.model.with_delta(&delta(merged)?)?;
                    let v = folded.vocab_size();
                    let seed = mix_seed(self.config.seed, round_index as u64, INIT_STREAM);
                    self.start = new_adapter(v, v, self.config.rank, self.config.alpha, seed)?
                        .with_name(TOY_SLOT);
                    self.model = folded;
                }
            },
        }
        self.last_checksum = checksum;
        self.aggregations += 1;
        Ok(())
    }

    pub fn run_round(&mut self, round_index: usize) -> Result<RoundRecord> {
        if round_index == 0 {
            return Err(Error::Argument(
                "round 0 is the untrained evaluation".into(),
            ));
        }
        let started = Instant::now();
        let submissions = self.local_training(round_index)?;
        self.apply_submissions(round_index, &submissions)?;
        self.evaluate(round_index, started)
    }
}

/// Rounds `0..=config.rounds`; round 0 evaluates the untrained model.
pub fn run_simulation(
    config: &FederationConfig,
    model: &ToyModel,
    clients: &[Vec<Sample>],
    test: &[Sample],
) -> Result<Vec<RoundRecord>> {
    let mut fed = Federation::new(config.clone(), model, clients, test)?;
    let mut records = vec![fed.evaluate(0, Instant::now())?];
    for round in 1..=config.rounds {
        records.push(fed.run_round(round)?);
    }
    Ok(records)
}

/// A client trained alone for as many epochs as it would see in the whole
/// federation, from the same initial adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualResult {
    pub client_id: String,
    pub metrics: DirectionReport,
}

pub fn train_individuals(
    config: &FederationConfig,
    model: &ToyModel,
    clients: &[Vec<Sample>],
    test: &[Sample],
) -> Result<Vec<IndividualResult>> {
    let fed = Federation::new(config.clone(), model, clients, test)?;
    let start = fed.start_adapter();
    let results: Vec<Result<IndividualResult>> = std::thread::scope(|scope| {
        let handles: Vec<_> = clients
            .iter()
            .enumerate()
            .map(|(i, data)| {
                let train = TrainConfig {
                    seed: mix_seed(config.seed, u64::MAX - 1, i as u64),
                    epochs_per_round: config.train.epochs_per_round * config.rounds,
                    ..config.train.clone()
                };
                let id = config.client_ids[i].clone();
                scope.spawn(move || {
                    let adapter = train_local(model, start, data, &train)?;
                    let outputs: Vec<Vec<u32>> = test
                        .iter()
                        .map(|s| translate(model, &adapter, &s.source))
                        .collect::<Result<_>>()?;
                    Ok(IndividualResult {
                        client_id: id,
                        metrics: evaluate_outputs(&outputs, test)?,
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("baseline training thread panicked"))
            .collect()
    });
    results.into_iter().collect()
}

/// Per-metric argmax (earliest round on ties), then the round with the most
/// wins (earliest on ties). Returns a position into `scores`.
pub fn best_by_majority(scores: &[Vec<f64>]) -> Result<usize> {
    let first = scores
        .first()
        .ok_or_else(|| Error::Argument("no rounds to choose from".into()))?;
    if scores.iter().any(|s| s.len() != first.len()) {
        return Err(Error::Argument(
            "rounds report different metric sets".into(),
        ));
    }
    let mut wins = vec![0usize; scores.len()];
    for m in 0..first.len() {
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            if s[m] > scores[best][m] {
                best = i;
            }
        }
        wins[best] += 1;
    }
    let mut best = 0;
    for (i, &w) in wins.iter().enumerate() {
        if w > wins[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Round index winning the majority of headline metrics.
pub fn select_best_round(records: &[RoundRecord]) -> Result<usize> {
    let scores: Vec<Vec<f64>> = records.iter().map(RoundRecord::scores).collect();
    Ok(records[best_by_majority(&scores)?].round_index)
}

/// Everything a simulation run emits, for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: FederationConfig,
    pub metric_names: Vec<String>,
    pub records: Vec<RoundRecord>,
    pub best_round: usize,
    pub individuals: Vec<IndividualResult>,
}

impl RunManifest {
    pub fn new(
        config: FederationConfig,
        records: Vec<RoundRecord>,
        individuals: Vec<IndividualResult>,
    ) -> Result<Self> {
        let best_round = select_best_round(&records)?;
        Ok(Self {
            config,
            metric_names: HEADLINE_METRICS.iter().map(|s| s.to_string()).collect(),
            records,
            best_round,
            individuals,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toytrainer::SyntheticTaskSpec;

    fn setup(
        method: AggregationMethod,
    ) -> (FederationConfig, ToyModel, Vec<Vec<Sample>>, Vec<Sample>) {
        let spec = SyntheticTaskSpec::generate(16, 2, 4, 4, 24, 12, 3).unwrap();
        let corpus = spec.sample(4);
        let mut config = FederationConfig::new(method, 2, 7);
        config.rounds = 3;
        config.rank = 4;
        config.train.learning_rate = 1e-2;
        (
            config,
            ToyModel::zeros(16).unwrap(),
            corpus.clients,
            corpus.test,
        )
    }

    #[test]
    fn record_count_and_determinism() {
        for method in [AggregationMethod::FedAvg, AggregationMethod::FLoRA] {
            let (config, model, clients, test) = setup(method);
            let a = run_simulation(&config, &model, &clients, &test).unwrap();
            let b = run_simulation(&config, &model, &clients, &test).unwrap();
            assert_eq!(a.len(), 4);
            assert!(a.iter().zip(&b).all(|(x, y)| x.same_outcome(y)));
            assert!(a
                .iter()
                .flat_map(|r| r.scores())
                .all(|s| (0.0..=1.0).contains(&s)));
        }
    }

    #[test]
    fn round_zero_is_vanilla() {
        let (config, model, clients, test) = setup(AggregationMethod::FedAvg);
        let fed = Federation::new(config, &model, &clients, &test).unwrap();
        assert_eq!(
            fed.outputs().unwrap(),
            vanilla_outputs(&model, &test).unwrap()
        );
    }

    #[test]
    fn rank_laws() {
        let (config, model, clients, test) = setup(AggregationMethod::FedAvg);
        let mut fed = Federation::new(config, &model, &clients, &test).unwrap();
        fed.run_round(1).unwrap();
        assert_eq!(fed.start_adapter().rank(), 4);

        let (config, model, clients, test) = setup(AggregationMethod::FLoRA);
        let mut fed = Federation::new(config, &model, &clients, &test).unwrap();
        let subs = fed.local_training(1).unwrap();
        let stacked =
            validate_and_aggregate(1, &subs, fed.manifest(), &fed.config().aggregation).unwrap();
        assert_eq!(stacked.rank(), 8);
        let before = fed.effective_model().clone();
        fed.apply_submissions(1, &subs).unwrap();
        assert_eq!(fed.start_adapter().rank(), 4);
        assert!(fed
            .start_adapter()
            .b_factor()
            .data()
            .iter()
            .all(|&x| x == 0.0));
        assert_ne!(&before, fed.effective_model());
    }

    #[test]
    fn poisoned_round_leaves_state() {
        let (config, model, clients, test) = setup(AggregationMethod::FedAvg);
        let mut fed = Federation::new(config, &model, &clients, &test).unwrap();
        let mut subs = fed.local_training(1).unwrap();
        subs[1]
            .1
            .get_mut(TOY_SLOT)
            .unwrap()
            .b_factor_mut()
            .data_mut()[0] = f64::NAN;
        let before = fed.start_adapter().clone();
        match fed.apply_submissions(1, &subs) {
            Err(Error::PoisonedRound {
                client, rejection, ..
            }) => {
                assert_eq!(client, "c1");
                assert_eq!(rejection.reason, RejectionReason::NonFinite);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(&before, fed.start_adapter());
        assert_eq!(fed.aggregations(), 0);
    }

    #[test]
    fn submission_validation() {
        let good = AdapterSet::single(new_adapter(8, 8, 4, 16.0, 1).unwrap());
        let manifest = SubmissionManifest::for_set(&good);
        assert!(validate_submission(&good, &manifest).is_ok());

        let low = AdapterSet::single(new_adapter(8, 8, 2, 16.0, 1).unwrap());
        assert_eq!(
            validate_submission(&low, &manifest).unwrap_err().reason,
            RejectionReason::Rank
        );

        let wide = AdapterSet::single(new_adapter(8, 6, 4, 16.0, 1).unwrap());
        assert_eq!(
            validate_submission(&wide, &manifest).unwrap_err().reason,
            RejectionReason::Shape
        );

        let other = AdapterSet::single(new_adapter(8, 8, 4, 16.0, 1).unwrap().with_name("q"));
        let err = validate_submission(&other, &manifest).unwrap_err();
        assert_eq!(
            (err.reason, err.slot.as_str()),
            (RejectionReason::Missing, "weight")
        );

        let mut big = good.clone();
        big.get_mut("weight").unwrap().b_factor_mut().data_mut()[3] = 2e6;
        assert_eq!(
            validate_submission(&big, &manifest).unwrap_err().reason,
            RejectionReason::Norm
        );

        let mut nan = good;
        nan.get_mut("weight").unwrap().a_factor_mut().data_mut()[0] = f64::NAN;
        let err = validate_submission(&nan, &manifest).unwrap_err();
        assert_eq!(err.reason.as_str(), "non-finite");
    }

    #[test]
    fn majority_rule() {
        // round 8 wins three metrics, round 3 wins one
        let mut scores = vec![vec![0.1; 4]; 10];
        scores[8] = vec![0.9, 0.9, 0.9, 0.2];
        scores[3] = vec![0.5, 0.5, 0.5, 0.95];
        assert_eq!(best_by_majority(&scores).unwrap(), 8);
        assert_eq!(best_by_majority(&[vec![0.3, 0.2]]).unwrap(), 0);
        assert_eq!(
            best_by_majority(&[vec![0.3, 0.2], vec![0.3, 0.2]]).unwrap(),
            0
        );
        // two rounds with two wins each: earliest
        assert_eq!(
            best_by_majority(&[vec![0.1, 0.1, 0.9, 0.9], vec![0.9, 0.9, 0.1, 0.1]]).unwrap(),
            0
        );
        assert!(best_by_majority(&[]).is_err());
        assert!(select_best_round(&[]).is_err());
    }

    #[test]
    fn seeds_differ_per_stream() {
        assert_ne!(mix_seed(1, 1, 0), mix_seed(1, 0, 1));
        assert_ne!(mix_seed(1, 0, 0), mix_seed(2, 0, 0));
    }
}
