use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use fedxlat_core::adapters::{
    read_adapter_bytes_unvalidated, write_adapter_bytes, AdapterSet, Checksum,
};
use fedxlat_core::aggregation::{aggregate_sets, AggregationConfig, AggregationMethod};
use fedxlat_core::federation::{validate_submission, SubmissionManifest, DEFAULT_NORM_BOUND};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::CoordinatorError;

pub const DEFAULT_TIMEOUT_SECS: u64 = 600;

fn default_norm_bound() -> f64 {
    DEFAULT_NORM_BOUND
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_SECS
}

/// Fixed at session creation; every submission is checked against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub slots: BTreeMap<String, (usize, usize)>,
    pub rank: usize,
    pub alpha: f64,
    pub method: AggregationMethod,
    pub clients: usize,
    pub rounds: usize,
    #[serde(default = "default_norm_bound")]
    pub norm_bound: f64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl SessionManifest {
    pub fn validate(&self) -> Result<(), CoordinatorError> {
        let bad = |m: &str| Err(CoordinatorError::BadRequest(m.to_string()));
        if self.slots.is_empty() {
            return bad("manifest lists no slots");
        }
        if self.rank == 0 || self.clients == 0 || self.rounds == 0 {
            return bad("rank, clients and rounds must be >= 1");
        }
        if self.slots.values().any(|&(m, n)| m == 0 || n == 0) {
            return bad("slot shapes must be non-empty");
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if !(self.norm_bound > 0.0) {
            return bad("norm_bound must be positive");
        }
        self.aggregation()
            .validate()
            .map_err(|e| CoordinatorError::BadRequest(e.to_string()))
    }

    pub fn aggregation(&self) -> AggregationConfig {
        AggregationConfig {
            method: self.method,
            client_weights: self.weights.clone(),
            clients: self.clients,
        }
    }

    pub fn submission(&self) -> SubmissionManifest {
        SubmissionManifest {
            slots: self.slots.clone(),
            rank: self.rank,
            alpha: Some(self.alpha),
            norm_bound: self.norm_bound,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundStatus {
    Collecting,
    Aggregated,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registration {
    pub client_id: String,
    pub token: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub round: usize,
    /// This upload completed the round and triggered aggregation.
    pub aggregated: bool,
}

#[derive(Debug)]
struct Client {
    name: String,
    id: String,
    token: String,
}

#[derive(Debug)]
struct Round {
    status: RoundStatus,
    /// Keyed by client index, so aggregation order is registration order.
    accepted: BTreeMap<usize, (Checksum, AdapterSet)>,
    aggregate: Option<(Vec<u8>, Checksum)>,
    aggregations: usize,
    abort_reason: Option<String>,
    opened: Instant,
}

impl Round {
    fn open() -> Self {
        Self {
            status: RoundStatus::Collecting,
            accepted: BTreeMap::new(),
            aggregate: None,
            aggregations: 0,
            abort_reason: None,
            opened: Instant::now(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub status: RoundStatus,
    /// Client id to checksum of the accepted upload.
    pub submissions: BTreeMap<String, Checksum>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate_checksum: Option<Checksum>,
    pub aggregations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub session_id: String,
    pub manifest: SessionManifest,
    pub registered: Vec<String>,
    /// 0 while registration is open; rounds are numbered from 1.
    pub current_round: usize,
    pub finished: bool,
    pub rounds: Vec<RoundSummary>,
}

/// One federation's state machine. Callers serialise access.
#[derive(Debug)]
pub struct Session {
    id: String,
    manifest: SessionManifest,
    clients: Vec<Client>,
    rounds: BTreeMap<usize, Round>,
    current: usize,
}

fn random_token() -> String {
    hex::encode(rand::rng().random::<[u8; 32]>())
}

impl Session {
    pub fn new(id: impl Into<String>, manifest: SessionManifest) -> Result<Self, CoordinatorError> {
        manifest.validate()?;
        Ok(Self {
            id: id.into(),
            manifest,
            clients: Vec::new(),
            rounds: BTreeMap::new(),
            current: 0,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn manifest(&self) -> &SessionManifest {
        &self.manifest
    }

    pub fn current_round(&self) -> usize {
        self.current
    }

    pub fn register(&mut self, name: &str) -> Result<Registration, CoordinatorError> {
        if name.is_empty() {
            return Err(CoordinatorError::BadRequest("client name is empty".into()));
        }
        if self.clients.len() >= self.manifest.clients {
            return Err(CoordinatorError::Conflict(format!(
                "session already has {} clients",
                self.manifest.clients
            )));
        }
        if self.clients.iter().any(|c| c.name == name) {
            return Err(CoordinatorError::Conflict(format!(
                "name '{name}' already registered"
            )));
        }
        let client = Client {
            name: name.to_string(),
            id: format!("c{}", self.clients.len()),
            token: random_token(),
        };
        let reg = Registration {
            client_id: client.id.clone(),
            token: client.token.clone(),
        };
        self.clients.push(client);
        if self.clients.len() == self.manifest.clients {
            self.current = 1;
            self.rounds.insert(1, Round::open());
        }
        Ok(reg)
    }

    fn client_index(&self, client_id: &str, token: &str) -> Result<usize, CoordinatorError> {
        let idx = self
            .clients
            .iter()
            .position(|c| c.id == client_id)
            .ok_or_else(|| CoordinatorError::NotFound(format!("client '{client_id}'")))?;
        if self.clients[idx].token != token {
            return Err(CoordinatorError::Unauthorized);
        }
        Ok(idx)
    }

    /// Any registered client's token.
    pub fn authorize(&self, token: &str) -> Result<(), CoordinatorError> {
        if self.clients.iter().any(|c| c.token == token) {
            Ok(())
        } else {
            Err(CoordinatorError::Unauthorized)
        }
    }

    pub fn finished(&self) -> bool {
        self.rounds
            .get(&self.current)
            .is_some_and(|r| r.status != RoundStatus::Collecting)
    }

    /// Aborts the open round if it has collected for longer than the timeout.
    pub fn check_timeout(&mut self, now: Instant) -> bool {
        let limit = Duration::from_secs(self.manifest.timeout_secs);
        match self.rounds.get_mut(&self.current) {
            Some(r)
                if r.status == RoundStatus::Collecting && now.duration_since(r.opened) >= limit =>
            {
                r.status = RoundStatus::Aborted;
                r.abort_reason = Some(format!(
                    "timeout: {} of {} clients submitted",
                    r.accepted.len(),
                    self.manifest.clients
                ));
                r.accepted.clear();
                true
            }
            _ => false,
        }
    }

    fn abort(&mut self, round: usize, reason: String) {
        if let Some(r) = self.rounds.get_mut(&round) {
            r.status = RoundStatus::Aborted;
            r.abort_reason = Some(reason);
            r.accepted.clear();
        }
    }

    pub fn submit(
        &mut self,
        client_id: &str,
        token: &str,
        round: usize,
        bytes: &[u8],
        declared: &str,
    ) -> Result<SubmitOutcome, CoordinatorError> {
        let idx = self.client_index(client_id, token)?;
        if self.current == 0 {
            return Err(CoordinatorError::Conflict(
                "registration is still open".into(),
            ));
        }
        self.check_timeout(Instant::now());
        if round != self.current {
            if self
                .rounds
                .get(&round)
                .is_some_and(|r| r.status == RoundStatus::Aborted)
            {
                return Err(CoordinatorError::Gone(format!("round {round} was aborted")));
            }
            return Err(CoordinatorError::StaleRound {
                current: self.current,
                requested: round,
            });
        }
        let state = &self.rounds[&round];
        match state.status {
            RoundStatus::Aborted => {
                return Err(CoordinatorError::Gone(format!(
                    "round {round} was aborted: {}",
                    state.abort_reason.as_deref().unwrap_or("unknown")
                )))
            }
            RoundStatus::Aggregated => {
                return Err(CoordinatorError::Conflict(format!(
                    "round {round} is already aggregated"
                )))
            }
            RoundStatus::Collecting => {}
        }
        if state.accepted.contains_key(&idx) {
            return Err(CoordinatorError::Conflict(format!(
                "client '{client_id}' already submitted for round {round}"
            )));
        }

        let checksum = Checksum::of(bytes);
        let declared: Checksum =
            declared
                .trim()
                .parse()
                .map_err(|_| CoordinatorError::Rejected {
                    reason: "checksum".into(),
                    detail: "declared checksum is not a SHA-256 hex string".into(),
                })?;
        if declared != checksum {
            // A corrupted transfer; the client may retry.
            return Err(CoordinatorError::Rejected {
                reason: "checksum".into(),
                detail: format!("body hashes to {checksum}, declared {declared}"),
            });
        }
        let set = match read_adapter_bytes_unvalidated(bytes) {
            Ok(set) => set,
            Err(e) => {
                let detail = e.to_string();
                self.abort(round, format!("client '{client_id}': {detail}"));
                return Err(CoordinatorError::Rejected {
                    reason: "format".into(),
                    detail,
                });
            }
        };
        if let Err(rejection) = validate_submission(&set, &self.manifest.submission()) {
            self.abort(round, format!("client '{client_id}': {rejection}"));
            return Err(CoordinatorError::Rejected {
                reason: rejection.reason.as_str().to_string(),
                detail: rejection.to_string(),
            });
        }

        let state = self.rounds.get_mut(&round).expect("current round exists");
        state.accepted.insert(idx, (checksum, set));
        if state.accepted.len() < self.manifest.clients {
            return Ok(SubmitOutcome {
                round,
                aggregated: false,
            });
        }
        self.aggregate_round(round)?;
        Ok(SubmitOutcome {
            round,
            aggregated: true,
        })
    }

    fn aggregate_round(&mut self, round: usize) -> Result<(), CoordinatorError> {
        let config = self.manifest.aggregation();
        let state = self.rounds.get_mut(&round).expect("round exists");
        debug_assert_eq!(state.status, RoundStatus::Collecting);
        let sets: Vec<AdapterSet> = state.accepted.values().map(|(_, s)| s.clone()).collect();
        match aggregate_sets(&sets, &config) {
            Ok(agg) => {
                let bytes = write_adapter_bytes(&agg);
                let sum = Checksum::of(&bytes);
                state.aggregate = Some((bytes, sum));
                state.aggregations += 1;
                state.status = RoundStatus::Aggregated;
                log::info!("session {} round {round} aggregated ({sum})", self.id);
            }
            Err(e) => {
                self.abort(round, format!("aggregation failed: {e}"));
                return Err(CoordinatorError::Rejected {
                    reason: "aggregation".into(),
                    detail: e.to_string(),
                });
            }
        }
        if round < self.manifest.rounds {
            self.current = round + 1;
            self.rounds.insert(self.current, Round::open());
        }
        Ok(())
    }

    /// `Ok(None)` while the round is still collecting.
    pub fn aggregate(
        &mut self,
        round: usize,
    ) -> Result<Option<(Vec<u8>, Checksum)>, CoordinatorError> {
        self.check_timeout(Instant::now());
        let state = self
            .rounds
            .get(&round)
            .ok_or_else(|| CoordinatorError::NotFound(format!("round {round} has not started")))?;
        match state.status {
            RoundStatus::Collecting => Ok(None),
            RoundStatus::Aggregated => Ok(state.aggregate.clone()),
            RoundStatus::Aborted => Err(CoordinatorError::Gone(format!(
                "round {round} was aborted: {}",
                state.abort_reason.as_deref().unwrap_or("unknown")
            ))),
        }
    }

    pub fn status(&mut self) -> SessionStatus {
        self.check_timeout(Instant::now());
        SessionStatus {
            session_id: self.id.clone(),
            manifest: self.manifest.clone(),
            registered: self.clients.iter().map(|c| c.id.clone()).collect(),
            current_round: self.current,
            finished: self.finished(),
            rounds: self
                .rounds
                .iter()
                .map(|(&round, r)| RoundSummary {
                    round,
                    status: r.status,
                    submissions: r
                        .accepted
                        .iter()
                        .map(|(&i, (sum, _))| (self.clients[i].id.clone(), *sum))
                        .collect(),
                    aggregate_checksum: r.aggregate.as_ref().map(|(_, s)| *s),
                    aggregations: r.aggregations,
                    abort_reason: r.abort_reason.clone(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use fedxlat_core::adapters::new_adapter;

    fn manifest(clients: usize, rounds: usize) -> SessionManifest {
        SessionManifest {
            slots: [("q".to_string(), (4, 3))].into(),
            rank: 2,
            alpha: 16.0,
            method: AggregationMethod::FedAvg,
            clients,
            rounds,
            norm_bound: DEFAULT_NORM_BOUND,
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            weights: None,
        }
    }

    fn upload(seed: u64) -> Vec<u8> {
        let mut a = new_adapter(4, 3, 2, 16.0, seed).unwrap().with_name("q");
        a.b_factor_mut().data_mut()[0] = seed as f64;
        write_adapter_bytes(&AdapterSet::single(a))
    }

    fn sum(bytes: &[u8]) -> String {
        Checksum::of(bytes).to_hex()
    }

    #[test]
    fn registration_rules() {
        let mut s = Session::new("s", manifest(2, 1)).unwrap();
        assert_eq!(s.register("alice").unwrap().client_id, "c0");
        assert!(matches!(
            s.register("alice"),
            Err(CoordinatorError::Conflict(_))
        ));
        assert_eq!(s.register("bob").unwrap().client_id, "c1");
        assert!(matches!(
            s.register("carol"),
            Err(CoordinatorError::Conflict(_))
        ));
        assert_eq!(s.current_round(), 1);
    }

    #[test]
    fn round_flow_and_pending() {
        let mut s = Session::new("s", manifest(2, 2)).unwrap();
        let a = s.register("a").unwrap();
        let b = s.register("b").unwrap();
        let (ua, ub) = (upload(1), upload(2));
        assert_eq!(s.aggregate(1).unwrap(), None);
        assert!(
            !s.submit(&a.client_id, &a.token, 1, &ua, &sum(&ua))
                .unwrap()
                .aggregated
        );
        assert!(matches!(
            s.submit(&a.client_id, &a.token, 1, &ua, &sum(&ua)),
            Err(CoordinatorError::Conflict(_))
        ));
        assert!(matches!(
            s.submit(&b.client_id, &a.token, 1, &ub, &sum(&ub)),
            Err(CoordinatorError::Unauthorized)
        ));
        assert!(matches!(
            s.submit(&b.client_id, &b.token, 2, &ub, &sum(&ub)),
            Err(CoordinatorError::StaleRound {
                current: 1,
                requested: 2
            })
        ));
        assert!(
            s.submit(&b.client_id, &b.token, 1, &ub, &sum(&ub))
                .unwrap()
                .aggregated
        );
        let (bytes, checksum) = s.aggregate(1).unwrap().unwrap();
        assert_eq!(checksum, Checksum::of(&bytes));
        assert_eq!(s.current_round(), 2);
        let status = s.status();
        assert_eq!(status.rounds[0].aggregations, 1);
        assert!(!status.finished);
    }

    #[test]
    fn checksum_mismatch_allows_retry() {
        let mut s = Session::new("s", manifest(1, 1)).unwrap();
        let a = s.register("a").unwrap();
        let good = upload(3);
        let mut bad = good.clone();
        let last = bad.len() - 1;
        bad[last] ^= 1;
        match s.submit(&a.client_id, &a.token, 1, &bad, &sum(&good)) {
            Err(CoordinatorError::Rejected { reason, .. }) => assert_eq!(reason, "checksum"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(
            s.submit(&a.client_id, &a.token, 1, &good, &sum(&good))
                .unwrap()
                .aggregated
        );
        assert!(s.finished());
    }

    #[test]
    fn nan_aborts_round() {
        let mut s = Session::new("s", manifest(2, 3)).unwrap();
        let a = s.register("a").unwrap();
        let b = s.register("b").unwrap();
        let good = upload(1);
        s.submit(&a.client_id, &a.token, 1, &good, &sum(&good))
            .unwrap();
        let mut poisoned = new_adapter(4, 3, 2, 16.0, 5).unwrap().with_name("q");
        poisoned.b_factor_mut().data_mut()[2] = f64::NAN;
        let bytes = write_adapter_bytes(&AdapterSet::single(poisoned));
        match s.submit(&b.client_id, &b.token, 1, &bytes, &sum(&bytes)) {
            Err(CoordinatorError::Rejected { reason, .. }) => assert_eq!(reason, "non-finite"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(s.aggregate(1), Err(CoordinatorError::Gone(_))));
        let status = s.status();
        assert_eq!(status.rounds[0].aggregations, 0);
        assert!(status.rounds[0].submissions.is_empty());
        assert!(matches!(
            s.submit(&b.client_id, &b.token, 1, &good, &sum(&good)),
            Err(CoordinatorError::Gone(_))
        ));
    }

    #[test]
    fn manifest_violations_are_named() {
        let mut s = Session::new("s", manifest(1, 1)).unwrap();
        let a = s.register("a").unwrap();
        let wrong = write_adapter_bytes(&AdapterSet::single(
            new_adapter(4, 3, 1, 16.0, 0).unwrap().with_name("q"),
        ));
        match s.submit(&a.client_id, &a.token, 1, &wrong, &sum(&wrong)) {
            Err(CoordinatorError::Rejected { reason, .. }) => assert_eq!(reason, "rank"),
            other => panic!("unexpected {other:?}"),
        }
        let mut s = Session::new("s", manifest(1, 1)).unwrap();
        let a = s.register("a").unwrap();
        let junk = b"not a flad file".to_vec();
        match s.submit(&a.client_id, &a.token, 1, &junk, &sum(&junk)) {
            Err(CoordinatorError::Rejected { reason, .. }) => assert_eq!(reason, "format"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn timeout_aborts() {
        let mut m = manifest(2, 1);
        m.timeout_secs = 0;
        let mut s = Session::new("s", m).unwrap();
        s.register("a").unwrap();
        s.register("b").unwrap();
        assert!(s.check_timeout(Instant::now()));
        assert!(matches!(s.aggregate(1), Err(CoordinatorError::Gone(_))));
    }

    #[test]
    fn invalid_manifest() {
        let mut m = manifest(2, 1);
        m.rank = 0;
        assert!(Session::new("s", m).is_err());
        let mut m = manifest(2, 1);
        m.weights = Some(vec![0.5, 0.6]);
        assert!(Session::new("s", m).is_err());
    }
}
