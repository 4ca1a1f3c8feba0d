use std::time::Duration;

use fedxlat_core::adapters::Checksum;
use reqwest::header::{AUTHORIZATION, CONTENT_TYPE};

use crate::error::CoordinatorError;
use crate::server::{CreatedSession, RegisterRequest};
use crate::session::{Registration, SessionManifest, SessionStatus, SubmitOutcome};
use crate::CHECKSUM_HEADER;

#[derive(Debug, Clone, PartialEq)]
pub enum AggregateReply {
    Ready { bytes: Vec<u8>, checksum: Checksum },
    Pending,
}

/// Thin async client for the coordinator's HTTP interface.
#[derive(Debug, Clone)]
pub struct CoordinatorClient {
    http: reqwest::Client,
    base: String,
}

fn transport(e: reqwest::Error) -> CoordinatorError {
    CoordinatorError::Transport(e.to_string())
}

async fn into_result(resp: reqwest::Response) -> Result<(u16, Vec<u8>), CoordinatorError> {
    let status = resp.status().as_u16();
    let body = resp.bytes().await.map_err(transport)?.to_vec();
    if status >= 400 {
        return Err(CoordinatorError::from_response(status, &body));
    }
    Ok((status, body))
}

fn decode<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, CoordinatorError> {
    serde_json::from_slice(body)
        .map_err(|e| CoordinatorError::Transport(format!("bad response body: {e}")))
}

impl CoordinatorClient {
    /// `base` is e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            http: reqwest::Client::new(),
            base: base.into().trim_end_matches('/').to_string(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/v1/sessions{path}", self.base)
    }

    pub async fn create_session(
        &self,
        manifest: &SessionManifest,
    ) -> Result<String, CoordinatorError> {
        let resp = self
            .http
            .post(self.url(""))
            .header(CONTENT_TYPE, "application/json")
            .body(serde_json::to_vec(manifest).expect("manifest serialises"))
            .send()
            .await
            .map_err(transport)?;
        let (_, body) = into_result(resp).await?;
        Ok(decode::<CreatedSession>(&body)?.session_id)
    }

    pub async fn register(
        &self,
        session: &str,
        name: &str,
    ) -> Result<Registration, CoordinatorError> {
        let body = serde_json::to_vec(&RegisterRequest {
            name: name.to_string(),
        })
        .expect("serialises");
        let resp = self
            .http
            .post(self.url(&format!("/{session}/register")))
            .header(CONTENT_TYPE, "application/json")
            .body(body)
            .send()
            .await
            .map_err(transport)?;
        decode(&into_result(resp).await?.1)
    }

    /// Uploads FLAD bytes with an explicitly declared checksum.
    pub async fn submit_with_checksum(
        &self,
        session: &str,
        round: usize,
        reg: &Registration,
        bytes: Vec<u8>,
        declared: &str,
    ) -> Result<SubmitOutcome, CoordinatorError> {
        let resp = self
            .http
            .put(self.url(&format!(
                "/{session}/rounds/{round}/adapters/{}",
                reg.client_id
            )))
            .header(AUTHORIZATION, format!("Bearer {}", reg.token))
            .header(CHECKSUM_HEADER, declared)
            .header(CONTENT_TYPE, "application/octet-stream")
            .body(bytes)
            .send()
            .await
            .map_err(transport)?;
        decode(&into_result(resp).await?.1)
    }

    pub async fn submit(
        &self,
        session: &str,
        round: usize,
        reg: &Registration,
        bytes: Vec<u8>,
    ) -> Result<SubmitOutcome, CoordinatorError> {
        let declared = Checksum::of(&bytes).to_hex();
        self.submit_with_checksum(session, round, reg, bytes, &declared)
            .await
    }

    pub async fn aggregate(
        &self,
        session: &str,
        round: usize,
        token: &str,
    ) -> Result<AggregateReply, CoordinatorError> {
        let resp = self
            .http
            .get(self.url(&format!("/{session}/rounds/{round}/aggregate")))
            .header(AUTHORIZATION, format!("Bearer {token}"))
            .send()
            .await
            .map_err(transport)?;
        let declared = resp
            .headers()
            .get(CHECKSUM_HEADER)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        let (status, bytes) = into_result(resp).await?;
        if status == 202 {
            return Ok(AggregateReply::Pending);
        }
        let checksum = Checksum::of(&bytes);
        match declared.map(|d| d.parse::<Checksum>()) {
            Some(Ok(d)) if d == checksum => Ok(AggregateReply::Ready { bytes, checksum }),
            _ => Err(CoordinatorError::Transport(
                "aggregate checksum header missing or wrong".into(),
            )),
        }
    }

    /// Polls until the aggregate is ready or `timeout` elapses.
    pub async fn wait_aggregate(
        &self,
        session: &str,
        round: usize,
        token: &str,
        timeout: Duration,
    ) -> Result<(Vec<u8>, Checksum), CoordinatorError> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            if let AggregateReply::Ready { bytes, checksum } =
                self.aggregate(session, round, token).await?
            {
                return Ok((bytes, checksum));
            }
            if tokio::time::Instant::now() >= deadline {
                return Err(CoordinatorError::Transport(format!(
                    "round {round} still pending after {timeout:?}"
                )));
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
    }

    pub async fn status(&self, session: &str) -> Result<SessionStatus, CoordinatorError> {
        let resp = self
            .http
            .get(self.url(&format!("/{session}/status")))
            .send()
            .await
            .map_err(transport)?;
        decode(&into_result(resp).await?.1)
    }
}
