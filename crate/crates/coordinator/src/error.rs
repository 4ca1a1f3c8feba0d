use serde::{Deserialize, Serialize};

/// Every failure the coordinator reports, with its HTTP status.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoordinatorError {
    #[error("not found: {0}")]
    NotFound(String),

    #[error("missing or invalid bearer token")]
    Unauthorized,

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("stale round: session is at round {current}, got {requested}")]
    StaleRound { current: usize, requested: usize },

    #[error("rejected ({reason}): {detail}")]
    Rejected { reason: String, detail: String },

    #[error("gone: {0}")]
    Gone(String),

    #[error("bad request: {0}")]
    BadRequest(String),

    #[error("transport: {0}")]
    Transport(String),
}

/// JSON body of every non-success response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub detail: String,
}

impl CoordinatorError {
    pub fn status(&self) -> u16 {
        match self {
            CoordinatorError::NotFound(_) => 404,
            CoordinatorError::Unauthorized => 401,
            CoordinatorError::Conflict(_) | CoordinatorError::StaleRound { .. } => 409,
            CoordinatorError::Rejected { .. } => 422,
            CoordinatorError::Gone(_) => 410,
            CoordinatorError::BadRequest(_) => 400,
            CoordinatorError::Transport(_) => 502,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CoordinatorError::NotFound(_) => "not-found",
            CoordinatorError::Unauthorized => "unauthorized",
            CoordinatorError::Conflict(_) => "conflict",
            CoordinatorError::StaleRound { .. } => "stale-round",
            CoordinatorError::Rejected { .. } => "rejected",
            CoordinatorError::Gone(_) => "gone",
            CoordinatorError::BadRequest(_) => "bad-request",
            CoordinatorError::Transport(_) => "transport",
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            error: self.kind().to_string(),
            reason: match self {
                CoordinatorError::Rejected { reason, .. } => Some(reason.clone()),
                _ => None,
            },
            detail: self.to_string(),
        }
    }

    /// Rebuilds the error a server sent back.
    pub fn from_response(status: u16, body: &[u8]) -> Self {
        let parsed: Option<ErrorBody> = serde_json::from_slice(body).ok();
        let detail = parsed
            .as_ref()
            .map(|b| b.detail.clone())
            .unwrap_or_else(|| String::from_utf8_lossy(body).into_owned());
        match (status, parsed) {
            (401, _) => CoordinatorError::Unauthorized,
            (404, _) => CoordinatorError::NotFound(detail),
            (410, _) => CoordinatorError::Gone(detail),
            (422, Some(b)) => CoordinatorError::Rejected {
                reason: b.reason.unwrap_or_default(),
                detail,
            },
            (409, _) => CoordinatorError::Conflict(detail),
            (400, _) => CoordinatorError::BadRequest(detail),
            (s, _) => CoordinatorError::Transport(format!("HTTP {s}: {detail}")),
        }
    }
}
