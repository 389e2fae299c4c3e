use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use fogforge_core::enumerate::OptionProblem;
use fogforge_core::pipeline::PipelineError;
use fogforge_core::simulator::SimError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{message}")]
    Invalid {
        message: String,
        problems: Vec<OptionProblem>,
    },
    #[error("{0}")]
    Internal(String),
}

#[derive(Serialize)]
struct Body<'a> {
    error: &'a str,
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    problems: &'a [OptionProblem],
}

impl ApiError {
    pub fn invalid(message: impl ToString) -> Self {
        ApiError::Invalid {
            message: message.to_string(),
            problems: Vec::new(),
        }
    }

    pub fn internal(e: impl ToString) -> Self {
        ApiError::Internal(e.to_string())
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Invalid { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<SimError> for ApiError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidOption(inv) => ApiError::Invalid {
                message: inv.to_string(),
                problems: inv.problems,
            },
            e => ApiError::invalid(e),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Stage { source, .. } => (*source).into(),
            PipelineError::UnknownOption(_) | PipelineError::MissingArtifact(_) => ApiError::NotFound(e.to_string()),
            PipelineError::Simulation(s) => s.into(),
            PipelineError::Io { .. } | PipelineError::Emulation(_) => ApiError::internal(e),
            e => ApiError::invalid(e),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (message, problems) = match &self {
            ApiError::Invalid { message, problems } => (message.as_str(), problems.as_slice()),
            ApiError::NotFound(m) | ApiError::Conflict(m) | ApiError::Internal(m) => (m.as_str(), &[][..]),
        };
        let body = Json(Body {
            error: message,
            problems,
        });
        (self.status(), body).into_response()
    }
}
