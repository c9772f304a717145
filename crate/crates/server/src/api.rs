//! HTTP endpoints. Bodies are JSON; error bodies are
//! `{"code": ..., "message": ...}`, with `remaining` and `cost` added when a
//! batch is over budget.
//!
//! | method | path                        | auth   |
//! |--------|-----------------------------|--------|
//! | POST   | `/repartition`              | none   |
//! | POST   | `/release`                  | bearer |
//! | GET    | `/metadata/public/{dataset}`| none   |
//! | GET    | `/metadata/user/{dataset}`  | bearer |
//! | GET    | `/budget/{dataset}`         | bearer |
//! | GET    | `/health`                   | none   |

use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dprelease::budgeter::{repartition, BudgetError, LedgerError, RepartitionInput, Tier};
use dprelease::composition::BatchRejection;
use dprelease::engine::{EngineError, Registry, ReleaseBatch};
use dprelease::rng::secure_rng;
use dprelease::{PrivacyParams, StatisticRequest};
use serde::{Deserialize, Serialize};

use crate::config::{ServiceConfig, TokenGrant};

#[derive(Clone)]
pub struct AppState {
    registry: Arc<Registry>,
    tokens: Arc<HashMap<String, TokenGrant>>,
}

impl AppState {
    pub fn new(config: &ServiceConfig) -> Result<Self, EngineError> {
        let registry = Registry::new(&config.data_dir)?.with_overrides(config.access);
        Ok(AppState {
            registry: Arc::new(registry),
            tokens: Arc::new(config.tokens.clone()),
        })
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    fn grant(&self, headers: &HeaderMap, dataset: &str) -> Result<TokenGrant, ApiError> {
        let token = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or_else(|| {
                ApiError::new(
                    StatusCode::UNAUTHORIZED,
                    "unauthenticated",
                    "a bearer token is required",
                )
            })?;
        let grant = self.tokens.get(token.trim()).ok_or_else(|| {
            ApiError::new(StatusCode::UNAUTHORIZED, "unauthenticated", "unknown token")
        })?;
        if !grant.allows(dataset) {
            return Err(ApiError::new(
                StatusCode::FORBIDDEN,
                "dataset_forbidden",
                format!("this token has no access to dataset `{dataset}`"),
            ));
        }
        Ok(grant.clone())
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/repartition", post(repartition_handler))
        .route("/release", post(release_handler))
        .route("/metadata/public/{dataset}", get(public_metadata_handler))
        .route("/metadata/user/{dataset}", get(user_metadata_handler))
        .route("/budget/{dataset}", get(budget_handler))
        .with_state(state)
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    code: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    remaining: Option<PrivacyParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cost: Option<PrivacyParams>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code,
                message: message.into(),
                remaining: None,
                cost: None,
            },
        }
    }

    fn internal() -> Self {
        ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "internal",
            "internal error",
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_body",
            e.body_text(),
        )
    }
}

impl From<BudgetError> for ApiError {
    fn from(e: BudgetError) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.code(), e.to_string())
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        use StatusCode as S;
        if !e.is_user_error() {
            eprintln!("internal error: {e}");
            return ApiError::internal();
        }
        let message = e.to_string();
        match e {
            EngineError::UnknownDataset(_) => {
                ApiError::new(S::NOT_FOUND, "unknown_dataset", message)
            }
            EngineError::NoBudget(_) => ApiError::new(S::CONFLICT, "no_budget", message),
            EngineError::Budget(b) => b.into(),
            EngineError::Ledger(LedgerError::Tier(_)) => {
                ApiError::new(S::FORBIDDEN, "tier_forbidden", message)
            }
            EngineError::Ledger(LedgerError::RateLimited { .. }) => {
                ApiError::new(S::TOO_MANY_REQUESTS, "rate_limited", message)
            }
            EngineError::Ledger(LedgerError::Rejected(BatchRejection::OverBudget {
                cost,
                remaining,
            })) => {
                let mut err = ApiError::new(S::CONFLICT, "budget_exhausted", message);
                err.body.remaining = Some(remaining);
                err.body.cost = Some(cost);
                err
            }
            EngineError::Ledger(LedgerError::Rejected(BatchRejection::DuplicateBatch(_))) => {
                ApiError::new(S::CONFLICT, "duplicate_batch", message)
            }
            EngineError::Metadata(_) => {
                eprintln!("internal error: {message}");
                ApiError::internal()
            }
            EngineError::Request(_) => {
                ApiError::new(S::UNPROCESSABLE_ENTITY, "invalid_request", message)
            }
            EngineError::Mechanism(_) => {
                ApiError::new(S::UNPROCESSABLE_ENTITY, "mechanism_error", message)
            }
            _ => ApiError::new(S::UNPROCESSABLE_ENTITY, "invalid", message),
        }
    }
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|_| ApiError::internal())?
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Response, ApiError> {
    let bytes = serde_json::to_vec(value).map_err(|_| ApiError::internal())?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

/// Pure function of the body: no server state is read or written.
async fn repartition_handler(
    body: Result<Json<RepartitionInput>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(input) = body?;
    let plan = blocking(move || Ok(repartition(&input)?)).await?;
    json_bytes(&plan)
}

/// A batch for one dataset. Extra fields, such as the totals of a plan
/// returned by `/repartition`, are ignored.
#[derive(Debug, Deserialize)]
pub struct ReleaseBody {
    pub dataset: String,
    #[serde(default)]
    pub batch_id: Option<String>,
    pub requests: Vec<StatisticRequest>,
    #[serde(default)]
    pub total: Option<PrivacyParams>,
}

async fn release_handler(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Result<Json<ReleaseBody>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(body) = body?;
    let grant = state.grant(&headers, &body.dataset)?;
    let outcome = blocking(move || {
        let handle = state.registry.open(&body.dataset)?;
        let batch = ReleaseBatch {
            batch_id: body.batch_id,
            requests: body.requests,
            claimed_total: body.total,
        };
        Ok(handle.release(&grant.actor(), &batch, &mut secure_rng())?)
    })
    .await?;
    json_bytes(&outcome)
}

async fn public_metadata_handler(
    State(state): State<AppState>,
    Path(dataset): Path<String>,
) -> Result<Response, ApiError> {
    let file = blocking(move || Ok(state.registry.open(&dataset)?.public_metadata()?)).await?;
    json_bytes(&file)
}

#[derive(Debug, Deserialize)]
struct UserQuery {
    user: Option<String>,
}

async fn user_metadata_handler(
    State(state): State<AppState>,
    Path(dataset): Path<String>,
    Query(query): Query<UserQuery>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let grant = state.grant(&headers, &dataset)?;
    let user = match (grant.tier, grant.user, query.user) {
        (Tier::SemiTrusted, Some(own), Some(asked)) if own != asked => {
            return Err(ApiError::new(
                StatusCode::FORBIDDEN,
                "wrong_user",
                "you may only read your own metadata file",
            ));
        }
        (Tier::SemiTrusted, Some(own), _) => own,
        (Tier::Depositor, _, Some(asked)) => asked,
        (Tier::Depositor, _, None) => {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "invalid",
                "name the user with ?user=",
            ));
        }
        _ => {
            return Err(ApiError::new(
                StatusCode::FORBIDDEN,
                "tier_forbidden",
                "untrusted users only have the public metadata file",
            ));
        }
    };
    let file = blocking(move || Ok(state.registry.open(&dataset)?.user_metadata(&user)?)).await?;
    json_bytes(&file)
}

#[derive(Debug, Serialize)]
struct BudgetView {
    account: String,
    budget: PrivacyParams,
    remaining: PrivacyParams,
}

async fn budget_handler(
    State(state): State<AppState>,
    Path(dataset): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let actor = state.grant(&headers, &dataset)?.actor();
    let view = blocking(move || {
        let handle = state.registry.open(&dataset)?;
        let ledger = handle.ledger();
        let err = |e: LedgerError| ApiError::from(EngineError::from(e));
        Ok(BudgetView {
            account: actor.account().map_err(err)?,
            budget: ledger.account_budget(&actor).map_err(err)?,
            remaining: ledger.remaining(&actor).map_err(err)?,
        })
    })
    .await?;
    json_bytes(&view)
}

/// Binds `config.listen` and serves until interrupted.
pub async fn serve(config: ServiceConfig) -> Result<(), Box<dyn std::error::Error>> {
    let state = AppState::new(&config)?;
    let listener = tokio::net::TcpListener::bind(&config.listen).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
