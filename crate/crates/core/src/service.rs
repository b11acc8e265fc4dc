//! JSON-over-HTTP API under `/api/v1`.
//!
//! All handlers read shared, immutable state. Errors are returned as
//! `{code, message, detail}` with a 4xx status for caller mistakes and 500
//! otherwise.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Request, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use crate::data::{ConceptDataset, ConceptKind, OracleKind, Split};
use crate::error::{Error, Result};
use crate::intervention::{apply_interventions, OracleSource};
use crate::masking::Mask;
use crate::model::{Evaluation, MaskAssignment, OutputModel, Prediction};
use crate::selection::{select, Level, Method, SelectionRequest, SelectionTrace};

/// Everything the handlers need. Built once; never mutated.
pub struct ServiceState {
    model: OutputModel,
    dataset: ConceptDataset,
    checkpoint_sha256: String,
    class_oracle: Option<OracleSource>,
    soft_oracle: Option<OracleSource>,
}

impl ServiceState {
    pub fn new(model: OutputModel, dataset: ConceptDataset) -> Result<Self> {
        model.ensure_compatible(dataset.schema())?;
        Ok(Self {
            checkpoint_sha256: model.content_hash()?,
            class_oracle: OracleSource::new(OracleKind::ClassLevel, &dataset).ok(),
            soft_oracle: OracleSource::new(OracleKind::Soft, &dataset).ok(),
            model,
            dataset,
        })
    }

    pub fn model(&self) -> &OutputModel {
        &self.model
    }

    pub fn dataset(&self) -> &ConceptDataset {
        &self.dataset
    }

    pub fn checkpoint_sha256(&self) -> &str {
        &self.checkpoint_sha256
    }

    fn oracle(&self, kind: OracleKind) -> Result<&OracleSource> {
        match kind {
            OracleKind::ClassLevel => self.class_oracle.as_ref(),
            OracleKind::Soft => self.soft_oracle.as_ref(),
        }
        .ok_or_else(|| Error::Oracle(format!("the {kind} oracle is unavailable for this dataset")))
    }

    fn instance(&self, id: &str) -> Result<usize> {
        self.dataset
            .resolve_instance(id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown instance `{id}`")))
    }

    fn group(&self, g: &GroupRef) -> Result<usize> {
        let schema = self.dataset.schema();
        match g {
            GroupRef::Index(i) if *i < schema.num_groups() => Ok(*i),
            GroupRef::Index(i) => Err(Error::InvalidInput(format!("group index {i} out of range"))),
            GroupRef::Name(name) => schema
                .group_index(name)
                .ok_or_else(|| Error::InvalidInput(format!("unknown concept group `{name}`"))),
        }
    }

    fn groups(&self, refs: &[GroupRef]) -> Result<Vec<usize>> {
        refs.iter().map(|g| self.group(g)).collect()
    }

    fn check_mask(&self, mask: &Mask) -> Result<()> {
        let n = self.model.num_groups();
        if mask.len() != n {
            return Err(Error::Shape(format!("mask has length {}, expected {n}", mask.len())));
        }
        Ok(())
    }

    pub fn meta(&self) -> MetaResponse {
        let schema = self.dataset.schema();
        MetaResponse {
            groups: schema
                .groups
                .iter()
                .map(|g| GroupMeta {
                    name: g.name.clone(),
                    dims: g.dims,
                    kind: g.kind,
                })
                .collect(),
            num_classes: schema.num_classes,
            class_names: (0..schema.num_classes).map(|c| schema.class_name(c)).collect(),
            schema_fingerprint: self.model.schema_fingerprint.clone(),
            checkpoint_sha256: self.checkpoint_sha256.clone(),
            num_instances: self.dataset.len(),
            oracles: [OracleKind::ClassLevel, OracleKind::Soft]
                .into_iter()
                .filter(|&k| self.oracle(k).is_ok())
                .collect(),
        }
    }

    pub fn predict(&self, req: &PredictRequest) -> Result<Prediction> {
        self.check_mask(&req.mask)?;
        match (&req.concepts, &req.instance) {
            (Some(c), None) => self.model.predict(c, &req.mask),
            (None, Some(id)) => {
                let r = self.instance(id)?;
                self.model.predict(self.dataset.row(r), &req.mask)
            }
            _ => Err(Error::InvalidInput("give exactly one of `concepts` and `instance`".into())),
        }
    }

    pub fn select(&self, req: &SelectRequest) -> Result<SelectResponse> {
        let mut sel = SelectionRequest::new(req.method, req.k)
            .locked(self.groups(&req.locked_in)?)
            .exclude(self.groups(&req.excluded)?)
            .seed(req.seed);
        match (req.level, &req.instance) {
            (Level::Instance, Some(id)) => sel = sel.instance(self.instance(id)?),
            (Level::Instance, None) => {
                return Err(Error::Infeasible("instance-level selection needs `instance`".into()))
            }
            (Level::Dataset, Some(_)) => {
                return Err(Error::Infeasible("`instance` is only valid at instance level".into()))
            }
            (Level::Dataset, None) => {}
        }
        let trace = select(&self.model, &self.dataset, &sel)?;
        let selected = trace.set_of_size(req.k).ok_or_else(|| {
            Error::Infeasible(format!("no set of size {} is reachable", req.k))
        })?;
        let schema = self.dataset.schema();
        Ok(SelectResponse {
            selected_names: selected.iter().map(|&g| schema.groups[g].name.clone()).collect(),
            mask: Mask::from_set(&selected, schema.num_groups())?,
            selected,
            entropy_nats: trace.entropy_at_size(req.k),
            trace,
        })
    }

    pub fn intervene(&self, req: &InterveneRequest) -> Result<InterveneResponse> {
        self.check_mask(&req.mask)?;
        let r = self.instance(&req.instance)?;
        let source = self.oracle(req.oracle)?;
        let oracle_values = source.input_values(&self.dataset, r)?;
        let base = match &req.concepts {
            Some(c) => c.clone(),
            None => self.dataset.row(r).to_vec(),
        };
        let groups = self.groups(&req.groups)?;
        let concepts = apply_interventions(&base, &req.mask, self.dataset.schema(), &oracle_values, &groups)?;
        Ok(InterveneResponse {
            before: self.model.predict(&base, &req.mask)?,
            after: self.model.predict(&concepts, &req.mask)?,
            label: self.dataset.labels()[r],
            concepts,
            oracle_values,
        })
    }

    pub fn evaluate(&self, req: &EvaluateRequest) -> Result<Evaluation> {
        self.check_mask(&req.mask)?;
        self.model.evaluate(
            &self.dataset,
            &MaskAssignment::Shared(req.mask.clone()),
            req.split,
        )
    }
}

/// A concept group given by index or by name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroupRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMeta {
    pub name: String,
    pub dims: usize,
    pub kind: ConceptKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaResponse {
    pub groups: Vec<GroupMeta>,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub schema_fingerprint: String,
    pub checkpoint_sha256: String,
    pub num_instances: usize,
    pub oracles: Vec<OracleKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    #[serde(default)]
    pub concepts: Option<Vec<f64>>,
    #[serde(default)]
    pub instance: Option<String>,
    pub mask: Mask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectRequest {
    pub k: usize,
    pub method: Method,
    #[serde(default)]
    pub level: Level,
    #[serde(default)]
    pub instance: Option<String>,
    #[serde(default)]
    pub locked_in: Vec<GroupRef>,
    #[serde(default)]
    pub excluded: Vec<GroupRef>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectResponse {
    pub selected: Vec<usize>,
    pub selected_names: Vec<String>,
    pub mask: Mask,
    pub entropy_nats: Option<f64>,
    pub trace: SelectionTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterveneRequest {
    pub instance: String,
    pub mask: Mask,
    /// Groups to replace with oracle values; may be empty.
    #[serde(default)]
    pub groups: Vec<GroupRef>,
    #[serde(default = "default_oracle")]
    pub oracle: OracleKind,
    /// Current (possibly edited) concept values; defaults to the dataset row.
    #[serde(default)]
    pub concepts: Option<Vec<f64>>,
}

fn default_oracle() -> OracleKind {
    OracleKind::ClassLevel
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterveneResponse {
    pub concepts: Vec<f64>,
    pub oracle_values: Vec<f64>,
    pub before: Prediction,
    pub after: Prediction,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateRequest {
    pub mask: Mask,
    /// `None` evaluates every row.
    #[serde(default = "default_eval_split")]
    pub split: Option<Split>,
}

fn default_eval_split() -> Option<Split> {
    Some(Split::Test)
}

/// Error body returned by every endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    pub detail: Option<String>,
    #[serde(skip)]
    status: u16,
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (code, status) = match &e {
            Error::Shape(_) => ("shape_mismatch", 400),
            Error::InvalidInput(_) => ("invalid_input", 400),
            Error::Schema(_) => ("invalid_schema", 400),
            Error::Ingest { .. } => ("ingest", 400),
            Error::Oracle(_) => ("oracle_unavailable", 409),
            Error::IncompatibleCheckpoint(_) => ("incompatible_checkpoint", 409),
            Error::Infeasible(_) => ("infeasible", 422),
            Error::UnsupportedEstimator(_) => ("unsupported_estimator", 422),
            Error::Refused(_) => ("refused", 422),
            Error::Intervention(_) => ("intervention_rejected", 422),
            Error::Config(_) => ("invalid_config", 400),
            Error::Json(_) => ("bad_json", 400),
            Error::Training(_) | Error::Io { .. } | Error::Csv(_) => ("internal", 500),
        };
        let detail = std::error::Error::source(&e).map(|s| s.to_string());
        ApiError {
            code: code.into(),
            message: e.to_string(),
            detail,
            status,
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError {
            code: "bad_request".into(),
            message: r.body_text(),
            detail: None,
            status: r.status().as_u16(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self)).into_response()
    }
}

/// `Json` extractor whose rejections use the API error body.
pub struct ApiJson<T>(pub T);

impl<S, T> FromRequest<S> for ApiJson<T>
where
    T: DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let Json(v) = Json::<T>::from_request(req, state).await?;
        Ok(ApiJson(v))
    }
}

type Shared = State<Arc<ServiceState>>;
type ApiResult<T> = Result<Json<T>, ApiError>;

async fn meta(State(s): Shared) -> Json<MetaResponse> {
    Json(s.meta())
}

async fn predict(State(s): Shared, ApiJson(req): ApiJson<PredictRequest>) -> ApiResult<Prediction> {
    Ok(Json(s.predict(&req)?))
}

async fn select_handler(State(s): Shared, ApiJson(req): ApiJson<SelectRequest>) -> ApiResult<SelectResponse> {
    let s = s.clone();
    let out = tokio::task::spawn_blocking(move || s.select(&req))
        .await
        .map_err(|e| ApiError::from(Error::Refused(e.to_string())))??;
    Ok(Json(out))
}

async fn intervene(State(s): Shared, ApiJson(req): ApiJson<InterveneRequest>) -> ApiResult<InterveneResponse> {
    Ok(Json(s.intervene(&req)?))
}

async fn evaluate(State(s): Shared, ApiJson(req): ApiJson<EvaluateRequest>) -> ApiResult<Evaluation> {
    let s = s.clone();
    let out = tokio::task::spawn_blocking(move || s.evaluate(&req))
        .await
        .map_err(|e| ApiError::from(Error::Refused(e.to_string())))??;
    Ok(Json(out))
}

async fn not_found() -> ApiError {
    ApiError {
        code: "not_found".into(),
        message: "no such endpoint".into(),
        detail: None,
        status: 404,
    }
}

/// The API router, optionally serving a static UI bundle at `/`.
pub fn router(state: Arc<ServiceState>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/meta", get(meta))
        .route("/predict", post(predict))
        .route("/select", post(select_handler))
        .route("/intervene", post(intervene))
        .route("/evaluate", post(evaluate))
        .fallback(not_found)
        .with_state(state);
    let app = Router::new().nest("/api/v1", api);
    let app = match ui_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    };
    app.layer(CorsLayer::permissive())
}

/// Binds `addr`; a busy or forbidden address is a caller error.
pub async fn bind(addr: SocketAddr) -> Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(addr.to_string(), e))
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<()> {
    let addr = listener
        .local_addr()
        .map_err(|e| Error::io("listener", e))?;
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| Error::io(addr.to_string(), e))
}
