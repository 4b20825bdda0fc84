//! HTTP inference service: prediction with parent-level interventions.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hulp_core::data::Cohort;
use hulp_core::model::UNKNOWN;
use hulp_core::survival::median_survival_time;
use hulp_core::{ConceptSchema, HulpModel, InterventionMask, Matrix, SurvivalCurve};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::checkpoint::{ensure_schema, CheckpointError};

/// Immutable state shared by all requests.
pub struct AppState {
    model: HulpModel,
    version: String,
    cohort: Option<Cohort>,
    index: HashMap<String, usize>,
}

impl AppState {
    /// `cohort`, when given, must share the model's schema and signal width.
    pub fn new(model: HulpModel, version: String, cohort: Option<Cohort>) -> Result<Self, CheckpointError> {
        let mut index = HashMap::new();
        if let Some(c) = &cohort {
            ensure_schema(&model, c.schema())?;
            if c.signal_dim() != model.signal_dim() {
                return Err(CheckpointError::Model(hulp_core::Error::Contract(format!(
                    "served cohort has signal width {}, model expects {}",
                    c.signal_dim(),
                    model.signal_dim()
                ))));
            }
            for (i, r) in c.records().iter().enumerate() {
                index.insert(r.id.clone(), i);
            }
        }
        Ok(Self {
            model,
            version,
            cohort,
            index,
        })
    }

    pub fn model(&self) -> &HulpModel {
        &self.model
    }

    pub fn version(&self) -> &str {
        &self.version
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<String>,
}

impl ApiError {
    fn bad_request(field: &str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
            field: Some(field.into()),
        }
    }

    fn internal() -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: "internal error".into(),
            field: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(f) = self.field {
            body["field"] = Value::String(f);
        }
        (self.status, Json(body)).into_response()
    }
}

#[derive(Debug, Clone)]
pub struct PredictRequest {
    pub input: PredictInput,
    /// Parent name to label or `"unknown"`, in request order.
    pub interventions: Vec<(String, String)>,
    pub include_baseline: bool,
}

#[derive(Debug, Clone)]
pub enum PredictInput {
    Signal(Vec<f64>),
    PatientId(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConceptProbability {
    pub parent: String,
    pub label: String,
    pub probability: f64,
    pub forced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveBody {
    pub hazards: Vec<f64>,
    /// `(bin upper edge, survival)` pairs.
    pub survival: Vec<(f64, f64)>,
    pub median_survival: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelInfo {
    pub name: &'static str,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictResponse {
    pub concept_probs: Vec<ConceptProbability>,
    pub hazards: Vec<f64>,
    pub survival: Vec<(f64, f64)>,
    pub median_survival: Option<f64>,
    pub baseline: Option<CurveBody>,
    pub model: ModelInfo,
}

/// Validates the JSON shape of a request; labels are checked against the
/// schema separately.
pub fn parse_predict_request(body: &[u8]) -> Result<PredictRequest, ApiError> {
    let value: Value =
        serde_json::from_slice(body).map_err(|e| ApiError::bad_request("body", format!("malformed JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| ApiError::bad_request("body", "request must be a JSON object"))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "signal" | "patient_id" | "interventions" | "include_baseline") {
            return Err(ApiError::bad_request(key, format!("unknown field '{key}'")));
        }
    }
    let input = match (obj.get("signal"), obj.get("patient_id")) {
        (Some(_), Some(_)) => {
            return Err(ApiError::bad_request("signal", "give either 'signal' or 'patient_id', not both"))
        }
        (None, None) => return Err(ApiError::bad_request("signal", "one of 'signal' or 'patient_id' is required")),
        (Some(s), None) => {
            let values = s
                .as_array()
                .ok_or_else(|| ApiError::bad_request("signal", "expected an array of numbers"))?
                .iter()
                .map(|v| v.as_f64().filter(|x| x.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| ApiError::bad_request("signal", "expected finite numbers"))?;
            PredictInput::Signal(values)
        }
        (None, Some(p)) => PredictInput::PatientId(
            p.as_str()
                .ok_or_else(|| ApiError::bad_request("patient_id", "expected a string"))?
                .to_string(),
        ),
    };
    let mut interventions = Vec::new();
    match obj.get("interventions") {
        None | Some(Value::Null) => {}
        Some(Value::Object(map)) => {
            for (parent, label) in map {
                let field = format!("interventions.{parent}");
                let label = label
                    .as_str()
                    .ok_or_else(|| ApiError::bad_request(&field, "expected a label string or \"unknown\""))?;
                interventions.push((parent.clone(), label.to_string()));
            }
        }
        Some(_) => return Err(ApiError::bad_request("interventions", "expected an object")),
    }
    let include_baseline = match obj.get("include_baseline") {
        None | Some(Value::Null) => false,
        Some(Value::Bool(b)) => *b,
        Some(_) => return Err(ApiError::bad_request("include_baseline", "expected a boolean")),
    };
    Ok(PredictRequest {
        input,
        interventions,
        include_baseline,
    })
}

fn build_mask(schema: &ConceptSchema, interventions: &[(String, String)]) -> Result<InterventionMask, ApiError> {
    let mut mask = InterventionMask::for_schema(schema);
    for (parent, label) in interventions {
        let field = format!("interventions.{parent}");
        let j = schema
            .parent_index(parent)
            .ok_or_else(|| ApiError::bad_request(&field, format!("unknown parent '{parent}'")))?;
        if label != UNKNOWN && schema.parents()[j].label_index(label).is_none() {
            return Err(ApiError::bad_request(
                &field,
                format!("'{label}' is not a label of '{parent}'"),
            ));
        }
        mask = mask
            .intervene_parent(schema, parent, label)
            .map_err(|_| ApiError::internal())?;
    }
    Ok(mask)
}

fn curve_body(model: &HulpModel, hazards: &[f64], survival: &[f64]) -> Result<CurveBody, ApiError> {
    let valid = survival.iter().all(|&s| s > 0.0 && s <= 1.0)
        && survival.windows(2).all(|w| w[1] <= w[0])
        && hazards.iter().all(|h| h.is_finite());
    if !valid {
        return Err(ApiError::internal());
    }
    let curve = SurvivalCurve {
        grid: model.grid().clone(),
        hazards: hazards.to_vec(),
        survival: survival.to_vec(),
    };
    Ok(CurveBody {
        hazards: hazards.to_vec(),
        survival: model
            .grid()
            .upper_edges()
            .iter()
            .copied()
            .zip(survival.iter().copied())
            .collect(),
        median_survival: median_survival_time(&curve),
    })
}

/// Runs one request against the model; pure and read-only.
pub fn predict(state: &AppState, request: &PredictRequest) -> Result<PredictResponse, ApiError> {
    let model = &state.model;
    let schema = model.schema();
    let signal = match &request.input {
        PredictInput::Signal(s) => s.clone(),
        PredictInput::PatientId(id) => {
            let i = state.index.get(id).ok_or_else(|| ApiError {
                status: StatusCode::NOT_FOUND,
                message: format!("unknown patient '{id}'"),
                field: Some("patient_id".into()),
            })?;
            state.cohort.as_ref().ok_or_else(ApiError::internal)?.records()[*i].signal.clone()
        }
    };
    if signal.len() != model.signal_dim() {
        return Err(ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            message: format!("signal has {} values, model expects {}", signal.len(), model.signal_dim()),
            field: Some("signal".into()),
        });
    }
    let mask = build_mask(schema, &request.interventions)?;
    let mut masks = vec![mask];
    if request.include_baseline {
        masks.push(InterventionMask::for_schema(schema));
    }
    let rows = masks.len();
    let mut data = Vec::with_capacity(rows * signal.len());
    for _ in 0..rows {
        data.extend_from_slice(&signal);
    }
    let x = Matrix::from_vec(rows, signal.len(), data).map_err(|_| ApiError::internal())?;
    let out = model.predict(&x, Some(&masks)).map_err(|_| ApiError::internal())?;

    let main = curve_body(model, out.hazards.row(0), out.survival.row(0))?;
    let baseline = if request.include_baseline {
        Some(curve_body(model, out.hazards.row(1), out.survival.row(1))?)
    } else {
        None
    };
    let forces = masks[0].forces();
    let concept_probs = (0..schema.n_concepts())
        .map(|slot| {
            let (parent, label) = schema.concept(slot);
            let p = out.concept_probs.row(0)[slot];
            ConceptProbability {
                parent: parent.to_string(),
                label: label.to_string(),
                probability: p,
                forced: forces[slot].value().is_some(),
            }
        })
        .collect::<Vec<_>>();
    if concept_probs.iter().any(|c| !(0.0..=1.0).contains(&c.probability)) {
        return Err(ApiError::internal());
    }
    Ok(PredictResponse {
        concept_probs,
        hazards: main.hazards,
        survival: main.survival,
        median_survival: main.median_survival,
        baseline,
        model: ModelInfo {
            name: "hulp",
            version: state.version.clone(),
        },
    })
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({ "status": "ok", "model_version": state.version }))
}

/// Schema, grid and a summary of the model configuration.
pub fn model_meta(state: &AppState) -> Value {
    let model = &state.model;
    let config = model.config();
    let mut summary = Map::new();
    summary.insert("concept_embed_dim".into(), json!(config.concept_embed_dim));
    summary.insert("latent_dim".into(), json!(config.latent_dim_for(model.schema())));
    summary.insert("encoder_hidden".into(), json!(config.encoder_hidden));
    summary.insert("signal_dim".into(), json!(model.signal_dim()));
    summary.insert("n_concepts".into(), json!(model.schema().n_concepts()));
    summary.insert("n_bins".into(), json!(model.grid().n_bins()));
    summary.insert("parameters".into(), json!(model.params().scalar_count()));
    json!({
        "schema": model.schema(),
        "grid_edges": model.grid().edges(),
        "config": summary,
        "model_version": state.version,
    })
}

async fn meta(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(model_meta(&state))
}

async fn predict_handler(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<PredictResponse>, ApiError> {
    let request = parse_predict_request(&body)?;
    Ok(Json(predict(&state, &request)?))
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/model/meta", get(meta))
        .route("/predict", post(predict_handler))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

pub async fn serve(state: Arc<AppState>, static_dir: Option<PathBuf>, port: u16) -> Result<(), ServeError> {
    let addr = SocketAddr::from(([0, 0, 0, 0], port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServeError::Bind { addr, source })?;
    eprintln!("serving model {} on http://{addr}", state.version);
    axum::serve(listener, router(state, static_dir)).await?;
    Ok(())
}
