//! HTTP front door: congestion predictions, per-road warehouse summaries
//! and the latest run metrics as JSON.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bench::PipelineMetrics;
use crate::error::{Error, Result};
use crate::learner::{CongestionLabel, TrainedModel};
use crate::streamproc::{FeatureVector, Warehouse, WarehouseRow};

/// Simulated road table bundled with the binary.
const ROADS_CSV: &str = include_str!("../../data/roads.csv");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoadName {
    pub city: String,
    pub road: String,
}

/// Static (lane, section) to simulated road name map. Pairs outside the
/// table, including the (-1, -1) fill markers, resolve to "Unknown Road".
pub struct RoadDirectory {
    roads: BTreeMap<(i32, i32), RoadName>,
}

impl RoadDirectory {
    pub fn bundled() -> RoadDirectory {
        Self::parse(ROADS_CSV).expect("bundled road table is valid")
    }

    fn parse(text: &str) -> Result<RoadDirectory> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "lane_id,section_id,city,road")) => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    msg: "bad road table header".into(),
                })
            }
        }
        let mut roads = BTreeMap::new();
        for (i, line) in lines {
            let bad = || Error::Parse {
                line: i as u64 + 1,
                msg: format!("bad road row {line:?}"),
            };
            let mut f = line.splitn(4, ',');
            let lane: i32 = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let section: i32 = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let city = f.next().ok_or_else(bad)?.to_string();
            let road = f.next().ok_or_else(bad)?.to_string();
            roads.insert((lane, section), RoadName { city, road });
        }
        Ok(RoadDirectory { roads })
    }

    pub fn name(&self, lane: i32, section: i32) -> RoadName {
        self.roads.get(&(lane, section)).cloned().unwrap_or(RoadName {
            city: "Unknown".into(),
            road: "Unknown Road".into(),
        })
    }

    pub fn len(&self) -> usize {
        self.roads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roads.is_empty()
    }
}

struct AppShared {
    model: RwLock<Option<Arc<TrainedModel>>>,
    metrics: RwLock<Option<PipelineMetrics>>,
    warehouse_dir: RwLock<Option<PathBuf>>,
    roads: RoadDirectory,
}

/// Shared server state. Model swaps are atomic; the warehouse is opened
/// per request so summaries see a consistent committed snapshot.
#[derive(Clone)]
pub struct AppState(Arc<AppShared>);

impl AppState {
    pub fn new(roads: RoadDirectory) -> AppState {
        AppState(Arc::new(AppShared {
            model: RwLock::new(None),
            metrics: RwLock::new(None),
            warehouse_dir: RwLock::new(None),
            roads,
        }))
    }

    pub fn set_model(&self, model: TrainedModel) {
        *self.0.model.write().expect("model lock") = Some(Arc::new(model));
    }

    pub fn model(&self) -> Option<Arc<TrainedModel>> {
        self.0.model.read().expect("model lock").clone()
    }

    pub fn set_warehouse_dir(&self, dir: PathBuf) {
        *self.0.warehouse_dir.write().expect("warehouse dir lock") = Some(dir);
    }

    pub fn record_metrics(&self, metrics: PipelineMetrics) {
        *self.0.metrics.write().expect("metrics lock") = Some(metrics);
    }
}

struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: String) -> ApiError {
        ApiError { status: StatusCode::BAD_REQUEST, message }
    }

    fn internal(message: String) -> ApiError {
        ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, message }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

/// Prediction input; field names match the CSV header so a wire record
/// can be posted as-is. Lane and section are only used for road lookup.
#[derive(Debug, Deserialize)]
struct PredictBody {
    #[serde(rename = "v_Vel")]
    v_vel: Option<f64>,
    #[serde(rename = "v_Acc")]
    v_acc: Option<f64>,
    #[serde(rename = "Space_Headway")]
    space_headway: Option<f64>,
    #[serde(rename = "Time_Headway")]
    time_headway: Option<f64>,
    #[serde(rename = "Lane_ID")]
    lane_id: Option<i32>,
    #[serde(rename = "Section_ID")]
    section_id: Option<i32>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictResponse {
    pub label: String,
    /// Tree vote share per label name; sums to 1.
    pub votes: BTreeMap<String, f64>,
    pub road: Option<RoadName>,
}

fn feature(value: Option<f64>, name: &'static str) -> std::result::Result<f64, ApiError> {
    match value {
        Some(v) if v.is_finite() => Ok(v),
        Some(_) => Err(ApiError::bad_request(format!("feature {name} must be finite"))),
        None => Err(ApiError::bad_request(format!("missing feature {name}"))),
    }
}

async fn predict(
    State(state): State<AppState>,
    Json(body): Json<PredictBody>,
) -> std::result::Result<Json<PredictResponse>, ApiError> {
    let vector = FeatureVector([
        feature(body.v_vel, "v_Vel")?,
        feature(body.v_acc, "v_Acc")?,
        feature(body.space_headway, "Space_Headway")?,
        feature(body.time_headway, "Time_Headway")?,
    ]);
    let model = state.model().ok_or(ApiError {
        status: StatusCode::SERVICE_UNAVAILABLE,
        message: "no model loaded".into(),
    })?;
    let label = model.predict(&vector);
    let fractions = model.forest.vote_fractions(&vector.0);
    let votes = CongestionLabel::ALL
        .iter()
        .map(|l| (l.name().to_string(), fractions[l.index()]))
        .collect();
    let road = match (body.lane_id, body.section_id) {
        (Some(lane), Some(section)) => Some(state.0.roads.name(lane, section)),
        _ => None,
    };
    Ok(Json(PredictResponse { label: label.name().to_string(), votes, road }))
}

#[derive(Debug, Deserialize)]
struct CongestionQuery {
    lane: Option<i32>,
    section: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadCongestion {
    #[serde(rename = "Lane_ID")]
    pub lane_id: i32,
    #[serde(rename = "Section_ID")]
    pub section_id: i32,
    pub city: String,
    pub road: String,
    /// Committed rows per label name on this road.
    pub counts: BTreeMap<String, u64>,
    pub rows: u64,
    #[serde(rename = "Mean_v_Vel")]
    pub mean_v_vel: f64,
}

/// Per-label counts, row count and velocity sum for one road.
type RoadStats = (BTreeMap<String, u64>, u64, f64);

/// Groups committed rows by (lane, section) and joins road names, in key
/// order. `lane`/`section` filter when given.
pub fn congestion_summary(
    rows: &[WarehouseRow],
    roads: &RoadDirectory,
    lane: Option<i32>,
    section: Option<i32>,
) -> Vec<RoadCongestion> {
    let mut groups: BTreeMap<(i32, i32), RoadStats> = BTreeMap::new();
    for row in rows {
        if lane.is_some_and(|l| l != row.lane_id) || section.is_some_and(|s| s != row.section_id) {
            continue;
        }
        let entry = groups.entry((row.lane_id, row.section_id)).or_default();
        *entry.0.entry(row.congestion_label.name().to_string()).or_default() += 1;
        entry.1 += 1;
        entry.2 += row.v_vel;
    }
    groups
        .into_iter()
        .map(|((lane_id, section_id), (counts, n, vel_sum))| {
            let name = roads.name(lane_id, section_id);
            RoadCongestion {
                lane_id,
                section_id,
                city: name.city,
                road: name.road,
                counts,
                rows: n,
                mean_v_vel: vel_sum / n as f64,
            }
        })
        .collect()
}

async fn congestion(
    State(state): State<AppState>,
    Query(query): Query<CongestionQuery>,
) -> std::result::Result<Json<Vec<RoadCongestion>>, ApiError> {
    let dir = state.0.warehouse_dir.read().expect("warehouse dir lock").clone();
    let rows = match dir {
        None => Vec::new(),
        Some(dir) => {
            let warehouse =
                Warehouse::open(&dir).map_err(|e| ApiError::internal(e.to_string()))?;
            warehouse.scan().map_err(|e| ApiError::internal(e.to_string()))?
        }
    };
    Ok(Json(congestion_summary(&rows, &state.0.roads, query.lane, query.section)))
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn metrics_endpoint(State(state): State<AppState>) -> Json<serde_json::Value> {
    match state.0.metrics.read().expect("metrics lock").as_ref() {
        None => Json(json!({ "status": "no runs" })),
        Some(m) => Json(json!({ "status": "ok", "metrics": m })),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/predict", post(predict))
        .route("/congestion", get(congestion))
        .route("/metrics", get(metrics_endpoint))
        .with_state(state)
}

/// Binds and serves until the process exits.
pub async fn serve(addr: SocketAddr, state: AppState) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Run(format!("bind {addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| Error::Run(e.to_string()))?;
    println!("listening on http://{local}");
    serve_on(listener, state).await
}

/// Serves on an already bound listener until the process exits.
pub async fn serve_on(listener: tokio::net::TcpListener, state: AppState) -> Result<()> {
    axum::serve(listener, router(state))
        .await
        .map_err(|e| Error::Run(format!("server: {e}")))
}
