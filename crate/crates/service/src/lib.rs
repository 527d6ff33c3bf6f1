//! JSON-over-HTTP service: campus sections, live occupancy, what-if predictions and
//! observation ingest over one loaded model.
//!
//! Readers work on an immutable [`Snapshot`]; each ingest batch builds a successor and
//! publishes it with a single pointer swap, so the update cadence is the batch cadence.

pub mod config;
pub mod snapshot;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{rejection::JsonRejection, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, DurationRound, TimeDelta, Timelike, Utc};
use parkcast_core::features::{DatasetSidecar, FeatureEncoder};
use parkcast_core::geodata::{load_campus, Campus, GeoPoint};
use parkcast_core::models::RegressionModel;
use parkcast_core::spatial::{SpatialJoiner, VehicleObservation};
use parkcast_core::{Design, FeatureRow, Matrix};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub use config::{Horizon, InitialOccupancy, ServiceConfig, Thresholds};
pub use snapshot::{
    occupancy_state, BatchSummary, OccupancyState, SectionState, SegmentActivity, Snapshot,
};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot load {what}: {source}")]
    Load {
        what: String,
        #[source]
        source: parkcast_core::Error,
    },
    #[error(
        "model layout fingerprint {model} does not match dataset sidecar fingerprint {sidecar}"
    )]
    FingerprintMismatch { model: String, sidecar: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything the handlers share.
pub struct AppState {
    pub config: ServiceConfig,
    pub campus: Campus,
    pub joiner: SpatialJoiner,
    pub model: RegressionModel,
    pub model_fingerprint: String,
    pub encoder: FeatureEncoder,
    snapshot: RwLock<Arc<Snapshot>>,
    ingest: Mutex<()>,
}

impl AppState {
    /// Checks that model and sidecar were built against the same feature layout.
    pub fn new(
        config: ServiceConfig,
        campus: Campus,
        model: RegressionModel,
        sidecar: DatasetSidecar,
    ) -> Result<Self, ServiceError> {
        config.validate()?;
        let model_hash = model
            .feature_layout_hash
            .clone()
            .unwrap_or_else(|| "<none>".into());
        if model_hash != sidecar.layout_hash {
            return Err(ServiceError::FingerprintMismatch {
                model: model_hash,
                sidecar: sidecar.layout_hash,
            });
        }
        let encoder = sidecar.encoder().map_err(|source| ServiceError::Load {
            what: "dataset sidecar".into(),
            source,
        })?;
        if model.columns != encoder.layout.columns() {
            return Err(ServiceError::Config(format!(
                "model columns {:?} differ from sidecar columns {:?}",
                model.columns,
                encoder.layout.columns()
            )));
        }
        let joiner = SpatialJoiner::new(&campus, config.snap_threshold_m).map_err(|source| {
            ServiceError::Load {
                what: "campus segmentation".into(),
                source,
            }
        })?;
        let initial: BTreeMap<u32, u32> = config
            .initial_occupancy
            .iter()
            .map(|o| (o.section_id, o.occupied))
            .collect();
        let snapshot = Snapshot::initial(&campus, &initial, Utc::now());
        Ok(Self {
            model_fingerprint: model.fingerprint(),
            config,
            campus,
            joiner,
            model,
            encoder,
            snapshot: RwLock::new(Arc::new(snapshot)),
            ingest: Mutex::new(()),
        })
    }

    /// Reads the model, sidecar and campus files named in `config`.
    pub fn load(config: ServiceConfig) -> Result<Self, ServiceError> {
        let read = |p: &std::path::Path| {
            std::fs::read(p)
                .map_err(|e| ServiceError::Config(format!("cannot read {}: {e}", p.display())))
        };
        let campus =
            load_campus(&read(&config.campus_path)?).map_err(|source| ServiceError::Load {
                what: config.campus_path.display().to_string(),
                source,
            })?;
        let model_text = String::from_utf8_lossy(&read(&config.model_path)?).into_owned();
        let model =
            RegressionModel::from_json(&model_text).map_err(|source| ServiceError::Load {
                what: config.model_path.display().to_string(),
                source,
            })?;
        let sidecar: DatasetSidecar = serde_json::from_slice(&read(&config.sidecar_path)?)
            .map_err(|e| ServiceError::Load {
                what: config.sidecar_path.display().to_string(),
                source: e.into(),
            })?;
        Self::new(config, campus, model, sidecar)
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    /// Joins and applies one batch, then publishes the successor snapshot.
    pub fn ingest(
        &self,
        batch: &[VehicleObservation],
    ) -> Result<(Arc<Snapshot>, BatchSummary), parkcast_core::Error> {
        let _writer = self.ingest.lock().expect("ingest lock");
        let joined = self.joiner.join(batch)?;
        let current = self.snapshot();
        let (next, summary) =
            current.apply(&joined, &self.campus, &self.joiner.segments, Utc::now());
        let next = Arc::new(next);
        *self.snapshot.write().expect("snapshot lock") = next.clone();
        Ok((next, summary))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRequest {
    pub gate_id: u32,
    pub arrival_time: DateTime<Utc>,
    #[serde(default)]
    pub segment_id: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionPrediction {
    pub section_id: u32,
    pub capacity: u32,
    pub predicted_vacant: f64,
    pub occupancy_state: OccupancyState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResponse {
    pub gate_id: u32,
    pub segment_id: u32,
    pub hour: DateTime<Utc>,
    pub recommended_section_id: u32,
    /// Model output for the gate's pooled sections, clamped to `[0, 1]`.
    pub predicted_availability: f64,
    /// Predicted vacant spaces in the recommended section, rounded.
    pub predicted_vacant: u32,
    pub occupancy_state: OccupancyState,
    pub sections: Vec<SectionPrediction>,
    pub snapshot_sequence: u64,
    pub model_fingerprint: String,
}

/// Client-facing failure with an HTTP status and a JSON body.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: Value,
}

impl ApiError {
    fn unprocessable(body: Value) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self {
            status: r.status(),
            body: json!({ "error": r.body_text() }),
        }
    }
}

/// Splits `total` vacancies over sections by weight without exceeding any capacity.
pub fn distribute(total: f64, weights: &[f64], caps: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; caps.len()];
    let mut open: Vec<usize> = (0..caps.len()).collect();
    let mut left = total.clamp(0.0, caps.iter().sum());
    while left > 1e-12 && !open.is_empty() {
        let w: Vec<f64> = open.iter().map(|&i| weights[i].max(0.0)).collect();
        let wsum: f64 = w.iter().sum();
        let share: Vec<f64> = if wsum > 0.0 {
            w.iter().map(|x| left * x / wsum).collect()
        } else {
            let room: f64 = open.iter().map(|&i| caps[i] - out[i]).sum();
            open.iter()
                .map(|&i| left * (caps[i] - out[i]) / room)
                .collect()
        };
        let mut next = Vec::new();
        let mut given = 0.0;
        for (k, &i) in open.iter().enumerate() {
            let take = share[k].min(caps[i] - out[i]);
            out[i] += take;
            given += take;
            if caps[i] - out[i] > 1e-12 {
                next.push(i);
            }
        }
        left -= given;
        if next.len() == open.len() {
            break;
        }
        open = next;
    }
    out
}

impl AppState {
    fn gates(&self) -> Vec<u32> {
        let mut g: Vec<u32> = self.campus.gates.iter().map(|g| g.id).collect();
        g.sort_unstable();
        g
    }

    /// Segment serving `gate`, unless the request pins one.
    fn segment_for(&self, req: &PredictionRequest) -> Result<u32, ApiError> {
        if self.campus.gate(req.gate_id).is_none() {
            return Err(ApiError::unprocessable(json!({
                "error": format!("unknown gate {}; valid gates are {:?}", req.gate_id, self.gates()),
                "valid_gates": self.gates(),
            })));
        }
        match req.segment_id {
            Some(s) if self.joiner.segments.iter().any(|seg| seg.id == s) => Ok(s),
            Some(s) => {
                let valid: Vec<u32> = self.joiner.segments.iter().map(|seg| seg.id).collect();
                Err(ApiError::unprocessable(json!({
                    "error": format!("unknown segment {s}; valid segments are {valid:?}"),
                    "valid_segments": valid,
                })))
            }
            None => Ok(self
                .joiner
                .segments
                .iter()
                .find(|seg| seg.end_gate == req.gate_id)
                .map(|seg| seg.id)
                .unwrap_or(req.gate_id)),
        }
    }

    fn check_horizon(&self, t: DateTime<Utc>) -> Result<(), ApiError> {
        let h = self.config.horizon;
        let local = t + TimeDelta::hours(i64::from(h.utc_offset_hours));
        if (h.start_hour..h.end_hour).contains(&local.hour()) {
            Ok(())
        } else {
            Err(ApiError::unprocessable(json!({
                "error": format!(
                    "arrival time {t} is {:02}:{:02} local, outside the serviceable hours {:02}:00-{:02}:00",
                    local.hour(), local.minute(), h.start_hour, h.end_hour
                ),
            })))
        }
    }

    /// Feature row the model sees for a request against `snap`.
    pub fn feature_row(
        &self,
        req: &PredictionRequest,
        segment_id: u32,
        snap: &Snapshot,
    ) -> FeatureRow {
        let served = self.campus.sections_for_gate(req.gate_id);
        let activity = snap.activity.get(&segment_id).cloned().unwrap_or_default();
        FeatureRow {
            distance_m: activity.distance_m,
            timestamp: req
                .arrival_time
                .duration_trunc(TimeDelta::hours(1))
                .unwrap_or(req.arrival_time),
            travel_speed_kmh: activity.travel_speed_kmh,
            n_vehicles: activity.n_vehicles,
            n_vehicles_exit: activity.n_vehicles_exit,
            segment_no: segment_id,
            total_parking_space: served
                .iter()
                .filter_map(|s| self.campus.section(*s))
                .map(|s| s.capacity)
                .sum(),
            availability: f64::NAN,
        }
    }

    fn model_failure(&self, msg: String) -> ApiError {
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: json!({ "error": msg, "model_fingerprint": self.model_fingerprint }),
        }
    }

    pub fn predict(&self, req: &PredictionRequest) -> Result<PredictionResponse, ApiError> {
        let segment_id = self.segment_for(req)?;
        self.check_horizon(req.arrival_time)?;
        let snap = self.snapshot();
        let row = self.feature_row(req, segment_id, &snap);
        let encoded = self
            .encoder
            .encode_row(&row)
            .map_err(|e| ApiError::unprocessable(json!({ "error": e.to_string() })))?;
        let width = encoded.len();
        let x = Matrix::new(1, width, encoded).map_err(|e| self.model_failure(e.to_string()))?;
        let design = Design::with_series(self.encoder.layout.columns(), x, vec![segment_id])
            .map_err(|e| self.model_failure(e.to_string()))?;
        let raw = self
            .model
            .predict(&design)
            .map_err(|e| self.model_failure(e.to_string()))?[0];
        if !raw.is_finite() {
            return Err(self.model_failure(format!("model produced {raw}")));
        }
        let availability = raw.clamp(0.0, 1.0);

        let states: Vec<&SectionState> = self
            .campus
            .sections_for_gate(req.gate_id)
            .iter()
            .filter_map(|id| snap.section(*id))
            .collect();
        let caps: Vec<f64> = states.iter().map(|s| f64::from(s.capacity)).collect();
        let vacant_now: Vec<f64> = states.iter().map(|s| f64::from(s.vacant())).collect();
        let pooled = availability * caps.iter().sum::<f64>();
        let shares = distribute(pooled, &vacant_now, &caps);
        let sections: Vec<SectionPrediction> = states
            .iter()
            .zip(&shares)
            .map(|(s, &v)| SectionPrediction {
                section_id: s.id,
                capacity: s.capacity,
                predicted_vacant: v,
                occupancy_state: occupancy_state(
                    if s.capacity > 0 {
                        1.0 - v / f64::from(s.capacity)
                    } else {
                        1.0
                    },
                    &self.config.thresholds,
                ),
            })
            .collect();
        let best = sections
            .iter()
            .min_by(|a, b| {
                b.predicted_vacant
                    .total_cmp(&a.predicted_vacant)
                    .then(a.section_id.cmp(&b.section_id))
            })
            .ok_or_else(|| {
                self.model_failure(format!("gate {} serves no sections", req.gate_id))
            })?;
        Ok(PredictionResponse {
            gate_id: req.gate_id,
            segment_id,
            hour: row.timestamp,
            recommended_section_id: best.section_id,
            predicted_availability: availability,
            predicted_vacant: best.predicted_vacant.round() as u32,
            occupancy_state: occupancy_state(1.0 - availability, &self.config.thresholds),
            sections,
            snapshot_sequence: snap.sequence,
            model_fingerprint: self.model_fingerprint.clone(),
        })
    }
}

async fn health(State(app): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "model_fingerprint": app.model_fingerprint,
        "model_family": app.model.family,
        "layout_hash": app.encoder.layout.hash(),
        "snapshot_sequence": app.snapshot().sequence,
    }))
}

async fn sections(State(app): State<Arc<AppState>>) -> Json<Value> {
    let list: Vec<Value> = app
        .campus
        .sections
        .iter()
        .map(|s| {
            let gates: Vec<u32> = app
                .campus
                .gates
                .iter()
                .filter(|g| g.sections.contains(&s.id))
                .map(|g| g.id)
                .collect();
            json!({
                "id": s.id,
                "name": s.name,
                "capacity": s.capacity,
                "polygon": s.polygon.iter().map(|p| [p.lon, p.lat]).collect::<Vec<_>>(),
                "gates": gates,
            })
        })
        .collect();
    let gates: Vec<Value> = app
        .campus
        .gates
        .iter()
        .map(|g| json!({ "id": g.id, "name": g.name, "location": [g.location.lon, g.location.lat], "sections": g.sections }))
        .collect();
    Json(json!({ "total_capacity": app.campus.total_capacity(), "sections": list, "gates": gates }))
}

async fn occupancy(State(app): State<Arc<AppState>>) -> Json<Value> {
    let snap = app.snapshot();
    let t = app.config.thresholds;
    let list: Vec<Value> = snap
        .sections
        .iter()
        .map(|s| {
            let state = occupancy_state(s.rate(), &t);
            json!({
                "id": s.id,
                "name": s.name,
                "capacity": s.capacity,
                "occupied": s.occupied,
                "vacant": s.vacant(),
                "occupancy_rate": s.rate(),
                "state": state,
                "color": state.color(),
            })
        })
        .collect();
    Json(json!({
        "sequence": snap.sequence,
        "timestamp": snap.timestamp,
        "thresholds": t,
        "colors": {
            "low": OccupancyState::Low.color(),
            "moderate": OccupancyState::Moderate.color(),
            "high": OccupancyState::High.color(),
        },
        "sections": list,
    }))
}

async fn predict(
    State(app): State<Arc<AppState>>,
    body: Result<Json<PredictionRequest>, JsonRejection>,
) -> Result<Json<PredictionResponse>, ApiError> {
    let Json(req) = body?;
    app.predict(&req).map(Json)
}

fn parse_record(v: &Value) -> Result<VehicleObservation, String> {
    let obj = v.as_object().ok_or("row is not an object")?;
    let key = obj
        .get("vehicle_key")
        .and_then(Value::as_str)
        .filter(|s| !s.is_empty())
        .ok_or("vehicle_key must be a non-empty string")?;
    let num = |name: &str| {
        obj.get(name)
            .and_then(Value::as_f64)
            .ok_or(format!("{name} must be a number"))
    };
    let ts = obj
        .get("timestamp")
        .and_then(Value::as_str)
        .ok_or("timestamp must be an RFC 3339 string")?;
    let timestamp = DateTime::parse_from_rfc3339(ts)
        .map_err(|e| format!("timestamp `{ts}`: {e}"))?
        .with_timezone(&Utc);
    let speed_kmh = match obj.get("speed_kmh") {
        None | Some(Value::Null) => None,
        Some(s) => Some(s.as_f64().ok_or("speed_kmh must be a number")?),
    };
    let o = VehicleObservation {
        vehicle_key: key.to_string(),
        point: GeoPoint {
            lon: num("lon")?,
            lat: num("lat")?,
        },
        timestamp,
        speed_kmh,
    };
    o.check()?;
    Ok(o)
}

/// Parses a batch; any bad row rejects the whole batch with per-row reasons.
pub fn parse_batch(rows: &[Value]) -> Result<Vec<VehicleObservation>, Vec<(usize, String)>> {
    let mut out = Vec::with_capacity(rows.len());
    let mut errors = Vec::new();
    for (i, v) in rows.iter().enumerate() {
        match parse_record(v) {
            Ok(o) => {
                if let Some(prev) = out.last().map(|p: &VehicleObservation| p.timestamp) {
                    if o.timestamp < prev {
                        errors.push((
                            i,
                            format!("timestamp {} is earlier than the previous row", o.timestamp),
                        ));
                    }
                }
                out.push(o);
            }
            Err(e) => errors.push((i, e)),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(errors)
    }
}

async fn observations(
    State(app): State<Arc<AppState>>,
    body: Result<Json<Vec<Value>>, JsonRejection>,
) -> Result<Json<Value>, ApiError> {
    let Json(rows) = body?;
    let batch = parse_batch(&rows).map_err(|errs| {
        ApiError::unprocessable(json!({
            "error": format!("batch rejected: {} malformed row(s)", errs.len()),
            "rows": errs.iter().map(|(i, e)| json!({ "index": i, "error": e })).collect::<Vec<_>>(),
        }))
    })?;
    let app2 = app.clone();
    let (snap, summary) = tokio::task::spawn_blocking(move || app2.ingest(&batch))
        .await
        .map_err(|e| app.model_failure(e.to_string()))?
        .map_err(|e| ApiError::unprocessable(json!({ "error": e.to_string() })))?;
    Ok(Json(json!({
        "sequence": snap.sequence,
        "timestamp": snap.timestamp,
        "summary": summary,
    })))
}

pub fn router(app: Arc<AppState>) -> Router {
    let cors = if app.config.cors_origins.is_empty() {
        CorsLayer::new().allow_origin(Any)
    } else {
        let origins: Vec<HeaderValue> = app
            .config
            .cors_origins
            .iter()
            .filter_map(|o| o.parse().ok())
            .collect();
        CorsLayer::new().allow_origin(AllowOrigin::list(origins))
    }
    .allow_methods(Any)
    .allow_headers(Any);
    Router::new()
        .route("/health", get(health))
        .route("/sections", get(sections))
        .route("/occupancy", get(occupancy))
        .route("/predict", post(predict))
        .route("/observations", post(observations))
        .layer(cors)
        .with_state(app)
}

/// Binds and serves until Ctrl-C.
pub async fn serve(app: Arc<AppState>) -> Result<(), ServiceError> {
    let addr: SocketAddr = format!("{}:{}", app.config.host, app.config.port)
        .parse()
        .map_err(|e| ServiceError::Config(format!("bad listen address: {e}")))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
