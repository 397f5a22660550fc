//! HTTP API over a frozen model and dataset.
//!
//! | route | response |
//! |---|---|
//! | `GET /meta` | dataset size, score range, normalised extent |
//! | `GET /contour?xmin&xmax&ymin&ymax&nw&nh[&tau]` | contour grid |
//! | `GET /points?method=random\|poisson&count\|radius&seed&xmin&xmax&ymin&ymax` | sampled points in the box |
//! | `GET /point/{id}` | one record with its metadata |
//!
//! All coordinates are in the normalised unit square.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::str::FromStr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;
use tower_http::cors::CorsLayer;

use metricmap::benchmark::project;
use metricmap::contour::{
    cutoff_mask, grid_eval, normalize_projection, sample_points, BBox, ContourEstimator, GridExport, KernelSpec,
    Projection2D, Sampling, DEFAULT_TAU,
};
use metricmap::dataio::{check_compatible, Dataset};
use metricmap::model::{Mode, ModelState};

/// Largest accepted `nw * nh`.
pub const MAX_CELLS: usize = 1_000_000;
pub const DEFAULT_RESOLUTION: usize = 128;

/// Immutable state shared by all requests.
pub struct AppState {
    dataset: Dataset,
    model: ModelState,
    projection: Projection2D,
    estimator: ContourEstimator,
    scores: Vec<f64>,
}

impl AppState {
    /// Projects the dataset once; every dataset point is an anchor.
    pub fn new(mut model: ModelState, dataset: Dataset) -> metricmap::Result<AppState> {
        check_compatible(&model, &dataset)?;
        model.mode = Mode::Inference;
        let raw = project(&model, dataset.features().view())?;
        let projection = normalize_projection(&raw)?;
        let scores = dataset.scores_f64();
        let estimator =
            ContourEstimator::from_projection(&projection, scores.clone(), KernelSpec::generalized(model.kernel))?;
        Ok(AppState {
            dataset,
            model,
            projection,
            estimator,
            scores,
        })
    }

    pub fn projection(&self) -> &Projection2D {
        &self.projection
    }

    pub fn estimator(&self) -> &ContourEstimator {
        &self.estimator
    }

    fn point(&self, i: usize) -> PointRecord {
        let p = self.projection.normalized[i];
        PointRecord {
            id: self.dataset.id(i),
            x: p[0],
            y: p[1],
            score: self.scores[i],
        }
    }
}

#[derive(Debug, Serialize)]
struct PointRecord {
    id: String,
    x: f64,
    y: f64,
    score: f64,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl From<metricmap::Error> for ApiError {
    fn from(e: metricmap::Error) -> Self {
        let status = match e.class() {
            metricmap::ErrorClass::Internal => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({ "error": self.code, "message": self.message })),
        )
            .into_response()
    }
}

type Params = HashMap<String, String>;

fn param<T: FromStr>(q: &Params, key: &str) -> Result<Option<T>, ApiError> {
    match q.get(key) {
        None => Ok(None),
        Some(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| ApiError::bad_request(format!("cannot parse {key}={v:?}"))),
    }
}

/// Bounding box from `xmin..ymax`; missing edges default to the unit square.
fn bbox(q: &Params) -> Result<BBox, ApiError> {
    let mut v = [0.0, 1.0, 0.0, 1.0];
    for (slot, key) in v.iter_mut().zip(["xmin", "xmax", "ymin", "ymax"]) {
        if let Some(x) = param::<f64>(q, key)? {
            if !x.is_finite() {
                return Err(ApiError::bad_request(format!("{key} must be finite")));
            }
            *slot = x;
        }
    }
    BBox::new(v[0], v[1], v[2], v[3])
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_bbox", e.to_string()))
}

async fn meta(State(st): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let (lo, hi) = st.estimator.score_range();
    let (alpha, beta) = st.model.kernel.effective();
    Json(json!({
        "n": st.dataset.n(),
        "d": st.dataset.d(),
        "score_min": lo,
        "score_max": hi,
        "bbox": [0.0, 1.0, 0.0, 1.0],
        "diverging": lo < 0.0 && hi > 0.0,
        "kernel": { "alpha": alpha, "beta": beta },
        "tau": DEFAULT_TAU,
        "max_cells": MAX_CELLS,
    }))
}

async fn contour(State(st): State<Arc<AppState>>, Query(q): Query<Params>) -> Result<Json<GridExport>, ApiError> {
    let nw = param::<usize>(&q, "nw")?.unwrap_or(DEFAULT_RESOLUTION);
    let nh = param::<usize>(&q, "nh")?.unwrap_or(DEFAULT_RESOLUTION);
    if nw < 2 || nh < 2 {
        return Err(ApiError::bad_request("nw and nh must be at least 2"));
    }
    if nw.checked_mul(nh).is_none_or(|c| c > MAX_CELLS) {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "grid_too_large",
            format!("nw*nh must not exceed {MAX_CELLS}"),
        ));
    }
    let tau = param::<f64>(&q, "tau")?.unwrap_or(DEFAULT_TAU);
    if tau.is_nan() || tau <= 0.0 {
        return Err(ApiError::bad_request("tau must be > 0"));
    }
    let bbox = bbox(&q)?;
    let export = tokio::task::spawn_blocking(move || -> metricmap::Result<GridExport> {
        let mut grid = grid_eval(&st.estimator, bbox, nw, nh)?;
        cutoff_mask(&mut grid, &st.projection.normalized, tau)?;
        Ok(grid.to_export())
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(export))
}

async fn points(State(st): State<Arc<AppState>>, Query(q): Query<Params>) -> Result<Json<Vec<PointRecord>>, ApiError> {
    let bbox = bbox(&q)?;
    let seed = param::<u64>(&q, "seed")?.unwrap_or(0);
    let inside: Vec<usize> = (0..st.dataset.n())
        .filter(|&i| bbox.contains(st.projection.normalized[i]))
        .collect();
    let method = match q.get("method").map(String::as_str) {
        None | Some("all") => None,
        Some("random") => {
            let count =
                param::<usize>(&q, "count")?.ok_or_else(|| ApiError::bad_request("random sampling needs count"))?;
            Some(Sampling::Random {
                count: count.min(inside.len()),
            })
        }
        Some("poisson") => {
            let radius =
                param::<f64>(&q, "radius")?.ok_or_else(|| ApiError::bad_request("poisson sampling needs radius"))?;
            Some(Sampling::Poisson { radius })
        }
        Some(other) => return Err(ApiError::bad_request(format!("unknown sampling method {other:?}"))),
    };
    let chosen = match method {
        None => inside,
        Some(m) => {
            let pts: Vec<[f64; 2]> = inside.iter().map(|&i| st.projection.normalized[i]).collect();
            sample_points(&pts, m, seed)?.into_iter().map(|k| inside[k]).collect()
        }
    };
    Ok(Json(chosen.into_iter().map(|i| st.point(i)).collect()))
}

async fn point(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    let i = st
        .dataset
        .find(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_id", format!("no point with id {id:?}")))?;
    let p = st.point(i);
    let raw = st.projection.raw[i];
    Ok(Json(json!({
        "id": p.id,
        "index": i,
        "x": p.x,
        "y": p.y,
        "raw": raw,
        "score": p.score,
        "meta": st.dataset.meta(i),
    })))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/meta", get(meta))
        .route("/contour", get(contour))
        .route("/points", get(points))
        .route("/point/{id}", get(point))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state))).await
}
