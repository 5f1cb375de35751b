//! HTTP front end over an immutable [`ModelSnapshot`].
//!
//! All routes live under `/v1` and return JSON; failures are
//! `{"code": ..., "message": ...}` with a 4xx/5xx status.

pub mod config;
pub mod error;
pub mod state;

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, RawQuery, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use explore_core::catalog::SongAttributes;
use explore_core::coldstart::{parse_seed_csv, SeedProfile};
use explore_core::selector::{self, AttributeRange, PlaylistRequest, RankedPlaylist, Source};
use explore_core::snapshot::{Algorithm, ExplanationPayload};
use explore_core::ModelSnapshot;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use config::ServiceConfig;
pub use error::{ApiError, StartupError};
pub use state::AppState;

type ApiResult<T> = Result<Json<T>, ApiError>;

pub const DEFAULT_PLAYLIST_LENGTH: usize = 10;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/users/{id}/recommendations", get(recommendations))
        .route("/v1/users/{id}/explanation", get(explanation))
        .route("/v1/users:coldstart", post(coldstart))
        .route("/v1/songs/{id}", get(song))
        .fallback(|| async { ApiError::not_found() })
        .with_state(state)
}

/// Binds and serves until the process is stopped.
pub async fn serve(state: Arc<AppState>, address: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(address).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

fn query_pairs(raw: Option<String>) -> Result<Vec<(String, String)>, ApiError> {
    serde_urlencoded::from_str(raw.as_deref().unwrap_or(""))
        .map_err(|e| ApiError::invalid(format!("malformed query string: {e}")))
}

fn parse_k(value: &str) -> Result<usize, ApiError> {
    match value.parse::<usize>() {
        Ok(k) if k > 0 => Ok(k),
        _ => Err(ApiError::invalid(format!("k must be a positive integer, got `{value}`"))),
    }
}

fn parse_algorithm(value: &str) -> Result<Algorithm, ApiError> {
    value.parse().map_err(ApiError::from)
}

/// Reads `k`, `source`, `algorithm` and `<attribute>=lo,hi` parameters.
/// `extra` names further accepted keys, returned untouched.
fn playlist_request(
    pairs: Vec<(String, String)>,
    extra: &[&str],
) -> Result<(PlaylistRequest, Vec<(String, String)>), ApiError> {
    let mut request = PlaylistRequest {
        n: DEFAULT_PLAYLIST_LENGTH,
        ..PlaylistRequest::default()
    };
    let mut rest = Vec::new();
    for (key, value) in pairs {
        match key.as_str() {
            "k" => request.n = parse_k(&value)?,
            "source" => request.source = value.parse::<Source>().map_err(ApiError::from)?,
            "algorithm" => request.algorithm = Some(parse_algorithm(&value)?),
            k if extra.contains(&k) => rest.push((key, value)),
            attr => {
                let range = AttributeRange::parse(attr, &value);
                match request.filter.range_mut(attr) {
                    Some(slot) => *slot = Some(range?),
                    None => return Err(ApiError::invalid(format!("unknown query parameter `{attr}`"))),
                }
            }
        }
    }
    request.filter.validate()?;
    Ok((request, rest))
}

#[derive(Debug, Serialize)]
struct Health {
    status: &'static str,
    config_hash: String,
    format_version: u16,
    serving: Algorithm,
    users: usize,
    songs: usize,
    ratings: usize,
    synthetic_users: usize,
    rebuilding: bool,
}

async fn health(State(state): State<Arc<AppState>>) -> ApiResult<Health> {
    let snap = state.current()?;
    Ok(Json(Health {
        status: "ok",
        config_hash: snap.meta.config_hash.clone(),
        format_version: snap.meta.format_version,
        serving: snap.config.serving,
        users: snap.matrix.n_users(),
        songs: snap.matrix.n_songs(),
        ratings: snap.matrix.nnz(),
        synthetic_users: snap.meta.synthetic_users,
        rebuilding: state.is_rebuilding(),
    }))
}

async fn recommendations(
    State(state): State<Arc<AppState>>,
    Path(user_id): Path<String>,
    RawQuery(raw): RawQuery,
) -> ApiResult<RankedPlaylist> {
    let (request, _) = playlist_request(query_pairs(raw)?, &[])?;
    let snap = state.current()?;
    let playlist = tokio::task::spawn_blocking(move || selector::assemble(&snap, &user_id, &request))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(playlist))
}

async fn explanation(
    State(state): State<Arc<AppState>>,
    Path(user_id): Path<String>,
    RawQuery(raw): RawQuery,
) -> ApiResult<ExplanationPayload> {
    let mut song = None;
    let mut algorithm = None;
    for (key, value) in query_pairs(raw)? {
        match key.as_str() {
            "song" => song = Some(value),
            "algorithm" => algorithm = Some(parse_algorithm(&value)?),
            other => return Err(ApiError::invalid(format!("unknown query parameter `{other}`"))),
        }
    }
    let song = song.ok_or_else(|| ApiError::invalid("missing `song` query parameter"))?;
    let snap = state.current()?;
    let algorithm = algorithm.unwrap_or(snap.config.serving);
    Ok(Json(snap.explain(&user_id, &song, algorithm)?))
}

#[derive(Debug, Serialize)]
struct ColdStartResponse {
    user_id: String,
    playlist: RankedPlaylist,
}

/// Id used when the client does not name the new listener.
fn anonymous_id(body: &[u8]) -> String {
    let digest = hex::encode(Sha256::digest(body));
    format!("anon-{}", &digest[..12])
}

async fn coldstart(
    State(state): State<Arc<AppState>>,
    RawQuery(raw): RawQuery,
    body: Bytes,
) -> ApiResult<ColdStartResponse> {
    let (request, rest) = playlist_request(query_pairs(raw)?, &["user_id"])?;
    let external = rest
        .into_iter()
        .find(|(k, _)| k == "user_id")
        .map(|(_, v)| v)
        .filter(|v| !v.is_empty())
        .unwrap_or_else(|| anonymous_id(&body));
    let seeds = parse_seed_csv(&body[..])?;
    let base = state.current()?;
    let Some(_guard) = state.begin_rebuild() else {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "rebuild_in_progress",
            "another snapshot rebuild is running; retry shortly",
        ));
    };
    let profile = SeedProfile {
        external_user_id: external,
        seeds,
    };
    let (next, user_id) = tokio::task::spawn_blocking(move || base.with_cold_start(&profile))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let playlist = selector::assemble(&next, &user_id, &request)?;
    state.publish(next);
    log::info!("published snapshot with cold-start user {user_id}");
    Ok(Json(ColdStartResponse { user_id, playlist }))
}

#[derive(Debug, Serialize)]
struct SongView {
    #[serde(flatten)]
    song: SongAttributes,
    in_corpus: bool,
    listeners: usize,
}

fn song_view(snap: &ModelSnapshot, song_id: &str) -> Result<SongView, ApiError> {
    let song = snap
        .catalog
        .get(song_id)
        .cloned()
        .ok_or_else(|| explore_core::Error::UnknownSong(song_id.to_string()))?;
    let index = snap.matrix.song_index(song_id);
    let listeners = index.map_or(0, |s| snap.matrix.listener_counts()[s]);
    Ok(SongView {
        song,
        in_corpus: index.is_some(),
        listeners,
    })
}

async fn song(State(state): State<Arc<AppState>>, Path(song_id): Path<String>) -> ApiResult<SongView> {
    let snap = state.current()?;
    Ok(Json(song_view(&snap, &song_id)?))
}
