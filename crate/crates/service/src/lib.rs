//! HTTP front end for the memorability pipeline.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/images` | upload PNG/JPEG bytes, returns id and score |
//! | GET | `/images/{id}` | upload record |
//! | GET | `/images/{id}/recommendations?q=Q` | top-Q seeds |
//! | POST | `/images/{id}/synthesize` | `{seed_id, alpha}` |
//! | GET | `/seeds` | catalog listing |
//! | GET | `/seeds/{id}/thumbnail` | 128x128 PNG |
//! | GET | `/results/{id}` | result PNG |
//! | GET | `/results/{id}/info` | result provenance |
//! | GET | `/health` | liveness |

pub mod config;
pub mod store;

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use memo_core::image::{decode_image, encode_png, ImageTensor};
use memo_core::selector::SeedRanking;
use memo_core::synth::{FeatureExtractor, SeedNetworkStore, StyleTransfer};
use memo_core::synthetic::BrightnessTransfer;
use memo_core::{SeedCatalog, SelectorModel, ScorerModel, Synthesizer};
use serde::{Deserialize, Serialize};

pub use config::{ServiceConfig, SynthesizerKind};
pub use store::{ResultRecord, Store, UploadRecord};

pub const THUMBNAIL_SIZE: (usize, usize) = (128, 128);
pub const DEFAULT_ALPHA: f64 = 2.0;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    BadRequest(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("synthesis failed: {0}")]
    Synthesis(String),
    #[error(transparent)]
    Core(#[from] memo_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    fn status(&self) -> StatusCode {
        use memo_core::Error as Core;
        match self {
            Error::BadRequest(_) | Error::Core(Core::Argument(_) | Core::Decode(_)) => StatusCode::BAD_REQUEST,
            Error::NotFound(_) | Error::Core(Core::NotFound(_)) => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for Error {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, Error>;

/// Models and storage shared by every request.
pub struct AppState {
    pub scorer: ScorerModel,
    pub selector: SelectorModel,
    pub catalog: SeedCatalog,
    pub synthesizer: Arc<dyn Synthesizer>,
    pub store: Store,
    pub synthesis_size: (usize, usize),
    pub max_upload_bytes: usize,
    thumbnails: Vec<Vec<u8>>,
}

impl AppState {
    pub fn new(
        scorer: ScorerModel,
        selector: SelectorModel,
        catalog: SeedCatalog,
        synthesizer: Arc<dyn Synthesizer>,
        store: Store,
        synthesis_size: (usize, usize),
    ) -> Result<Self, Error> {
        if let Some(missing) = selector.seed_ids().iter().find(|id| catalog.get(id).is_none()) {
            return Err(Error::Config(format!("selector seed {missing} is not in the catalog")));
        }
        let thumbnails = catalog
            .seeds()
            .iter()
            .map(|s| encode_png(&s.image.resize_to(THUMBNAIL_SIZE)?))
            .collect::<memo_core::Result<Vec<_>>>()?;
        Ok(Self {
            scorer,
            selector,
            catalog,
            synthesizer,
            store,
            synthesis_size,
            max_upload_bytes: ServiceConfig::default().max_upload_bytes,
            thumbnails,
        })
    }

    pub fn with_max_upload_bytes(mut self, limit: usize) -> Self {
        self.max_upload_bytes = limit;
        self
    }

    /// Loads every model named by `config`.
    pub fn from_config(config: &ServiceConfig) -> Result<Self, Error> {
        let scorer = ScorerModel::from_spec(&config.scorer)?;
        let selector = SelectorModel::load(&config.selector)?;
        let catalog = SeedCatalog::load(&config.catalog, config.synthesis_size)?;
        let synthesizer: Arc<dyn Synthesizer> = match config.synthesizer {
            SynthesizerKind::Brightness => Arc::new(BrightnessTransfer),
            SynthesizerKind::Style => {
                let mut s = StyleTransfer::new(FeatureExtractor::new(config.extractor_seed), config.synthesis.clone())
                    .with_size(config.synthesis_size);
                if let Some(dir) = &config.seed_networks {
                    s = s.with_networks(SeedNetworkStore::new(dir));
                }
                Arc::new(s)
            }
        };
        let store = Store::open(&config.store)?;
        Ok(Self::new(scorer, selector, catalog, synthesizer, store, config.synthesis_size)?
            .with_max_upload_bytes(config.max_upload_bytes))
    }

    /// Decodes stored upload bytes at synthesis resolution.
    pub fn decode(&self, bytes: &[u8]) -> Result<ImageTensor, Error> {
        Ok(decode_image(bytes, self.synthesis_size)?)
    }

    /// The ranking served for `image`, computed exactly as the library does.
    pub fn ranking(&self, image: &ImageTensor) -> Result<SeedRanking, Error> {
        Ok(self.selector.rank(image)?)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.max_upload_bytes;
    Router::new()
        .route("/health", get(health))
        .route("/images", post(upload).layer(DefaultBodyLimit::max(limit)))
        .route("/images/{id}", get(image_info))
        .route("/images/{id}/recommendations", get(recommendations))
        .route("/images/{id}/synthesize", post(synthesize))
        .route("/seeds", get(seeds))
        .route("/seeds/{id}/thumbnail", get(thumbnail))
        .route("/results/{id}", get(result_png))
        .route("/results/{id}/info", get(result_info))
        .with_state(state)
}

/// Runs CPU-bound work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| Error::Synthesis(format!("worker panicked: {e}")))?
}

fn thumbnail_url(seed_id: &str) -> String {
    format!("/seeds/{seed_id}/thumbnail")
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "seeds": state.catalog.len() }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UploadResponse {
    pub image_id: String,
    pub memorability: f64,
}

async fn upload(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<UploadResponse>> {
    let response = blocking(move || {
        let image = state.decode(&body)?;
        let record = UploadRecord {
            image_id: store::new_id(),
            memorability: state.scorer.predict(&image)?,
        };
        state.store.put_upload(&body, &record)?;
        Ok(UploadResponse {
            image_id: record.image_id,
            memorability: record.memorability,
        })
    })
    .await?;
    Ok(Json(response))
}

async fn image_info(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<UploadRecord>> {
    Ok(Json(state.store.upload(&id)?))
}

#[derive(Debug, Deserialize)]
struct RecommendQuery {
    q: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Recommendation {
    pub seed_id: String,
    pub predicted_gap: f64,
    pub thumbnail_url: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RecommendResponse {
    pub image_id: String,
    pub keep_original: bool,
    pub recommendations: Vec<Recommendation>,
}

async fn recommendations(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(query): Query<RecommendQuery>,
) -> ApiResult<Json<RecommendResponse>> {
    let response = blocking(move || {
        let bytes = state.store.upload_bytes(&id)?;
        let s = state.selector.output_dim();
        let q = query.q.unwrap_or(s);
        if q == 0 || q > s {
            return Err(Error::BadRequest(format!("q must be in 1..={s}, got {q}")));
        }
        let ranking = state.ranking(&state.decode(&bytes)?)?.top(q);
        Ok(RecommendResponse {
            image_id: id,
            keep_original: ranking.keep_original,
            recommendations: ranking
                .entries
                .into_iter()
                .map(|e| Recommendation {
                    thumbnail_url: thumbnail_url(&e.seed_id),
                    seed_id: e.seed_id,
                    predicted_gap: e.predicted_gap,
                })
                .collect(),
        })
    })
    .await?;
    Ok(Json(response))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SynthesizeRequest {
    pub seed_id: String,
    pub alpha: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SynthesizeResponse {
    pub result_id: String,
    pub image_id: String,
    pub seed_id: String,
    pub alpha: f64,
    pub original_memorability: f64,
    pub measured_memorability: f64,
    pub measured_gap: f64,
    pub predicted_gap: Option<f64>,
    pub result_url: String,
}

async fn synthesize(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    request: Result<Json<SynthesizeRequest>, JsonRejection>,
) -> ApiResult<Json<SynthesizeResponse>> {
    let Json(request) = request.map_err(|e| Error::BadRequest(e.body_text()))?;
    let alpha = request.alpha.unwrap_or(DEFAULT_ALPHA);
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::BadRequest(format!("alpha must be positive, got {alpha}")));
    }
    let response = blocking(move || {
        let upload = state.store.upload(&id)?;
        let seed = state
            .catalog
            .get(&request.seed_id)
            .ok_or_else(|| Error::NotFound(format!("seed {}", request.seed_id)))?;
        let image = state.decode(&state.store.upload_bytes(&id)?)?;
        let output = state.synthesizer.synthesize(&image, seed, alpha).map_err(|e| match e {
            memo_core::Error::Numerical { .. } => Error::Synthesis(e.to_string()),
            other => Error::Core(other),
        })?;
        let measured = state.scorer.predict(&output)?;
        let predicted_gap = match state.selector.seed_ids().iter().position(|s| *s == seed.seed_id) {
            Some(i) => Some(state.selector.predict(&image)?[i]),
            None => None,
        };
        let record = ResultRecord {
            result_id: store::new_id(),
            image_id: upload.image_id,
            seed_id: seed.seed_id.clone(),
            alpha,
            original_memorability: upload.memorability,
            measured_memorability: measured,
            measured_gap: measured - upload.memorability,
            predicted_gap,
        };
        state.store.put_result(&encode_png(&output)?, &record)?;
        Ok(SynthesizeResponse {
            result_url: format!("/results/{}", record.result_id),
            result_id: record.result_id,
            image_id: record.image_id,
            seed_id: record.seed_id,
            alpha,
            original_memorability: record.original_memorability,
            measured_memorability: record.measured_memorability,
            measured_gap: record.measured_gap,
            predicted_gap: record.predicted_gap,
        })
    })
    .await?;
    Ok(Json(response))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SeedEntry {
    pub seed_id: String,
    pub memorability: f64,
    pub thumbnail_url: String,
    pub model_ref: Option<String>,
}

async fn seeds(State(state): State<Arc<AppState>>) -> Json<Vec<SeedEntry>> {
    Json(
        state
            .catalog
            .seeds()
            .iter()
            .map(|s| SeedEntry {
                seed_id: s.seed_id.clone(),
                memorability: s.memorability,
                thumbnail_url: thumbnail_url(&s.seed_id),
                model_ref: s.model_ref.clone(),
            })
            .collect(),
    )
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn thumbnail(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let i = state.catalog.index_of(&id).ok_or_else(|| Error::NotFound(format!("seed {id}")))?;
    Ok(png(state.thumbnails[i].clone()))
}

async fn result_png(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(png(state.store.result_png(&id)?))
}

async fn result_info(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<ResultRecord>> {
    Ok(Json(state.store.result(&id)?))
}

/// Binds `config.host:config.port` and serves until Ctrl-C.
pub async fn serve(config: &ServiceConfig) -> Result<(), Error> {
    let state = Arc::new(AppState::from_config(config)?);
    let listener = tokio::net::TcpListener::bind((config.host.as_str(), config.port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
