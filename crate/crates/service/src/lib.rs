//! HTTP/JSON back end for the examiner workbench.
//!
//! Routes, all under `/v1`:
//!
//! | method | path | body / result |
//! |---|---|---|
//! | POST | `/images?sample_id=..&subject_id=..` | raw PGM/PNG bytes, `{image_id, ..}` |
//! | GET | `/images/{id}` | metadata and dimensions |
//! | GET | `/images/{id}/png` | the stored image |
//! | POST | `/compare` | `{image_id_a, image_id_b, encoders}` |
//! | GET | `/heatmap/{comparison_id}/{encoder}` | PNG |
//! | GET | `/quality/{id}` | quality record |
//! | POST | `/identify` | `{image_id, encoder, k}` |
//! | GET, POST | `/gallery` | list entries / enroll `{image_id, encoder}` |
//! | GET | `/health` | `{status, version}` |
//!
//! Errors are `{error_code, message}` with a 4xx status. A comparison in
//! which a sample yields no template is a normal 200 with `ftm: true`.

mod error;
mod store;

use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use pmiris_core::gallery::{Candidate, Gallery, GalleryEntry, GalleryError};
use pmiris_core::image::decode_image;
use pmiris_core::matching::similarity_heatmap;
use pmiris_core::pipeline::compare_templates;
use pmiris_core::{EncoderId, Eye, Gender, PipelineConfig, QualityRecord, Sample, SampleMetadata, SourceChannel};

pub use error::ApiError;
use store::{Store, StoredImage};

pub const MAX_UPLOAD_BYTES: usize = 16 * 1024 * 1024;
pub const DEFAULT_PORT: u16 = 8750;
pub const DEFAULT_K: usize = 10;

/// Shared handler state: configuration, uploaded images and the gallery.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    cfg: PipelineConfig,
    store: Store,
    gallery: Gallery,
}

impl AppState {
    pub fn new(cfg: PipelineConfig, gallery: Gallery) -> Self {
        Self {
            inner: Arc::new(Inner {
                cfg,
                store: Store::default(),
                gallery,
            }),
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.inner.cfg
    }

    pub fn gallery(&self) -> &Gallery {
        &self.inner.gallery
    }
}

pub fn router(state: AppState) -> Router {
    let v1 = Router::new()
        .route("/health", get(health))
        .route("/images", post(upload_image))
        .route("/images/{id}", get(image_info))
        .route("/images/{id}/png", get(image_png))
        .route("/compare", post(compare))
        .route("/heatmap/{comparison_id}/{encoder}", get(heatmap))
        .route("/quality/{id}", get(quality))
        .route("/identify", post(identify))
        .route("/gallery", get(gallery_list).post(enroll));
    Router::new()
        .nest("/v1", v1)
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", "no such route") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(
                StatusCode::METHOD_NOT_ALLOWED,
                "METHOD_NOT_ALLOWED",
                "method not allowed",
            )
        })
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        tracing::info!(%addr, "listening");
    }
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Runs CPU-bound pipeline work off the async workers so that cheap
/// requests such as health checks stay responsive.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))
}

fn short_hash(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(&h.finalize()[..16])
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    version: &'static str,
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok",
        version: env!("CARGO_PKG_VERSION"),
    })
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct UploadParams {
    sample_id: Option<String>,
    subject_id: Option<String>,
    eye: Option<String>,
    session: Option<u32>,
    pmi_hours: Option<f64>,
    age_years: Option<u32>,
    gender: Option<String>,
    channel: Option<String>,
}

impl UploadParams {
    fn metadata(&self, image_id: &str) -> Result<SampleMetadata, ApiError> {
        let eye = match &self.eye {
            Some(s) => s
                .parse::<Eye>()
                .map_err(|_| ApiError::bad_request(format!("invalid eye `{s}`")))?,
            None => Eye::Left,
        };
        let gender = match &self.gender {
            Some(s) => s
                .parse::<Gender>()
                .map_err(|_| ApiError::bad_request(format!("invalid gender `{s}`")))?,
            None => Gender::Unknown,
        };
        let pmi_hours = self.pmi_hours.unwrap_or(0.0);
        if !pmi_hours.is_finite() || pmi_hours < 0.0 {
            return Err(ApiError::bad_request(format!("invalid pmi_hours {pmi_hours}")));
        }
        let sample_id = self.sample_id.clone().unwrap_or_else(|| image_id.to_owned());
        Ok(SampleMetadata {
            subject_id: self.subject_id.clone().unwrap_or_else(|| sample_id.clone()),
            sample_id,
            eye,
            session: self.session.unwrap_or(1),
            pmi_hours,
            age_years: self.age_years.unwrap_or(0),
            gender,
            image_path: String::new(),
        })
    }

    fn channel(&self) -> Result<SourceChannel, ApiError> {
        match self.channel.as_deref() {
            None => Ok(SourceChannel::Nir),
            Some(s) => s
                .parse()
                .map_err(|_| ApiError::bad_request(format!("invalid channel `{s}`"))),
        }
    }
}

#[derive(Serialize)]
struct ImageInfo {
    image_id: String,
    width: usize,
    height: usize,
    metadata: SampleMetadata,
    warnings: Vec<String>,
}

impl ImageInfo {
    fn of(img: &StoredImage) -> Self {
        Self {
            image_id: img.id.clone(),
            width: img.sample.image.width(),
            height: img.sample.image.height(),
            metadata: img.sample.metadata.clone(),
            warnings: img.sample.image.warnings(),
        }
    }
}

async fn upload_image(
    State(state): State<AppState>,
    params: Result<Query<UploadParams>, QueryRejection>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Response, ApiError> {
    let Query(params) = params.map_err(|r| ApiError::from_rejection(r.status(), r.body_text()))?;
    let body = body.map_err(|r| ApiError::from_rejection(r.status(), r.body_text()))?;
    if body.is_empty() {
        return Err(ApiError::bad_request("empty image body"));
    }
    let channel = params.channel()?;
    // Identical bytes with identical metadata map to the same id.
    let canonical = serde_json::to_vec(&params).map_err(|e| ApiError::internal(e.to_string()))?;
    let id = short_hash(&[&canonical, &body]);
    if let Some(existing) = state.inner.store.image(&id) {
        return Ok((StatusCode::OK, Json(ImageInfo::of(&existing))).into_response());
    }
    let metadata = params.metadata(&id)?;
    let image = decode_image(&body, metadata.sample_id.clone(), channel)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "INVALID_IMAGE", e.to_string()))?;
    let (stored, created) = state
        .inner
        .store
        .insert_image(StoredImage::new(id, Sample::with_metadata(image, metadata)));
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(ImageInfo::of(&stored))).into_response())
}

fn lookup(state: &AppState, id: &str) -> Result<Arc<StoredImage>, ApiError> {
    state
        .inner
        .store
        .image(id)
        .ok_or_else(|| ApiError::not_found("image", id))
}

async fn image_info(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<ImageInfo>, ApiError> {
    let img = lookup(&state, &id)?;
    Ok(Json(ImageInfo::of(&img)))
}

async fn image_png(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let img = lookup(&state, &id)?;
    let png = blocking(move || img.sample.image.encode_png()).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompareRequest {
    image_id_a: String,
    image_id_b: String,
    #[serde(default = "all_encoders")]
    encoders: Vec<EncoderId>,
}

fn all_encoders() -> Vec<EncoderId> {
    EncoderId::ALL.to_vec()
}

#[derive(Debug, Serialize)]
struct EncoderResult {
    encoder: EncoderId,
    score: Option<f64>,
    best_shift: Option<i64>,
    ftm: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    ftm_reason: Option<String>,
    heatmap_url: Option<String>,
}

#[derive(Debug, Serialize)]
struct CompareResponse {
    comparison_id: String,
    image_id_a: String,
    image_id_b: String,
    results: Vec<EncoderResult>,
    /// `None` when the image could not be segmented.
    quality_a: Option<QualityRecord>,
    quality_b: Option<QualityRecord>,
}

async fn compare(
    State(state): State<AppState>,
    req: Result<Json<CompareRequest>, JsonRejection>,
) -> Result<Json<CompareResponse>, ApiError> {
    let Json(req) = req.map_err(|r| ApiError::from_rejection(r.status(), r.body_text()))?;
    if req.encoders.is_empty() {
        return Err(ApiError::bad_request("`encoders` must not be empty"));
    }
    let mut encoders = Vec::with_capacity(req.encoders.len());
    for e in req.encoders {
        if !encoders.contains(&e) {
            encoders.push(e);
        }
    }
    let a = lookup(&state, &req.image_id_a)?;
    let b = lookup(&state, &req.image_id_b)?;
    let comparison_id = short_hash(&[a.id.as_bytes(), b.id.as_bytes()]);
    let cmp = state.inner.store.comparison_entry(&comparison_id, &a, &b);
    let st = state.clone();
    blocking(move || {
        let cfg = &st.inner.cfg;
        let mut results = Vec::with_capacity(encoders.len());
        for &enc in &encoders {
            let rec = compare_templates(
                &a.sample.metadata,
                &b.sample.metadata,
                enc,
                a.template(cfg, enc),
                b.template(cfg, enc),
                &cfg.matching,
            );
            if let Some(shift) = rec.best_shift {
                cmp.shifts.lock().expect("comparison poisoned").insert(enc, shift);
            }
            results.push(EncoderResult {
                encoder: enc,
                score: rec.score,
                best_shift: rec.best_shift,
                ftm: rec.ftm,
                heatmap_url: (!rec.ftm).then(|| format!("/v1/heatmap/{comparison_id}/{enc}")),
                ftm_reason: rec.ftm_reason,
            });
        }
        tracing::debug!(%comparison_id, encoders = results.len(), "compared");
        CompareResponse {
            image_id_a: a.id.clone(),
            image_id_b: b.id.clone(),
            results,
            quality_a: a.quality(cfg).ok(),
            quality_b: b.quality(cfg).ok(),
            comparison_id,
        }
    })
    .await
    .map(Json)
}

async fn heatmap(
    State(state): State<AppState>,
    Path((comparison_id, encoder)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let enc: EncoderId = encoder.parse().map_err(ApiError::bad_request)?;
    let cmp = state
        .inner
        .store
        .comparison(&comparison_id)
        .ok_or_else(|| ApiError::not_found("comparison", &comparison_id))?;
    let shift = cmp
        .shifts
        .lock()
        .expect("comparison poisoned")
        .get(&enc)
        .copied()
        .ok_or_else(|| ApiError::not_found("heatmap", &format!("{comparison_id}/{enc}")))?;
    let st = state.clone();
    let png = blocking(move || {
        let cfg = &st.inner.cfg;
        match (cmp.a.template(cfg, enc), cmp.b.template(cfg, enc)) {
            (Ok(ta), Ok(tb)) => similarity_heatmap(ta, tb, shift)
                .map(|h| h.to_png())
                .map_err(|e| ApiError::internal(e.to_string())),
            _ => Err(ApiError::internal("templates missing for a matched comparison")),
        }
    })
    .await??;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn quality(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<QualityRecord>, ApiError> {
    let img = lookup(&state, &id)?;
    let st = state.clone();
    blocking(move || img.quality(&st.inner.cfg))
        .await?
        .map(Json)
        .map_err(|m| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "SEGMENTATION_FAILED", m))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IdentifyRequest {
    image_id: String,
    encoder: EncoderId,
    #[serde(default = "default_k")]
    k: usize,
}

fn default_k() -> usize {
    DEFAULT_K
}

#[derive(Debug, Serialize)]
struct IdentifyResponse {
    image_id: String,
    encoder: EncoderId,
    ftm: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    ftm_reason: Option<String>,
    candidates: Vec<Candidate>,
    skipped_incompatible: usize,
    skipped_ftm: usize,
}

async fn identify(
    State(state): State<AppState>,
    req: Result<Json<IdentifyRequest>, JsonRejection>,
) -> Result<Json<IdentifyResponse>, ApiError> {
    let Json(req) = req.map_err(|r| ApiError::from_rejection(r.status(), r.body_text()))?;
    if req.k == 0 {
        return Err(ApiError::bad_request("`k` must be at least 1"));
    }
    let img = lookup(&state, &req.image_id)?;
    let st = state.clone();
    blocking(move || {
        let cfg = &st.inner.cfg;
        let mut resp = IdentifyResponse {
            image_id: img.id.clone(),
            encoder: req.encoder,
            ftm: false,
            ftm_reason: None,
            candidates: Vec::new(),
            skipped_incompatible: 0,
            skipped_ftm: 0,
        };
        match img.template(cfg, req.encoder) {
            Err(e) => {
                resp.ftm = true;
                resp.ftm_reason = Some(e.to_string());
            }
            Ok(probe) => {
                let found = st
                    .inner
                    .gallery
                    .identify(probe, req.k, &cfg.matching)
                    .map_err(|e| ApiError::internal(e.to_string()))?;
                resp.candidates = found.candidates;
                resp.skipped_incompatible = found.skipped_incompatible;
                resp.skipped_ftm = found.skipped_ftm;
            }
        }
        Ok(resp)
    })
    .await?
    .map(Json)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnrollRequest {
    image_id: String,
    encoder: EncoderId,
}

#[derive(Debug, Serialize)]
struct EnrollResponse {
    sample_id: String,
    encoder: EncoderId,
}

async fn enroll(
    State(state): State<AppState>,
    req: Result<Json<EnrollRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = req.map_err(|r| ApiError::from_rejection(r.status(), r.body_text()))?;
    let img = lookup(&state, &req.image_id)?;
    let st = state.clone();
    let sample_id = blocking(move || {
        let template = img
            .template(&st.inner.cfg, req.encoder)
            .as_ref()
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "ENROLLMENT_FTM", e.to_string()))?;
        st.inner
            .gallery
            .enroll(template, img.sample.metadata.clone())
            .map_err(|e| match e {
                GalleryError::DuplicateSampleId(_) => {
                    ApiError::new(StatusCode::CONFLICT, "DUPLICATE_SAMPLE", e.to_string())
                }
                GalleryError::InvalidSampleId(_) => ApiError::bad_request(e.to_string()),
                other => ApiError::internal(other.to_string()),
            })
    })
    .await??;
    let body = EnrollResponse {
        sample_id,
        encoder: req.encoder,
    };
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

#[derive(Serialize)]
struct GalleryList {
    entries: Vec<GalleryEntry>,
}

async fn gallery_list(State(state): State<AppState>) -> Json<GalleryList> {
    Json(GalleryList {
        entries: state.inner.gallery.list(),
    })
}
