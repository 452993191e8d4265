//! Route handlers.

use axum::extract::multipart::{Multipart, MultipartError, MultipartRejection};
use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};

use makeup_core::imageio::{decode_image, encode_png};
use makeup_core::maip::{MAX_GUIDANCE, MAX_STEPS, MIN_STEPS};

use crate::engine::{GenerateRequest, ReferenceSet, StyleRequest};
use crate::error::ApiError;
use crate::jobs::JobKind;
use crate::store::ArtifactKind;
use crate::{AppState, Work, MAX_REFERENCES, SCHEMA_VERSION};

pub fn router(state: AppState) -> Router {
    let limit = state.config.max_upload_bytes * MAX_REFERENCES + (1 << 20);
    Router::new()
        .route("/health", get(health))
        .route("/references", post(upload_references))
        .route("/images", post(upload_image))
        .route("/images/{id}", get(get_image))
        .route("/styles", post(create_style).get(list_styles))
        .route("/generate", post(create_generation))
        .route("/jobs/{id}", get(get_job))
        .route("/artifacts/{id}", get(get_artifact))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

fn reply(status: StatusCode, mut body: Value) -> Response {
    if let Value::Object(map) = &mut body {
        map.insert("schema_version".into(), json!(SCHEMA_VERSION));
    }
    (status, Json(body)).into_response()
}

async fn health() -> Response {
    reply(StatusCode::OK, json!({ "status": "ok" }))
}

fn multipart_error(e: MultipartError) -> ApiError {
    if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
        ApiError::too_large(e.body_text())
    } else {
        ApiError::bad_request(e.body_text())
    }
}

/// Reads every part as an image, re-encoded as PNG.
async fn read_images(mp: Result<Multipart, MultipartRejection>, max_bytes: usize) -> Result<Vec<Vec<u8>>, ApiError> {
    let mut mp = mp.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let mut images = Vec::new();
    while let Some(field) = mp.next_field().await.map_err(multipart_error)? {
        let index = images.len();
        let bytes = field.bytes().await.map_err(multipart_error)?;
        if bytes.len() > max_bytes {
            return Err(ApiError::too_large(format!(
                "part {index} is {} bytes; the limit is {max_bytes}",
                bytes.len()
            )));
        }
        if bytes.is_empty() {
            return Err(ApiError::bad_request(format!("part {index} is empty")));
        }
        let img = decode_image(&bytes)
            .map_err(|e| ApiError::bad_request(format!("part {index} is not a decodable image: {e}")))?;
        images.push(encode_png(&img));
        if images.len() > MAX_REFERENCES {
            return Err(ApiError::bad_request(format!("at most {MAX_REFERENCES} images per upload")));
        }
    }
    if images.is_empty() {
        return Err(ApiError::bad_request("no images in upload"));
    }
    Ok(images)
}

async fn upload_references(
    State(st): State<AppState>,
    mp: Result<Multipart, MultipartRejection>,
) -> Result<Response, ApiError> {
    let images = read_images(mp, st.config.max_upload_bytes).await?;
    let image_ids = images
        .iter()
        .map(|b| st.store.put(ArtifactKind::Image, b, json!({ "role": "reference" })).map(|m| m.id))
        .collect::<Result<Vec<_>, _>>()?;
    let set = ReferenceSet {
        image_ids: image_ids.clone(),
    };
    let set_bytes = serde_json::to_vec(&set).map_err(|e| ApiError::internal(e.to_string()))?;
    let set_id = st.store.put(ArtifactKind::ReferenceSet, &set_bytes, Value::Null)?.id;
    let mut body = json!({ "reference_set_id": set_id, "image_ids": image_ids, "count": image_ids.len() });
    if !(3..=5).contains(&image_ids.len()) {
        body["warning"] = json!(format!(
            "style learning expects 3 to 5 reference images, got {}",
            image_ids.len()
        ));
    }
    Ok(reply(StatusCode::CREATED, body))
}

async fn upload_image(
    State(st): State<AppState>,
    mp: Result<Multipart, MultipartRejection>,
) -> Result<Response, ApiError> {
    let images = read_images(mp, st.config.max_upload_bytes).await?;
    if images.len() != 1 {
        return Err(ApiError::bad_request(format!("expected one image, got {}", images.len())));
    }
    let id = st.store.put(ArtifactKind::Image, &images[0], json!({ "role": "face" }))?.id;
    Ok(reply(StatusCode::CREATED, json!({ "image_id": id })))
}

fn json_body<T>(body: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    body.map(|Json(v)| v).map_err(|e| {
        let status = e.status();
        let code = if status == StatusCode::UNPROCESSABLE_ENTITY {
            "invalid_parameters"
        } else {
            "bad_request"
        };
        ApiError::new(status, code, e.body_text())
    })
}

fn require_kind(st: &AppState, id: &str, kind: ArtifactKind, what: &str) -> Result<(), ApiError> {
    match st.store.meta(id) {
        Some(m) if m.kind == kind => Ok(()),
        _ => Err(ApiError::not_found(what, id)),
    }
}

async fn create_style(
    State(st): State<AppState>,
    body: Result<Json<StyleRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let req = json_body(body)?;
    require_kind(&st, &req.reference_set_id, ArtifactKind::ReferenceSet, "reference set")?;
    if let Some(t) = &req.template {
        makeup_core::csl::PromptTemplate::new(t).map_err(|e| ApiError::unprocessable(e.to_string()))?;
    }
    let cfg = st
        .engine
        .style_config(&req.config.clone().unwrap_or_default())
        .map_err(ApiError::unprocessable)?;
    let params = json!({
        "reference_set_id": req.reference_set_id,
        "template": req.template.clone().unwrap_or_else(|| makeup_core::csl::DEFAULT_TEMPLATE.into()),
        "config": cfg,
    });
    let job = st.enqueue(JobKind::LearnStyle, params, Work::LearnStyle(req));
    Ok(reply(StatusCode::ACCEPTED, json!({ "job_id": job.id, "status": job.status })))
}

async fn list_styles(State(st): State<AppState>) -> Response {
    let styles: Vec<Value> = st
        .store
        .list(ArtifactKind::StyleToken)
        .into_iter()
        .map(|m| {
            let mut v = m.meta.clone();
            if !v.is_object() {
                v = json!({});
            }
            v["style_token_id"] = json!(m.id);
            v
        })
        .collect();
    reply(StatusCode::OK, json!({ "styles": styles }))
}

fn validate_generation(req: &GenerateRequest) -> Result<(), ApiError> {
    let g = req.guidance_scale;
    if !(0.0..=MAX_GUIDANCE).contains(&g) {
        return Err(ApiError::out_of_range("guidance_scale", 0.0, MAX_GUIDANCE, g));
    }
    if !(MIN_STEPS..=MAX_STEPS).contains(&req.steps) {
        return Err(ApiError::out_of_range(
            "steps",
            MIN_STEPS as f64,
            MAX_STEPS as f64,
            req.steps as f64,
        ));
    }
    if req.use_style && req.style_token_id.is_none() {
        return Err(ApiError::unprocessable("style_token_id is required unless use_style is false"));
    }
    Ok(())
}

async fn create_generation(
    State(st): State<AppState>,
    body: Result<Json<GenerateRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let req = json_body(body)?;
    validate_generation(&req)?;
    require_kind(&st, &req.face_image_id, ArtifactKind::Image, "image")?;
    if let (Some(id), true) = (&req.style_token_id, req.use_style) {
        require_kind(&st, id, ArtifactKind::StyleToken, "style token")?;
    }
    let params = serde_json::to_value(&req).map_err(|e| ApiError::internal(e.to_string()))?;
    let job = st.enqueue(JobKind::Generate, params, Work::Generate(req));
    Ok(reply(StatusCode::ACCEPTED, json!({ "job_id": job.id, "status": job.status })))
}

async fn get_job(State(st): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let job = st.jobs.get(&id).ok_or_else(|| ApiError::not_found("job", &id))?;
    let body = serde_json::to_value(&job).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(reply(StatusCode::OK, body))
}

fn serve_blob(st: &AppState, id: &str, kind: Option<ArtifactKind>, headers: &HeaderMap) -> Result<Response, ApiError> {
    let what = if kind == Some(ArtifactKind::Image) { "image" } else { "artifact" };
    let (meta, bytes) = st.store.get(id)?.ok_or_else(|| ApiError::not_found(what, id))?;
    if kind.is_some_and(|k| k != meta.kind) {
        return Err(ApiError::not_found(what, id));
    }
    let etag = format!("\"{}\"", meta.id);
    let cache = HeaderValue::from_static("public, max-age=31536000, immutable");
    let etag_value = HeaderValue::from_str(&etag).map_err(|e| ApiError::internal(e.to_string()))?;
    if headers.get(header::IF_NONE_MATCH).is_some_and(|v| v.as_bytes() == etag.as_bytes()) {
        return Ok((StatusCode::NOT_MODIFIED, [(header::ETAG, etag_value), (header::CACHE_CONTROL, cache)]).into_response());
    }
    let content_type = HeaderValue::from_str(&meta.content_type).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok((
        StatusCode::OK,
        [
            (header::CONTENT_TYPE, content_type),
            (header::ETAG, etag_value),
            (header::CACHE_CONTROL, cache),
        ],
        bytes,
    )
        .into_response())
}

async fn get_artifact(State(st): State<AppState>, Path(id): Path<String>, headers: HeaderMap) -> Result<Response, ApiError> {
    serve_blob(&st, &id, None, &headers)
}

async fn get_image(State(st): State<AppState>, Path(id): Path<String>, headers: HeaderMap) -> Result<Response, ApiError> {
    serve_blob(&st, &id, Some(ArtifactKind::Image), &headers)
}
