use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use makeup_core::dataprep::synth_faces;
use makeup_core::grid::{ImageGrid, ValueRange};
use makeup_core::imageio::encode_png;
use makeup_service::{router, AppState, ServiceConfig};

struct Harness {
    app: Router,
    _dir: tempfile::TempDir,
}

fn harness_with(edit: impl FnOnce(&mut ServiceConfig)) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ServiceConfig::with_store(dir.path().join("store"));
    edit(&mut cfg);
    let state = AppState::start(cfg).unwrap();
    Harness {
        app: router(state),
        _dir: dir,
    }
}

fn harness() -> Harness {
    harness_with(|_| {})
}

const BOUNDARY: &str = "makeup-test-boundary";

fn multipart(parts: &[Vec<u8>]) -> Vec<u8> {
    let mut body = Vec::new();
    for (i, p) in parts.iter().enumerate() {
        body.extend_from_slice(
            format!(
                "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"img{i}.png\"\r\nContent-Type: image/png\r\n\r\n"
            )
            .as_bytes(),
        );
        body.extend_from_slice(p);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, headers, bytes)
}

async fn upload(app: &Router, path: &str, parts: &[Vec<u8>]) -> (StatusCode, Value) {
    let req = Request::post(path)
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(multipart(parts)))
        .unwrap();
    let (status, _, body) = send(app, req).await;
    (status, serde_json::from_slice(&body).unwrap())
}

async fn post_json(app: &Router, path: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::post(path)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (status, _, body) = send(app, req).await;
    (status, serde_json::from_slice(&body).unwrap())
}

async fn get_json(app: &Router, path: &str) -> (StatusCode, Value) {
    let (status, _, body) = send(app, Request::get(path).body(Body::empty()).unwrap()).await;
    (status, serde_json::from_slice(&body).unwrap())
}

async fn wait_job(app: &Router, id: &str) -> Value {
    for _ in 0..3000 {
        let (status, job) = get_json(app, &format!("/jobs/{id}")).await;
        assert_eq!(status, StatusCode::OK);
        if job["status"] == "succeeded" || job["status"] == "failed" {
            return job;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("job {id} did not finish");
}

fn face_pngs(n: usize, seed: u64) -> Vec<Vec<u8>> {
    synth_faces(n, seed, 64).iter().map(|f| encode_png(&f.naked)).collect()
}

fn makeup_pngs(n: usize, seed: u64) -> Vec<Vec<u8>> {
    synth_faces(n, seed, 64).iter().map(|f| encode_png(&f.makeup)).collect()
}

fn noise_png(size: usize, seed: u64) -> Vec<u8> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
    let data = (0..size * size * 3)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            f64::from((state >> 56) as u8) / 255.0
        })
        .collect();
    encode_png(&ImageGrid::from_vec(size, size, data, ValueRange::Unit).unwrap())
}

async fn learned_style(app: &Router) -> String {
    let (_, set) = upload(app, "/references", &makeup_pngs(4, 7)).await;
    let (status, job) = post_json(
        app,
        "/styles",
        json!({ "reference_set_id": set["reference_set_id"], "config": { "steps": 20 } }),
    )
    .await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let done = wait_job(app, job["job_id"].as_str().unwrap()).await;
    assert_eq!(done["status"], "succeeded", "{done}");
    done["result_refs"][0].as_str().unwrap().to_string()
}

async fn face_id(app: &Router, seed: u64) -> String {
    let (status, body) = upload(app, "/images", &face_pngs(1, seed)).await;
    assert_eq!(status, StatusCode::CREATED);
    body["image_id"].as_str().unwrap().to_string()
}

#[tokio::test(flavor = "multi_thread")]
async fn health_reports_schema_version() {
    let h = harness();
    let (status, body) = get_json(&h.app, "/health").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["schema_version"], 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn reference_upload_counts_and_warnings() {
    let h = harness();
    let (status, body) = upload(&h.app, "/references", &makeup_pngs(4, 1)).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["count"], 4);
    assert!(body.get("warning").is_none());
    assert_eq!(body["schema_version"], 1);

    let (status, body) = upload(&h.app, "/references", &makeup_pngs(6, 2)).await;
    assert_eq!(status, StatusCode::CREATED);
    assert!(body["warning"].as_str().unwrap().contains("3 to 5"));

    let (status, body) = upload(&h.app, "/references", &[]).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["schema_version"], 1);

    let (status, body) = upload(&h.app, "/references", &[b"plain text, not pixels".to_vec()]).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"]["message"].as_str().unwrap().contains("part 0"));

    let (status, _) = upload(&h.app, "/references", &makeup_pngs(17, 3)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn oversize_upload_is_rejected() {
    let h = harness_with(|c| c.max_upload_bytes = 4096);
    let big = noise_png(64, 1);
    assert!(big.len() > 4096);
    let (status, body) = upload(&h.app, "/references", &[big.clone()]).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(body["error"]["code"], "payload_too_large");
    let many: Vec<_> = (0..16).map(|i| noise_png(64, i)).collect();
    let (status, _) = upload(&h.app, "/references", &many).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test(flavor = "multi_thread")]
async fn images_are_immutable_and_cacheable() {
    let h = harness();
    let id = face_id(&h.app, 4).await;
    let get = || Request::get(format!("/images/{id}")).body(Body::empty()).unwrap();
    let (s1, headers, b1) = send(&h.app, get()).await;
    let (s2, _, b2) = send(&h.app, get()).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(b1, b2);
    assert_eq!(headers[header::CONTENT_TYPE], "image/png");
    assert!(headers[header::CACHE_CONTROL].to_str().unwrap().contains("immutable"));
    let etag = headers[header::ETAG].clone();
    let cond = Request::get(format!("/images/{id}"))
        .header(header::IF_NONE_MATCH, etag)
        .body(Body::empty())
        .unwrap();
    assert_eq!(send(&h.app, cond).await.0, StatusCode::NOT_MODIFIED);
    let (s, _, b3) = send(&h.app, Request::get(format!("/artifacts/{id}")).body(Body::empty()).unwrap()).await;
    assert_eq!((s, b3), (StatusCode::OK, b1));

    assert_eq!(get_json(&h.app, "/images/deadbeef").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get_json(&h.app, "/artifacts/deadbeef").await.0, StatusCode::NOT_FOUND);
    let (_, set) = upload(&h.app, "/references", &makeup_pngs(3, 5)).await;
    let set_id = set["reference_set_id"].as_str().unwrap();
    assert_eq!(get_json(&h.app, &format!("/images/{set_id}")).await.0, StatusCode::NOT_FOUND);
    assert_eq!(get_json(&h.app, &format!("/artifacts/{set_id}")).await.0, StatusCode::OK);
    let (status, _) = upload(&h.app, "/images", &face_pngs(2, 6)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn style_learning_lifecycle() {
    let h = harness();
    let (status, body) = post_json(&h.app, "/styles", json!({ "reference_set_id": "nope" })).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "not_found");

    let token = learned_style(&h.app).await;
    let (status, styles) = get_json(&h.app, "/styles").await;
    assert_eq!(status, StatusCode::OK);
    let listed = styles["styles"].as_array().unwrap();
    assert_eq!(listed.len(), 1);
    assert_eq!(listed[0]["style_token_id"], token.as_str());
    assert_eq!(listed[0]["template"], "a photo of a woman with <*> on face");
    let (s, _, bytes) = send(&h.app, Request::get(format!("/artifacts/{token}")).body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    assert!(bytes.starts_with(b"MKUPCKPT"));

    let (_, set) = upload(&h.app, "/references", &makeup_pngs(3, 8)).await;
    let (status, _) = post_json(
        &h.app,
        "/styles",
        json!({ "reference_set_id": set["reference_set_id"], "template": "no placeholder here" }),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = post_json(
        &h.app,
        "/styles",
        json!({ "reference_set_id": set["reference_set_id"], "config": { "learning_rate": -1.0 } }),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test(flavor = "multi_thread")]
async fn generation_validates_parameters() {
    let h = harness();
    let face = face_id(&h.app, 9).await;
    let base = json!({ "face_image_id": face, "use_style": false });
    let with = |k: &str, v: Value| {
        let mut b = base.clone();
        b[k] = v;
        b
    };
    let (status, body) = post_json(&h.app, "/generate", with("guidance_scale", json!(25.0))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["field"], "guidance_scale");
    assert_eq!(body["error"]["allowed"]["max"], 20.0);
    assert!(body["error"]["message"].as_str().unwrap().contains("20"));
    let (status, body) = post_json(&h.app, "/generate", with("steps", json!(5))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["allowed"]["min"], 10.0);
    let (status, _) = post_json(&h.app, "/generate", with("face_image_id", json!("missing"))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = post_json(&h.app, "/generate", json!({ "face_image_id": face })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = post_json(
        &h.app,
        "/generate",
        json!({ "face_image_id": face, "style_token_id": "missing" }),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = post_json(&h.app, "/generate", with("mystery", json!(1))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let req = Request::post("/generate")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    assert_eq!(send(&h.app, req).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get_json(&h.app, "/jobs/job-999999").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn generation_succeeds_and_is_deterministic() {
    let h = harness();
    let token = learned_style(&h.app).await;
    let face = face_id(&h.app, 10).await;
    let req = json!({
        "face_image_id": face,
        "style_token_id": token,
        "guidance_scale": 7.5,
        "steps": 50,
        "seed": 42,
    });
    let mut finals = Vec::new();
    for _ in 0..2 {
        let (status, body) = post_json(&h.app, "/generate", req.clone()).await;
        assert_eq!(status, StatusCode::ACCEPTED);
        let job = wait_job(&h.app, body["job_id"].as_str().unwrap()).await;
        assert_eq!(job["status"], "succeeded", "{job}");
        assert_eq!(job["result_refs"].as_array().unwrap().len(), 4);
        let result = &job["result"];
        assert_eq!(result["config"]["guidance_scale"], 7.5);
        assert_eq!(result["config"]["num_inference_steps"], 50);
        assert_eq!(result["config"]["seed"], 42);
        assert_eq!(result["integrity"]["outside"]["mad"], 0.0);
        let id = result["final_image_id"].as_str().unwrap();
        let (s, _, bytes) = send(&h.app, Request::get(format!("/images/{id}")).body(Body::empty()).unwrap()).await;
        assert_eq!(s, StatusCode::OK);
        finals.push(bytes);
    }
    assert_eq!(finals[0], finals[1]);
    let diag = {
        let (_, body) = post_json(&h.app, "/generate", req.clone()).await;
        wait_job(&h.app, body["job_id"].as_str().unwrap()).await["result"]["diagnostics_id"].clone()
    };
    let (_, diagnostics) = get_json(&h.app, &format!("/artifacts/{}", diag.as_str().unwrap())).await;
    assert_eq!(diagnostics["steps"].as_array().unwrap().len(), 50);
}

#[tokio::test(flavor = "multi_thread")]
async fn failed_generation_reports_an_error() {
    let h = harness();
    let (_, body) = upload(&h.app, "/images", &[encode_png(&ImageGrid::filled(64, 64, [0.5; 3]))]).await;
    let face = body["image_id"].as_str().unwrap();
    let (_, body) = post_json(&h.app, "/generate", json!({ "face_image_id": face, "use_style": false })).await;
    let job = wait_job(&h.app, body["job_id"].as_str().unwrap()).await;
    assert_eq!(job["status"], "failed");
    assert!(job["error"].as_str().unwrap().contains("no facial region"));
    assert!(job["result_refs"].as_array().unwrap().is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn single_worker_runs_jobs_in_fifo_order_with_monotone_status() {
    let h = harness();
    let face = face_id(&h.app, 11).await;
    let mut ids = Vec::new();
    for seed in 0..4 {
        let (_, body) = post_json(
            &h.app,
            "/generate",
            json!({ "face_image_id": face, "use_style": false, "seed": seed, "steps": 100 }),
        )
        .await;
        ids.push(body["job_id"].as_str().unwrap().to_string());
    }
    let (_, queued) = get_json(&h.app, &format!("/jobs/{}", ids[3])).await;
    assert!(queued["result_refs"].as_array().unwrap().is_empty());
    assert!(queued["result"].is_null());

    let rank = |s: &Value| match s.as_str().unwrap() {
        "queued" => 0,
        "running" => 1,
        _ => 2,
    };
    let pollers: Vec<_> = ids
        .iter()
        .cloned()
        .map(|id| {
            let app = h.app.clone();
            tokio::spawn(async move {
                let mut seen = Vec::new();
                loop {
                    let (_, job) = get_json(&app, &format!("/jobs/{id}")).await;
                    let r = rank(&job["status"]);
                    if r == 1 {
                        assert!(job["result_refs"].as_array().unwrap().is_empty());
                    }
                    seen.push(r);
                    if r == 2 {
                        return seen;
                    }
                    tokio::time::sleep(Duration::from_millis(2)).await;
                }
            })
        })
        .collect();
    for p in pollers {
        let seen = p.await.unwrap();
        assert!(seen.windows(2).all(|w| w[0] <= w[1]), "{seen:?}");
    }
    let mut order = Vec::new();
    for id in &ids {
        let job = wait_job(&h.app, id).await;
        assert_eq!(job["status"], "succeeded");
        order.push(job["finished_seq"].as_u64().unwrap());
    }
    assert!(order.windows(2).all(|w| w[0] < w[1]), "{order:?}");
}

#[tokio::test(flavor = "multi_thread")]
async fn store_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig::with_store(dir.path().join("store"));
    let id = {
        let app = router(AppState::start(cfg.clone()).unwrap());
        face_id(&app, 12).await
    };
    let app = router(AppState::start(cfg).unwrap());
    let (s, _, _) = send(&app, Request::get(format!("/images/{id}")).body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
}
