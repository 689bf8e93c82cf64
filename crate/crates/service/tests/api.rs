use std::net::SocketAddr;

use pmiris_core::gallery::Gallery;
use pmiris_core::synthetic::{render, CaptureParams, SyntheticIdentity};
use pmiris_core::{IrisImage, PipelineConfig};
use pmiris_service::{serve, AppState, MAX_UPLOAD_BYTES};
use serde_json::{json, Value};

struct Server {
    base: String,
    client: reqwest::Client,
    _dir: tempfile::TempDir,
    _stop: tokio::sync::oneshot::Sender<()>,
}

async fn start() -> Server {
    let dir = tempfile::tempdir().unwrap();
    let gallery = Gallery::open(dir.path().join("gallery")).unwrap();
    let state = AppState::new(PipelineConfig::default(), gallery);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr: SocketAddr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    tokio::spawn(serve(listener, state, async {
        let _ = rx.await;
    }));
    Server {
        base: format!("http://{addr}/v1"),
        client: reqwest::Client::new(),
        _dir: dir,
        _stop: tx,
    }
}

impl Server {
    async fn upload(&self, img: &IrisImage, query: &str) -> (u16, Value) {
        let resp = self
            .client
            .post(format!("{}/images?{query}", self.base))
            .body(img.encode_pgm())
            .send()
            .await
            .unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap())
    }

    async fn post_json(&self, path: &str, body: &Value) -> (u16, Value) {
        let resp = self
            .client
            .post(format!("{}{path}", self.base))
            .json(body)
            .send()
            .await
            .unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap())
    }

    async fn get(&self, path: &str) -> reqwest::Response {
        self.client.get(format!("{}{path}", self.base)).send().await.unwrap()
    }
}

fn eye(seed: u64, capture: u64) -> IrisImage {
    let params = if capture == 0 {
        CaptureParams::default()
    } else {
        CaptureParams::degraded(seed * 10 + capture, 4.0, 3.0, 0.0)
    };
    render(&SyntheticIdentity::new(seed), &params, format!("s{seed}c{capture}")).image
}

#[tokio::test]
async fn health_reports_version() {
    let s = start().await;
    let body: Value = s.get("/health").await.json().await.unwrap();
    assert_eq!(body["status"], "ok");
    assert_eq!(body["version"], env!("CARGO_PKG_VERSION"));
}

#[tokio::test]
async fn uploads_are_content_addressed() {
    let s = start().await;
    let img = eye(1, 0);
    let (st1, a) = s.upload(&img, "sample_id=x1&subject_id=s1&pmi_hours=30").await;
    let (st2, b) = s.upload(&img, "sample_id=x1&subject_id=s1&pmi_hours=30").await;
    assert_eq!(st1, 201);
    assert_eq!(st2, 200);
    assert_eq!(a["image_id"], b["image_id"]);
    assert_eq!(a["metadata"]["pmi_hours"], 30.0);
    let (_, c) = s.upload(&img, "sample_id=x2").await;
    assert_ne!(a["image_id"], c["image_id"]);
}

#[tokio::test]
async fn upload_rejects_bad_input() {
    let s = start().await;
    let (status, body) = s.upload(&eye(1, 0), "gender=robot").await;
    assert_eq!(status, 400);
    assert_eq!(body["error_code"], "BAD_REQUEST");

    let (status, body) = s.upload(&eye(1, 0), "colour=blue").await;
    assert_eq!(status, 400, "{body}");

    let resp = s
        .client
        .post(format!("{}/images", s.base))
        .body(b"GIF89a".to_vec())
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["error_code"], "INVALID_IMAGE");
}

#[tokio::test]
async fn oversized_upload_is_413() {
    let s = start().await;
    let resp = s
        .client
        .post(format!("{}/images", s.base))
        .body(vec![0u8; MAX_UPLOAD_BYTES + 1])
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status().as_u16(), 413);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["error_code"], "PAYLOAD_TOO_LARGE");
}

#[tokio::test]
async fn self_comparison_scores_zero_with_heatmaps() {
    let s = start().await;
    let (_, up) = s.upload(&eye(2, 0), "").await;
    let id = up["image_id"].as_str().unwrap();
    let (status, body) = s
        .post_json("/compare", &json!({"image_id_a": id, "image_id_b": id}))
        .await;
    assert_eq!(status, 200, "{body}");
    let results = body["results"].as_array().unwrap();
    assert_eq!(results.len(), 3);
    for r in results {
        assert_eq!(r["score"], 0.0, "{r}");
        assert_eq!(r["best_shift"], 0);
        assert_eq!(r["ftm"], false);
        let url = r["heatmap_url"].as_str().unwrap();
        let resp = s.get(url.trim_start_matches("/v1")).await;
        assert_eq!(resp.status().as_u16(), 200);
        assert_eq!(resp.headers()["content-type"], "image/png");
        let png = resp.bytes().await.unwrap();
        assert!(png.starts_with(b"\x89PNG"));
    }
    let q = &body["quality_a"];
    assert!(q["IRIS_RADIUS"].as_f64().unwrap() > 50.0);
    assert_eq!(body["quality_a"], body["quality_b"]);
}

#[tokio::test]
async fn responses_are_byte_deterministic() {
    let s = start().await;
    let (_, a) = s.upload(&eye(3, 0), "").await;
    let (_, b) = s.upload(&eye(3, 1), "").await;
    let req = json!({"image_id_a": a["image_id"], "image_id_b": b["image_id"], "encoders": ["loggabor1d", "bif"]});
    let mut bodies = Vec::new();
    for _ in 0..2 {
        let resp = s
            .client
            .post(format!("{}/compare", s.base))
            .json(&req)
            .send()
            .await
            .unwrap();
        bodies.push(resp.bytes().await.unwrap());
    }
    assert_eq!(bodies[0], bodies[1]);
    let v: Value = serde_json::from_slice(&bodies[0]).unwrap();
    let score = v["results"][0]["score"].as_f64().unwrap();
    assert!(score < 0.3, "{v}");
}

#[tokio::test]
async fn unknown_ids_are_404() {
    let s = start().await;
    let (status, body) = s
        .post_json("/compare", &json!({"image_id_a": "nope", "image_id_b": "nope"}))
        .await;
    assert_eq!(status, 404);
    assert_eq!(body["error_code"], "NOT_FOUND");
    assert_eq!(s.get("/quality/nope").await.status().as_u16(), 404);
    assert_eq!(s.get("/heatmap/nope/bif").await.status().as_u16(), 404);
    assert_eq!(s.get("/no/such/route").await.status().as_u16(), 404);
}

#[tokio::test]
async fn schema_violations_are_400() {
    let s = start().await;
    let (_, up) = s.upload(&eye(4, 0), "").await;
    let id = up["image_id"].as_str().unwrap();
    for bad in [
        json!({"image_id_a": id}),
        json!({"image_id_a": id, "image_id_b": id, "encoders": ["sift"]}),
        json!({"image_id_a": id, "image_id_b": id, "encoders": []}),
        json!({"image_id_a": id, "image_id_b": id, "extra": 1}),
    ] {
        let (status, body) = s.post_json("/compare", &bad).await;
        assert_eq!(status, 400, "{bad} -> {body}");
        assert!(body["message"].is_string());
    }
    let (status, _) = s
        .post_json("/identify", &json!({"image_id": id, "encoder": "bif", "k": 0}))
        .await;
    assert_eq!(status, 400);
}

#[tokio::test]
async fn unusable_image_is_ftm_not_error() {
    let s = start().await;
    let blank = IrisImage::filled("blank", 640, 480, 90).unwrap();
    let (_, a) = s.upload(&blank, "").await;
    let (_, b) = s.upload(&eye(5, 0), "").await;
    let (status, body) = s
        .post_json(
            "/compare",
            &json!({"image_id_a": a["image_id"], "image_id_b": b["image_id"]}),
        )
        .await;
    assert_eq!(status, 200);
    for r in body["results"].as_array().unwrap() {
        assert_eq!(r["ftm"], true);
        assert!(r["score"].is_null());
        assert!(r["heatmap_url"].is_null());
        assert!(r["ftm_reason"].is_string());
    }
    assert!(body["quality_a"].is_null());
    let resp = s.get(&format!("/quality/{}", a["image_id"].as_str().unwrap())).await;
    assert_eq!(resp.status().as_u16(), 422);
}

#[tokio::test]
async fn identify_ranks_enrolled_mate_first() {
    let s = start().await;
    let (_, probe) = s.upload(&eye(7, 1), "sample_id=p&subject_id=seven").await;
    let (status, empty) = s
        .post_json(
            "/identify",
            &json!({"image_id": probe["image_id"], "encoder": "loggabor1d", "k": 3}),
        )
        .await;
    assert_eq!(status, 200);
    assert_eq!(empty["candidates"], json!([]));

    for (seed, sid) in [(7, "seven"), (8, "eight"), (9, "nine")] {
        let (_, up) = s
            .upload(&eye(seed, 0), &format!("sample_id={sid}_0&subject_id={sid}"))
            .await;
        let (status, body) = s
            .post_json(
                "/gallery",
                &json!({"image_id": up["image_id"], "encoder": "loggabor1d"}),
            )
            .await;
        assert_eq!(status, 201, "{body}");
        let (status, _) = s
            .post_json(
                "/gallery",
                &json!({"image_id": up["image_id"], "encoder": "loggabor1d"}),
            )
            .await;
        assert_eq!(status, 409);
    }
    let list: Value = s.get("/gallery").await.json().await.unwrap();
    assert_eq!(list["entries"].as_array().unwrap().len(), 3);

    let (status, body) = s
        .post_json(
            "/identify",
            &json!({"image_id": probe["image_id"], "encoder": "loggabor1d", "k": 2}),
        )
        .await;
    assert_eq!(status, 200);
    let cands = body["candidates"].as_array().unwrap();
    assert_eq!(cands.len(), 2);
    assert_eq!(cands[0]["subject_id"], "seven");
    assert_eq!(cands[0]["rank"], 1);
}
