#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use memo_core::gapgen::{build_gap_dataset, BuildOptions, Mask};
use memo_core::image::encode_png;
use memo_core::selector::train_selector;
use memo_core::synthetic::{with_alpha, BrightnessTransfer, SyntheticTask};
use memo_core::{GapMeta, ImageTensor, Oracle, ScorerModel, SeedCatalog, SelectorModel, TrainConfig};
use memo_service::{router, AppState, Store};
use tower::ServiceExt;

pub const SIZE: (usize, usize) = (32, 32);
pub const DELTAS: [f64; 6] = [0.15, 0.1, 0.05, -0.05, -0.1, -0.15];

pub struct Fixture {
    pub state: Arc<AppState>,
    pub app: Router,
    pub dir: tempfile::TempDir,
}

type Trained = (SelectorModel, SeedCatalog);

/// Selectors are trained once per seed set and shared between tests.
fn trained(deltas: &[f64]) -> Trained {
    static CACHE: OnceLock<Mutex<HashMap<String, Trained>>> = OnceLock::new();
    let key = format!("{deltas:?}");
    let mut cache = CACHE.get_or_init(Default::default).lock().unwrap();
    cache.entry(key).or_insert_with(|| train(deltas)).clone()
}

fn train(deltas: &[f64]) -> Trained {
    let task = SyntheticTask::new((60, 0, 0), deltas, SIZE, 11).unwrap();
    let scorer = ScorerModel::oracle(Oracle::Brightness);
    let synth = with_alpha(&BrightnessTransfer, 2.0);
    let gaps = build_gap_dataset(
        &task.train,
        &task.catalog,
        &scorer,
        &synth,
        &Mask::full(task.train.len(), task.catalog.len()),
        GapMeta::new(1.0, 0, "M", 2.0),
        &BuildOptions::default(),
    )
    .unwrap();
    let config = TrainConfig {
        iterations: 150,
        batch_size: 32,
        input_size: (16, 16),
        rng_seed: 5,
        ..TrainConfig::selector()
    };
    (train_selector(&gaps, None, &task.train, &config).unwrap(), task.catalog)
}

/// Brightness-oracle pipeline with a selector trained on `deltas`.
pub fn fixture(deltas: &[f64]) -> Fixture {
    let (selector, catalog) = trained(deltas);
    let scorer = ScorerModel::oracle(Oracle::Brightness);
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let state = Arc::new(
        AppState::new(scorer, selector, catalog, Arc::new(BrightnessTransfer), store, SIZE)
            .unwrap()
            .with_max_upload_bytes(64 << 10),
    );
    Fixture {
        app: router(state.clone()),
        state,
        dir,
    }
}

pub fn gray_png(level: f64) -> Vec<u8> {
    encode_png(&ImageTensor::gray(SIZE.0, SIZE.1, level).unwrap()).unwrap()
}

pub async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, body)
}

pub async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

pub async fn post_bytes(app: &Router, uri: &str, bytes: Vec<u8>) -> (StatusCode, Vec<u8>) {
    send(app, Request::post(uri).body(Body::from(bytes)).unwrap()).await
}

pub async fn post_json(app: &Router, uri: &str, json: serde_json::Value) -> (StatusCode, Vec<u8>) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(json.to_string()))
        .unwrap();
    send(app, req).await
}

pub fn json(body: &[u8]) -> serde_json::Value {
    serde_json::from_slice(body).unwrap()
}

pub async fn upload(app: &Router, bytes: Vec<u8>) -> String {
    let (status, body) = post_bytes(app, "/images", bytes).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    json(&body)["image_id"].as_str().unwrap().to_string()
}
