mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::http::StatusCode;
use common::*;
use memo_core::image::decode_image;
use memo_core::{ImageTensor, Oracle, StyleSeed, Synthesizer};
use memo_service::{router, AppState, Store};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[tokio::test]
async fn health_reports_catalog_size() {
    let f = fixture(&DELTAS);
    let (status, body) = get(&f.app, "/health").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json(&body)["seeds"], 6);
}

#[tokio::test]
async fn upload_scores_and_stores() {
    let f = fixture(&DELTAS);
    let bytes = gray_png(0.3);
    let (status, body) = post_bytes(&f.app, "/images", bytes.clone()).await;
    assert_eq!(status, StatusCode::OK);
    let v = json(&body);
    let score = v["memorability"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&score));
    let expected = Oracle::Brightness.score(&decode_image(&bytes, SIZE).unwrap());
    assert_eq!(score, expected);

    let id = v["image_id"].as_str().unwrap();
    let (status, info) = get(&f.app, &format!("/images/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json(&info)["memorability"].as_f64().unwrap(), score);

    let again = upload(&f.app, bytes).await;
    assert_ne!(again, id);
}

#[tokio::test]
async fn bad_uploads_are_rejected_without_state() {
    let f = fixture(&DELTAS);
    let (status, _) = post_bytes(&f.app, "/images", b"not an image".to_vec()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = post_bytes(&f.app, "/images", vec![0u8; 200 << 10]).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    let stored = std::fs::read_dir(f.dir.path().join("images")).unwrap().count();
    assert_eq!(stored, 0);
}

#[tokio::test]
async fn recommendations_follow_known_shifts() {
    let f = fixture(&DELTAS);
    let id = upload(&f.app, gray_png(0.5)).await;
    let (status, body) = get(&f.app, &format!("/images/{id}/recommendations?q=3")).await;
    assert_eq!(status, StatusCode::OK);
    let v = json(&body);
    let ids: Vec<&str> = v["recommendations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["seed_id"].as_str().unwrap())
        .collect();
    assert_eq!(ids, ["seed-0000", "seed-0001", "seed-0002"]);
    assert_eq!(v["keep_original"], false);

    let (_, again) = get(&f.app, &format!("/images/{id}/recommendations?q=3")).await;
    assert_eq!(again, body);

    let (_, full) = get(&f.app, &format!("/images/{id}/recommendations")).await;
    assert_eq!(json(&full)["recommendations"].as_array().unwrap().len(), 6);
    for r in json(&full)["recommendations"].as_array().unwrap() {
        let (status, _) = get(&f.app, r["thumbnail_url"].as_str().unwrap()).await;
        assert_eq!(status, StatusCode::OK);
    }

    for q in ["0", "7", "x"] {
        let (status, _) = get(&f.app, &format!("/images/{id}/recommendations?q={q}")).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "q={q}");
    }
    let (status, _) = get(&f.app, &format!("/images/{}/recommendations", "0".repeat(32))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn keep_original_flag_is_surfaced() {
    let f = fixture(&[-0.15, -0.2]);
    let id = upload(&f.app, gray_png(0.5)).await;
    let (_, body) = get(&f.app, &format!("/images/{id}/recommendations?q=2")).await;
    let v = json(&body);
    assert_eq!(v["keep_original"], true);
    assert_eq!(v["recommendations"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn http_ranking_equals_library_ranking() {
    let f = fixture(&DELTAS);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..10 {
        let level: f64 = rng.random_range(0.3..0.7);
        let px = (0..3 * SIZE.0 * SIZE.1)
            .map(|_| (level + rng.random_range(-0.1..0.1)).clamp(0.0, 1.0))
            .collect();
        let bytes = memo_core::image::encode_png(&ImageTensor::new(SIZE.0, SIZE.1, px).unwrap()).unwrap();
        let id = upload(&f.app, bytes.clone()).await;
        let (_, body) = get(&f.app, &format!("/images/{id}/recommendations")).await;
        let served: Vec<(String, f64)> = json(&body)["recommendations"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| (r["seed_id"].as_str().unwrap().to_string(), r["predicted_gap"].as_f64().unwrap()))
            .collect();
        let library = f.state.selector.rank(&decode_image(&bytes, SIZE).unwrap()).unwrap();
        let expected: Vec<(String, f64)> = library.entries.into_iter().map(|e| (e.seed_id, e.predicted_gap)).collect();
        assert_eq!(served, expected);
    }
}

#[tokio::test]
async fn synthesize_stores_scored_results() {
    let f = fixture(&DELTAS);
    let id = upload(&f.app, gray_png(0.5)).await;
    let uri = format!("/images/{id}/synthesize");
    let (status, body) = post_json(&f.app, &uri, serde_json::json!({ "seed_id": "seed-0001" })).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let v = json(&body);
    assert_eq!(v["alpha"], 2.0);
    // Brightness transfer at alpha 2 moves two thirds of the way to the seed.
    let original = v["original_memorability"].as_f64().unwrap();
    let expected_gap = 2.0 / 3.0 * (0.5 + DELTAS[1] - original);
    assert!((v["measured_gap"].as_f64().unwrap() - expected_gap).abs() < 1e-9);
    assert!(v["predicted_gap"].as_f64().is_some());

    let (status, png) = get(&f.app, v["result_url"].as_str().unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(memo_core::image::decode_image(&png, SIZE).unwrap().dims(), SIZE);
    let img = image_dims(&png);
    assert_eq!(img, (SIZE.1 as u32, SIZE.0 as u32));

    let (status, info) = get(&f.app, &format!("/results/{}/info", v["result_id"].as_str().unwrap())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json(&info)["seed_id"], "seed-0001");
    assert_eq!(json(&info)["image_id"], id.as_str());

    let (_, second) = post_json(&f.app, &uri, serde_json::json!({ "seed_id": "seed-0001", "alpha": 2.0 })).await;
    let (_, png2) = get(&f.app, json(&second)["result_url"].as_str().unwrap()).await;
    assert_eq!(png, png2);
}

fn image_dims(png: &[u8]) -> (u32, u32) {
    // Width and height sit at fixed offsets in the IHDR chunk.
    let be = |o: usize| u32::from_be_bytes(png[o..o + 4].try_into().unwrap());
    (be(16), be(20))
}

#[tokio::test]
async fn synthesize_validates_inputs() {
    let f = fixture(&DELTAS);
    let id = upload(&f.app, gray_png(0.5)).await;
    let uri = format!("/images/{id}/synthesize");
    let (status, _) = post_json(&f.app, &uri, serde_json::json!({ "seed_id": "nope" })).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    for alpha in [0.0, -1.0] {
        let (status, _) = post_json(&f.app, &uri, serde_json::json!({ "seed_id": "seed-0000", "alpha": alpha })).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
    }
    let (status, _) = post_json(&f.app, &uri, serde_json::json!({ "alpha": 1.0 })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let missing = format!("/images/{}/synthesize", "f".repeat(32));
    let (status, _) = post_json(&f.app, &missing, serde_json::json!({ "seed_id": "seed-0000" })).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = get(&f.app, &format!("/results/{}", "a".repeat(32))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn seeds_are_listed_in_catalog_order() {
    let f = fixture(&DELTAS);
    let (status, body) = get(&f.app, "/seeds").await;
    assert_eq!(status, StatusCode::OK);
    let list = json(&body);
    let list = list.as_array().unwrap();
    assert_eq!(list.len(), 6);
    for (i, entry) in list.iter().enumerate() {
        assert_eq!(entry["seed_id"], format!("seed-{i:04}"));
        let (status, png) = get(&f.app, entry["thumbnail_url"].as_str().unwrap()).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(image_dims(&png), (128, 128));
    }
    let (status, _) = get(&f.app, "/seeds/unknown/thumbnail").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

/// Synthesizer that takes a while, to check other requests keep flowing.
struct Slow;

impl Synthesizer for Slow {
    fn synthesize(&self, content: &ImageTensor, _seed: &StyleSeed, _alpha: f64) -> memo_core::Result<ImageTensor> {
        std::thread::sleep(Duration::from_millis(1500));
        Ok(content.clone())
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn slow_synthesis_does_not_block_recommendations() {
    let Fixture { state, app, dir } = fixture(&DELTAS);
    drop(app);
    let state = Arc::try_unwrap(state).ok().expect("single owner");
    let store = Store::open(dir.path()).unwrap();
    let slow = Arc::new(
        AppState::new(state.scorer, state.selector, state.catalog, Arc::new(Slow), store, SIZE).unwrap(),
    );
    let app = router(slow);
    let id = upload(&app, gray_png(0.5)).await;

    let synth_app = app.clone();
    let uri = format!("/images/{id}/synthesize");
    let synth = tokio::spawn(async move {
        post_json(&synth_app, &uri, serde_json::json!({ "seed_id": "seed-0000" })).await;
        Instant::now()
    });
    tokio::time::sleep(Duration::from_millis(100)).await;
    let (status, _) = get(&app, &format!("/images/{id}/recommendations?q=1")).await;
    let recommended_at = Instant::now();
    assert_eq!(status, StatusCode::OK);
    let synthesized_at = synth.await.unwrap();
    assert!(recommended_at < synthesized_at);
}
