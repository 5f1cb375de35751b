use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use explore_core::catalog::{Catalog, SongAttributes};
use explore_core::mf::MfConfig;
use explore_core::selector::{CuratedPlaylist, PlaylistName};
use explore_core::snapshot::{ModelSnapshot, SnapshotConfig};
use explore_core::RatingMatrix;
use explore_service::{router, AppState};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

fn song(id: &str, title: &str, genre: &str, f: [f64; 5]) -> SongAttributes {
    SongAttributes {
        song_id: id.into(),
        title: title.into(),
        artist: "Artist".into(),
        genre: genre.into(),
        danceability: f[0],
        energy: f[1],
        instrumentalness: f[2],
        liveness: f[3],
        duration_minutes: f[4],
    }
}

/// Three listeners: b agrees with a exactly, c is a's mirror image. Only
/// s5 is unrated by a.
fn toy() -> ModelSnapshot {
    let matrix = RatingMatrix::from_triplets([
        ("a", "s1", 5.0f32),
        ("a", "s2", 5.0),
        ("a", "s3", 1.0),
        ("a", "s4", 1.0),
        ("b", "s1", 4.0),
        ("b", "s2", 4.0),
        ("b", "s3", 2.0),
        ("b", "s4", 2.0),
        ("b", "s5", 5.0),
        ("c", "s1", 1.0),
        ("c", "s2", 1.0),
        ("c", "s3", 5.0),
        ("c", "s4", 5.0),
        ("c", "s5", 2.0),
    ])
    .unwrap();
    let catalog = Catalog::new(vec![
        song("s1", "First", "rock", [0.1, 0.2, 0.3, 0.4, 3.0]),
        song("s2", "Second", "rock", [0.2, 0.3, 0.4, 0.5, 3.5]),
        song("s3", "Third", "jazz", [0.9, 0.8, 0.1, 0.1, 4.0]),
        song("s4", "Fourth", "jazz", [0.8, 0.7, 0.2, 0.2, 4.5]),
        song("s5", "Fifth", "pop", [0.5, 0.9, 0.0, 0.3, 3.0]),
    ])
    .unwrap();
    let curated = CuratedPlaylist::new(
        PlaylistName::BestOf2022,
        vec![
            song("x1", "Far", "pop", [0.1, 0.1, 0.9, 0.9, 6.0]),
            song("x2", "Near", "pop", [0.5, 0.9, 0.0, 0.3, 3.0]),
        ],
    )
    .unwrap();
    ModelSnapshot::build(matrix, catalog, vec![curated], SnapshotConfig::default()).unwrap()
}

/// Denser corpus with MF and enough songs for the latent mapper.
fn larger() -> ModelSnapshot {
    let genres = ["rock", "jazz", "pop"];
    let mut triplets = Vec::new();
    for u in 0..12 {
        for s in 0..16 {
            if (u + 2 * s) % 4 != 0 {
                let r = 1.0 + ((u * 7 + s * 3) % 5) as f32;
                triplets.push((format!("u{u}"), format!("s{s}"), r));
            }
        }
    }
    let matrix = RatingMatrix::from_triplets(triplets).unwrap();
    let catalog = Catalog::new(
        (0..16)
            .map(|s| {
                let x = s as f64;
                song(
                    &format!("s{s}"),
                    &format!("Song {s}"),
                    genres[s % 3],
                    [(x * 0.13) % 1.0, (x * 0.29) % 1.0, (x * 0.07) % 1.0, (x * 0.41) % 1.0, 2.0 + x * 0.25],
                )
            })
            .collect(),
    )
    .unwrap();
    let config = SnapshotConfig {
        mf: Some(MfConfig {
            dims: 3,
            epochs: 40,
            ..MfConfig::default()
        }),
        ..SnapshotConfig::default()
    };
    ModelSnapshot::build(matrix, catalog, Vec::new(), config).unwrap()
}

async fn call(state: &Arc<AppState>, method: &str, uri: &str, body: &str) -> (StatusCode, String) {
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .body(Body::from(body.to_string()))
        .unwrap();
    let response = router(state.clone()).oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

async fn get_json(state: &Arc<AppState>, uri: &str) -> (StatusCode, Value) {
    let (status, body) = call(state, "GET", uri, "").await;
    (status, serde_json::from_str(&body).unwrap())
}

fn state(snapshot: ModelSnapshot) -> Arc<AppState> {
    Arc::new(AppState::new(Some(snapshot)))
}

#[tokio::test]
async fn health_reports_snapshot() {
    let (status, body) = get_json(&state(toy()), "/v1/health").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["users"], 3);
    assert_eq!(body["songs"], 5);
    assert_eq!(body["serving"], "cf");
}

#[tokio::test]
async fn no_snapshot_is_503() {
    let empty = Arc::new(AppState::new(None));
    for uri in ["/v1/health", "/v1/users/a/recommendations", "/v1/songs/s1"] {
        let (status, body) = get_json(&empty, uri).await;
        assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
        assert_eq!(body["code"], "no_snapshot");
    }
}

#[tokio::test]
async fn recommendation_for_toy_user() {
    let (status, body) = get_json(&state(toy()), "/v1/users/a/recommendations?k=5&source=nostalgic").await;
    assert_eq!(status, StatusCode::OK);
    let entries = body["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 1);
    let e = &entries[0];
    assert_eq!(e["song_id"], "s5");
    assert_eq!(e["rank"], 1);
    // mean_a + (0.08·(5 − 3.4) − 0.08·(2 − 2.8)) / 0.16 = 3 + 1.2
    assert!((e["score"].as_f64().unwrap() - 4.2).abs() < 1e-6);
    assert_eq!(e["explanation"], "/v1/users/a/explanation?song=s5&algorithm=cf");
}

#[tokio::test]
async fn curated_source_crosswalks() {
    let (status, body) = get_json(&state(toy()), "/v1/users/a/recommendations?source=best_of_2022").await;
    assert_eq!(status, StatusCode::OK);
    let e = &body["entries"][0];
    assert_eq!(e["song_id"], "x2");
    assert_eq!(e["provenance"], "s5");
    assert_eq!(e["explanation"], "/v1/users/a/explanation?song=s5&algorithm=cf");
}

#[tokio::test]
async fn playlist_length_matches_k() {
    let s = state(larger());
    let (status, body) = get_json(&s, "/v1/users/u0/recommendations?k=5&source=nostalgic").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["entries"].as_array().unwrap().len(), 5);
    let (status, body) = get_json(&s, "/v1/users/u2/recommendations?k=3&algorithm=mf&energy=0.2,0.6").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["entries"].as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn bad_requests() {
    let s = state(toy());
    let (status, body) = get_json(&s, "/v1/users/a/recommendations?k=5&energy=0.8,0.2").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "invalid_request");
    assert!(body["message"].as_str().unwrap().contains("energy"));

    for uri in [
        "/v1/users/a/recommendations?energy=high",
        "/v1/users/a/recommendations?k=0",
        "/v1/users/a/recommendations?source=radio",
        "/v1/users/a/recommendations?mood=1,2",
        "/v1/users/a/explanation",
    ] {
        assert_eq!(get_json(&s, uri).await.0, StatusCode::UNPROCESSABLE_ENTITY, "{uri}");
    }

    let (status, body) = get_json(&s, "/v1/users/zed/recommendations").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "unknown_user");
    let (status, body) = get_json(&s, "/v1/users/a/explanation?song=s9").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "unknown_song");
    let (status, body) = get_json(&s, "/v2/nothing").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "not_found");
}

#[tokio::test]
async fn cf_explanation_matches_golden() {
    let (status, body) = call(&state(toy()), "GET", "/v1/users/a/explanation?song=s5", "").await;
    assert_eq!(status, StatusCode::OK);
    let golden = include_str!("fixtures/explanation_cf.json").trim_end();
    assert_eq!(body, golden);
}

#[tokio::test]
async fn mf_explanation_lists_attributes() {
    let (status, body) = get_json(&state(larger()), "/v1/users/u1/explanation?song=s4&algorithm=mf").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["explanation"]["kind"], "FEATURE");
    assert!(!body["explanation"]["attributes"].as_array().unwrap().is_empty());
    assert!(body["graph"].is_null());
}

#[tokio::test]
async fn responses_are_deterministic() {
    let s = state(larger());
    for uri in [
        "/v1/users/u3/recommendations?k=4&liveness=0,0.5",
        "/v1/users/u3/explanation?song=s2&algorithm=cf",
        "/v1/songs/s2",
    ] {
        let first = call(&s, "GET", uri, "").await;
        let second = call(&s, "GET", uri, "").await;
        assert_eq!(first.0, StatusCode::OK, "{uri}: {}", first.1);
        assert_eq!(first, second);
    }
}

#[tokio::test]
async fn song_lookup() {
    let s = state(toy());
    let (status, body) = get_json(&s, "/v1/songs/s5").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["title"], "Fifth");
    assert_eq!(body["listeners"], 2);
    assert_eq!(body["in_corpus"], true);
    assert_eq!(get_json(&s, "/v1/songs/nope").await.0, StatusCode::NOT_FOUND);
}

const SEEDS: &str = "song_id,title,artist,genre,danceability,energy,instrumentalness,liveness,duration_minutes
n1,One,X,rock,0.1,0.2,0.3,0.4,3.0
n2,Two,X,rock,0.2,0.3,0.3,0.4,3.5
n3,Three,X,jazz,0.8,0.7,0.1,0.2,4.0
n4,Four,X,rock,0.5,0.5,0.5,0.5,2.5
n5,Five,X,rock,0.4,0.1,0.6,0.1,5.0
";

#[tokio::test]
async fn coldstart_publishes_new_user() {
    let s = state(larger());
    let (status, body) = call(&s, "POST", "/v1/users:coldstart?user_id=newbie&k=4", SEEDS).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let body: Value = serde_json::from_str(&body).unwrap();
    let user = body["user_id"].as_str().unwrap().to_string();
    assert!(user.starts_with("~cold:"));
    assert_eq!(body["playlist"]["entries"].as_array().unwrap().len(), 4);

    let (status, health) = get_json(&s, "/v1/health").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(health["users"], 13);
    assert_eq!(health["synthetic_users"], 1);

    let encoded = user.replace(':', "%3A").replace('~', "%7E");
    let (status, _) = get_json(&s, &format!("/v1/users/{encoded}/recommendations?k=2")).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn coldstart_rejects_bad_seeds() {
    let s = state(larger());
    for body in ["", "song_id,title\n", "song_id,title,artist,genre,danceability,energy,instrumentalness,liveness,duration_minutes\n"] {
        let (status, text) = call(&s, "POST", "/v1/users:coldstart", body).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body:?}");
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["code"], "invalid_seed_file");
    }
}

#[tokio::test]
async fn coldstart_during_rebuild_conflicts() {
    let s = state(larger());
    let guard = s.begin_rebuild().unwrap();
    let (status, text) = call(&s, "POST", "/v1/users:coldstart?user_id=x", SEEDS).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(text.contains("rebuild_in_progress"));
    // readers still see the published snapshot
    assert_eq!(get_json(&s, "/v1/health").await.1["users"], 12);
    drop(guard);
    assert_eq!(call(&s, "POST", "/v1/users:coldstart?user_id=x", SEEDS).await.0, StatusCode::OK);
}

#[tokio::test]
async fn readers_keep_their_snapshot_across_publish() {
    let s = state(toy());
    let held = s.current().unwrap();
    s.publish(larger());
    assert_eq!(held.matrix.n_users(), 3);
    assert_eq!(get_json(&s, "/v1/health").await.1["users"], 12);
}

#[tokio::test]
async fn saved_snapshot_serves_identical_bodies() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.xpls");
    let snap = larger();
    explore_core::snapshot::save_snapshot(&snap, &path).unwrap();
    let loaded = explore_core::snapshot::load_snapshot(&path, Some(&snap.meta.config_hash)).unwrap();
    let (a, b) = (state(snap), state(loaded));
    for u in 0..12 {
        for alg in ["cf", "mf"] {
            let uri = format!("/v1/users/u{u}/recommendations?k=8&algorithm={alg}");
            assert_eq!(call(&a, "GET", &uri, "").await, call(&b, "GET", &uri, "").await, "{uri}");
        }
    }
}
