use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use base64::Engine as _;
use serde_json::{json, Value};
use som_core::ingest::SegmenterResponse;
use som_core::mask::BBox;
use som_core::{BinaryMask, Region, RegionSet};
use som_gateway::{CacheMode, ChatRequest, Gateway, Part, ScriptedTransport, SegmenterClient};
use som_playground::{router, AppState, PlaygroundConfig};
use tower::ServiceExt;

const W: u32 = 48;
const H: u32 = 32;

fn image_b64() -> String {
    let img = image::RgbImage::from_fn(W, H, |x, y| image::Rgb([(x * 5) as u8, (y * 7) as u8, 90]));
    let mut png = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
        .unwrap();
    base64::engine::general_purpose::STANDARD.encode(png)
}

/// Three disjoint boxes with ids 1, 2, 3.
fn three_boxes() -> RegionSet {
    let boxes = [(1, 2, 14, 14), (18, 2, 30, 14), (2, 18, 44, 30)];
    let regions = boxes
        .iter()
        .enumerate()
        .map(|(i, &(x0, y0, x1, y1))| {
            let m = BinaryMask::from_box(W, H, BBox::new(x0, y0, x1, y1).unwrap()).unwrap();
            Region::new(i as u32 + 1, m).unwrap()
        })
        .collect();
    RegionSet::new(W, H, regions).unwrap()
}

type Seen = Arc<Mutex<Vec<ChatRequest>>>;

struct Harness {
    app: Router,
    seen: Seen,
    _export: tempfile::TempDir,
    export_dir: std::path::PathBuf,
}

fn harness_with(transport: ScriptedTransport, seen: Seen) -> Harness {
    let gw = Gateway::builder(Arc::new(transport))
        .mode(CacheMode::Live)
        .build()
        .unwrap();
    let export = tempfile::tempdir().unwrap();
    let config = PlaygroundConfig {
        model: "mock".into(),
        export_dir: export.path().to_path_buf(),
        ..PlaygroundConfig::default()
    };
    let state = AppState::new(gw, SegmenterClient::new(2, Duration::from_secs(5)), config);
    Harness {
        app: router(state),
        seen,
        export_dir: export.path().to_path_buf(),
        _export: export,
    }
}

/// Model that records each request and answers with `reply`.
fn harness(reply: &'static str) -> Harness {
    let seen: Seen = Arc::default();
    let s = seen.clone();
    let t = ScriptedTransport::new(move |req| {
        s.lock().unwrap().push(req.clone());
        Ok(reply.to_string())
    });
    harness_with(t, seen)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req
            .header("content-type", "application/json")
            .body(Body::from(v.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, bytes.to_vec())
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    let v = if b.is_empty() { Value::Null } else { serde_json::from_slice(&b).unwrap() };
    (s, v)
}

async fn create(app: &Router, rs: &RegionSet) -> Value {
    let body = json!({"image": image_b64(), "regions": SegmenterResponse::from_region_set(rs)});
    let (s, v) = call_json(app, "POST", "/sessions", Some(body)).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v
}

fn last_user_text(req: &ChatRequest) -> String {
    req.turns
        .last()
        .unwrap()
        .parts
        .iter()
        .find_map(|p| match p {
            Part::Text { text } => Some(text.clone()),
            _ => None,
        })
        .unwrap()
}

fn mark_texts(view: &Value) -> Vec<String> {
    view["manifest"]["entries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["mark_text"].as_str().unwrap().to_string())
        .collect()
}

#[tokio::test]
async fn create_assigns_one_unique_mark_per_region() {
    let h = harness("ok");
    let v = create(&h.app, &three_boxes()).await;
    let mut texts = mark_texts(&v);
    assert_eq!(texts.len(), 3);
    texts.sort();
    texts.dedup();
    assert_eq!(texts, ["1", "2", "3"]);
    assert_eq!(v["revision"], 1);
    assert!(v["preview_url"].as_str().unwrap().starts_with("/sessions/"));
}

#[tokio::test]
async fn create_from_coco_file() {
    let h = harness("ok");
    let dir = tempfile::tempdir().unwrap();
    let coco = json!({
        "images": [{"id": 7, "width": W, "height": H, "file_name": "a.png"}],
        "annotations": [
            {"id": 1, "image_id": 7, "category_id": 1, "segmentation": [[2.0, 2.0, 20.0, 2.0, 20.0, 20.0, 2.0, 20.0]], "area": 324.0, "bbox": [2, 2, 18, 18], "iscrowd": 0},
            {"id": 2, "image_id": 7, "category_id": 1, "segmentation": [[24.0, 4.0, 44.0, 4.0, 44.0, 28.0, 24.0, 28.0]], "area": 480.0, "bbox": [24, 4, 20, 24], "iscrowd": 0}
        ],
        "categories": [{"id": 1, "name": "thing"}]
    });
    std::fs::write(dir.path().join("ann.json"), coco.to_string()).unwrap();
    let body = json!({
        "image": image_b64(),
        "source": {"kind": "coco_json", "path": dir.path().join("ann.json"), "image_id": 7}
    });
    let (s, v) = call_json(&h.app, "POST", "/sessions", Some(body)).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    assert_eq!(mark_texts(&v).len(), 2);
}

#[tokio::test]
async fn empty_partition_still_allows_chat() {
    let h = harness("There is nothing marked here.");
    let (s, v) = call_json(&h.app, "POST", "/sessions", Some(json!({"image": image_b64()}))).await;
    assert_eq!(s, StatusCode::CREATED);
    assert!(mark_texts(&v).is_empty());
    let id = v["id"].as_str().unwrap();
    let (s, r) = call_json(&h.app, "POST", &format!("/sessions/{id}/chat"), Some(json!({"text": "hi"}))).await;
    assert_eq!(s, StatusCode::OK, "{r}");
    assert_eq!(r["grounded"]["triplets"].as_array().unwrap().len(), 0);
}

#[tokio::test]
async fn bad_image_is_rejected() {
    let h = harness("ok");
    let (s, v) = call_json(&h.app, "POST", "/sessions", Some(json!({"image": "bm90IGFuIGltYWdl"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "bad_image");
}

#[tokio::test]
async fn answer_mentioning_a_mark_binds_to_its_region() {
    let h = harness("3: plate");
    let v = create(&h.app, &three_boxes()).await;
    let id = v["id"].as_str().unwrap();
    let (s, r) = call_json(
        &h.app,
        "POST",
        &format!("/sessions/{id}/chat"),
        Some(json!({"text": "What is on the table?"})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{r}");
    let t = &r["grounded"]["triplets"];
    assert_eq!(t.as_array().unwrap().len(), 1);
    assert_eq!(t[0]["region_id"], 3);
    assert_eq!(t[0]["mark_text"], "3");
    assert_eq!(t[0]["payload"], "plate");
    assert_eq!(r["highlights"], json!([3]));
    assert_eq!(r["stale"], false);

    // The model saw the marked preview, not the raw image.
    let (_, preview) = call(&h.app, "GET", &format!("/sessions/{id}/preview.png"), None).await;
    let seen = h.seen.lock().unwrap();
    let sent_png = seen[0].turns[0].parts.iter().find_map(|p| match p {
        Part::ImagePng { png } => Some(png.clone()),
        _ => None,
    });
    assert_eq!(sent_png.unwrap(), preview);
}

#[tokio::test]
async fn answer_without_marks_has_no_triplets() {
    let h = harness("It is a sunny day.");
    let v = create(&h.app, &three_boxes()).await;
    let id = v["id"].as_str().unwrap();
    let (_, r) = call_json(&h.app, "POST", &format!("/sessions/{id}/chat"), Some(json!({"text": "Weather?"}))).await;
    assert_eq!(r["text"], "It is a sunny day.");
    assert!(r["grounded"]["mentions"].as_array().unwrap().is_empty());
    assert!(r["highlights"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn template_placeholders_become_mark_text() {
    let h = harness("A cup.");
    let v = create(&h.app, &three_boxes()).await;
    let id = v["id"].as_str().unwrap();
    let (s, r) = call_json(
        &h.app,
        "POST",
        &format!("/sessions/{id}/chat"),
        Some(json!({"template": "What is in {A}?", "bindings": {"A": 3}})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{r}");
    assert_eq!(r["outgoing_text"], "What is in 3?");
    assert_eq!(last_user_text(&h.seen.lock().unwrap()[0]), "What is in 3?");

    let (s, _) = call_json(
        &h.app,
        "POST",
        &format!("/sessions/{id}/chat"),
        Some(json!({"template": "What is in {A}?", "bindings": {"A": 99}})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn move_and_relabel_rerender_the_preview() {
    let h = harness("ok");
    let v = create(&h.app, &three_boxes()).await;
    let id = v["id"].as_str().unwrap();
    let (_, before) = call(&h.app, "GET", &format!("/sessions/{id}/preview.png"), None).await;

    let (s, e) = call_json(
        &h.app,
        "POST",
        &format!("/sessions/{id}/edits"),
        Some(json!({"op": "move", "region_id": 3, "x": 40, "y": 26})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{e}");
    assert_eq!(e["revision"], 2);
    let entry = e["manifest"]["entries"]
        .as_array()
        .unwrap()
        .iter()
        .find(|x| x["region_id"] == 3)
        .unwrap()
        .clone();
    assert_eq!(entry["location"]["x"], 40);
    assert_eq!(entry["location"]["y"], 26);
    let (_, after) = call(&h.app, "GET", &format!("/sessions/{id}/preview.png"), None).await;
    assert_ne!(before, after);

    let (s, e) = call_json(
        &h.app,
        "POST",
        &format!("/sessions/{id}/edits"),
        Some(json!({"op": "relabel", "region_id": 1, "mark_text": "7"})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{e}");
    let mut texts = mark_texts(&e);
    texts.sort();
    assert_eq!(texts, ["2", "3", "7"]);

    // Duplicate text is refused and the session is unchanged.
    let (s, err) = call_json(
        &h.app,
        "POST",
        &format!("/sessions/{id}/edits"),
        Some(json!({"op": "relabel", "region_id": 2, "mark_text": "7"})),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(err["error"], "duplicate_mark");
    let (_, now) = call_json(&h.app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(now["revision"], 3);
}

#[tokio::test]
async fn removed_mark_no_longer_grounds() {
    let h = harness("2: bowl\n3: plate");
    let v = create(&h.app, &three_boxes()).await;
    let id = v["id"].as_str().unwrap();
    let (s, _) = call_json(
        &h.app,
        "POST",
        &format!("/sessions/{id}/edits"),
        Some(json!({"op": "remove", "region_id": 2})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let (_, r) = call_json(&h.app, "POST", &format!("/sessions/{id}/chat"), Some(json!({"text": "?"}))).await;
    let ids: Vec<u64> = r["grounded"]["triplets"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["region_id"].as_u64().unwrap())
        .collect();
    assert_eq!(ids, [3]);

    let (s, _) = call_json(
        &h.app,
        "POST",
        &format!("/sessions/{id}/edits"),
        Some(json!({"op": "remove", "region_id": 2})),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn answer_to_an_edited_layout_is_marked_stale() {
    let seen: Seen = Arc::default();
    let t = ScriptedTransport::fixed("1: cup\n2: saucer").with_delay(Duration::from_millis(300));
    let h = harness_with(t, seen);
    let v = create(&h.app, &three_boxes()).await;
    let id = v["id"].as_str().unwrap().to_string();

    let app = h.app.clone();
    let chat_uri = format!("/sessions/{id}/chat");
    let pending = tokio::spawn(async move { call_json(&app, "POST", &chat_uri, Some(json!({"text": "?"}))).await });
    tokio::time::sleep(Duration::from_millis(50)).await;
    let (s, _) = call_json(
        &h.app,
        "POST",
        &format!("/sessions/{id}/edits"),
        Some(json!({"op": "remove", "region_id": 1})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);

    let (s, r) = pending.await.unwrap();
    assert_eq!(s, StatusCode::OK, "{r}");
    assert_eq!(r["stale"], true);
    assert_eq!(r["answered_revision"], 1);
    // Only the surviving region is still highlighted.
    assert_eq!(r["highlights"], json!([2]));

    let (_, view) = call_json(&h.app, "GET", &format!("/sessions/{id}"), None).await;
    let conv = view["conversation"].as_array().unwrap();
    assert_eq!(conv.len(), 2);
    assert_eq!(conv[1]["stale"], true);
}

#[tokio::test]
async fn accumulated_context_replays_history_and_fresh_does_not() {
    let h = harness("1: cup");
    let v = create(&h.app, &three_boxes()).await;
    let id = v["id"].as_str().unwrap();
    let uri = format!("/sessions/{id}/chat");
    call_json(&h.app, "POST", &uri, Some(json!({"text": "first"}))).await;
    call_json(&h.app, "POST", &uri, Some(json!({"text": "second"}))).await;
    call_json(&h.app, "POST", &uri, Some(json!({"text": "third", "fresh": true}))).await;
    let seen = h.seen.lock().unwrap();
    assert_eq!(seen[0].turns.len(), 1);
    assert_eq!(seen[1].turns.len(), 3);
    assert_eq!(seen[1].turns[0].parts, vec![Part::text("first")]);
    assert_eq!(seen[2].turns.len(), 1);
}

#[tokio::test]
async fn sessions_are_isolated() {
    let h = harness("1: cup");
    let a = create(&h.app, &three_boxes()).await;
    let b = create(&h.app, &three_boxes()).await;
    let (a, b) = (a["id"].as_str().unwrap(), b["id"].as_str().unwrap());
    assert_ne!(a, b);
    call_json(
        &h.app,
        "POST",
        &format!("/sessions/{a}/edits"),
        Some(json!({"op": "remove", "region_id": 1})),
    )
    .await;
    call_json(&h.app, "POST", &format!("/sessions/{a}/chat"), Some(json!({"text": "?"}))).await;
    let (_, vb) = call_json(&h.app, "GET", &format!("/sessions/{b}"), None).await;
    assert_eq!(vb["revision"], 1);
    assert_eq!(mark_texts(&vb).len(), 3);
    assert!(vb["conversation"].as_array().unwrap().is_empty());

    let (s, e) = call_json(&h.app, "GET", "/sessions/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(e["error"], "no_session");
}

#[tokio::test]
async fn cross_origin_requests_are_allowed() {
    let h = harness("ok");
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/sessions")
        .header("origin", "http://localhost:5173")
        .header("access-control-request-method", "POST")
        .body(Body::empty())
        .unwrap();
    let resp = h.app.clone().oneshot(req).await.unwrap();
    assert!(resp.status().is_success());
    assert!(resp.headers().contains_key("access-control-allow-origin"));
}

#[tokio::test]
async fn preview_is_a_png_of_the_image_size() {
    let h = harness("ok");
    let v = create(&h.app, &three_boxes()).await;
    let id = v["id"].as_str().unwrap();
    let req = Request::get(format!("/sessions/{id}/preview.png")).body(Body::empty()).unwrap();
    let resp = h.app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["content-type"], "image/png");
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let img = image::load_from_memory(&bytes).unwrap();
    assert_eq!((img.width(), img.height()), (W, H));
}

#[tokio::test]
async fn export_writes_session_files() {
    let h = harness("1: cup");
    let v = create(&h.app, &three_boxes()).await;
    let id = v["id"].as_str().unwrap();
    call_json(&h.app, "POST", &format!("/sessions/{id}/chat"), Some(json!({"text": "?"}))).await;
    let (s, r) = call_json(&h.app, "POST", &format!("/sessions/{id}/export"), None).await;
    assert_eq!(s, StatusCode::OK, "{r}");
    let dir = h.export_dir.join(id);
    for f in ["session.json", "image.png", "preview.png"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let doc: Value = serde_json::from_slice(&std::fs::read(dir.join("session.json")).unwrap()).unwrap();
    assert_eq!(doc["conversation"].as_array().unwrap().len(), 2);
    assert_eq!(doc["texts"].as_array().unwrap().len(), 3);
}

/// Segmenter returning the box under the first click, or all boxes.
async fn segmenter(Json(body): Json<Value>) -> Json<Value> {
    let rs = three_boxes();
    let keep: Vec<Region> = match body["points"].as_array() {
        Some(pts) if body["mode"] == "interactive" => {
            let p = &pts[0];
            let (x, y) = (p[0].as_u64().unwrap() as u32, p[1].as_u64().unwrap() as u32);
            rs.regions().iter().filter(|r| r.mask().get(x, y)).cloned().collect()
        }
        _ => rs.regions().to_vec(),
    };
    Json(serde_json::to_value(SegmenterResponse::from_region_set(&RegionSet::new(W, H, keep).unwrap())).unwrap())
}

async fn serve_segmenter() -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = Router::new().route("/segment", post(segmenter));
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}/segment")
}

#[tokio::test]
async fn one_click_session_has_a_single_region() {
    let h = harness("ok");
    let url = serve_segmenter().await;
    let body = json!({
        "image": image_b64(),
        "source": {"kind": "remote", "endpoint": url, "mode": {"type": "interactive_points", "points": [[20, 8]]}}
    });
    let (s, v) = call_json(&h.app, "POST", "/sessions", Some(body)).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    let entries = v["manifest"]["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 1);
    // The mark sits inside the clicked box.
    let (x, y) = (entries[0]["location"]["x"].as_u64().unwrap(), entries[0]["location"]["y"].as_u64().unwrap());
    assert!((18..=30).contains(&x) && (2..=14).contains(&y), "({x}, {y})");
}

#[tokio::test]
async fn add_mark_segments_at_the_click() {
    let h = harness("ok");
    let url = serve_segmenter().await;
    let body = json!({
        "image": image_b64(),
        "source": {"kind": "remote", "endpoint": url, "mode": {"type": "interactive_points", "points": [[5, 5]]}}
    });
    let (_, v) = call_json(&h.app, "POST", "/sessions", Some(body)).await;
    let id = v["id"].as_str().unwrap();
    let (s, e) = call_json(
        &h.app,
        "POST",
        &format!("/sessions/{id}/edits"),
        Some(json!({"op": "add", "x": 30, "y": 25})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{e}");
    let mut texts = mark_texts(&e);
    texts.sort();
    assert_eq!(texts, ["1", "2"]);

    // Sessions without a segmenter cannot add.
    let plain = create(&h.app, &three_boxes()).await;
    let pid = plain["id"].as_str().unwrap();
    let (s, _) = call_json(
        &h.app,
        "POST",
        &format!("/sessions/{pid}/edits"),
        Some(json!({"op": "add", "x": 30, "y": 25})),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
}
