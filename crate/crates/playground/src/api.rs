use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::Json;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use som_core::ingest::{
    filter_regions, load_regions, IngestConfig, IngestError, PartitionSource, SegmenterMode, SegmenterResponse,
};
use som_core::parse::{ground, GroundedAnswer};
use som_core::prompt::interleave_marks;
use som_core::render::{Manifest, MarkStyle};
use som_core::{RegionSet, TaskKind};
use som_gateway::{ChatRequest, Part, Turn};

use crate::session::{ContextPolicy, ConversationTurn, MarkEdit, Session, SessionView};
use crate::{ApiError, AppState, SessionSlot};

type AppResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    /// Base64 PNG or JPEG.
    pub image: String,
    #[serde(default)]
    pub source: Option<PartitionSource>,
    /// Regions supplied inline, in the segmenter response format.
    #[serde(default)]
    pub regions: Option<SegmenterResponse>,
    #[serde(default)]
    pub ingest: Option<IngestConfig>,
    #[serde(default)]
    pub style: Option<MarkStyle>,
    #[serde(default)]
    pub context: Option<ContextPolicy>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EditReply {
    pub revision: u64,
    pub manifest: Manifest,
    pub preview_url: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ChatTurnRequest {
    #[serde(default)]
    pub text: Option<String>,
    /// Text with `{name}` placeholders resolved through `bindings`.
    #[serde(default)]
    pub template: Option<String>,
    #[serde(default)]
    pub bindings: BTreeMap<String, u32>,
    /// Overrides the session's context policy for this turn.
    #[serde(default)]
    pub fresh: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatReply {
    pub revision: u64,
    /// The question as sent, placeholders filled in.
    pub outgoing_text: String,
    pub text: String,
    pub grounded: GroundedAnswer,
    /// Regions to highlight.
    pub highlights: Vec<u32>,
    pub stale: bool,
    pub answered_revision: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExportReply {
    pub dir: PathBuf,
    pub files: Vec<String>,
}

fn decode_image(b64: &str) -> AppResult<(image::RgbImage, Vec<u8>)> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(b64.trim())
        .map_err(|e| ApiError::BadImage(e.to_string()))?;
    let img = image::load_from_memory(&bytes).map_err(|e| ApiError::BadImage(e.to_string()))?;
    Ok((img.to_rgb8(), bytes))
}

fn new_session_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}

async fn partition(state: &AppState, req: &CreateSessionRequest, bytes: &[u8], dims: (u32, u32)) -> AppResult<RegionSet> {
    let empty = || RegionSet::empty(dims.0, dims.1).map_err(|e| ApiError::Internal(e.to_string()));
    if req.source.is_some() && req.regions.is_some() {
        return Err(ApiError::BadRequest("give either source or regions, not both".into()));
    }
    let rs = match (&req.source, &req.regions) {
        (_, Some(inline)) => inline
            .clone()
            .into_region_set()
            .map_err(|e| ApiError::Ingest(e.to_string()))?,
        (Some(src @ PartitionSource::Remote { .. }), None) => state.segmenter.fetch_source(src, bytes).await?,
        (Some(src), None) => match load_regions(&src.resolved(&state.config.data_root), dims) {
            Ok(rs) => rs,
            Err(IngestError::EmptyPartition) => empty()?,
            Err(e) => return Err(ApiError::Ingest(e.to_string())),
        },
        (None, None) => empty()?,
    };
    if rs.dims() != dims {
        return Err(ApiError::Ingest(format!(
            "partition is {:?} but the image is {dims:?}",
            rs.dims()
        )));
    }
    if rs.is_empty() {
        return Ok(rs);
    }
    let cfg = req.ingest.unwrap_or_default();
    cfg.validate().map_err(ApiError::BadRequest)?;
    Ok(filter_regions(&rs, &cfg))
}

pub async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(req): Json<CreateSessionRequest>,
) -> AppResult<impl IntoResponse> {
    let (image, bytes) = decode_image(&req.image)?;
    let rs = partition(&state, &req, &bytes, image.dimensions()).await?;
    let session = Session::create(
        new_session_id(),
        image,
        rs,
        req.source.clone(),
        req.style.clone().unwrap_or_default(),
        req.context.unwrap_or(state.config.default_context),
    )?;
    let view = SessionView::from(&session);
    let slot = Arc::new(SessionSlot {
        writer: tokio::sync::Mutex::new(()),
        current: std::sync::RwLock::new(Arc::new(session)),
    });
    state
        .sessions
        .write()
        .expect("session table poisoned")
        .insert(view.id.clone(), slot);
    Ok((StatusCode::CREATED, Json(view)))
}

pub async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<Json<SessionView>> {
    let s = state.slot(&id)?.snapshot();
    Ok(Json(SessionView::from(&*s)))
}

async fn segment_at(state: &AppState, s: &Session, x: u32, y: u32) -> AppResult<som_core::BinaryMask> {
    let Some(PartitionSource::Remote {
        endpoint, granularity, ..
    }) = &s.source
    else {
        return Err(ApiError::NoSegmenter);
    };
    let (w, h) = s.image.dimensions();
    if x >= w || y >= h {
        return Err(ApiError::BadRequest(format!("({x}, {y}) is outside the {w}x{h} image")));
    }
    let png = s.image_png()?;
    let mode = SegmenterMode::InteractivePoints { points: vec![[x, y]] };
    let rs = state
        .segmenter
        .fetch_partition(endpoint, &mode, granularity.as_deref(), &png)
        .await?;
    let hit = rs
        .regions()
        .iter()
        .find(|r| r.mask().get(x, y))
        .or_else(|| rs.regions().first())
        .ok_or_else(|| ApiError::BadRequest("nothing was segmented at that point".into()))?;
    Ok(hit.mask().clone())
}

pub async fn apply_edit(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(edit): Json<MarkEdit>,
) -> AppResult<Json<EditReply>> {
    let slot = state.slot(&id)?;
    let _writer = slot.writer.lock().await;
    let cur = slot.snapshot();
    let next = match edit {
        MarkEdit::Move { region_id, x, y } => cur.move_mark(region_id, x, y)?,
        MarkEdit::Relabel { region_id, mark_text } => cur.relabel(region_id, &mark_text)?,
        MarkEdit::Remove { region_id } => cur.remove(region_id)?,
        MarkEdit::Add { x, y } => {
            let mask = segment_at(&state, &cur, x, y).await?;
            cur.add_region(mask)?
        }
        MarkEdit::SetStyle { style } => cur.set_style(style)?,
    };
    let next = slot.publish(next);
    let view = SessionView::from(&*next);
    Ok(Json(EditReply {
        revision: next.revision,
        manifest: next.manifest.clone(),
        preview_url: view.preview_url,
    }))
}

fn history_turns(s: &Session) -> Vec<Turn> {
    s.conversation
        .iter()
        .map(|t| {
            if t.role == "user" {
                Turn::user(vec![Part::text(t.text.clone())])
            } else {
                Turn::assistant(t.text.clone())
            }
        })
        .collect()
}

pub async fn chat(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<ChatTurnRequest>,
) -> AppResult<Json<ChatReply>> {
    let slot = state.slot(&id)?;
    let asked = slot.snapshot();
    let outgoing = match (&req.text, &req.template) {
        (Some(t), None) => t.clone(),
        (None, Some(tpl)) => {
            interleave_marks(tpl, &asked.manifest, &req.bindings)
                .map_err(|e| ApiError::BadRequest(e.to_string()))?
                .text
        }
        _ => return Err(ApiError::BadRequest("give exactly one of text or template".into())),
    };
    if outgoing.trim().is_empty() {
        return Err(ApiError::BadRequest("empty question".into()));
    }
    let fresh = req.fresh.unwrap_or(asked.context == ContextPolicy::Fresh);
    let mut turns = if fresh { Vec::new() } else { history_turns(&asked) };
    turns.push(Turn::user(vec![
        Part::png(asked.preview_png.clone()),
        Part::text(outgoing.clone()),
    ]));
    let request = ChatRequest::new(state.config.model.clone(), turns);
    let response = state.gateway.send_chat(&request).await?;
    let mut grounded = ground(&response.text, &asked.manifest, &asked.region_set, TaskKind::FreeChat)
        .map_err(|e| ApiError::Internal(e.to_string()))?;

    let _writer = slot.writer.lock().await;
    let cur = slot.snapshot();
    let stale = cur.marks_revision != asked.marks_revision;
    if stale {
        grounded.triplets = cur.live_triplets(&grounded.triplets);
    }
    let mut next = (*cur).clone();
    next.revision += 1;
    next.conversation.push(ConversationTurn {
        role: "user".into(),
        text: outgoing.clone(),
        grounded: None,
        revision: asked.revision,
        stale: false,
    });
    next.conversation.push(ConversationTurn {
        role: "assistant".into(),
        text: response.text.clone(),
        grounded: Some(grounded.clone()),
        revision: asked.revision,
        stale,
    });
    let next = slot.publish(next);
    Ok(Json(ChatReply {
        revision: next.revision,
        outgoing_text: outgoing,
        text: response.text,
        highlights: grounded.region_ids(),
        grounded,
        stale,
        answered_revision: asked.revision,
    }))
}

pub async fn preview(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<impl IntoResponse> {
    let s = state.slot(&id)?.snapshot();
    Ok((
        [(header::CONTENT_TYPE, "image/png"), (header::CACHE_CONTROL, "no-store")],
        s.preview_png.clone(),
    ))
}

#[derive(Serialize)]
struct SessionExport<'a> {
    #[serde(flatten)]
    view: SessionView,
    locations: &'a [som_core::alloc::MarkLocation],
    texts: &'a [String],
    style: &'a MarkStyle,
    source: &'a Option<PartitionSource>,
}

pub async fn export(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<Json<ExportReply>> {
    let s = state.slot(&id)?.snapshot();
    let dir = state.config.export_dir.join(&s.id);
    let doc = SessionExport {
        view: SessionView::from(&*s),
        locations: &s.locations,
        texts: &s.texts,
        style: &s.style,
        source: &s.source,
    };
    let json = serde_json::to_vec_pretty(&doc).map_err(|e| ApiError::Internal(e.to_string()))?;
    let image = s.image_png()?;
    let io = |e: std::io::Error| ApiError::Internal(format!("export to {}: {e}", dir.display()));
    tokio::fs::create_dir_all(&dir).await.map_err(io)?;
    tokio::fs::write(dir.join("session.json"), json).await.map_err(io)?;
    tokio::fs::write(dir.join("image.png"), image).await.map_err(io)?;
    tokio::fs::write(dir.join("preview.png"), &s.preview_png).await.map_err(io)?;
    Ok(Json(ExportReply {
        dir,
        files: vec!["session.json".into(), "image.png".into(), "preview.png".into()],
    }))
}
