//! Two-role trajectory synthesis: an observer describes the image, a planner
//! drives the ordinary agent loop with that description in context.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::DatagenError;
use crate::agent::{
    run_with_hooks, ChatMessage, EpisodeHooks, EpisodeInput, EpisodeMode, EpisodeResult, LoopConfig, PolicyBackend,
    PolicyRequest, Role,
};
use crate::protocol::{tokenize, SegmentKind, ToolCall};
use crate::raster::ImageRef;
use crate::tools::{Dispatch, ZoomRequest, ZOOM_TOOL};

pub const OBSERVER_PROMPT: &str = include_str!("../../prompts/observer_v1.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverReport {
    pub image_id: String,
    /// Region the report describes; `None` means the whole image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zoom_bbox: Option<ZoomRequest>,
    pub interpretation: String,
}

impl ObserverReport {
    /// The user-role message that carries this report to the planner.
    pub fn to_message(&self) -> ChatMessage {
        let scope = match self.zoom_bbox {
            None => "full image".to_string(),
            Some(b) => format!("zoomed region [{}, {}, {}, {}]", b.x1, b.y1, b.x2, b.y2),
        };
        ChatMessage::new(Role::User, format!("Visual observations ({scope}):\n{}", self.interpretation))
    }
}

/// Observer replies may wrap their text in `<think>` tags; keep only the
/// prose.
fn clean_interpretation(raw: &str) -> String {
    match tokenize(raw) {
        Ok(segs) => segs
            .into_iter()
            .filter(|s| matches!(s.kind, SegmentKind::PlainText | SegmentKind::Think))
            .map(|s| s.body.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join("\n"),
        Err(_) => raw.trim().to_string(),
    }
}

struct ObserverHooks<'a> {
    observer: &'a dyn PolicyBackend,
    image_id: String,
    sample_index: usize,
    history: Vec<ChatMessage>,
    reports: Vec<ObserverReport>,
}

impl ObserverHooks<'_> {
    fn observe(&mut self, view: &ImageRef, zoom_bbox: Option<ZoomRequest>) -> Result<ChatMessage, DatagenError> {
        let ask = match zoom_bbox {
            None => "Describe this image.".to_string(),
            Some(b) => format!("Re-examine this zoomed region [{}, {}, {}, {}] of the image.", b.x1, b.y1, b.x2, b.y2),
        };
        self.history.push(ChatMessage::new(Role::User, ask).with_image(view.clone()));
        let request = PolicyRequest {
            system_prompt: OBSERVER_PROMPT,
            image_id: &self.image_id,
            sample_index: self.sample_index,
            messages: &self.history,
        };
        let raw = self
            .observer
            .complete(&request)
            .map_err(|e| DatagenError::ObserverFailure(format!("{}: {e}", self.image_id)))?;
        let interpretation = clean_interpretation(&raw);
        if interpretation.is_empty() {
            return Err(DatagenError::ObserverFailure(format!("{}: empty observer report", self.image_id)));
        }
        self.history.push(ChatMessage::new(Role::Assistant, raw));
        let report = ObserverReport { image_id: self.image_id.clone(), zoom_bbox, interpretation };
        let msg = report.to_message();
        self.reports.push(report);
        Ok(msg)
    }
}

impl EpisodeHooks for ObserverHooks<'_> {
    type Error = DatagenError;

    fn on_start(&mut self, image: &ImageRef) -> Result<Option<ChatMessage>, DatagenError> {
        self.observe(image, None).map(Some)
    }

    fn on_dispatch(&mut self, call: &ToolCall, dispatch: &Dispatch) -> Result<Option<ChatMessage>, DatagenError> {
        if call.name != ZOOM_TOOL || !dispatch.success() {
            return Ok(None);
        }
        let (Some(crop), Ok(bbox)) = (&dispatch.attachment, ZoomRequest::from_args(&call.arguments)) else {
            return Ok(None);
        };
        self.observe(crop, Some(bbox)).map(Some)
    }
}

/// A synthesized episode together with every observer report it consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub episode: EpisodeResult,
    pub reports: Vec<ObserverReport>,
}

/// Run one observer-assisted episode. The planner is `cfg.policy`.
pub fn synthesize_trajectory(
    image: &ImageRef,
    ground_truth: Option<crate::geodesy::GeoPoint>,
    observer: &dyn PolicyBackend,
    cfg: &LoopConfig,
    sample_index: usize,
) -> Result<Synthesis, DatagenError> {
    if cfg.registry.is_empty() {
        return Err(DatagenError::Agent(crate::agent::AgentError::EmptyRegistry));
    }
    let mut hooks = ObserverHooks {
        observer,
        image_id: image.id().to_string(),
        sample_index,
        history: Vec::new(),
        reports: Vec::new(),
    };
    let episode = run_with_hooks(image, ground_truth, cfg, EpisodeMode::Agent, sample_index, &mut hooks)?;
    Ok(Synthesis { episode, reports: hooks.reports })
}

/// Synthesize one trajectory per input on `parallelism` threads, in input
/// order. Failures stay per-input.
pub fn synthesize_batch(
    inputs: &[EpisodeInput],
    observer: Arc<dyn PolicyBackend>,
    cfg: &LoopConfig,
    parallelism: usize,
) -> Result<Vec<Result<Synthesis, DatagenError>>, DatagenError> {
    use rayon::prelude::*;
    if parallelism == 0 {
        return Err(DatagenError::InvalidConfig("parallelism must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| DatagenError::InvalidConfig(e.to_string()))?;
    Ok(pool.install(|| {
        inputs
            .par_iter()
            .map(|input| {
                catch_unwind(AssertUnwindSafe(|| {
                    synthesize_trajectory(&input.image, input.ground_truth, observer.as_ref(), cfg, 0)
                }))
                .unwrap_or_else(|_| Err(DatagenError::ObserverFailure(format!("{}: synthesis panicked", input.image.id()))))
            })
            .collect()
    }))
}
