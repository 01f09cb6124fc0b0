//! The ReAct episode loop.
//!
//! Each turn queries the policy, splits its reply into protocol segments and
//! acts on them in order: thinks accumulate, tool calls are dispatched while
//! budget remains, and the first valid answer ends the episode. The budget
//! counts dispatched tool calls. When the policy attempts one more, the call
//! is refused, a final-answer demand is injected and exactly one closing turn
//! is granted.

mod policy;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::geodesy::GeoPoint;
use crate::protocol::{
    join_thinks, parse_final_answer, tokenize, Action, SegmentKind, Step, ToolCall, Trajectory,
};
use crate::raster::ImageRef;
use crate::tools::{error_observation, Dispatch, ToolContext, ToolError, ToolRegistry};

pub use policy::{
    ChatEndpointPolicy, ChatMessage, PolicyBackend, PolicyError, PolicyMode, PolicyRequest, RetryPolicy, Role,
    ScriptEntry, ScriptedPolicy,
};

pub const AGENT_SYSTEM_PROMPT: &str = include_str!("../../prompts/agent_system_v1.txt");
pub const COT_SYSTEM_PROMPT: &str = include_str!("../../prompts/cot_system_v1.txt");
pub const PROMPT_VERSION: &str = "v1";

pub const DEFAULT_BUDGET: usize = 6;
pub const DEFAULT_MAX_MODEL_TURNS: usize = 16;

/// Name recorded for tool calls whose payload could not be parsed.
pub const MALFORMED_TOOL_NAME: &str = "invalid_tool_call";

pub const TASK_MESSAGE: &str = "Determine where this image was taken.";
const CONTINUE_MESSAGE: &str =
    "Continue: either call a tool inside <tool_call> ... </tool_call> or give your final answer inside <answer> ... </answer>.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("invalid loop configuration: {0}")]
    InvalidConfig(String),
    #[error("agent mode requires at least one registered tool")]
    EmptyRegistry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpisodeMode {
    Agent,
    Cot,
}

/// Budget, turn cap and the shared policy and tool registry.
#[derive(Clone)]
pub struct LoopConfig {
    budget: usize,
    max_model_turns: usize,
    pub policy: Arc<dyn PolicyBackend>,
    pub registry: Arc<ToolRegistry>,
}

impl std::fmt::Debug for LoopConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LoopConfig")
            .field("budget", &self.budget)
            .field("max_model_turns", &self.max_model_turns)
            .field("policy", &self.policy.identity())
            .field("registry", &self.registry)
            .finish()
    }
}

impl LoopConfig {
    pub fn new(policy: Arc<dyn PolicyBackend>, registry: Arc<ToolRegistry>) -> Self {
        Self { budget: DEFAULT_BUDGET, max_model_turns: DEFAULT_MAX_MODEL_TURNS, policy, registry }
    }

    /// Set the tool budget and turn cap; `max_model_turns` must leave room
    /// for every budgeted call plus a closing turn.
    pub fn with_limits(mut self, budget: usize, max_model_turns: usize) -> Result<Self, AgentError> {
        if budget == 0 {
            return Err(AgentError::InvalidConfig("budget must be at least 1".into()));
        }
        if max_model_turns < budget + 1 {
            return Err(AgentError::InvalidConfig(format!(
                "max_model_turns ({max_model_turns}) must be at least budget + 1 ({})",
                budget + 1
            )));
        }
        self.budget = budget;
        self.max_model_turns = max_model_turns;
        Ok(self)
    }

    pub fn with_budget(self, budget: usize) -> Result<Self, AgentError> {
        let turns = self.max_model_turns.max(budget + 1);
        self.with_limits(budget, turns)
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn max_model_turns(&self) -> usize {
        self.max_model_turns
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Answered,
    BudgetExhausted,
    TurnCapExceeded,
    PolicyError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolEvent {
    pub tool: String,
    pub success: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub trajectory: Trajectory,
    /// Present iff `termination == Answered`.
    pub prediction: Option<GeoPoint>,
    pub termination: Termination,
    pub tool_events: Vec<ToolEvent>,
    pub model_turns: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl EpisodeResult {
    pub fn image_id(&self) -> &str {
        &self.trajectory.image_id
    }

    pub fn dispatched_tool_calls(&self) -> usize {
        self.trajectory.tool_call_count()
    }
}

/// Callbacks that let a caller inject context into an episode.
pub trait EpisodeHooks {
    type Error;

    /// Runs before the first policy turn.
    fn on_start(&mut self, _image: &ImageRef) -> Result<Option<ChatMessage>, Self::Error> {
        Ok(None)
    }

    /// Runs after every dispatched tool call.
    fn on_dispatch(&mut self, _call: &ToolCall, _dispatch: &Dispatch) -> Result<Option<ChatMessage>, Self::Error> {
        Ok(None)
    }
}

pub struct NoHooks;

impl EpisodeHooks for NoHooks {
    type Error = std::convert::Infallible;
}

/// One unit of batch work.
#[derive(Debug, Clone)]
pub struct EpisodeInput {
    pub image: ImageRef,
    pub ground_truth: Option<GeoPoint>,
}

fn tool_format_section(registry: &ToolRegistry) -> String {
    let mut s = String::from(
        "\n\nTool call format\n\nEach <tool_call> block holds one JSON object: {\"name\": <tool name>, \"arguments\": {...}}. Available tools and argument schemas:\n",
    );
    for spec in registry.specs() {
        s.push_str(&format!(
            "\n- {}: {}\n",
            spec.name,
            serde_json::to_string(&spec.parameters).expect("schema serializes")
        ));
    }
    s
}

pub fn system_prompt(mode: EpisodeMode, registry: &ToolRegistry) -> String {
    match mode {
        EpisodeMode::Agent => format!("{}{}", AGENT_SYSTEM_PROMPT.trim_end(), tool_format_section(registry)),
        EpisodeMode::Cot => COT_SYSTEM_PROMPT.trim_end().to_string(),
    }
}

fn budget_demand(budget: usize) -> String {
    format!(
        "The tool budget of {budget} calls is exhausted and no further tools will run. Give your final answer now inside <answer> ... </answer>."
    )
}

struct Episode<'a, H: EpisodeHooks> {
    cfg: &'a LoopConfig,
    mode: EpisodeMode,
    sample_index: usize,
    ctx: ToolContext,
    system_prompt: String,
    history: Vec<ChatMessage>,
    steps: Vec<Step>,
    pending_thinks: Vec<String>,
    events: Vec<ToolEvent>,
    dispatched: usize,
    hooks: &'a mut H,
}

enum TurnOutcome {
    Answered,
    Continue,
    Refused,
}

impl<'a, H: EpisodeHooks> Episode<'a, H> {
    fn push_tool_message(&mut self, observation: &str, attachment: Option<ImageRef>) {
        let mut msg = ChatMessage::new(Role::Tool, format!("<tool_response>{observation}</tool_response>"));
        if let Some(img) = attachment {
            // Only the newest crop stays attached.
            for m in self.history.iter_mut().filter(|m| m.role == Role::Tool) {
                m.images.clear();
            }
            msg.images.push(img);
        }
        self.history.push(msg);
    }

    fn dispatch(&mut self, body: &str) -> Result<(), H::Error> {
        let (call, dispatch) = match ToolCall::from_payload(body) {
            Ok(call) => {
                let d = self.cfg.registry.dispatch(&call, &self.ctx);
                (call, d)
            }
            Err(e) => {
                self.cfg.registry.record_failure();
                let call = ToolCall::new(MALFORMED_TOOL_NAME, json!({ "raw": body }));
                (call, Dispatch::failure(MALFORMED_TOOL_NAME, ToolError::MalformedCall(e.to_string())))
            }
        };
        self.dispatched += 1;
        self.events.push(ToolEvent {
            tool: dispatch.tool.clone(),
            success: dispatch.success(),
            error: dispatch.error.as_ref().map(|e| e.kind().to_string()),
        });
        self.steps.push(Step {
            think: join_thinks(&mut self.pending_thinks),
            action: Action::ToolCall(call.clone()),
            observation: Some(dispatch.observation.clone()),
        });
        self.push_tool_message(&dispatch.observation, dispatch.attachment.clone());
        if let Some(extra) = self.hooks.on_dispatch(&call, &dispatch)? {
            self.history.push(extra);
        }
        Ok(())
    }

    fn refuse_in_cot(&mut self, body: &str) {
        let name = ToolCall::from_payload(body).map_or_else(|_| MALFORMED_TOOL_NAME.to_string(), |c| c.name);
        self.events.push(ToolEvent { tool: name.clone(), success: false, error: Some("tool_unavailable".into()) });
        let obs = error_observation(&name, &ToolError::Unavailable);
        self.push_tool_message(&obs, None);
    }

    /// Act on one assistant reply.
    fn handle_reply(&mut self, reply: &str, closing: bool) -> Result<TurnOutcome, H::Error> {
        let segments = match tokenize(reply) {
            Ok(s) => s,
            Err(e) => {
                if !closing {
                    self.history.push(ChatMessage::new(
                        Role::User,
                        format!("Your last message could not be parsed: {e}. Use the tag format exactly."),
                    ));
                }
                return Ok(TurnOutcome::Continue);
            }
        };
        let mut refused = false;
        let mut acted = false;
        for seg in segments {
            match seg.kind {
                SegmentKind::Think => self.pending_thinks.push(seg.body),
                SegmentKind::PlainText | SegmentKind::ToolResponse => {}
                SegmentKind::ToolCall => {
                    if closing || refused {
                        continue;
                    }
                    acted = true;
                    match self.mode {
                        EpisodeMode::Cot => self.refuse_in_cot(&seg.body),
                        EpisodeMode::Agent if self.dispatched >= self.cfg.budget => refused = true,
                        EpisodeMode::Agent => self.dispatch(&seg.body)?,
                    }
                }
                SegmentKind::Answer => match parse_final_answer(&seg.body) {
                    Ok(answer) => {
                        self.steps.push(Step {
                            think: join_thinks(&mut self.pending_thinks),
                            action: Action::Answer(answer),
                            observation: None,
                        });
                        return Ok(TurnOutcome::Answered);
                    }
                    Err(e) => {
                        acted = true;
                        if !closing && !refused {
                            self.history.push(ChatMessage::new(
                                Role::User,
                                format!("Your final answer is invalid: {e}. Provide Country, City, Latitude and Longitude with numeric coordinates."),
                            ));
                        }
                        break;
                    }
                },
            }
        }
        if refused {
            return Ok(TurnOutcome::Refused);
        }
        if !acted && !closing {
            self.history.push(ChatMessage::new(Role::User, CONTINUE_MESSAGE));
        }
        Ok(TurnOutcome::Continue)
    }

    fn finish(self, termination: Termination, turns: usize, image_id: &str, truth: Option<GeoPoint>, error: Option<String>) -> EpisodeResult {
        let trajectory = Trajectory { image_id: image_id.to_string(), steps: self.steps, ground_truth: truth };
        let prediction = match termination {
            Termination::Answered => trajectory.prediction(),
            _ => None,
        };
        EpisodeResult { trajectory, prediction, termination, tool_events: self.events, model_turns: turns, error }
    }

    fn run(mut self, image: &ImageRef, truth: Option<GeoPoint>) -> Result<EpisodeResult, H::Error> {
        self.history.push(ChatMessage::new(Role::User, TASK_MESSAGE).with_image(image.clone()));
        if let Some(extra) = self.hooks.on_start(image)? {
            self.history.push(extra);
        }
        let mut turns = 0;
        let mut closing = false;
        loop {
            if turns >= self.cfg.max_model_turns {
                return Ok(self.finish(Termination::TurnCapExceeded, turns, image.id(), truth, None));
            }
            let request = PolicyRequest {
                system_prompt: &self.system_prompt,
                image_id: image.id(),
                sample_index: self.sample_index,
                messages: &self.history,
            };
            let reply = match self.cfg.policy.complete(&request) {
                Ok(r) => r,
                Err(e) => {
                    return Ok(self.finish(Termination::PolicyError, turns, image.id(), truth, Some(e.to_string())))
                }
            };
            turns += 1;
            self.history.push(ChatMessage::new(Role::Assistant, reply.clone()));
            match self.handle_reply(&reply, closing)? {
                TurnOutcome::Answered => {
                    return Ok(self.finish(Termination::Answered, turns, image.id(), truth, None));
                }
                _ if closing => {
                    return Ok(self.finish(Termination::BudgetExhausted, turns, image.id(), truth, None));
                }
                TurnOutcome::Refused => {
                    closing = true;
                    self.history.push(ChatMessage::new(Role::User, budget_demand(self.cfg.budget)));
                }
                TurnOutcome::Continue => {}
            }
        }
    }
}

/// Run an episode with caller-supplied hooks.
pub fn run_with_hooks<H: EpisodeHooks>(
    image: &ImageRef,
    ground_truth: Option<GeoPoint>,
    cfg: &LoopConfig,
    mode: EpisodeMode,
    sample_index: usize,
    hooks: &mut H,
) -> Result<EpisodeResult, H::Error> {
    let episode = Episode {
        cfg,
        mode,
        sample_index,
        ctx: ToolContext { image: image.clone() },
        system_prompt: system_prompt(mode, &cfg.registry),
        history: Vec::new(),
        steps: Vec::new(),
        pending_thinks: Vec::new(),
        events: Vec::new(),
        dispatched: 0,
        hooks,
    };
    episode.run(image, ground_truth)
}

fn run_plain(image: &ImageRef, truth: Option<GeoPoint>, cfg: &LoopConfig, mode: EpisodeMode, sample: usize) -> EpisodeResult {
    match run_with_hooks(image, truth, cfg, mode, sample, &mut NoHooks) {
        Ok(r) => r,
        Err(never) => match never {},
    }
}

/// Tool-augmented episode.
pub fn run_episode(image: &ImageRef, ground_truth: Option<GeoPoint>, cfg: &LoopConfig) -> Result<EpisodeResult, AgentError> {
    if cfg.registry.is_empty() {
        return Err(AgentError::EmptyRegistry);
    }
    Ok(run_plain(image, ground_truth, cfg, EpisodeMode::Agent, 0))
}

/// Tool-free episode: the prompt omits tools and no call is ever dispatched.
pub fn run_cot_episode(image: &ImageRef, ground_truth: Option<GeoPoint>, cfg: &LoopConfig) -> EpisodeResult {
    run_plain(image, ground_truth, cfg, EpisodeMode::Cot, 0)
}

/// Run one episode per input on `parallelism` worker threads.
///
/// Results come back in input order. A panicking episode is reported as a
/// `PolicyError` result and does not affect its neighbours.
pub fn run_batch(
    inputs: &[EpisodeInput],
    cfg: &LoopConfig,
    mode: EpisodeMode,
    parallelism: usize,
) -> Result<Vec<EpisodeResult>, AgentError> {
    run_batch_sampled(inputs, cfg, mode, parallelism, 1).map(|groups| groups.into_iter().flatten().collect())
}

/// Like [`run_batch`] but with `samples` independent episodes per input;
/// returns one group per input.
pub fn run_batch_sampled(
    inputs: &[EpisodeInput],
    cfg: &LoopConfig,
    mode: EpisodeMode,
    parallelism: usize,
    samples: usize,
) -> Result<Vec<Vec<EpisodeResult>>, AgentError> {
    use rayon::prelude::*;
    if parallelism == 0 {
        return Err(AgentError::InvalidConfig("parallelism must be at least 1".into()));
    }
    if mode == EpisodeMode::Agent && cfg.registry.is_empty() {
        return Err(AgentError::EmptyRegistry);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| AgentError::InvalidConfig(e.to_string()))?;
    let jobs: Vec<(usize, usize)> = (0..inputs.len()).flat_map(|i| (0..samples).map(move |s| (i, s))).collect();
    let flat: Vec<EpisodeResult> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, s)| {
                let input = &inputs[i];
                catch_unwind(AssertUnwindSafe(|| run_plain(&input.image, input.ground_truth, cfg, mode, s)))
                    .unwrap_or_else(|_| EpisodeResult {
                        trajectory: Trajectory::new(input.image.id(), input.ground_truth),
                        prediction: None,
                        termination: Termination::PolicyError,
                        tool_events: Vec::new(),
                        model_turns: 0,
                        error: Some("episode panicked".into()),
                    })
            })
            .collect()
    });
    let mut it = flat.into_iter();
    Ok((0..inputs.len()).map(|_| it.by_ref().take(samples).collect()).collect())
}
