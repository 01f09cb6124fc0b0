//! Tag-based message grammar shared with every model backend.
//!
//! An assistant message is a flat sequence of `<think>`, `<tool_call>`,
//! `<tool_response>` and `<answer>` blocks with free text in between. Tags are
//! matched literally and case-sensitively; nesting is rejected.
//!
//! Trajectories persist as one JSON object per line,
//! `{"image_id", "ground_truth", "raw_text"}`, where `raw_text` is the tag
//! stream produced by [`render_steps`].

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::geodesy::GeoPoint;

/// Block kinds, in the order their tag names are tried by the tokenizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentKind {
    Think,
    ToolCall,
    ToolResponse,
    Answer,
    PlainText,
}

impl SegmentKind {
    const TAGGED: [SegmentKind; 4] = [
        SegmentKind::Think,
        SegmentKind::ToolCall,
        SegmentKind::ToolResponse,
        SegmentKind::Answer,
    ];

    pub fn tag(self) -> Option<&'static str> {
        match self {
            SegmentKind::Think => Some("think"),
            SegmentKind::ToolCall => Some("tool_call"),
            SegmentKind::ToolResponse => Some("tool_response"),
            SegmentKind::Answer => Some("answer"),
            SegmentKind::PlainText => None,
        }
    }

    fn open(self) -> String {
        format!("<{}>", self.tag().unwrap_or_default())
    }

    fn close(self) -> String {
        format!("</{}>", self.tag().unwrap_or_default())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("unclosed <{tag}> opened at byte {offset}")]
    UnclosedTag { tag: &'static str, offset: usize },
    #[error("<{inner}> at byte {offset} is nested inside <{outer}>")]
    NestedTag { outer: &'static str, inner: &'static str, offset: usize },
    #[error("closing </{tag}> at byte {offset} has no matching opening tag")]
    UnmatchedClosingTag { tag: &'static str, offset: usize },
    #[error("malformed tool call payload: {reason}")]
    MalformedToolCallPayload { reason: String, body: String },
    #[error("final answer: {0}")]
    Answer(#[from] AnswerError),
    #[error("trajectory schema violation: {0}")]
    Schema(String),
    #[error("record is not valid JSON: {0}")]
    Record(String),
}

/// A tagged or free-text region of a message, before payload interpretation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSegment {
    pub kind: SegmentKind,
    pub body: String,
}

/// A tool invocation: `{"name": ..., "arguments": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    pub arguments: Map<String, Value>,
}

impl ToolCall {
    pub fn new(name: impl Into<String>, arguments: Value) -> Self {
        let arguments = match arguments {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        Self { name: name.into(), arguments }
    }

    /// Parse a `<tool_call>` body. `arguments` may also arrive as a
    /// JSON-encoded string, as some chat servers emit.
    pub fn from_payload(body: &str) -> Result<Self, ProtocolError> {
        let malformed = |reason: String| ProtocolError::MalformedToolCallPayload {
            reason,
            body: body.to_string(),
        };
        let value: Value =
            serde_json::from_str(body.trim()).map_err(|e| malformed(format!("not JSON: {e}")))?;
        let Value::Object(mut obj) = value else {
            return Err(malformed("payload is not an object".into()));
        };
        let name = match obj.remove("name") {
            Some(Value::String(s)) if !s.trim().is_empty() => s,
            Some(_) => return Err(malformed("`name` must be a nonempty string".into())),
            None => return Err(malformed("missing `name`".into())),
        };
        let arguments = match obj.remove("arguments") {
            Some(Value::Object(m)) => m,
            Some(Value::String(s)) => match serde_json::from_str::<Value>(&s) {
                Ok(Value::Object(m)) => m,
                _ => return Err(malformed("`arguments` string is not a JSON object".into())),
            },
            Some(_) => return Err(malformed("`arguments` must be an object".into())),
            None => return Err(malformed("missing `arguments`".into())),
        };
        Ok(Self { name, arguments })
    }

    pub fn to_payload(&self) -> String {
        serde_json::to_string(self).expect("tool call serializes")
    }
}

/// A message region with its payload interpreted.
#[derive(Debug, Clone, PartialEq)]
pub enum Segment {
    Think(String),
    ToolCall(ToolCall),
    ToolResponse(String),
    Answer(String),
    PlainText(String),
}

fn find_tag_token(raw: &str, from: usize) -> Option<(usize, SegmentKind, bool)> {
    let mut search = from;
    while let Some(rel) = raw[search..].find('<') {
        let at = search + rel;
        let rest = &raw[at..];
        for kind in SegmentKind::TAGGED {
            if rest.starts_with(&kind.open()) {
                return Some((at, kind, true));
            }
            if rest.starts_with(&kind.close()) {
                return Some((at, kind, false));
            }
        }
        search = at + 1;
    }
    None
}

/// Split a message into tagged blocks and free text without interpreting
/// payloads. Empty free-text gaps are skipped.
pub fn tokenize(raw: &str) -> Result<Vec<RawSegment>, ProtocolError> {
    let mut out = Vec::new();
    let mut cursor = 0;
    while let Some((at, kind, is_open)) = find_tag_token(raw, cursor) {
        let tag = kind.tag().unwrap_or_default();
        if !is_open {
            return Err(ProtocolError::UnmatchedClosingTag { tag, offset: at });
        }
        if at > cursor {
            out.push(RawSegment { kind: SegmentKind::PlainText, body: raw[cursor..at].to_string() });
        }
        let body_start = at + kind.open().len();
        match find_tag_token(raw, body_start) {
            Some((end, k, false)) if k == kind => {
                out.push(RawSegment { kind, body: raw[body_start..end].to_string() });
                cursor = end + kind.close().len();
            }
            Some((inner_at, inner, _)) => {
                return Err(ProtocolError::NestedTag {
                    outer: tag,
                    inner: inner.tag().unwrap_or_default(),
                    offset: inner_at,
                });
            }
            None => return Err(ProtocolError::UnclosedTag { tag, offset: at }),
        }
    }
    if cursor < raw.len() {
        out.push(RawSegment { kind: SegmentKind::PlainText, body: raw[cursor..].to_string() });
    }
    Ok(out)
}

/// Parse a full assistant message into ordered segments.
pub fn parse_message(raw: &str) -> Result<Vec<Segment>, ProtocolError> {
    tokenize(raw)?
        .into_iter()
        .map(|seg| {
            Ok(match seg.kind {
                SegmentKind::Think => Segment::Think(seg.body),
                SegmentKind::ToolCall => Segment::ToolCall(ToolCall::from_payload(&seg.body)?),
                SegmentKind::ToolResponse => Segment::ToolResponse(seg.body),
                SegmentKind::Answer => Segment::Answer(seg.body),
                SegmentKind::PlainText => Segment::PlainText(seg.body),
            })
        })
        .collect()
}

/// True if `text` contains any opening or closing protocol tag.
pub fn contains_tag(text: &str) -> bool {
    find_tag_token(text, 0).is_some()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnswerError {
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("cannot parse {field} from {value:?}")]
    UnparseableCoordinate { field: &'static str, value: String },
    #[error("{field} {value} is out of range")]
    CoordinateOutOfRange { field: &'static str, value: f64 },
}

/// The parsed content of an `<answer>` block.
///
/// Coordinates are mandatory. Country and city are carried when the model
/// supplies them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalAnswer {
    pub country: Option<String>,
    pub city: Option<String>,
    pub point: GeoPoint,
}

static LABEL_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?im)(?:^|[,;])[ \t*\-]*(country|city|latitude|longitude)\b[ \t*]*:?[ \t]*")
        .expect("label regex")
});

static NUMBER_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^([+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)\s*°?\s*([NSEWnsew])?\b")
        .expect("number regex")
});

fn label_values(body: &str) -> [Option<String>; 4] {
    let matches: Vec<_> = LABEL_RE.captures_iter(body).collect();
    let mut out: [Option<String>; 4] = Default::default();
    for (i, cap) in matches.iter().enumerate() {
        let whole = cap.get(0).expect("match");
        let slot = match cap[1].to_ascii_lowercase().as_str() {
            "country" => 0,
            "city" => 1,
            "latitude" => 2,
            _ => 3,
        };
        if out[slot].is_some() {
            continue;
        }
        let value_start = whole.end();
        let mut value_end = body[value_start..].find('\n').map_or(body.len(), |n| value_start + n);
        if let Some(next) = matches.get(i + 1) {
            let next_start = next.get(0).expect("match").start();
            if next_start >= value_start {
                value_end = value_end.min(next_start);
            }
        }
        let value = body[value_start..value_end]
            .trim()
            .trim_end_matches([',', ';', '*'])
            .trim();
        out[slot] = Some(value.to_string());
    }
    out
}

fn parse_coordinate(field: &'static str, raw: Option<&str>, limit: f64) -> Result<f64, AnswerError> {
    let raw = raw.filter(|s| !s.is_empty()).ok_or(AnswerError::MissingField(field))?;
    let unparseable = || AnswerError::UnparseableCoordinate { field, value: raw.to_string() };
    let cap = NUMBER_RE.captures(raw).ok_or_else(unparseable)?;
    let mut value: f64 = cap[1].parse().map_err(|_| unparseable())?;
    if let Some(hemi) = cap.get(2) {
        let hemi = hemi.as_str().to_ascii_uppercase();
        let allowed = if field == "latitude" { ["N", "S"] } else { ["E", "W"] };
        if !allowed.contains(&hemi.as_str()) {
            return Err(unparseable());
        }
        if hemi == "S" || hemi == "W" {
            value = -value.abs();
        }
    }
    if !value.is_finite() {
        return Err(unparseable());
    }
    if value.abs() > limit {
        return Err(AnswerError::CoordinateOutOfRange { field, value });
    }
    Ok(value + 0.0)
}

/// Extract the labelled fields of an `<answer>` body.
///
/// Labels match case-insensitively at the start of a line or after `,`/`;`,
/// with an optional colon. Coordinates are validated first, so an answer
/// with a bad latitude reports that even if other fields are absent.
pub fn parse_final_answer(body: &str) -> Result<FinalAnswer, AnswerError> {
    let [country, city, lat, lon] = label_values(body);
    let lat = parse_coordinate("latitude", lat.as_deref(), 90.0)?;
    let lon = parse_coordinate("longitude", lon.as_deref(), 180.0)?;
    let point = GeoPoint::new(lat, lon)
        .map_err(|_| AnswerError::CoordinateOutOfRange { field: "latitude", value: lat })?;
    let nonempty = |v: Option<String>| v.filter(|s| !s.is_empty());
    Ok(FinalAnswer { country: nonempty(country), city: nonempty(city), point })
}

impl FinalAnswer {
    pub fn new(country: Option<&str>, city: Option<&str>, point: GeoPoint) -> Self {
        Self { country: country.map(str::to_string), city: city.map(str::to_string), point }
    }

    /// Canonical `<answer>` body.
    pub fn render(&self) -> String {
        let mut lines = Vec::with_capacity(4);
        if let Some(c) = &self.country {
            lines.push(format!("Country: {c}"));
        }
        if let Some(c) = &self.city {
            lines.push(format!("City: {c}"));
        }
        lines.push(format!("Latitude: {}", self.point.lat()));
        lines.push(format!("Longitude: {}", self.point.lon()));
        lines.join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    ToolCall(ToolCall),
    Answer(FinalAnswer),
}

/// One Think / Act / Observe record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub think: Option<String>,
    pub action: Action,
    pub observation: Option<String>,
}

impl Step {
    pub fn tool_call(&self) -> Option<&ToolCall> {
        match &self.action {
            Action::ToolCall(c) => Some(c),
            Action::Answer(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub image_id: String,
    pub steps: Vec<Step>,
    pub ground_truth: Option<GeoPoint>,
}

impl Trajectory {
    pub fn new(image_id: impl Into<String>, ground_truth: Option<GeoPoint>) -> Self {
        Self { image_id: image_id.into(), steps: Vec::new(), ground_truth }
    }

    pub fn tool_call_count(&self) -> usize {
        self.steps.iter().filter(|s| s.tool_call().is_some()).count()
    }

    pub fn final_answer(&self) -> Option<&FinalAnswer> {
        match self.steps.last().map(|s| &s.action) {
            Some(Action::Answer(a)) => Some(a),
            _ => None,
        }
    }

    pub fn prediction(&self) -> Option<GeoPoint> {
        self.final_answer().map(|a| a.point)
    }

    /// Check the structural invariants and that the trajectory can be
    /// rendered and re-read without loss. `budget` bounds the tool calls.
    pub fn validate(&self, budget: Option<usize>) -> Result<(), ProtocolError> {
        let schema = |m: String| Err(ProtocolError::Schema(m));
        let last = self.steps.len().saturating_sub(1);
        for (i, step) in self.steps.iter().enumerate() {
            if let Some(t) = &step.think {
                if contains_tag(t) {
                    return schema(format!("step {i}: think body contains a protocol tag"));
                }
            }
            match &step.action {
                Action::Answer(ans) => {
                    if i != last {
                        return schema(format!("step {i}: final answer is not the last step"));
                    }
                    if step.observation.is_some() {
                        return schema(format!("step {i}: final answer carries an observation"));
                    }
                    if parse_final_answer(&ans.render()).as_ref() != Ok(ans) {
                        return schema(format!("step {i}: final answer does not re-read losslessly"));
                    }
                }
                Action::ToolCall(call) => {
                    if call.name.trim().is_empty() {
                        return schema(format!("step {i}: tool call without a name"));
                    }
                    if contains_tag(&call.to_payload()) {
                        return schema(format!("step {i}: tool call payload contains a protocol tag"));
                    }
                    if step.observation.as_deref().is_some_and(contains_tag) {
                        return schema(format!("step {i}: observation contains a protocol tag"));
                    }
                }
            }
        }
        if let Some(limit) = budget {
            let used = self.tool_call_count();
            if used > limit {
                return schema(format!("{used} tool calls exceed the budget of {limit}"));
            }
        }
        Ok(())
    }
}

/// Render steps as a newline-separated tag stream.
pub fn render_steps(steps: &[Step]) -> String {
    let mut parts = Vec::new();
    for step in steps {
        if let Some(t) = &step.think {
            parts.push(format!("<think>{t}</think>"));
        }
        match &step.action {
            Action::ToolCall(call) => parts.push(format!("<tool_call>{}</tool_call>", call.to_payload())),
            Action::Answer(ans) => parts.push(format!("<answer>{}</answer>", ans.render())),
        }
        if let Some(o) = &step.observation {
            parts.push(format!("<tool_response>{o}</tool_response>"));
        }
    }
    parts.join("\n")
}

/// Group a tag stream back into steps.
///
/// Consecutive think blocks before an action are joined with a newline.
/// Free text is ignored, as are think blocks left dangling after the last
/// action.
pub fn steps_from_text(raw: &str) -> Result<Vec<Step>, ProtocolError> {
    let mut steps: Vec<Step> = Vec::new();
    let mut pending: Vec<String> = Vec::new();
    let mut awaiting_response = false;
    let mut answered = false;
    for seg in parse_message(raw)? {
        if answered && !matches!(seg, Segment::PlainText(_)) {
            return Err(ProtocolError::Schema("content after the final answer".into()));
        }
        match seg {
            Segment::PlainText(_) => {}
            Segment::Think(t) => {
                pending.push(t);
                awaiting_response = false;
            }
            Segment::ToolCall(call) => {
                steps.push(Step {
                    think: join_thinks(&mut pending),
                    action: Action::ToolCall(call),
                    observation: None,
                });
                awaiting_response = true;
            }
            Segment::ToolResponse(body) => {
                if !awaiting_response {
                    return Err(ProtocolError::Schema(
                        "tool response does not follow a tool call".into(),
                    ));
                }
                if let Some(step) = steps.last_mut() {
                    step.observation = Some(body);
                }
                awaiting_response = false;
            }
            Segment::Answer(body) => {
                let answer = parse_final_answer(&body)?;
                steps.push(Step {
                    think: join_thinks(&mut pending),
                    action: Action::Answer(answer),
                    observation: None,
                });
                answered = true;
            }
        }
    }
    Ok(steps)
}

pub(crate) fn join_thinks(pending: &mut Vec<String>) -> Option<String> {
    if pending.is_empty() {
        None
    } else {
        Some(std::mem::take(pending).join("\n"))
    }
}

/// One line of the persisted trajectory stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub image_id: String,
    pub ground_truth: Option<GeoPoint>,
    pub raw_text: String,
}

/// Serialize a trajectory to a single JSON line (no trailing newline).
pub fn serialize_trajectory(t: &Trajectory) -> Result<String, ProtocolError> {
    t.validate(None)?;
    let record = TrajectoryRecord {
        image_id: t.image_id.clone(),
        ground_truth: t.ground_truth,
        raw_text: render_steps(&t.steps),
    };
    serde_json::to_string(&record).map_err(|e| ProtocolError::Record(e.to_string()))
}

pub fn parse_trajectory(line: &str) -> Result<Trajectory, ProtocolError> {
    let record: TrajectoryRecord =
        serde_json::from_str(line.trim_end()).map_err(|e| ProtocolError::Record(e.to_string()))?;
    let steps = steps_from_text(&record.raw_text)?;
    Ok(Trajectory { image_id: record.image_id, steps, ground_truth: record.ground_truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    #[test]
    fn minimal_message() {
        let raw = "<think>x</think><answer>Country: France\nCity: Paris\nLatitude: 48.85\nLongitude: 2.35</answer>";
        let segs = parse_message(raw).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0], Segment::Think("x".into()));
        let Segment::Answer(body) = &segs[1] else { panic!("{segs:?}") };
        let ans = parse_final_answer(body).unwrap();
        assert_eq!(ans.country.as_deref(), Some("France"));
        assert_eq!(ans.city.as_deref(), Some("Paris"));
        assert_eq!((ans.point.lat(), ans.point.lon()), (48.85, 2.35));
    }

    #[test]
    fn zoom_tool_call_payload() {
        let raw = r#"<tool_call>{"name":"image_zoom_in_tool","arguments":{"bbox_2d":[350,560,422,636]}}</tool_call>"#;
        let segs = parse_message(raw).unwrap();
        let Segment::ToolCall(call) = &segs[0] else { panic!() };
        assert_eq!(call.name, "image_zoom_in_tool");
        assert_eq!(call.arguments["bbox_2d"], json!([350, 560, 422, 636]));
    }

    #[test]
    fn stringified_arguments_accepted() {
        let call = ToolCall::from_payload(r#"{"name":"search_web","arguments":"{\"query\":\"q\"}"}"#).unwrap();
        assert_eq!(call.arguments["query"], "q");
    }

    #[test]
    fn tag_errors() {
        assert!(matches!(parse_message("<think>a"), Err(ProtocolError::UnclosedTag { tag: "think", offset: 0 })));
        assert!(matches!(
            parse_message("<think>a<answer>b</answer></think>"),
            Err(ProtocolError::NestedTag { outer: "think", inner: "answer", .. })
        ));
        assert!(matches!(
            parse_message("<think>a</answer>"),
            Err(ProtocolError::NestedTag { outer: "think", inner: "answer", .. })
        ));
        assert!(matches!(parse_message("oops</think>"), Err(ProtocolError::UnmatchedClosingTag { .. })));
        assert!(matches!(
            parse_message("<tool_call>not json</tool_call>"),
            Err(ProtocolError::MalformedToolCallPayload { .. })
        ));
        assert!(matches!(
            parse_message(r#"<tool_call>{"arguments":{}}</tool_call>"#),
            Err(ProtocolError::MalformedToolCallPayload { .. })
        ));
        assert!(matches!(
            parse_message(r#"<tool_call>{"name":"x"}</tool_call>"#),
            Err(ProtocolError::MalformedToolCallPayload { .. })
        ));
    }

    #[test]
    fn tags_are_case_sensitive_and_text_preserved() {
        let segs = parse_message("hi <THINK>x</THINK> <b>bold</b>\n<think>y</think> tail").unwrap();
        assert_eq!(
            segs,
            vec![
                Segment::PlainText("hi <THINK>x</THINK> <b>bold</b>\n".into()),
                Segment::Think("y".into()),
                Segment::PlainText(" tail".into()),
            ]
        );
        assert_eq!(parse_message("").unwrap(), vec![]);
    }

    #[test]
    fn final_answer_examples() {
        let a = parse_final_answer("Country: China\nCity: Beijing\nLatitude: 39.9067\nLongitude: 116.4032").unwrap();
        assert_eq!(a, FinalAnswer::new(Some("China"), Some("Beijing"), GeoPoint::new(39.9067, 116.4032).unwrap()));

        assert!(matches!(
            parse_final_answer("Latitude: 91.0, Longitude: 0"),
            Err(AnswerError::CoordinateOutOfRange { field: "latitude", .. })
        ));

        let z = parse_final_answer("Country: X\nCity: Y\nLatitude: -0.0\nLongitude: 0.0").unwrap();
        assert_eq!((z.point.lat(), z.point.lon()), (0.0, 0.0));
        assert!(z.point.lat().is_sign_positive());
    }

    #[test]
    fn final_answer_tolerance() {
        let a = parse_final_answer("  country:  Mexico \n CITY: Mexico City\n latitude 19.43\nLONGITUDE: -99.13 ").unwrap();
        assert_eq!(a.country.as_deref(), Some("Mexico"));
        assert_eq!(a.city.as_deref(), Some("Mexico City"));
        assert_eq!((a.point.lat(), a.point.lon()), (19.43, -99.13));

        let b = parse_final_answer("Latitude: 33.86° S, Longitude: 151.21° E").unwrap();
        assert_eq!((b.point.lat(), b.point.lon()), (-33.86, 151.21));
        assert_eq!(b.country, None);

        let c = parse_final_answer("**Latitude**: 1.5\n**Longitude**: 2.5").unwrap();
        assert_eq!((c.point.lat(), c.point.lon()), (1.5, 2.5));
    }

    #[test]
    fn final_answer_errors() {
        assert_eq!(parse_final_answer("Country: X\nLongitude: 3"), Err(AnswerError::MissingField("latitude")));
        assert_eq!(parse_final_answer("Latitude: 3"), Err(AnswerError::MissingField("longitude")));
        assert_eq!(parse_final_answer("Latitude: null\nLongitude: 3"), Err(AnswerError::UnparseableCoordinate {
            field: "latitude",
            value: "null".into()
        }));
        assert!(matches!(
            parse_final_answer("Latitude: 3\nLongitude: 181"),
            Err(AnswerError::CoordinateOutOfRange { field: "longitude", .. })
        ));
        assert!(matches!(
            parse_final_answer("Latitude: 3 E\nLongitude: 1"),
            Err(AnswerError::UnparseableCoordinate { .. })
        ));
    }

    #[test]
    fn answer_only_trajectory_has_one_answer_block() {
        let mut t = Trajectory::new("img", None);
        t.steps.push(Step {
            think: None,
            action: Action::Answer(FinalAnswer::new(None, None, GeoPoint::new(1.0, 2.0).unwrap())),
            observation: None,
        });
        let line = serialize_trajectory(&t).unwrap();
        let rec: TrajectoryRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(rec.raw_text.matches("<answer>").count(), 1);
        assert_eq!(rec.raw_text, "<answer>Latitude: 1\nLongitude: 2</answer>");
        assert_eq!(parse_trajectory(&line).unwrap(), t);
    }

    #[test]
    fn structure_violations() {
        assert!(steps_from_text("<tool_response>x</tool_response>").is_err());
        assert!(steps_from_text("<answer>Latitude: 1\nLongitude: 1</answer><think>late</think>").is_err());
        let ok = steps_from_text("<think>a</think>\n<think>b</think><tool_call>{\"name\":\"n\",\"arguments\":{}}</tool_call> \n<tool_response>r</tool_response><think>dangling</think>").unwrap();
        assert_eq!(ok.len(), 1);
        assert_eq!(ok[0].think.as_deref(), Some("a\nb"));
        assert_eq!(ok[0].observation.as_deref(), Some("r"));

        let mut t = Trajectory::new("i", None);
        let answer = Step {
            think: None,
            action: Action::Answer(FinalAnswer::new(None, None, GeoPoint::new(0.0, 0.0).unwrap())),
            observation: None,
        };
        t.steps = vec![answer.clone(), answer];
        assert!(t.validate(None).is_err());
        t.steps.pop();
        t.steps.insert(0, Step { think: Some("<think>".into()), action: Action::ToolCall(ToolCall::new("a", json!({}))), observation: None });
        assert!(t.validate(None).is_err());
        t.steps[0].think = None;
        assert!(t.validate(Some(1)).is_ok());
        assert!(t.validate(Some(0)).is_err());
    }

    fn arb_text() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9 .,:;!?()\\[\\]{}\"'<>/\n-]{0,40}".prop_filter("no tags", |s| !contains_tag(s))
    }

    fn arb_name() -> impl Strategy<Value = String> {
        "[A-Z][a-z]{0,8}( [A-Z][a-z]{1,8})?"
    }

    fn arb_step_call() -> impl Strategy<Value = Step> {
        (
            proptest::option::of(arb_text()),
            "[a-z_]{1,12}",
            proptest::collection::btree_map("[a-z]{1,6}", prop_oneof![
                any::<i32>().prop_map(Value::from),
                arb_text().prop_map(Value::from),
                proptest::collection::vec(0u32..2000, 0..5).prop_map(|v| json!(v)),
            ], 0..3),
            proptest::option::of(arb_text()),
        )
            .prop_map(|(think, name, args, obs)| Step {
                think,
                action: Action::ToolCall(ToolCall { name, arguments: args.into_iter().collect() }),
                observation: obs,
            })
    }

    pub(crate) fn arb_trajectory() -> impl Strategy<Value = Trajectory> {
        (
            "[a-z0-9_-]{1,16}",
            proptest::collection::vec(arb_step_call(), 0..6),
            proptest::option::of((
                proptest::option::of(arb_text()),
                proptest::option::of(arb_name()),
                proptest::option::of(arb_name()),
                -90.0f64..=90.0,
                -180.0f64..=180.0,
            )),
            proptest::option::of((-90.0f64..=90.0, -180.0f64..=180.0)),
        )
            .prop_map(|(id, mut steps, answer, truth)| {
                if let Some((think, country, city, lat, lon)) = answer {
                    steps.push(Step {
                        think,
                        action: Action::Answer(FinalAnswer {
                            country,
                            city,
                            point: GeoPoint::new(lat, lon).unwrap(),
                        }),
                        observation: None,
                    });
                }
                Trajectory {
                    image_id: id,
                    steps,
                    ground_truth: truth.map(|(a, b)| GeoPoint::new(a, b).unwrap()),
                }
            })
    }

    proptest! {
        #[test]
        fn trajectory_round_trip(t in arb_trajectory()) {
            let line = serialize_trajectory(&t).unwrap();
            prop_assert!(!line.contains('\n'));
            let back = parse_trajectory(&line).unwrap();
            prop_assert_eq!(&back, &t);
            prop_assert_eq!(serialize_trajectory(&back).unwrap(), line);
        }

        #[test]
        fn parser_is_total(s in "(<|>|/|think|tool_call|tool_response|answer|[a-z{}\":, ])*") {
            let _ = parse_message(&s);
        }
    }
}
