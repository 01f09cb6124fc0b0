//! Parse a model turn and a stored trajectory record.
//!
//! ```text
//! cargo run --example parse_protocol
//! ```

use geoagent::protocol::{parse_message, parse_trajectory, serialize_trajectory, Action, Segment};

const TURN: &str = r#"<think>Red double-decker buses and left-hand traffic.</think>
<tool_call>{"name": "search_web", "arguments": {"query": "red double decker bus city"}}</tool_call>"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for seg in parse_message(TURN)? {
        match seg {
            Segment::Think(t) => println!("think: {t}"),
            Segment::ToolCall(call) => println!("call:  {} {}", call.name, call.to_payload()),
            Segment::PlainText(t) if t.trim().is_empty() => {}
            other => println!("other: {other:?}"),
        }
    }

    let line = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/beijing_walkthrough.jsonl"))?;
    let line = line.lines().next().ok_or("empty fixture")?;
    let traj = parse_trajectory(line)?;
    println!("\n{}: {} steps", traj.image_id, traj.steps.len());
    for (i, step) in traj.steps.iter().enumerate() {
        match &step.action {
            Action::ToolCall(c) => println!("  {i}: {}({})", c.name, serde_json::Value::Object(c.arguments.clone())),
            Action::Answer(a) => println!("  {i}: answer {:?} {:?} ({}, {})", a.country, a.city, a.point.lat(), a.point.lon()),
        }
    }
    // Records round-trip byte for byte.
    assert_eq!(serialize_trajectory(&traj)?, line);
    Ok(())
}
