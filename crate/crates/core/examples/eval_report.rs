//! Run the 20-image offline corpus in both modes and compare the reports.
//!
//! ```text
//! cargo run --example eval_report
//! ```

use std::path::Path;
use std::sync::Arc;

use geoagent::agent::{run_batch, EpisodeInput, EpisodeMode, LoopConfig, ScriptedPolicy};
use geoagent::datagen::read_ground_truth;
use geoagent::eval::{build_eval_report, build_tool_usage_report, render_eval, render_usage, ReportFormat};
use geoagent::geodesy::ThresholdLadder;
use geoagent::raster::ImageRef;
use geoagent::tools::{MockCorpus, ToolRegistry};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let truth = read_ground_truth(&dir.join("e2e/ground_truth.csv"))?;
    let inputs: Vec<EpisodeInput> = truth
        .iter()
        .map(|(id, p)| EpisodeInput { image: ImageRef::blank(id.clone(), 1024, 768), ground_truth: Some(*p) })
        .collect();
    let points: Vec<_> = truth.iter().map(|(_, p)| *p).collect();
    let registry = Arc::new(ToolRegistry::mock(&MockCorpus::load(&dir.join("mock_corpus.json"))?));
    let cfg = LoopConfig::new(Arc::new(ScriptedPolicy::load(&dir.join("e2e/policy.json"))?), registry);
    let ladder = ThresholdLadder::default();

    let agent = run_batch(&inputs, &cfg, EpisodeMode::Agent, 4)?;
    println!("== agent mode\n{}", render_eval(&build_eval_report(&agent, &points, &ladder)?, ReportFormat::Table));
    println!("{}", render_usage(&build_tool_usage_report(&agent)?, ReportFormat::Table));

    // Same scripts with tools disabled: calls are refused, not run. The
    // scripted answers ignore tool output, so only the dispatch count moves.
    let cot = run_batch(&inputs, &cfg, EpisodeMode::Cot, 4)?;
    let dispatched: usize = cot.iter().map(|r| r.dispatched_tool_calls()).sum();
    println!("== tool-free mode ({dispatched} tool calls dispatched)");
    println!("{}", render_eval(&build_eval_report(&cot, &points, &ladder)?, ReportFormat::Csv));
    Ok(())
}
