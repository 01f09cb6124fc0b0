//! Replay a scripted agent episode against the offline tool backends.
//!
//! ```text
//! cargo run --example mock_episode
//! ```

use std::path::Path;
use std::sync::Arc;

use geoagent::agent::{run_episode, LoopConfig, ScriptedPolicy};
use geoagent::geodesy::{distance_km, GeoPoint};
use geoagent::raster::ImageRef;
use geoagent::tools::{MockCorpus, ToolRegistry};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let policy = ScriptedPolicy::load(&fixtures.join("beijing_walkthrough_script.json"))?;
    let registry = ToolRegistry::mock(&MockCorpus::load(&fixtures.join("mock_corpus.json"))?);
    let cfg = LoopConfig::new(Arc::new(policy), Arc::new(registry)).with_budget(6)?;

    let truth = GeoPoint::new(39.9067, 116.4032)?;
    let r = run_episode(&ImageRef::blank("beijing-walkthrough", 1024, 768), Some(truth), &cfg)?;

    println!("termination: {:?} after {} model turns", r.termination, r.model_turns);
    for ev in &r.tool_events {
        let status = if ev.success { "ok".to_string() } else { ev.error.clone().unwrap_or_default() };
        println!("  {:<20} {status}", ev.tool);
    }
    if let Some(p) = r.prediction {
        println!("prediction ({}, {}), error {:.3} km", p.lat(), p.lon(), distance_km(p, truth));
    }
    println!("registry: {:?}", cfg.registry.stats());
    Ok(())
}
