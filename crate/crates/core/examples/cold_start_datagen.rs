//! Synthesize trajectories with an observer and a tool-call policy, keep the
//! ones that pass rejection sampling, and emit the cold-start dataset.
//!
//! ```text
//! cargo run --example cold_start_datagen
//! ```

use std::path::Path;
use std::sync::Arc;

use geoagent::agent::{EpisodeInput, LoopConfig, ScriptedPolicy, AGENT_SYSTEM_PROMPT};
use geoagent::datagen::{emit_cold_start_dataset, synthesize_batch, CurationConfig};
use geoagent::geodesy::GeoPoint;
use geoagent::raster::ImageRef;
use geoagent::tools::{MockCorpus, ToolRegistry};

const ZOOM: &str = r#"<think>The shop sign might be legible.</think><tool_call>{"name": "image_zoom_in_tool", "arguments": {"bbox_2d": [100, 100, 300, 200]}}</tool_call>"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let truths = [("paris", 48.8566, 2.3522), ("lima", -12.0464, -77.0428), ("oslo", 59.9139, 10.7522)];
    // Paris is answered exactly, Lima 40 km off, Oslo uses a zoom first.
    let policy = ScriptedPolicy::new("tool-call-agent")
        .with_script("paris", vec!["<answer>Latitude: 48.8566\nLongitude: 2.3522</answer>".into()])
        .with_script("lima", vec!["<answer>Latitude: -11.7\nLongitude: -77.0428</answer>".into()])
        .with_script("oslo", vec![ZOOM.into(), "<think>Norwegian text.</think><answer>Latitude: 59.91\nLongitude: 10.75</answer>".into()]);
    let mut observer = ScriptedPolicy::new("observer");
    for (id, ..) in truths {
        observer = observer.with_script(id, vec!["Macro-scale: temperate city.".into(), "Crop: signage in Norwegian.".into()]);
    }

    let corpus = MockCorpus::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mock_corpus.json"))?;
    let cfg = LoopConfig::new(Arc::new(policy), Arc::new(ToolRegistry::mock(&corpus)));
    let inputs: Vec<EpisodeInput> = truths
        .iter()
        .map(|&(id, lat, lon)| Ok(EpisodeInput { image: ImageRef::blank(id, 640, 480), ground_truth: Some(GeoPoint::new(lat, lon)?) }))
        .collect::<Result<_, geoagent::geodesy::GeoError>>()?;

    let synthesized = synthesize_batch(&inputs, Arc::new(observer), &cfg, 2)?;
    let mut raw = Vec::new();
    for s in synthesized {
        let s = s?;
        println!("{}: {} observer reports, {} steps", s.episode.image_id(), s.reports.len(), s.episode.trajectory.steps.len());
        raw.push(s.episode.trajectory);
    }

    let ds = emit_cold_start_dataset(&raw, &CurationConfig::default(), AGENT_SYSTEM_PROMPT)?;
    println!("\nraw {} accepted {} rate {:.2}", ds.manifest.raw, ds.manifest.accepted, ds.manifest.acceptance_rate);
    for r in &ds.rejects {
        println!("rejected {}: {:?}", r.decision.image_id, r.decision.reasons);
    }
    let out = std::env::temp_dir().join("geoagent-cold-start");
    ds.write_to(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}
