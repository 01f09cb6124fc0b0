//! Pass@K regime filtering, the two-phase curriculum, and the GRPO
//! advantage and clipped objective.
//!
//! ```text
//! cargo run --example dynamic_filter
//! ```

use geoagent::geodesy::reward_of_distance;
use geoagent::rl::{
    build_curriculum, classify_regime, group_advantages, surrogate_objective, FilterConfig, ProbeManifest, ProbeRecord,
    SurrogateInputs, ADVANTAGE_EPSILON,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = FilterConfig::default();
    // Distances (km) from K = 8 tool-free probes per image; None is a probe
    // that never answered.
    let probes = [
        ("street.jpg", vec![0.5, 2.0, 30.0, 30.0, 100.0, 300.0, 900.0, 900.0]),
        ("landmark.jpg", vec![0.2; 8]),
        ("field.jpg", vec![3000.0, 4100.0, 5000.0, 2900.0, 8000.0, 3100.0, 7000.0, 6000.0]),
        ("coast.jpg", vec![80.0, 150.0, 400.0, 120.0, 900.0, 60.0, 2000.0, 190.0]),
    ];
    let records: Vec<ProbeRecord> = probes
        .iter()
        .map(|(id, d)| ProbeRecord::from_distances(*id, d.iter().map(|&x| Some(x)).collect(), cfg.thresholds()))
        .collect();

    for r in &records {
        let labels: Vec<String> = cfg
            .thresholds()
            .iter()
            .map(|&t| Ok(format!("{t}:{:?}", classify_regime(r, t)?)))
            .collect::<Result<_, geoagent::rl::RlError>>()?;
        println!("{:<13} {}", r.image_id, labels.join(" "));
    }
    let manifest = ProbeManifest::build(&records, &cfg)?;
    println!("\nsummary: {}", serde_json::to_string(&manifest.summary)?);
    let cur = build_curriculum(&records, &cfg)?;
    println!("phase one: {:?}\nphase two: {:?}", cur.phase_one, cur.phase_two);

    // One rollout group for street.jpg, scored with the shaped reward.
    let rewards: Vec<f64> = probes[0].1.iter().map(|&d| reward_of_distance(d)).collect::<Result<_, _>>()?;
    let adv = group_advantages(&rewards, ADVANTAGE_EPSILON)?;
    println!("\nrewards    {rewards:.3?}\nadvantages {adv:.3?}");
    let ratios = vec![1.0, 1.3, 0.7, 1.1, 0.9, 1.5, 0.6, 1.0];
    let j = surrogate_objective(&SurrogateInputs::new(ratios, adv).with_kl(0.05))?;
    println!("surrogate objective {j:.6}");
    Ok(())
}
