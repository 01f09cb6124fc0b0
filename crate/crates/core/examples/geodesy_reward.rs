//! Distances, the shaped reward and Accuracy@D.
//!
//! ```text
//! cargo run --example geodesy_reward
//! ```

use geoagent::geodesy::{accuracy_at, distance_km, reward_of_distance, GeoPoint, ThresholdLadder};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let beijing = GeoPoint::new(39.9067, 116.4032)?;
    let shanghai = GeoPoint::new(31.2304, 121.4737)?;
    let tianjin = GeoPoint::new(39.3434, 117.3616)?;
    let d = distance_km(beijing, shanghai);
    println!("Beijing -> Shanghai: {d:.1} km");

    println!("\n  distance_km  reward");
    for km in [0.0, 0.5, 1.0, 10.0, 25.0, 112.5, 199.9, 200.0, 1000.0] {
        println!("  {km:>11}  {:.4}", reward_of_distance(km)?);
    }

    // Two guesses for a Beijing photo; accuracy is inclusive at each rung.
    let pairs = [(tianjin, beijing), (beijing, beijing)];
    let ladder = ThresholdLadder::default();
    let acc = accuracy_at(&pairs, &ladder)?;
    println!();
    for (t, a) in ladder.thresholds().iter().zip(acc) {
        println!("Acc@{t} km = {a}");
    }
    Ok(())
}
