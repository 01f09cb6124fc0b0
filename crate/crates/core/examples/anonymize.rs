//! Salted, keyed hashing of image ids before release.
//!
//! ```text
//! ANON_SALT=my-secret cargo run --example anonymize
//! ```

use geoagent::datagen::{anonymize_corpus, anonymize_ground_truth, write_ground_truth, ANON_SALT_ENV};
use geoagent::geodesy::GeoPoint;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // A fixed fallback keeps the example runnable; real releases must set the salt.
    let salt = std::env::var(ANON_SALT_ENV).unwrap_or_else(|_| "example-only-salt".into());

    let ids = ["IMG_20190612_paris.jpg", "IMG_20190613_lyon.jpg", "IMG_20190612_paris.jpg"];
    for (orig, hashed) in anonymize_corpus(ids, &salt)? {
        println!("{orig:<24} -> {hashed}");
    }

    let rows = vec![("IMG_20190613_lyon.jpg".to_string(), GeoPoint::new(45.764, 4.8357)?)];
    let (renamed, _mapping) = anonymize_ground_truth(&rows, &salt)?;
    print!("\n{}", write_ground_truth(&renamed)?);
    Ok(())
}
