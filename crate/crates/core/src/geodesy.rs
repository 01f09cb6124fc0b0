//! Spherical great-circle distance, the hierarchical distance reward and
//! threshold accuracy.
//!
//! Everything here works in decimal degrees at the boundary and kilometres
//! for distances. Radians only exist inside the distance kernel.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Default Accuracy@D ladder: street, city, region, country, continent.
pub const DEFAULT_THRESHOLDS_KM: [f64; 5] = [1.0, 25.0, 200.0, 750.0, 2500.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} is outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("coordinate is not finite (lat={lat}, lon={lon})")]
    NonFinite { lat: f64, lon: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// A latitude/longitude pair in decimal degrees.
///
/// Latitude outside `[-90, 90]` is rejected. Longitude outside
/// `[-180, 180]` is wrapped into `[-180, 180)`. Negative zero is normalised to
/// positive zero on both axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint", into = "RawPoint")]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPoint {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawPoint> for GeoPoint {
    type Error = GeoError;
    fn try_from(raw: RawPoint) -> Result<Self, Self::Error> {
        GeoPoint::new(raw.lat, raw.lon)
    }
}

impl From<GeoPoint> for RawPoint {
    fn from(p: GeoPoint) -> Self {
        RawPoint { lat: p.lat, lon: p.lon }
    }
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(GeoError::NonFinite { lat, lon });
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::LatitudeOutOfRange(lat));
        }
        let lon = if (-180.0..=180.0).contains(&lon) {
            lon
        } else {
            (lon + 180.0).rem_euclid(360.0) - 180.0
        };
        // `x + 0.0` maps -0.0 to +0.0 and leaves every other value alone.
        Ok(Self { lat: lat + 0.0, lon: lon + 0.0 })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

impl std::fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.lat, self.lon)
    }
}

/// Spherical Earth model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarthModel {
    radius_km: f64,
}

impl EarthModel {
    pub fn new(radius_km: f64) -> Result<Self, GeoError> {
        if !(radius_km.is_finite() && radius_km > 0.0) {
            return Err(GeoError::InvalidInput(format!(
                "earth radius must be positive, got {radius_km}"
            )));
        }
        Ok(Self { radius_km })
    }

    pub fn radius_km(&self) -> f64 {
        self.radius_km
    }
}

impl Default for EarthModel {
    fn default() -> Self {
        Self { radius_km: EARTH_RADIUS_KM }
    }
}

/// Strictly increasing list of positive distance thresholds in kilometres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ThresholdLadder {
    thresholds_km: Vec<f64>,
}

impl ThresholdLadder {
    pub fn new(thresholds_km: Vec<f64>) -> Result<Self, GeoError> {
        if thresholds_km.is_empty() {
            return Err(GeoError::InvalidInput("threshold ladder is empty".into()));
        }
        if thresholds_km.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(GeoError::InvalidInput(format!(
                "thresholds must be positive and finite: {thresholds_km:?}"
            )));
        }
        if thresholds_km.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GeoError::InvalidInput(format!(
                "thresholds must be strictly increasing: {thresholds_km:?}"
            )));
        }
        Ok(Self { thresholds_km })
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds_km
    }
}

impl Default for ThresholdLadder {
    fn default() -> Self {
        Self { thresholds_km: DEFAULT_THRESHOLDS_KM.to_vec() }
    }
}

impl TryFrom<Vec<f64>> for ThresholdLadder {
    type Error = GeoError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ThresholdLadder> for Vec<f64> {
    fn from(l: ThresholdLadder) -> Self {
        l.thresholds_km
    }
}

/// Great-circle distance in kilometres via the spherical law of cosines.
pub fn great_circle_distance(a: GeoPoint, b: GeoPoint, model: EarthModel) -> f64 {
    // sin^2 + cos^2 is not exactly 1 in floating point.
    if a == b {
        return 0.0;
    }
    let (phi_a, phi_b) = (a.lat.to_radians(), b.lat.to_radians());
    let dlambda = (a.lon - b.lon).to_radians();
    let cos_angle = phi_a.sin() * phi_b.sin() + phi_a.cos() * phi_b.cos() * dlambda.cos();
    // Rounding can push the cosine a hair past +-1 for coincident or
    // antipodal points.
    model.radius_km * cos_angle.clamp(-1.0, 1.0).acos()
}

/// [`great_circle_distance`] on the default mean-radius Earth.
pub fn distance_km(a: GeoPoint, b: GeoPoint) -> f64 {
    great_circle_distance(a, b, EarthModel::default())
}

/// Piecewise linear reward over prediction error `d` (km).
///
/// Full credit under 1 km, decays to 0.75 at 25 km, then to 0.20 just short
/// of 200 km, and drops to zero from 200 km on.
pub fn reward_of_distance(d: f64) -> Result<f64, GeoError> {
    if !d.is_finite() || d < 0.0 {
        return Err(GeoError::InvalidInput(format!(
            "distance must be finite and nonnegative, got {d}"
        )));
    }
    let r = if d < 1.0 {
        1.0
    } else if d < 25.0 {
        1.0 - (0.25 / 24.0) * (d - 1.0)
    } else if d < 200.0 {
        0.75 - (0.55 / 175.0) * (d - 25.0)
    } else {
        0.0
    };
    Ok(r)
}

/// Fraction of `(prediction, truth)` pairs within each ladder threshold
/// (inclusive).
pub fn accuracy_at(
    pairs: &[(GeoPoint, GeoPoint)],
    ladder: &ThresholdLadder,
) -> Result<Vec<f64>, GeoError> {
    if pairs.is_empty() {
        return Err(GeoError::InvalidInput("no prediction pairs".into()));
    }
    let distances: Vec<f64> = pairs.iter().map(|(p, t)| distance_km(*p, *t)).collect();
    Ok(accuracy_from_distances(&distances, pairs.len(), ladder))
}

/// Accuracy@D over a set of known distances, normalised by `n`.
///
/// `n` may exceed `distances.len()`; the shortfall counts as misses at every
/// threshold (unanswered queries).
pub(crate) fn accuracy_from_distances(distances: &[f64], n: usize, ladder: &ThresholdLadder) -> Vec<f64> {
    ladder
        .thresholds()
        .iter()
        .map(|&limit| distances.iter().filter(|&&d| d <= limit).count() as f64 / n as f64)
        .collect()
}
