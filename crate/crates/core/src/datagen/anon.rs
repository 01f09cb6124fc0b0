//! Keyed, irreversible renaming of image identifiers.

use std::collections::{BTreeMap, BTreeSet};

use hmac::{Hmac, KeyInit, Mac};
use sha2::Sha256;

use super::DatagenError;
use crate::geodesy::GeoPoint;

pub const ANON_SALT_ENV: &str = "ANON_SALT";
/// Hex characters kept from the keyed digest.
pub const HASH_HEX_LEN: usize = 16;

pub fn anonymize_id(original: &str, salt: &str) -> Result<String, DatagenError> {
    if original.is_empty() {
        return Err(DatagenError::EmptyId);
    }
    if salt.is_empty() {
        return Err(DatagenError::EmptySalt);
    }
    let mut mac = Hmac::<Sha256>::new_from_slice(salt.as_bytes()).expect("hmac accepts any key length");
    mac.update(original.as_bytes());
    let digest = mac.finalize().into_bytes();
    let mut out = hex::encode(digest);
    out.truncate(HASH_HEX_LEN);
    Ok(out)
}

/// Hash every distinct id, keeping first-seen order. Fails if two distinct
/// ids land on the same hash.
pub fn anonymize_corpus<'a, I>(ids: I, salt: &str) -> Result<Vec<(String, String)>, DatagenError>
where
    I: IntoIterator<Item = &'a str>,
{
    map_ids(ids, |id| anonymize_id(id, salt))
}

pub(crate) fn map_ids<'a, I, F>(ids: I, hash_fn: F) -> Result<Vec<(String, String)>, DatagenError>
where
    I: IntoIterator<Item = &'a str>,
    F: Fn(&str) -> Result<String, DatagenError>,
{
    let mut seen = BTreeSet::new();
    let mut by_hash: BTreeMap<String, String> = BTreeMap::new();
    let mut mapping = Vec::new();
    for id in ids {
        if !seen.insert(id) {
            continue;
        }
        let hash = hash_fn(id)?;
        if let Some(first) = by_hash.insert(hash.clone(), id.to_string()) {
            return Err(DatagenError::CollisionDetected { first, second: id.to_string(), hash });
        }
        mapping.push((id.to_string(), hash));
    }
    Ok(mapping)
}

/// `(original_id, anonymized_id)` pairs in first-seen order.
pub type IdMapping = Vec<(String, String)>;

/// Rename a labelled corpus. Coordinates pass through untouched.
pub fn anonymize_ground_truth(
    rows: &[(String, GeoPoint)],
    salt: &str,
) -> Result<(Vec<(String, GeoPoint)>, IdMapping), DatagenError> {
    let mapping = anonymize_corpus(rows.iter().map(|(id, _)| id.as_str()), salt)?;
    let lookup: BTreeMap<&str, &str> = mapping.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let renamed = rows.iter().map(|(id, p)| (lookup[id.as_str()].to_string(), *p)).collect();
    Ok((renamed, mapping))
}
