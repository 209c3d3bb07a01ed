use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::StudyError;

pub const DEFAULT_SUBSET_COUNT: usize = 3;
pub const DEFAULT_SUBSET_SIZE: usize = 280;

/// A snippet available for rating and where its media lives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub id: String,
    pub media: String,
}

/// Draws `count` disjoint subsets of `size` ids without replacement. The
/// result depends on the set of ids and the seed, not on the pool order.
pub fn plan_subsets(pool: &[String], count: usize, size: usize, seed: u64) -> Result<Vec<Vec<String>>, StudyError> {
    if count == 0 || size == 0 {
        return Err(StudyError::InvalidRequest("subset count and size must be >= 1".into()));
    }
    let mut ids: Vec<&String> = pool.iter().collect();
    ids.sort_unstable();
    let mut seen = HashSet::new();
    if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
        return Err(StudyError::InvalidRequest(format!("duplicate snippet id {dup:?}")));
    }
    let needed = count * size;
    if ids.len() < needed {
        return Err(StudyError::PoolTooSmall {
            available: ids.len(),
            needed,
        });
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(ids[..needed]
        .chunks(size)
        .map(|c| c.iter().map(|s| (*s).clone()).collect())
        .collect())
}
