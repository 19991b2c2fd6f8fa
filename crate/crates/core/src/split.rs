//! Deterministic hash-based dataset splitting.
//!
//! Membership depends only on (record ids, fractions, seed): records are
//! ordered by a seeded hash of their id and dealt into buckets whose sizes
//! come from largest-remainder quotas, so a (0.8, 0.1, 0.1) split of 10
//! records is always exactly (8, 1, 1).

use crate::error::{CoreError, Result};
use crate::graph::DatasetRecord;
use alloc::string::String;
use alloc::vec::Vec;

fn seeded_hash(seed: u64, key: &str) -> u64 {
    // FNV-1a over the key, folded with splitmix-style avalanche of the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    for b in key.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^ (h >> 33)
}

/// Largest-remainder bucket sizes for `n` items under `fractions`.
pub fn quota_sizes(n: usize, fractions: &[f64]) -> Vec<usize> {
    let mut sizes: Vec<usize> = fractions.iter().map(|f| (f * n as f64) as usize).collect();
    let assigned: usize = sizes.iter().sum();
    // Distribute the remainder by descending fractional part, ties by bucket order.
    let mut rema: Vec<(f64, usize)> = fractions
        .iter()
        .enumerate()
        .map(|(ix, f)| (f * n as f64 - sizes[ix] as f64, ix))
        .collect();
    rema.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(core::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    for k in 0..(n - assigned) {
        sizes[rema[k % rema.len()].1] += 1;
    }
    sizes
}

/// Bucket index per key: keys are ranked by seeded hash (ties by key) and
/// dealt into buckets of quota size in order.
pub fn assign_buckets(keys: &[String], fractions: &[f64], seed: u64) -> Result<Vec<usize>> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|&f| f <= 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(CoreError::InvalidConfig {
            reason: alloc::format!("split fractions must be positive and sum to 1, got {fractions:?}"),
        });
    }
    let n = keys.len();
    let sizes = quota_sizes(n, fractions);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        seeded_hash(seed, &keys[a])
            .cmp(&seeded_hash(seed, &keys[b]))
            .then_with(|| keys[a].cmp(&keys[b]))
    });
    let mut bucket_of = alloc::vec![0usize; n];
    let mut cursor = 0usize;
    for (bucket, &size) in sizes.iter().enumerate() {
        for _ in 0..size {
            bucket_of[order[cursor]] = bucket;
            cursor += 1;
        }
    }
    Ok(bucket_of)
}

/// Split records into (train, valid, test) by hashed id.
pub fn split_dataset(
    records: &[DatasetRecord],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(
    Vec<&DatasetRecord>,
    Vec<&DatasetRecord>,
    Vec<&DatasetRecord>,
)> {
    let mut ids: Vec<String> = Vec::with_capacity(records.len());
    for r in records {
        if ids.contains(&r.id) {
            return Err(CoreError::DuplicateId { id: r.id.clone() });
        }
        ids.push(r.id.clone());
    }
    let buckets = assign_buckets(&ids, &[fractions.0, fractions.1, fractions.2], seed)?;
    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut test = Vec::new();
    for (record, bucket) in records.iter().zip(buckets) {
        match bucket {
            0 => train.push(record),
            1 => valid.push(record),
            _ => test.push(record),
        }
    }
    Ok((train, valid, test))
}
