//! Seeded, label-stratified train/test partitions.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SplitError {
    #[error("need at least 2 instances to split, got {0}")]
    TooFewInstances(usize),
    #[error("split ratio must lie strictly between 0 and 1, got {0}")]
    InvalidRatio(f64),
}

/// A partition of instance positions `0..n` into train and test sets.
/// Both lists are sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    pub ratio: f64,
}

impl Split {
    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Stratified split: each stratum contributes `ratio` of its members to the
/// train side, up to one instance of rounding. Strata with fewer than two
/// members are pooled together and split as one stratum.
///
/// The result depends only on `(strata, seed, ratio)`.
pub fn split<K: Ord>(strata: &[K], seed: u64, ratio: f64) -> Result<Split, SplitError> {
    let n = strata.len();
    check(n, ratio)?;

    let mut groups: BTreeMap<&K, Vec<usize>> = BTreeMap::new();
    for (i, k) in strata.iter().enumerate() {
        groups.entry(k).or_default().push(i);
    }
    let mut pools: Vec<Vec<usize>> = Vec::new();
    let mut remainder = Vec::new();
    for (_, members) in groups {
        if members.len() < 2 {
            remainder.extend(members);
        } else {
            pools.push(members);
        }
    }
    if !remainder.is_empty() {
        remainder.sort_unstable();
        pools.push(remainder);
    }

    let quotas = allocate(&pools.iter().map(Vec::len).collect::<Vec<_>>(), ratio);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(n);
    let mut test = Vec::with_capacity(n);
    for (mut members, quota) in pools.into_iter().zip(quotas) {
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..quota]);
        test.extend_from_slice(&members[quota..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test, seed, ratio })
}

/// Split without stratification.
pub fn split_unstratified(n: usize, seed: u64, ratio: f64) -> Result<Split, SplitError> {
    split(&vec![(); n], seed, ratio)
}

/// Split at group granularity (e.g. whole sessions): all instances sharing a
/// group key land on the same side. The ratio applies to groups.
pub fn split_grouped<G: Ord + Clone>(groups: &[G], seed: u64, ratio: f64) -> Result<Split, SplitError> {
    let mut keys: Vec<G> = groups.to_vec();
    keys.sort();
    keys.dedup();
    let by_group = split_unstratified(keys.len(), seed, ratio)?;
    let train_keys: Vec<&G> = by_group.train.iter().map(|&i| &keys[i]).collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, g) in groups.iter().enumerate() {
        if train_keys.binary_search(&g).is_ok() {
            train.push(i);
        } else {
            test.push(i);
        }
    }
    Ok(Split { train, test, seed, ratio })
}

fn check(n: usize, ratio: f64) -> Result<(), SplitError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(SplitError::InvalidRatio(ratio));
    }
    if n < 2 {
        return Err(SplitError::TooFewInstances(n));
    }
    Ok(())
}

/// Largest-remainder allocation of `round(ratio * total)` train slots across
/// pools, keeping both sides of the overall split non-empty.
fn allocate(sizes: &[usize], ratio: f64) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let target = ((ratio * total as f64).round() as usize).clamp(1, total - 1);
    let exact: Vec<f64> = sizes.iter().map(|&s| ratio * s as f64).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    // Stable sort keeps pool order as the tie-break.
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut assigned: usize = quotas.iter().sum();
    for &i in order.iter().cycle().take(4 * sizes.len().max(1)) {
        if assigned >= target {
            break;
        }
        if quotas[i] < sizes[i] {
            quotas[i] += 1;
            assigned += 1;
        }
    }
    for &i in order.iter().rev().cycle().take(4 * sizes.len().max(1)) {
        if assigned <= target {
            break;
        }
        if quotas[i] > 0 {
            quotas[i] -= 1;
            assigned -= 1;
        }
    }
    quotas
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_instances_split_eighty_twenty() {
        let s = split_unstratified(100, 7, 0.8).unwrap();
        assert_eq!(s.train.len(), 80);
        assert_eq!(s.test.len(), 20);
    }

    #[test]
    fn same_seed_same_membership() {
        let labels: Vec<u8> = (0..57).map(|i| (i % 5) as u8).collect();
        assert_eq!(split(&labels, 11, 0.8).unwrap(), split(&labels, 11, 0.8).unwrap());
        assert_ne!(split(&labels, 11, 0.8).unwrap().train, split(&labels, 12, 0.8).unwrap().train);
    }

    #[test]
    fn stratified_proportions_on_forty_sixty_fixture() {
        // Brute-force proportion check over many seeds.
        let labels: Vec<char> = std::iter::repeat('A').take(40).chain(std::iter::repeat('B').take(60)).collect();
        for seed in 1..=30 {
            let s = split(&labels, seed, 0.8).unwrap();
            let a = s.train.iter().filter(|&&i| labels[i] == 'A').count();
            let b = s.train.iter().filter(|&&i| labels[i] == 'B').count();
            assert!((31..=33).contains(&a), "seed {seed}: A={a}");
            assert!((47..=49).contains(&b), "seed {seed}: B={b}");
        }
    }

    #[test]
    fn singleton_strata_are_pooled() {
        let labels = vec![0, 0, 0, 0, 0, 1, 2, 3];
        let s = split(&labels, 3, 0.5).unwrap();
        assert_eq!(s.len(), 8);
        assert_eq!(s.train.len(), 4);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert_eq!(split_unstratified(1, 1, 0.8), Err(SplitError::TooFewInstances(1)));
        assert_eq!(split_unstratified(10, 1, 1.0), Err(SplitError::InvalidRatio(1.0)));
        assert_eq!(split_unstratified(10, 1, 0.0), Err(SplitError::InvalidRatio(0.0)));
    }

    #[test]
    fn grouped_split_keeps_groups_together() {
        let groups: Vec<u32> = (0..60).map(|i| i / 6).collect();
        let s = split_grouped(&groups, 5, 0.8).unwrap();
        assert_eq!(s.train.len(), 48);
        for &i in &s.train {
            assert!(!s.test.iter().any(|&j| groups[j] == groups[i]));
        }
    }
}
