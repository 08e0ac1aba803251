use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, DatasetManifest};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Repeated stratified train/test partitions of a manifest's samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub fraction: f64,
    pub seed: u64,
    pub repetitions: Vec<Split>,
}

/// Test samples taken from a class of `n`: `max(1, round((1 - fraction)·n))`.
pub fn test_count(n: usize, fraction: f64) -> usize {
    (((1.0 - fraction) * n as f64).round() as usize).max(1)
}

/// `repetitions` independent stratified splits; each shuffles every class
/// with a seed derived from `(seed, repetition)` and holds out
/// [`test_count`] of its samples.
pub fn make_splits(manifest: &DatasetManifest, fraction: f64, repetitions: usize, seed: u64) -> Result<SplitPlan> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid("make_splits", format!("train fraction must lie in (0, 1), got {fraction}")));
    }
    let mut by_class = vec![Vec::new(); manifest.classes.len()];
    for (i, s) in manifest.samples.iter().enumerate() {
        by_class[s.class].push(i);
    }
    let small: Vec<String> = by_class
        .iter()
        .zip(&manifest.classes)
        .filter(|(members, _)| members.len() < 2)
        .map(|(members, c)| format!("{} ({} samples)", c.id, members.len()))
        .collect();
    if !small.is_empty() {
        return Err(Error::ClassTooSmall(small));
    }
    let repetitions = (0..repetitions)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[r as u64]));
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for members in &by_class {
                let mut members = members.clone();
                members.shuffle(&mut rng);
                let k = test_count(members.len(), fraction);
                test.extend_from_slice(&members[..k]);
                train.extend_from_slice(&members[k..]);
            }
            train.sort_unstable();
            test.sort_unstable();
            Split { train, test }
        })
        .collect();
    Ok(SplitPlan {
        fraction,
        seed,
        repetitions,
    })
}
