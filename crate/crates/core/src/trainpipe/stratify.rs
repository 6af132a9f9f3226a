use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Self::Easy, Self::Medium, Self::Hard];

    fn name(self) -> &'static str {
        match self {
            Self::Easy => "easy",
            Self::Medium => "medium",
            Self::Hard => "hard",
        }
    }
}

/// Success counts at or above `easy_min` are easy, at or below `hard_max`
/// hard, everything in between medium.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketThresholds {
    pub rollouts: u32,
    pub easy_min: u32,
    pub hard_max: u32,
}

impl Default for BucketThresholds {
    fn default() -> Self {
        Self { rollouts: 4, easy_min: 4, hard_max: 0 }
    }
}

impl BucketThresholds {
    pub fn classify(&self, successes: u32) -> Option<Difficulty> {
        if successes > self.rollouts {
            return None;
        }
        Some(if successes >= self.easy_min {
            Difficulty::Easy
        } else if successes <= self.hard_max {
            Difficulty::Hard
        } else {
            Difficulty::Medium
        })
    }
}

/// Bucket for a success count out of four rollouts; `None` above four.
pub fn difficulty_bucket(successes: u32) -> Option<Difficulty> {
    BucketThresholds::default().classify(successes)
}

/// Rollouts whose answer similarity reaches `threshold`.
pub fn count_successes(anls_scores: &[f64], threshold: f64) -> u32 {
    anls_scores.iter().filter(|&&s| s >= threshold).count() as u32
}

/// Largest-remainder apportionment of `n` by `weights`; ties in the
/// remainder go to the lower index.
fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let weights: Vec<f64> = if total > 0.0 {
        weights.iter().map(|w| w / total).collect()
    } else {
        vec![1.0 / weights.len() as f64; weights.len()]
    };
    let exact: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Per-bucket targets (easy, medium, hard) summing exactly to `n`.
pub fn target_counts(n: usize, proportions: [f64; 3]) -> [usize; 3] {
    let c = apportion(n, &proportions);
    [c[0], c[1], c[2]]
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedSample<T> {
    pub items: Vec<(Difficulty, T)>,
    pub counts: [usize; 3],
    pub targets: [usize; 3],
    /// One entry per backfill move.
    pub backfill: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("requested {requested} items but only {available} are available across all buckets")]
pub struct NotEnoughItems {
    pub requested: usize,
    pub available: usize,
}

/// Backfill preference: nearest neighbours first.
fn neighbour_tiers(bucket: usize) -> &'static [&'static [usize]] {
    match bucket {
        0 => &[&[1], &[2]],
        1 => &[&[0, 2]],
        _ => &[&[1], &[0]],
    }
}

/// Draws `n` items across the (easy, medium, hard) buckets in the given
/// proportions. A bucket that cannot meet its target passes the shortfall
/// to its neighbours, split by their proportions and capped by what they
/// hold.
pub fn stratified_sample<T: Clone>(
    buckets: [&[T]; 3],
    n: usize,
    proportions: [f64; 3],
    seed: u64,
) -> Result<StratifiedSample<T>, NotEnoughItems> {
    let cap = buckets.map(<[T]>::len);
    let available: usize = cap.iter().sum();
    if available < n {
        return Err(NotEnoughItems { requested: n, available });
    }
    let targets = target_counts(n, proportions);
    let mut counts = targets;
    let mut backfill = Vec::new();
    for i in 0..3 {
        let mut deficit = counts[i].saturating_sub(cap[i]);
        if deficit == 0 {
            continue;
        }
        counts[i] = cap[i];
        for tier in neighbour_tiers(i) {
            while deficit > 0 {
                let open: Vec<usize> = tier.iter().copied().filter(|&j| counts[j] < cap[j]).collect();
                if open.is_empty() {
                    break;
                }
                let share = apportion(deficit, &open.iter().map(|&j| proportions[j]).collect::<Vec<_>>());
                for (&j, &want) in open.iter().zip(&share) {
                    let moved = want.min(cap[j] - counts[j]);
                    if moved > 0 {
                        counts[j] += moved;
                        deficit -= moved;
                        let msg = format!(
                            "backfill: {moved} item(s) moved from {} to {}",
                            Difficulty::ALL[i].name(),
                            Difficulty::ALL[j].name()
                        );
                        log::info!("{msg}");
                        backfill.push(msg);
                    }
                }
            }
        }
        debug_assert_eq!(deficit, 0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(n);
    for (b, bucket) in buckets.iter().enumerate() {
        for idx in sample(&mut rng, bucket.len(), counts[b]) {
            items.push((Difficulty::ALL[b], bucket[idx].clone()));
        }
    }
    Ok(StratifiedSample { items, counts, targets, backfill })
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const P: [f64; 3] = [0.1, 0.7, 0.2];

    #[test]
    fn buckets() {
        assert_eq!(difficulty_bucket(4), Some(Difficulty::Easy));
        assert_eq!(difficulty_bucket(0), Some(Difficulty::Hard));
        for s in 1..=3 {
            assert_eq!(difficulty_bucket(s), Some(Difficulty::Medium));
        }
        assert_eq!(difficulty_bucket(5), None);
        assert_eq!(count_successes(&[0.7, 0.69, 1.0, 0.0], 0.7), 2);
    }

    #[test]
    fn targets() {
        assert_eq!(target_counts(100, P), [10, 70, 20]);
        assert_eq!(target_counts(10, P), [1, 7, 2]);
        assert_eq!(target_counts(7, P), [1, 5, 1]);
        assert_eq!(target_counts(0, P), [0, 0, 0]);
    }

    #[test]
    fn ample_buckets() {
        let b: Vec<Vec<u32>> = (0..3).map(|k| (0..200).map(|i| k * 1000 + i).collect()).collect();
        let s = stratified_sample([&b[0], &b[1], &b[2]], 100, P, 1).unwrap();
        assert_eq!(s.counts, [10, 70, 20]);
        assert!(s.backfill.is_empty());
        let again = stratified_sample([&b[0], &b[1], &b[2]], 100, P, 1).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn empty_hard_backfills_from_medium() {
        let easy: Vec<u32> = (0..50).collect();
        let medium: Vec<u32> = (100..200).collect();
        let s = stratified_sample([&easy, &medium, &[]], 100, P, 0).unwrap();
        assert_eq!(s.counts, [10, 90, 0]);
        assert_eq!(s.backfill.len(), 1);
        assert!(s.backfill[0].contains("hard to medium"));
    }

    #[test]
    fn medium_shortfall_splits_by_proportion() {
        let easy: Vec<u32> = (0..100).collect();
        let hard: Vec<u32> = (200..300).collect();
        let s = stratified_sample([&easy, &[], &hard], 100, P, 0).unwrap();
        // 70 split 1:2 over easy and hard is 23.3 / 46.7, rounded to 23 / 47.
        assert_eq!(s.counts, [33, 0, 67]);
    }

    #[test]
    fn too_few_items() {
        let e: Vec<u32> = vec![1];
        assert_eq!(stratified_sample([&e, &[], &[]], 2, P, 0).unwrap_err().available, 1);
    }

    proptest! {
        #[test]
        fn sample_size_and_caps(
            caps in proptest::array::uniform3(0usize..60),
            n in 0usize..100,
            seed in any::<u64>(),
        ) {
            let b: Vec<Vec<usize>> = caps.iter().map(|&c| (0..c).collect()).collect();
            match stratified_sample([&b[0], &b[1], &b[2]], n, P, seed) {
                Ok(s) => {
                    prop_assert_eq!(s.items.len(), n);
                    for i in 0..3 {
                        prop_assert!(s.counts[i] <= caps[i]);
                        if caps[i] >= s.targets[i] {
                            prop_assert!(s.counts[i] >= s.targets[i]);
                        }
                    }
                }
                Err(e) => prop_assert!(caps.iter().sum::<usize>() < n && e.requested == n),
            }
        }
    }
}
