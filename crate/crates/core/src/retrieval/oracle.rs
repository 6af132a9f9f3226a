use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{RankedPage, RetrievalError, Retriever};

/// Test double that knows the gold evidence. Unvisited evidence pages come
/// first (score 1.0, ascending index); when `pad` is set the remaining slots
/// are filled with unvisited non-evidence pages (score 0.0, ascending index).
#[derive(Debug, Clone)]
pub struct OracleRetriever {
    evidence: BTreeSet<u32>,
    n_pages: u32,
    pad: bool,
}

impl OracleRetriever {
    pub fn new(evidence: BTreeSet<u32>, n_pages: u32, pad: bool) -> Self {
        Self { evidence, n_pages, pad }
    }

    pub fn ranked(&self, excluded: &BTreeSet<u32>, k: usize) -> Vec<RankedPage> {
        let hits = self
            .evidence
            .iter()
            .copied()
            .filter(|p| *p >= 1 && *p <= self.n_pages && !excluded.contains(p))
            .map(|index| RankedPage { index, score: 1.0 });
        let pads = (1..=self.n_pages)
            .filter(|p| self.pad && !self.evidence.contains(p) && !excluded.contains(p))
            .map(|index| RankedPage { index, score: 0.0 });
        hits.chain(pads).take(k).collect()
    }
}

impl Retriever for OracleRetriever {
    fn retrieve(
        &mut self,
        _query: &str,
        excluded: &BTreeSet<u32>,
        k: usize,
    ) -> Result<Vec<RankedPage>, RetrievalError> {
        Ok(self.ranked(excluded, k))
    }
}

/// Wraps a base retriever and, independently per result slot with
/// probability `flip_prob`, swaps the page for a uniformly drawn page that is
/// neither excluded, evidence, nor already in the list. The slot keeps its
/// score so the list stays non-increasing. When no such page exists the
/// original result is kept.
pub struct NoisyRetriever {
    base: Box<dyn Retriever>,
    flip_prob: f64,
    rng: ChaCha8Rng,
    evidence: BTreeSet<u32>,
    n_pages: u32,
}

impl NoisyRetriever {
    pub fn new(base: Box<dyn Retriever>, flip_prob: f64, seed: u64, evidence: BTreeSet<u32>, n_pages: u32) -> Self {
        assert!((0.0..=1.0).contains(&flip_prob), "flip_prob must lie in [0, 1]");
        Self { base, flip_prob, rng: ChaCha8Rng::seed_from_u64(seed), evidence, n_pages }
    }
}

impl Retriever for NoisyRetriever {
    fn retrieve(&mut self, query: &str, excluded: &BTreeSet<u32>, k: usize) -> Result<Vec<RankedPage>, RetrievalError> {
        let mut results = self.base.retrieve(query, excluded, k)?;
        if self.flip_prob == 0.0 {
            return Ok(results);
        }
        let mut taken: BTreeSet<u32> = results.iter().map(|r| r.index).collect();
        for slot in results.iter_mut() {
            if !self.rng.gen_bool(self.flip_prob) {
                continue;
            }
            let pool: Vec<u32> = (1..=self.n_pages)
                .filter(|p| !excluded.contains(p) && !self.evidence.contains(p) && !taken.contains(p))
                .collect();
            if pool.is_empty() {
                continue;
            }
            let pick = pool[self.rng.gen_range(0..pool.len())];
            taken.remove(&slot.index);
            taken.insert(pick);
            slot.index = pick;
        }
        Ok(results)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx(r: &[RankedPage]) -> Vec<u32> {
        r.iter().map(|p| p.index).collect()
    }

    #[test]
    fn oracle_examples() {
        let o = OracleRetriever::new([3, 5].into(), 10, true);
        let r = o.ranked(&[3].into(), 2);
        assert_eq!(idx(&r), vec![5, 1]);
        assert_eq!(r[0].score, 1.0);
        assert_eq!(r[1].score, 0.0);

        let o = OracleRetriever::new(BTreeSet::new(), 10, true);
        assert!(o.ranked(&BTreeSet::new(), 3).iter().all(|p| p.score == 0.0));

        let o = OracleRetriever::new([2].into(), 10, true);
        assert_eq!(idx(&o.ranked(&BTreeSet::new(), 4)), vec![2, 1, 3, 4]);

        let o = OracleRetriever::new([2].into(), 10, false);
        assert_eq!(idx(&o.ranked(&BTreeSet::new(), 4)), vec![2]);
    }

    fn noisy(p: f64, seed: u64) -> NoisyRetriever {
        let base = Box::new(OracleRetriever::new([2, 4].into(), 20, true));
        NoisyRetriever::new(base, p, seed, [2, 4].into(), 20)
    }

    #[test]
    fn zero_flip_is_identity() {
        let mut n = noisy(0.0, 1);
        let mut base = OracleRetriever::new([2, 4].into(), 20, true);
        let ex = [1].into();
        assert_eq!(n.retrieve("q", &ex, 4).unwrap(), base.retrieve("q", &ex, 4).unwrap());
    }

    #[test]
    fn full_flip_removes_evidence() {
        for seed in 0..20 {
            let mut n = noisy(1.0, seed);
            let ex: BTreeSet<u32> = [7, 8].into();
            let r = n.retrieve("q", &ex, 4).unwrap();
            assert_eq!(r.len(), 4);
            let set: BTreeSet<u32> = idx(&r).into_iter().collect();
            assert_eq!(set.len(), 4, "no duplicates");
            assert!(set.iter().all(|p| ![2, 4, 7, 8].contains(p)));
        }
    }

    #[test]
    fn full_flip_keeps_original_when_pool_is_empty() {
        let base = Box::new(OracleRetriever::new([1, 2].into(), 3, true));
        let mut n = NoisyRetriever::new(base, 1.0, 0, [1, 2].into(), 3);
        let r = n.retrieve("q", &BTreeSet::new(), 3).unwrap();
        let set: BTreeSet<u32> = idx(&r).into_iter().collect();
        assert_eq!(set, [1, 2, 3].into());
    }

    #[test]
    fn seeded_determinism() {
        let ex = BTreeSet::new();
        let a: Vec<_> = (0..5).map(|_| noisy(0.5, 9)).map(|mut n| n.retrieve("q", &ex, 4).unwrap()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
    }
}
