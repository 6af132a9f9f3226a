use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("sequence {seq}: {what} has {got} entries, expected {want}")]
    Misaligned { seq: usize, what: &'static str, got: usize, want: usize },
    #[error("sequence {seq}: mask values must be 0 or 1")]
    BadMask { seq: usize },
    #[error("{advantages} advantages for {sequences} sequences")]
    AdvantageCount { advantages: usize, sequences: usize },
    #[error("group lists {got} {what} arrays for {want} rewards")]
    MemberCount { what: &'static str, got: usize, want: usize },
    #[error("empty group")]
    EmptyGroup,
}

/// One sampled sequence. Position `l` holds the log-probability of the
/// token predicted at that position; `mask[l] = 1` marks agent-generated
/// tokens, 0 marks prompt and environment-feedback tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSeq {
    #[serde(default)]
    pub group: usize,
    pub logp_new: Vec<f64>,
    #[serde(default)]
    pub logp_old: Vec<f64>,
    pub mask: Vec<u8>,
}

impl TokenSeq {
    fn check(&self, seq: usize, need_old: bool) -> Result<(), TrainError> {
        let want = self.logp_new.len();
        if self.mask.len() != want {
            return Err(TrainError::Misaligned { seq, what: "mask", got: self.mask.len(), want });
        }
        if need_old && self.logp_old.len() != want {
            return Err(TrainError::Misaligned { seq, what: "logp_old", got: self.logp_old.len(), want });
        }
        if self.mask.iter().any(|&m| m > 1) {
            return Err(TrainError::BadMask { seq });
        }
        Ok(())
    }

    fn masked(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &m)| m == 1).map(|(l, _)| l)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenBatch {
    pub seqs: Vec<TokenSeq>,
}

/// `-Σ m·logp_new` per sequence, averaged over the batch. Zero for an
/// empty batch.
pub fn masked_nll(batch: &TokenBatch) -> Result<f64, TrainError> {
    if batch.seqs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, s) in batch.seqs.iter().enumerate() {
        s.check(i, false)?;
        total -= s.masked().map(|l| s.logp_new[l]).sum::<f64>();
    }
    Ok(total / batch.seqs.len() as f64)
}

/// `A_i = (R_i - mean) / (std + eps)` with the population standard deviation.
pub fn group_advantages(rewards: &[f64], epsilon: f64) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let g = rewards.len() as f64;
    let mu = rewards.iter().sum::<f64>() / g;
    let sigma = (rewards.iter().map(|r| (r - mu).powi(2)).sum::<f64>() / g).sqrt();
    rewards.iter().map(|r| (r - mu) / (sigma + epsilon)).collect()
}

/// Token-level clipped surrogate for one group:
/// `L = -(1/G) Σ_i Σ_t min(ρ A_i, clip(ρ, 1-ε_c, 1+ε_c) A_i)` over masked
/// tokens, `ρ = exp(logp_new - logp_old)`. `clip = f64::INFINITY` disables
/// clipping.
pub fn grpo_objective(seqs: &[TokenSeq], advantages: &[f64], clip: f64) -> Result<f64, TrainError> {
    if seqs.is_empty() {
        return Err(TrainError::EmptyGroup);
    }
    if advantages.len() != seqs.len() {
        return Err(TrainError::AdvantageCount { advantages: advantages.len(), sequences: seqs.len() });
    }
    let mut sum = 0.0;
    for (i, (s, &a)) in seqs.iter().zip(advantages).enumerate() {
        s.check(i, true)?;
        for l in s.masked() {
            let rho = (s.logp_new[l] - s.logp_old[l]).exp();
            let clipped = rho.clamp(1.0 - clip, 1.0 + clip);
            sum += (rho * a).min(clipped * a);
        }
    }
    Ok(-sum / seqs.len() as f64)
}

/// Mean of the per-group objectives, grouping sequences by `group`.
/// `advantages` is aligned with `batch.seqs`.
pub fn grpo_batch_objective(batch: &TokenBatch, advantages: &[f64], clip: f64) -> Result<f64, TrainError> {
    if advantages.len() != batch.seqs.len() {
        return Err(TrainError::AdvantageCount { advantages: advantages.len(), sequences: batch.seqs.len() });
    }
    let mut groups: BTreeMap<usize, (Vec<TokenSeq>, Vec<f64>)> = BTreeMap::new();
    for (s, &a) in batch.seqs.iter().zip(advantages) {
        let e = groups.entry(s.group).or_default();
        e.0.push(s.clone());
        e.1.push(a);
    }
    if groups.is_empty() {
        return Err(TrainError::EmptyGroup);
    }
    let n = groups.len() as f64;
    let mut total = 0.0;
    for (seqs, adv) in groups.values() {
        total += grpo_objective(seqs, adv, clip)?;
    }
    Ok(total / n)
}

/// Per-member token arrays of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTokens {
    pub logp_new: Vec<Vec<f64>>,
    pub logp_old: Vec<Vec<f64>>,
    pub mask: Vec<Vec<u8>>,
}

/// One line of a groups JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub group_id: String,
    pub rewards: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<GroupTokens>,
}

impl GroupRecord {
    pub fn sequences(&self) -> Result<Vec<TokenSeq>, TrainError> {
        let Some(t) = &self.tokens else { return Ok(Vec::new()) };
        let g = self.rewards.len();
        for (what, got) in [("logp_new", t.logp_new.len()), ("logp_old", t.logp_old.len()), ("mask", t.mask.len())] {
            if got != g {
                return Err(TrainError::MemberCount { what, got, want: g });
            }
        }
        Ok((0..g)
            .map(|i| TokenSeq {
                group: 0,
                logp_new: t.logp_new[i].clone(),
                logp_old: t.logp_old[i].clone(),
                mask: t.mask[i].clone(),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq(new: &[f64], old: &[f64], mask: &[u8]) -> TokenSeq {
        TokenSeq { group: 0, logp_new: new.to_vec(), logp_old: old.to_vec(), mask: mask.to_vec() }
    }

    #[test]
    fn masked_nll_examples() {
        let zero = TokenBatch { seqs: vec![seq(&[-1.0, -2.0], &[], &[0, 0])] };
        assert_eq!(masked_nll(&zero).unwrap(), 0.0);
        let one = TokenBatch { seqs: vec![seq(&[-0.5], &[], &[1])] };
        assert_eq!(masked_nll(&one).unwrap(), 0.5);
        // (0.1 + 0.7) and 0.4, averaged over two sequences.
        let three =
            TokenBatch { seqs: vec![seq(&[-0.1, -0.3, -0.7], &[], &[1, 0, 1]), seq(&[-0.4, -0.9], &[], &[1, 0])] };
        assert!((masked_nll(&three).unwrap() - 0.6).abs() < 1e-15);
        let bad = TokenBatch { seqs: vec![seq(&[-0.1], &[], &[1, 1])] };
        assert!(masked_nll(&bad).is_err());
    }

    #[test]
    fn advantage_examples() {
        assert!(group_advantages(&[0.3; 5], 1e-8).iter().all(|&a| a == 0.0));
        let a = group_advantages(&[0.0, 1.0], 1e-8);
        assert!((a[0] + 1.0).abs() < 1e-6 && (a[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn objective_examples() {
        let s = seq(&[2f64.ln()], &[0.0], &[1]);
        assert!((grpo_objective(std::slice::from_ref(&s), &[1.0], 0.2).unwrap() + 1.2).abs() < 1e-12);
        assert_eq!(grpo_objective(&[s.clone(), s.clone()], &[0.0, 0.0], 0.2).unwrap(), 0.0);
        // ρ = 1: L = -(1/G) Σ_i |masked_i| · A_i.
        let a = seq(&[-0.3, -0.2, -0.9], &[-0.3, -0.2, -0.9], &[1, 1, 0]);
        let b = seq(&[-1.0], &[-1.0], &[1]);
        let l = grpo_objective(&[a, b], &[0.5, -2.0], 0.2).unwrap();
        assert!((l - (-(2.0 * 0.5 + 1.0 * -2.0) / 2.0)).abs() < 1e-12);
        assert!(grpo_objective(&[s], &[1.0, 2.0], 0.2).is_err());
    }

    #[test]
    fn batch_objective_averages_groups() {
        let mut a = seq(&[2f64.ln()], &[0.0], &[1]);
        let mut b = seq(&[0.0], &[0.0], &[1]);
        a.group = 0;
        b.group = 1;
        let batch = TokenBatch { seqs: vec![a, b] };
        let l = grpo_batch_objective(&batch, &[1.0, 3.0], 0.2).unwrap();
        assert!((l - (-1.2 - 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn group_record_sequences() {
        let json = r#"{"group_id":"g","rewards":[0,1],"tokens":{"logp_new":[[-1],[-2]],"logp_old":[[-1],[-2]],"mask":[[1],[1]]}}"#;
        let g: GroupRecord = serde_json::from_str(json).unwrap();
        assert_eq!(g.sequences().unwrap().len(), 2);
        let bad =
            r#"{"group_id":"g","rewards":[0,1],"tokens":{"logp_new":[[-1]],"logp_old":[[-1],[-2]],"mask":[[1],[1]]}}"#;
        let g: GroupRecord = serde_json::from_str(bad).unwrap();
        assert!(g.sequences().is_err());
    }

    fn random_group(rng: &mut ChaCha8Rng) -> (Vec<TokenSeq>, Vec<f64>) {
        let g = rng.gen_range(2..6);
        let seqs = (0..g)
            .map(|_| {
                let n = rng.gen_range(1..8);
                TokenSeq {
                    group: 0,
                    logp_new: (0..n).map(|_| -rng.gen_range(0.01..3.0)).collect(),
                    logp_old: (0..n).map(|_| -rng.gen_range(0.01..3.0)).collect(),
                    mask: (0..n).map(|_| rng.gen_range(0..2)).collect(),
                }
            })
            .collect();
        let adv = (0..g).map(|_| rng.gen_range(-2.0..2.0)).collect();
        (seqs, adv)
    }

    #[test]
    fn unclipped_matches_surrogate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let (seqs, adv) = random_group(&mut rng);
            let direct: f64 = -seqs
                .iter()
                .zip(&adv)
                .map(|(s, a)| {
                    (0..s.mask.len())
                        .filter(|&l| s.mask[l] == 1)
                        .map(|l| (s.logp_new[l] - s.logp_old[l]).exp() * a)
                        .sum::<f64>()
                })
                .sum::<f64>()
                / seqs.len() as f64;
            let l = grpo_objective(&seqs, &adv, f64::INFINITY).unwrap();
            assert!((l - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn unmasked_tokens_do_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (seqs, adv) = random_group(&mut rng);
            let base = grpo_objective(&seqs, &adv, 0.2).unwrap();
            let nll = masked_nll(&TokenBatch { seqs: seqs.clone() }).unwrap();
            let mut perturbed = seqs.clone();
            for s in &mut perturbed {
                for l in 0..s.mask.len() {
                    if s.mask[l] == 0 {
                        s.logp_new[l] -= rng.gen_range(0.1..5.0);
                        s.logp_old[l] -= rng.gen_range(0.1..5.0);
                    }
                }
            }
            assert_eq!(grpo_objective(&perturbed, &adv, 0.2).unwrap().to_bits(), base.to_bits());
            assert_eq!(masked_nll(&TokenBatch { seqs: perturbed }).unwrap().to_bits(), nll.to_bits());
        }
    }

    proptest! {
        #[test]
        fn advantages_normalize(rewards in proptest::collection::vec(0.0f64..1.0, 2..16)) {
            let a = group_advantages(&rewards, 1e-8);
            let g = a.len() as f64;
            let mean = a.iter().sum::<f64>() / g;
            prop_assert!(mean.abs() < 1e-6);
            let mu = rewards.iter().sum::<f64>() / g;
            let sigma = (rewards.iter().map(|r| (r - mu).powi(2)).sum::<f64>() / g).sqrt();
            // The eps in the denominator shifts the scale by eps / sigma.
            if sigma > 1e-2 {
                let sd = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / g).sqrt();
                prop_assert!((sd - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn advantages_shift_invariant(
            rewards in proptest::collection::vec(0.0f64..1.0, 2..16),
            scale in 0.5f64..4.0,
            shift in -3.0f64..3.0,
        ) {
            let g = rewards.len() as f64;
            let mu = rewards.iter().sum::<f64>() / g;
            let sigma = (rewards.iter().map(|r| (r - mu).powi(2)).sum::<f64>() / g).sqrt();
            prop_assume!(sigma * scale > 1e-2);
            let a = group_advantages(&rewards, 1e-8);
            let moved: Vec<f64> = rewards.iter().map(|r| scale * r + shift).collect();
            let b = group_advantages(&moved, 1e-8);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }
    }
}
