use super::grpo::{grpo_objective, masked_nll, TokenBatch, TokenSeq, TrainError};

/// Context-free categorical policy over a small vocabulary:
/// `p = softmax(logits)` at every position.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    pub logits: Vec<f64>,
}

/// Token ids with the agent mask and, for the clipped objective, the
/// behaviour policy's log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySequence {
    pub tokens: Vec<usize>,
    pub mask: Vec<u8>,
    pub logp_old: Vec<f64>,
}

impl ToyPolicy {
    pub fn new(logits: Vec<f64>) -> Self {
        assert!(!logits.is_empty(), "vocabulary must be non-empty");
        Self { logits }
    }

    pub fn vocab_size(&self) -> usize {
        self.logits.len()
    }

    pub fn log_probs(&self) -> Vec<f64> {
        let max = self.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + self.logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        self.logits.iter().map(|l| l - lse).collect()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs().into_iter().map(f64::exp).collect()
    }

    pub fn token_seq(&self, seq: &ToySequence) -> TokenSeq {
        let lp = self.log_probs();
        TokenSeq {
            group: 0,
            logp_new: seq.tokens.iter().map(|&t| lp[t]).collect(),
            logp_old: seq.logp_old.clone(),
            mask: seq.mask.clone(),
        }
    }

    /// Masked NLL over `seqs` and its gradient with respect to the logits.
    pub fn nll_and_grad(&self, seqs: &[ToySequence]) -> Result<(f64, Vec<f64>), TrainError> {
        let batch = TokenBatch { seqs: seqs.iter().map(|s| self.token_seq(s)).collect() };
        let loss = masked_nll(&batch)?;
        let p = self.probs();
        let mut grad = vec![0.0; p.len()];
        if seqs.is_empty() {
            return Ok((loss, grad));
        }
        let scale = 1.0 / seqs.len() as f64;
        for s in seqs {
            for (&tok, &m) in s.tokens.iter().zip(&s.mask) {
                if m == 1 {
                    for (v, g) in grad.iter_mut().enumerate() {
                        *g += scale * (p[v] - f64::from(u8::from(v == tok)));
                    }
                }
            }
        }
        Ok((loss, grad))
    }

    /// Clipped objective over one group and its gradient. Tokens whose
    /// clipped branch is strictly smaller contribute no gradient.
    pub fn grpo_and_grad(
        &self,
        seqs: &[ToySequence],
        advantages: &[f64],
        clip: f64,
    ) -> Result<(f64, Vec<f64>), TrainError> {
        let token_seqs: Vec<TokenSeq> = seqs.iter().map(|s| self.token_seq(s)).collect();
        let loss = grpo_objective(&token_seqs, advantages, clip)?;
        let p = self.probs();
        let mut grad = vec![0.0; p.len()];
        let scale = -1.0 / seqs.len() as f64;
        for ((s, ts), &a) in seqs.iter().zip(&token_seqs).zip(advantages) {
            for (l, &tok) in s.tokens.iter().enumerate() {
                if s.mask[l] != 1 {
                    continue;
                }
                let rho = (ts.logp_new[l] - ts.logp_old[l]).exp();
                let clipped = rho.clamp(1.0 - clip, 1.0 + clip);
                if clipped * a < rho * a {
                    continue;
                }
                for (v, g) in grad.iter_mut().enumerate() {
                    *g += scale * rho * a * (f64::from(u8::from(v == tok)) - p[v]);
                }
            }
        }
        Ok((loss, grad))
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    fn random_seqs(rng: &mut ChaCha8Rng, v: usize) -> Vec<ToySequence> {
        (0..rng.gen_range(2..6))
            .map(|_| {
                let n = rng.gen_range(1..10);
                ToySequence {
                    tokens: (0..n).map(|_| rng.gen_range(0..v)).collect(),
                    mask: (0..n).map(|_| rng.gen_range(0..2)).collect(),
                    logp_old: (0..n).map(|_| -rng.gen_range(0.5..2.5)).collect(),
                }
            })
            .collect()
    }

    #[test]
    fn uniform_policy() {
        let p = ToyPolicy::new(vec![0.0; 5]);
        for lp in p.log_probs() {
            assert!((lp + 5f64.ln()).abs() < 1e-15);
        }
        let q = ToyPolicy::new(vec![3.0, -1.0, 0.5, 700.0]);
        assert!((q.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let v = 6;
            let policy = ToyPolicy::new((0..v).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let seqs = random_seqs(&mut rng, v);
            let (_, grad) = policy.nll_and_grad(&seqs).unwrap();
            for k in 0..v {
                let mut up = policy.clone();
                let mut down = policy.clone();
                up.logits[k] += 1e-6;
                down.logits[k] -= 1e-6;
                let fd = (up.nll_and_grad(&seqs).unwrap().0 - down.nll_and_grad(&seqs).unwrap().0) / 2e-6;
                assert!(rel_err(grad[k], fd) < 1e-4 || (grad[k] - fd).abs() < 1e-8, "{} vs {fd}", grad[k]);
            }
        }
    }

    #[test]
    fn grpo_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let v = 5;
            let policy = ToyPolicy::new((0..v).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let seqs = random_seqs(&mut rng, v);
            let adv: Vec<f64> = (0..seqs.len()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (_, grad) = policy.grpo_and_grad(&seqs, &adv, 0.2).unwrap();
            for k in 0..v {
                let mut up = policy.clone();
                let mut down = policy.clone();
                up.logits[k] += 1e-6;
                down.logits[k] -= 1e-6;
                let fd = (up.grpo_and_grad(&seqs, &adv, 0.2).unwrap().0
                    - down.grpo_and_grad(&seqs, &adv, 0.2).unwrap().0)
                    / 2e-6;
                assert!(rel_err(grad[k], fd) < 1e-4 || (grad[k] - fd).abs() < 1e-8, "{} vs {fd}", grad[k]);
            }
        }
    }
}
