//! Trajectory rewards: thresholded ANLS / exact-match answer reward,
//! recall-weighted F-beta evidence reward, binary format reward, and their
//! weighted sum.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::config::{DEFAULT_ANSWER_THRESHOLD, DEFAULT_EPSILON, DEFAULT_EVIDENCE_BETA_SQ};
use crate::corpus::{AnswerKind, QaItem, NOT_ANSWERABLE};
use crate::protocol::{validate_trajectory, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub ans: f64,
    pub evi: f64,
    pub fmt: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { ans: 0.6, evi: 0.3, fmt: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub ans: f64,
    pub evi: f64,
    pub fmt: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardParams {
    pub weights: RewardWeights,
    /// ANLS threshold below which a free-form answer scores zero.
    pub answer_threshold: f64,
    pub beta_sq: f64,
    pub epsilon: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            weights: RewardWeights::default(),
            answer_threshold: DEFAULT_ANSWER_THRESHOLD,
            beta_sq: DEFAULT_EVIDENCE_BETA_SQ,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// Lowercase, trim, collapse inner whitespace runs to one space.
pub fn normalize_answer(s: &str) -> String {
    s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

/// Edit distance over Unicode scalar values, two-row DP.
pub fn levenshtein(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            curr[j + 1] = sub.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Normalized Levenshtein similarity of the normalized strings, in [0, 1].
pub fn nls(a: &str, b: &str) -> f64 {
    let a: Vec<char> = normalize_answer(a).chars().collect();
    let b: Vec<char> = normalize_answer(b).chars().collect();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(&a, &b) as f64 / longest as f64
}

/// Best similarity of `pred` against any gold answer.
pub fn max_nls(pred: &str, golds: &[String]) -> f64 {
    golds.iter().map(|g| nls(pred, g)).fold(0.0, f64::max)
}

pub fn exact_match(pred: &str, golds: &[String]) -> bool {
    let p = normalize_answer(pred);
    golds.iter().any(|g| normalize_answer(g) == p)
}

/// Answer reward. `pred = None` means the episode ended without an answer.
pub fn answer_reward(pred: Option<&str>, qa: &QaItem, threshold: f64) -> f64 {
    let Some(pred) = pred else { return 0.0 };
    match qa.answer_kind {
        AnswerKind::Freeform => {
            let s = max_nls(pred, &qa.gold_answers);
            if s >= threshold {
                s
            } else {
                0.0
            }
        }
        AnswerKind::Identifier => f64::from(u8::from(exact_match(pred, &qa.gold_answers))),
        AnswerKind::Unanswerable => f64::from(u8::from(normalize_answer(pred) == NOT_ANSWERABLE)),
    }
}

/// Recall-weighted F-score between declared relevant pages and gold pages.
/// Zero whenever the two sets are disjoint (including an empty gold set).
pub fn evidence_reward(relevant: &BTreeSet<u32>, gold: &BTreeSet<u32>, beta_sq: f64, epsilon: f64) -> f64 {
    let hits = crate::util::intersection_len(relevant, gold);
    if hits == 0 {
        return 0.0;
    }
    let hits = hits as f64;
    let p = hits / (relevant.len() as f64 + epsilon);
    let r = hits / (gold.len() as f64 + epsilon);
    (1.0 + beta_sq) * p * r / (beta_sq * p + r)
}

/// 1 when the trajectory passes [`validate_trajectory`], else 0.
pub fn format_reward(traj: &Trajectory) -> f64 {
    if validate_trajectory(traj).valid {
        1.0
    } else {
        0.0
    }
}

pub fn combine(ans: f64, evi: f64, fmt: f64, weights: &RewardWeights) -> RewardBreakdown {
    RewardBreakdown { ans, evi, fmt, total: weights.ans * ans + weights.evi * evi + weights.fmt * fmt }
}

pub fn total_reward(traj: &Trajectory, qa: &QaItem, params: &RewardParams) -> RewardBreakdown {
    let ans = answer_reward(traj.final_answer.as_deref(), qa, params.answer_threshold);
    let evi = evidence_reward(&traj.relevant_pages_union(), &qa.evidence_pages, params.beta_sq, params.epsilon);
    let fmt = format_reward(traj);
    combine(ans, evi, fmt, &params.weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn qa(kind: AnswerKind, gold: &str) -> QaItem {
        QaItem {
            qa_id: "q".into(),
            doc_id: "d".into(),
            question: "?".into(),
            gold_answers: vec![gold.into()],
            answer_kind: kind,
            evidence_pages: BTreeSet::new(),
        }
    }

    #[test]
    fn nls_examples() {
        assert_eq!(nls("Net Income", "net income"), 1.0);
        assert!((nls("abc", "abd") - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(nls("abc", "xyz"), 0.0);
        assert_eq!(nls("", "  "), 1.0);
        assert_eq!(nls("a  b", " A B "), 1.0);
    }

    #[test]
    fn answer_reward_threshold() {
        let q = qa(AnswerKind::Freeform, "abd");
        assert!((answer_reward(Some("abc"), &q, 0.5) - 2.0 / 3.0).abs() < 1e-15);
        // 6 and 5 substitutions over 10 chars: nls 0.4 and exactly 0.5.
        let q = qa(AnswerKind::Freeform, "abcdefghij");
        assert_eq!(answer_reward(Some("abcdxxxxxx"), &q, 0.5), 0.0);
        assert_eq!(answer_reward(Some("abcdexxxxx"), &q, 0.5), 0.5);
        assert_eq!(answer_reward(None, &q, 0.5), 0.0);
    }

    #[test]
    fn answer_reward_identifier_and_unanswerable() {
        let q = qa(AnswerKind::Identifier, "1997");
        assert_eq!(answer_reward(Some("1997"), &q, 0.5), 1.0);
        assert_eq!(answer_reward(Some("1998"), &q, 0.5), 0.0);
        let q = qa(AnswerKind::Unanswerable, NOT_ANSWERABLE);
        assert_eq!(answer_reward(Some("  Not   Answerable "), &q, 0.5), 1.0);
        assert_eq!(answer_reward(Some("42"), &q, 0.5), 0.0);
    }

    #[test]
    fn evidence_examples() {
        let s = |v: &[u32]| v.iter().copied().collect::<BTreeSet<_>>();
        // p = r = 1 / (2 + eps); the F-score of equal p and r is p itself.
        let want = 1.0 / (2.0 + 1e-8);
        assert!((evidence_reward(&s(&[1, 2]), &s(&[2, 3]), 2.0, 1e-8) - want).abs() < 1e-15);
        assert!((evidence_reward(&s(&[1, 2]), &s(&[2, 3]), 2.0, 0.0) - 0.5).abs() < 1e-15);
        assert!((evidence_reward(&s(&[4, 5]), &s(&[4, 5]), 2.0, 1e-8) - 1.0).abs() < 1e-6);
        assert_eq!(evidence_reward(&s(&[1]), &s(&[2]), 2.0, 1e-8), 0.0);
        assert_eq!(evidence_reward(&s(&[]), &s(&[]), 2.0, 1e-8), 0.0);
    }

    #[test]
    fn combine_is_weighted_sum() {
        let b = combine(1.0, 0.0, 1.0, &RewardWeights::default());
        assert!((b.total - 0.7).abs() < 1e-15);
        let b = combine(1.0, 1.0, 1.0, &RewardWeights::default());
        assert!((b.total - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn nls_symmetric_and_bounded(a in "[a-cA-C ]{0,12}", b in "[a-cA-C ]{0,12}") {
            let x = nls(&a, &b);
            prop_assert_eq!(x, nls(&b, &a));
            prop_assert!((0.0..=1.0).contains(&x));
            prop_assert_eq!(x == 1.0, normalize_answer(&a) == normalize_answer(&b));
        }

        #[test]
        fn evidence_monotone(rel in proptest::collection::btree_set(1u32..20, 0..8),
                             gold in proptest::collection::btree_set(1u32..20, 1..6),
                             extra in 1u32..20) {
            let base = evidence_reward(&rel, &gold, 2.0, 1e-8);
            let mut more = rel.clone();
            more.insert(extra);
            let after = evidence_reward(&more, &gold, 2.0, 1e-8);
            if rel.contains(&extra) {
                prop_assert_eq!(after, base);
            } else if gold.contains(&extra) {
                prop_assert!(after >= base - 1e-12);
            } else {
                prop_assert!(after <= base + 1e-12);
            }
        }
    }
}
