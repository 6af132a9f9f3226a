use serde::{Deserialize, Serialize};

use crate::corpus::{AnswerKind, QaItem, NOT_ANSWERABLE};
use crate::protocol::{validate_trajectory, Trajectory};
use crate::rewards::{exact_match, max_nls, normalize_answer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterReason {
    Ok,
    Format,
    Answer,
    Evidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterScores {
    pub anls: f64,
    pub em: bool,
    /// `|P_rel ∩ P_gt|`.
    pub overlap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub keep: bool,
    pub reason: FilterReason,
    pub scores: FilterScores,
    /// Format violations when the format gate failed.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<String>,
}

/// Optional external judge. Each method may overrule the rule-based gate by
/// returning `Some`; `None` leaves the gate's own verdict in place.
pub trait JudgeHook: Send + Sync {
    fn answer_equivalent(&self, _prediction: &str, _qa: &QaItem) -> Option<bool> {
        None
    }

    fn evidence_supports(&self, _traj: &Trajectory, _qa: &QaItem) -> Option<bool> {
        None
    }
}

/// Gates, in order: format, answer, evidence.
pub fn filter_trajectory(traj: &Trajectory, qa: &QaItem, anls_threshold: f64) -> FilterDecision {
    filter_trajectory_with(traj, qa, anls_threshold, None)
}

pub fn filter_trajectory_with(
    traj: &Trajectory,
    qa: &QaItem,
    anls_threshold: f64,
    judge: Option<&dyn JudgeHook>,
) -> FilterDecision {
    let pred = traj.final_answer.as_deref();
    let scores = FilterScores {
        anls: pred.map_or(0.0, |p| max_nls(p, &qa.gold_answers)),
        em: pred.is_some_and(|p| exact_match(p, &qa.gold_answers)),
        overlap: crate::util::intersection_len(&traj.relevant_pages_union(), &qa.evidence_pages),
    };
    let reject = |reason, violations| FilterDecision { keep: false, reason, scores, violations };

    let report = validate_trajectory(traj);
    if !report.valid {
        return reject(FilterReason::Format, report.violations);
    }

    let answer_ok = match pred {
        None => false,
        Some(p) => {
            let rule = match qa.answer_kind {
                AnswerKind::Freeform => scores.anls >= anls_threshold,
                AnswerKind::Identifier => scores.em,
                AnswerKind::Unanswerable => normalize_answer(p) == NOT_ANSWERABLE,
            };
            judge.and_then(|j| j.answer_equivalent(p, qa)).unwrap_or(rule)
        }
    };
    if !answer_ok {
        return reject(FilterReason::Answer, Vec::new());
    }

    if qa.is_answerable() {
        let rule = scores.overlap > 0;
        if !judge.and_then(|j| j.evidence_supports(traj, qa)).unwrap_or(rule) {
            return reject(FilterReason::Evidence, Vec::new());
        }
    }
    FilterDecision { keep: true, reason: FilterReason::Ok, scores, violations: Vec::new() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{render_turn, Action, FeedbackLog, TerminatedBy, ThinkBlock, Turn, TurnRecord};

    fn qa(kind: AnswerKind, gold: &str, evidence: &[u32]) -> QaItem {
        QaItem {
            qa_id: "q".into(),
            doc_id: "d".into(),
            question: "?".into(),
            gold_answers: vec![gold.into()],
            answer_kind: kind,
            evidence_pages: evidence.iter().copied().collect(),
        }
    }

    fn traj(answer: &str, relevant: &[u32]) -> Trajectory {
        let mk = |t: usize, action: Action, rel: Option<Vec<u32>>| {
            let think = ThinkBlock {
                analysis: "a".into(),
                plan: (t == 0).then(|| "p".into()),
                relevant_pages: rel,
                summary: "s".into(),
            };
            let turn = Turn::new(t, think, action.clone());
            TurnRecord {
                t,
                raw: render_turn(&turn),
                action: Some(action),
                relevant_pages: turn.think.relevant_pages.clone(),
                summary: Some("s".into()),
                format_error: None,
                feedback: FeedbackLog::default(),
            }
        };
        Trajectory {
            qa_id: "q".into(),
            doc_id: "d".into(),
            n_pages: 10,
            budget: 8,
            turns: vec![
                mk(0, Action::Fetch { indices: vec![2] }, None),
                mk(1, Action::Answer { text: answer.into() }, Some(relevant.to_vec())),
            ],
            final_answer: Some(answer.into()),
            terminated_by: TerminatedBy::Answer,
            error: None,
            reward: None,
        }
    }

    #[test]
    fn gate_table() {
        let q = qa(AnswerKind::Freeform, "abcdefghij", &[2]);
        assert!(filter_trajectory(&traj("abcdefghij", &[2]), &q, 0.7).keep);
        let d = filter_trajectory(&traj("abcdefghij", &[3]), &q, 0.7);
        assert_eq!(d.reason, FilterReason::Evidence);
        let d = filter_trajectory(&traj("abcdefwxyz", &[2]), &q, 0.7);
        assert_eq!(d.reason, FilterReason::Answer);
        assert!((d.scores.anls - 0.6).abs() < 1e-12);

        let mut bad = traj("abcdefghij", &[2]);
        bad.turns[0].raw = "garbage".into();
        let d = filter_trajectory(&bad, &q, 0.7);
        assert_eq!(d.reason, FilterReason::Format);
        assert!(!d.violations.is_empty());
    }

    #[test]
    fn threshold_edge() {
        // 100 chars, 31 substitutions: nls = 0.69.
        let gold: String = "a".repeat(100);
        let pred: String = "b".repeat(31) + &"a".repeat(69);
        let q = qa(AnswerKind::Freeform, &gold, &[2]);
        let d = filter_trajectory(&traj(&pred, &[2]), &q, 0.7);
        assert_eq!(d.reason, FilterReason::Answer);
        let pred: String = "b".repeat(30) + &"a".repeat(70);
        assert!(filter_trajectory(&traj(&pred, &[2]), &q, 0.7).keep);
    }

    #[test]
    fn unanswerable_skips_evidence_gate() {
        let q = qa(AnswerKind::Unanswerable, "not answerable", &[]);
        assert!(filter_trajectory(&traj("Not Answerable", &[]), &q, 0.7).keep);
        assert_eq!(filter_trajectory(&traj("42", &[]), &q, 0.7).reason, FilterReason::Answer);
    }

    #[test]
    fn identifier_needs_exact_match() {
        let q = qa(AnswerKind::Identifier, "1997", &[2]);
        assert!(filter_trajectory(&traj("1997", &[2]), &q, 0.7).keep);
        assert_eq!(filter_trajectory(&traj("1998", &[2]), &q, 0.7).reason, FilterReason::Answer);
    }

    struct Lenient;
    impl JudgeHook for Lenient {
        fn answer_equivalent(&self, _: &str, _: &QaItem) -> Option<bool> {
            Some(true)
        }
    }

    #[test]
    fn judge_can_overrule() {
        let q = qa(AnswerKind::Identifier, "1997", &[2]);
        let d = filter_trajectory_with(&traj("nineteen ninety-seven", &[2]), &q, 0.7, Some(&Lenient));
        assert!(d.keep);
    }
}
