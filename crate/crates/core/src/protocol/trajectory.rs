//! Episode records and their JSONL form, plus the trajectory validator.

use std::collections::BTreeSet;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::{parse_turn, Action};
use crate::rewards::RewardBreakdown;

/// What the environment sent back after one turn.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackLog {
    /// Page indices delivered with their images, in delivery order.
    pub pages: Vec<u32>,
    pub reminders: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format_notice: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub t: usize,
    pub raw: String,
    /// `None` when the turn failed to parse.
    pub action: Option<Action>,
    pub relevant_pages: Option<Vec<u32>>,
    pub summary: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format_error: Option<String>,
    pub feedback: FeedbackLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminatedBy {
    Answer,
    Budget,
    /// The agent transport failed; the episode was aborted.
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub qa_id: String,
    pub doc_id: String,
    pub n_pages: usize,
    /// Turn budget the episode ran under.
    pub budget: usize,
    pub turns: Vec<TurnRecord>,
    pub final_answer: Option<String>,
    pub terminated_by: TerminatedBy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardBreakdown>,
}

impl Trajectory {
    /// Union of `<relevant_pages>` across all turns. Rewards and metrics both
    /// read the predicted evidence set through here.
    pub fn relevant_pages_union(&self) -> BTreeSet<u32> {
        self.turns.iter().filter_map(|t| t.relevant_pages.as_ref()).flatten().copied().collect()
    }

    /// Pages delivered in response to retrieval and fetch actions respectively.
    pub fn delivered_by_tool(&self) -> (BTreeSet<u32>, BTreeSet<u32>) {
        let mut retrieval = BTreeSet::new();
        let mut fetch = BTreeSet::new();
        for turn in &self.turns {
            match turn.action {
                Some(Action::Retrieval { .. }) => retrieval.extend(&turn.feedback.pages),
                Some(Action::Fetch { .. }) => fetch.extend(&turn.feedback.pages),
                _ => {}
            }
        }
        (retrieval, fetch)
    }

    pub fn delivered_pages(&self) -> Vec<u32> {
        self.turns.iter().flat_map(|t| t.feedback.pages.iter().copied()).collect()
    }

    pub fn invoked(&self, tool: &str) -> bool {
        self.turns.iter().any(|t| t.action.as_ref().is_some_and(|a| a.tool_name() == tool))
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trajectory serializes")
    }
}

/// Reads a trajectory JSONL stream, skipping blank lines.
pub fn read_trajectories(reader: impl BufRead) -> Result<Vec<Trajectory>, String> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| format!("line {}: {e}", n + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", n + 1))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatReport {
    pub valid: bool,
    pub violations: Vec<String>,
}

/// Structural validity: every turn re-parses from its raw text, turn indices
/// run 0..n, an answer appears at most once and only last, the declared
/// termination matches the turns, and the turn count respects the budget.
pub fn validate_trajectory(traj: &Trajectory) -> FormatReport {
    let mut v = Vec::new();
    let n = traj.turns.len();
    if n == 0 {
        v.push("no turns recorded".to_owned());
    }
    if n > traj.budget {
        v.push(format!("budget violation: {n} turns under budget {}", traj.budget));
    }
    if traj.terminated_by == TerminatedBy::Error {
        v.push(format!("episode aborted: {}", traj.error.as_deref().unwrap_or("transport error")));
    }
    let mut answer_at = None;
    for (i, turn) in traj.turns.iter().enumerate() {
        if turn.t != i {
            v.push(format!("turn {i} recorded with index {}", turn.t));
        }
        match parse_turn(&turn.raw, i) {
            Err(e) => v.push(format!("turn {i}: {e}")),
            Ok(parsed) => {
                if turn.action.as_ref() != Some(&parsed.action) {
                    v.push(format!("turn {i}: recorded action does not match raw text"));
                }
                if let (Some(rel), true) = (&parsed.think.relevant_pages, traj.n_pages > 0) {
                    if let Some(bad) = rel.iter().find(|&&p| p as usize > traj.n_pages) {
                        v.push(format!("turn {i}: relevant page {bad} outside 1..{}", traj.n_pages));
                    }
                }
                if matches!(parsed.action, Action::Answer { .. }) {
                    if answer_at.is_some() {
                        v.push(format!("turn {i}: second answer"));
                    }
                    answer_at.get_or_insert(i);
                }
            }
        }
    }
    if let Some(i) = answer_at {
        if i + 1 < n {
            v.push(format!("action after answer: answer at turn {i} of {n}"));
        }
    }
    match traj.terminated_by {
        TerminatedBy::Answer if answer_at.is_none() => v.push("terminated_by=answer without an answer turn".into()),
        TerminatedBy::Budget if answer_at.is_some() => v.push("terminated_by=budget but an answer was given".into()),
        TerminatedBy::Budget if n < traj.budget => {
            v.push(format!("terminated_by=budget after {n} of {} turns", traj.budget))
        }
        _ => {}
    }
    FormatReport { valid: v.is_empty(), violations: v }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{render_turn, ThinkBlock, Turn};

    fn record(t: usize, action: Action) -> TurnRecord {
        let think = if t == 0 {
            ThinkBlock { analysis: "a".into(), plan: Some("p".into()), relevant_pages: None, summary: "s".into() }
        } else {
            ThinkBlock { analysis: "a".into(), plan: None, relevant_pages: Some(vec![1]), summary: "s".into() }
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
    }

    fn traj(turns: Vec<TurnRecord>, by: TerminatedBy, budget: usize) -> Trajectory {
        Trajectory {
            qa_id: "q".into(),
            doc_id: "d".into(),
            n_pages: 10,
            budget,
            turns,
            final_answer: None,
            terminated_by: by,
            error: None,
            reward: None,
        }
    }

    fn fetch() -> Action {
        Action::Fetch { indices: vec![1] }
    }

    fn answer() -> Action {
        Action::Answer { text: "x".into() }
    }

    #[test]
    fn valid_two_turn() {
        let t = traj(vec![record(0, fetch()), record(1, answer())], TerminatedBy::Answer, 8);
        let r = validate_trajectory(&t);
        assert!(r.valid, "{:?}", r.violations);
    }

    #[test]
    fn action_after_answer() {
        let t = traj(vec![record(0, fetch()), record(1, answer()), record(2, fetch())], TerminatedBy::Answer, 8);
        let r = validate_trajectory(&t);
        assert!(!r.valid);
        assert!(r.violations.iter().any(|v| v.contains("action after answer")));
    }

    #[test]
    fn budget_violation() {
        let turns = (0..9).map(|i| record(i, fetch())).collect();
        let r = validate_trajectory(&traj(turns, TerminatedBy::Budget, 8));
        assert!(r.violations.iter().any(|v| v.contains("budget violation")));
    }

    #[test]
    fn tampered_action_detected() {
        let mut rec = record(0, fetch());
        rec.action = Some(Action::Fetch { indices: vec![2] });
        let r = validate_trajectory(&traj(vec![rec, record(1, answer())], TerminatedBy::Answer, 8));
        assert!(!r.valid);
    }

    #[test]
    fn json_round_trip() {
        let t = traj(vec![record(0, fetch()), record(1, answer())], TerminatedBy::Answer, 8);
        let line = t.to_json_line();
        assert!(line.contains(r#""action":{"type":"fetch","indices":[1]}"#));
        let back = read_trajectories(std::io::Cursor::new(format!("{line}\n\n"))).unwrap();
        assert_eq!(back, vec![t]);
    }
}
