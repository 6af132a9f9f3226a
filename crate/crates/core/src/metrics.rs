//! Evaluation metrics: Page-F1, per-tool usage statistics, and report
//! aggregation with token accounting.
//!
//! Page-level precision/recall/F1 and the per-tool figures are averaged over
//! episodes whose gold evidence set is non-empty; unanswerable items have no
//! evidence to compare against. Per-tool figures are per-episode values
//! macro-averaged over the episodes that invoked the tool.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, QaItem};
use crate::overview::OverviewLayout;
use crate::protocol::{Action, TerminatedBy, Trajectory};
use crate::rewards::{answer_reward, total_reward, RewardBreakdown, RewardParams};

pub const TOOLS: [&str; 2] = ["retrieval_page", "fetch_page"];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Harmonic-mean precision / recall / F1, with 0/0 taken as 0.
pub fn page_f1(pred: &BTreeSet<u32>, gold: &BTreeSet<u32>) -> Prf {
    let hits = crate::util::intersection_len(pred, gold) as f64;
    let precision = if pred.is_empty() { 0.0 } else { hits / pred.len() as f64 };
    let recall = if gold.is_empty() { 0.0 } else { hits / gold.len() as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Prf { precision, recall, f1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Retrieval,
    Fetch,
}

#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub trajectory: Trajectory,
    pub qa: QaItem,
    pub reward: RewardBreakdown,
    /// Every delivered page with the tool that delivered it, in delivery order.
    pub provenance: Vec<(u32, Provenance)>,
    pub overview_tokens: u64,
    pub page_tokens: u64,
}

impl EpisodeRecord {
    pub fn new(
        trajectory: Trajectory,
        qa: QaItem,
        doc: &Document,
        group_capacity: usize,
        header_height: u32,
        params: &RewardParams,
    ) -> Self {
        let reward = total_reward(&trajectory, &qa, params);
        let provenance = provenance(&trajectory);
        let overview_tokens = OverviewLayout::new(doc.num_pages(), group_capacity, header_height).token_cost();
        let page_tokens = provenance.iter().filter_map(|(i, _)| doc.page(*i)).map(|p| p.token_cost()).sum();
        Self { trajectory, qa, reward, provenance, overview_tokens, page_tokens }
    }

    pub fn total_tokens(&self) -> u64 {
        self.overview_tokens + self.page_tokens
    }

    pub fn pages_by(&self, tool: Provenance) -> BTreeSet<u32> {
        self.provenance.iter().filter(|(_, p)| *p == tool).map(|(i, _)| *i).collect()
    }

    pub fn page_prf(&self) -> Prf {
        page_f1(&self.trajectory.relevant_pages_union(), &self.qa.evidence_pages)
    }
}

pub fn provenance(traj: &Trajectory) -> Vec<(u32, Provenance)> {
    let mut out = Vec::new();
    for turn in &traj.turns {
        let tag = match turn.action {
            Some(Action::Retrieval { .. }) => Provenance::Retrieval,
            Some(Action::Fetch { .. }) => Provenance::Fetch,
            _ => continue,
        };
        out.extend(turn.feedback.pages.iter().map(|&p| (p, tag)));
    }
    out
}

/// Per-tool statistics; every figure is a percentage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ToolStats {
    /// Share of episodes that invoked the tool at least once.
    pub ratio: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub episodes: usize,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn tool_usage_stats(records: &[EpisodeRecord]) -> BTreeMap<String, ToolStats> {
    let mut out = BTreeMap::new();
    for (tool, tag) in TOOLS.iter().zip([Provenance::Retrieval, Provenance::Fetch]) {
        let users: Vec<&EpisodeRecord> = records.iter().filter(|r| r.trajectory.invoked(tool)).collect();
        let ratio = if records.is_empty() { 0.0 } else { 100.0 * users.len() as f64 / records.len() as f64 };
        let prfs: Vec<Prf> = users
            .iter()
            .filter(|r| !r.qa.evidence_pages.is_empty())
            .map(|r| page_f1(&r.pages_by(tag), &r.qa.evidence_pages))
            .collect();
        out.insert(
            (*tool).to_owned(),
            ToolStats {
                ratio,
                recall: 100.0 * mean(prfs.iter().map(|p| p.recall)),
                precision: 100.0 * mean(prfs.iter().map(|p| p.precision)),
                f1: 100.0 * mean(prfs.iter().map(|p| p.f1)),
                episodes: users.len(),
            },
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub episodes: usize,
    /// Mean thresholded answer score.
    pub answer_score: f64,
    /// Share of episodes with a non-zero answer score, in [0, 1].
    pub accuracy: f64,
    pub page_precision: f64,
    pub page_recall: f64,
    pub page_f1: f64,
    /// Episodes contributing to the page-level means.
    pub evidence_episodes: usize,
    pub mean_reward: RewardBreakdown,
    pub format_valid_rate: f64,
    pub avg_pages: f64,
    pub avg_turns: f64,
    pub avg_tokens: f64,
    pub avg_overview_tokens: f64,
    pub terminated: BTreeMap<String, usize>,
    pub tools: BTreeMap<String, ToolStats>,
}

#[derive(Debug, thiserror::Error)]
#[error("cannot aggregate an empty set of episodes")]
pub struct EmptyEpisodes;

pub fn aggregate(records: &[EpisodeRecord], answer_threshold: f64) -> Result<Report, EmptyEpisodes> {
    if records.is_empty() {
        return Err(EmptyEpisodes);
    }
    let answer_scores: Vec<f64> =
        records.iter().map(|r| answer_reward(r.trajectory.final_answer.as_deref(), &r.qa, answer_threshold)).collect();
    let prfs: Vec<Prf> =
        records.iter().filter(|r| !r.qa.evidence_pages.is_empty()).map(EpisodeRecord::page_prf).collect();
    let mut terminated = BTreeMap::new();
    for r in records {
        let key = match r.trajectory.terminated_by {
            TerminatedBy::Answer => "answer",
            TerminatedBy::Budget => "budget",
            TerminatedBy::Error => "error",
        };
        *terminated.entry(key.to_owned()).or_insert(0) += 1;
    }
    Ok(Report {
        episodes: records.len(),
        answer_score: mean(answer_scores.iter().copied()),
        accuracy: mean(answer_scores.iter().map(|&s| f64::from(u8::from(s > 0.0)))),
        page_precision: mean(prfs.iter().map(|p| p.precision)),
        page_recall: mean(prfs.iter().map(|p| p.recall)),
        page_f1: mean(prfs.iter().map(|p| p.f1)),
        evidence_episodes: prfs.len(),
        mean_reward: RewardBreakdown {
            ans: mean(records.iter().map(|r| r.reward.ans)),
            evi: mean(records.iter().map(|r| r.reward.evi)),
            fmt: mean(records.iter().map(|r| r.reward.fmt)),
            total: mean(records.iter().map(|r| r.reward.total)),
        },
        format_valid_rate: mean(records.iter().map(|r| r.reward.fmt)),
        avg_pages: mean(records.iter().map(|r| r.provenance.len() as f64)),
        avg_turns: mean(records.iter().map(|r| r.trajectory.turns.len() as f64)),
        avg_tokens: mean(records.iter().map(|r| r.total_tokens() as f64)),
        avg_overview_tokens: mean(records.iter().map(|r| r.overview_tokens as f64)),
        terminated,
        tools: tool_usage_stats(records),
    })
}

/// One line of `predictions.jsonl`, for external official scorers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub qa_id: String,
    pub answer: Option<String>,
    pub relevant_pages: Vec<u32>,
}

impl From<&Trajectory> for Prediction {
    fn from(t: &Trajectory) -> Self {
        Self {
            qa_id: t.qa_id.clone(),
            answer: t.final_answer.clone(),
            relevant_pages: t.relevant_pages_union().into_iter().collect(),
        }
    }
}
