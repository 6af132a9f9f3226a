//! The interaction loop: observations, action execution, feedback, the
//! visited set, working memory and the turn budget.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agents::Agent;
use crate::config::{HarnessConfig, DEFAULT_GROUP_CAPACITY, DEFAULT_HEADER_HEIGHT, DEFAULT_MAX_TURNS};
use crate::corpus::{CorpusError, Document, Page, QaItem};
use crate::overview::{build_overview, OverviewSet};
use crate::protocol::{parse_turn, Action, FeedbackLog, FormatError, TerminatedBy, Trajectory, Turn, TurnRecord};
use crate::retrieval::{RetrievalError, Retriever};

/// Retrieval budget: `min(ceil(N / 10), 4)`.
pub fn adaptive_k(n_pages: usize) -> usize {
    n_pages.div_ceil(10).clamp(1, 4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub max_turns: usize,
    pub group_capacity: usize,
    pub header_height: u32,
    /// Label attached to each delivered page; `{i}` becomes the page number.
    pub page_label: String,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            max_turns: DEFAULT_MAX_TURNS,
            group_capacity: DEFAULT_GROUP_CAPACITY,
            header_height: DEFAULT_HEADER_HEIGHT,
            page_label: "Page {i}:".to_owned(),
        }
    }
}

impl From<&HarnessConfig> for EnvConfig {
    fn from(cfg: &HarnessConfig) -> Self {
        Self {
            max_turns: cfg.max_turns,
            group_capacity: cfg.group_capacity,
            header_height: cfg.header_height,
            ..Self::default()
        }
    }
}

impl EnvConfig {
    pub fn label(&self, page: u32) -> String {
        self.page_label.replace("{i}", &page.to_string())
    }
}

pub fn already_visited_reminder(page: u32) -> String {
    format!("Page {page} already visited.")
}

pub fn missing_page_reminder(page: u32) -> String {
    format!("Page {page} does not exist.")
}

pub const NO_PAGES_LEFT: &str = "No unvisited pages match the query.";

pub fn format_notice(err: &FormatError) -> String {
    format!(
        "Format error: {err}. Reply with one <think> block (<analysis>, <plan> on the first turn only, \
         <relevant_pages> after the first turn, <summary>) followed by one <action> block."
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "answer", rename_all = "snake_case")]
pub enum Outcome {
    Pending,
    Answered(String),
    NoAnswer,
}

#[derive(Debug, Clone)]
pub struct EnvState {
    pub doc: Arc<Document>,
    pub qa_id: String,
    pub question: String,
    pub visited: BTreeSet<u32>,
    /// One summary per completed turn; empty for turns whose summary could
    /// not be recovered.
    pub memory: Vec<String>,
    pub t: usize,
    pub done: bool,
    pub outcome: Outcome,
    pub format_invalid: bool,
}

impl EnvState {
    /// Summaries joined by newlines in turn order.
    pub fn working_memory(&self) -> String {
        working_memory(&self.memory)
    }
}

pub fn working_memory(memory: &[String]) -> String {
    memory.iter().filter(|s| !s.is_empty()).map(String::as_str).collect::<Vec<_>>().join("\n")
}

/// A page delivered with its image. The raster is produced on demand.
#[derive(Debug, Clone)]
pub struct DeliveredPage {
    pub index: u32,
    pub label: String,
    pub page: Page,
}

#[derive(Debug, Clone, Default)]
pub struct Feedback {
    pub pages: Vec<DeliveredPage>,
    pub reminders: Vec<String>,
    pub format_notice: Option<String>,
}

impl Feedback {
    pub fn log(&self) -> FeedbackLog {
        FeedbackLog {
            pages: self.pages.iter().map(|p| p.index).collect(),
            reminders: self.reminders.clone(),
            format_notice: self.format_notice.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum ObservationKind {
    Initial { overview: Arc<OverviewSet> },
    Augmented { feedback: Feedback, working_memory: String },
}

#[derive(Debug, Clone)]
pub struct Observation {
    pub doc_id: String,
    pub qa_id: String,
    pub question: String,
    pub n_pages: usize,
    pub turn: usize,
    pub budget: usize,
    pub kind: ObservationKind,
}

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("step called on a finished episode")]
    AlreadyDone,
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// `None` for the terminal answer turn.
    pub feedback: Option<Feedback>,
    pub done: bool,
}

/// One document prepared for episodes: the overview is built once and
/// shared by every episode on the document.
#[derive(Debug, Clone)]
pub struct Environment {
    doc: Arc<Document>,
    overview: Arc<OverviewSet>,
    config: EnvConfig,
}

impl Environment {
    pub fn new(doc: Arc<Document>, config: EnvConfig) -> Result<Self, CorpusError> {
        assert!(config.max_turns >= 1, "max_turns must be at least 1");
        let overview = Arc::new(build_overview(&doc, config.group_capacity, config.header_height)?);
        Ok(Self { doc, overview, config })
    }

    pub fn document(&self) -> &Arc<Document> {
        &self.doc
    }

    pub fn overview(&self) -> &Arc<OverviewSet> {
        &self.overview
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn reset(&self, qa: &QaItem) -> (EnvState, Observation) {
        let state = EnvState {
            doc: Arc::clone(&self.doc),
            qa_id: qa.qa_id.clone(),
            question: qa.question.clone(),
            visited: BTreeSet::new(),
            memory: Vec::new(),
            t: 0,
            done: false,
            outcome: Outcome::Pending,
            format_invalid: false,
        };
        let obs = self.observation(&state, ObservationKind::Initial { overview: Arc::clone(&self.overview) });
        (state, obs)
    }

    fn observation(&self, state: &EnvState, kind: ObservationKind) -> Observation {
        Observation {
            doc_id: self.doc.doc_id.clone(),
            qa_id: state.qa_id.clone(),
            question: state.question.clone(),
            n_pages: self.doc.num_pages(),
            turn: state.t,
            budget: self.config.max_turns,
            kind,
        }
    }

    /// The observation that follows a non-terminal step.
    pub fn augmented(&self, state: &EnvState, feedback: Feedback) -> Observation {
        let working_memory = state.working_memory();
        self.observation(state, ObservationKind::Augmented { feedback, working_memory })
    }

    fn deliver(&self, state: &mut EnvState, feedback: &mut Feedback, index: u32) {
        state.visited.insert(index);
        let page = self.doc.page(index).expect("delivered index is in range").clone();
        feedback.pages.push(DeliveredPage { index, label: self.config.label(index), page });
    }

    /// Executes one turn. `summary` is what goes into working memory; for a
    /// parsed turn it is the turn's own summary.
    pub fn step(
        &self,
        state: &mut EnvState,
        turn: Result<&Turn, &FormatError>,
        fallback_summary: Option<&str>,
        retriever: &mut dyn Retriever,
    ) -> Result<StepOutcome, EnvError> {
        if state.done {
            return Err(EnvError::AlreadyDone);
        }
        let n = self.doc.num_pages() as u32;
        let mut feedback = Feedback::default();
        let mut terminal = false;
        match turn {
            Ok(turn) => {
                state.memory.push(turn.think.summary.clone());
                match &turn.action {
                    Action::Answer { text } => {
                        state.outcome = Outcome::Answered(text.clone());
                        terminal = true;
                    }
                    Action::Retrieval { query } => {
                        let k = adaptive_k(n as usize);
                        let ranked = retriever.retrieve(query, &state.visited, k)?;
                        let mut seen = BTreeSet::new();
                        for r in ranked {
                            if seen.len() == k {
                                break;
                            }
                            // The contract forbids these; guard against foreign retrievers.
                            if r.index == 0 || r.index > n || state.visited.contains(&r.index) || !seen.insert(r.index)
                            {
                                log::warn!("retriever returned unusable page {}", r.index);
                                continue;
                            }
                            self.deliver(state, &mut feedback, r.index);
                        }
                        if feedback.pages.is_empty() {
                            feedback.reminders.push(NO_PAGES_LEFT.to_owned());
                        }
                    }
                    Action::Fetch { indices } => {
                        for &i in indices {
                            if i == 0 || i > n {
                                feedback.reminders.push(missing_page_reminder(i));
                            } else if state.visited.contains(&i) {
                                feedback.reminders.push(already_visited_reminder(i));
                            } else {
                                self.deliver(state, &mut feedback, i);
                            }
                        }
                    }
                }
            }
            Err(err) => {
                state.memory.push(fallback_summary.unwrap_or_default().to_owned());
                state.format_invalid = true;
                feedback.format_notice = Some(format_notice(err));
            }
        }
        state.t += 1;
        if terminal {
            state.done = true;
            return Ok(StepOutcome { feedback: None, done: true });
        }
        if state.t >= self.config.max_turns {
            state.done = true;
            state.outcome = Outcome::NoAnswer;
        }
        Ok(StepOutcome { feedback: Some(feedback), done: state.done })
    }
}

/// Text of the first well-formed `<summary>` block, if any. Used to keep
/// working memory aligned with the turn count when a turn fails to parse.
pub fn salvage_summary(raw: &str) -> Option<String> {
    let start = raw.find("<summary>")? + "<summary>".len();
    let end = raw[start..].find("</summary>")? + start;
    Some(raw[start..end].trim().to_owned())
}

/// Drives one episode to completion and records it.
pub fn run_episode(env: &Environment, qa: &QaItem, agent: &mut dyn Agent, retriever: &mut dyn Retriever) -> Trajectory {
    let (mut state, mut obs) = env.reset(qa);
    let mut traj = Trajectory {
        qa_id: qa.qa_id.clone(),
        doc_id: env.doc.doc_id.clone(),
        n_pages: env.doc.num_pages(),
        budget: env.config.max_turns,
        turns: Vec::new(),
        final_answer: None,
        terminated_by: TerminatedBy::Budget,
        error: None,
        reward: None,
    };
    loop {
        let raw = match agent.act(&obs) {
            Ok(raw) => raw,
            Err(e) => return abort(traj, agent, e.to_string()),
        };
        let parsed = parse_turn(&raw, state.t);
        let salvaged = parsed.as_ref().err().and_then(|_| salvage_summary(&raw));
        let mut record = TurnRecord {
            t: state.t,
            raw,
            action: None,
            relevant_pages: None,
            summary: salvaged.clone(),
            format_error: None,
            feedback: FeedbackLog::default(),
        };
        match &parsed {
            Ok(turn) => {
                record.action = Some(turn.action.clone());
                record.relevant_pages = turn.think.relevant_pages.clone();
                record.summary = Some(turn.think.summary.clone());
            }
            Err(e) => record.format_error = Some(e.to_string()),
        }
        let step = match env.step(&mut state, parsed.as_ref(), salvaged.as_deref(), retriever) {
            Ok(s) => s,
            Err(e) => {
                traj.turns.push(record);
                return abort(traj, agent, e.to_string());
            }
        };
        if let Some(fb) = &step.feedback {
            record.feedback = fb.log();
        }
        traj.turns.push(record);
        if step.done {
            break;
        }
        obs = env.augmented(&state, step.feedback.unwrap_or_default());
    }
    match &state.outcome {
        Outcome::Answered(text) => {
            traj.final_answer = Some(text.clone());
            traj.terminated_by = TerminatedBy::Answer;
        }
        _ => traj.terminated_by = TerminatedBy::Budget,
    }
    if let Err(e) = agent.finish(&traj) {
        log::warn!("agent failed to acknowledge the end of episode {}: {e}", traj.qa_id);
    }
    traj
}

fn abort(mut traj: Trajectory, agent: &mut dyn Agent, message: String) -> Trajectory {
    log::warn!("episode {} aborted: {message}", traj.qa_id);
    traj.terminated_by = TerminatedBy::Error;
    traj.error = Some(message);
    let _ = agent.finish(&traj);
    traj
}
