//! Turn grammar.
//!
//! Every agent turn is exactly one `<think>` block followed by exactly one
//! `<action>` block:
//!
//! ```text
//! <think>
//! <analysis>...</analysis>
//! <plan>...</plan>                      (turn 0 only)
//! <relevant_pages>[3, 5]</relevant_pages> (turns after 0 only)
//! <summary>...</summary>
//! </think>
//! <action><fetch_page>[3, 4]</action>
//! ```
//!
//! The action block holds one of `<retrieval_page>query`,
//! `<fetch_page>[i, j, ...]` or `<answer>text`; a matching closing tag is
//! optional. Unknown tags inside `<think>` are ignored on read and never
//! written.

mod trajectory;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use trajectory::{
    read_trajectories, validate_trajectory, FeedbackLog, FormatReport, TerminatedBy, Trajectory, TurnRecord,
};

const RETRIEVAL_TAG: &str = "retrieval_page";
const FETCH_TAG: &str = "fetch_page";
const ANSWER_TAG: &str = "answer";
const ACTION_TAGS: [&str; 3] = [RETRIEVAL_TAG, FETCH_TAG, ANSWER_TAG];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Action {
    Retrieval { query: String },
    Fetch { indices: Vec<u32> },
    Answer { text: String },
}

impl Action {
    pub fn tool_name(&self) -> &'static str {
        match self {
            Self::Retrieval { .. } => RETRIEVAL_TAG,
            Self::Fetch { .. } => FETCH_TAG,
            Self::Answer { .. } => ANSWER_TAG,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ThinkBlock {
    pub analysis: String,
    /// Present on turn 0 only.
    pub plan: Option<String>,
    /// Present on every turn after 0.
    pub relevant_pages: Option<Vec<u32>>,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub turn_index: usize,
    pub think: ThinkBlock,
    pub action: Action,
    pub raw: String,
}

impl Turn {
    /// Builds a turn and fills `raw` with its canonical rendering.
    pub fn new(turn_index: usize, think: ThinkBlock, action: Action) -> Self {
        let mut turn = Self { turn_index, think, action, raw: String::new() };
        turn.raw = render_turn(&turn);
        turn
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("missing <think> block")]
    MissingThink,
    #[error("exactly one <think> block is allowed")]
    DuplicateThink,
    #[error("missing <action> block")]
    MissingAction,
    #[error("exactly one action is allowed")]
    DuplicateAction,
    #[error("unclosed <{0}> tag")]
    Unclosed(&'static str),
    #[error("text outside the <think> and <action> blocks")]
    StrayText,
    #[error("unknown or missing action tag")]
    UnknownAction,
    #[error("missing <{0}> inside <think>")]
    MissingSubBlock(&'static str),
    #[error("<{0}> appears more than once inside <think>")]
    DuplicateSubBlock(&'static str),
    #[error("<{tag}> is not allowed on turn {turn}")]
    MisplacedSubBlock { tag: &'static str, turn: usize },
    #[error("bad page index list: {0}")]
    BadIndexList(String),
    #[error("fetch requires at least one page index")]
    EmptyFetch,
}

fn open(tag: &str) -> String {
    format!("<{tag}>")
}

fn close(tag: &str) -> String {
    format!("</{tag}>")
}

/// Parses `[1, 2, 3]`. Indices must be positive; duplicates are dropped,
/// keeping the first occurrence.
pub fn parse_index_list(text: &str) -> Result<Vec<u32>, FormatError> {
    let t = text.trim();
    let inner = t
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| FormatError::BadIndexList(format!("expected [..], got {t:?}")))?;
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut out: Vec<u32> = Vec::new();
    for item in inner.split(',') {
        let item = item.trim();
        let v: u32 = item.parse().map_err(|_| FormatError::BadIndexList(format!("{item:?} is not a page number")))?;
        if v == 0 {
            return Err(FormatError::BadIndexList("page numbers start at 1".into()));
        }
        if !out.contains(&v) {
            out.push(v);
        }
    }
    Ok(out)
}

pub fn render_index_list(indices: &[u32]) -> String {
    let items: Vec<String> = indices.iter().map(u32::to_string).collect();
    format!("[{}]", items.join(", "))
}

/// Content of the single `<tag>...</tag>` inside `body`, if present.
fn sub_block(body: &str, tag: &'static str) -> Result<Option<String>, FormatError> {
    let o = open(tag);
    let mut it = body.match_indices(&o);
    let Some((start, _)) = it.next() else { return Ok(None) };
    if it.next().is_some() {
        return Err(FormatError::DuplicateSubBlock(tag));
    }
    let after = &body[start + o.len()..];
    let end = after.find(&close(tag)).ok_or(FormatError::Unclosed(tag))?;
    Ok(Some(after[..end].trim().to_owned()))
}

fn parse_think(body: &str, turn_index: usize) -> Result<ThinkBlock, FormatError> {
    let analysis = sub_block(body, "analysis")?.ok_or(FormatError::MissingSubBlock("analysis"))?;
    let plan = sub_block(body, "plan")?;
    let relevant = sub_block(body, "relevant_pages")?;
    let summary = sub_block(body, "summary")?.ok_or(FormatError::MissingSubBlock("summary"))?;
    if turn_index == 0 {
        if plan.is_none() {
            return Err(FormatError::MissingSubBlock("plan"));
        }
        if relevant.is_some() {
            return Err(FormatError::MisplacedSubBlock { tag: "relevant_pages", turn: turn_index });
        }
    } else {
        if plan.is_some() {
            return Err(FormatError::MisplacedSubBlock { tag: "plan", turn: turn_index });
        }
        if relevant.is_none() {
            return Err(FormatError::MissingSubBlock("relevant_pages"));
        }
    }
    let relevant_pages = relevant.as_deref().map(parse_index_list).transpose()?;
    Ok(ThinkBlock { analysis, plan, relevant_pages, summary })
}

fn parse_action(body: &str) -> Result<Action, FormatError> {
    let opened: usize = ACTION_TAGS.iter().map(|t| body.matches(&open(t)).count()).sum();
    if opened > 1 {
        return Err(FormatError::DuplicateAction);
    }
    let body = body.trim();
    let tag = ACTION_TAGS.iter().copied().find(|t| body.starts_with(&open(t))).ok_or(FormatError::UnknownAction)?;
    let mut arg = body[open(tag).len()..].trim();
    if let Some(stripped) = arg.strip_suffix(&close(tag)) {
        arg = stripped.trim();
    }
    Ok(match tag {
        RETRIEVAL_TAG => Action::Retrieval { query: arg.to_owned() },
        FETCH_TAG => {
            let indices = parse_index_list(arg)?;
            if indices.is_empty() {
                return Err(FormatError::EmptyFetch);
            }
            Action::Fetch { indices }
        }
        _ => Action::Answer { text: arg.to_owned() },
    })
}

/// Parses one raw agent turn. Total: every input yields a `Turn` or the
/// first rule it breaks.
pub fn parse_turn(raw: &str, turn_index: usize) -> Result<Turn, FormatError> {
    let s = raw.trim();
    match s.matches("<think>").count() {
        0 => return Err(FormatError::MissingThink),
        1 => {}
        _ => return Err(FormatError::DuplicateThink),
    }
    match s.matches("<action>").count() {
        0 => return Err(FormatError::MissingAction),
        1 => {}
        _ => return Err(FormatError::DuplicateAction),
    }
    let rest = s.strip_prefix("<think>").ok_or(FormatError::StrayText)?;
    let think_end = rest.find("</think>").ok_or(FormatError::Unclosed("think"))?;
    let think_body = &rest[..think_end];
    if think_body.contains("<action>") {
        return Err(FormatError::StrayText);
    }
    let after_think = rest[think_end + "</think>".len()..].trim_start();
    let action_part = after_think.strip_prefix("<action>").ok_or(FormatError::StrayText)?;
    let action_end = action_part.rfind("</action>").ok_or(FormatError::Unclosed("action"))?;
    if !action_part[action_end + "</action>".len()..].trim().is_empty() {
        return Err(FormatError::StrayText);
    }
    let action_body = &action_part[..action_end];
    if action_body.contains("</action>") {
        return Err(FormatError::DuplicateAction);
    }

    let think = parse_think(think_body, turn_index)?;
    let action = parse_action(action_body)?;
    Ok(Turn { turn_index, think, action, raw: raw.to_owned() })
}

/// Canonical text of a turn. `parse_turn(&render_turn(t), t.turn_index)`
/// reproduces `t.think` and `t.action`.
pub fn render_turn(turn: &Turn) -> String {
    let th = &turn.think;
    let mut out = String::from("<think>\n");
    out.push_str(&format!("<analysis>{}</analysis>\n", th.analysis));
    if let Some(plan) = &th.plan {
        out.push_str(&format!("<plan>{plan}</plan>\n"));
    }
    if let Some(rel) = &th.relevant_pages {
        out.push_str(&format!("<relevant_pages>{}</relevant_pages>\n", render_index_list(rel)));
    }
    out.push_str(&format!("<summary>{}</summary>\n</think>\n<action>", th.summary));
    match &turn.action {
        Action::Retrieval { query } => out.push_str(&format!("<{RETRIEVAL_TAG}>{query}")),
        Action::Fetch { indices } => out.push_str(&format!("<{FETCH_TAG}>{}", render_index_list(indices))),
        Action::Answer { text } => out.push_str(&format!("<{ANSWER_TAG}>{text}")),
    }
    out.push_str("</action>");
    out
}

impl fmt::Display for Turn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_turn(self))
    }
}
