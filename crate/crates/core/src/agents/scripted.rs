//! Deterministic scripted agents. They read page text layers, which the
//! environment never shows a real agent; that is what makes them useful as
//! closed-loop references.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Agent, AgentError};
use crate::corpus::synth::{parse_fact_line, parse_question};
use crate::corpus::{QaItem, NOT_ANSWERABLE};
use crate::environment::{Observation, ObservationKind};
use crate::protocol::{Action, ThinkBlock, Turn};

/// Pages per fetch for the oracle; the same as the retrieval cap.
pub const ORACLE_FETCH_CHUNK: usize = 4;

fn think(t: usize, analysis: String, relevant: &BTreeSet<u32>, summary: String) -> ThinkBlock {
    ThinkBlock {
        analysis,
        plan: (t == 0).then(|| "Locate the evidence pages, read them, then answer.".to_owned()),
        relevant_pages: (t > 0).then(|| relevant.iter().copied().collect()),
        summary,
    }
}

fn emit(t: usize, think: ThinkBlock, action: Action) -> String {
    Turn::new(t, think, action).raw
}

fn delivered(obs: &Observation) -> Vec<u32> {
    match &obs.kind {
        ObservationKind::Augmented { feedback, .. } => feedback.pages.iter().map(|p| p.index).collect(),
        ObservationKind::Initial { .. } => Vec::new(),
    }
}

/// Knows the gold evidence and answer. Fetches the evidence in chunks of at
/// most four pages, then answers with the first gold answer. Unanswerable
/// items get one retrieval and an abstention.
pub struct OracleAgent {
    qa: QaItem,
    chunks: Vec<Vec<u32>>,
    seen_evidence: BTreeSet<u32>,
}

impl OracleAgent {
    pub fn new(qa: QaItem) -> Self {
        let evidence: Vec<u32> = qa.evidence_pages.iter().copied().collect();
        let chunks = evidence.chunks(ORACLE_FETCH_CHUNK).rev().map(<[u32]>::to_vec).collect();
        Self { qa, chunks, seen_evidence: BTreeSet::new() }
    }
}

impl Agent for OracleAgent {
    fn act(&mut self, obs: &Observation) -> Result<String, AgentError> {
        let t = obs.turn;
        self.seen_evidence.extend(delivered(obs).into_iter().filter(|p| self.qa.evidence_pages.contains(p)));
        let seen = &self.seen_evidence;
        if !self.qa.is_answerable() {
            if t == 0 {
                let th = think(t, "Check whether the document covers the question.".into(), seen, "Searching.".into());
                return Ok(emit(t, th, Action::Retrieval { query: self.qa.question.clone() }));
            }
            let th = think(t, "Nothing relevant was found.".into(), seen, "The question is not answerable.".into());
            return Ok(emit(t, th, Action::Answer { text: NOT_ANSWERABLE.to_owned() }));
        }
        if let Some(chunk) = self.chunks.pop() {
            let summary = format!("Requested pages {chunk:?}.");
            let th = think(t, "The evidence is on known pages.".into(), seen, summary);
            return Ok(emit(t, th, Action::Fetch { indices: chunk }));
        }
        let answer = self.qa.gold_answers.first().cloned().unwrap_or_default();
        let th = think(t, "All evidence pages have been read.".into(), seen, format!("Answer: {answer}."));
        Ok(emit(t, th, Action::Answer { text: answer }))
    }
}

/// Retrieves with the question, then answers from whatever the retrieval
/// delivered by resolving the question's key chain against planted facts.
#[derive(Default)]
pub struct GreedyRetrievalAgent;

impl GreedyRetrievalAgent {
    pub fn new() -> Self {
        Self
    }

    fn resolve(question: &str, facts: &BTreeMap<(String, String), String>) -> Option<String> {
        let chain = parse_question(question)?;
        let mut current = chain.key;
        for attr in chain.attrs.iter().rev() {
            current = facts.get(&(attr.clone(), current))?.clone();
        }
        Some(current)
    }
}

impl Agent for GreedyRetrievalAgent {
    fn act(&mut self, obs: &Observation) -> Result<String, AgentError> {
        let t = obs.turn;
        let ObservationKind::Augmented { feedback, .. } = &obs.kind else {
            let th = think(t, "Search with the question itself.".into(), &BTreeSet::new(), "Retrieving.".into());
            return Ok(emit(t, th, Action::Retrieval { query: obs.question.clone() }));
        };
        let mut facts = BTreeMap::new();
        for page in &feedback.pages {
            for line in page.page.text.iter().flatten() {
                if let Some((attr, subject, value)) = parse_fact_line(line) {
                    facts.entry((attr, subject)).or_insert(value);
                }
            }
        }
        let relevant: BTreeSet<u32> = feedback.pages.iter().map(|p| p.index).collect();
        let answer = Self::resolve(&obs.question, &facts).unwrap_or_else(|| NOT_ANSWERABLE.to_owned());
        let th = think(t, "Read the retrieved pages.".into(), &relevant, format!("Answer: {answer}."));
        Ok(emit(t, th, Action::Answer { text: answer }))
    }
}

/// Issues a retrieval every turn and never answers.
pub struct AlwaysRetrieveAgent;

impl Agent for AlwaysRetrieveAgent {
    fn act(&mut self, obs: &Observation) -> Result<String, AgentError> {
        let t = obs.turn;
        let th = think(t, "Keep searching.".into(), &BTreeSet::new(), format!("Retrieval {t}."));
        Ok(emit(t, th, Action::Retrieval { query: obs.question.clone() }))
    }
}

const RANDOM_WORDS: &[&str] = &["revenue", "table", "chart", "total", "summary", "code", "year", "city", "name"];

/// Random well-formed turns. Fetch indices range over `1..=N+1` so the
/// out-of-range reminder path is exercised; declared relevant pages are a
/// random subset of pages delivered so far.
pub struct RandomAgent {
    rng: ChaCha8Rng,
    delivered: Vec<u32>,
}

impl RandomAgent {
    pub const ANSWER_PROBABILITY: f64 = 0.15;

    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), delivered: Vec::new() }
    }
}

impl Agent for RandomAgent {
    fn act(&mut self, obs: &Observation) -> Result<String, AgentError> {
        let t = obs.turn;
        self.delivered.extend(delivered(obs));
        let relevant: BTreeSet<u32> = self.delivered.iter().copied().filter(|_| self.rng.gen_bool(0.5)).collect();
        let word = *RANDOM_WORDS.choose(&mut self.rng).expect("non-empty");
        let action = match self.rng.gen_range(0.0..1.0) {
            x if x < Self::ANSWER_PROBABILITY => Action::Answer { text: word.to_owned() },
            x if x < (1.0 + Self::ANSWER_PROBABILITY) / 2.0 => Action::Retrieval { query: word.to_owned() },
            _ => {
                let n = obs.n_pages as u32 + 1;
                let count = self.rng.gen_range(1..=3);
                let mut indices: Vec<u32> = (0..count).map(|_| self.rng.gen_range(1..=n)).collect();
                let mut seen = BTreeSet::new();
                indices.retain(|i| seen.insert(*i));
                Action::Fetch { indices }
            }
        };
        let th = think(t, format!("Random step {t}."), &relevant, format!("Step {t}: {word}."));
        Ok(emit(t, th, action))
    }
}
