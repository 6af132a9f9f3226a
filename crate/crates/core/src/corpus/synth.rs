//! Seeded synthetic corpora with planted evidence.
//!
//! Every answerable question is backed by a unique key-value fact written
//! into the text layer (and therefore the rendered raster) of exactly its
//! evidence pages. A multi-hop question chains two facts on two distinct
//! pages: the first maps the question key to an intermediate key, the second
//! maps that key to the answer. Unanswerable questions ask about a key that
//! appears nowhere.

use std::collections::{BTreeSet, HashSet};

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnswerKind, Corpus, CorpusError, Document, Page, QaItem, NOT_ANSWERABLE};
use crate::font;
use crate::raster::WHITE;

const FILLER: &[&str] = &[
    "annual",
    "market",
    "growth",
    "segment",
    "quarter",
    "summary",
    "figure",
    "table",
    "regional",
    "division",
    "project",
    "outcome",
    "analysis",
    "strategy",
    "capital",
    "operating",
    "forecast",
    "review",
    "customer",
    "service",
    "network",
    "program",
    "schedule",
    "milestone",
    "supply",
    "demand",
    "inventory",
    "margin",
    "expense",
    "balance",
    "asset",
    "liability",
    "audit",
    "compliance",
    "training",
    "staff",
    "facility",
    "equipment",
    "contract",
    "vendor",
    "shipment",
    "delivery",
    "quality",
    "metric",
    "target",
    "estimate",
    "variance",
    "section",
    "appendix",
    "chapter",
    "overview",
    "detail",
    "context",
    "process",
    "result",
    "update",
    "planning",
    "committee",
    "meeting",
    "notes",
    "approved",
    "pending",
    "draft",
    "final",
    "internal",
    "external",
    "global",
    "local",
    "primary",
    "secondary",
    "total",
    "average",
    "increase",
    "decrease",
    "stable",
    "trend",
    "volume",
    "rate",
    "index",
    "ratio",
    "level",
    "phase",
    "stage",
    "unit",
    "group",
];

const LINK_ATTRS: &[&str] = &["parent company", "partner firm", "sister unit", "holding group"];
const ID_ATTRS: &[&str] = &["access code", "ticket number", "launch year", "serial number", "badge number"];
const FREE_ATTRS: &[&str] = &["office city", "lead engineer", "team motto", "storage site", "brand color"];
const VALUE_WORDS: &[&str] = &[
    "amber", "harbor", "silver", "meadow", "granite", "falcon", "willow", "cedar", "crimson", "lantern", "orchid",
    "summit", "velvet", "copper", "ivory", "maple", "river", "stone", "north", "garden", "coral", "ember", "aurora",
    "basalt", "juniper",
];
const KEY_ONSETS: &[&str] = &["z", "q", "x", "v", "k", "dr", "gr", "th", "br", "sk"];
const KEY_VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
const KEY_CODAS: &[&str] = &["r", "x", "n", "l", "th", "sk", "m", "v"];

/// Parameters of a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_docs: usize,
    pub pages_min: usize,
    pub pages_max: usize,
    /// QA items per document; each answerable one plants its own fact.
    pub facts_per_doc: usize,
    pub multi_hop_fraction: f64,
    pub unanswerable_fraction: f64,
    pub rng_seed: u64,
    pub page_width: u32,
    pub page_height: u32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_docs: 20,
            pages_min: 12,
            pages_max: 12,
            facts_per_doc: 4,
            multi_hop_fraction: 0.25,
            unanswerable_fraction: 0.25,
            rng_seed: 0,
            page_width: 1024,
            page_height: 768,
        }
    }
}

impl SynthSpec {
    /// (single-hop, multi-hop, unanswerable) QA counts per document.
    pub fn slot_counts(&self) -> (usize, usize, usize) {
        let f = self.facts_per_doc;
        let multi = ((self.multi_hop_fraction * f as f64).round() as usize).min(f);
        let unans = ((self.unanswerable_fraction * f as f64).round() as usize).min(f - multi);
        (f - multi - unans, multi, unans)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let frac_ok = |x: f64| (0.0..=1.0).contains(&x);
        if !frac_ok(self.multi_hop_fraction) || !frac_ok(self.unanswerable_fraction) {
            return Err(CorpusError::Spec("fractions must lie in [0, 1]".into()));
        }
        if self.multi_hop_fraction + self.unanswerable_fraction > 1.0 + 1e-12 {
            return Err(CorpusError::Spec("multi-hop and unanswerable fractions sum above 1".into()));
        }
        if self.n_docs == 0 {
            return Err(CorpusError::Spec("n_docs must be at least 1".into()));
        }
        if self.pages_min == 0 || self.pages_min > self.pages_max {
            return Err(CorpusError::Spec(format!("page range {}..{} is empty", self.pages_min, self.pages_max)));
        }
        if self.page_width == 0 || self.page_height == 0 {
            return Err(CorpusError::Spec("page size must be positive".into()));
        }
        let (single, multi, _) = self.slot_counts();
        let needed = single + 2 * multi;
        if needed > self.pages_min {
            return Err(CorpusError::Spec(format!(
                "{} facts need {needed} distinct pages but documents may have only {}",
                self.facts_per_doc, self.pages_min
            )));
        }
        Ok(())
    }
}

/// `the <attr> of <subject> is <value>.`
pub fn fact_line(attr: &str, subject: &str, value: &str) -> String {
    format!("the {attr} of {subject} is {value}.")
}

/// Inverse of [`fact_line`]: `(attr, subject, value)`.
pub fn parse_fact_line(line: &str) -> Option<(String, String, String)> {
    let rest = line.trim().strip_prefix("the ")?;
    let (attr, rest) = rest.split_once(" of ")?;
    let (subject, value) = rest.split_once(" is ")?;
    let value = value.strip_suffix('.')?;
    if subject.contains(' ') || attr.is_empty() || value.is_empty() {
        return None;
    }
    Some((attr.to_owned(), subject.to_owned(), value.to_owned()))
}

/// A question of the form `What is the A of the B of K?`: attributes listed
/// outermost first, plus the key they bottom out in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionChain {
    pub attrs: Vec<String>,
    pub key: String,
}

pub fn question_text(attrs: &[&str], key: &str) -> String {
    let chain: Vec<String> = attrs.iter().map(|a| format!("the {a}")).collect();
    format!("What is {} of {key}?", chain.join(" of "))
}

pub fn parse_question(question: &str) -> Option<QuestionChain> {
    let q = question.trim();
    let body = q.strip_prefix("What is ").or_else(|| q.strip_prefix("what is "))?;
    let body = body.strip_suffix('?').unwrap_or(body);
    let mut parts: Vec<&str> = body.split(" of ").collect();
    if parts.len() < 2 {
        return None;
    }
    let key = parts.pop()?.trim().to_owned();
    let attrs =
        parts.into_iter().map(|p| p.trim().strip_prefix("the ").map(str::to_owned)).collect::<Option<Vec<_>>>()?;
    Some(QuestionChain { attrs, key })
}

fn accent_color(lines: &[String]) -> Rgb<u8> {
    let h = crate::util::fnv1a(lines.join("\n").as_bytes());
    Rgb([(h & 0x7f) as u8 + 64, ((h >> 8) & 0x7f) as u8 + 64, ((h >> 16) & 0x7f) as u8 + 64])
}

/// Draws a text page: an accent bar, the text lines, and a small bar chart
/// in the remaining space. Pure function of its inputs.
pub fn render_text_page(width: u32, height: u32, lines: &[String]) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, WHITE);
    let scale = if width >= 600 { 2 } else { 1 };
    let margin = 12 * scale;
    let line_h = (font::GLYPH_HEIGHT + 3) * scale;
    let accent = accent_color(lines);

    for y in 0..(4 * scale).min(height) {
        for x in 0..width {
            img.put_pixel(x, y, accent);
        }
    }
    let mut y = 2 * margin;
    for line in lines {
        if y + line_h > height {
            break;
        }
        font::draw_text(&mut img, i64::from(margin), i64::from(y), line, scale, Rgb([20, 20, 20]));
        y += line_h;
    }

    let chart_top = y + margin;
    if chart_top + 4 * margin < height && width > 4 * margin {
        let h = crate::util::fnv1a(format!("{lines:?}").as_bytes());
        let bars = 6u32;
        let avail = height - chart_top - margin;
        let bar_w = (width - 2 * margin) / (bars * 2);
        for b in 0..bars {
            let frac = ((h >> (b * 8)) & 0xff) as u32;
            let bh = (avail * (frac + 32) / 288).max(1);
            let x0 = margin + b * bar_w * 2;
            for yy in (height - margin - bh)..(height - margin) {
                for xx in x0..(x0 + bar_w).min(width) {
                    img.put_pixel(xx, yy, accent);
                }
            }
        }
    }
    img
}

struct Generator<'a> {
    rng: ChaCha8Rng,
    spec: &'a SynthSpec,
    used_keys: HashSet<String>,
}

impl Generator<'_> {
    fn fresh_key(&mut self) -> String {
        loop {
            let syllables = self.rng.gen_range(2..=3);
            let mut key = String::new();
            for _ in 0..syllables {
                key.push_str(KEY_ONSETS.choose(&mut self.rng).unwrap());
                key.push_str(KEY_VOWELS.choose(&mut self.rng).unwrap());
            }
            key.push_str(KEY_CODAS.choose(&mut self.rng).unwrap());
            if !FILLER.contains(&key.as_str())
                && !VALUE_WORDS.contains(&key.as_str())
                && self.used_keys.insert(key.clone())
            {
                return key;
            }
        }
    }

    fn filler_line(&mut self) -> String {
        let words = self.rng.gen_range(5..=9);
        let mut line = String::new();
        for _ in 0..words {
            let w = FILLER.choose(&mut self.rng).unwrap();
            if line.len() + w.len() + 1 > 70 {
                break;
            }
            if !line.is_empty() {
                line.push(' ');
            }
            line.push_str(w);
        }
        line
    }

    /// Returns the answer value and its kind.
    fn final_value(&mut self) -> (String, AnswerKind, &'static str) {
        if self.rng.gen_bool(0.5) {
            let attr = ID_ATTRS.choose(&mut self.rng).unwrap();
            let value = if *attr == "launch year" {
                self.rng.gen_range(1950..=2030).to_string()
            } else {
                self.rng.gen_range(10_000..=99_999).to_string()
            };
            (value, AnswerKind::Identifier, attr)
        } else {
            let attr = FREE_ATTRS.choose(&mut self.rng).unwrap();
            let a = VALUE_WORDS.choose(&mut self.rng).unwrap();
            let b = VALUE_WORDS.choose(&mut self.rng).unwrap();
            (format!("{a} {b}"), AnswerKind::Freeform, attr)
        }
    }

    fn document(&mut self, doc_no: usize) -> (Document, Vec<QaItem>) {
        let spec = self.spec;
        let doc_id = format!("doc{doc_no:04}");
        let n_pages = self.rng.gen_range(spec.pages_min..=spec.pages_max);

        let (single, multi, unans) = spec.slot_counts();
        #[derive(Clone, Copy)]
        enum Slot {
            Single,
            Multi,
            Unanswerable,
        }
        let mut slots: Vec<Slot> = std::iter::repeat_n(Slot::Single, single)
            .chain(std::iter::repeat_n(Slot::Multi, multi))
            .chain(std::iter::repeat_n(Slot::Unanswerable, unans))
            .collect();
        slots.shuffle(&mut self.rng);

        let mut free_pages: Vec<u32> = (1..=n_pages as u32).collect();
        free_pages.shuffle(&mut self.rng);
        let mut planted: Vec<Option<String>> = vec![None; n_pages];
        let mut qa_items = Vec::new();

        for (j, slot) in slots.into_iter().enumerate() {
            let qa_id = format!("{doc_id}-q{}", j + 1);
            let key = self.fresh_key();
            let qa = match slot {
                Slot::Single => {
                    let (value, kind, attr) = self.final_value();
                    let page = free_pages.pop().expect("capacity checked");
                    planted[page as usize - 1] = Some(fact_line(attr, &key, &value));
                    QaItem {
                        qa_id,
                        doc_id: doc_id.clone(),
                        question: question_text(&[attr], &key),
                        gold_answers: vec![value],
                        answer_kind: kind,
                        evidence_pages: BTreeSet::from([page]),
                    }
                }
                Slot::Multi => {
                    let link = *LINK_ATTRS.choose(&mut self.rng).unwrap();
                    let mid = self.fresh_key();
                    let (value, kind, attr) = self.final_value();
                    let first = free_pages.pop().expect("capacity checked");
                    let second = free_pages.pop().expect("capacity checked");
                    planted[first as usize - 1] = Some(fact_line(link, &key, &mid));
                    planted[second as usize - 1] = Some(fact_line(attr, &mid, &value));
                    QaItem {
                        qa_id,
                        doc_id: doc_id.clone(),
                        question: question_text(&[attr, link], &key),
                        gold_answers: vec![value],
                        answer_kind: kind,
                        evidence_pages: BTreeSet::from([first, second]),
                    }
                }
                Slot::Unanswerable => {
                    let attr = if self.rng.gen_bool(0.5) {
                        *ID_ATTRS.choose(&mut self.rng).unwrap()
                    } else {
                        *FREE_ATTRS.choose(&mut self.rng).unwrap()
                    };
                    QaItem {
                        qa_id,
                        doc_id: doc_id.clone(),
                        question: question_text(&[attr], &key),
                        gold_answers: vec![NOT_ANSWERABLE.to_owned()],
                        answer_kind: AnswerKind::Unanswerable,
                        evidence_pages: BTreeSet::new(),
                    }
                }
            };
            qa_items.push(qa);
        }

        let pages = (1..=n_pages as u32)
            .map(|index| {
                let n_lines = self.rng.gen_range(12..=20);
                let mut lines: Vec<String> = (0..n_lines).map(|_| self.filler_line()).collect();
                if let Some(fact) = planted[index as usize - 1].take() {
                    let at = self.rng.gen_range(0..=lines.len());
                    lines.insert(at, fact);
                }
                Page::synthetic(index, spec.page_width, spec.page_height, lines)
            })
            .collect();
        (Document { doc_id, pages }, qa_items)
    }
}

/// Generates a corpus; identical specs give identical corpora.
pub fn synth_corpus(spec: &SynthSpec) -> Result<Corpus, CorpusError> {
    spec.validate()?;
    let mut gen = Generator { rng: ChaCha8Rng::seed_from_u64(spec.rng_seed), spec, used_keys: HashSet::new() };
    let mut docs = Vec::with_capacity(spec.n_docs);
    let mut qa = Vec::new();
    for d in 0..spec.n_docs {
        let (doc, items) = gen.document(d + 1);
        docs.push(doc);
        qa.extend(items);
    }
    Ok(Corpus::new(docs, qa))
}
