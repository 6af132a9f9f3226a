//! Documents, pages, QA items and the visual-token cost model.
//!
//! Pages are capped at 1024x768 (aspect preserved) when they enter a corpus.
//! A page may carry a text layer; it feeds the lexical retriever and the
//! scripted agents only and is never part of what the environment shows an
//! agent.

mod io;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

pub use io::{load_corpus, save_corpus};
pub use synth::{synth_corpus, SynthSpec};

pub const MAX_PAGE_WIDTH: u32 = 1024;
pub const MAX_PAGE_HEIGHT: u32 = 768;
/// Side of the square patch that becomes one visual token.
pub const PATCH_SIZE: u32 = 28;
/// Canonical gold answer (and expected prediction) for unanswerable items.
pub const NOT_ANSWERABLE: &str = "not answerable";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("document {doc_id}: missing page file for page {index}")]
    MissingPage { doc_id: String, index: u32 },
    #[error("document {doc_id} has no pages")]
    EmptyDocument { doc_id: String },
    #[error("unknown document {doc_id}")]
    UnknownDocument { doc_id: String },
    #[error("qa.jsonl line {line}: {message}")]
    BadQaLine { line: usize, message: String },
    #[error("corpus failed validation: {}", join_violations(.0))]
    Validation(Vec<Violation>),
    #[error("invalid synth spec: {0}")]
    Spec(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Visual tokens consumed by an image of the given size: one token per
/// started 28x28 patch.
pub fn page_token_cost(width: u32, height: u32) -> u64 {
    u64::from(width.div_ceil(PATCH_SIZE)) * u64::from(height.div_ceil(PATCH_SIZE))
}

#[derive(Debug, Clone)]
enum PageSource {
    /// Rendered on demand from the text layer.
    Synthetic,
    /// Decoded from disk on demand and rescaled to the stored size.
    File(PathBuf),
    Memory(Arc<RgbImage>),
}

#[derive(Debug, Clone)]
pub struct Page {
    /// 1-based absolute page number.
    pub index: u32,
    pub width: u32,
    pub height: u32,
    pub text: Option<Vec<String>>,
    source: PageSource,
}

impl Page {
    /// Wraps an in-memory raster, rescaling it to fit the page cap.
    pub fn from_image(index: u32, image: RgbImage, text: Option<Vec<String>>) -> Self {
        let (w, h) = crate::raster::fit_within(image.width(), image.height(), MAX_PAGE_WIDTH, MAX_PAGE_HEIGHT);
        let image = crate::raster::resize_area(&image, w, h);
        Self { index, width: w, height: h, text, source: PageSource::Memory(Arc::new(image)) }
    }

    /// A page whose raster is drawn from its own text layer.
    pub fn synthetic(index: u32, width: u32, height: u32, lines: Vec<String>) -> Self {
        let (width, height) = crate::raster::fit_within(width, height, MAX_PAGE_WIDTH, MAX_PAGE_HEIGHT);
        Self { index, width, height, text: Some(lines), source: PageSource::Synthetic }
    }

    pub(crate) fn from_file(index: u32, path: PathBuf, src_w: u32, src_h: u32, text: Option<Vec<String>>) -> Self {
        let (width, height) = crate::raster::fit_within(src_w, src_h, MAX_PAGE_WIDTH, MAX_PAGE_HEIGHT);
        Self { index, width, height, text, source: PageSource::File(path) }
    }

    /// The page raster at its stored (capped) size.
    pub fn raster(&self) -> Result<RgbImage, CorpusError> {
        match &self.source {
            PageSource::Synthetic => {
                let lines = self.text.as_deref().unwrap_or(&[]);
                Ok(synth::render_text_page(self.width, self.height, lines))
            }
            PageSource::File(path) => {
                let img =
                    image::open(path).map_err(|source| CorpusError::Image { path: path.clone(), source })?.to_rgb8();
                if img.dimensions() == (self.width, self.height) {
                    Ok(img)
                } else {
                    Ok(crate::raster::resize_area(&img, self.width, self.height))
                }
            }
            PageSource::Memory(img) => Ok(img.as_ref().clone()),
        }
    }

    /// Text layer joined with newlines; empty when absent.
    pub fn text_content(&self) -> String {
        self.text.as_ref().map(|l| l.join("\n")).unwrap_or_default()
    }

    pub fn token_cost(&self) -> u64 {
        page_token_cost(self.width, self.height)
    }
}

#[derive(Debug, Clone)]
pub struct Document {
    pub doc_id: String,
    pub pages: Vec<Page>,
}

impl Document {
    pub fn num_pages(&self) -> usize {
        self.pages.len()
    }

    pub fn page(&self, index: u32) -> Option<&Page> {
        let pos = usize::try_from(index).ok()?.checked_sub(1)?;
        self.pages.get(pos).filter(|p| p.index == index).or_else(|| self.pages.iter().find(|p| p.index == index))
    }

    pub fn contains_page(&self, index: u32) -> bool {
        index >= 1 && (index as usize) <= self.pages.len()
    }

    pub fn total_token_cost(&self) -> u64 {
        self.pages.iter().map(Page::token_cost).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerKind {
    Freeform,
    Identifier,
    Unanswerable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub qa_id: String,
    pub doc_id: String,
    pub question: String,
    pub gold_answers: Vec<String>,
    pub answer_kind: AnswerKind,
    pub evidence_pages: BTreeSet<u32>,
}

impl QaItem {
    pub fn is_answerable(&self) -> bool {
        self.answer_kind != AnswerKind::Unanswerable
    }
}

/// Immutable after construction; documents are shared behind `Arc` so
/// concurrent episodes can hold them cheaply.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub documents: BTreeMap<String, Arc<Document>>,
    pub qa_items: Vec<QaItem>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>, qa_items: Vec<QaItem>) -> Self {
        let documents = documents.into_iter().map(|d| (d.doc_id.clone(), Arc::new(d))).collect();
        Self { documents, qa_items }
    }

    pub fn document(&self, doc_id: &str) -> Option<&Arc<Document>> {
        self.documents.get(doc_id)
    }

    pub fn qa(&self, qa_id: &str) -> Option<&QaItem> {
        self.qa_items.iter().find(|q| q.qa_id == qa_id)
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate_corpus(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyDocument { doc_id: String },
    OversizedPage { doc_id: String, index: u32, width: u32, height: u32 },
    DuplicatePageIndex { doc_id: String, index: u32 },
    NonContiguousPages { doc_id: String },
    DuplicateQaId { qa_id: String },
    UnknownDocument { qa_id: String, doc_id: String },
    EvidenceOutOfRange { qa_id: String, page: u32, num_pages: usize },
    NoGoldAnswers { qa_id: String },
    MissingEvidence { qa_id: String },
    UnanswerableWithEvidence { qa_id: String },
    NonCanonicalUnanswerable { qa_id: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyDocument { doc_id } => write!(f, "document {doc_id} has no pages"),
            Self::OversizedPage { doc_id, index, width, height } => {
                write!(f, "document {doc_id} page {index} is {width}x{height}, above the 1024x768 cap")
            }
            Self::DuplicatePageIndex { doc_id, index } => write!(f, "document {doc_id} repeats page index {index}"),
            Self::NonContiguousPages { doc_id } => write!(f, "document {doc_id} page indices are not 1..N in order"),
            Self::DuplicateQaId { qa_id } => write!(f, "qa id {qa_id} appears more than once"),
            Self::UnknownDocument { qa_id, doc_id } => write!(f, "qa {qa_id} references unknown document {doc_id}"),
            Self::EvidenceOutOfRange { qa_id, page, num_pages } => {
                write!(f, "qa {qa_id} evidence page {page} outside 1..{num_pages}")
            }
            Self::NoGoldAnswers { qa_id } => write!(f, "qa {qa_id} has no gold answers"),
            Self::MissingEvidence { qa_id } => write!(f, "answerable qa {qa_id} has no evidence pages"),
            Self::UnanswerableWithEvidence { qa_id } => write!(f, "unanswerable qa {qa_id} lists evidence pages"),
            Self::NonCanonicalUnanswerable { qa_id } => {
                write!(f, "unanswerable qa {qa_id} gold answers are not [\"{NOT_ANSWERABLE}\"]")
            }
        }
    }
}

/// Checks every structural invariant; an empty result means the corpus is valid.
pub fn validate_corpus(corpus: &Corpus) -> Vec<Violation> {
    let mut out = Vec::new();
    for (doc_id, doc) in &corpus.documents {
        if doc.pages.is_empty() {
            out.push(Violation::EmptyDocument { doc_id: doc_id.clone() });
            continue;
        }
        let mut seen = BTreeSet::new();
        let mut dup = BTreeSet::new();
        for p in &doc.pages {
            if p.width > MAX_PAGE_WIDTH || p.height > MAX_PAGE_HEIGHT {
                out.push(Violation::OversizedPage {
                    doc_id: doc_id.clone(),
                    index: p.index,
                    width: p.width,
                    height: p.height,
                });
            }
            if !seen.insert(p.index) {
                dup.insert(p.index);
            }
        }
        if dup.is_empty() {
            let contiguous = doc.pages.iter().enumerate().all(|(i, p)| p.index as usize == i + 1);
            if !contiguous {
                out.push(Violation::NonContiguousPages { doc_id: doc_id.clone() });
            }
        } else {
            out.extend(dup.into_iter().map(|index| Violation::DuplicatePageIndex { doc_id: doc_id.clone(), index }));
        }
    }

    let mut qa_ids = BTreeSet::new();
    for qa in &corpus.qa_items {
        if !qa_ids.insert(qa.qa_id.as_str()) {
            out.push(Violation::DuplicateQaId { qa_id: qa.qa_id.clone() });
        }
        if qa.gold_answers.is_empty() {
            out.push(Violation::NoGoldAnswers { qa_id: qa.qa_id.clone() });
        }
        match qa.answer_kind {
            AnswerKind::Unanswerable => {
                if !qa.evidence_pages.is_empty() {
                    out.push(Violation::UnanswerableWithEvidence { qa_id: qa.qa_id.clone() });
                }
                let canonical = qa.gold_answers.len() == 1
                    && crate::rewards::normalize_answer(&qa.gold_answers[0]) == NOT_ANSWERABLE;
                if !qa.gold_answers.is_empty() && !canonical {
                    out.push(Violation::NonCanonicalUnanswerable { qa_id: qa.qa_id.clone() });
                }
            }
            _ => {
                if qa.evidence_pages.is_empty() {
                    out.push(Violation::MissingEvidence { qa_id: qa.qa_id.clone() });
                }
            }
        }
        match corpus.documents.get(&qa.doc_id) {
            None => out.push(Violation::UnknownDocument { qa_id: qa.qa_id.clone(), doc_id: qa.doc_id.clone() }),
            Some(doc) => {
                for &page in &qa.evidence_pages {
                    if !doc.contains_page(page) {
                        out.push(Violation::EvidenceOutOfRange {
                            qa_id: qa.qa_id.clone(),
                            page,
                            num_pages: doc.num_pages(),
                        });
                    }
                }
            }
        }
    }
    out
}
