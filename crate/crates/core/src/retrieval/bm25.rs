use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use super::{rank_order, RankedPage, RetrievalError, Retriever};
use crate::config::{BM25_B, BM25_K1};
use crate::corpus::Document;

/// Lowercase and split on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

/// Per-document BM25 statistics over page text layers.
#[derive(Debug, Clone, PartialEq)]
pub struct PageIndexStats {
    term_freqs: Vec<BTreeMap<String, u32>>,
    page_lengths: Vec<u32>,
    doc_freqs: BTreeMap<String, u32>,
    avg_length: f64,
    k1: f64,
    b: f64,
}

impl PageIndexStats {
    pub fn build(doc: &Document) -> Self {
        Self::with_params(doc, BM25_K1, BM25_B)
    }

    pub fn with_params(doc: &Document, k1: f64, b: f64) -> Self {
        let mut term_freqs = Vec::with_capacity(doc.num_pages());
        let mut page_lengths = Vec::with_capacity(doc.num_pages());
        let mut doc_freqs: BTreeMap<String, u32> = BTreeMap::new();
        for page in &doc.pages {
            let tokens = tokenize(&page.text_content());
            page_lengths.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for term in tf.keys() {
                *doc_freqs.entry(term.clone()).or_default() += 1;
            }
            term_freqs.push(tf);
        }
        let total: u64 = page_lengths.iter().map(|&l| u64::from(l)).sum();
        let avg_length = if page_lengths.is_empty() { 0.0 } else { total as f64 / page_lengths.len() as f64 };
        Self { term_freqs, page_lengths, doc_freqs, avg_length, k1, b }
    }

    pub fn num_pages(&self) -> usize {
        self.page_lengths.len()
    }

    pub fn doc_freq(&self, term: &str) -> u32 {
        self.doc_freqs.get(term).copied().unwrap_or(0)
    }

    pub fn term_freq(&self, page: u32, term: &str) -> u32 {
        self.term_freqs.get(page as usize - 1).and_then(|tf| tf.get(term)).copied().unwrap_or(0)
    }

    pub fn page_length(&self, page: u32) -> u32 {
        self.page_lengths[page as usize - 1]
    }

    pub fn avg_length(&self) -> f64 {
        self.avg_length
    }

    pub fn vocabulary_size(&self) -> usize {
        self.doc_freqs.len()
    }

    fn idf(&self, df: u32) -> f64 {
        let n = self.num_pages() as f64;
        let df = f64::from(df);
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// BM25 score of 1-based `page` for the distinct terms of `query`.
    pub fn score(&self, query: &str, page: u32) -> f64 {
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        self.score_terms(&terms, page)
    }

    fn score_terms(&self, terms: &BTreeSet<String>, page: u32) -> f64 {
        if self.avg_length <= 0.0 {
            return 0.0;
        }
        let tf_map = &self.term_freqs[page as usize - 1];
        let norm = 1.0 - self.b + self.b * f64::from(self.page_lengths[page as usize - 1]) / self.avg_length;
        terms
            .iter()
            .filter_map(|t| tf_map.get(t).map(|&tf| (t, f64::from(tf))))
            .map(|(t, tf)| self.idf(self.doc_freq(t)) * tf * (self.k1 + 1.0) / (tf + self.k1 * norm))
            .sum()
    }

    pub fn retrieve(&self, query: &str, excluded: &BTreeSet<u32>, k: usize) -> Vec<RankedPage> {
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        let mut ranked: Vec<RankedPage> = (1..=self.num_pages() as u32)
            .filter(|p| !excluded.contains(p))
            .map(|index| RankedPage { index, score: self.score_terms(&terms, index) })
            .collect();
        ranked.sort_by(rank_order);
        ranked.truncate(k);
        ranked
    }
}

pub struct Bm25Retriever {
    index: Arc<PageIndexStats>,
}

impl Bm25Retriever {
    pub fn new(index: Arc<PageIndexStats>) -> Self {
        Self { index }
    }
}

impl Retriever for Bm25Retriever {
    fn retrieve(&mut self, query: &str, excluded: &BTreeSet<u32>, k: usize) -> Result<Vec<RankedPage>, RetrievalError> {
        Ok(self.index.retrieve(query, excluded, k))
    }
}
