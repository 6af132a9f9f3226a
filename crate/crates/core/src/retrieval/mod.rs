//! Page retrievers.
//!
//! Every retriever honours one contract: given a query, a set of excluded
//! (already visited) pages and a budget `k`, return at most `k` ranked pages,
//! none of them excluded, sorted by descending score with ties broken by
//! ascending page index.

mod bm25;
mod oracle;

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use bm25::{tokenize, Bm25Retriever, PageIndexStats};
pub use oracle::{NoisyRetriever, OracleRetriever};

use crate::agents::wire::LineChannel;
use crate::corpus::QaItem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedPage {
    pub index: u32,
    pub score: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("retriever transport failed: {0}")]
    Transport(String),
    #[error("retriever replied with an invalid message: {0}")]
    Protocol(String),
}

pub trait Retriever: Send {
    fn retrieve(&mut self, query: &str, excluded: &BTreeSet<u32>, k: usize) -> Result<Vec<RankedPage>, RetrievalError>;
}

/// Descending score, then ascending index.
pub fn rank_order(a: &RankedPage, b: &RankedPage) -> Ordering {
    b.score.total_cmp(&a.score).then(a.index.cmp(&b.index))
}

/// Retriever selection: `bm25 | oracle | noisy:<p>:<seed>[:<base>] | bridge:<addr>`.
/// The noisy retriever wraps `bm25` unless another base is named.
#[derive(Debug, Clone, PartialEq)]
pub enum RetrieverSpec {
    Bm25,
    Oracle,
    Noisy { flip_prob: f64, seed: u64, base: Box<RetrieverSpec> },
    Bridge { addr: String },
}

impl fmt::Display for RetrieverSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Bm25 => f.write_str("bm25"),
            Self::Oracle => f.write_str("oracle"),
            Self::Noisy { flip_prob, seed, base } if **base == Self::Bm25 => write!(f, "noisy:{flip_prob}:{seed}"),
            Self::Noisy { flip_prob, seed, base } => write!(f, "noisy:{flip_prob}:{seed}:{base}"),
            Self::Bridge { addr } => write!(f, "bridge:{addr}"),
        }
    }
}

impl FromStr for RetrieverSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bm25" => return Ok(Self::Bm25),
            "oracle" => return Ok(Self::Oracle),
            _ => {}
        }
        if let Some(addr) = s.strip_prefix("bridge:") {
            if addr.is_empty() {
                return Err("bridge retriever needs an address".into());
            }
            return Ok(Self::Bridge { addr: addr.to_owned() });
        }
        if let Some(rest) = s.strip_prefix("noisy:") {
            let mut parts = rest.splitn(3, ':');
            let p: f64 =
                parts.next().and_then(|p| p.parse().ok()).ok_or_else(|| format!("bad flip probability in {s:?}"))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("flip probability {p} outside [0, 1]"));
            }
            let seed: u64 = parts.next().and_then(|x| x.parse().ok()).ok_or_else(|| format!("bad seed in {s:?}"))?;
            let base = match parts.next() {
                Some(b) => b.parse()?,
                None => Self::Bm25,
            };
            return Ok(Self::Noisy { flip_prob: p, seed, base: Box::new(base) });
        }
        Err(format!("unknown retriever {s:?}; expected bm25 | oracle | noisy:<p>:<seed> | bridge:<addr>"))
    }
}

impl RetrieverSpec {
    /// Instantiates the retriever for one episode. `index` is the BM25 index
    /// of the episode's document.
    pub fn build(
        &self,
        index: &Arc<PageIndexStats>,
        qa: &QaItem,
        timeout: Duration,
    ) -> Result<Box<dyn Retriever>, RetrievalError> {
        Ok(match self {
            Self::Bm25 => Box::new(Bm25Retriever::new(Arc::clone(index))),
            Self::Oracle => Box::new(OracleRetriever::new(qa.evidence_pages.clone(), index.num_pages() as u32, true)),
            Self::Noisy { flip_prob, seed, base } => {
                let base = base.build(index, qa, timeout)?;
                let seed = crate::util::derive_seed(*seed, &qa.qa_id);
                Box::new(NoisyRetriever::new(
                    base,
                    *flip_prob,
                    seed,
                    qa.evidence_pages.clone(),
                    index.num_pages() as u32,
                ))
            }
            Self::Bridge { addr } => Box::new(BridgeRetriever::connect(addr, qa, timeout)?),
        })
    }
}

#[derive(Serialize)]
struct RetrieveRequest<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    doc_id: &'a str,
    qa_id: &'a str,
    query: &'a str,
    excluded: &'a BTreeSet<u32>,
    k: usize,
}

#[derive(Deserialize)]
struct RetrieveReply {
    #[serde(rename = "type")]
    kind: String,
    pages: Vec<RankedPage>,
}

/// External retriever reached over TCP with newline-delimited JSON:
/// `{"type":"retrieve","doc_id","qa_id","query","excluded":[..],"k"}` is
/// answered by `{"type":"ranked","pages":[{"index","score"}..]}`.
pub struct BridgeRetriever {
    channel: LineChannel,
    doc_id: String,
    qa_id: String,
}

impl BridgeRetriever {
    pub fn connect(addr: &str, qa: &QaItem, timeout: Duration) -> Result<Self, RetrievalError> {
        let channel = LineChannel::tcp(addr, timeout).map_err(|e| RetrievalError::Transport(e.to_string()))?;
        Ok(Self { channel, doc_id: qa.doc_id.clone(), qa_id: qa.qa_id.clone() })
    }
}

impl Retriever for BridgeRetriever {
    fn retrieve(&mut self, query: &str, excluded: &BTreeSet<u32>, k: usize) -> Result<Vec<RankedPage>, RetrievalError> {
        let req = RetrieveRequest { kind: "retrieve", doc_id: &self.doc_id, qa_id: &self.qa_id, query, excluded, k };
        let line = serde_json::to_string(&req).expect("request serializes");
        self.channel.send(&line).map_err(|e| RetrievalError::Transport(e.to_string()))?;
        let reply = self.channel.recv().map_err(|e| RetrievalError::Transport(e.to_string()))?;
        let reply: RetrieveReply = serde_json::from_str(&reply).map_err(|e| RetrievalError::Protocol(e.to_string()))?;
        if reply.kind != "ranked" {
            return Err(RetrievalError::Protocol(format!("expected type \"ranked\", got {:?}", reply.kind)));
        }
        let mut pages: Vec<RankedPage> = reply.pages.into_iter().filter(|p| !excluded.contains(&p.index)).collect();
        pages.sort_by(rank_order);
        pages.dedup_by_key(|p| p.index);
        pages.truncate(k);
        Ok(pages)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parsing() {
        assert_eq!("bm25".parse::<RetrieverSpec>().unwrap(), RetrieverSpec::Bm25);
        assert_eq!("oracle".parse::<RetrieverSpec>().unwrap(), RetrieverSpec::Oracle);
        let n: RetrieverSpec = "noisy:0.5:7".parse().unwrap();
        assert_eq!(n, RetrieverSpec::Noisy { flip_prob: 0.5, seed: 7, base: Box::new(RetrieverSpec::Bm25) });
        assert_eq!(n.to_string(), "noisy:0.5:7");
        let n: RetrieverSpec = "noisy:1:3:oracle".parse().unwrap();
        assert_eq!(n.to_string(), "noisy:1:3:oracle");
        assert_eq!(
            "bridge:127.0.0.1:9000".parse::<RetrieverSpec>().unwrap(),
            RetrieverSpec::Bridge { addr: "127.0.0.1:9000".into() }
        );
        assert!("noisy:2:1".parse::<RetrieverSpec>().is_err());
        assert!("colqwen".parse::<RetrieverSpec>().is_err());
    }
}
