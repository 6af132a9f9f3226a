//! Runs episodes over a corpus: one prepared environment and BM25 index per
//! document, a fresh agent and retriever per episode.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use crate::agents::AgentFactory;
use crate::config::HarnessConfig;
use crate::corpus::{Corpus, CorpusError, QaItem};
use crate::environment::{run_episode, EnvConfig, Environment};
use crate::metrics::EpisodeRecord;
use crate::protocol::{TerminatedBy, Trajectory};
use crate::retrieval::{PageIndexStats, RetrieverSpec};
use crate::rewards::{total_reward, RewardParams};

pub struct EpisodeRunner {
    docs: BTreeMap<String, (Environment, Arc<PageIndexStats>)>,
    agents: AgentFactory,
    retriever: RetrieverSpec,
    config: HarnessConfig,
    retriever_timeout: Duration,
}

impl EpisodeRunner {
    /// Prepares every document that at least one of `items` refers to.
    pub fn new(
        corpus: &Corpus,
        items: &[QaItem],
        config: &HarnessConfig,
        agents: AgentFactory,
        retriever: RetrieverSpec,
    ) -> Result<Self, CorpusError> {
        let env_config = EnvConfig::from(config);
        let mut docs = BTreeMap::new();
        for qa in items {
            if docs.contains_key(&qa.doc_id) {
                continue;
            }
            let doc = corpus
                .document(&qa.doc_id)
                .ok_or_else(|| CorpusError::UnknownDocument { doc_id: qa.doc_id.clone() })?;
            let index = Arc::new(PageIndexStats::with_params(doc, config.bm25_k1, config.bm25_b));
            let env = Environment::new(Arc::clone(doc), env_config.clone())?;
            docs.insert(qa.doc_id.clone(), (env, index));
        }
        Ok(Self { docs, agents, retriever, config: config.clone(), retriever_timeout: Duration::from_secs(60) })
    }

    pub fn with_retriever_timeout(mut self, timeout: Duration) -> Self {
        self.retriever_timeout = timeout;
        self
    }

    pub fn environment(&self, doc_id: &str) -> Option<&Environment> {
        self.docs.get(doc_id).map(|(e, _)| e)
    }

    /// Runs one episode and attaches its reward.
    pub fn run(&self, qa: &QaItem) -> Trajectory {
        let (env, index) = self.docs.get(&qa.doc_id).expect("runner was built for this item");
        let mut traj = match self.retriever.build(index, qa, self.retriever_timeout) {
            Ok(mut retriever) => {
                let mut agent = self.agents.build(qa);
                run_episode(env, qa, agent.as_mut(), retriever.as_mut())
            }
            Err(e) => Trajectory {
                qa_id: qa.qa_id.clone(),
                doc_id: qa.doc_id.clone(),
                n_pages: env.document().num_pages(),
                budget: env.config().max_turns,
                turns: Vec::new(),
                final_answer: None,
                terminated_by: TerminatedBy::Error,
                error: Some(e.to_string()),
                reward: None,
            },
        };
        traj.reward = Some(total_reward(&traj, qa, &RewardParams::from(&self.config)));
        traj
    }

    pub fn record(&self, traj: Trajectory, qa: &QaItem) -> EpisodeRecord {
        let (env, _) = &self.docs[&qa.doc_id];
        EpisodeRecord::new(
            traj,
            qa.clone(),
            env.document(),
            self.config.group_capacity,
            self.config.header_height,
            &RewardParams::from(&self.config),
        )
    }
}
