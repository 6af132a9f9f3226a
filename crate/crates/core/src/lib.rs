//! Closed-loop harness for multi-page document question answering agents.
//!
//! An agent starts from a thumbnail overview of the document, navigates by
//! retrieval and direct page fetches, keeps a working memory of per-turn
//! summaries, and terminates with an answer. This crate provides the
//! environment, the turn grammar, retrievers, reward functions, evaluation
//! metrics, the training-side math (trajectory filtering, group-normalized
//! advantages, token-level clipped objective) and scripted / bridged agents.
//!
//! Module map:
//!
//! | module | contents |
//! |--------|----------|
//! | [`corpus`] | pages, documents, QA items, on-disk layout, synthetic corpora, token cost |
//! | [`overview`] | thumbnail grid construction |
//! | [`protocol`] | `<think>`/`<action>` turn grammar and trajectory records |
//! | [`retrieval`] | retriever contract, BM25, oracle and noisy retrievers |
//! | [`environment`] | the interaction state machine and episode runner |
//! | [`rewards`] | answer, evidence and format rewards |
//! | [`metrics`] | Page-F1, tool usage and report aggregation |
//! | [`trainpipe`] | trajectory filter, masked NLL, stratification, GRPO math |
//! | [`agents`] | agent contract, scripted agents, wire bridge |
//! | [`runner`] | corpus-level episode runner |

pub mod agents;
pub mod config;
pub mod corpus;
pub mod environment;
pub mod font;
pub mod metrics;
pub mod overview;
pub mod protocol;
pub mod raster;
pub mod retrieval;
pub mod rewards;
pub mod runner;
pub mod trainpipe;

mod util;

pub use agents::{Agent, AgentError, AgentSpec};
pub use config::HarnessConfig;
pub use corpus::{AnswerKind, Corpus, CorpusError, Document, Page, QaItem, SynthSpec};
pub use environment::{EnvConfig, EnvState, Environment, Observation, Outcome};
pub use overview::{OverviewImage, OverviewLayout, OverviewSet};
pub use protocol::{Action, FormatError, ThinkBlock, Trajectory, Turn};
pub use retrieval::{RankedPage, Retriever, RetrieverSpec};
pub use rewards::{RewardBreakdown, RewardParams, RewardWeights};
pub use runner::EpisodeRunner;
