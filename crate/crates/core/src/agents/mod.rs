//! Agents: the policy contract, scripted agents for closed-loop testing,
//! and a bridge to external agents over newline-delimited JSON.

mod bridge;
mod scripted;
pub mod wire;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

pub use bridge::{BridgeAgent, BridgeOptions, Endpoint, ImageMode};
pub use scripted::{AlwaysRetrieveAgent, GreedyRetrievalAgent, OracleAgent, RandomAgent};

use crate::corpus::QaItem;
use crate::environment::Observation;
use crate::protocol::Trajectory;
use wire::LineChannel;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("agent transport failed: {0}")]
    Transport(String),
    #[error("agent sent an invalid message: {0}")]
    Protocol(String),
    #[error("agent timed out after {0:?}")]
    Timeout(Duration),
}

/// A policy. It sees observations and answers with raw turn text; the
/// environment decides whether that text is valid.
pub trait Agent: Send {
    fn act(&mut self, obs: &Observation) -> Result<String, AgentError>;

    /// Called once the episode has ended, whatever the outcome.
    fn finish(&mut self, _traj: &Trajectory) -> Result<(), AgentError> {
        Ok(())
    }
}

/// Agent selection: `oracle | greedy | always-retrieve | random[:<seed>] |
/// bridge:cmd:<command> | bridge:tcp:<addr>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AgentSpec {
    Oracle,
    Greedy,
    AlwaysRetrieve,
    Random { seed: u64 },
    Bridge(Endpoint),
}

impl fmt::Display for AgentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Oracle => f.write_str("oracle"),
            Self::Greedy => f.write_str("greedy"),
            Self::AlwaysRetrieve => f.write_str("always-retrieve"),
            Self::Random { seed } => write!(f, "random:{seed}"),
            Self::Bridge(Endpoint::Command(c)) => write!(f, "bridge:cmd:{c}"),
            Self::Bridge(Endpoint::Tcp(a)) => write!(f, "bridge:tcp:{a}"),
        }
    }
}

impl FromStr for AgentSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => return Ok(Self::Oracle),
            "greedy" => return Ok(Self::Greedy),
            "always-retrieve" => return Ok(Self::AlwaysRetrieve),
            "random" => return Ok(Self::Random { seed: 0 }),
            _ => {}
        }
        if let Some(seed) = s.strip_prefix("random:") {
            return seed.parse().map(|seed| Self::Random { seed }).map_err(|_| format!("bad seed in {s:?}"));
        }
        if let Some(cmd) = s.strip_prefix("bridge:cmd:") {
            if cmd.trim().is_empty() {
                return Err("bridge:cmd: needs a command".into());
            }
            return Ok(Self::Bridge(Endpoint::Command(cmd.to_owned())));
        }
        if let Some(addr) = s.strip_prefix("bridge:tcp:") {
            if addr.is_empty() {
                return Err("bridge:tcp: needs an address".into());
            }
            return Ok(Self::Bridge(Endpoint::Tcp(addr.to_owned())));
        }
        Err(format!(
            "unknown agent {s:?}; expected oracle | greedy | always-retrieve | random[:<seed>] | bridge:cmd:<command> | bridge:tcp:<addr>"
        ))
    }
}

/// Builds one fresh agent per episode. Bridge connections are pooled so a
/// run with many episodes reuses them; each connection serves one episode
/// at a time.
#[derive(Clone)]
pub struct AgentFactory {
    spec: AgentSpec,
    bridge: BridgeOptions,
    pool: Arc<Mutex<Vec<LineChannel>>>,
}

impl AgentFactory {
    pub fn new(spec: AgentSpec, bridge: BridgeOptions) -> Self {
        Self { spec, bridge, pool: Arc::default() }
    }

    pub fn spec(&self) -> &AgentSpec {
        &self.spec
    }

    pub fn build(&self, qa: &QaItem) -> Box<dyn Agent> {
        match &self.spec {
            AgentSpec::Oracle => Box::new(OracleAgent::new(qa.clone())),
            AgentSpec::Greedy => Box::new(GreedyRetrievalAgent::new()),
            AgentSpec::AlwaysRetrieve => Box::new(AlwaysRetrieveAgent),
            AgentSpec::Random { seed } => Box::new(RandomAgent::new(crate::util::derive_seed(*seed, &qa.qa_id))),
            AgentSpec::Bridge(endpoint) => {
                Box::new(BridgeAgent::new(endpoint.clone(), self.bridge.clone(), Arc::clone(&self.pool)))
            }
        }
    }
}

impl Default for BridgeOptions {
    fn default() -> Self {
        Self {
            image_mode: ImageMode::Path,
            image_dir: PathBuf::from("bridge_images"),
            timeout: Duration::from_secs(60),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_round_trip() {
        for s in [
            "oracle",
            "greedy",
            "always-retrieve",
            "random:7",
            "bridge:cmd:python3 agent.py",
            "bridge:tcp:127.0.0.1:4000",
        ] {
            assert_eq!(s.parse::<AgentSpec>().unwrap().to_string(), s);
        }
        assert_eq!("random".parse::<AgentSpec>().unwrap(), AgentSpec::Random { seed: 0 });
        assert!("gpt".parse::<AgentSpec>().is_err());
        assert!("bridge:cmd:".parse::<AgentSpec>().is_err());
    }
}
