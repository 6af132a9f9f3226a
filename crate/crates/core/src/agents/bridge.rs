use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use image::RgbImage;

use super::wire::{
    encode_b64_png, AgentMessage, EnvMessage, ImagePayload, LineChannel, OverviewImageMsg, PageImageMsg,
};
use super::{Agent, AgentError};
use crate::environment::{Observation, ObservationKind};
use crate::protocol::{TerminatedBy, Trajectory};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// Shell command whose stdin/stdout carry the protocol.
    Command(String),
    Tcp(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageMode {
    /// PNG files written under the image directory; messages carry paths.
    Path,
    /// Base64 PNG inline in the messages.
    B64,
}

impl std::str::FromStr for ImageMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "path" => Ok(Self::Path),
            "b64" | "base64" => Ok(Self::B64),
            _ => Err(format!("unknown image mode {s:?}; expected path | b64")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BridgeOptions {
    pub image_mode: ImageMode,
    pub image_dir: PathBuf,
    /// Bound on connecting and on waiting for each reply.
    pub timeout: Duration,
}

/// Forwards observations to an external agent and returns its turn text
/// verbatim. Connects lazily on the first turn, so an unreachable endpoint
/// surfaces as an aborted episode rather than a harness failure.
pub struct BridgeAgent {
    endpoint: Endpoint,
    options: BridgeOptions,
    pool: Arc<Mutex<Vec<LineChannel>>>,
    channel: Option<LineChannel>,
}

impl BridgeAgent {
    pub fn new(endpoint: Endpoint, options: BridgeOptions, pool: Arc<Mutex<Vec<LineChannel>>>) -> Self {
        Self { endpoint, options, pool, channel: None }
    }

    fn channel(&mut self) -> Result<&mut LineChannel, AgentError> {
        if self.channel.is_none() {
            let pooled = self.pool.lock().expect("pool lock").pop();
            let chan = match pooled {
                Some(c) => c,
                None => match &self.endpoint {
                    Endpoint::Command(cmd) => LineChannel::spawn(cmd, self.options.timeout),
                    Endpoint::Tcp(addr) => LineChannel::tcp(addr, self.options.timeout),
                }
                .map_err(|e| AgentError::Transport(e.to_string()))?,
            };
            self.channel = Some(chan);
        }
        Ok(self.channel.as_mut().expect("just set"))
    }

    fn payload(&self, img: &RgbImage, dir: &Path, name: &str) -> Result<ImagePayload, AgentError> {
        match self.options.image_mode {
            ImageMode::B64 => Ok(ImagePayload::B64(encode_b64_png(img))),
            ImageMode::Path => {
                fs::create_dir_all(dir).map_err(|e| AgentError::Transport(format!("{}: {e}", dir.display())))?;
                let path = dir.join(name);
                img.save(&path).map_err(|e| AgentError::Transport(format!("{}: {e}", path.display())))?;
                Ok(ImagePayload::Path(path.to_string_lossy().into_owned()))
            }
        }
    }

    /// The wire message for an observation.
    pub fn encode(&self, obs: &Observation) -> Result<EnvMessage, AgentError> {
        let dir = self.options.image_dir.join(&obs.qa_id);
        let raster_err = |e: crate::corpus::CorpusError| AgentError::Transport(e.to_string());
        Ok(match &obs.kind {
            ObservationKind::Initial { overview } => {
                let mut images = Vec::with_capacity(overview.len());
                for img in &overview.images {
                    let k = img.layout.k;
                    images.push(OverviewImageMsg {
                        role: "overview".into(),
                        k,
                        first_page: img.layout.first_page,
                        last_page: img.layout.last_page,
                        payload: self.payload(&img.composite, &dir, &format!("overview_{k}.png"))?,
                    });
                }
                EnvMessage::Reset {
                    qa_id: obs.qa_id.clone(),
                    doc_id: obs.doc_id.clone(),
                    question: obs.question.clone(),
                    budget: obs.budget,
                    n_pages: obs.n_pages,
                    images,
                }
            }
            ObservationKind::Augmented { feedback, working_memory } => {
                let mut pages = Vec::with_capacity(feedback.pages.len());
                for p in &feedback.pages {
                    let raster = p.page.raster().map_err(raster_err)?;
                    pages.push(PageImageMsg {
                        index: p.index,
                        label: p.label.clone(),
                        payload: self.payload(&raster, &dir, &format!("page_{:04}.png", p.index))?,
                    });
                }
                EnvMessage::Feedback {
                    turn: obs.turn,
                    pages,
                    reminders: feedback.reminders.clone(),
                    format_notice: feedback.format_notice.clone(),
                    working_memory: working_memory.clone(),
                }
            }
        })
    }
}

impl Agent for BridgeAgent {
    fn act(&mut self, obs: &Observation) -> Result<String, AgentError> {
        let msg = serde_json::to_string(&self.encode(obs)?).expect("message serializes");
        let timeout = self.options.timeout;
        let chan = self.channel()?;
        let result = chan.send(&msg).and_then(|()| chan.recv());
        let reply = match result {
            Ok(r) => r,
            Err(e) => {
                // A late reply would desynchronise the stream; never reuse it.
                self.channel = None;
                return Err(if e.kind() == std::io::ErrorKind::TimedOut {
                    AgentError::Timeout(timeout)
                } else {
                    AgentError::Transport(e.to_string())
                });
            }
        };
        match serde_json::from_str::<AgentMessage>(&reply) {
            Ok(AgentMessage::Turn { text }) => Ok(text),
            Err(e) => {
                self.channel = None;
                Err(AgentError::Protocol(format!("{e}: {reply}")))
            }
        }
    }

    fn finish(&mut self, traj: &Trajectory) -> Result<(), AgentError> {
        let Some(mut chan) = self.channel.take() else { return Ok(()) };
        let outcome = match traj.terminated_by {
            TerminatedBy::Answer => "answer",
            TerminatedBy::Budget => "budget",
            TerminatedBy::Error => "error",
        };
        let msg = EnvMessage::Done {
            qa_id: traj.qa_id.clone(),
            outcome: outcome.into(),
            final_answer: traj.final_answer.clone(),
        };
        chan.send(&serde_json::to_string(&msg).expect("message serializes"))
            .map_err(|e| AgentError::Transport(e.to_string()))?;
        if traj.terminated_by != TerminatedBy::Error {
            self.pool.lock().expect("pool lock").push(chan);
        }
        Ok(())
    }
}
