//! Newline-delimited JSON framing shared by the agent and retriever bridges.
//!
//! Environment to agent:
//!
//! ```text
//! {"type":"reset","qa_id":..,"doc_id":..,"question":..,"budget":T,"n_pages":N,
//!  "images":[{"role":"overview","k":1,"first_page":1,"last_page":36,"path"|"b64":..}]}
//! {"type":"feedback","turn":t,"pages":[{"index":i,"label":"Page i:","path"|"b64":..}],
//!  "reminders":[..],"format_notice":..,"working_memory":".."}
//! {"type":"done","qa_id":..,"outcome":"answer"|"budget"|"error","final_answer":..}
//! ```
//!
//! Agent to environment: `{"type":"turn","text":"<think>..</think><action>..</action>"}`.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use base64::Engine;
use image::RgbImage;
use serde::{Deserialize, Serialize};

/// Image payload: a file path or base64-encoded PNG bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImagePayload {
    Path(String),
    B64(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverviewImageMsg {
    pub role: String,
    pub k: usize,
    pub first_page: u32,
    pub last_page: u32,
    #[serde(flatten)]
    pub payload: ImagePayload,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageImageMsg {
    pub index: u32,
    pub label: String,
    #[serde(flatten)]
    pub payload: ImagePayload,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum EnvMessage {
    Reset {
        qa_id: String,
        doc_id: String,
        question: String,
        budget: usize,
        n_pages: usize,
        images: Vec<OverviewImageMsg>,
    },
    Feedback {
        turn: usize,
        pages: Vec<PageImageMsg>,
        reminders: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        format_notice: Option<String>,
        working_memory: String,
    },
    Done {
        qa_id: String,
        outcome: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        final_answer: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum AgentMessage {
    Turn { text: String },
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut out = io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).expect("in-memory PNG encoding");
    out.into_inner()
}

pub fn encode_b64_png(img: &RgbImage) -> String {
    base64::engine::general_purpose::STANDARD.encode(encode_png(img))
}

pub fn decode_b64_png(data: &str) -> Result<RgbImage, String> {
    let bytes = base64::engine::general_purpose::STANDARD.decode(data).map_err(|e| e.to_string())?;
    image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).map(|i| i.to_rgb8()).map_err(|e| e.to_string())
}

/// A bidirectional line channel to a child process or TCP peer. Reads run
/// on a helper thread so every receive can be bounded by a timeout.
pub struct LineChannel {
    outgoing: Sender<String>,
    write_error: Arc<Mutex<Option<String>>>,
    lines: Receiver<io::Result<String>>,
    timeout: Duration,
    child: Option<Child>,
}

impl LineChannel {
    fn from_parts(
        mut writer: Box<dyn Write + Send>,
        reader: impl io::Read + Send + 'static,
        timeout: Duration,
    ) -> Self {
        // Writes go through their own thread so a peer that stops reading
        // cannot block past the receive timeout.
        let (outgoing, queued) = mpsc::channel::<String>();
        let write_error = Arc::new(Mutex::new(None));
        let sink = Arc::clone(&write_error);
        thread::spawn(move || {
            for line in queued {
                let res = writer
                    .write_all(line.as_bytes())
                    .and_then(|()| writer.write_all(b"\n"))
                    .and_then(|()| writer.flush());
                if let Err(e) = res {
                    *sink.lock().expect("write error lock") = Some(e.to_string());
                    break;
                }
            }
        });
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Self { outgoing, write_error, lines, timeout, child: None }
    }

    pub fn tcp(addr: &str, timeout: Duration) -> io::Result<Self> {
        let mut last = io::Error::new(io::ErrorKind::NotFound, format!("{addr} did not resolve"));
        for sock in addr.to_socket_addrs()? {
            match TcpStream::connect_timeout(&sock, timeout) {
                Ok(stream) => {
                    stream.set_nodelay(true)?;
                    let reader = stream.try_clone()?;
                    return Ok(Self::from_parts(Box::new(stream), reader, timeout));
                }
                Err(e) => last = e,
            }
        }
        Err(last)
    }

    /// Runs `command` through `sh -c` and talks to it over stdin/stdout.
    pub fn spawn(command: &str, timeout: Duration) -> io::Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut chan = Self::from_parts(Box::new(stdin), stdout, timeout);
        chan.child = Some(child);
        Ok(chan)
    }

    pub fn send(&mut self, line: &str) -> io::Result<()> {
        debug_assert!(!line.contains('\n'));
        if let Some(e) = self.write_error.lock().expect("write error lock").clone() {
            return Err(io::Error::new(io::ErrorKind::BrokenPipe, e));
        }
        self.outgoing
            .send(line.to_owned())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "writer thread has stopped"))
    }

    pub fn recv(&mut self) -> io::Result<String> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(line) => line,
            Err(RecvTimeoutError::Timeout) => {
                Err(io::Error::new(io::ErrorKind::TimedOut, format!("no reply within {:?}", self.timeout)))
            }
            Err(RecvTimeoutError::Disconnected) => {
                Err(io::Error::new(io::ErrorKind::UnexpectedEof, "peer closed the connection"))
            }
        }
    }
}

impl Drop for LineChannel {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}
