use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use docnav_core::agents::wire::{decode_b64_png, EnvMessage, ImagePayload};
use docnav_core::agents::{AgentFactory, BridgeAgent, BridgeOptions, Endpoint, ImageMode};
use docnav_core::corpus::synth_corpus;
use docnav_core::environment::{run_episode, EnvConfig, ObservationKind};
use docnav_core::protocol::{validate_trajectory, Action, TerminatedBy, ThinkBlock, Turn};
use docnav_core::retrieval::OracleRetriever;
use docnav_core::{Agent, AgentError, AgentSpec, Corpus, Environment, EpisodeRunner, HarnessConfig, Observation};
use docnav_core::{RetrieverSpec, SynthSpec};

fn small_corpus() -> Corpus {
    synth_corpus(&SynthSpec { n_docs: 3, ..SynthSpec::default() }).unwrap()
}

fn runner(corpus: &Corpus, agent: AgentSpec, retriever: RetrieverSpec, cfg: &HarnessConfig) -> EpisodeRunner {
    let factory = AgentFactory::new(agent, BridgeOptions::default());
    EpisodeRunner::new(corpus, &corpus.qa_items, cfg, factory, retriever).unwrap()
}

#[test]
fn oracle_answers_with_gold() {
    let corpus = small_corpus();
    let r = runner(&corpus, AgentSpec::Oracle, RetrieverSpec::Oracle, &HarnessConfig::default());
    for qa in &corpus.qa_items {
        let t = r.run(qa);
        assert_eq!(t.terminated_by, TerminatedBy::Answer);
        assert_eq!(t.final_answer.as_deref(), qa.gold_answers.first().map(String::as_str));
        assert!(validate_trajectory(&t).valid, "{:?}", validate_trajectory(&t));
        if qa.is_answerable() {
            assert!((t.reward.unwrap().total - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn oracle_with_two_evidence_pages_takes_two_turns() {
    let corpus = small_corpus();
    let r = runner(&corpus, AgentSpec::Oracle, RetrieverSpec::Oracle, &HarnessConfig::default());
    let qa = corpus.qa_items.iter().find(|q| q.evidence_pages.len() == 2).expect("multi-hop item");
    let t = r.run(qa);
    assert_eq!(t.turns.len(), 2);
    let ev: Vec<u32> = qa.evidence_pages.iter().copied().collect();
    assert_eq!(t.turns[0].action, Some(Action::Fetch { indices: ev.clone() }));
    assert_eq!(t.turns[0].feedback.pages, ev);
}

#[test]
fn always_retrieve_exhausts_budget() {
    let corpus = small_corpus();
    let r = runner(&corpus, AgentSpec::AlwaysRetrieve, RetrieverSpec::Bm25, &HarnessConfig::default());
    for qa in &corpus.qa_items {
        let t = r.run(qa);
        assert_eq!(t.terminated_by, TerminatedBy::Budget);
        assert_eq!(t.turns.len(), 8);
        assert!(t.final_answer.is_none());
        let delivered = t.delivered_pages();
        let unique: BTreeSet<u32> = delivered.iter().copied().collect();
        assert_eq!(unique.len(), delivered.len());
        // 12 pages, 2 per retrieval: six retrievals exhaust the document.
        assert_eq!(delivered.len(), 12);
        assert_eq!(t.turns[7].feedback.reminders.len(), 1);
    }
}

#[test]
fn greedy_with_bm25_solves_most_items_in_two_turns() {
    let corpus = small_corpus();
    let r = runner(&corpus, AgentSpec::Greedy, RetrieverSpec::Bm25, &HarnessConfig::default());
    let mut correct = 0;
    for qa in &corpus.qa_items {
        let t = r.run(qa);
        assert!(t.turns.len() <= 2);
        assert!(validate_trajectory(&t).valid);
        if t.reward.unwrap().ans > 0.0 {
            correct += 1;
        }
    }
    assert!(correct * 10 >= corpus.qa_items.len() * 8, "{correct} of {}", corpus.qa_items.len());
}

struct Garbage;
impl Agent for Garbage {
    fn act(&mut self, _: &Observation) -> Result<String, AgentError> {
        Ok("I think the answer is 42".into())
    }
}

#[test]
fn garbage_agent_gets_format_notices() {
    let corpus = small_corpus();
    let qa = &corpus.qa_items[0];
    let env = Environment::new(Arc::clone(corpus.document(&qa.doc_id).unwrap()), EnvConfig::default()).unwrap();
    let mut retriever = OracleRetriever::new(qa.evidence_pages.clone(), 12, true);
    let t = run_episode(&env, qa, &mut Garbage, &mut retriever);
    assert_eq!(t.terminated_by, TerminatedBy::Budget);
    assert_eq!(t.turns.len(), 8);
    assert!(t.turns.iter().all(|r| r.feedback.format_notice.is_some() && r.format_error.is_some()));
    assert!(!validate_trajectory(&t).valid);
}

#[test]
fn random_agent_is_deterministic_and_bounded() {
    let corpus = small_corpus();
    let r = runner(&corpus, AgentSpec::Random { seed: 3 }, RetrieverSpec::Bm25, &HarnessConfig::default());
    for qa in &corpus.qa_items {
        let a = r.run(qa);
        let b = r.run(qa);
        assert_eq!(a.to_json_line(), b.to_json_line());
        assert!(a.turns.len() <= 8);
        assert_eq!(a.reward.unwrap().fmt, 1.0, "{:?}", validate_trajectory(&a));
    }
}

#[test]
fn max_turns_one_with_retrieval_agent() {
    let corpus = small_corpus();
    let cfg = HarnessConfig { max_turns: 1, ..HarnessConfig::default() };
    let r = runner(&corpus, AgentSpec::AlwaysRetrieve, RetrieverSpec::Bm25, &cfg);
    assert!(corpus.qa_items.iter().all(|qa| r.run(qa).terminated_by == TerminatedBy::Budget));
}

/// Accepts one connection and answers every turn with a fixed answer.
fn echo_agent_server() -> (String, thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let handle = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut writer = stream.try_clone().unwrap();
        let mut seen = Vec::new();
        for line in BufReader::new(stream).lines() {
            let line = line.unwrap();
            let v: serde_json::Value = serde_json::from_str(&line).unwrap();
            let kind = v["type"].as_str().unwrap().to_owned();
            seen.push(kind.clone());
            if kind == "done" {
                break;
            }
            let text = "<think><analysis>a</analysis><plan>p</plan><summary>s</summary></think>\
                        <action><answer>fixed</answer></action>";
            writeln!(writer, "{}", serde_json::json!({"type": "turn", "text": text})).unwrap();
        }
        seen
    });
    (addr, handle)
}

#[test]
fn bridge_echo_server_terminates_at_turn_zero() {
    let corpus = small_corpus();
    let (addr, server) = echo_agent_server();
    let dir = tempfile::tempdir().unwrap();
    let opts = BridgeOptions {
        image_mode: ImageMode::Path,
        image_dir: dir.path().to_path_buf(),
        timeout: Duration::from_secs(10),
    };
    let factory = AgentFactory::new(AgentSpec::Bridge(Endpoint::Tcp(addr)), opts);
    let qa = &corpus.qa_items[0];
    let r =
        EpisodeRunner::new(&corpus, std::slice::from_ref(qa), &HarnessConfig::default(), factory, RetrieverSpec::Bm25)
            .unwrap();
    let t = r.run(qa);
    assert_eq!(t.terminated_by, TerminatedBy::Answer);
    assert_eq!(t.turns.len(), 1);
    assert_eq!(t.final_answer.as_deref(), Some("fixed"));
    drop(r);
    assert_eq!(server.join().unwrap(), vec!["reset", "done"]);
    assert!(dir.path().join(&qa.qa_id).join("overview_1.png").exists());
}

#[test]
fn bridge_child_process() {
    let corpus = small_corpus();
    let text =
        "<think><analysis>a</analysis><plan>p</plan><summary>s</summary></think><action><answer>x</answer></action>";
    let reply = serde_json::json!({"type": "turn", "text": text}).to_string();
    let cmd = format!("while read line; do echo '{reply}'; done");
    let opts =
        BridgeOptions { image_mode: ImageMode::B64, timeout: Duration::from_secs(10), ..BridgeOptions::default() };
    let factory = AgentFactory::new(AgentSpec::Bridge(Endpoint::Command(cmd)), opts);
    let r = runner_with(&corpus, factory);
    for qa in corpus.qa_items.iter().take(3) {
        let t = r.run(qa);
        assert_eq!(t.final_answer.as_deref(), Some("x"));
    }
}

fn runner_with(corpus: &Corpus, factory: AgentFactory) -> EpisodeRunner {
    EpisodeRunner::new(corpus, &corpus.qa_items, &HarnessConfig::default(), factory, RetrieverSpec::Bm25).unwrap()
}

#[test]
fn unreachable_bridge_records_error_and_continues() {
    let corpus = small_corpus();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    drop(listener);
    let opts = BridgeOptions { timeout: Duration::from_secs(2), ..BridgeOptions::default() };
    let r = runner_with(&corpus, AgentFactory::new(AgentSpec::Bridge(Endpoint::Tcp(addr)), opts));
    for qa in corpus.qa_items.iter().take(2) {
        let t = r.run(qa);
        assert_eq!(t.terminated_by, TerminatedBy::Error);
        assert!(t.error.is_some());
        assert_eq!(t.reward.unwrap().total, 0.0);
    }
}

#[test]
fn bridge_timeout_aborts_episode() {
    let corpus = small_corpus();
    let opts =
        BridgeOptions { timeout: Duration::from_millis(200), image_mode: ImageMode::B64, ..BridgeOptions::default() };
    let r = runner_with(&corpus, AgentFactory::new(AgentSpec::Bridge(Endpoint::Command("sleep 5".into())), opts));
    let t = r.run(&corpus.qa_items[0]);
    assert_eq!(t.terminated_by, TerminatedBy::Error);
    assert!(t.error.unwrap().contains("timed out"));
}

#[test]
fn base64_observation_round_trip_is_lossless() {
    let corpus = small_corpus();
    let qa = &corpus.qa_items[0];
    let doc = Arc::clone(corpus.document(&qa.doc_id).unwrap());
    let env = Environment::new(Arc::clone(&doc), EnvConfig::default()).unwrap();
    let (mut state, _) = env.reset(qa);
    let mut retriever = OracleRetriever::new(BTreeSet::new(), 12, true);
    let think = ThinkBlock { analysis: "a".into(), plan: Some("p".into()), relevant_pages: None, summary: "s".into() };
    let turn = Turn::new(0, think, Action::Fetch { indices: vec![4, 9] });
    let out = env.step(&mut state, Ok(&turn), None, &mut retriever).unwrap();
    let obs = env.augmented(&state, out.feedback.unwrap());
    assert!(matches!(obs.kind, ObservationKind::Augmented { .. }));
    let opts = BridgeOptions { image_mode: ImageMode::B64, ..BridgeOptions::default() };
    let agent = BridgeAgent::new(Endpoint::Tcp("unused".into()), opts, Default::default());
    let msg = agent.encode(&obs).unwrap();
    let line = serde_json::to_string(&msg).unwrap();
    let EnvMessage::Feedback { pages, working_memory, .. } = serde_json::from_str(&line).unwrap() else {
        panic!("expected feedback")
    };
    assert_eq!(working_memory, "s");
    assert_eq!(pages.len(), 2);
    for p in pages {
        let ImagePayload::B64(data) = p.payload else { panic!("expected b64") };
        assert_eq!(decode_b64_png(&data).unwrap(), doc.page(p.index).unwrap().raster().unwrap());
        assert_eq!(p.label, format!("Page {}:", p.index));
    }
}

#[test]
fn retriever_bridge_over_tcp() {
    let corpus = small_corpus();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let stream = stream.unwrap();
            thread::spawn(move || {
                let mut writer = stream.try_clone().unwrap();
                for line in BufReader::new(stream).lines() {
                    let v: serde_json::Value = serde_json::from_str(&line.unwrap()).unwrap();
                    assert_eq!(v["type"], "retrieve");
                    let excluded: Vec<u64> =
                        v["excluded"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
                    let pages: Vec<_> = (1..=12u64)
                        .rev()
                        .filter(|p| !excluded.contains(p))
                        .map(|p| serde_json::json!({"index": p, "score": p as f64}))
                        .collect();
                    writeln!(writer, "{}", serde_json::json!({"type": "ranked", "pages": pages})).unwrap();
                }
            });
        }
    });
    let spec: RetrieverSpec = format!("bridge:{addr}").parse().unwrap();
    let r = runner(&corpus, AgentSpec::AlwaysRetrieve, spec, &HarnessConfig::default());
    let t = r.run(&corpus.qa_items[0]);
    assert_eq!(t.turns[0].feedback.pages, vec![12, 11]);
    assert_eq!(t.turns[1].feedback.pages, vec![10, 9]);
}
