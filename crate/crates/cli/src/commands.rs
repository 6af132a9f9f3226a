use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use docnav_core::agents::{AgentFactory, BridgeOptions, ImageMode};
use docnav_core::corpus::{load_corpus, save_corpus, synth_corpus};
use docnav_core::metrics::{aggregate, EpisodeRecord, Prediction, Report};
use docnav_core::overview::build_overview;
use docnav_core::protocol::{read_trajectories, TerminatedBy};
use docnav_core::trainpipe::{
    filter_trajectory, group_advantages, grpo_objective, FilterDecision, FilterReason, GroupRecord,
};
use docnav_core::{
    AgentSpec, AnswerKind, EpisodeRunner, HarnessConfig, RetrieverSpec, RewardParams, SynthSpec, Trajectory,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::settings::resolve;
use crate::{EvalArgs, FilterArgs, GrpoArgs, InspectArgs, OverviewArgs, RunArgs, SynthArgs};

/// Written next to a trajectory file so every run can be reproduced.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunManifest {
    agent: String,
    retriever: String,
    episodes: usize,
    config: HarnessConfig,
}

fn manifest_path(trajectories: &Path) -> PathBuf {
    let mut name = trajectories.file_name().unwrap_or_default().to_os_string();
    name.push(".config.json");
    trajectories.with_file_name(name)
}

fn read_manifest(trajectories: &Path) -> Option<RunManifest> {
    let text = fs::read_to_string(manifest_path(trajectories)).ok()?;
    serde_json::from_str(&text).ok()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open_lines(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

pub fn synth(a: SynthArgs) -> Result<ExitCode> {
    let spec = SynthSpec {
        n_docs: a.docs,
        pages_min: a.pages,
        pages_max: a.pages_max.unwrap_or(a.pages),
        facts_per_doc: a.facts,
        multi_hop_fraction: a.multi_hop,
        unanswerable_fraction: a.unanswerable,
        rng_seed: a.seed,
        page_width: a.width,
        page_height: a.height,
    };
    let corpus = synth_corpus(&spec)?;
    save_corpus(&corpus, &a.out)?;
    let pages: usize = corpus.documents.values().map(|d| d.num_pages()).sum();
    let unanswerable = corpus.qa_items.iter().filter(|q| q.answer_kind == AnswerKind::Unanswerable).count();
    let multi = corpus.qa_items.iter().filter(|q| q.evidence_pages.len() > 1).count();
    println!(
        "wrote {} documents, {pages} pages, {} QA items ({} single-hop, {multi} multi-hop, {unanswerable} unanswerable) to {}",
        corpus.documents.len(),
        corpus.qa_items.len(),
        corpus.qa_items.len() - multi - unanswerable,
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn overview(a: OverviewArgs) -> Result<ExitCode> {
    let cfg = resolve(&a.config)?;
    let corpus = load_corpus(&a.corpus)?;
    let doc = corpus.document(&a.doc).ok_or_else(|| anyhow!("no document {:?} in {}", a.doc, a.corpus.display()))?;
    let set = build_overview(doc, cfg.group_capacity, cfg.header_height)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for img in &set.images {
        let l = &img.layout;
        let path = a.out.join(format!("overview_{}.png", l.k));
        img.composite.save(&path).with_context(|| format!("writing {}", path.display()))?;
        println!(
            "{}: pages {}-{}, grid {}x{}, {}x{} px, {} tokens",
            path.display(),
            l.first_page,
            l.last_page,
            l.rows,
            l.cols,
            l.width,
            l.height,
            l.token_cost()
        );
    }
    let full = doc.total_token_cost();
    let compact = set.layout.token_cost();
    println!(
        "{} pages: full resolution {full} tokens, overview {compact} tokens, ratio {:.2}",
        doc.num_pages(),
        full as f64 / compact as f64
    );
    Ok(ExitCode::SUCCESS)
}

pub fn run(a: RunArgs) -> Result<ExitCode> {
    let cfg = resolve(&a.config)?;
    let agent: AgentSpec = a.agent.parse().map_err(|e: String| anyhow!(e))?;
    let retriever: RetrieverSpec = a.retriever.parse().map_err(|e: String| anyhow!(e))?;
    let image_mode: ImageMode = a.image_mode.parse().map_err(|e: String| anyhow!(e))?;
    if !a.timeout.is_finite() || a.timeout <= 0.0 {
        bail!("--timeout must be a positive number of seconds");
    }
    let corpus = load_corpus(&a.corpus)?;
    let mut items = corpus.qa_items.clone();
    if !a.qa_ids.is_empty() {
        for id in &a.qa_ids {
            if corpus.qa(id).is_none() {
                bail!("no QA item {id:?} in {}", a.corpus.display());
            }
        }
        items.retain(|q| a.qa_ids.contains(&q.qa_id));
    }
    if let Some(n) = a.limit {
        items.truncate(n);
    }
    let timeout = Duration::from_secs_f64(a.timeout);
    let bridge = BridgeOptions {
        image_mode,
        image_dir: a.image_dir.clone().unwrap_or_else(|| a.out.with_extension("images")),
        timeout,
    };
    let runner =
        EpisodeRunner::new(&corpus, &items, &cfg, AgentFactory::new(agent.clone(), bridge), retriever.clone())?
            .with_retriever_timeout(timeout);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(a.jobs.max(1)).build()?;
    let trajectories: Vec<Trajectory> = pool.install(|| items.par_iter().map(|qa| runner.run(qa)).collect());

    let mut out = create(&a.out)?;
    for t in &trajectories {
        writeln!(out, "{}", t.to_json_line())?;
    }
    out.flush()?;
    let manifest = RunManifest {
        agent: agent.to_string(),
        retriever: retriever.to_string(),
        episodes: trajectories.len(),
        config: cfg,
    };
    let mut side = create(&manifest_path(&a.out))?;
    writeln!(side, "{}", serde_json::to_string_pretty(&manifest)?)?;
    side.flush()?;

    let count = |by| trajectories.iter().filter(|t| t.terminated_by == by).count();
    let errors = count(TerminatedBy::Error);
    println!(
        "wrote {} trajectories to {} (answered {}, budget {}, errors {errors})",
        trajectories.len(),
        a.out.display(),
        count(TerminatedBy::Answer),
        count(TerminatedBy::Budget)
    );
    if errors > 0 {
        for t in trajectories.iter().filter(|t| t.terminated_by == TerminatedBy::Error) {
            eprintln!("{}: {}", t.qa_id, t.error.as_deref().unwrap_or("transport error"));
        }
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct ReportFile<'a> {
    config: &'a HarnessConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    run: Option<RunInfo>,
    report: &'a Report,
}

#[derive(Serialize)]
struct RunInfo {
    agent: String,
    retriever: String,
}

/// Config layering for commands that read a trajectory file: when no
/// `--config` is given, the run's recorded settings take the file's place.
fn resolve_for(args: &crate::ConfigArgs, trajectories: &Path) -> Result<(HarnessConfig, Option<RunManifest>)> {
    let manifest = read_manifest(trajectories);
    if args.config.is_some() {
        return Ok((resolve(args)?, manifest));
    }
    let mut cfg = resolve(args)?;
    if let Some(m) = &manifest {
        let flags = crate::ConfigArgs { config: None, ..args.clone() };
        cfg = crate::settings::apply_flags(m.config.clone(), &flags)?;
    }
    Ok((cfg, manifest))
}

pub fn eval(a: EvalArgs) -> Result<ExitCode> {
    let (cfg, manifest) = resolve_for(&a.config, &a.trajectories)?;
    let corpus = load_corpus(&a.corpus)?;
    let trajectories =
        read_trajectories(open_lines(&a.trajectories)?).map_err(|e| anyhow!("{}: {e}", a.trajectories.display()))?;
    if trajectories.is_empty() {
        bail!("{} contains no trajectories; nothing to evaluate", a.trajectories.display());
    }
    let params = RewardParams::from(&cfg);
    let mut records = Vec::with_capacity(trajectories.len());
    let mut predictions = Vec::with_capacity(trajectories.len());
    for t in trajectories {
        let qa = corpus.qa(&t.qa_id).ok_or_else(|| anyhow!("trajectory for unknown QA item {:?}", t.qa_id))?;
        let doc = corpus.document(&qa.doc_id).ok_or_else(|| anyhow!("unknown document {:?}", qa.doc_id))?;
        predictions.push(Prediction::from(&t));
        records.push(EpisodeRecord::new(t, qa.clone(), doc, cfg.group_capacity, cfg.header_height, &params));
    }
    let report = aggregate(&records, cfg.answer_threshold)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let file = ReportFile {
        config: &cfg,
        run: manifest.map(|m| RunInfo { agent: m.agent, retriever: m.retriever }),
        report: &report,
    };
    let mut out = create(&a.out.join("report.json"))?;
    writeln!(out, "{}", serde_json::to_string_pretty(&file)?)?;
    out.flush()?;
    let mut out = create(&a.out.join("predictions.jsonl"))?;
    for p in &predictions {
        writeln!(out, "{}", serde_json::to_string(p)?)?;
    }
    out.flush()?;
    println!(
        "{} episodes: answer score {:.4}, accuracy {:.4}, Page-F1 {:.4}, mean reward {:.4}, avg pages {:.2}, avg turns {:.2}, avg tokens {:.1}",
        report.episodes,
        report.answer_score,
        report.accuracy,
        report.page_f1,
        report.mean_reward.total,
        report.avg_pages,
        report.avg_turns,
        report.avg_tokens
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct FilterLine<'a> {
    qa_id: Option<&'a str>,
    #[serde(flatten)]
    decision: &'a FilterDecision,
    #[serde(skip_serializing_if = "Option::is_none")]
    trajectory: Option<&'a Trajectory>,
    #[serde(skip_serializing_if = "Option::is_none")]
    raw: Option<&'a str>,
}

pub fn filter(a: FilterArgs) -> Result<ExitCode> {
    let (cfg, _) = resolve_for(&a.config, &a.trajectories)?;
    let corpus = load_corpus(&a.corpus)?;
    let mut kept = create(&a.kept)?;
    let mut rejected = create(&a.rejected)?;
    let mut tally = std::collections::BTreeMap::<&'static str, usize>::new();
    for (n, line) in open_lines(&a.trajectories)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (decision, traj) = match serde_json::from_str::<Trajectory>(&line) {
            Ok(t) => {
                let qa = corpus
                    .qa(&t.qa_id)
                    .ok_or_else(|| anyhow!("line {}: trajectory for unknown QA item {:?}", n + 1, t.qa_id))?;
                (filter_trajectory(&t, qa, cfg.filter_anls_threshold), Some(t))
            }
            Err(e) => (unreadable(&e), None),
        };
        let out = FilterLine {
            qa_id: traj.as_ref().map(|t| t.qa_id.as_str()),
            decision: &decision,
            trajectory: traj.as_ref(),
            raw: traj.is_none().then_some(line.as_str()),
        };
        let sink = if decision.keep { &mut kept } else { &mut rejected };
        writeln!(sink, "{}", serde_json::to_string(&out)?)?;
        *tally.entry(reason_name(decision.reason)).or_default() += 1;
    }
    kept.flush()?;
    rejected.flush()?;
    let summary: Vec<String> = tally.iter().map(|(k, v)| format!("{k} {v}")).collect();
    println!("filter: {}", summary.join(", "));
    Ok(ExitCode::SUCCESS)
}

fn unreadable(e: &serde_json::Error) -> FilterDecision {
    FilterDecision {
        keep: false,
        reason: FilterReason::Format,
        scores: docnav_core::trainpipe::FilterScores { anls: 0.0, em: false, overlap: 0 },
        violations: vec![format!("unreadable trajectory line: {e}")],
    }
}

fn reason_name(r: FilterReason) -> &'static str {
    match r {
        FilterReason::Ok => "kept",
        FilterReason::Format => "format",
        FilterReason::Answer => "answer",
        FilterReason::Evidence => "evidence",
    }
}

#[derive(Serialize)]
struct GroupOutput {
    group_id: String,
    advantages: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    objective: Option<f64>,
}

pub fn grpo(a: GrpoArgs) -> Result<ExitCode> {
    let cfg = resolve(&a.config)?;
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    for (n, line) in open_lines(&a.groups)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let group: GroupRecord = serde_json::from_str(&line).with_context(|| format!("line {}", n + 1))?;
        if group.rewards.is_empty() {
            bail!("line {}: group {:?} has no rewards", n + 1, group.group_id);
        }
        let advantages = group_advantages(&group.rewards, cfg.epsilon);
        let objective = match &group.tokens {
            Some(_) => {
                let seqs = group.sequences().with_context(|| format!("line {}", n + 1))?;
                Some(grpo_objective(&seqs, &advantages, cfg.clip_range).with_context(|| format!("line {}", n + 1))?)
            }
            None => None,
        };
        let record = GroupOutput { group_id: group.group_id, advantages, objective };
        writeln!(out, "{}", serde_json::to_string(&record)?)?;
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

pub fn inspect(a: InspectArgs) -> Result<ExitCode> {
    let trajectories =
        read_trajectories(open_lines(&a.trajectories)?).map_err(|e| anyhow!("{}: {e}", a.trajectories.display()))?;
    let t = match &a.qa_id {
        Some(id) => trajectories.iter().find(|t| &t.qa_id == id).ok_or_else(|| anyhow!("no trajectory for {id:?}"))?,
        None => trajectories
            .get(a.index)
            .ok_or_else(|| anyhow!("index {} out of range ({} trajectories)", a.index, trajectories.len()))?,
    };
    print!("{}", render(t));
    Ok(ExitCode::SUCCESS)
}

fn render(t: &Trajectory) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = writeln!(s, "qa {}  doc {}  pages {}  budget {}", t.qa_id, t.doc_id, t.n_pages, t.budget);
    let by = match t.terminated_by {
        TerminatedBy::Answer => "answer",
        TerminatedBy::Budget => "budget",
        TerminatedBy::Error => "error",
    };
    let _ = writeln!(s, "terminated by {by}, final answer: {}", t.final_answer.as_deref().unwrap_or("-"));
    if let Some(e) = &t.error {
        let _ = writeln!(s, "error: {e}");
    }
    if let Some(r) = &t.reward {
        let _ = writeln!(s, "reward {:.4} (ans {:.4}, evi {:.4}, fmt {:.0})", r.total, r.ans, r.evi, r.fmt);
    }
    for turn in &t.turns {
        let _ = writeln!(s);
        let action = match &turn.action {
            Some(docnav_core::Action::Retrieval { query }) => format!("retrieval_page {query:?}"),
            Some(docnav_core::Action::Fetch { indices }) => format!("fetch_page {indices:?}"),
            Some(docnav_core::Action::Answer { text }) => format!("answer {text:?}"),
            None => "(unparsed)".to_owned(),
        };
        let _ = writeln!(s, "turn {}: {action}", turn.t);
        if let Some(rel) = &turn.relevant_pages {
            let _ = writeln!(s, "  relevant pages: {rel:?}");
        }
        if let Some(sum) = &turn.summary {
            let _ = writeln!(s, "  summary: {sum}");
        }
        if let Some(e) = &turn.format_error {
            let _ = writeln!(s, "  format error: {e}");
            let _ = writeln!(s, "  raw: {}", turn.raw.replace('\n', "\n       "));
        }
        if !turn.feedback.pages.is_empty() {
            let _ = writeln!(s, "  delivered: {:?}", turn.feedback.pages);
        }
        for r in &turn.feedback.reminders {
            let _ = writeln!(s, "  reminder: {r}");
        }
        if let Some(n) = &turn.feedback.format_notice {
            let _ = writeln!(s, "  notice: {n}");
        }
    }
    s
}
