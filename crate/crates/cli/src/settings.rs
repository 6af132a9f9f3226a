use std::fs;

use anyhow::{bail, Context, Result};
use docnav_core::{HarnessConfig, RewardWeights};

use crate::ConfigArgs;

/// Built-in defaults, then the config file, then flags.
pub fn resolve(args: &ConfigArgs) -> Result<HarnessConfig> {
    let cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => HarnessConfig::default(),
    };
    apply_flags(cfg, args)
}

/// Applies the flag layer on top of `cfg`.
pub fn apply_flags(mut cfg: HarnessConfig, args: &ConfigArgs) -> Result<HarnessConfig> {
    if let Some(v) = args.max_steps {
        cfg.max_turns = v;
    }
    if let Some(v) = args.group_capacity {
        cfg.group_capacity = v;
    }
    if let Some(v) = args.header_height {
        cfg.header_height = v;
    }
    if let Some(w) = &args.weights {
        cfg.weights = parse_weights(w)?;
    }
    if let Some(v) = args.answer_threshold {
        cfg.answer_threshold = v;
    }
    if let Some(v) = args.filter_anls_threshold {
        cfg.filter_anls_threshold = v;
    }
    if let Some(v) = args.clip_range {
        cfg.clip_range = v;
    }
    if let Some(v) = args.epsilon {
        cfg.epsilon = v;
    }
    if cfg.max_turns == 0 {
        bail!("the turn budget must be at least 1");
    }
    if cfg.group_capacity == 0 {
        bail!("the overview group capacity must be at least 1");
    }
    Ok(cfg)
}

fn parse_weights(s: &str) -> Result<RewardWeights> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("weights {s:?} must be three numbers `ans,evi,fmt`"))?;
    let [ans, evi, fmt] = parts[..] else { bail!("weights {s:?} must be three numbers `ans,evi,fmt`") };
    if [ans, evi, fmt].iter().any(|w| *w < 0.0) {
        bail!("weights must be non-negative");
    }
    Ok(RewardWeights { ans, evi, fmt })
}
