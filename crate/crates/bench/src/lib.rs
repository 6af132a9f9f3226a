//! Shared fixtures for the criterion benches.

use docnav_core::corpus::synth_corpus;
use docnav_core::trainpipe::TokenSeq;
use docnav_core::{Corpus, SynthSpec};

/// Small seeded corpus: `n_docs` documents of `pages` pages each.
pub fn corpus(n_docs: usize, pages: usize) -> Corpus {
    synth_corpus(&SynthSpec { n_docs, pages_min: pages, pages_max: pages, ..SynthSpec::default() })
        .expect("valid synth spec")
}

/// Deterministic token group for objective benches.
pub fn token_group(members: usize, len: usize) -> (Vec<TokenSeq>, Vec<f64>) {
    let seqs = (0..members)
        .map(|i| {
            let logp_new: Vec<f64> = (0..len).map(|t| -1.0 - ((i * 31 + t * 7) % 13) as f64 / 10.0).collect();
            let logp_old = logp_new.iter().enumerate().map(|(t, x)| x + ((t % 5) as f64 - 2.0) / 10.0).collect();
            let mask = (0..len).map(|t| u8::from(t % 4 != 0)).collect();
            TokenSeq { group: 0, logp_new, logp_old, mask }
        })
        .collect();
    let rewards: Vec<f64> = (0..members).map(|i| (i % 3) as f64 / 2.0).collect();
    (seqs, rewards)
}
