//! Writes the raw synthetic corpus used by the README walkthrough:
//! `raw_tweets.txt`, `hashtag_map.tsv` and the pre-split `small/` suite.
//!
//! cargo run --example make_synthetic -- data/synthetic [seed]

use std::path::PathBuf;

use emo2vec_core::synthetic::{write_raw_corpus, SuiteConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data/synthetic".into()));
    let seed = args
        .next()
        .map_or(13, |s| s.parse().expect("seed must be an integer"));
    let config = SuiteConfig {
        seed,
        ..SuiteConfig::default()
    };
    if let Err(e) = write_raw_corpus(&dir, &config) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
    eprintln!("wrote synthetic corpus to {}", dir.display());
}
