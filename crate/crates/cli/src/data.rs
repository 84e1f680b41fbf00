//! Corpus commands: stats, clean, split and small-sample.

use medkit_core::corpus::{self, CleanOptions, Split};
use serde::Serialize;
use serde_json::json;

use crate::io::{print_json, read_samples, OutDir};
use crate::{CliError, RunConfig};

#[derive(Serialize)]
struct Removed {
    /// 1-based line of the sample in the input.
    line: usize,
    reason: &'static str,
}

pub fn stats(cfg: &RunConfig) -> Result<(), CliError> {
    let mut samples = read_samples(cfg.need(&cfg.input, "in")?)?;
    let mut assignment = vec![Split::Train; samples.len()];
    if let Some(test) = &cfg.test {
        let held_out = read_samples(test)?;
        assignment.extend(std::iter::repeat_n(Split::Test, held_out.len()));
        samples.extend(held_out);
    }
    let s = corpus::stats(&samples, &assignment, cfg.granularity)?;
    if let Some(out) = OutDir::optional(cfg)? {
        out.write_json("stats.json", &s)?;
    }
    print_json(&s);
    Ok(())
}

pub fn clean(cfg: &RunConfig) -> Result<(), CliError> {
    let input = cfg.need(&cfg.input, "in")?;
    let out = OutDir::create(cfg)?;
    let ingested = corpus::ingest(input)?;
    let total = ingested.samples.len();
    let opts = CleanOptions {
        require_answer: cfg.require_answer,
        min_chars: cfg.min_chars,
    };
    let (kept, removed) = corpus::clean(ingested.samples, opts);
    let removed: Vec<Removed> = removed
        .into_iter()
        .map(|r| Removed {
            line: r.index + 1,
            reason: r.reason,
        })
        .collect();
    out.write_jsonl("clean.jsonl", &kept)?;
    out.write_json("removed.json", &removed)?;
    out.write_json("rejects.json", &ingested.rejects)?;
    print_json(&json!({
        "read": total,
        "malformed": ingested.rejects.len(),
        "kept": kept.len(),
        "removed": removed.len(),
    }));
    Ok(())
}

pub fn split(cfg: &RunConfig) -> Result<(), CliError> {
    let samples = read_samples(cfg.need(&cfg.input, "in")?)?;
    let out = OutDir::create(cfg)?;
    let (train, test) = corpus::split(&samples, cfg.test_fraction, cfg.seed, cfg.granularity)?;
    out.write_jsonl("train.jsonl", &train)?;
    out.write_jsonl("test.jsonl", &test)?;
    print_json(&json!({
        "train": train.len(),
        "test": test.len(),
        "train_labels": corpus::label_counts(&train, cfg.granularity),
        "test_labels": corpus::label_counts(&test, cfg.granularity),
    }));
    Ok(())
}

pub fn small_sample(cfg: &RunConfig) -> Result<(), CliError> {
    let samples = read_samples(cfg.need(&cfg.input, "in")?)?;
    let out = OutDir::create(cfg)?;
    let threshold = cfg
        .small_sample_threshold
        .or_else(|| corpus::default_small_sample_threshold(&samples, cfg.granularity));
    let small = corpus::make_small_sample(&samples, threshold, cfg.granularity)?;
    out.write_jsonl("small.jsonl", &small.samples)?;
    out.write_json("categories.json", &small.categories)?;
    print_json(&json!({
        "threshold": threshold,
        "samples": small.samples.len(),
        "categories": small.categories,
    }));
    Ok(())
}
