//! Dialogue corpus ingestion, cleaning, statistics, splitting and
//! small-sample subsetting.
//!
//! The on-disk format is JSON Lines, one record per line:
//!
//! ```json
//! {"question": "...", "answer": "...", "label_coarse": "内科", "label_fine": "消化内科", "age": 31, "gender": "F"}
//! ```
//!
//! Every field except `question` may be `null`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    #[serde(rename = "M")]
    Male,
    #[serde(rename = "F")]
    Female,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSample {
    #[serde(default)]
    pub question: String,
    #[serde(default)]
    pub answer: Option<String>,
    #[serde(default)]
    pub label_coarse: Option<String>,
    #[serde(default)]
    pub label_fine: Option<String>,
    #[serde(default)]
    pub age: Option<u32>,
    #[serde(default)]
    pub gender: Option<Gender>,
}

impl DialogueSample {
    pub fn new(question: impl Into<String>) -> Self {
        DialogueSample {
            question: question.into(),
            answer: None,
            label_coarse: None,
            label_fine: None,
            age: None,
            gender: None,
        }
    }

    pub fn label(&self, granularity: Granularity) -> Option<&str> {
        match granularity {
            Granularity::Coarse => self.label_coarse.as_deref(),
            Granularity::Fine => self.label_fine.as_deref(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    #[default]
    Coarse,
    Fine,
}

impl std::str::FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coarse" => Ok(Granularity::Coarse),
            "fine" => Ok(Granularity::Fine),
            other => Err(Error::invalid(format!("unknown granularity {other:?} (coarse|fine)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct Ingested {
    pub samples: Vec<DialogueSample>,
    pub rejects: Vec<Reject>,
}

/// Parses JSONL text. Blank lines are skipped; malformed lines are reported
/// with their 1-based line number. More than half malformed is an error.
pub fn parse_jsonl(text: &str, origin: &Path) -> Result<Ingested> {
    let mut out = Ingested::default();
    let mut nonblank = 0usize;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        nonblank += 1;
        match serde_json::from_str::<DialogueSample>(line) {
            Ok(s) => out.samples.push(s),
            Err(e) => out.rejects.push(Reject {
                line: i + 1,
                reason: e.to_string(),
            }),
        }
    }
    if nonblank == 0 {
        log::warn!("{}: empty dataset", origin.display());
    }
    if out.rejects.len() * 2 > nonblank {
        return Err(Error::Format {
            path: origin.to_path_buf(),
            detail: format!("{} of {nonblank} lines are malformed", out.rejects.len()),
        });
    }
    Ok(out)
}

pub fn ingest(path: &Path) -> Result<Ingested> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, path)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug)]
pub struct CleanOptions {
    /// Drop samples without an answer (question-answer corpora).
    pub require_answer: bool,
    /// Fields shorter than this many characters are dropped; exactly this many is kept.
    pub min_chars: usize,
}

impl Default for CleanOptions {
    fn default() -> Self {
        CleanOptions {
            require_answer: true,
            min_chars: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Removal {
    pub index: usize,
    pub reason: &'static str,
}

/// Trims question and answer, then drops samples with a missing or too
/// short question or answer.
pub fn clean(samples: Vec<DialogueSample>, opts: CleanOptions) -> (Vec<DialogueSample>, Vec<Removal>) {
    let mut kept = Vec::with_capacity(samples.len());
    let mut removed = Vec::new();
    for (index, mut s) in samples.into_iter().enumerate() {
        s.question = s.question.trim().to_string();
        s.answer = s.answer.map(|a| a.trim().to_string()).filter(|a| !a.is_empty());
        let reason = if s.question.is_empty() {
            Some("missing question")
        } else if opts.require_answer && s.answer.is_none() {
            Some("missing answer")
        } else if s.question.chars().count() < opts.min_chars {
            Some("question too short")
        } else if s.answer.as_ref().is_some_and(|a| a.chars().count() < opts.min_chars) {
            Some("answer too short")
        } else {
            None
        };
        match reason {
            Some(reason) => removed.push(Removal { index, reason }),
            None => kept.push(s),
        }
    }
    (kept, removed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AgeBucket {
    pub bucket: String,
    pub count: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GenderCounts {
    pub male: usize,
    pub female: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetStats {
    pub total_count: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub avg_question_length: f64,
    /// Mean over samples that have an answer.
    pub avg_answer_length: Option<f64>,
    pub category_count: usize,
    pub categories: BTreeMap<String, usize>,
    /// Ten-year buckets, ascending.
    pub age_histogram: Vec<AgeBucket>,
    pub gender: GenderCounts,
}

pub fn stats(samples: &[DialogueSample], assignment: &[Split], granularity: Granularity) -> Result<DatasetStats> {
    if assignment.len() != samples.len() {
        return Err(Error::invalid(format!(
            "{} split assignments for {} samples",
            assignment.len(),
            samples.len()
        )));
    }
    let n = samples.len();
    let train_count = assignment.iter().filter(|&&s| s == Split::Train).count();
    let mean = |lens: Vec<usize>| {
        if lens.is_empty() {
            None
        } else {
            Some(lens.iter().sum::<usize>() as f64 / lens.len() as f64)
        }
    };
    let avg_question_length = mean(samples.iter().map(|s| s.question.chars().count()).collect()).unwrap_or(0.0);
    let avg_answer_length = mean(samples.iter().filter_map(|s| s.answer.as_ref()).map(|a| a.chars().count()).collect());
    let mut categories = BTreeMap::new();
    for l in samples.iter().filter_map(|s| s.label(granularity)) {
        *categories.entry(l.to_string()).or_default() += 1;
    }
    let mut ages: BTreeMap<u32, usize> = BTreeMap::new();
    for a in samples.iter().filter_map(|s| s.age) {
        *ages.entry(a / 10).or_default() += 1;
    }
    let age_histogram = ages
        .into_iter()
        .map(|(d, count)| AgeBucket {
            bucket: format!("{}-{}", d * 10, d * 10 + 9),
            count,
        })
        .collect();
    let mut gender = GenderCounts::default();
    for g in samples.iter().filter_map(|s| s.gender) {
        match g {
            Gender::Male => gender.male += 1,
            Gender::Female => gender.female += 1,
        }
    }
    Ok(DatasetStats {
        total_count: n,
        train_count,
        test_count: n - train_count,
        avg_question_length,
        avg_answer_length,
        category_count: categories.len(),
        categories,
        age_histogram,
        gender,
    })
}

/// Seeded split, stratified by label (unlabeled samples form one stratum).
///
/// The test set holds `round(f · n)` samples over strata with at least two
/// members; each stratum gets `floor(f · n_c)` or one more, by largest
/// remainder. Single-member strata stay in train. Both halves keep the
/// input order.
pub fn split(
    samples: &[DialogueSample],
    test_fraction: f64,
    seed: u64,
    granularity: Granularity,
) -> Result<(Vec<DialogueSample>, Vec<DialogueSample>)> {
    let assignment = split_assignment(samples, test_fraction, seed, granularity)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (s, a) in samples.iter().zip(assignment) {
        match a {
            Split::Train => train.push(s.clone()),
            Split::Test => test.push(s.clone()),
        }
    }
    Ok((train, test))
}

pub fn split_assignment(samples: &[DialogueSample], test_fraction: f64, seed: u64, granularity: Granularity) -> Result<Vec<Split>> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!("test fraction must be in (0, 1), got {test_fraction}")));
    }
    let mut strata: BTreeMap<Option<&str>, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        strata.entry(s.label(granularity)).or_default().push(i);
    }
    for (label, members) in &strata {
        if members.len() == 1 {
            log::warn!("class {:?} has a single sample; it stays in train", label.unwrap_or("<unlabeled>"));
        }
    }
    let eligible: Vec<(&Option<&str>, &Vec<usize>)> = strata.iter().filter(|(_, m)| m.len() >= 2).collect();
    let exact: Vec<f64> = eligible.iter().map(|(_, m)| m.len() as f64 * test_fraction).collect();
    let target = exact.iter().sum::<f64>().round() as usize;
    let mut quota: Vec<usize> = eligible
        .iter()
        .zip(&exact)
        .map(|((_, m), &e)| (e.floor() as usize).min(m.len() - 1))
        .collect();
    let mut order: Vec<usize> = (0..eligible.len()).collect();
    // stable sort keeps label order among equal remainders
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let mut assigned: usize = quota.iter().sum();
    while assigned < target {
        let before = assigned;
        for &k in &order {
            if assigned == target {
                break;
            }
            if quota[k] < eligible[k].1.len() - 1 {
                quota[k] += 1;
                assigned += 1;
            }
        }
        if assigned == before {
            break;
        }
    }

    let mut r = rng(seed);
    let mut out = vec![Split::Train; samples.len()];
    for ((_, members), &q) in eligible.iter().zip(&quota) {
        let mut shuffled = (*members).clone();
        shuffled.shuffle(&mut r);
        for &i in &shuffled[..q] {
            out[i] = Split::Test;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmallSample {
    pub samples: Vec<DialogueSample>,
    pub categories: Vec<String>,
}

/// Drops every category with more than `threshold` samples (`None` keeps
/// everything). Unlabeled samples are dropped.
pub fn make_small_sample(samples: &[DialogueSample], threshold: Option<usize>, granularity: Granularity) -> Result<SmallSample> {
    let counts = label_counts(samples, granularity);
    let categories: Vec<String> = counts
        .iter()
        .filter(|(_, &n)| threshold.is_none_or(|t| n <= t))
        .map(|(l, _)| l.clone())
        .collect();
    if categories.is_empty() {
        return Err(Error::invalid("every category exceeds the small-sample threshold"));
    }
    let kept = samples
        .iter()
        .filter(|s| s.label(granularity).is_some_and(|l| categories.binary_search_by(|c| c.as_str().cmp(l)).is_ok()))
        .cloned()
        .collect();
    Ok(SmallSample {
        samples: kept,
        categories,
    })
}

/// Twice the median per-class sample count.
pub fn default_small_sample_threshold(samples: &[DialogueSample], granularity: Granularity) -> Option<usize> {
    let mut counts: Vec<usize> = label_counts(samples, granularity).into_values().collect();
    if counts.is_empty() {
        return None;
    }
    counts.sort_unstable();
    let n = counts.len();
    Some(if n % 2 == 1 {
        2 * counts[n / 2]
    } else {
        counts[n / 2 - 1] + counts[n / 2]
    })
}

pub fn label_counts(samples: &[DialogueSample], granularity: Granularity) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for l in samples.iter().filter_map(|s| s.label(granularity)) {
        *counts.entry(l.to_string()).or_default() += 1;
    }
    counts
}
