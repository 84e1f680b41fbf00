//! File plumbing shared by the commands.

use std::fs;
use std::path::{Path, PathBuf};

use medkit_core::corpus::{ingest, write_jsonl};
use medkit_core::kgraph::load_triples;
use medkit_core::{DialogueSample, KnowledgeGraph, ParamStore, Vocab};
use serde::Serialize;

use crate::{CliError, RunConfig};

/// The `--out` directory of a run. Nothing is written anywhere else.
pub struct OutDir {
    root: PathBuf,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

impl OutDir {
    /// Creates the directory and writes the resolved config snapshot.
    pub fn create(cfg: &RunConfig) -> Result<Self, CliError> {
        let root = cfg.need(&cfg.out, "out")?.to_path_buf();
        Self::at(root, cfg)
    }

    /// Like [`OutDir::create`], but `--out` is optional.
    pub fn optional(cfg: &RunConfig) -> Result<Option<Self>, CliError> {
        cfg.out.clone().map(|root| Self::at(root, cfg)).transpose()
    }

    fn at(root: PathBuf, cfg: &RunConfig) -> Result<Self, CliError> {
        fs::create_dir_all(&root).map_err(|e| io_err(&root, e))?;
        let out = OutDir { root };
        out.write("config.toml", cfg.to_toml())?;
        Ok(out)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        let p = self.path(name);
        fs::write(&p, contents).map_err(|e| io_err(&p, e))
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<(), CliError> {
        self.write(name, to_json(value))
    }

    pub fn write_jsonl<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<(), CliError> {
        Ok(write_jsonl(&self.path(name), rows)?)
    }
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

pub fn print_json<T: Serialize + ?Sized>(value: &T) {
    print!("{}", to_json(value));
}

pub fn read_samples(path: &Path) -> Result<Vec<DialogueSample>, CliError> {
    let data = ingest(path)?;
    if !data.rejects.is_empty() {
        log::warn!("{}: skipped {} malformed lines", path.display(), data.rejects.len());
    }
    Ok(data.samples)
}

/// Text passages of a file. JSON lines contribute their question and
/// answer, or their triple as `head relation tail。`; other lines are taken
/// verbatim. Blank lines are skipped.
pub fn read_texts(path: &Path) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let fields = serde_json::from_str::<serde_json::Value>(line).ok().filter(|v| v.is_object());
        match fields {
            Some(v) => {
                let get = |k: &str| v.get(k).and_then(|x| x.as_str()).map(str::to_string);
                match (get("head"), get("relation"), get("tail")) {
                    (Some(h), Some(r), Some(t)) => out.push(format!("{h} {r} {t}。")),
                    _ => out.extend(["question", "answer"].iter().filter_map(|k| get(k)).filter(|s| !s.trim().is_empty())),
                }
            }
            None => out.push(line.to_string()),
        }
    }
    Ok(out)
}

/// Lines to score: JSONL rows with an `answer` field give that field, any
/// other file gives its lines as they are.
pub fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let lines: Vec<&str> = text.lines().collect();
    let answers: Option<Vec<String>> = lines
        .iter()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l)
                .ok()
                .and_then(|v| v.get("answer").and_then(|a| a.as_str()).map(str::to_string))
        })
        .collect();
    Ok(match answers {
        Some(a) if !a.is_empty() => a,
        _ => lines.into_iter().map(str::to_string).collect(),
    })
}

/// A file stored next to a checkpoint.
pub fn sidecar(ckpt: &Path, name: &str) -> PathBuf {
    ckpt.with_file_name(name)
}

pub fn load_vocab_beside(ckpt: &Path) -> Result<Vocab, CliError> {
    Ok(Vocab::load(&sidecar(ckpt, "vocab.txt"))?)
}

pub fn load_graph(path: Option<&Path>) -> Result<KnowledgeGraph, CliError> {
    match path {
        Some(p) => {
            let loaded = load_triples(p)?;
            if loaded.duplicates > 0 {
                log::info!("{}: dropped {} duplicate triples", p.display(), loaded.duplicates);
            }
            Ok(loaded.graph)
        }
        None => Ok(KnowledgeGraph::new()),
    }
}

/// Number of scalars in parameters whose group is `group` (all when `None`).
pub fn count_params(store: &ParamStore, group: Option<&str>) -> usize {
    store
        .iter()
        .filter(|(_, p)| group.is_none_or(|g| p.group == g))
        .map(|(_, p)| p.value.len())
        .sum()
}
