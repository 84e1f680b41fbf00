//! Encoder pre-training and the two triage classifiers.

use std::collections::BTreeMap;
use std::path::Path;

use medkit_core::encoder::{self, PretrainConfig};
use medkit_core::prompt::{train_prompt as fit_prompt, PromptConfig, PromptTrainConfig};
use medkit_core::tokenizer::Mode;
use medkit_core::training::write_log_csv;
use medkit_core::triage::{evaluate, label_map, train_supervised, LabeledExample, TriageTrainConfig};
use medkit_core::{
    rng, Checkpoint, DialogueSample, Encoder, EncoderConfig, HeadConfig, ParamStore, PromptClassifier, TriageModel,
    Verbalizer, Vocab,
};
use serde::Serialize;
use serde_json::json;

use crate::io::{count_params, load_vocab_beside, print_json, read_samples, read_texts, sidecar, OutDir};
use crate::{CliError, RunConfig};

fn encoder_config(cfg: &RunConfig, vocab_size: usize) -> EncoderConfig {
    EncoderConfig {
        vocab_size,
        max_len: cfg.max_len,
        hidden_dim: cfg.hidden_dim,
        num_layers: cfg.num_layers,
        num_heads: cfg.num_heads,
        ffn_dim: cfg.ffn_dim,
        mask_rate: cfg.mask_rate,
    }
}

/// The `--encoder` checkpoint and its vocabulary, or a fresh encoder over a
/// vocabulary built from `texts`. Fresh weights are drawn from `seed + 1`.
fn encoder_for(cfg: &RunConfig, texts: &[String], store: &mut ParamStore) -> Result<(Encoder, Vocab), CliError> {
    match &cfg.encoder {
        Some(path) => {
            let vocab = load_vocab_beside(path)?;
            let enc = encoder::from_checkpoint(&Checkpoint::load(path)?, store)?;
            if enc.config.vocab_size != vocab.len() {
                return Err(CliError::Invalid(format!(
                    "{}: checkpoint vocabulary has {} entries but vocab.txt has {}",
                    path.display(),
                    enc.config.vocab_size,
                    vocab.len()
                )));
            }
            Ok((enc, vocab))
        }
        None => {
            let vocab = Vocab::build(texts, cfg.min_freq)?;
            let enc = Encoder::new(encoder_config(cfg, vocab.len()), store, &mut rng(cfg.seed.wrapping_add(1)))?;
            Ok((enc, vocab))
        }
    }
}

/// Question and label of every labelled sample; unlabelled ones are
/// skipped with a warning.
fn labelled(samples: &[DialogueSample], cfg: &RunConfig, origin: &Path) -> Result<Vec<(String, String)>, CliError> {
    let out: Vec<(String, String)> = samples
        .iter()
        .filter_map(|s| s.label(cfg.granularity).map(|l| (s.question.clone(), l.to_string())))
        .collect();
    if out.len() < samples.len() {
        log::warn!("{}: skipped {} samples without a label", origin.display(), samples.len() - out.len());
    }
    if out.is_empty() {
        return Err(CliError::Invalid(format!("{}: no labelled samples", origin.display())));
    }
    Ok(out)
}

fn dialogue_texts(samples: &[DialogueSample]) -> Vec<String> {
    samples
        .iter()
        .flat_map(|s| std::iter::once(s.question.clone()).chain(s.answer.clone()))
        .collect()
}

pub fn pretrain_encoder(cfg: &RunConfig) -> Result<(), CliError> {
    let texts = read_texts(cfg.need(&cfg.input, "in")?)?;
    let out = OutDir::create(cfg)?;
    let mut store = ParamStore::new();
    let vocab = Vocab::build(&texts, cfg.min_freq)?;
    let enc = Encoder::new(encoder_config(cfg, vocab.len()), &mut store, &mut rng(cfg.seed.wrapping_add(1)))?;
    let pc = PretrainConfig {
        epochs: cfg.pretrain_epochs,
        batch_size: cfg.pretrain_batch_size,
        lr: cfg.pretrain_lr,
        seed: cfg.seed,
    };
    let log = encoder::pretrain(&enc, &mut store, &vocab, &texts, &pc)?;
    encoder::to_checkpoint(&enc, &store).save(&out.path("encoder.ckpt"))?;
    vocab.save(&out.path("vocab.txt"))?;
    write_log_csv(&out.path("train_log.csv"), &log)?;
    let summary = json!({
        "texts": texts.len(),
        "vocab_size": vocab.len(),
        "param_count": store.num_scalars(),
        "epochs": log.len(),
        "final_loss": log.last().map(|l| l.loss),
    });
    out.write_json("summary.json", &summary)?;
    print_json(&summary);
    Ok(())
}

pub fn train_triage(cfg: &RunConfig) -> Result<(), CliError> {
    let train_path = cfg.need(&cfg.train, "train")?;
    let samples = read_samples(train_path)?;
    let data = labelled(&samples, cfg, train_path)?;
    let out = OutDir::create(cfg)?;

    let mut store = ParamStore::new();
    let (enc, vocab) = encoder_for(cfg, &dialogue_texts(&samples), &mut store)?;
    let labels = label_map(data.iter().map(|(_, l)| l.as_str()));
    let head = HeadConfig {
        hidden_dim: enc.config.hidden_dim,
        num_labels: labels.len(),
        num_lstm_layers: cfg.lstm_layers,
        num_dd_layers: cfg.dd_layers,
        use_bilstm: cfg.use_bilstm,
        use_cls: cfg.use_cls,
        use_dd: cfg.use_dd,
    };
    let max_len = enc.config.max_len;
    let model = TriageModel::new(enc, head, &mut store, &mut rng(cfg.seed.wrapping_add(2)))?;
    let examples = data
        .iter()
        .map(|(q, l)| {
            Ok(LabeledExample {
                tokens: vocab.encode(q, max_len, Mode::Encoder)?,
                label: labels[l],
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let tc = TriageTrainConfig {
        epochs: cfg.triage_epochs,
        batch_size: cfg.triage_batch_size,
        encoder_lr: cfg.encoder_lr,
        head_lr: cfg.head_lr,
        freeze_encoder: cfg.freeze_encoder,
        seed: cfg.seed,
        stop_at_perfect: false,
    };
    let outcome = train_supervised(&model, &mut store, &examples, &tc)?;

    let ckpt = out.path("triage.ckpt");
    model.to_checkpoint(&store).save(&ckpt)?;
    vocab.save(&out.path("vocab.txt"))?;
    let names: Vec<&String> = labels.keys().collect();
    out.write_json("labels.json", &names)?;
    write_log_csv(&out.path("train_log.csv"), &outcome.log)?;
    out.write_json("metrics.json", &outcome.metrics)?;
    out.write_json("optimizer.json", &outcome.optimizer)?;
    let summary = json!({
        "train_samples": examples.len(),
        "labels": names,
        "param_count": store.num_scalars(),
        "head_param_count": count_params(&store, Some(medkit_core::triage::GROUP)),
        "fused_dim": head.fused_dim(),
        "use_bilstm": head.use_bilstm,
        "use_cls": head.use_cls,
        "use_dd": head.use_dd,
        "final_loss": outcome.log.last().map(|l| l.loss),
        "final_train_accuracy": outcome.metrics.last().map(|m| m.train_accuracy),
    });
    out.write_json("summary.json", &summary)?;
    print_json(&summary);
    Ok(())
}

#[derive(Serialize)]
struct Prediction<'a> {
    question: &'a str,
    gold: &'a str,
    predicted: String,
}

/// Metrics over gold and predicted label names, with label ids following
/// `names` and unseen gold labels appended after them.
fn score(names: &[String], rows: &[Prediction<'_>]) -> Result<serde_json::Value, CliError> {
    let mut ids: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut labels: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut gold = Vec::with_capacity(rows.len());
    let mut pred = Vec::with_capacity(rows.len());
    for r in rows {
        for (l, v) in [(r.gold, &mut gold), (r.predicted.as_str(), &mut pred)] {
            let next = ids.len();
            let i = *ids.entry(l).or_insert_with(|| {
                labels.push(l);
                next
            });
            v.push(i);
        }
    }
    let m = evaluate(&pred, &gold)?;
    Ok(json!({
        "samples": rows.len(),
        "labels": labels,
        "accuracy": m.accuracy,
        "macro_precision": m.macro_precision,
        "macro_recall": m.macro_recall,
        "macro_f1": m.macro_f1,
        "confusion": m.confusion,
    }))
}

fn write_eval(cfg: &RunConfig, names: &[String], rows: &[Prediction<'_>]) -> Result<(), CliError> {
    let out = OutDir::create(cfg)?;
    let metrics = score(names, rows)?;
    out.write_jsonl("predictions.jsonl", rows)?;
    out.write_json("metrics.json", &metrics)?;
    print_json(&metrics);
    Ok(())
}

fn read_names(ckpt: &Path, file: &str) -> Result<Vec<String>, CliError> {
    let p = sidecar(ckpt, file);
    let text = std::fs::read_to_string(&p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", p.display())))
}

pub fn eval_triage(cfg: &RunConfig) -> Result<(), CliError> {
    let ckpt = cfg.need(&cfg.ckpt, "ckpt")?;
    let test_path = cfg.need(&cfg.test, "test")?;
    let data = labelled(&read_samples(test_path)?, cfg, test_path)?;
    let vocab = load_vocab_beside(ckpt)?;
    let names = read_names(ckpt, "labels.json")?;
    let mut store = ParamStore::new();
    let model = TriageModel::from_checkpoint(&Checkpoint::load(ckpt)?, &mut store)?;
    if model.head.config.num_labels != names.len() {
        return Err(CliError::Invalid(format!("labels.json lists {} labels, the checkpoint has {}", names.len(), model.head.config.num_labels)));
    }
    let max_len = model.encoder.config.max_len;
    let rows = data
        .iter()
        .map(|(q, l)| {
            let p = model.predict(&store, &vocab.encode(q, max_len, Mode::Encoder)?)?;
            Ok(Prediction {
                question: q,
                gold: l,
                predicted: names[p].clone(),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    write_eval(cfg, &names, &rows)
}

fn read_surfaces(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

pub fn train_prompt(cfg: &RunConfig) -> Result<(), CliError> {
    let train_path = cfg.need(&cfg.train, "train")?;
    let verbalizer_path = cfg.need(&cfg.verbalizer, "verbalizer")?;
    let samples = read_samples(train_path)?;
    let data = labelled(&samples, cfg, train_path)?;
    let surfaces = read_surfaces(verbalizer_path)?;
    let out = OutDir::create(cfg)?;

    let mut texts = dialogue_texts(&samples);
    texts.push(cfg.template.clone());
    texts.extend(surfaces.values().cloned());
    let mut store = ParamStore::new();
    let (enc, vocab) = encoder_for(cfg, &texts, &mut store)?;
    let verbalizer = Verbalizer::new(&surfaces, &vocab)?;
    let pcfg = PromptConfig {
        template: cfg.template.clone(),
        max_len: enc.config.max_len,
        include_pad: cfg.include_pad,
    };
    let clf = PromptClassifier::new(enc, verbalizer, &pcfg)?;
    let tc = PromptTrainConfig {
        epochs: cfg.prompt_epochs,
        batch_size: cfg.prompt_batch_size,
        lr: cfg.prompt_lr,
        seed: cfg.seed,
    };
    let log = fit_prompt(&clf, &mut store, &vocab, &data, &tc)?;

    encoder::to_checkpoint(&clf.encoder, &store).save(&out.path("prompt.ckpt"))?;
    vocab.save(&out.path("vocab.txt"))?;
    out.write_json("verbalizer.json", &surfaces)?;
    out.write_json("prompt.json", &pcfg)?;
    write_log_csv(&out.path("train_log.csv"), &log)?;
    let correct = data
        .iter()
        .map(|(q, l)| Ok(clf.predict(&store, q, &vocab)? == *l))
        .collect::<Result<Vec<bool>, CliError>>()?
        .into_iter()
        .filter(|&ok| ok)
        .count();
    let summary = json!({
        "train_samples": data.len(),
        "labels": surfaces.keys().collect::<Vec<_>>(),
        "mask_slots": clf.verbalizer.slots(),
        "param_count": store.num_scalars(),
        "final_loss": log.last().map(|l| l.loss),
        "final_train_accuracy": correct as f64 / data.len() as f64,
    });
    out.write_json("summary.json", &summary)?;
    print_json(&summary);
    Ok(())
}

pub fn eval_prompt(cfg: &RunConfig) -> Result<(), CliError> {
    let ckpt = cfg.need(&cfg.ckpt, "ckpt")?;
    let test_path = cfg.need(&cfg.test, "test")?;
    let data = labelled(&read_samples(test_path)?, cfg, test_path)?;
    let vocab = load_vocab_beside(ckpt)?;
    let surfaces = read_surfaces(&sidecar(ckpt, "verbalizer.json"))?;
    let pcfg: PromptConfig = {
        let p = sidecar(ckpt, "prompt.json");
        let text = std::fs::read_to_string(&p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", p.display())))?
    };
    let mut store = ParamStore::new();
    let enc = encoder::from_checkpoint(&Checkpoint::load(ckpt)?, &mut store)?;
    let clf = PromptClassifier::new(enc, Verbalizer::new(&surfaces, &vocab)?, &pcfg)?;
    let rows = data
        .iter()
        .map(|(q, l)| {
            Ok(Prediction {
                question: q,
                gold: l,
                predicted: clf.predict(&store, q, &vocab)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let names: Vec<String> = surfaces.into_keys().collect();
    write_eval(cfg, &names, &rows)
}
