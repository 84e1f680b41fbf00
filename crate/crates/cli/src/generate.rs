//! Knowledge injection, generator fine-tuning, evaluation and chat.

use std::io::BufRead;

use medkit_core::generator::{self, finetune_qa, perplexity, qa_prompt, GenerationRequest, LmTrainConfig};
use medkit_core::genmetrics::{report, ReportOptions};
use medkit_core::training::write_log_csv;
use medkit_core::{rng, Checkpoint, Decoder, DecoderConfig, KnowledgeGraph, ParamStore, QaFormat, Vocab};
use serde_json::json;

use crate::io::{load_graph, load_vocab_beside, print_json, read_samples, read_texts, OutDir};
use crate::{CliError, RunConfig};

fn decoder_config(cfg: &RunConfig, vocab_size: usize) -> DecoderConfig {
    DecoderConfig {
        vocab_size,
        hidden_dim: cfg.dec_hidden_dim,
        num_layers: cfg.dec_layers,
        num_heads: cfg.dec_heads,
        ffn_dim: cfg.dec_ffn_dim,
        context_window: cfg.context_window,
        max_gen_len: cfg.max_gen_len,
    }
}

fn qa_format(cfg: &RunConfig) -> QaFormat {
    QaFormat {
        prompt_max_len: cfg.prompt_max_len,
        supplement_chars: cfg.supplement_chars,
        use_supplement: cfg.use_supplement,
    }
}

fn triple_texts(graph: &KnowledgeGraph) -> Vec<String> {
    graph
        .triples()
        .iter()
        .map(|t| format!("{} {} {}", t.head, t.relation, t.tail))
        .collect()
}

fn load_generator(ckpt: &std::path::Path, store: &mut ParamStore) -> Result<(Decoder, QaFormat, Vocab), CliError> {
    let vocab = load_vocab_beside(ckpt)?;
    let (dec, fmt) = generator::from_checkpoint(&Checkpoint::load(ckpt)?, store)?;
    if dec.config.vocab_size != vocab.len() {
        return Err(CliError::Invalid(format!(
            "{}: checkpoint vocabulary has {} entries but vocab.txt has {}",
            ckpt.display(),
            dec.config.vocab_size,
            vocab.len()
        )));
    }
    Ok((dec, fmt, vocab))
}

pub fn pretrain_lm(cfg: &RunConfig) -> Result<(), CliError> {
    let texts = read_texts(cfg.need(&cfg.input, "in")?)?;
    let mut vocab_texts = texts.clone();
    for extra in &cfg.extra_texts {
        vocab_texts.extend(read_texts(extra)?);
    }
    let out = OutDir::create(cfg)?;
    let vocab = Vocab::build(&vocab_texts, cfg.min_freq)?;
    let mut store = ParamStore::new();
    let dec = Decoder::new(decoder_config(cfg, vocab.len()), &mut store, &mut rng(cfg.seed.wrapping_add(1)))?;
    let lc = LmTrainConfig {
        epochs: cfg.lm_epochs,
        batch_size: cfg.gen_batch_size,
        lr: cfg.lm_lr,
        seed: cfg.seed,
    };
    let log = generator::pretrain_lm(&dec, &mut store, &vocab, &texts, &lc)?;
    generator::to_checkpoint(&dec, &qa_format(cfg), &store).save(&out.path("lm.ckpt"))?;
    vocab.save(&out.path("vocab.txt"))?;
    write_log_csv(&out.path("train_log.csv"), &log)?;
    let summary = json!({
        "texts": texts.len(),
        "vocab_size": vocab.len(),
        "param_count": store.num_scalars(),
        "epochs": log.len(),
        "final_loss": log.last().map(|l| l.loss),
        "perplexity": perplexity(&dec, &store, &vocab, &texts)?,
    });
    out.write_json("summary.json", &summary)?;
    print_json(&summary);
    Ok(())
}

pub fn train_gen(cfg: &RunConfig) -> Result<(), CliError> {
    let train_path = cfg.need(&cfg.train, "train")?;
    let samples = read_samples(train_path)?;
    let pairs: Vec<(String, String)> = samples
        .iter()
        .filter_map(|s| s.answer.clone().map(|a| (s.question.clone(), a)))
        .collect();
    if pairs.is_empty() {
        return Err(CliError::Invalid(format!("{}: no question-answer pairs", train_path.display())));
    }
    let graph = load_graph(cfg.graph.as_deref())?;
    let fmt = qa_format(cfg);

    let mut store = ParamStore::new();
    let (dec, vocab) = if cfg.use_knowledge {
        let init = cfg.init.as_deref().ok_or_else(|| {
            CliError::Usage("missing --init (the pretrain-lm checkpoint); pass --no-knowledge to start from a fresh decoder".into())
        })?;
        let (dec, _, vocab) = load_generator(init, &mut store)?;
        (dec, vocab)
    } else {
        let mut texts: Vec<String> = pairs.iter().flat_map(|(q, a)| [q.clone(), a.clone()]).collect();
        texts.extend(triple_texts(&graph));
        let vocab = Vocab::build(&texts, cfg.min_freq)?;
        let dec = Decoder::new(decoder_config(cfg, vocab.len()), &mut store, &mut rng(cfg.seed.wrapping_add(1)))?;
        (dec, vocab)
    };
    let out = OutDir::create(cfg)?;

    let supplemented = pairs
        .iter()
        .map(|(q, _)| Ok(!qa_prompt(q, &vocab, &graph, &fmt)?.supplement.is_empty()))
        .collect::<Result<Vec<bool>, CliError>>()?
        .into_iter()
        .filter(|&s| s)
        .count();
    let lc = LmTrainConfig {
        epochs: cfg.gen_epochs,
        batch_size: cfg.gen_batch_size,
        lr: cfg.gen_lr,
        seed: cfg.seed,
    };
    let outcome = finetune_qa(&dec, &mut store, &vocab, &pairs, &graph, &fmt, &lc)?;
    generator::to_checkpoint(&dec, &fmt, &store).save(&out.path("gen.ckpt"))?;
    vocab.save(&out.path("vocab.txt"))?;
    write_log_csv(&out.path("train_log.csv"), &outcome.log)?;
    let summary = json!({
        "pairs": pairs.len(),
        "trained": outcome.trained,
        "skipped": outcome.skipped,
        "vocab_size": vocab.len(),
        "param_count": store.num_scalars(),
        "knowledge_injected": cfg.use_knowledge,
        "use_supplement": fmt.use_supplement,
        "supplemented_prompts": supplemented,
        "final_loss": outcome.log.last().map(|l| l.loss),
    });
    out.write_json("summary.json", &summary)?;
    print_json(&summary);
    Ok(())
}

pub fn eval_gen(cfg: &RunConfig) -> Result<(), CliError> {
    let ckpt = cfg.need(&cfg.ckpt, "ckpt")?;
    let test_path = cfg.need(&cfg.test, "test")?;
    let strategy = cfg.decode_strategy()?;
    let pairs: Vec<(String, String)> = read_samples(test_path)?
        .into_iter()
        .filter_map(|s| s.answer.map(|a| (s.question, a)))
        .collect();
    if pairs.is_empty() {
        return Err(CliError::Invalid(format!("{}: no question-answer pairs", test_path.display())));
    }
    let graph = load_graph(cfg.graph.as_deref())?;
    let mut store = ParamStore::new();
    let (dec, fmt, vocab) = load_generator(ckpt, &mut store)?;
    let out = OutDir::create(cfg)?;

    let mut generations = Vec::with_capacity(pairs.len());
    for (i, (q, _)) in pairs.iter().enumerate() {
        let req = GenerationRequest {
            question: q.clone(),
            strategy,
            seed: cfg.seed.wrapping_add(i as u64),
        };
        generations.push(generator::generate(&dec, &store, &vocab, &graph, &fmt, &req)?);
    }
    let generated: Vec<String> = generations.iter().map(|g| g.answer.clone()).collect();
    let reference: Vec<String> = pairs.iter().map(|(_, a)| a.clone()).collect();
    let opts = ReportOptions {
        tokens: cfg.tokens,
        smoothing: cfg.smoothing,
    };
    let metrics = json!({
        "samples": pairs.len(),
        "exact_matches": generated.iter().zip(&reference).filter(|(g, r)| g == r).count(),
        "reference_perplexity": perplexity(&dec, &store, &vocab, &reference)?,
        "report": report(&generated, &reference, None, &opts)?,
    });
    out.write_jsonl("generations.jsonl", &generations)?;
    out.write_json("metrics.json", &metrics)?;
    print_json(&metrics);
    Ok(())
}

pub fn chat(cfg: &RunConfig) -> Result<(), CliError> {
    let ckpt = cfg.need(&cfg.ckpt, "ckpt")?;
    let strategy = cfg.decode_strategy()?;
    let graph = load_graph(cfg.graph.as_deref())?;
    let mut store = ParamStore::new();
    let (dec, fmt, vocab) = load_generator(ckpt, &mut store)?;
    let out = OutDir::optional(cfg)?;

    let mut transcript = Vec::new();
    let stdin = std::io::stdin();
    for line in stdin.lock().lines() {
        let line = line.map_err(|e| CliError::Runtime(format!("stdin: {e}")))?;
        let question = line.trim();
        if question.is_empty() {
            continue;
        }
        let req = GenerationRequest {
            question: question.to_string(),
            strategy,
            seed: cfg.seed.wrapping_add(transcript.len() as u64),
        };
        let g = generator::generate(&dec, &store, &vocab, &graph, &fmt, &req)?;
        println!("answer: {}", g.answer);
        println!("supplement: {}", g.supplement);
        transcript.push(g);
    }
    if let Some(out) = out {
        out.write_jsonl("transcript.jsonl", &transcript)?;
    }
    Ok(())
}
