//! Medical triage classification, knowledge-supplemented consultation
//! generation and generation-evaluation metrics, built on a small `f64`
//! autodiff engine.

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod generator;
pub mod genmetrics;
pub mod kgraph;
pub mod numerics;
pub mod prompt;
pub mod tokenizer;
pub mod training;
pub mod transformer;
pub mod triage;

pub use error::{Error, Result};
pub use corpus::{DialogueSample, Granularity};
pub use encoder::{Encoder, EncoderConfig};
pub use generator::{Decode, Decoder, DecoderConfig, QaFormat};
pub use genmetrics::MetricReport;
pub use kgraph::{KnowledgeGraph, KnowledgeTriple};
pub use numerics::{rng, Checkpoint, Graph, ParamStore, Rng, Tensor};
pub use prompt::{PromptClassifier, Verbalizer};
pub use tokenizer::{TokenSequence, Vocab};
pub use training::EpochLog;
pub use triage::{ClsMetrics, HeadConfig, TriageModel};
