use criterion::{black_box, criterion_group, criterion_main, Criterion};
use medkit_core::genmetrics::{report, ribes, ter, wmd_distance, Embeddings, ReportOptions};
use medkit_core::tokenizer::Mode;
use medkit_core::{rng, Encoder, EncoderConfig, ParamStore, Tensor, Vocab};
use rand::Rng;

fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn matmul(c: &mut Criterion) {
    let (a, b) = (random(64, 64, 1), random(64, 256, 2));
    c.bench_function("matmul 64x64 * 64x256", |bench| bench.iter(|| black_box(&a).matmul(black_box(&b)).unwrap()));
}

fn encoder_forward(c: &mut Criterion) {
    let text = "最近总是头痛，晚上睡不好，白天也没有精神，需要去医院做检查吗";
    let vocab = Vocab::build(&[text], 1).unwrap();
    let mut store = ParamStore::new();
    let enc = Encoder::new(EncoderConfig::desk(vocab.len()), &mut store, &mut rng(3)).unwrap();
    let tokens = vocab.encode(text, enc.config.max_len, Mode::Encoder).unwrap();
    c.bench_function("encoder forward, desk size", |bench| bench.iter(|| enc.encode(&store, black_box(&tokens)).unwrap()));
}

fn metrics(c: &mut Criterion) {
    let gen: Vec<String> = (0..20).map(|i| format!("建议多休息多喝水第{i}天如果还发烧就去医院")).collect();
    let refs: Vec<String> = (0..20).map(|i| format!("注意休息多喝水{i}天后仍发烧请及时就医")).collect();
    let opts = ReportOptions::default();
    c.bench_function("metric report, 20 pairs", |bench| bench.iter(|| report(black_box(&gen), black_box(&refs), None, &opts).unwrap()));
}

fn single_metrics(c: &mut Criterion) {
    let g: Vec<String> = "建议多休息多喝水第三天如果还发烧就去医院".chars().map(String::from).collect();
    let r: Vec<String> = "注意休息多喝水三天后仍发烧请及时就医".chars().map(String::from).collect();
    let emb = Embeddings::one_hot(g.iter().chain(&r).map(String::as_str));
    c.bench_function("ter, 20 chars", |bench| bench.iter(|| ter(black_box(&g), black_box(&r)).unwrap()));
    c.bench_function("wmd, 20 chars", |bench| bench.iter(|| wmd_distance(black_box(&g), black_box(&r), &emb).unwrap()));
    c.bench_function("ribes, 20 chars", |bench| bench.iter(|| ribes(black_box(&g), black_box(&r), 0.25, 0.10)));
}

criterion_group!(benches, matmul, encoder_forward, metrics, single_metrics);
criterion_main!(benches);
