use medkit_core::corpus::{split_assignment, Split};
use medkit_core::generator::{Decoder, DecoderConfig};
use medkit_core::genmetrics::{
    bleu, chrf, embed_score, entropy, gleu, kl_divergence, report, ribes, ter, weighted_prf, wmd_similarity, Embeddings,
    ReportOptions, Smoothing,
};
use medkit_core::triage::dendrite_vectors;
use medkit_core::{rng, DialogueSample, Graph, Granularity, ParamStore, Tensor};
use proptest::prelude::*;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn words() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]).prop_map(String::from), 1..10)
}

fn unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

proptest! {
    #[test]
    fn split_is_a_partition(labels in prop::collection::vec(0u8..5, 1..60), f in 0.05f64..0.6, seed: u64) {
        let samples: Vec<DialogueSample> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let mut s = DialogueSample::new(format!("q{i}"));
                s.label_coarse = Some(format!("c{l}"));
                s
            })
            .collect();
        let a = split_assignment(&samples, f, seed, Granularity::Coarse).unwrap();
        prop_assert_eq!(a.len(), samples.len());
        for c in 0u8..5 {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            let test = members.iter().filter(|&&i| a[i] == Split::Test).count();
            // every class keeps at least one training sample
            prop_assert!(members.is_empty() || test < members.len());
            let exact = members.len() as f64 * f;
            if members.len() >= 2 {
                prop_assert!((test as f64 - exact).abs() < 1.0 + 1e-9, "class {} got {} for {}", c, test, exact);
            }
        }
        prop_assert_eq!(a, split_assignment(&samples, f, seed, Granularity::Coarse).unwrap());
    }

    #[test]
    fn ter_is_bounded_by_the_longer_side(c in words(), r in words()) {
        let t = ter(&c, &r).unwrap();
        prop_assert!(t >= 0.0);
        prop_assert!(t <= c.len().max(r.len()) as f64 / r.len() as f64 + 1e-12);
        prop_assert!(t <= (c.len() + r.len()) as f64 / r.len() as f64);
    }

    #[test]
    fn bounded_metrics_stay_in_the_unit_interval(c in words(), r in words()) {
        prop_assert!(unit(bleu(&c, &[r.as_slice()], 1, Smoothing::Off)));
        prop_assert!(unit(bleu(&c, &[r.as_slice()], 4, Smoothing::AddOne)));
        prop_assert!(unit(chrf(&c.concat(), &r.concat(), 6, 2.0)));
        prop_assert!(unit(gleu(&c, &r)));
        let p = weighted_prf(&c, &r);
        prop_assert!(unit(p.precision) && unit(p.recall) && unit(p.f1));
        prop_assert!(unit(ribes(&c, &r, 0.25, 0.10)));
        let emb = Embeddings::one_hot(c.iter().chain(&r).map(String::as_str));
        let w = wmd_similarity(&c, &r, &emb).unwrap();
        prop_assert!(w > 0.0 && w <= 1.0);
        let cv: Vec<Vec<f64>> = c.iter().map(|t| emb.get(t).to_vec()).collect();
        let rv: Vec<Vec<f64>> = r.iter().map(|t| emb.get(t).to_vec()).collect();
        let e = embed_score(&cv, &rv);
        prop_assert!(unit(e.precision) && unit(e.recall) && unit(e.f1));
    }

    #[test]
    fn identical_sentences_score_perfectly(c in words()) {
        prop_assert_eq!(bleu(&c, &[c.as_slice()], 1, Smoothing::Off), 1.0);
        prop_assert_eq!(ter(&c, &c).unwrap(), 0.0);
        prop_assert_eq!(weighted_prf(&c, &c).f1, 1.0);
        prop_assert_eq!(chrf(&c.concat(), &c.concat(), 6, 2.0), 1.0);
        prop_assert_eq!(kl_divergence(std::slice::from_ref(&c), std::slice::from_ref(&c)).unwrap(), 0.0);
    }

    #[test]
    fn report_ignores_line_order(lines in prop::collection::vec((words(), words()), 1..6), rot in 0usize..6) {
        let gen: Vec<String> = lines.iter().map(|(g, _)| g.join(" ")).collect();
        let refs: Vec<String> = lines.iter().map(|(_, r)| r.join(" ")).collect();
        let k = rot % gen.len();
        let (mut g2, mut r2) = (gen.clone(), refs.clone());
        g2.rotate_left(k);
        r2.rotate_left(k);
        let opts = ReportOptions::default();
        prop_assert_eq!(report(&gen, &refs, None, &opts).unwrap(), report(&g2, &r2, None, &opts).unwrap());
    }

    #[test]
    fn entropy_peaks_at_the_uniform_distribution(counts in prop::collection::vec(1usize..6, 1..8)) {
        let corpus: Vec<Vec<String>> = counts.iter().enumerate().map(|(i, &n)| vec![format!("w{i}"); n]).collect();
        let h = entropy(&corpus).unwrap();
        let max = (counts.len() as f64).log2();
        prop_assert!(h <= max + 1e-12);
        let uniform: Vec<Vec<String>> = (0..counts.len()).map(|i| vec![format!("w{i}"); 3]).collect();
        prop_assert!((entropy(&uniform).unwrap() - max).abs() < 1e-12);
    }
}

#[test]
fn kl_is_non_negative_on_ten_thousand_pairs() {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let vocab = ["a", "b", "c", "d", "e", "f"];
    let sentence = |r: &mut ChaCha8Rng| -> Vec<String> {
        (0..r.gen_range(1..12)).map(|_| vocab[r.gen_range(0..vocab.len())].to_string()).collect()
    };
    for _ in 0..10_000 {
        let g = vec![sentence(&mut r)];
        let q = vec![sentence(&mut r)];
        let kl = kl_divergence(&g, &q).unwrap();
        assert!(kl >= 0.0 && kl.is_finite(), "{g:?} vs {q:?}: {kl}");
    }
}

/// `W(M ⊙ M)` applied layer by layer with explicit loops.
fn dendrite_oracle(m: &[f64], weights: &[Vec<Vec<f64>>]) -> Vec<f64> {
    let mut d = m.to_vec();
    for w in weights {
        let cols = w[0].len();
        let mut next = vec![0.0; cols];
        for (j, out) in next.iter_mut().enumerate() {
            for (i, x) in d.iter().enumerate() {
                *out += x * x * w[i][j];
            }
        }
        d = next;
    }
    d
}

#[test]
fn dendrite_matches_the_direct_composition() {
    let mut r = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..1000 {
        let layers = r.gen_range(1..=3);
        let mut width = r.gen_range(1..=6);
        let m: Vec<f64> = (0..width).map(|_| r.gen_range(-1.0..1.0)).collect();
        let mut ws = Vec::new();
        for _ in 0..layers {
            let out = r.gen_range(1..=6);
            ws.push((0..width).map(|_| (0..out).map(|_| r.gen_range(-1.0..1.0)).collect::<Vec<f64>>()).collect::<Vec<_>>());
            width = out;
        }
        let tensors: Vec<Tensor> = ws
            .iter()
            .map(|w: &Vec<Vec<f64>>| Tensor::from_rows(w).unwrap())
            .collect();
        let got = dendrite_vectors(&Tensor::vector(m.clone()), &tensors).unwrap();
        let want = dendrite_oracle(&m, &ws);
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn decoder_outputs_ignore_future_tokens() {
    let mut store = ParamStore::new();
    let cfg = DecoderConfig {
        vocab_size: 20,
        hidden_dim: 16,
        num_layers: 2,
        num_heads: 2,
        ffn_dim: 32,
        context_window: 16,
        max_gen_len: 4,
    };
    let dec = Decoder::new(cfg, &mut store, &mut rng(3)).unwrap();
    let logits = |ids: &[u32]| {
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let l = dec.forward(&mut g, &b, ids).unwrap();
        g.value(l).clone()
    };
    let mut r = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let n = r.gen_range(2..=16);
        let ids: Vec<u32> = (0..n).map(|_| r.gen_range(5..20)).collect();
        let cut = r.gen_range(1..n);
        let mut edited = ids.clone();
        for id in &mut edited[cut..] {
            *id = r.gen_range(5..20);
        }
        let (a, b) = (logits(&ids), logits(&edited));
        for row in 0..cut {
            assert_eq!(a.row_slice(row), b.row_slice(row));
        }
    }
}
