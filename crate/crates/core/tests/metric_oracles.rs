mod oracles;

use std::collections::HashMap;

use medkit_core::genmetrics::{
    bleu, chrf, gleu, ribes, self_bleu, ter, weighted_prf, wmd_distance, Embeddings, Smoothing,
};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ALPHABET: [&str; 5] = ["a", "b", "c", "d", "e"];

fn sentence(rng: &mut ChaCha8Rng, min: usize, max: usize) -> Vec<&'static str> {
    let n = rng.gen_range(min..=max);
    (0..n).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())]).collect()
}

fn pairs(seed: u64, count: usize) -> Vec<(Vec<&'static str>, Vec<&'static str>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (sentence(&mut rng, 1, 9), sentence(&mut rng, 1, 9))).collect()
}

fn assert_close(what: &str, got: f64, want: f64, c: &[&str], r: &[&str]) {
    assert!((got - want).abs() <= 1e-9, "{what} on {c:?} vs {r:?}: {got} != {want}");
}

#[test]
fn bleu1_matches_oracle() {
    for (c, r) in pairs(1, 200) {
        assert_close("bleu1", bleu(&c, &[r.as_slice()], 1, Smoothing::Off), oracles::bleu(&c, &[&r], 1), &c, &r);
    }
}

#[test]
fn bleu4_with_several_references_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let c = sentence(&mut rng, 4, 9);
        let refs: Vec<Vec<&str>> = (0..3).map(|_| sentence(&mut rng, 1, 9)).collect();
        let views: Vec<&[&str]> = refs.iter().map(Vec::as_slice).collect();
        assert_close("bleu4", bleu(&c, &views, 4, Smoothing::Off), oracles::bleu(&c, &views, 4), &c, &refs[0]);
    }
}

#[test]
fn chrf_matches_oracle() {
    for (c, r) in pairs(3, 200) {
        let (cs, rs) = (c.join(""), r.join(" "));
        assert_close("chrf", chrf(&cs, &rs, 6, 2.0), oracles::chrf(&cs, &rs, 6, 2.0), &c, &r);
    }
}

#[test]
fn gleu_matches_oracle() {
    for (c, r) in pairs(4, 200) {
        assert_close("gleu", gleu(&c, &r), oracles::gleu(&c, &r), &c, &r);
    }
}

#[test]
fn weighted_prf_matches_oracle() {
    for (c, r) in pairs(5, 200) {
        let got = weighted_prf(&c, &r);
        let (p, rec, f) = oracles::weighted_prf(&c, &r);
        assert_close("precision", got.precision, p, &c, &r);
        assert_close("recall", got.recall, rec, &c, &r);
        assert_close("f1", got.f1, f, &c, &r);
    }
}

#[test]
fn ter_matches_oracle() {
    for (c, r) in pairs(6, 200) {
        assert_close("ter", ter(&c, &r).unwrap(), oracles::ter(&c, &r), &c, &r);
    }
}

#[test]
fn ribes_matches_oracle() {
    for (c, r) in pairs(7, 200) {
        assert_close("ribes", ribes(&c, &r, 0.25, 0.10), oracles::ribes(&c, &r, 0.25, 0.10), &c, &r);
    }
}

#[test]
fn self_bleu_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let n = rng.gen_range(2..=5);
        let corpus: Vec<Vec<&str>> = (0..n).map(|_| sentence(&mut rng, 1, 7)).collect();
        for order in [2, 3] {
            let got = self_bleu(&corpus, order, Smoothing::Off).unwrap();
            assert_close("self-bleu", got, oracles::self_bleu(&corpus, order), &corpus[0], &corpus[1]);
        }
    }
}

#[test]
fn wmd_matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let table: HashMap<String, Vec<f64>> = ALPHABET
            .iter()
            .map(|t| (t.to_string(), (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect();
        let emb = Embeddings::new(table.clone(), vec![0.0; 3]).unwrap();
        let c = sentence(&mut rng, 1, 4);
        let r = sentence(&mut rng, 1, 4);
        let bag = |s: &[&'static str]| {
            let mut words: Vec<&str> = s.to_vec();
            words.sort_unstable();
            words.dedup();
            let mass: Vec<f64> = words.iter().map(|w| s.iter().filter(|x| *x == w).count() as f64 / s.len() as f64).collect();
            (words, mass)
        };
        let ((cw, cm), (rw, rm)) = (bag(&c), bag(&r));
        let cost: Vec<Vec<f64>> = cw
            .iter()
            .map(|a| {
                rw.iter()
                    .map(|b| table[*a].iter().zip(&table[*b]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
                    .collect()
            })
            .collect();
        let want = oracles::transport_by_enumeration(&cm, &rm, &cost);
        assert_close("wmd", wmd_distance(&c, &r, &emb).unwrap(), want, &c, &r);
    }
}
