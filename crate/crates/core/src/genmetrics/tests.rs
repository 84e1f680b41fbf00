use super::*;

fn w(s: &str) -> Vec<String> {
    tokenize(s, TokenMode::Whitespace)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

#[test]
fn bleu_examples() {
    let r = w("the cat");
    assert!(close(bleu(&w("the cat"), &[r.as_slice()], 1, Smoothing::Off), 1.0));
    assert!(close(bleu(&w("the the the"), &[r.as_slice()], 1, Smoothing::Off), 1.0 / 3.0));
    let r = w("a b c d");
    assert!(close(bleu(&w("a b"), &[r.as_slice()], 1, Smoothing::Off), (-1.0f64).exp()));
    assert_eq!(bleu(&Vec::<String>::new(), &[r.as_slice()], 1, Smoothing::Off), 0.0);
    // no bigram match: zero unless smoothed
    let r = w("a b");
    assert_eq!(bleu(&w("b a"), &[r.as_slice()], 2, Smoothing::Off), 0.0);
    assert!(close(bleu(&w("b a"), &[r.as_slice()], 2, Smoothing::AddOne), (1.0f64 * 0.5).sqrt()));
}

#[test]
fn chrf_examples() {
    assert!(close(chrf("头痛发热", "头痛发热", 6, 2.0), 1.0));
    assert_eq!(chrf("abc", "xyz", 6, 2.0), 0.0);
    assert!(close(chrf("ab", "abc", 6, 2.0), 35.0 / 79.0));
    assert_eq!(chrf("", "", 6, 2.0), 1.0);
    assert_eq!(chrf("", "a", 6, 2.0), 0.0);
}

#[test]
fn gleu_and_weighted_prf_examples() {
    assert!(close(gleu(&w("a b c"), &w("a b c")), 1.0));
    assert_eq!(gleu(&w("a b"), &w("c d")), 0.0);
    assert!(close(gleu(&w("a b c"), &w("a b d")), 0.5));
    let p = weighted_prf(&w("a b c"), &w("a b d"));
    assert!(close(p.precision, 7.0 / 18.0) && close(p.recall, 7.0 / 18.0) && close(p.f1, 7.0 / 18.0));
    let id = weighted_prf(&w("a b c"), &w("a b c"));
    assert_eq!((id.precision, id.recall, id.f1), (1.0, 1.0, 1.0));
    let none = weighted_prf(&w("a b"), &w("c d"));
    assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
}

#[test]
fn nist_examples() {
    let r = w("a b c");
    assert!(close(nist(&w("a b c"), &[r.as_slice()], 5), 3f64.log2()));
    assert_eq!(nist(&w("x y"), &[r.as_slice()], 5), 0.0);
    assert!(close(nist_brevity(2.0, 3.0), 0.5));
    assert_eq!(nist_brevity(4.0, 3.0), 1.0);
}

#[test]
fn ribes_examples() {
    assert!(close(ribes(&w("a b c d"), &w("a b c d"), 0.25, 0.10), 1.0));
    assert_eq!(ribes(&w("d c b a"), &w("a b c d"), 0.25, 0.10), 0.0);
    assert!(close(ribes(&w("x a"), &w("a y"), 0.25, 0.10), 0.5 * 0.5f64.powf(0.25)));
    assert_eq!(ribes(&w("x"), &w("y"), 0.25, 0.10), 0.0);
    assert_eq!(align(&w("a a b"), &w("b a a")), vec![1, 2, 0]);
}

#[test]
fn ter_examples() {
    assert_eq!(ter(&w("a b c"), &w("a b c")).unwrap(), 0.0);
    assert!(close(ter(&w("a b c d"), &w("a b c")).unwrap(), 1.0 / 3.0));
    assert_eq!(ter_trace(&w("c a b"), &w("a b c")), TerTrace { shifts: 1, edits: 0 });
    assert!(close(ter(&w("c a b"), &w("a b c")).unwrap(), 1.0 / 3.0));
    assert!(ter(&w("a"), &[] as &[String]).is_err());
    assert_eq!(apply_shift(&[1, 2, 3, 4], 0, 1, 3), vec![2, 3, 4, 1]);
    assert_eq!(apply_shift(&[1, 2, 3, 4], 2, 2, 0), vec![3, 4, 1, 2]);
}

#[test]
fn wmd_examples() {
    let emb = Embeddings::one_hot(["a", "b", "c"]);
    assert_eq!(wmd_similarity(&w("a b"), &w("b a"), &emb).unwrap(), 1.0);
    assert!(close(wmd_distance(&w("a"), &w("b"), &emb).unwrap(), 2f64.sqrt()));
    let table = [("u".to_string(), vec![0.0, 0.0]), ("v".to_string(), vec![3.0, 4.0])].into_iter().collect();
    let emb = Embeddings::new(table, vec![0.0, 0.0]).unwrap();
    assert!(close(wmd_distance(&w("u"), &w("v"), &emb).unwrap(), 5.0));
    // half the mass of "u u v" already sits on v
    assert!(close(wmd_distance(&w("u u v v"), &w("v"), &emb).unwrap(), 2.5));
    assert!(wmd_distance(&w("u"), &[] as &[String], &emb).is_err());
    let cost = vec![vec![1.0, 4.0], vec![2.0, 1.0]];
    assert!(close(min_cost_transport(&[2, 1], &[1, 2], &cost).unwrap(), 1.0 + 4.0 + 1.0));
}

#[test]
fn embed_score_examples() {
    let cand = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let refs = vec![vec![3.0, 4.0], vec![-1.0, 0.0]];
    let s = embed_score(&cand, &refs);
    assert!(close(s.precision, 0.7) && close(s.recall, 0.4) && close(s.f1, 0.56 / 1.1));
    let id = embed_score(&cand, &cand);
    assert_eq!((id.precision, id.recall, id.f1), (1.0, 1.0, 1.0));
    let opposite = embed_score(&[vec![1.0, 0.0]], &[vec![-1.0, 0.0]]);
    assert_eq!(opposite.f1, 0.0);
    assert_eq!(embed_score(&[], &cand).f1, 0.0);
}

#[test]
fn corpus_statistics() {
    let one = vec![w("a a a a")];
    assert_eq!(entropy(&one).unwrap(), 0.0);
    assert!(close(entropy(&[w("a b c d")]).unwrap(), 2.0));
    assert!(close(entropy(&[w("a a b c")]).unwrap(), 1.5));
    assert!(entropy::<String>(&[]).is_err());
    assert_eq!(lexical_diversity(&[w("a b c")]).unwrap(), 1.0);
    assert!(close(lexical_diversity(&[vec!["x".to_string(); 50]]).unwrap(), 0.02));
    assert_eq!(kl_divergence(&[w("a b")], &[w("a b")]).unwrap(), 0.0);
    assert!(close(kl_divergence(&[w("a a b c")], &[w("a b b d")]).unwrap(), 3f64.ln() / 8.0));
}

#[test]
fn self_bleu_examples() {
    let same = vec![w("a b c"), w("a b c"), w("a b c")];
    assert!(close(self_bleu(&same, 2, Smoothing::Off).unwrap(), 1.0));
    let disjoint = vec![w("a b"), w("c d"), w("e f")];
    assert_eq!(self_bleu(&disjoint, 2, Smoothing::Off).unwrap(), 0.0);
    assert!(self_bleu(&[w("a")], 2, Smoothing::Off).is_err());
}

#[test]
fn report_on_identical_files_and_under_permutation() {
    let lines: Vec<String> = ["头痛可以吃布洛芬", "多喝水注意休息", "建议去医院检查"].iter().map(|s| s.to_string()).collect();
    let r = report(&lines, &lines, None, &ReportOptions::default()).unwrap();
    assert_eq!(r.bleu1, 1.0);
    assert_eq!(r.ter, 0.0);
    assert_eq!(r.kl_divergence, 0.0);
    assert_eq!((r.weighted_f1, r.embed_f1, r.chrf), (1.0, 1.0, 1.0));
    assert_eq!(r.wmd_similarity, 1.0);

    let gen: Vec<String> = ["头痛吃药", "多喝热水", "去医院"].iter().map(|s| s.to_string()).collect();
    let a = report(&gen, &lines, None, &ReportOptions::default()).unwrap();
    let order = [2, 0, 1];
    let g2: Vec<String> = order.iter().map(|&i| gen[i].clone()).collect();
    let l2: Vec<String> = order.iter().map(|&i| lines[i].clone()).collect();
    assert_eq!(a, report(&g2, &l2, None, &ReportOptions::default()).unwrap());
    assert!(report(&gen[..2], &lines, None, &ReportOptions::default()).is_err());
    let single = report(&gen[..1], &lines[..1], None, &ReportOptions::default()).unwrap();
    assert_eq!(single.self_bleu2, None);
}
