//! Direct-from-definition reference implementations of the generation
//! metrics. They favour obviousness over speed and share no code with the
//! library.

#![allow(dead_code)]

/// All contiguous n-grams as a list (duplicates kept).
pub fn grams(tokens: &[&str], n: usize) -> Vec<Vec<String>> {
    if n == 0 || tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n)
        .map(|i| tokens[i..i + n].iter().map(|s| s.to_string()).collect())
        .collect()
}

fn count(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

fn distinct(list: &[Vec<String>]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    for g in list {
        if !out.contains(g) {
            out.push(g.clone());
        }
    }
    out
}

/// Matches between two n-gram lists, each n-gram counted at most as often
/// as it appears on the other side.
fn matched(cand: &[Vec<String>], reference: &[Vec<String>]) -> usize {
    distinct(cand).iter().map(|g| count(cand, g).min(count(reference, g))).sum()
}

pub fn bleu(cand: &[&str], refs: &[&[&str]], max_n: usize) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let mut product = 1.0;
    for n in 1..=max_n {
        let c = grams(cand, n);
        if c.is_empty() {
            return 0.0;
        }
        let ref_lists: Vec<Vec<Vec<String>>> = refs.iter().map(|r| grams(r, n)).collect();
        let mut clipped = 0;
        for g in distinct(&c) {
            let best = ref_lists.iter().map(|l| count(l, &g)).max().unwrap_or(0);
            clipped += count(&c, &g).min(best);
        }
        product *= clipped as f64 / c.len() as f64;
    }
    if product == 0.0 {
        return 0.0;
    }
    // closest reference length, shorter on ties
    let mut r = refs[0].len();
    for x in refs {
        let (d_new, d_old) = ((x.len() as i64 - cand.len() as i64).abs(), (r as i64 - cand.len() as i64).abs());
        if d_new < d_old || (d_new == d_old && x.len() < r) {
            r = x.len();
        }
    }
    let c = cand.len() as f64;
    let bp = if (cand.len()) < r { (1.0 - r as f64 / c).exp() } else { 1.0 };
    bp * product.powf(1.0 / max_n as f64)
}

pub fn chrf(cand: &str, reference: &str, max_n: usize, beta: f64) -> f64 {
    let cs: Vec<String> = cand.chars().filter(|c| !c.is_whitespace()).map(|c| c.to_string()).collect();
    let rs: Vec<String> = reference.chars().filter(|c| !c.is_whitespace()).map(|c| c.to_string()).collect();
    if cs.is_empty() && rs.is_empty() {
        return 1.0;
    }
    if cs.is_empty() || rs.is_empty() {
        return 0.0;
    }
    let cv: Vec<&str> = cs.iter().map(String::as_str).collect();
    let rv: Vec<&str> = rs.iter().map(String::as_str).collect();
    let (p, r) = per_order_average(&cv, &rv, max_n);
    if p == 0.0 && r == 0.0 {
        return 0.0;
    }
    (1.0 + beta * beta) * p * r / (beta * beta * p + r)
}

/// Precision averaged over orders with candidate n-grams, recall over
/// orders with reference n-grams.
fn per_order_average(c: &[&str], r: &[&str], max_n: usize) -> (f64, f64) {
    let mut precisions = Vec::new();
    let mut recalls = Vec::new();
    for n in 1..=max_n {
        let (cg, rg) = (grams(c, n), grams(r, n));
        let m = matched(&cg, &rg) as f64;
        if !cg.is_empty() {
            precisions.push(m / cg.len() as f64);
        }
        if !rg.is_empty() {
            recalls.push(m / rg.len() as f64);
        }
    }
    let avg = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    (avg(&precisions), avg(&recalls))
}

pub fn gleu(cand: &[&str], reference: &[&str]) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let (mut m, mut c, mut r) = (0, 0, 0);
    for n in 1..=4 {
        let (cg, rg) = (grams(cand, n), grams(reference, n));
        m += matched(&cg, &rg);
        c += cg.len();
        r += rg.len();
    }
    (m as f64 / c as f64).min(m as f64 / r as f64)
}

pub fn weighted_prf(cand: &[&str], reference: &[&str]) -> (f64, f64, f64) {
    let (p, r) = per_order_average(cand, reference, 4);
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// The k-th occurrence of a word in the candidate pairs with the k-th
/// occurrence of the same word in the reference.
pub fn ribes(cand: &[&str], reference: &[&str], alpha: f64, beta: f64) -> f64 {
    let mut ranks = Vec::new();
    for (i, w) in cand.iter().enumerate() {
        let k = cand[..i].iter().filter(|x| *x == w).count();
        let positions: Vec<usize> = reference.iter().enumerate().filter(|(_, x)| *x == w).map(|(j, _)| j).collect();
        if k < positions.len() {
            ranks.push(positions[k]);
        }
    }
    if ranks.is_empty() {
        return 0.0;
    }
    let n = ranks.len();
    let nkt = if n == 1 {
        0.5
    } else {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i < j {
                    s += (ranks[j] as f64 - ranks[i] as f64).signum();
                }
            }
        }
        (s / (n * (n - 1) / 2) as f64 + 1.0) / 2.0
    };
    let p1 = n as f64 / cand.len() as f64;
    let bp = if cand.len() < reference.len() {
        (1.0 - reference.len() as f64 / cand.len() as f64).exp()
    } else {
        1.0
    };
    nkt * p1.powf(alpha) * bp.powf(beta)
}

/// Levenshtein distance by memoized recursion.
pub fn levenshtein(a: &[&str], b: &[&str]) -> usize {
    fn go(a: &[&str], b: &[&str], i: usize, j: usize, memo: &mut Vec<Vec<Option<usize>>>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if a[i] == b[j] {
            go(a, b, i + 1, j + 1, memo)
        } else {
            1 + go(a, b, i + 1, j + 1, memo).min(go(a, b, i + 1, j, memo)).min(go(a, b, i, j + 1, memo))
        };
        memo[i][j] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len() + 1]; a.len() + 1];
    go(a, b, 0, 0, &mut memo)
}

/// Greedy block-shift search: each round tries every move of a span of at
/// most 10 words to every other slot and keeps the first move (by start,
/// length, destination) reaching the lowest edit distance, if it beats
/// the current one.
pub fn ter(cand: &[&str], reference: &[&str]) -> f64 {
    let mut cur: Vec<&str> = cand.to_vec();
    let mut d = levenshtein(&cur, reference);
    let mut shifts = 0;
    loop {
        let mut best: Option<(usize, Vec<&str>)> = None;
        for s in 0..cur.len() {
            for l in 1..=10.min(cur.len() - s) {
                let span: Vec<&str> = cur[s..s + l].to_vec();
                let rest: Vec<&str> = cur[..s].iter().chain(cur[s + l..].iter()).copied().collect();
                for t in 0..=rest.len() {
                    if t == s {
                        continue;
                    }
                    let mut moved = rest[..t].to_vec();
                    moved.extend(&span);
                    moved.extend(&rest[t..]);
                    let nd = levenshtein(&moved, reference);
                    let bar = best.as_ref().map(|b| b.0).unwrap_or(d);
                    if nd < bar {
                        best = Some((nd, moved));
                    }
                }
            }
        }
        match best {
            Some((nd, moved)) if d > 0 => {
                d = nd;
                cur = moved;
                shifts += 1;
            }
            _ => break,
        }
    }
    (shifts + d) as f64 / reference.len() as f64
}

pub fn self_bleu(corpus: &[Vec<&str>], n: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..corpus.len() {
        let others: Vec<&[&str]> = (0..corpus.len()).filter(|&j| j != i).map(|j| corpus[j].as_slice()).collect();
        total += bleu(&corpus[i], &others, n);
    }
    total / corpus.len() as f64
}

/// Minimum transport cost by enumerating every spanning-tree basis of the
/// `m × n` transportation polytope and keeping the cheapest feasible one.
pub fn transport_by_enumeration(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> f64 {
    let (m, n) = (supply.len(), demand.len());
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let k = m + n - 1;
    let mut best = f64::INFINITY;
    let mut chosen = Vec::new();
    fn subsets(cells: &[(usize, usize)], k: usize, start: usize, chosen: &mut Vec<(usize, usize)>, visit: &mut dyn FnMut(&[(usize, usize)])) {
        if chosen.len() == k {
            visit(chosen);
            return;
        }
        for i in start..cells.len() {
            chosen.push(cells[i]);
            subsets(cells, k, i + 1, chosen, visit);
            chosen.pop();
        }
    }
    let mut visit = |basis: &[(usize, usize)]| {
        if let Some(flow) = solve_tree(supply, demand, basis) {
            if flow.iter().all(|&f| f >= -1e-12) {
                let c: f64 = basis.iter().zip(&flow).map(|(&(i, j), f)| f * cost[i][j]).sum();
                best = best.min(c);
            }
        }
    };
    subsets(&cells, k, 0, &mut chosen, &mut visit);
    best
}

/// Flows on a basis by repeatedly settling a row or column that has a
/// single unsettled cell; `None` when the cells do not form a tree.
fn solve_tree(supply: &[f64], demand: &[f64], basis: &[(usize, usize)]) -> Option<Vec<f64>> {
    let (m, n) = (supply.len(), demand.len());
    let mut rem_s = supply.to_vec();
    let mut rem_d = demand.to_vec();
    let mut flow = vec![None; basis.len()];
    for _ in 0..basis.len() {
        let mut progressed = false;
        for line in 0..m + n {
            let open: Vec<usize> = (0..basis.len())
                .filter(|&c| flow[c].is_none() && if line < m { basis[c].0 == line } else { basis[c].1 == line - m })
                .collect();
            if open.len() == 1 {
                let c = open[0];
                let (i, j) = basis[c];
                let f = if line < m { rem_s[i] } else { rem_d[j] };
                flow[c] = Some(f);
                rem_s[i] -= f;
                rem_d[j] -= f;
                progressed = true;
                break;
            }
        }
        if !progressed {
            return None;
        }
    }
    if rem_s.iter().chain(&rem_d).any(|r| r.abs() > 1e-9) {
        return None;
    }
    flow.into_iter().collect()
}
