//! Exact output distribution of the sampler on tiny tabular problems, by
//! enumerating every refine outcome and every selection.

use std::collections::BTreeMap;

use iter_core::sampler::tabular::{TabularEvaluator, TabularRefiner};
use iter_core::sampler::Strategy;
use iter_core::ScheduleSpec;

/// Outcomes below this probability are dropped from the enumeration.
const NEGLIGIBLE: f64 = 1e-15;

pub type Dist = BTreeMap<Vec<u32>, f64>;

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Every grid of per-cell choices with its product probability.
fn product(per_cell: &[Vec<f64>]) -> Vec<(Vec<u32>, f64)> {
    let mut out = vec![(Vec::new(), 1.0)];
    for probs in per_cell {
        let mut next = Vec::new();
        for (prefix, p) in &out {
            for (tok, &q) in probs.iter().enumerate() {
                if p * q > NEGLIGIBLE {
                    let mut g = prefix.clone();
                    g.push(tok as u32);
                    next.push((g, p * q));
                }
            }
        }
        out = next;
    }
    out
}

/// Sets of `k` cells drawn sequentially without replacement, each draw
/// proportional to the remaining weights.
fn sequential_draws(weights: &[f64], k: usize) -> Vec<(Vec<bool>, f64)> {
    fn go(w: &[f64], k: usize, taken: &mut Vec<bool>, p: f64, out: &mut BTreeMap<Vec<bool>, f64>) {
        if k == 0 {
            *out.entry(taken.clone()).or_insert(0.0) += p;
            return;
        }
        let rest: f64 = (0..w.len()).filter(|&i| !taken[i]).map(|i| w[i]).sum();
        for i in 0..w.len() {
            if !taken[i] {
                taken[i] = true;
                go(w, k - 1, taken, p * w[i] / rest, out);
                taken[i] = false;
            }
        }
    }
    let mut out = BTreeMap::new();
    go(weights, k, &mut vec![false; weights.len()], 1.0, &mut out);
    out.into_iter().collect()
}

/// Top `k` by key, ties to the lower index.
fn top_k(keys: &[f64], k: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[b].partial_cmp(&keys[a]).unwrap().then(a.cmp(&b)));
    let mut sel = vec![false; keys.len()];
    for &i in &order[..k] {
        sel[i] = true;
    }
    sel
}

/// Distribution of S_0 for a stochastic run starting at step `start` from
/// `initial` (sentinel = vocab marks masked cells).
pub fn enumerate(
    initial: &[u32],
    start: usize,
    refiner: &TabularRefiner,
    evaluator: &TabularEvaluator,
    spec: &ScheduleSpec,
    strategy: Strategy,
) -> Dist {
    let n = refiner.vocab;
    let sentinel = n as u32;
    let cells = initial.len();
    let mut states: Dist = BTreeMap::from([(initial.to_vec(), 1.0)]);
    for t in (1..=start).rev() {
        let k = spec.unmask_count(t, cells).unwrap();
        let mut next: Dist = BTreeMap::new();
        for (state, ps) in &states {
            let dists: Vec<Vec<f64>> = (0..cells).map(|i| softmax(refiner.row(i, state[i]))).collect();
            for (refined, pr) in product(&dists) {
                let selections: Vec<(Vec<bool>, f64, Vec<u32>)> = match strategy {
                    Strategy::Evaluator => {
                        let w: Vec<f64> = (0..cells)
                            .map(|i| evaluator.table[i * n + refined[i] as usize])
                            .collect();
                        sequential_draws(&w, k)
                            .into_iter()
                            .map(|(s, p)| (s, p, refined.clone()))
                            .collect()
                    }
                    Strategy::TopK => {
                        let committed: Vec<bool> = state.iter().map(|&x| x != sentinel).collect();
                        let merged: Vec<u32> =
                            (0..cells).map(|i| if committed[i] { state[i] } else { refined[i] }).collect();
                        let keys: Vec<f64> = (0..cells)
                            .map(|i| if committed[i] { f64::INFINITY } else { dists[i][refined[i] as usize] })
                            .collect();
                        vec![(top_k(&keys, k), 1.0, merged)]
                    }
                };
                for (sel, psel, toks) in selections {
                    let s: Vec<u32> = (0..cells).map(|i| if sel[i] { toks[i] } else { sentinel }).collect();
                    *next.entry(s).or_insert(0.0) += ps * pr * psel;
                }
            }
        }
        states = next;
    }
    states
}

/// 2x2 grid, four tokens. Cell `i` only ever holds token `i` or `i + 1`
/// (mod 4): a masked cell splits its mass between the two, a filled cell
/// mostly keeps its token and sometimes swaps to the other one. Evaluator
/// scores depend on cell and token.
pub fn fixture() -> (TabularRefiner, TabularEvaluator) {
    let (w, h, n) = (2usize, 2usize, 4usize);
    let masked_logits = [[0.4, -0.3], [0.0, 0.2], [-0.5, 0.5], [0.9, 0.0]];
    let mut table = Vec::new();
    for i in 0..w * h {
        let pair = [i % n, (i + 1) % n];
        for cur in 0..=n {
            let mut row = vec![-50.0; n];
            if cur == n {
                row[pair[0]] = masked_logits[i][0];
                row[pair[1]] = masked_logits[i][1];
            } else if pair.contains(&cur) {
                let other = if cur == pair[0] { pair[1] } else { pair[0] };
                row[cur] = 1.0;
                row[other] = 0.2 * i as f64;
            } else {
                row[cur] = 0.0;
            }
            table.extend(row);
        }
    }
    let refiner = TabularRefiner::new(w, h, n, table).unwrap();
    let eval: Vec<f64> = (0..w * h)
        .flat_map(|i| (0..n).map(move |t| 0.1 + 0.18 * ((i + 3 * t) % 5) as f64))
        .collect();
    let evaluator = TabularEvaluator::new(w, h, n, eval).unwrap();
    (refiner, evaluator)
}

/// Checks empirical counts against `dist` outcome by outcome with a
/// `sigmas`-standard-deviation binomial bound; outcomes the enumeration
/// rules out must never occur.
pub fn within_sigma(dist: &Dist, counts: &BTreeMap<Vec<u32>, u64>, runs: u64, sigmas: f64) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for (g, &c) in counts {
        if !dist.contains_key(g) {
            return Err(format!("sampled {g:?} {c} times but the enumeration gives it no mass"));
        }
    }
    for (g, &p) in dist {
        let c = counts.get(g).copied().unwrap_or(0) as f64;
        let n = runs as f64;
        let sd = (p * (1.0 - p) / n).sqrt();
        let z = (c / n - p).abs() / sd.max(f64::MIN_POSITIVE);
        worst = worst.max(z);
        if z > sigmas {
            return Err(format!("{g:?}: frequency {} vs exact {p} ({z:.2} sigma)", c / n));
        }
    }
    Ok(worst)
}
