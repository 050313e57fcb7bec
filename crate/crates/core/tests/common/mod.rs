//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use ocsim_core::control::DemandMatrix;
use ocsim_core::switch::{RuleLogEntry, RuleOp};
use ocsim_core::topology::SwitchId;

/// Water-filling recomputed from scratch every round: find the tightest link,
/// freeze its flows, repeat.
pub fn water_fill(paths: &[Vec<usize>], caps: &[f64]) -> Vec<f64> {
    let n = paths.len();
    let mut rate = vec![f64::INFINITY; n];
    let mut frozen = vec![false; n];
    loop {
        let mut best: Option<(f64, usize)> = None;
        for (l, &cap) in caps.iter().enumerate() {
            let users: Vec<usize> = (0..n).filter(|&f| paths[f].contains(&l)).collect();
            let open = users.iter().filter(|&&f| !frozen[f]).count();
            if open == 0 {
                continue;
            }
            let used: f64 = users.iter().filter(|&&f| frozen[f]).map(|&f| rate[f]).sum();
            let share = ((cap - used) / open as f64).max(0.0);
            if best.is_none_or(|(b, _)| share < b) {
                best = Some((share, l));
            }
        }
        let Some((share, l)) = best else { break };
        for f in 0..n {
            if !frozen[f] && paths[f].contains(&l) {
                frozen[f] = true;
                rate[f] = share;
            }
        }
    }
    rate
}

/// Max-min check: every constrained flow crosses a saturated link on which no
/// other flow is faster.
pub fn is_max_min(paths: &[Vec<usize>], caps: &[f64], rate: &[f64], tol: f64) -> bool {
    let load = |l: usize| -> f64 { (0..paths.len()).filter(|&f| paths[f].contains(&l)).map(|f| rate[f]).sum() };
    for (l, &cap) in caps.iter().enumerate() {
        if load(l) > cap * (1.0 + tol) {
            return false;
        }
    }
    (0..paths.len()).all(|f| {
        if paths[f].is_empty() {
            return rate[f].is_infinite();
        }
        paths[f].iter().any(|&l| {
            let saturated = load(l) >= caps[l] * (1.0 - tol);
            let fastest = (0..paths.len())
                .filter(|&g| paths[g].contains(&l))
                .all(|g| rate[g] <= rate[f] * (1.0 + tol));
            saturated && fastest
        })
    })
}

/// Maximum-weight partial matching of (src, dst) pairs with one port each way,
/// by dynamic programming over used destination sets.
pub fn max_weight_matching(weights: &BTreeMap<(u32, u32), f64>, n: usize) -> f64 {
    let mut memo = vec![vec![f64::NAN; 1 << n]; n + 1];
    fn go(s: usize, used: usize, n: usize, w: &BTreeMap<(u32, u32), f64>, memo: &mut Vec<Vec<f64>>) -> f64 {
        if s == n {
            return 0.0;
        }
        if !memo[s][used].is_nan() {
            return memo[s][used];
        }
        let mut best = go(s + 1, used, n, w, memo);
        for d in 0..n {
            if used & (1 << d) == 0 {
                if let Some(&x) = w.get(&(s as u32, d as u32)) {
                    best = best.max(x + go(s + 1, used | (1 << d), n, w, memo));
                }
            }
        }
        memo[s][used] = best;
        best
    }
    go(0, 0, n, weights, &mut memo)
}

/// Weights eligible for circuits: entries at or above `th`.
pub fn eligible(demand: &DemandMatrix, th: f64) -> BTreeMap<(u32, u32), f64> {
    demand
        .iter()
        .filter(|(_, e)| e.rate >= th)
        .map(|(&(s, d), e)| ((s.0, d.0), e.rate))
        .collect()
}

/// Per-switch installs and peak live rules in `[t0, t1)`, counted naively.
pub fn recount_footprint(log: &[RuleLogEntry], switches: usize, t0: u64, t1: u64) -> (Vec<u32>, Vec<u32>) {
    let mut installs = vec![0u32; switches];
    let mut peak = vec![0u32; switches];
    for s in 0..switches {
        let live_at = |t: u64, inclusive: bool| -> i64 {
            log.iter()
                .filter(|e| e.switch == SwitchId(s as u32) && (e.t_us < t || (inclusive && e.t_us == t)))
                .map(|e| match e.op {
                    RuleOp::Install => 1,
                    RuleOp::Delete => -1,
                    RuleOp::Reject => 0,
                })
                .sum()
        };
        let mut p = live_at(t0, false);
        for e in log.iter().filter(|e| e.switch == SwitchId(s as u32) && e.t_us >= t0 && e.t_us < t1) {
            if e.op == RuleOp::Install {
                installs[s] += 1;
            }
            // Live count right after this entry, in log order.
            let idx = log.iter().position(|x| std::ptr::eq(x, e)).unwrap();
            let live: i64 = log[..=idx]
                .iter()
                .filter(|x| x.switch == SwitchId(s as u32))
                .map(|x| match x.op {
                    RuleOp::Install => 1,
                    RuleOp::Delete => -1,
                    RuleOp::Reject => 0,
                })
                .sum();
            p = p.max(live);
        }
        peak[s] = p as u32;
    }
    (installs, peak)
}
