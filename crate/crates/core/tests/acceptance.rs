//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.
//!
//! `cargo test -p ocsim-core --release --test acceptance -- 6 7` runs a subset.
//! `OCSIM_ACCEPT_SEEDS` overrides the seed count of the sweeps (default 30).

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ocsim_core::config::ExperimentConfig;
use ocsim_core::control::{plan_weight, schedule_circuits, DemandEntry, DemandMatrix, SchedulerConfig};
use ocsim_core::engine::{allocate_rates, run_simulation, CircuitSetting, SimConfig, Simulation};
use ocsim_core::experiment::{run_cell, Cell};
use ocsim_core::metrics::{completion_stats, MetricsReport};
use ocsim_core::switch::{CircuitMode, CircuitPlan, RuleMode};
use ocsim_core::topology::{LinkId, LinkRates, SwitchId, Topology};
use ocsim_core::traffic::{FlowClass, FlowId, FlowSpec, Trace, MB};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn seed_count() -> u64 {
    std::env::var("OCSIM_ACCEPT_SEEDS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(30)
}

/// Per-seed improvement of shared over private: (elephant FCT, mice coflow completion).
#[derive(Clone, Copy, Debug)]
struct Gain {
    elephant: f64,
    mice: f64,
}

impl Gain {
    fn combined(self) -> f64 {
        (self.elephant + self.mice) / 2.0
    }
}

fn means(r: &MetricsReport) -> (f64, f64) {
    let s = completion_stats(r);
    (s.elephant.expect("elephants").mean, s.mice_coflow.expect("mice").mean)
}

fn conserved(r: &MetricsReport) -> bool {
    r.delivered_bytes == r.total_bytes && r.flows.iter().all(|f| f.delivered == f.size)
}

struct Sweep {
    gains: Vec<Gain>,
    secs: f64,
    conserved: bool,
}

impl Sweep {
    fn mean(&self) -> f64 {
        self.gains.iter().map(|g| g.combined()).sum::<f64>() / self.gains.len() as f64
    }
}

fn sweep(preset: &str, seeds: u64) -> Sweep {
    let t0 = Instant::now();
    let cfg = ExperimentConfig::preset(preset).unwrap();
    let topo = cfg.build_topology().unwrap();
    let mut gains = Vec::new();
    let mut ok = true;
    for seed in 1..=seeds {
        let trace = cfg.trace(&topo, seed).unwrap();
        let mut run = |circuits| {
            let r = run_cell(&cfg, &topo, &trace, Cell { circuits, rules: RuleMode::Cshare, seed }).unwrap();
            ok &= r.delivered_bytes == trace.total_bytes();
            means(&r)
        };
        let (pe, pm) = run(CircuitSetting::Private);
        let (se, sm) = run(CircuitSetting::Shared);
        gains.push(Gain {
            elephant: (pe - se) / pe,
            mice: (pm - sm) / pm,
        });
    }
    Sweep {
        gains,
        secs: t0.elapsed().as_secs_f64(),
        conserved: ok,
    }
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

struct Runs {
    seeds: u64,
    done: BTreeMap<String, Sweep>,
    intensive: Option<Intensive>,
}

impl Runs {
    fn get(&mut self, preset: &str) -> &Sweep {
        let seeds = self.seeds;
        self.done
            .entry(preset.to_string())
            .or_insert_with(|| sweep(preset, seeds))
    }

    fn intensive(&mut self) -> &Intensive {
        self.intensive.get_or_insert_with(intensive)
    }
}

fn criterion_1(s: &mut Runs) -> Outcome {
    let n = s.seeds;
    let sw = s.get("ring10-sim");
    let both = sw.gains.iter().filter(|g| g.elephant > 0.0 && g.mice > 0.0).count();
    let frac = both as f64 / sw.gains.len() as f64;
    let mean = sw.mean();
    let e = sw.gains.iter().map(|g| g.elephant).sum::<f64>() / n as f64;
    let m = sw.gains.iter().map(|g| g.mice).sum::<f64>() / n as f64;
    outcome(
        n >= 30 && frac >= 0.95 && mean >= 0.10 && sw.secs <= 600.0 && sw.conserved,
        format!(
            "ring10-sim, {n} seeds: {both}/{n} seeds improve both, mean {} (elephant {}, mice coflow {}), {:.0}s",
            pct(mean),
            pct(e),
            pct(m),
            sw.secs
        ),
    )
}

/// Spearman rank correlation without ties.
fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        for (k, &i) in idx.iter().enumerate() {
            r[i] = k as f64;
        }
        r
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

fn criterion_2(s: &mut Runs) -> Outcome {
    let sizes = [10.0, 12.0, 14.0, 16.0];
    let mut means = Vec::new();
    let mut ok = true;
    for n in [10, 12, 14, 16] {
        let sw = s.get(&format!("ring{n}-sim"));
        ok &= sw.conserved;
        means.push(sw.mean());
    }
    let rho = spearman(&sizes, &means);
    let in_band = means.iter().all(|&m| (0.10..=0.45).contains(&m));
    let shown: Vec<String> = means.iter().map(|&m| pct(m)).collect();
    outcome(
        s.seeds >= 30 && rho > 0.0 && in_band && ok,
        format!("ring 10/12/14/16: {} , spearman {rho:.2}", shown.join(" / ")),
    )
}

fn criterion_3(s: &mut Runs) -> Outcome {
    let mut means = Vec::new();
    let mut ok = true;
    for p in ["fbfly333-sim", "fbfly443-sim", "fbfly553-sim", "fbfly663-sim"] {
        let sw = s.get(p);
        ok &= sw.conserved;
        means.push(sw.mean());
    }
    let hi = means.iter().cloned().fold(f64::MIN, f64::max);
    let lo = means.iter().cloned().fold(f64::MAX, f64::min);
    let shown: Vec<String> = means.iter().map(|&m| pct(m)).collect();
    outcome(
        s.seeds >= 30 && hi - lo <= 0.10 && ok,
        format!(
            "fbfly 9/16/25/36: {}, spread {:.1} pp",
            shown.join(" / "),
            100.0 * (hi - lo)
        ),
    )
}

fn checked_run(cfg: &ExperimentConfig, topo: &Topology, trace: &Trace, rules: RuleMode, seed: u64) -> MetricsReport {
    let sim = SimConfig {
        check_invariants: true,
        ..cfg.sim_config(CircuitSetting::Shared, rules, seed)
    };
    run_simulation(topo, trace, sim).unwrap()
}

/// Shared-mode cshare and per_flow runs of the intensive preset, seed 1.
struct Intensive {
    capacity: u32,
    ports: u32,
    cshare: MetricsReport,
    per_flow: MetricsReport,
}

fn intensive() -> Intensive {
    let cfg = ExperimentConfig::preset("ring10-intensive").unwrap();
    let topo = cfg.build_topology().unwrap();
    let trace = cfg.trace(&topo, 1).unwrap();
    let run = |rules| {
        run_cell(&cfg, &topo, &trace, Cell { circuits: CircuitSetting::Shared, rules, seed: 1 }).unwrap()
    };
    Intensive {
        capacity: cfg.switch.table_capacity,
        ports: cfg.topology.ocs_ports,
        cshare: run(RuleMode::Cshare),
        per_flow: run(RuleMode::PerFlow),
    }
}

fn criterion_4(s: &mut Runs) -> Outcome {
    let r = s.intensive();
    let (cs, pf) = (&r.cshare, &r.per_flow);
    let ratio = pf.installs_per_minute() / cs.installs_per_minute().max(f64::MIN_POSITIVE);
    let peak = cs
        .footprint
        .iter()
        .flat_map(|b| b.peak_per_switch.iter().copied())
        .max()
        .unwrap_or(0);
    outcome(
        ratio >= 5.0 && peak <= r.ports && cs.max_cshare_rules == cs.max_up_circuits && cs.max_up_circuits > 0,
        format!(
            "ring10-intensive seed 1: {:.0} vs {:.0} installs/min (x{ratio:.1}); cshare peak {peak} per switch, ports {}, peak up circuits {}",
            pf.installs_per_minute(),
            cs.installs_per_minute(),
            r.ports,
            cs.max_up_circuits
        ),
    )
}

fn criterion_5(s: &mut Runs) -> Outcome {
    let r = s.intensive();
    let (cs, pf) = (&r.cshare, &r.per_flow);
    outcome(
        r.capacity == 1700 && pf.overflows > 0 && cs.overflows == 0,
        format!(
            "ring10-intensive seed 1, capacity {}: per_flow {} overflows (peak committed {}), cshare {} overflows (peak committed {})",
            r.capacity, pf.overflows, pf.peak_committed, cs.overflows, cs.peak_committed
        ),
    )
}

fn criterion_6() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let links = rng.random_range(1..=6usize);
        let caps: Vec<f64> = (0..links).map(|_| rng.random_range(0.5..100.0)).collect();
        let flows = rng.random_range(1..=10usize);
        let paths: Vec<Vec<usize>> = (0..flows)
            .map(|_| {
                let mut p: Vec<usize> = (0..links).filter(|_| rng.random_bool(0.5)).collect();
                if p.is_empty() {
                    p.push(rng.random_range(0..links));
                }
                p
            })
            .collect();
        let ids: Vec<Vec<LinkId>> = paths.iter().map(|p| p.iter().map(|&l| LinkId(l as u32)).collect()).collect();
        let got = allocate_rates(&ids, |l| caps[l.index()]);
        let want = common::water_fill(&paths, &caps);
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs() / w.abs());
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-9 && secs <= 30.0,
        format!("1000 instances, worst relative error {worst:.1e}, {secs:.2}s"),
    )
}

fn criterion_7() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = f64::INFINITY;
    let mut invalid = 0;
    for i in 0..1000 {
        let n = rng.random_range(3..=6u32);
        let topo = Topology::ring(n, 1, LinkRates::new(10e9, 100e9)).unwrap();
        let hop_weighted = i % 2 == 1;
        let mut demand = DemandMatrix::new();
        for s in 0..n {
            for d in 0..n {
                if s != d && rng.random_bool(0.6) {
                    let rate = rng.random_range(0.0..50.0) * 1e9;
                    demand.insert(
                        (SwitchId(s), SwitchId(d)),
                        DemandEntry {
                            rate,
                            flows: 1,
                            origin_rate: rate,
                            origin_flows: 1,
                        },
                    );
                }
            }
        }
        let cfg = SchedulerConfig {
            th_configure: 5e9,
            th_remove: 1e9,
            decision_period_us: 1,
            mode: CircuitMode::Shared,
            hop_weighted,
        };
        let plan = schedule_circuits(&demand, &[], &cfg, &topo);
        let (mut tx, mut rx) = (vec![0; n as usize], vec![0; n as usize]);
        for &(s, d) in &plan.add {
            tx[s.index()] += 1;
            rx[d.index()] += 1;
            if s == d || demand.get(&(s, d)).is_none_or(|e| e.rate < cfg.th_configure) {
                invalid += 1;
            }
        }
        if tx.iter().chain(&rx).any(|&c| c > 1) || !plan.remove.is_empty() {
            invalid += 1;
        }
        let hops = |s: u32, d: u32| if hop_weighted { topo.hops(SwitchId(s), SwitchId(d)) as f64 } else { 1.0 };
        let weights: BTreeMap<(u32, u32), f64> = common::eligible(&demand, cfg.th_configure)
            .into_iter()
            .map(|((s, d), w)| ((s, d), w * hops(s, d)))
            .collect();
        let best = common::max_weight_matching(&weights, n as usize);
        let got: f64 = if hop_weighted {
            plan.add
                .iter()
                .map(|&(s, d)| demand[&(s, d)].rate * hops(s.0, d.0))
                .sum()
        } else {
            plan_weight(&demand, &plan.add, CircuitMode::Shared)
        };
        if best > 0.0 {
            worst = worst.min(got / best);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        worst >= 0.5 && invalid == 0 && secs <= 30.0,
        format!("1000 matrices, worst greedy/optimum {worst:.3}, {invalid} invalid plans, {secs:.2}s"),
    )
}

fn criterion_8() -> Outcome {
    let mut runs = 0;
    let mut bad = Vec::new();
    for preset in ["ring10-sim", "fbfly333-sim"] {
        let cfg = ExperimentConfig::preset(preset).unwrap();
        let topo = cfg.build_topology().unwrap();
        let trace = cfg.trace(&topo, 3).unwrap();
        for rules in [RuleMode::Cshare, RuleMode::PerFlow] {
            let a = checked_run(&cfg, &topo, &trace, rules, 3);
            let b = checked_run(&cfg, &topo, &trace, rules, 3);
            runs += 2;
            if !conserved(&a) || a.total_bytes != trace.total_bytes() {
                bad.push(format!("{preset}/{}: bytes", rules.as_str()));
            }
            if a.event_log_sha256 != b.event_log_sha256 || a != b {
                bad.push(format!("{preset}/{}: hash", rules.as_str()));
            }
        }
    }
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{runs} runs delivered every trace byte; repeated runs share event-log hashes")
        } else {
            format!("mismatches: {}", bad.join(", "))
        },
    )
}

fn criterion_9() -> Outcome {
    const N: u64 = 100;
    let topo = Topology::ring(4, N as u32, LinkRates::new(10e9, 100e9)).unwrap();
    let src = topo.hosts_of(SwitchId(0)).to_vec();
    let dst = topo.hosts_of(SwitchId(2)).to_vec();
    let flows: Vec<FlowSpec> = (0..N as usize)
        .map(|i| FlowSpec {
            id: FlowId(i as u64),
            coflow: None,
            src: src[i],
            dst: dst[i],
            size: 1000 * MB,
            start: 0,
            class: FlowClass::Elephant,
        })
        .collect();
    let trace = Trace::new(flows);
    let mut cfg = SimConfig {
        rules: RuleMode::PerFlow,
        observer_period_us: 3_600_000_000,
        decision_period_us: 3_600_000_000,
        check_invariants: true,
        ..SimConfig::default()
    };
    cfg.detector.enabled = false;
    let timing = cfg.timing;
    let mut sim = Simulation::new(&topo, &trace, cfg).unwrap();
    sim.run_until(0).unwrap();
    for i in 0..N {
        sim.tag_flow(FlowId(i), 0).unwrap();
    }
    sim.force_plan(&CircuitPlan {
        add: vec![(SwitchId(0), SwitchId(2))],
        remove: vec![],
        mode: Some(CircuitMode::Shared),
    })
    .unwrap();
    let r = sim.run().unwrap();
    let times: Vec<u64> = r.flows.iter().filter_map(|f| f.first_circuit_us).collect();
    let first = times.iter().copied().min().unwrap_or(0);
    let last = times.iter().copied().max().unwrap_or(0);
    let tick = timing.setup_interval_us();
    let want_first = timing.reconfig_delay_us + timing.outbound_latency_us;
    let want_span = (N as f64 / timing.setup_rate * 1e6) as u64;
    let span = last - first;
    outcome(
        times.len() == N as usize && first == want_first && span.abs_diff(want_span) <= tick,
        format!(
            "{} of {N} rerouted; first at {:.1} ms (want {:.1}), last {:.3} s after (want {:.3} s, tick {:.0} ms)",
            times.len(),
            first as f64 / 1e3,
            want_first as f64 / 1e3,
            span as f64 / 1e6,
            want_span as f64 / 1e6,
            tick as f64 / 1e3
        ),
    )
}

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut sweeps = Runs {
        seeds: seed_count(),
        done: BTreeMap::new(),
        intensive: None,
    };
    let mut failed = 0;
    for id in 1..=9u32 {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let t0 = Instant::now();
        let o = match id {
            1 => criterion_1(&mut sweeps),
            2 => criterion_2(&mut sweeps),
            3 => criterion_3(&mut sweeps),
            4 => criterion_4(&mut sweeps),
            5 => criterion_5(&mut sweeps),
            6 => criterion_6(),
            7 => criterion_7(),
            8 => criterion_8(),
            _ => criterion_9(),
        };
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {id}: {} {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t0.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
