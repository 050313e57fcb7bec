use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use ocsim_core::config::{TrafficSource, PRESETS};
use ocsim_core::engine::DemandRow;
use ocsim_core::experiment::{run_cell, run_cells, Cell, ExperimentError};
use ocsim_core::metrics::{completion_stats, result_rows, write_result_csv};
use ocsim_core::switch::RuleLogEntry;
use ocsim_core::traffic::{read_trace_csv, validate_trace, write_trace_csv, ValidationReport};
use ocsim_core::{ExperimentConfig, MetricsReport, SimError, Simulation, Topology, Trace, TraceParams};
use serde::Serialize;

use crate::{report, Cli, CliError, Command};

/// Config plus the global overrides.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub jobs: usize,
    pub debug_logs: bool,
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Presets { name } => return presets(name.as_deref()),
        Command::Report { files } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("results"));
            return report::run(files, &out);
        }
        _ => {}
    }
    let ctx = context(&cli)?;
    match cli.command {
        Command::Generate => generate(&ctx),
        Command::Run { modes, rules } => {
            let mut ctx = ctx;
            if let Some(m) = modes {
                ctx.cfg.modes.circuits = m;
            }
            if let Some(r) = rules {
                ctx.cfg.modes.rules = r;
            }
            run(&ctx)
        }
        Command::Validate { trace } => validate(&ctx, trace.as_deref()),
        Command::Topology => topology(&ctx),
        Command::Presets { .. } | Command::Report { .. } => unreachable!(),
    }
}

fn context(cli: &Cli) -> Result<Context, CliError> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => return Err(CliError::Config("one of --config or --preset is required".into())),
    };
    if let Some(s) = cli.seed {
        cfg.run.seeds = vec![s];
    }
    if let Some(s) = &cli.seeds {
        cfg.run.seeds = s.0.clone();
    }
    if let Some(p) = &cli.out {
        cfg.run.out_dir = p.clone();
    }
    if let Some(p) = &cfg.traffic.path {
        if cfg.traffic.source != TrafficSource::Generate && !p.exists() {
            return Err(CliError::Config(format!("trace file {} does not exist", p.display())));
        }
    }
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    Ok(Context {
        out: cfg.run.out_dir.clone(),
        cfg,
        jobs,
        debug_logs: cli.debug_logs,
    })
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(path, e))?;
    w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

fn presets(name: Option<&str>) -> Result<(), CliError> {
    match name {
        None => {
            for p in PRESETS {
                println!("{p}");
            }
        }
        Some(n) => {
            let cfg = ExperimentConfig::preset(n)?;
            print!("{}", cfg.to_toml()?);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct TraceSidecar<'a> {
    seed: u64,
    topology: String,
    params: &'a TraceParams,
    validation: ValidationReport,
}

fn generate(ctx: &Context) -> Result<(), CliError> {
    if ctx.cfg.traffic.source != TrafficSource::Generate {
        return Err(CliError::Config("generate needs traffic.source = \"generate\"".into()));
    }
    let topo = ctx.cfg.build_topology()?;
    for &seed in &ctx.cfg.run.seeds {
        let trace = ctx.cfg.trace(&topo, seed)?;
        let csv = ctx.out.join(format!("trace-seed{seed}.csv"));
        write_trace_csv(&trace, create(&csv)?).map_err(|e| io_err(&csv, e))?;
        let validation = validate_trace(&trace, Some(&topo));
        let frac = validation.elephant_demand_fraction.unwrap_or(0.0);
        write_json(
            &ctx.out.join(format!("trace-seed{seed}.json")),
            &TraceSidecar {
                seed,
                topology: ctx.cfg.topology.label(),
                params: &ctx.cfg.traffic.params,
                validation,
            },
        )?;
        println!(
            "seed {seed}: {} flows, {} bytes, elephant demand {:.3} -> {}",
            trace.len(),
            trace.total_bytes(),
            frac,
            csv.display()
        );
    }
    Ok(())
}

fn cell_name(cfg: &ExperimentConfig, cell: Cell) -> String {
    format!(
        "{}-{}-{}-seed{}",
        cfg.topology.label(),
        cell.circuits.as_str(),
        cell.rules.as_str(),
        cell.seed
    )
}

/// Runs one cell with the engine's logs enabled and writes them under `dir`.
fn run_logged(cfg: &ExperimentConfig, topo: &Topology, trace: &Trace, cell: Cell, dir: &Path) -> Result<MetricsReport, CliError> {
    let mut sim_cfg = cfg.sim_config(cell.circuits, cell.rules, cell.seed);
    sim_cfg.record_event_log = true;
    sim_cfg.record_demand = true;
    let wrap = |source: SimError| ExperimentError::Sim {
        seed: cell.seed,
        mode: format!("{}/{}", cell.circuits.as_str(), cell.rules.as_str()),
        source,
    };
    let mut sim = Simulation::new(topo, trace, sim_cfg).map_err(wrap)?;
    let res = sim.run_until(u64::MAX).map_err(wrap);

    // Logs are written even when the run fails.
    let path = dir.join("events.log");
    let mut w = create(&path)?;
    for line in sim.event_log() {
        writeln!(w, "{line}").map_err(|e| io_err(&path, e))?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;

    let path = dir.join("rules.csv");
    let mut w = create(&path)?;
    writeln!(w, "{}", RuleLogEntry::csv_header()).map_err(|e| io_err(&path, e))?;
    for e in sim.ocs().rule_log() {
        writeln!(w, "{}", e.csv_line()).map_err(|e| io_err(&path, e))?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;

    let path = dir.join("demand.csv");
    write_rows::<DemandRow>(&path, sim.demand_log())?;

    res?;
    if !sim.is_done() {
        let left = sim.flows().iter().filter(|f| f.completion_time.is_none()).count();
        return Err(wrap(SimError::Stalled(left)).into());
    }
    let mut report = sim.into_report();
    report.info.topology = cfg.topology.label();
    Ok(report)
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut wr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(create(path)?);
    for r in rows {
        wr.serialize(r).map_err(|e| io_err(path, e))?;
    }
    wr.flush().map_err(|e| io_err(path, e))
}

fn run(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    cfg.validate()?;
    fs::create_dir_all(&ctx.out).map_err(|e| io_err(&ctx.out, e))?;
    info!(
        "{} cells on {} with {} jobs",
        ocsim_core::experiment::cells(cfg, &cfg.run.seeds).len(),
        cfg.topology.label(),
        ctx.jobs
    );
    let results = run_cells(cfg, &cfg.run.seeds, ctx.jobs, |topo, trace, cell| {
        let name = cell_name(cfg, cell);
        let report = if ctx.debug_logs {
            run_logged(cfg, topo, trace, cell, &ctx.out.join("debug").join(&name))
        } else {
            run_cell(cfg, topo, trace, cell).map_err(CliError::from)
        };
        let report = match report {
            Ok(r) => r,
            Err(e) => return Ok(Err(e)),
        };
        info!("{name}: {} events", report.events);
        let path = ctx.out.join(format!("report-{name}.json"));
        let written = create(&path).and_then(|w| report.write_json(w).map_err(|e| io_err(&path, e)));
        Ok(written.map(|()| (name, report)))
    })?;
    let reports: Vec<(String, MetricsReport)> = results.into_iter().collect::<Result<_, _>>()?;

    for (name, r) in &reports {
        let c = completion_stats(r);
        let ms = |s: Option<ocsim_core::metrics::Summary>| s.map_or("-".to_string(), |s| format!("{:.1}", s.mean / 1e3));
        println!(
            "{name}: elephant fct {} ms, mice coflow {} ms, {:.1} installs/min, {} overflows",
            ms(c.elephant),
            ms(c.mice_coflow),
            r.installs_per_minute(),
            r.overflows
        );
    }
    let all: Vec<MetricsReport> = reports.into_iter().map(|(_, r)| r).collect();
    let path = ctx.out.join("results.csv");
    write_result_csv(&result_rows(&all), create(&path)?).map_err(|e| io_err(&path, e))?;
    println!("wrote {} reports to {}", all.len(), ctx.out.display());
    Ok(())
}

fn validate(ctx: &Context, trace: Option<&Path>) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let topo = cfg.build_topology()?;
    println!(
        "config ok: {} ({} switches, {} hosts), {} seeds, {} cells",
        cfg.topology.label(),
        topo.switch_count(),
        topo.host_count(),
        cfg.run.seeds.len(),
        ocsim_core::experiment::cells(cfg, &cfg.run.seeds).len()
    );
    let Some(path) = trace else { return Ok(()) };
    let file = File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let trace = read_trace_csv(file).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let rep = validate_trace(&trace, Some(&topo));
    println!("{}", serde_json::to_string_pretty(&rep).expect("serializable"));
    if rep.is_clean() {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "{}: {} violations",
            path.display(),
            rep.violations.len()
        )))
    }
}

fn topology(ctx: &Context) -> Result<(), CliError> {
    let topo = ctx.cfg.build_topology()?;
    print!("{}", topo.adjacency_csv());
    Ok(())
}
