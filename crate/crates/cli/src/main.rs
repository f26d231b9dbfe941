//! Command-line front end: `plan`, `run`, `classify` and `replay`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use droughtnet::config::{load_config, ScenarioConfig, OUT_DIR_ENV};
use droughtnet::export::{self, RUN_REPORT_JSON};
use droughtnet::scenario::{classify_export, replay, run_scenario, Analysis, RunReport};
use droughtnet::sim::plan_regions;
use droughtnet::stack::RoutingMode;

#[derive(Parser)]
#[command(name = "droughtnet", version, about = "Drought-monitoring sensor network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV)]
    out: Option<PathBuf>,
    /// tree, diffusion, combined or flooding.
    #[arg(long)]
    routing: Option<RoutingMode>,
}

#[derive(Subcommand)]
enum Command {
    /// Place nodes and write placement.json only.
    Plan(Common),
    /// Run the full pipeline.
    Run {
        #[command(flatten)]
        common: Common,
        /// Write the event trace to trace.tsv.
        #[arg(long)]
        trace: bool,
        /// Run this many consecutive seeds in parallel, one subdirectory each.
        #[arg(long, default_value_t = 1)]
        runs: u64,
    },
    /// Re-run analytics over an exported central_db.csv.
    Classify {
        #[command(flatten)]
        common: Common,
        /// Database export; defaults to <out>/central_db.csv.
        #[arg(long)]
        db: Option<PathBuf>,
    },
    /// Re-run a stored run and compare every export byte for byte.
    Replay {
        /// Directory holding the stored run.
        #[arg(long)]
        from: PathBuf,
        /// Where the fresh run is written; a temporary directory when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn scenario(common: &Common) -> Result<ScenarioConfig> {
    let mut cfg = match &common.config {
        Some(p) => load_config(p).with_context(|| format!("loading {}", p.display()))?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = common.routing {
        cfg.routing_mode = mode;
    }
    if let Some(out) = &common.out {
        cfg.output.dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_analysis(a: &Analysis) {
    for (region, class) in &a.year_end {
        let f = a.forecasts.get(region).map_or("-", |f| f.forecast.as_str());
        println!("region {region}: {class} (forecast {f})");
    }
    for (region, issue) in &a.issues {
        println!("region {region}: no pattern ({issue})");
    }
}

fn print_report(r: &RunReport) {
    let c = &r.counters;
    println!(
        "seed {} {} : {} events, {} reports, {} records, {} link losses, {} queue drops, conserved {}",
        r.seed,
        r.routing_mode,
        r.events_processed,
        c.reports_emitted,
        c.records_stored,
        c.link_losses,
        c.queue_drops,
        r.conserved.map_or("n/a", |c| if c { "true" } else { "false" })
    );
    println!(
        "radio energy {:.3} mJ, total {:.3} mJ, {} ms",
        r.network_energy.radio_mj(),
        r.network_energy.radio_mj() + r.network_energy.idle_mj + r.network_energy.sensing_mj,
        r.wall_clock_ms
    );
    print_analysis(&r.analysis);
}

fn cmd_plan(common: &Common) -> Result<()> {
    let cfg = scenario(common)?;
    let planned = plan_regions(&cfg)?;
    std::fs::create_dir_all(&cfg.output.dir)?;
    let plans: Vec<_> = planned.iter().map(|(_, p)| p).collect();
    let path = cfg.output.dir.join(export::PLACEMENT_JSON);
    export::write_placement(&path, &plans)?;
    for p in &plans {
        println!("region {}: {} nodes including the sink", p.region_id, p.len());
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_run(common: &Common, trace: bool, runs: u64) -> Result<()> {
    let mut cfg = scenario(common)?;
    cfg.output.trace |= trace;
    if runs <= 1 {
        let report = run_scenario(&cfg)?;
        print_report(&report);
        return Ok(());
    }
    let base = cfg.output.dir.clone();
    let results: Vec<(u64, Result<RunReport>)> = thread::scope(|s| {
        let handles: Vec<_> = (0..runs)
            .map(|k| {
                let mut c = cfg.clone();
                c.seed = cfg.seed.wrapping_add(k);
                c.output.dir = base.join(format!("seed-{}", c.seed));
                let seed = c.seed;
                (seed, s.spawn(move || run_scenario(&c).map_err(anyhow::Error::from)))
            })
            .collect();
        handles
            .into_iter()
            .map(|(seed, h)| (seed, h.join().unwrap_or_else(|_| Err(anyhow::anyhow!("run panicked")))))
            .collect()
    });
    let mut failed = 0;
    for (seed, r) in results {
        match r {
            Ok(report) => print_report(&report),
            Err(e) => {
                failed += 1;
                eprintln!("seed {seed}: {e:#}");
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {runs} runs failed");
    }
    Ok(())
}

fn cmd_classify(common: &Common, db: Option<PathBuf>) -> Result<()> {
    let out_given = common.out.clone();
    let mut cfg = scenario(common)?;
    let db = db.unwrap_or_else(|| cfg.output.dir.join(export::CENTRAL_DB_CSV));
    if common.config.is_none() {
        // prefer the configuration the database was produced with
        let echo = db.parent().unwrap_or(Path::new(".")).join(RUN_REPORT_JSON);
        if let Ok(report) = export::read_json::<RunReport>(&echo) {
            cfg = report.config;
        }
    }
    let out = out_given.unwrap_or_else(|| db.parent().unwrap_or(Path::new(".")).to_path_buf());
    let analysis = classify_export(&db, &cfg, &out)?;
    print_analysis(&analysis);
    Ok(())
}

fn cmd_replay(from: &Path, out: Option<PathBuf>) -> Result<bool> {
    let tmp;
    let work = match out {
        Some(p) => p,
        None => {
            tmp = tempfile::tempdir()?;
            tmp.path().to_path_buf()
        }
    };
    let outcome = replay(from, &work)?;
    for name in &outcome.compared {
        let status = if outcome.mismatched.contains(name) { "DIFFERS" } else { "identical" };
        println!("{name}: {status}");
    }
    Ok(outcome.identical())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Plan(c) => cmd_plan(c).map(|_| true),
        Command::Run { common, trace, runs } => cmd_run(common, *trace, *runs).map(|_| true),
        Command::Classify { common, db } => cmd_classify(common, db.clone()).map(|_| true),
        Command::Replay { from, out } => cmd_replay(from, out.clone()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("replay differs from the stored run");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
