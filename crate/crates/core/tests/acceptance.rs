//! Acceptance suite: one pass/fail line per criterion, non-zero exit if any
//! criterion fails. Runs without the libtest harness so every line prints.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::Check;
use droughtnet::export::{read_central_db, CENTRAL_DB_CSV};
use droughtnet::scenario::{replay, run_scenario, RunReport};

const YEAR_RUNTIME_LIMIT: Duration = Duration::from_secs(60);

fn guarded(f: impl FnOnce() -> Check) -> Check {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

struct Suite {
    failed: u32,
}

impl Suite {
    fn record(&mut self, n: u32, name: &str, result: Check) {
        match result {
            Ok(detail) => println!("criterion {n} {name}: PASS ({detail})"),
            Err(detail) => {
                self.failed += 1;
                println!("criterion {n} {name}: FAIL ({detail})");
            }
        }
    }
}

fn main() -> ExitCode {
    let mut suite = Suite { failed: 0 };
    let dir = tempfile::tempdir().expect("temporary directory");
    let year_dir = dir.path().join("default-year");

    let started = Instant::now();
    let year = guarded(|| {
        let mut cfg = common::year_config(0.0);
        cfg.output.dir = year_dir.clone();
        run_scenario(&cfg).map_err(|e| e.to_string()).map(|r| format!("{}", r.seed))
    });
    let elapsed = started.elapsed();
    let report: Result<RunReport, String> = year.and_then(|_| {
        droughtnet::export::read_json(&year_dir.join(droughtnet::export::RUN_REPORT_JSON)).map_err(|e| e.to_string())
    });

    suite.record(
        1,
        "year-end severity classes",
        guarded(|| {
            let r = report.as_ref().map_err(Clone::clone)?;
            let classes = common::year_end_classes(&r.analysis)?;
            if elapsed > YEAR_RUNTIME_LIMIT {
                return Err(format!("{classes}, but the year took {:.1} s", elapsed.as_secs_f64()));
            }
            let nodes: usize = r.node_counts.iter().map(|n| n.total).sum();
            Ok(format!("{classes}; {nodes} nodes, {:.1} s", elapsed.as_secs_f64()))
        }),
    );

    suite.record(
        2,
        "advection forecast",
        guarded(|| {
            let r = report.as_ref().map_err(Clone::clone)?;
            common::advection_forecast(&r.analysis)
        }),
    );

    suite.record(3, "coverage arithmetic", guarded(common::coverage_arithmetic));

    suite.record(
        4,
        "throughput conservation",
        guarded(|| {
            let r = report.as_ref().map_err(Clone::clone)?;
            let db = read_central_db(&year_dir.join(CENTRAL_DB_CSV)).map_err(|e| e.to_string())?;
            if db.len() as u64 != common::YEAR_REPORTS || r.counters.records_stored != common::YEAR_REPORTS {
                return Err(format!("lossless run stored {} of {}", db.len(), common::YEAR_REPORTS));
            }
            let mut parts = vec![format!("p=0: {} records", db.len())];
            for loss in [0.1, 0.3] {
                let (c, _) = common::conservation(&common::year_config(loss), common::YEAR_REPORTS)
                    .map_err(|e| format!("p={loss}: {e}"))?;
                parts.push(format!(
                    "p={loss}: {} records + {} losses",
                    c.records_stored,
                    common::recorded_losses(&c)
                ));
            }
            Ok(parts.join(", "))
        }),
    );

    suite.record(
        5,
        "diffusion vs flooding energy",
        guarded(|| {
            let cmp = common::diffusion_vs_flooding(30, 2024)?;
            let ratio = cmp.diffusion_mj / cmp.flooding_mj;
            let detail = format!(
                "diffusion {:.1} mJ, flooding {:.1} mJ, ratio {ratio:.4}, {} identical records",
                cmp.diffusion_mj, cmp.flooding_mj, cmp.delivered
            );
            if cmp.diffusion_mj <= cmp.flooding_mj {
                Ok(detail)
            } else {
                Err(detail)
            }
        }),
    );

    suite.record(6, "protocol properties", guarded(|| common::protocol_properties(1000)));

    suite.record(
        7,
        "determinism",
        guarded(|| {
            let short = common::determinism(3)?;
            report.as_ref().map_err(Clone::clone)?;
            let outcome = replay(&year_dir, &dir.path().join("default-year-replay")).map_err(|e| e.to_string())?;
            if !outcome.identical() {
                return Err(format!("year replay differs in {:?}", outcome.mismatched));
            }
            Ok(format!("{short}; full-year replay {} files identical", outcome.compared.len()))
        }),
    );

    suite.record(
        8,
        "classifier properties",
        guarded(|| common::classifier_properties(10_000, 2024)),
    );

    suite.record(9, "kernel ordering", guarded(|| common::kernel_ordering(100_000, 2024)));

    if suite.failed == 0 {
        println!("acceptance: all 9 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} of 9 criteria failed", suite.failed);
        ExitCode::FAILURE
    }
}
