use std::process::ExitCode;

use clap::Parser;
use learned_index_bench::cli::{Args, Settings};
use learned_index_bench::{emit_report, run};

const EXIT_RUN: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn main() -> ExitCode {
    let args = Args::parse();
    let settings = match Settings::from_args(&args) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("bench: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let report = match run(&settings.run_config()) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("bench: {e}");
            return ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_RUN });
        }
    };
    eprintln!(
        "{} on {} (n={}, threads={}, mode={}): {:.0} ops/s, p99.9 {} ns, depth {:.3} -> {:.3}",
        report.workload,
        report.dataset,
        report.n,
        report.threads,
        report.stats_mode,
        report.throughput,
        report.latency.p999_ns,
        report.stats_before.avg_depth,
        report.stats_after.avg_depth,
    );
    match &settings.out {
        Some(path) => {
            if let Err(e) = emit_report(&report, settings.format, path) {
                eprintln!("bench: {e}");
                return ExitCode::from(EXIT_RUN);
            }
        }
        None => print!("{}", report.render(settings.format)),
    }
    ExitCode::SUCCESS
}
