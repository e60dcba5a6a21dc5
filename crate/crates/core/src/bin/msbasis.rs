use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use msbasis::harness::{
    cli_convergence, cli_offline, cli_solve, run_property_suite, ExperimentConfig, RhsSpec,
};
use msbasis::util::with_threads;
use msbasis::Error;

#[derive(Parser)]
#[command(name = "msbasis", version, about = "Edge-basis multiscale solver for -div(a grad u) = f on the unit square")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and store the right-hand-side independent edge basis.
    Offline(Common),
    /// Online solves against an existing store; writes JSON reports.
    Solve(Common),
    /// Error sweep over nc, m and variants; writes sweep_H.csv and sweep_m.csv.
    Convergence(Common),
    /// Run the built-in invariant suite on small meshes.
    Check {
        /// Also write the report as JSON to this file.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CI-scale preset (nf=256, nc=16, m=1..4), applied before other flags.
    #[arg(long)]
    desk: bool,
    #[arg(long, value_delimiter = ',')]
    nc: Option<Vec<usize>>,
    #[arg(long)]
    nf: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    m: Option<Vec<usize>>,
    #[arg(long = "variant", value_delimiter = ',')]
    variants: Option<Vec<u8>>,
    /// `const_minus_one`, `poly_x1p4_x2p3` or an expression in x1, x2.
    #[arg(long)]
    rhs: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Include per-edge error indicators in solve reports.
    #[arg(long)]
    indicators: bool,
    /// Write fine-grid solutions next to the solve reports.
    #[arg(long)]
    dump: bool,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        if self.desk {
            cfg = cfg.desk();
        }
        if let Some(v) = &self.nc {
            cfg.nc = v.clone();
        }
        if let Some(v) = self.nf {
            cfg.nf = v;
        }
        if let Some(v) = &self.m {
            cfg.m = v.clone();
        }
        if let Some(v) = &self.variants {
            cfg.variants = v.clone();
        }
        if let Some(v) = &self.rhs {
            cfg.rhs = v.parse::<RhsSpec>()?;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = &self.store {
            cfg.store = v.clone();
        }
        if let Some(v) = self.threads {
            cfg.threads = v;
        }
        cfg.indicators |= self.indicators;
        cfg.dump_solutions |= self.dump;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(command: Command) -> Result<bool, Error> {
    match command {
        Command::Offline(c) => {
            let cfg = c.config()?;
            for s in with_threads(cfg.effective_threads(), || cli_offline(&cfg))? {
                if let Some(w) = &s.warning {
                    eprintln!("warning: {w}");
                }
                println!(
                    "nc={} edges={} m_max={} store={} ({:.1}s)",
                    s.nc,
                    s.num_edges,
                    s.m_max,
                    s.store.display(),
                    s.seconds
                );
            }
        }
        Command::Solve(c) => {
            let cfg = c.config()?;
            for r in with_threads(cfg.effective_threads(), || cli_solve(&cfg))? {
                println!(
                    "nc={} m={} k={} basis={} e_E={:.4e} e_L2={:.4e} online={:.2}s",
                    r.nc,
                    r.m.unwrap_or(0),
                    r.variant,
                    r.num_basis,
                    r.e_energy,
                    r.e_l2,
                    r.timings.online_s
                );
            }
            println!("reports in {}", cfg.output_dir.display());
        }
        Command::Convergence(c) => {
            let cfg = c.config()?;
            let rows = with_threads(cfg.effective_threads(), || cli_convergence(&cfg))?;
            for r in &rows {
                println!("nc={} m={} k={} e_E={:.4e} e_L2={:.4e}", r.nc, r.m, r.variant, r.e_energy, r.e_l2);
            }
            println!("tables in {}", cfg.output_dir.display());
        }
        Command::Check { json } => {
            let report = with_threads(msbasis::util::env_threads(), run_property_suite);
            for e in &report.entries {
                let tag = if e.passed { "PASS" } else { "FAIL" };
                println!("{tag} {:<28} {:>10.3e} (tol {:.0e})  {}", e.name, e.value, e.tolerance, e.detail);
            }
            println!("{:.1}s", report.elapsed_s);
            if let Some(p) = json {
                std::fs::write(p, serde_json::to_vec_pretty(&report)?)?;
            }
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
