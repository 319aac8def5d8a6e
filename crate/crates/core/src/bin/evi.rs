use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evi_core::scenarios::{self, convergence_study, run_scenario, RunOptions, Scenario};
use evi_core::{Tolerances, DEFAULT_SEED};

#[derive(Parser)]
#[command(name = "evi", version, about = "Simulate and verify output regulation of evolution variational inequalities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// step size override
    #[arg(long)]
    dt: Option<f64>,
    /// horizon override
    #[arg(long)]
    horizon: Option<f64>,
    /// output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// seed for randomized checks
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// number of scenarios run in parallel
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// algebraic tolerance
    #[arg(long)]
    tol: Option<f64>,
}

impl Common {
    fn run_options(&self) -> RunOptions {
        let mut tol = Tolerances::default();
        if let Some(t) = self.tol {
            tol.algebraic = t;
        }
        RunOptions {
            dt: self.dt,
            horizon: self.horizon,
            seed: self.seed,
            tol,
            ..RunOptions::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate scenarios and write trajectory.csv, error.csv and report.txt
    Run {
        /// builtin names or scenario files
        #[arg(required = true)]
        scenarios: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Convergence study against a reference run at min(dt)/4
    Study {
        scenario: String,
        /// comma-separated step sizes
        #[arg(long, value_delimiter = ',')]
        dts: Option<Vec<f64>>,
        #[command(flatten)]
        common: Common,
    },
    /// Re-verify a design file or builtin design
    Verify { design: String },
    /// List builtin scenarios and designs
    List,
}

fn run_many(names: &[String], common: &Common) -> bool {
    let opts = common.run_options();
    let jobs = common.jobs.max(1);
    let results: Vec<(String, Result<String, String>)> = std::thread::scope(|s| {
        let mut out = Vec::with_capacity(names.len());
        for chunk in names.chunks(jobs) {
            let handles: Vec<_> = chunk
                .iter()
                .map(|name| {
                    let opts = &opts;
                    s.spawn(move || {
                        let r = run_scenario(name, opts, &common.out)
                            .map(|run| run.report_text())
                            .map_err(|e| e.to_string());
                        (name.clone(), r)
                    })
                })
                .collect();
            out.extend(handles.into_iter().map(|h| h.join().expect("scenario thread panicked")));
        }
        out
    });
    let mut ok = true;
    for (name, r) in results {
        match r {
            Ok(report) => {
                println!("== {name}");
                print!("{report}");
            }
            Err(e) => {
                eprintln!("error: {name}: {e}");
                ok = false;
            }
        }
    }
    ok
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { scenarios, common } => {
            if run_many(&scenarios, &common) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Command::Study { scenario, dts, common } => {
            let result = Scenario::load(&scenario).and_then(|sc| {
                let dts = dts
                    .or_else(|| sc.study_dts.clone())
                    .unwrap_or_else(|| vec![4.0 * sc.dt, 2.0 * sc.dt, sc.dt]);
                convergence_study(&sc, &dts, &common.run_options())
            });
            match result {
                Ok(table) => {
                    println!("scenario: {scenario}");
                    print!("{}", table.text());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Verify { design } => match scenarios::verify_design_file(&design) {
            Ok(ver) => {
                for (k, v) in ver.lines() {
                    println!("{k}: {v}");
                }
                if ver.passed() {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::FAILURE
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::List => {
            println!("scenarios:");
            for n in scenarios::builtin_names() {
                println!("  {n}");
            }
            println!("designs:");
            for n in scenarios::builtin_design_names() {
                println!("  {n}");
            }
            ExitCode::SUCCESS
        }
    }
}
