use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use saacm::harness::ecdf::{ecdf_bootstrap, log_targets};
use saacm::harness::ert::{compute_ert, default_targets};
use saacm::harness::records::read_records;
use saacm::harness::runner::{run_trials_to, RunConfig};
use saacm::harness::timing::timing_experiment;
use saacm::{Algorithm, Error, TrialRecord};

#[derive(Parser)]
#[command(name = "saacm", version, about = "Surrogate-assisted active CMA-ES benchmarking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a battery of trials and write the record file.
    Run(RunArgs),
    /// Expected running time per target from a record file.
    Ert {
        #[arg(long = "in")]
        input: PathBuf,
        /// Comma-separated Δf targets; defaults to 1e2, 1e1, …, 1e-8.
        #[arg(long, value_delimiter = ',')]
        targets: Option<Vec<f64>>,
    },
    /// Bootstrapped runtime ECDF over 50 log-spaced targets as x,y pairs.
    Ecdf {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 100)]
        bootstrap: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// CPU cost per evaluation and per surrogate training.
    Timing {
        #[arg(long, value_delimiter = ',', default_values_t = [2, 5, 10, 20])]
        dims: Vec<usize>,
        #[arg(long, default_value = "saacm")]
        algo: String,
        #[arg(long, default_value_t = 200)]
        budget_per_dim: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Line-oriented key=value file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Function ids, e.g. `101-106,1`.
    #[arg(long)]
    functions: Option<String>,
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    instances: Option<String>,
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    budget_mult: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Record file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig, Error> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            cfg.apply_kv(&text)?;
        }
        let flags = [
            ("functions", &self.functions),
            ("dims", &self.dims),
            ("instances", &self.instances),
            ("algo", &self.algo),
            ("budget_mult", &self.budget_mult),
            ("seed", &self.seed),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load(path: &PathBuf) -> Result<Vec<TrialRecord>, Error> {
    read_records(BufReader::new(File::open(path)?))
}

fn sink(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.config()?;
            let mut out = sink(&args.out)?;
            run_trials_to(&cfg, &mut out)?;
            out.flush()?;
        }
        Command::Ert { input, targets } => {
            let records = load(&input)?;
            let targets = targets.unwrap_or_else(default_targets);
            let mut groups: BTreeMap<(u32, usize, Algorithm), Vec<TrialRecord>> = BTreeMap::new();
            for r in records {
                groups.entry((r.function_id, r.dim, r.algorithm)).or_default().push(r);
            }
            let mut out = sink(&None)?;
            writeln!(out, "function_id,dim,algorithm,target,ert,n_success,n_trials")?;
            for ((fid, dim, algo), recs) in &groups {
                for &t in &targets {
                    let e = compute_ert(recs, t)?;
                    writeln!(out, "{fid},{dim},{algo},{t:e},{},{},{}", e.ert, e.n_success, e.n_trials)?;
                }
            }
            out.flush()?;
        }
        Command::Ecdf {
            input,
            bootstrap,
            out,
            seed,
        } => {
            let records = load(&input)?;
            if records.is_empty() {
                return Err(Error::InvalidParams("record file contains no trials".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let curve = ecdf_bootstrap(&records, &log_targets(), bootstrap, &mut rng);
            let mut out = sink(&out)?;
            writeln!(out, "evals_per_dim,proportion")?;
            for (x, y) in &curve.points {
                writeln!(out, "{x:.16e},{y:.16e}")?;
            }
            out.flush()?;
        }
        Command::Timing {
            dims,
            algo,
            budget_per_dim,
        } => {
            let algo: Algorithm = algo.parse()?;
            if dims.iter().any(|&d| d < 2) {
                return Err(Error::Config("timing dimensions must be >= 2".into()));
            }
            let report = timing_experiment(&dims, algo, budget_per_dim)?;
            let mut out = sink(&None)?;
            writeln!(out, "dim,evaluations,trainings,secs_per_eval,secs_per_training")?;
            for r in &report.rows {
                writeln!(
                    out,
                    "{},{},{},{:e},{:e}",
                    r.dim, r.evaluations, r.trainings, r.secs_per_eval, r.secs_per_training
                )?;
            }
            match report.training_slope {
                Some(s) => writeln!(out, "# training cost log-log slope: {s:.3}")?,
                None => writeln!(out, "# training cost log-log slope: n/a")?,
            }
            out.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("saacm: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("saacm: {e}");
            ExitCode::FAILURE
        }
    }
}
