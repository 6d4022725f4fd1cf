use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rqmc_sqn::harness::acceptance::run_suite;
use rqmc_sqn::harness::{run_experiment, ExperimentConfig, OptimizerKind, Overrides};
use rqmc_sqn::models::ModelKind;
use rqmc_sqn::sobol::SamplerKind;
use rqmc_sqn::Error;

#[derive(Parser)]
#[command(name = "rqsqn", version, about = "RQMC stochastic quasi-Newton for variational Bayes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print sampler points as CSV.
    Sample {
        #[arg(long, default_value = "rqmc")]
        sampler: SamplerKind,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 16)]
        n: usize,
        /// Number of consecutive batches.
        #[arg(long, default_value_t = 1)]
        batches: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// One optimizer run per replicate.
    Optimize(RunArgs),
    /// Runs over a list of batch sizes and fits the error slope.
    Sweep(RunArgs),
    /// Acceptance suite.
    Verify {
        /// all, sobol, gauss, estimators, lbfgs, optim, theory, or a criterion id.
        #[arg(default_value = "all")]
        selector: String,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    sampler: Option<SamplerKind>,
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    n_grad: Option<usize>,
    #[arg(long)]
    n_hess: Option<usize>,
    #[arg(long = "interval-B")]
    interval: Option<usize>,
    #[arg(long)]
    memory: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated batch sizes.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<usize>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(self) -> Result<ExperimentConfig, Error> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        config.apply(&Overrides {
            model: self.model,
            sampler: self.sampler,
            optimizer: self.optimizer,
            n_grad: self.n_grad,
            n_hess: self.n_hess,
            interval: self.interval,
            memory: self.memory,
            alpha: self.alpha,
            iterations: self.iters,
            reps: self.reps,
            seed: self.seed,
            sweep: self.sweep,
            out: self.out,
        });
        config.validate()?;
        Ok(config)
    }
}

fn sample(kind: SamplerKind, dim: usize, n: usize, batches: usize, seed: u64) -> Result<(), Error> {
    let mut src = kind.build(dim, seed)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let header: Vec<String> = (1..=dim).map(|j| format!("u{j}")).collect();
    writeln!(out, "batch,{}", header.join(","))?;
    for b in 0..batches {
        let batch = src.next_batch(n)?;
        for row in batch.rows() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{b},{}", cells.join(","))?;
        }
    }
    Ok(())
}

fn optimize(args: RunArgs, sweep: bool) -> Result<(), Error> {
    let config = args.resolve()?;
    if sweep && config.batch_sizes().len() < 3 {
        return Err(Error::Config("sweep needs at least three batch sizes (--sweep 8,16,32)".into()));
    }
    let manifest = run_experiment(&config)?;
    println!("n,rep,grad_evals,final_elbo,tail_log2_err,file");
    for r in &manifest.runs {
        let tail = r.tail_log2_err.map(|e| e.to_string()).unwrap_or_default();
        println!("{},{},{},{},{},{}", r.n, r.rep, r.grad_evals, r.final_elbo, tail, r.file.display());
        if let Some(why) = &r.aborted {
            eprintln!("warning: n={} rep={} aborted: {why}", r.n, r.rep);
        }
    }
    if sweep {
        match manifest.sweep_fit() {
            Some(fit) => println!(
                "# slope of median tail error vs n: {:.4} (intercept {:.4}, residual {:.4})",
                fit.slope, fit.intercept, fit.residual
            ),
            None => println!("# no slope: parameter error unavailable for this model"),
        }
    }
    eprintln!("wrote {}", config.run.out.join("manifest.toml").display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sample { sampler, dim, n, batches, seed } => sample(sampler, dim, n, batches, seed),
        Command::Optimize(args) => optimize(args, false),
        Command::Sweep(args) => optimize(args, true),
        Command::Verify { selector } => match run_suite(&selector, &mut std::io::stdout()) {
            Ok(results) if results.iter().all(|r| r.passed) => Ok(()),
            Ok(_) => return ExitCode::from(1),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) | Err(e @ Error::Parse { .. }) | Err(e @ Error::DimensionTooLarge { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
