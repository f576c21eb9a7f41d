use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use cnr::experiments::{
    aggregate, density_experiment, run_all, write_density_csv, write_summary_csv, Scenario,
    Source, TrialConfig,
};
use cnr::{Error, FeatureMap};
use serde_json::json;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "cnr", version, about = "Convex nonparanormal regression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Linear-Gaussian synthetic data.
    SynthLr,
    /// Data drawn from random CNR truths.
    SynthCnr,
    /// Mixture-of-regressions data with a bimodal conditional.
    SynthMr,
    /// Windows of a household power series (needs --data).
    Household,
    /// Density curve of a CNR fitted on mixture-of-regressions data.
    Density,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(clap::Args, Debug)]
struct Opts {
    /// Training size; repeat for several.
    #[arg(long = "n-train", global = true)]
    n_train: Vec<usize>,
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    n_test: Option<u64>,
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    trials: Option<u64>,
    /// Comma-separated label quantiles for the knots.
    #[arg(long, global = true, value_delimiter = ',')]
    quantiles: Option<Vec<f64>>,
    /// Use the generating knots (CNR-generated data).
    #[arg(long, global = true)]
    true_knots: bool,
    #[arg(long, global = true)]
    rho: Option<f64>,
    #[arg(long, global = true)]
    max_iters: Option<usize>,
    /// Primal and dual tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Raw feature dimension of the synthetic regimes.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// identity, quadratic or hermite.
    #[arg(long, global = true)]
    feature_map: Option<FeatureMap>,
    /// Append a constant feature.
    #[arg(long, global = true)]
    intercept: bool,
    /// Household series file.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    column: Option<String>,
    /// Worker threads (0 uses all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Also emit per-trial reports.
    #[arg(long, global = true)]
    verbose: bool,
}

fn config(command: Command, o: &Opts) -> TrialConfig {
    let scenario = match command {
        Command::SynthLr => Scenario::SynthLr,
        Command::SynthCnr => Scenario::SynthCnr,
        Command::SynthMr => Scenario::SynthMr,
        Command::Household => Scenario::Household,
        Command::Density => Scenario::Density,
    };
    let mut c = TrialConfig::new(scenario);
    if !o.n_train.is_empty() {
        c.n_train = o.n_train.clone();
    }
    if let Some(v) = o.n_test {
        c.n_test = v as usize;
    }
    if let Some(v) = o.trials {
        c.trials = v as usize;
    }
    if let Some(q) = &o.quantiles {
        c.quantiles = q.clone();
    }
    c.use_true_knots = o.true_knots;
    if let Some(v) = o.rho {
        c.admm.rho = v;
    }
    if let Some(v) = o.max_iters {
        c.admm.max_iters = v;
    }
    if let Some(v) = o.tol {
        c.admm.tol_primal = v;
        c.admm.tol_dual = v;
    }
    if let Some(v) = o.seed {
        c.base_seed = v;
    }
    if let Some(v) = o.k {
        c.k = v;
    }
    if let Some(v) = o.feature_map {
        c.feature_map = v;
    }
    c.intercept = o.intercept;
    c.data = o.data.clone();
    if let Some(v) = &o.column {
        c.column = v.clone();
    }
    if let Some(v) = o.workers {
        c.workers = v;
    }
    c
}

fn open_out(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn run(command: Command, opts: &Opts, cfg: &TrialConfig) -> Result<(), Error> {
    if let Command::Density = command {
        let report = density_experiment(cfg)?;
        eprintln!(
            "aᵀx = {:.4}, fallback = {}, modes at {:?}",
            report.mean_offset,
            report.curve.fallback,
            report.modes.iter().map(|p| p.y).collect::<Vec<_>>()
        );
        let mut out = open_out(&opts.out)?;
        match opts.format {
            Format::Csv => write_density_csv(&report, &mut out)?,
            Format::Json => serde_json::to_writer_pretty(&mut out, &report)?,
        }
        out.flush()?;
        return Ok(());
    }

    let source = Source::load(cfg)?;
    let reports = run_all(cfg, &source)?;
    for r in &reports {
        if let Some(reason) = &r.excluded {
            eprintln!("excluded trial {} (n_train={}): {reason}", r.trial, r.n_train);
        }
        if opts.verbose {
            eprintln!("{}", serde_json::to_string(r)?);
        }
    }
    let summary = aggregate(&reports)?;
    let mut out = open_out(&opts.out)?;
    match opts.format {
        Format::Csv => write_summary_csv(&summary, &mut out)?,
        Format::Json => {
            let mut doc = json!({ "config": cfg, "summary": summary });
            if opts.verbose {
                doc["trials"] = serde_json::to_value(&reports)?;
            }
            serde_json::to_writer_pretty(&mut out, &doc)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn usage_error(message: &str) -> ExitCode {
    let message = message.trim_end();
    if message.contains("Usage:") {
        eprintln!("{message}\n\nFor more information, try '--help'.");
    } else {
        let usage = Cli::command().render_usage();
        eprintln!("{message}\n\n{usage}\n\nFor more information, try '--help'.");
    }
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let message = rendered.split("\n\nFor more information").next().unwrap_or("");
            return usage_error(message);
        }
    };
    let cfg = config(cli.command, &cli.opts);
    if let Err(e) = cfg.validate() {
        return usage_error(&format!("error: {e}"));
    }
    match run(cli.command, &cli.opts, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
