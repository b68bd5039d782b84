//! Command-line entry point: dataset simulation, chain fitting, null
//! calibration, hypothesis testing, and per-locus scans.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use hdpcc::config::RunConfig;
use hdpcc::data::{load_environment, load_genotypes};
use hdpcc::error::{Error, Result};
use hdpcc::report::{
    dpl_mean_distances, epsilons_csv, epsilons_from_trace, parse_epsilons, test_report,
};
use hdpcc::runner::{read_trace, run_chain, write_trace};
use hdpcc::simgen::{generate_null, generate_regime, Dims, Effects};
use hdpcc::infer;
use hdpcc::state::ChainState;

#[derive(Parser)]
#[command(
    name = "hdpcc",
    about = "Hierarchical Dirichlet process analysis of case-control genotype data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DimsArgs {
    /// Number of genes.
    #[arg(long, default_value_t = 2)]
    genes: usize,
    /// Loci per gene.
    #[arg(long, default_value_t = 40)]
    loci: usize,
    /// Control-group size.
    #[arg(long, default_value_t = 30)]
    controls: usize,
    /// Case-group size.
    #[arg(long, default_value_t = 30)]
    cases: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known ground truth.
    Simulate {
        /// Simulation regime 1..=5 (2 is the null model).
        #[arg(long)]
        regime: u8,
        #[command(flatten)]
        dims: DimsArgs,
        /// Mixture rows per individual-gene pair.
        #[arg(long, default_value_t = 10)]
        rows: usize,
        /// Planted per-locus probability shift.
        #[arg(long, default_value_t = 0.45)]
        genetic: f64,
        /// Covariate effect magnitude.
        #[arg(long, default_value_t = 1.0)]
        environmental: f64,
        /// Base-measure Beta shapes.
        #[arg(long, default_value_t = 1.0)]
        nu1: f64,
        #[arg(long, default_value_t = 1.0)]
        nu2: f64,
        /// Concentration of the row-pool urn.
        #[arg(long, default_value_t = 2.0)]
        alpha_h: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the model to a dataset, writing traces and a final snapshot.
    Fit {
        #[arg(long)]
        geno: PathBuf,
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Resume from a snapshot instead of a fresh chain.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Generate null data, fit it, and emit calibrated thresholds.
    Calibrate {
        #[command(flatten)]
        dims: DimsArgs,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test every traced statistic against calibrated thresholds.
    Test {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        epsilons: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-locus distance scan with top-2% flags.
    Dpl {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = dispatch(cli.command) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn fit_dataset(
    tensor: &hdpcc::data::GenotypeTensor,
    env: &hdpcc::data::EnvMatrix,
    cfg: &RunConfig,
    resume: Option<&Path>,
    out: &Path,
) -> Result<Vec<hdpcc::runner::TraceRecord>> {
    ensure_dir(out)?;
    let mut state = match resume {
        Some(path) => ChainState::restore(path)?,
        None => ChainState::init(tensor, env, cfg, cfg.seed),
    };
    state.snapshot(&out.join("initial.snapshot"))?;
    let records = run_chain(&mut state, tensor, env, cfg)?;
    write_trace(&out.join("traces.tsv"), &records)?;
    state.snapshot(&out.join("final.snapshot"))?;
    write_file(&out.join("genes.tsv"), &(tensor.genes.join("\n") + "\n"))?;
    Ok(records)
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            regime,
            dims,
            rows,
            genetic,
            environmental,
            nu1,
            nu2,
            alpha_h,
            seed,
            out,
        } => {
            let dims = Dims::uniform(dims.genes, dims.loci, dims.controls, dims.cases, rows);
            let effects = Effects {
                genetic,
                environmental,
            };
            let dataset = generate_regime(regime, &dims, effects, nu1, nu2, alpha_h, seed)?;
            ensure_dir(&out)?;
            write_file(&out.join("genotypes.tsv"), &dataset.tensor.to_tsv())?;
            write_file(
                &out.join("environment.csv"),
                &dataset.env.to_csv(&dataset.tensor),
            )?;
            write_file(&out.join("truth.csv"), &dataset.truth.to_csv())?;
            Ok(())
        }
        Command::Fit {
            geno,
            env,
            config,
            out,
            resume,
        } => {
            let cfg = RunConfig::load(&config)?;
            let tensor = load_genotypes(&geno)?;
            let env = load_environment(&env, &tensor)?;
            fit_dataset(&tensor, &env, &cfg, resume.as_deref(), &out)?;
            Ok(())
        }
        Command::Calibrate { dims, config, out } => {
            let cfg = RunConfig::load(&config)?;
            let dims = Dims::uniform(dims.genes, dims.loci, dims.controls, dims.cases, cfg.m);
            // the null generator's urn concentration: the precision map at
            // the middle of the intercept prior with zero covariate effect
            let mu_mid = 0.5 * (cfg.mu_min + cfg.mu_max);
            let alpha_h = hdpcc::model::precision_at(cfg.consts_h, mu_mid, &[], &[])?;
            let (tensor, env) = generate_null(&dims, cfg.nu1, cfg.nu2, alpha_h, cfg.seed)?;
            ensure_dir(&out)?;
            write_file(&out.join("genotypes.tsv"), &tensor.to_tsv())?;
            write_file(&out.join("environment.csv"), &env.to_csv(&tensor))?;
            let records = fit_dataset(&tensor, &env, &cfg, None, &out)?;
            let epsilons = epsilons_from_trace(&records, cfg.eps_quantile)?;
            write_file(&out.join("epsilons.csv"), &epsilons_csv(&epsilons))?;
            Ok(())
        }
        Command::Test {
            traces,
            epsilons,
            out,
        } => {
            let records = read_trace(&traces.join("traces.tsv"))?;
            let text =
                std::fs::read_to_string(&epsilons).map_err(|e| Error::io(&epsilons, e))?;
            let epsilons = parse_epsilons(&text)?;
            let outcomes = test_report(&records, &epsilons)?;
            ensure_dir(&out)?;
            write_file(&out.join("report.csv"), &infer::report_csv(&outcomes))?;
            Ok(())
        }
        Command::Dpl { traces, out } => {
            let records = read_trace(&traces.join("traces.tsv"))?;
            let genes = dpl_mean_distances(&records)?;
            let names: Vec<String> = match std::fs::read_to_string(traces.join("genes.tsv")) {
                Ok(text) => text.lines().map(str::to_string).collect(),
                Err(_) => (0..genes.len()).map(|j| format!("gene_{j}")).collect(),
            };
            let rows: Vec<(String, Vec<f64>)> = names
                .into_iter()
                .zip(genes)
                .collect();
            ensure_dir(&out)?;
            write_file(&out.join("dpl.csv"), &infer::dpl_csv(&rows))?;
            Ok(())
        }
    }
}
