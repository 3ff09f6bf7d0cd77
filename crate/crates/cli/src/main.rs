//! Command-line harness for the simulation studies.

mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use robust_is::sampler::SamplerSpec;

/// Exit status when more than 10% of replications fail, or `check` finds
/// the moment condition violated.
pub const EXIT_FAILURES: u8 = 1;
/// Exit status for bad arguments, configs or input files.
pub const EXIT_USAGE: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "robust-is", version, about = "Importance sampling with guaranteed finite weight moments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a dataset from one of the example models.
    Simulate(SimulateArgs),
    /// Check the moment condition for the fitted Gaussian of every latent block.
    Check(CheckArgs),
    /// Inflate approximating-model variances until the condition holds.
    Impose(ImposeArgs),
    /// Repeated likelihood estimates for one dataset.
    Loglik(LoglikArgs),
    /// Bernoulli posterior mean under the normal, t and 2nd-moment samplers.
    Table1(TableArgs),
    /// Poisson state space likelihood: SPDK against the imposed mixture.
    Table2(TableArgs),
    /// Panel likelihood: t against the 2nd-moment mixture, common random numbers.
    Table3(TableArgs),
    /// Pseudo-marginal MCMC for the panel model.
    Table5(TableArgs),
    /// Leading-minor paths for constant approximating-model variances.
    Fig2(Fig2Args),
    /// Pseudo-marginal MCMC for one dataset.
    Mcmc(McmcArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    PoissonSsm,
    PanelAr1,
    GlmmPoisson,
    Bernoulli,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub kind: Kind,
    /// Master seed.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Series length [default: 500 for poisson-ssm, 20 for panel-ar1].
    #[arg(long)]
    pub len: Option<usize>,
    /// Number of panels or clusters [default: 20].
    #[arg(long)]
    pub panels: Option<usize>,
    /// Stationary variance of the panel random effects [default: 1].
    #[arg(long)]
    pub sigma_alpha2: Option<f64>,
    /// Observations per GLMM cluster [default: 10].
    #[arg(long, default_value_t = 10)]
    pub per_cluster: usize,
    /// Bernoulli trials N [default: 100].
    #[arg(long, default_value_t = 100)]
    pub trials: u64,
    /// Bernoulli successes k [default: 7, the hard case].
    #[arg(long, default_value_t = 7)]
    pub successes: u64,
    /// Bernoulli prior precision Q [default: 0.1].
    #[arg(long, default_value_t = 0.1)]
    pub prior_precision: f64,
    /// Output dataset file (JSON).
    #[arg(long)]
    pub out: std::path::PathBuf,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Dataset file written by `simulate`.
    #[arg(long)]
    pub data: std::path::PathBuf,
    /// Evaluation point beta_1,...,beta_p,phi,sigma2 [default: the dataset's recorded values].
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub psi: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Moment order n [default: 2].
    #[arg(long, default_value_t = 2.0)]
    pub n_moment: f64,
    /// Also write the verdict to this JSON file.
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
}

#[derive(Args, Debug)]
pub struct ImposeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Moment order n [default: 2].
    #[arg(long, default_value_t = 2.0)]
    pub n_moment: f64,
    /// Inflation step epsilon per round [default: 0.05].
    #[arg(long, default_value_t = robust_is::statespace::DEFAULT_EPS_INFLATE)]
    pub eps_inflate: f64,
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
}

#[derive(Args, Debug)]
pub struct LoglikArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// normal | t[:nu] | moment[:n] | imposed[:n] [default: moment:2].
    #[arg(long, default_value = "moment:2")]
    pub sampler: SamplerSpec,
    /// Importance samples per estimate [default: 1000].
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// Number of estimates [default: 20].
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = "results")]
    pub out: std::path::PathBuf,
}

#[derive(Args, Debug)]
pub struct McmcArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// normal | t[:nu] | moment[:n] | imposed[:n] [default: moment:2].
    #[arg(long, default_value = "moment:2")]
    pub sampler: SamplerSpec,
    /// Importance samples per likelihood estimate [default: 200].
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    /// Iterations kept after burn-in [default: 5000].
    #[arg(long, default_value_t = 5000)]
    pub iterations: usize,
    /// Burn-in iterations [default: 5000].
    #[arg(long, default_value_t = 5000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "results")]
    pub out: std::path::PathBuf,
}

/// Flags shared by the table experiments. Unset flags fall back to the
/// config file, then to the preset.
#[derive(Args, Debug, Default)]
pub struct TableArgs {
    /// table1: hard (N=100, k=7) | easy (k=50); table2: extreme (psi = -1.4, 0.99, 1) | dgp;
    /// table3: truth | far (psi = 0, 0, 0, 1).
    #[arg(long)]
    pub preset: Option<String>,
    /// Use the full replication counts and sample sizes (100 replications,
    /// S = 1e6 for table1, 100 x 100 evaluations for tables 2 and 3, 50,000
    /// iterations for table5) instead of desk scale.
    #[arg(long)]
    pub full_scale: bool,
    /// TOML or JSON file of config fields; a JSON report's embedded config is accepted.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// Master seed [default: 1].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replications or datasets [desk default: 20; table5: 3].
    #[arg(long)]
    pub reps: Option<usize>,
    /// Likelihood evaluations per dataset, tables 2 and 3 [desk default: 20].
    #[arg(long)]
    pub evals: Option<usize>,
    /// Importance samples [desk defaults: 1e5, 1e4, 1e3, 200].
    #[arg(long)]
    pub samples: Option<usize>,
    /// Moment order n [default: 2].
    #[arg(long)]
    pub n_moment: Option<f64>,
    /// Weight of the heavy mixture component [default: 0.1].
    #[arg(long)]
    pub pi: Option<f64>,
    /// Variance inflation step, table2 [default: 0.05].
    #[arg(long)]
    pub eps_inflate: Option<f64>,
    /// Series length, tables 3 and 5 [default: 20].
    #[arg(long)]
    pub len: Option<usize>,
    /// Random-effect stationary variance, tables 3 and 5 [default: 1].
    #[arg(long)]
    pub sigma_alpha2: Option<f64>,
    /// Iterations after burn-in, table5 [desk default: 5000].
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Burn-in, table5 [desk default: 5000].
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    pub out: std::path::PathBuf,
}

#[derive(Args, Debug)]
pub struct Fig2Args {
    /// Constant variances v [default: 5,10,25,40].
    #[arg(long, value_delimiter = ',', default_value = "5,10,25,40")]
    pub v: Vec<f64>,
    /// AR coefficient [default: 0.975].
    #[arg(long, default_value_t = 0.975)]
    pub phi: f64,
    /// Stationary variance [default: 0.5].
    #[arg(long, default_value_t = 0.5)]
    pub sigma_alpha2: f64,
    /// Moment order [default: 2].
    #[arg(long, default_value_t = 2.0)]
    pub n_moment: f64,
    /// Series length [default: 500].
    #[arg(long, default_value_t = 500)]
    pub len: usize,
    #[arg(long, default_value = "results")]
    pub out: std::path::PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Check(a) => commands::check(&a),
        Command::Impose(a) => commands::impose(&a),
        Command::Loglik(a) => commands::loglik(&a),
        Command::Table1(a) => commands::table1(&a),
        Command::Table2(a) => commands::table2(&a),
        Command::Table3(a) => commands::table3(&a),
        Command::Table5(a) => commands::table5(&a),
        Command::Fig2(a) => commands::fig2(&a),
        Command::Mcmc(a) => commands::mcmc(&a),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.chain().any(|c| {
                matches!(
                    c.downcast_ref::<robust_is::Error>(),
                    Some(robust_is::Error::InvalidInput(_) | robust_is::Error::Io(_) | robust_is::Error::Json(_))
                ) || c.is::<std::io::Error>()
                    || c.is::<serde_json::Error>()
                    || c.is::<toml::de::Error>()
                    || c.is::<config::ConfigError>()
            });
            ExitCode::from(if usage { EXIT_USAGE } else { EXIT_FAILURES })
        }
    }
}
