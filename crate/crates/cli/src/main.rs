mod commands;
mod config;
mod manifest;
mod store;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// Bad config, flags or files (exit 1).
    Input(String),
    /// Non-convergence or a failed certificate (exit 2).
    Numerical(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<lgflow::Error> for CliError {
    fn from(e: lgflow::Error) -> Self {
        match e {
            lgflow::Error::NonConvergence { .. } => CliError::Numerical(e.to_string()),
            e => CliError::Input(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "lgflow", version, about = "Gradient flows of linear-growth functionals on grids")]
struct Cli {
    /// Worker threads for parallel sweeps (default: available parallelism).
    #[arg(long, global = true, env = "LGF_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the minimizing-movement solver for a config.
    Solve {
        /// TOML or JSON config.
        config: PathBuf,
        /// Output directory (default: [output].dir of the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the weak-solution certificate of a solved trajectory.
    Certify {
        /// Trajectory directory written by `solve`.
        traj_dir: PathBuf,
        /// Config (default: config.toml inside the trajectory directory).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Random test functions on top of the canonical set (0: canonical only).
        #[arg(long)]
        battery: Option<usize>,
        /// Seed of the random test functions.
        #[arg(long)]
        seed: Option<u64>,
        /// Certificate tolerance (default depends on the inner method).
        #[arg(long)]
        tol: Option<f64>,
        /// Output directory (default: the trajectory directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve for a decreasing list of μ and compare the results.
    SweepMu {
        config: PathBuf,
        /// Comma-separated, strictly decreasing.
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.05, 0.025, 0.0125])]
        mus: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time-mollification report of a trajectory.
    Mollify {
        traj_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated, strictly decreasing.
        #[arg(long, value_delimiter = ',', default_values_t = [0.2, 0.1, 0.05, 0.025])]
        deltas: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// De Giorgi sup-bound on a backward cylinder of a trajectory.
    Degiorgi {
        traj_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Cylinder centre, x or x,y.
        #[arg(long, value_delimiter = ',', required = true)]
        center: Vec<f64>,
        /// Top time of the cylinder (default: the last stamp).
        #[arg(long)]
        t0: Option<f64>,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        theta: f64,
        /// Integrability exponent, must exceed the dimension.
        #[arg(long)]
        r: f64,
        #[arg(long)]
        xi: f64,
        /// Base level (default: min of u on the cylinder).
        #[arg(long)]
        k0: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Calibrated constant C of the bound.
        #[arg(long, default_value_t = 1.0)]
        c_cal: f64,
        #[arg(long, default_value_t = 40)]
        max_levels: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample (1−t)₊(n−1)/|x| and its growth towards the origin.
    ExampleRadial {
        /// Space dimension.
        #[arg(long, default_value_t = 2)]
        n: usize,
        /// Cells per axis, odd; h = 2/(grid − 1).
        #[arg(long, default_value_t = 129)]
        grid: usize,
        #[arg(long, default_value_t = 0.0)]
        t: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write trajectory frames as CSV.
    ExportCsv {
        traj_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Keep every k-th frame (the last one is always kept).
        #[arg(long, default_value_t = 1)]
        every: usize,
        /// Output directory (default: <traj_dir>/csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Input("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(e.to_string()))?;
    }
    match cli.cmd {
        Cmd::Solve { config, out } => commands::solve(&config, out.as_deref()),
        Cmd::Certify { traj_dir, config, battery, seed, tol, out } => commands::certify_cmd(commands::CertifyArgs {
            traj_dir: &traj_dir,
            config: config.as_deref(),
            battery,
            seed,
            tol,
            out: out.as_deref(),
        }),
        Cmd::SweepMu { config, mus, out } => commands::sweep_mu(&config, &mus, out.as_deref()),
        Cmd::Mollify { traj_dir, config, deltas, out } => {
            commands::mollify(&traj_dir, config.as_deref(), &deltas, out.as_deref())
        }
        Cmd::Degiorgi { traj_dir, config, center, t0, rho, theta, r, xi, k0, alpha, c_cal, max_levels, out } => {
            commands::degiorgi(commands::DeGiorgiArgs {
                traj_dir: &traj_dir,
                config: config.as_deref(),
                center,
                t0,
                rho,
                theta,
                r,
                xi,
                k0,
                alpha,
                c_cal,
                max_levels,
                out: out.as_deref(),
            })
        }
        Cmd::ExampleRadial { n, grid, t, out } => commands::example_radial(n, grid, t, &out),
        Cmd::ExportCsv { traj_dir, config, every, out } => {
            commands::export_csv(&traj_dir, config.as_deref(), every, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Numerical(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
