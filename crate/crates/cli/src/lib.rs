//! Command dispatch for `mfe`: solve, simulate, estimate and decompose the
//! marriage-market model.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use mfe_core::calibrate::{decompose, estimate, load_targets, DataEndpoints, EstimationSpec};
use mfe_core::equilibrium::{solve_equilibrium_with, EquilibriumSolution};
use mfe_core::event_study::event_study;
use mfe_core::moments::marriage_rate_by_decile;
use mfe_core::params::{load_params, render_params};
use mfe_core::simulate::simulate_panel;
use mfe_core::{io, Error, ModelParams, SolverSettings};

const EXIT_USAGE: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_SOLVER: u8 = 4;
const EXIT_IO: u8 = 5;
const EXIT_ESTIMATION: u8 = 6;

#[derive(Parser, Debug)]
#[command(
    name = "mfe",
    version,
    about = "Marriage, fertility and time use in a stationary matching equilibrium"
)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Parameter file (TOML, one key per parameter).
    #[arg(long)]
    params: PathBuf,
    /// Override the number of wage grid points.
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the equilibrium; write moments, decile marriage rates and distributions.
    Solve {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve, then simulate an agent panel.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Agents per gender.
        #[arg(long, default_value_t = 10_000)]
        agents: usize,
        #[arg(long, default_value_t = 40)]
        periods: u32,
    },
    /// Estimate the first-birth event study on a panel CSV.
    EventStudy {
        /// Panel written by `simulate`.
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Event window as QMIN:QMAX.
        #[arg(long, default_value = "-5:10", value_parser = parse_window, allow_hyphen_values = true)]
        window: (i32, i32),
    },
    /// Minimum-distance estimation of the free parameters in a targets file.
    Calibrate {
        #[command(flatten)]
        model: ModelArgs,
        /// Targets file with [[target]], [[free]] and [optimizer] entries.
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the optimizer seed in the targets file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Swap parameters one at a time from a counterfactual regime.
    Decompose {
        #[command(flatten)]
        model: ModelArgs,
        /// Counterfactual parameter file.
        #[arg(long)]
        counterfactual: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_window(s: &str) -> Result<(i32, i32), String> {
    let (a, b) = s.split_once(':').ok_or("expected QMIN:QMAX")?;
    let lo: i32 = a.trim().parse().map_err(|e| format!("bad QMIN: {e}"))?;
    let hi: i32 = b.trim().parse().map_err(|e| format!("bad QMAX: {e}"))?;
    if lo > hi {
        return Err("QMIN must not exceed QMAX".into());
    }
    Ok((lo, hi))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::InvalidParam { .. } | Error::Domain(_) => EXIT_CONFIG,
        Error::Infeasible(_) | Error::NonConvergence { .. } | Error::Decomposition { .. } => {
            EXIT_SOLVER
        }
        Error::Io { .. } | Error::Csv(_) => EXIT_IO,
        Error::Estimation(_) | Error::SingularDesign(_) | Error::EmptyDecile(_) => EXIT_ESTIMATION,
    }
}

fn load_model(args: &ModelArgs) -> Result<(ModelParams, SolverSettings), Error> {
    let (mut p, s) = load_params(&args.params)?;
    if let Some(n) = args.grid {
        p.wages.n_grid = n;
    }
    p.validate()?;
    Ok((p, s))
}

fn prepare_out(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })
}

fn solve(p: &ModelParams, s: &SolverSettings) -> Result<EquilibriumSolution, Error> {
    solve_equilibrium_with(p, s, None)
}

/// Run report written next to the outputs.
struct Manifest {
    text: String,
}

impl Manifest {
    fn new(argv: &[OsString]) -> Self {
        let mut text = String::new();
        let args: Vec<String> = argv
            .iter()
            .map(|a| a.to_string_lossy().into_owned())
            .collect();
        let _ = writeln!(text, "command: {}", args.join(" "));
        let _ = writeln!(text, "mfe version: {}", env!("CARGO_PKG_VERSION"));
        Manifest { text }
    }

    fn line(&mut self, s: impl AsRef<str>) {
        self.text.push_str(s.as_ref());
        self.text.push('\n');
    }

    fn params(&mut self, label: &str, p: &ModelParams) {
        self.line(format!("[{label}]"));
        self.text.push_str(&render_params(p));
    }

    fn equilibrium(&mut self, eq: &EquilibriumSolution) {
        let r = &eq.report;
        self.line(format!("outer iterations: {}", r.outer_iterations));
        self.line(format!(
            "outer residual: {:e}",
            r.outer_history.last().copied().unwrap_or(f64::NAN)
        ));
        self.line(format!(
            "single value residual: {:e}",
            r.single_value_residual
        ));
        self.line(format!(
            "distribution polish residual: {:e}",
            r.polish_residual
        ));
    }

    fn write(mut self, dir: &Path, started: Instant) -> Result<(), Error> {
        self.line(format!(
            "wall time seconds: {:.3}",
            started.elapsed().as_secs_f64()
        ));
        let path = dir.join("manifest.txt");
        std::fs::write(&path, self.text).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn execute(cli: Cli, argv: &[OsString]) -> Result<(), Error> {
    let started = Instant::now();
    let mut manifest = Manifest::new(argv);
    match cli.command {
        Command::Solve { model, out } => {
            let (p, s) = load_model(&model)?;
            prepare_out(&out)?;
            let eq = solve(&p, &s)?;
            io::write_moments(&out.join("moments.csv"), &eq.moments)?;
            io::write_deciles(&out.join("deciles.csv"), &marriage_rate_by_decile(&eq)?)?;
            io::write_single_dist(&out.join("single_dist.csv"), &eq)?;
            io::write_married_dist(&out.join("married_dist.csv"), &eq)?;
            manifest.params("params", &p);
            manifest.equilibrium(&eq);
            manifest.write(&out, started)
        }
        Command::Simulate {
            model,
            out,
            seed,
            agents,
            periods,
        } => {
            let (p, s) = load_model(&model)?;
            prepare_out(&out)?;
            let eq = solve(&p, &s)?;
            let panel = simulate_panel(&eq, agents, periods, seed);
            io::write_panel(&out.join("panel.csv"), &panel)?;
            manifest.params("params", &p);
            manifest.equilibrium(&eq);
            manifest.line(format!(
                "seed: {seed}\nagents per gender: {agents}\nperiods: {periods}"
            ));
            manifest.line(format!("records: {}", panel.len()));
            manifest.write(&out, started)
        }
        Command::EventStudy { panel, out, window } => {
            let records = io::read_panel(&panel)?;
            prepare_out(&out)?;
            let res = event_study(&records, window.0, window.1)?;
            io::write_event_study(&out.join("event_study.csv"), &res)?;
            manifest.line(format!("window: {}:{}", window.0, window.1));
            manifest.line(format!(
                "observations: m {} f {}",
                res.n_obs[0], res.n_obs[1]
            ));
            manifest.write(&out, started)
        }
        Command::Calibrate {
            model,
            targets,
            out,
            seed,
        } => {
            let (p, s) = load_model(&model)?;
            let (targets, free, mut optimizer) = load_targets(&targets)?;
            if let Some(seed) = seed {
                optimizer.seed = seed;
            }
            prepare_out(&out)?;
            let spec = EstimationSpec {
                free,
                base: p,
                settings: s,
                targets,
                optimizer,
            };
            let res = estimate(&spec)?;
            let fitted = out.join("fitted_params.toml");
            std::fs::write(&fitted, render_params(&res.params)).map_err(|source| Error::Io {
                path: fitted.display().to_string(),
                source,
            })?;
            io::write_residuals(&out.join("residuals.csv"), &res.residuals)?;
            let names: Vec<String> = spec.free.iter().map(|f| f.name.clone()).collect();
            io::write_trace(&out.join("trace.csv"), &names, &res.trace)?;
            manifest.params("start", &spec.base);
            manifest.line(format!("evaluations: {}", res.trace.len()));
            manifest.line(format!("loss: {}", res.loss));
            manifest.write(&out, started)
        }
        Command::Decompose {
            model,
            counterfactual,
            out,
        } => {
            let (p, s) = load_model(&model)?;
            let (mut cf, _) = load_params(&counterfactual)?;
            if let Some(n) = model.grid {
                cf.wages.n_grid = n;
            }
            cf.validate()?;
            prepare_out(&out)?;
            let d = decompose(&p, &cf, &s, DataEndpoints::default())?;
            io::write_decomposition(&out.join("decomposition.csv"), &d)?;
            manifest.params("baseline", &p);
            manifest.params("counterfactual", &cf);
            manifest.write(&out, started)
        }
    }
}

/// Parses `argv` and runs one command; returns the process exit status.
pub fn run(argv: Vec<OsString>) -> u8 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(cli, &argv)),
            Err(e) => {
                eprintln!("mfe: cannot configure {n} threads: {e}");
                return EXIT_USAGE;
            }
        },
        None => execute(cli, &argv),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("mfe: {e}");
            exit_code(&e)
        }
    }
}
