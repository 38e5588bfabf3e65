mod figure;
mod output;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sprt_exact::phasetype::ModelDoc;
use sprt_exact::sim::{self, SimConfig};
use sprt_exact::solver::{bayes_optimal, optimality_region, solve_boundaries, DEFAULT_TOL};
use sprt_exact::sprt::{b_bounds, errors, expected_n, pgf_n, wald_bounds};
use sprt_exact::{Boundaries, Error, ErrorPair, Hypothesis, PenaltySpec, PhaseTypeDist, TestProblem};

use figure::{parse_grid, BayesCosts, Grid};
use output::{Artifact, Cell, Format, Table};

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Numerical(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let text = e.to_string();
        let msg = if text.contains(e.name()) {
            text
        } else {
            format!("{}: {text}", e.name())
        };
        if e.is_validation() {
            CliError::Validation(msg)
        } else {
            CliError::Numerical(msg)
        }
    }
}

#[derive(Parser)]
#[command(name = "sprt-exact", version, about = "Exact SPRT boundaries, errors and sample sizes for phase-type laws")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Defaults to csv for figures and json otherwise.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Subcommand)]
enum Command {
    /// Tilted law, similarity diagonal and jump size.
    Tilt {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Errors at given boundaries, or of Wald's test for target errors.
    Errors {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        bounds: OptBounds,
        #[command(flatten)]
        target: OptTarget,
    },
    /// Boundaries attaining target errors exactly.
    Solve {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        target: Target,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
    },
    /// Expected number of observations under both hypotheses.
    ExpectedN {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        bounds: BoundArgs,
    },
    /// Generating function E z^N under both hypotheses.
    Pgf {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        bounds: BoundArgs,
        /// Points in (0, 1], comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        z: Vec<f64>,
    },
    /// Boundary of the region of attainable errors.
    Region {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 50)]
        grid_size: usize,
    },
    /// Bayes-optimal boundaries.
    Bayes {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        costs: Costs,
        #[arg(long)]
        prior: f64,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Monte Carlo estimates of errors, E N and E z^N.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        bounds: BoundArgs,
        #[arg(long, value_enum)]
        hypothesis: HypArg,
        #[arg(long, default_value_t = 100_000)]
        replications: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',')]
        z: Vec<f64>,
        #[arg(long, default_value_t = 1_000_000)]
        max_steps: u64,
    },
    /// Data behind the figure panels, one CSV per panel.
    #[command(subcommand)]
    Figure(FigureKind),
}

#[derive(Subcommand)]
enum FigureKind {
    /// Solved boundaries with Wald's and the improved bounds.
    Boundaries(Sweep),
    /// max(E0N, E1N) at the solved boundaries.
    ExpectedN(Sweep),
    /// Region curves for rho = 1/6, 1/2, 5/6.
    Region {
        #[arg(long, default_value_t = 2)]
        phases: usize,
        #[arg(long, default_value_t = 50)]
        grid_size: usize,
    },
    /// Bayes-optimal (a, b) per prior.
    BayesAb(BayesSweep),
    /// Bayes-optimal posterior thresholds (a*, b*) per prior.
    BayesPosterior(BayesSweep),
}

#[derive(Args)]
struct Sweep {
    #[arg(long, default_value = "0.3:0.9:25", value_parser = parse_grid)]
    rho_grid: Grid,
    #[arg(long, default_value_t = 2)]
    phases: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha0: f64,
    #[arg(long, default_value_t = 0.025)]
    alpha1: f64,
}

#[derive(Args)]
struct BayesSweep {
    #[arg(long, default_value = "0.3:0.9:25", value_parser = parse_grid)]
    rho_grid: Grid,
    #[arg(long, default_value_t = 2)]
    phases: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.3,0.7")]
    priors: Vec<f64>,
    #[command(flatten)]
    costs: Costs,
}

#[derive(Args)]
struct Costs {
    /// Cost per observation.
    #[arg(long, default_value_t = 0.1)]
    c: f64,
    /// Cost of wrongly rejecting H0.
    #[arg(long, default_value_t = 1.0)]
    c0: f64,
    /// Cost of wrongly rejecting H1.
    #[arg(long, default_value_t = 2.0)]
    c1: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum HypArg {
    H0,
    H1,
}

impl From<HypArg> for Hypothesis {
    fn from(h: HypArg) -> Self {
        match h {
            HypArg::H0 => Hypothesis::H0,
            HypArg::H1 => Hypothesis::H1,
        }
    }
}

#[derive(Clone, Debug)]
struct ErlangArg {
    n: usize,
    lambda: f64,
}

fn parse_erlang(s: &str) -> Result<ErlangArg, String> {
    let (n, lambda) = s.split_once(',').ok_or("expected n,lambda")?;
    Ok(ErlangArg {
        n: n.trim().parse().map_err(|e| format!("n: {e}"))?,
        lambda: lambda.trim().parse().map_err(|e| format!("lambda: {e}"))?,
    })
}

#[derive(Args)]
struct ModelArgs {
    /// Erlang null law as `n,lambda`.
    #[arg(long, value_parser = parse_erlang, conflicts_with_all = ["model", "rho"])]
    erlang: Option<ErlangArg>,
    /// Null law as a JSON model document.
    #[arg(long, conflicts_with = "rho")]
    model: Option<PathBuf>,
    /// Erlang load in (0, 1); sets theta = 1 and lambda0 = rho / (1 - rho).
    #[arg(long, conflicts_with = "theta")]
    rho: Option<f64>,
    /// Number of phases for --rho.
    #[arg(long, default_value_t = 2)]
    phases: usize,
    /// Tilt parameter; defaults to 1.
    #[arg(long)]
    theta: Option<f64>,
}

impl ModelArgs {
    fn problem(&self) -> Result<TestProblem, CliError> {
        let theta = self.theta.unwrap_or(1.0);
        let problem = match (&self.erlang, &self.model, self.rho) {
            (Some(e), _, _) => TestProblem::new(PhaseTypeDist::erlang(e.n, e.lambda)?, theta)?,
            (_, Some(path), _) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Validation(format!("model: {}: {e}", path.display())))?;
                let doc: ModelDoc = serde_json::from_str(&text)
                    .map_err(|e| CliError::Validation(format!("model: {}: {e}", path.display())))?;
                TestProblem::new(doc.build()?, theta)?
            }
            (_, _, Some(rho)) => TestProblem::erlang_rho(self.phases, rho)?,
            _ => {
                return Err(CliError::Validation(
                    "model: one of --erlang, --model or --rho is required".into(),
                ))
            }
        };
        Ok(problem)
    }
}

#[derive(Args)]
struct BoundArgs {
    /// Lower boundary, negative.
    #[arg(long, allow_negative_numbers = true)]
    a: f64,
    /// Upper boundary, positive.
    #[arg(long)]
    b: f64,
}

impl BoundArgs {
    fn get(&self) -> Result<Boundaries, CliError> {
        Ok(Boundaries::new(self.a, self.b)?)
    }
}

#[derive(Args)]
struct OptBounds {
    #[arg(long, allow_negative_numbers = true, requires = "b")]
    a: Option<f64>,
    #[arg(long, requires = "a")]
    b: Option<f64>,
}

#[derive(Args)]
struct Target {
    #[arg(long)]
    alpha0: f64,
    #[arg(long)]
    alpha1: f64,
}

impl Target {
    fn get(&self) -> Result<ErrorPair, CliError> {
        Ok(ErrorPair::new(self.alpha0, self.alpha1)?)
    }
}

#[derive(Args)]
struct OptTarget {
    #[arg(long, requires = "alpha1", conflicts_with = "a")]
    alpha0: Option<f64>,
    #[arg(long, requires = "alpha0", conflicts_with = "a")]
    alpha1: Option<f64>,
}

fn single_row(pairs: &[(&str, f64)]) -> Artifact {
    let mut table = Table::new(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    table.push(pairs.iter().map(|p| Cell::Num(p.1)).collect());
    let obj: serde_json::Map<String, Value> = pairs.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
    Artifact::both(Value::Object(obj), table)
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<Value, CliError> {
    serde_json::to_value(value).map_err(|e| CliError::Io(e.to_string()))
}

fn run(command: &Command) -> Result<Artifact, CliError> {
    match command {
        Command::Tilt { model } => {
            let problem = model.problem()?;
            let t = problem.tilted();
            Ok(Artifact::json(json!({
                "theta": t.theta,
                "d": t.d,
                "g0_theta": t.g0_theta,
                "delta": t.delta.iter().collect::<Vec<_>>(),
                "null": problem.ph0().to_doc(),
                "alternative": t.tilted.to_doc(),
            })))
        }
        Command::Errors { model, bounds, target } => {
            let problem = model.problem()?;
            if let (Some(a0), Some(a1)) = (target.alpha0, target.alpha1) {
                let target = ErrorPair::new(a0, a1)?;
                let (wa, wb) = wald_bounds(&target)?;
                let (lo, hi) = b_bounds(&problem, &target)?;
                let e = errors(&problem, &Boundaries::new(wa, wb)?)?;
                return Ok(single_row(&[
                    ("target_alpha0", a0),
                    ("target_alpha1", a1),
                    ("wald_a", wa),
                    ("wald_b", wb),
                    ("b_low", lo),
                    ("b_high", hi),
                    ("alpha0", e.alpha0),
                    ("alpha1", e.alpha1),
                ]));
            }
            let (Some(a), Some(b)) = (bounds.a, bounds.b) else {
                return Err(CliError::Validation(
                    "boundaries: give --a and --b, or --alpha0 and --alpha1".into(),
                ));
            };
            let e = errors(&problem, &Boundaries::new(a, b)?)?;
            Ok(single_row(&[("a", a), ("b", b), ("alpha0", e.alpha0), ("alpha1", e.alpha1)]))
        }
        Command::Solve { model, target, tol } => {
            let problem = model.problem()?;
            let bounds = solve_boundaries(&problem, &target.get()?, *tol)?;
            let e = errors(&problem, &bounds)?;
            Ok(single_row(&[
                ("a", bounds.a),
                ("b", bounds.b),
                ("achieved_alpha0", e.alpha0),
                ("achieved_alpha1", e.alpha1),
                ("E0N", expected_n(&problem, &bounds, Hypothesis::H0)?),
                ("E1N", expected_n(&problem, &bounds, Hypothesis::H1)?),
            ]))
        }
        Command::ExpectedN { model, bounds } => {
            let problem = model.problem()?;
            let bounds = bounds.get()?;
            Ok(single_row(&[
                ("a", bounds.a),
                ("b", bounds.b),
                ("E0N", expected_n(&problem, &bounds, Hypothesis::H0)?),
                ("E1N", expected_n(&problem, &bounds, Hypothesis::H1)?),
            ]))
        }
        Command::Pgf { model, bounds, z } => {
            let problem = model.problem()?;
            let bounds = bounds.get()?;
            let mut table = Table::new(&["z", "H0", "H1"]);
            for &z in z {
                table.push(vec![
                    Cell::Num(z),
                    Cell::Num(pgf_n(&problem, &bounds, z, Hypothesis::H0)?),
                    Cell::Num(pgf_n(&problem, &bounds, z, Hypothesis::H1)?),
                ]);
            }
            Ok(Artifact::table(table))
        }
        Command::Region { model, grid_size } => {
            let region = optimality_region(&model.problem()?, *grid_size)?;
            let mut table = Table::new(&["branch", "index", "alpha0", "alpha1"]);
            for (name, curve) in [("lower", &region.lower_curve), ("upper", &region.upper_curve)] {
                for (k, p) in curve.iter().enumerate() {
                    table.push(vec![
                        Cell::Text(name.into()),
                        Cell::Int(k as u64),
                        Cell::Num(p.alpha0),
                        Cell::Num(p.alpha1),
                    ]);
                }
            }
            Ok(Artifact::both(to_json(&region)?, table))
        }
        Command::Bayes { model, costs, prior, tol } => {
            let problem = model.problem()?;
            let spec = PenaltySpec::new(*prior, costs.c, costs.c0, costs.c1)?;
            let out = bayes_optimal(&problem, &spec, *tol)?;
            let mut value = to_json(&out)?;
            value["unique"] = json!(out.is_unique());
            Ok(Artifact::json(value))
        }
        Command::Simulate {
            model,
            bounds,
            hypothesis,
            replications,
            seed,
            z,
            max_steps,
        } => {
            let problem = model.problem()?;
            let config = SimConfig {
                replications: *replications,
                seed: *seed,
                max_steps: *max_steps,
            };
            let out = sim::run(&problem, &bounds.get()?, (*hypothesis).into(), &config, z)?;
            Ok(Artifact::json(to_json(&out)?))
        }
        Command::Figure(kind) => figure(kind).map(Artifact::table),
    }
}

fn figure(kind: &FigureKind) -> Result<Table, CliError> {
    let table = match kind {
        FigureKind::Boundaries(s) => figure::boundaries(&s.rho_grid, s.phases, &ErrorPair::new(s.alpha0, s.alpha1)?),
        FigureKind::ExpectedN(s) => {
            figure::expected_n_panel(&s.rho_grid, s.phases, &ErrorPair::new(s.alpha0, s.alpha1)?)
        }
        FigureKind::Region { phases, grid_size } => figure::region(*phases, *grid_size),
        FigureKind::BayesAb(s) | FigureKind::BayesPosterior(s) => {
            let costs = BayesCosts {
                c: s.costs.c,
                c0: s.costs.c0,
                c1: s.costs.c1,
            };
            let posterior = matches!(kind, FigureKind::BayesPosterior(_));
            figure::bayes(&s.rho_grid, s.phases, &s.priors, &costs, posterior)
        }
    };
    Ok(table?)
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("SPRT_EXACT_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Validation(format!("SPRT_EXACT_THREADS: expected a count, got {raw:?}")))?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Io(format!("SPRT_EXACT_THREADS: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let default_format = match cli.command {
        Command::Figure(_) => Format::Csv,
        _ => Format::Json,
    };
    let result = configure_threads()
        .and_then(|_| run(&cli.command))
        .and_then(|artifact| artifact.render(cli.format.unwrap_or(default_format)))
        .and_then(|bytes| output::write(cli.output.as_deref(), &bytes));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
