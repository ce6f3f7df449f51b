use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use bankforge::costmodel::{self, Dataset, FeatureVector, GbtModel, GbtParams, Objective, SELECTED_FEATURES};
use bankforge::rewrite::{single_op, Op};
use bankforge::search::{solve, SolveOptions};
use bankforge::sim::{replay, ReplayOptions};
use bankforge::{Error, ProblemFile, SchemeFile};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bankforge", version, about = "Memory banking for affine loop programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search for banking schemes of a problem file.
    Solve(SolveArgs),
    /// Replay a problem under a scheme file and report port conflicts.
    Verify(VerifyArgs),
    /// Print the strength-reduced datapath of one constant operation.
    Rewrite(RewriteArgs),
    /// Resource model utilities.
    #[command(subcommand)]
    Cost(CostCommand),
}

#[derive(Args)]
struct SolveArgs {
    problem: PathBuf,
    /// Write the scheme file here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of ranked schemes to keep (0 keeps all).
    #[arg(long, default_value_t = 10)]
    top: usize,
    /// Overrides the problem's objective.
    #[arg(long)]
    objective: Option<Objective>,
    #[arg(long)]
    no_multidim: bool,
    /// Seed of the resource model's training data and boosting.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct VerifyArgs {
    problem: PathBuf,
    scheme: PathBuf,
    /// Also replay every alternative.
    #[arg(long)]
    all: bool,
    /// Seed for sampled cycles when enumeration exceeds the budget.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Resolved accesses before sampling kicks in.
    #[arg(long, default_value_t = 1_000_000)]
    budget: u64,
}

#[derive(Args)]
struct RewriteArgs {
    #[arg(long = "mod", group = "op", value_name = "M")]
    modulo: Option<u64>,
    #[arg(long, group = "op", value_name = "M")]
    div: Option<u64>,
    #[arg(long, group = "op", value_name = "C")]
    mul: Option<u64>,
    /// Input width in bits.
    #[arg(long, default_value_t = 16)]
    width: u32,
}

#[derive(Subcommand)]
enum CostCommand {
    /// Fit one target's pipeline model on a dataset CSV.
    Train {
        data: PathBuf,
        #[arg(long, default_value = "lut")]
        target: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Predict one target from a model and a feature vector (or list of them).
    Predict { model: PathBuf, features: PathBuf },
    /// Learning curves over repeated 70/30 splits.
    Curves {
        data: PathBuf,
        #[arg(long, default_value = "lut")]
        target: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75,1.0")]
        fractions: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the seeded synthetic dataset as CSV.
    Synth {
        #[arg(long, default_value_t = costmodel::DEFAULT_ROWS)]
        rows: usize,
        #[arg(long, default_value_t = 30)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure carrying its process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<Error>() {
            Some(Error::NoSolution) => 2,
            Some(Error::BoundsBudgetExceeded { .. }) => 4,
            _ => 1,
        };
        Failure { code, error }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

type Outcome = Result<(), Failure>;

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut o = std::io::stdout().lock();
            o.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                o.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

fn load_problem(path: &Path) -> anyhow::Result<ProblemFile> {
    ProblemFile::load(path).with_context(|| format!("loading {}", path.display()))
}

fn cmd_solve(a: SolveArgs) -> Outcome {
    let problem = load_problem(&a.problem)?;
    let mut opts = SolveOptions::from_problem(&problem);
    if let Some(o) = a.objective {
        opts.objective = o;
    }
    if a.no_multidim {
        opts.budget.multidim = false;
    }
    if let Some(seed) = a.seed {
        opts = opts.with_seed(seed);
    }
    let report = solve(&problem.program(), &opts)?;
    eprintln!("{}", report.summary());
    let file = SchemeFile::from_report(&problem.memory.id, &report, a.top)?;
    emit(a.out.as_deref(), &file.to_json()?)?;
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> Outcome {
    let problem = load_problem(&a.problem)?;
    let schemes = SchemeFile::load(&a.scheme).with_context(|| format!("loading {}", a.scheme.display()))?;
    if schemes.memory != problem.memory.id {
        return Err(anyhow::Error::from(Error::MismatchedMemory(schemes.memory, problem.memory.id)).into());
    }
    let mut entries = vec![&schemes.chosen];
    if a.all {
        entries.extend(&schemes.alternatives);
    }
    let opts = ReplayOptions { budget: a.budget, seed: a.seed, record: 0 };
    let cfg = problem.analysis_config();
    let program = problem.program();
    let mut failed = false;
    for (i, e) in entries.iter().enumerate() {
        let ports = e.ports.unwrap_or(problem.memory.ports);
        let out = replay(&program, e, ports, Some(&problem.concrete_bounds), &cfg, &opts)?;
        let label = if i == 0 { "chosen".to_string() } else { format!("alternative {i}") };
        let scope = if out.exhaustive { "exhaustive" } else { "sampled" };
        match &out.conflict {
            None => println!("{label}: ok ({} cycles, {} accesses, {scope})", out.cycles, out.resolved),
            Some(c) => {
                failed = true;
                println!("{label}: {}", c.render());
                println!("{}", serde_json::to_string_pretty(c).map_err(anyhow::Error::from)?);
            }
        }
    }
    if failed {
        return Err(Failure { code: 3, error: anyhow::anyhow!("verification failed") });
    }
    Ok(())
}

fn cmd_rewrite(a: RewriteArgs) -> Outcome {
    let (op, c) = match (a.modulo, a.div, a.mul) {
        (Some(m), _, _) => (Op::Mod, m),
        (_, Some(m), _) => (Op::Div, m),
        (_, _, Some(c)) => (Op::Mul, c),
        _ => return Err(anyhow::anyhow!("one of --mod, --div or --mul is required").into()),
    };
    let dag = single_op(op, c, a.width)?;
    print!("{}", dag.render());
    let census = dag.census();
    println!(
        "census: add {} sub {} shift {} and {} mux {} mul {} div {} mod {}",
        census.add, census.sub, census.shift, census.and, census.mux, census.mul, census.div, census.modulo
    );
    const EXHAUSTIVE_BITS: u32 = 24;
    let end = 1i64 << a.width.min(EXHAUSTIVE_BITS);
    let reference = |x: i64| match op {
        Op::Mod => x % c as i64,
        Op::Div => x / c as i64,
        _ => x * c as i64,
    };
    let mismatch = (0..end).find(|&x| dag.resolve(&[x]).0[0] as i64 != reference(x));
    match mismatch {
        Some(x) => {
            println!("MISMATCH at x={x}: datapath {} vs {}", dag.resolve(&[x]).0[0], reference(x));
            Err(Failure { code: 3, error: anyhow::anyhow!("rewrite is not equivalent") })
        }
        None if a.width <= EXHAUSTIVE_BITS => {
            println!("equivalent over [0,{end})");
            Ok(())
        }
        None => {
            println!("equivalent over [0,{end}); wider inputs not checked");
            Ok(())
        }
    }
}

fn load_dataset(path: &Path) -> anyhow::Result<Dataset> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(Dataset::read_csv(f)?)
}

fn params(seed: Option<u64>) -> GbtParams {
    let mut p = GbtParams::default();
    if let Some(s) = seed {
        p.random_state = s;
    }
    p
}

fn cmd_cost(c: CostCommand) -> Outcome {
    match c {
        CostCommand::Train { data, target, out, seed } => {
            let ds = load_dataset(&data)?;
            let m = costmodel::fit_pipeline(&ds.rows, ds.target(&target)?, &params(seed), &target, SELECTED_FEATURES)?;
            emit(Some(&out), &m.to_json()?)?;
        }
        CostCommand::Predict { model, features } => {
            let m = GbtModel::from_json(
                &fs::read_to_string(&model).with_context(|| format!("reading {}", model.display()))?,
            )?;
            let text = fs::read_to_string(&features).with_context(|| format!("reading {}", features.display()))?;
            let rows: Vec<FeatureVector> = match serde_json::from_str::<FeatureVector>(&text) {
                Ok(f) => vec![f],
                Err(_) => bankforge::io::parse_json(&text)?,
            };
            for f in &rows {
                if f.0.len() != costmodel::FEATURE_NAMES.len() {
                    return Err(anyhow::Error::from(Error::DimensionMismatch(format!(
                        "expected {} features, got {}",
                        costmodel::FEATURE_NAMES.len(),
                        f.0.len()
                    )))
                    .into());
                }
                println!("{}", m.predict(f));
            }
        }
        CostCommand::Curves { data, target, out, fractions, repeats, seed } => {
            let ds = load_dataset(&data)?;
            if repeats == 0 || fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
                return Err(anyhow::anyhow!("fractions must lie in (0, 1] and repeats must be positive").into());
            }
            let points = costmodel::cross_validate(
                &ds.rows,
                ds.target(&target)?,
                &GbtParams::default(),
                SELECTED_FEATURES,
                &fractions,
                repeats,
                seed,
            )?;
            let f = fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            costmodel::write_curves(&points, f)?;
            for p in &points {
                eprintln!("fraction {:.2}: train R2 {:.3}, test R2 {:.3}", p.fraction, p.mean_train_r2, p.mean_test_r2);
            }
        }
        CostCommand::Synth { rows, seed, out } => {
            let ds = costmodel::synth::generate(rows, seed);
            let mut buf = Vec::new();
            ds.write_csv(&mut buf)?;
            emit(out.as_deref(), &String::from_utf8(buf).map_err(anyhow::Error::from)?)?;
        }
    }
    Ok(())
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("BANKFORGE_THREADS") {
        let n: usize = v.parse().with_context(|| format!("BANKFORGE_THREADS={v} is not a number"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let run = || -> Outcome {
        configure_threads()?;
        match cli.command {
            Command::Solve(a) => cmd_solve(a),
            Command::Verify(a) => cmd_verify(a),
            Command::Rewrite(a) => cmd_rewrite(a),
            Command::Cost(c) => cmd_cost(c),
        }
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
