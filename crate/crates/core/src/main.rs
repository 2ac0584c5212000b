use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rbsde::config::RunConfig;
use rbsde::grid::PathEnsemble;
use rbsde::output::{build_report, write_artifacts};
use rbsde::picard::run;
use rbsde::skorohod::{reverse_to_k, skorohod_reflect, ReflectionInput};
use rbsde::verify::{check_replay, run_suite, Sizes};
use rbsde::Error;

#[derive(Parser)]
#[command(
    name = "rbsde",
    version,
    about = "Reflected BSDE solver with resistance"
)]
struct Cli {
    /// Worker threads; defaults to all cores. Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one configured problem and write report.json, solution.csv, convergence.csv.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Run a check suite and print one JSON line per check.
    Verify {
        suite: String,
        /// Use the published acceptance sizes instead of the quick ones.
        #[arg(long)]
        full: bool,
        /// Replay a dumped ensemble and check it as well.
        #[arg(long)]
        ensemble: Option<PathBuf>,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// One solve per value on matched seeds; CSV to stdout or `--out`.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Reflect a single path: CSV with column `x` in, `i,x,l,y,k` out.
    Skorohod {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        eta: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepParam {
    #[value(name = "N")]
    N,
    #[value(name = "M")]
    M,
    #[value(name = "c2")]
    C2,
    #[value(name = "basis_degree")]
    BasisDegree,
}

fn fail(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(1)
}

fn load(config: &Path, seed: Option<u64>) -> rbsde::Result<RunConfig> {
    let mut cfg = RunConfig::from_file(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn emit(out: Option<&Path>, text: &str) -> rbsde::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn solve(config: &Path, out: Option<PathBuf>, seed: Option<u64>) -> rbsde::Result<bool> {
    let cfg = load(config, seed)?;
    let dir = out
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("output"));
    let problem = cfg.problem()?;
    let solution = run(&problem, &cfg.solver)?;
    let report = build_report(&cfg, &problem, &solution)?;
    write_artifacts(&dir, &report, &problem, &solution)?;
    println!(
        "converged={} iterations={} y0={:.6} se={:.6} out={}",
        solution.report.converged,
        solution.report.iteration_count,
        report.y0,
        report.y0_se,
        dir.display()
    );
    Ok(solution.report.converged)
}

fn verify(
    suite: &str,
    full: bool,
    ensemble: Option<PathBuf>,
    seed: Option<u64>,
) -> rbsde::Result<bool> {
    let mut sizes = if full {
        Sizes::acceptance()
    } else {
        Sizes::quick()
    };
    if let Some(s) = seed {
        sizes.seed = s;
    }
    let mut checks = run_suite(suite, &sizes)?;
    if let Some(path) = ensemble {
        let ens = PathEnsemble::read_csv(BufReader::new(std::fs::File::open(path)?))?;
        checks.extend(check_replay(&ens)?);
    }
    let mut all = true;
    for c in &checks {
        all &= c.passed;
        println!("{}", serde_json::to_string(c)?);
    }
    println!(
        "{}",
        serde_json::json!({ "suite": suite, "checks": checks.len(), "failed": checks.iter().filter(|c| !c.passed).count(), "passed": all })
    );
    Ok(all)
}

fn sweep(
    config: &Path,
    param: SweepParam,
    values: &[f64],
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> rbsde::Result<bool> {
    let base = load(config, seed)?;
    let mut csv = String::from("value,y0,se,iterations,final_distance,max_ratio,converged\n");
    let mut all = true;
    for &v in values {
        let mut cfg = base.clone();
        let bad = |key: &str| Error::Config {
            key: key.to_string(),
            message: format!("sweep value {v} out of range"),
        };
        match param {
            SweepParam::N => {
                if v < 1.0 || v.fract() != 0.0 {
                    return Err(bad("N"));
                }
                cfg.steps = v as usize;
            }
            SweepParam::M => {
                if v < 2.0 || v.fract() != 0.0 {
                    return Err(bad("M"));
                }
                cfg.solver.basis.ridge *= v / cfg.paths as f64;
                cfg.paths = v as usize;
            }
            SweepParam::C2 => {
                if !(v >= 0.0) {
                    return Err(bad("resistance"));
                }
                cfg.spec.driver.resistance = v;
            }
            SweepParam::BasisDegree => {
                if !(0.0..=7.0).contains(&v) || v.fract() != 0.0 {
                    return Err(bad("basis_degree"));
                }
                cfg.solver.basis.degree = v as usize;
            }
        }
        let problem = cfg.problem()?;
        let sol = run(&problem, &cfg.solver)?;
        let last = sol.report.final_record().expect("at least one iteration");
        let ratio = sol
            .report
            .max_ratio_from(1)
            .map(|r| format!("{r:.16e}"))
            .unwrap_or_default();
        all &= sol.report.converged;
        csv.push_str(&format!(
            "{v},{:.16e},{:.16e},{},{:.16e},{ratio},{}\n",
            last.y0, last.y0_se, sol.report.iteration_count, last.distance, sol.report.converged
        ));
    }
    emit(out.as_deref(), &csv)?;
    Ok(all)
}

fn skorohod(input: &Path, eta: f64, out: Option<PathBuf>) -> rbsde::Result<()> {
    let reader = BufReader::new(std::fs::File::open(input)?);
    let mut x = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (n == 0 && line == "x") {
            continue;
        }
        x.push(line.parse::<f64>().map_err(|_| Error::Config {
            key: "x".into(),
            message: format!("line {} is not a number: '{line}'", n + 1),
        })?);
    }
    let res = skorohod_reflect(&ReflectionInput::new(eta, x.clone())?)?;
    let k = reverse_to_k(&res.l)?;
    let mut csv = String::from("i,x,l,y,k\n");
    for i in 0..x.len() {
        csv.push_str(&format!(
            "{i},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            x[i], res.l[i], res.y[i], k[i]
        ));
    }
    emit(out.as_deref(), &csv)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let status = match cli.command {
        Command::Solve {
            config,
            out,
            seed_override,
        } => solve(&config, out, seed_override),
        Command::Verify {
            suite,
            full,
            ensemble,
            seed_override,
        } => verify(&suite, full, ensemble, seed_override),
        Command::Sweep {
            config,
            param,
            values,
            out,
            seed_override,
        } => sweep(&config, param, &values, out, seed_override),
        Command::Skorohod { input, eta, out } => skorohod(&input, eta, out).map(|()| true),
    };
    match status {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => fail(&e),
    }
}
