//! Run reports and CSV artifacts.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::Result;
use crate::local_time::{contact_set_diagnostics, ContactDiagnostics, ContactInputs};
use crate::matrix::{mean_and_se, PathMatrix};
use crate::picard::{
    fixed_point_residual, verify_apriori, AprioriReport, PicardReport, Problem, Solution,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize)]
pub struct GridInfo {
    pub horizon: f64,
    pub steps: usize,
    pub paths: usize,
    pub dim: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub grid: GridInfo,
    pub y0: f64,
    pub y0_se: f64,
    pub fixed_point_residual: f64,
    pub apriori: AprioriReport,
    pub local_time_diagnostics: ContactDiagnostics,
    pub picard: PicardReport,
}

/// Contact-set diagnostics of the last path-wise value `Y^ >= S` and `K~`.
pub fn local_time_diagnostics(
    problem: &Problem,
    solution: &Solution,
) -> Result<ContactDiagnostics> {
    let m = problem.paths();
    let n = problem.steps();
    let d = problem.dim();
    let sigma = PathMatrix::from_fn(m, n * d, |p, c| problem.barrier.sigma(p, c / d)[c % d]);
    let s = problem.barrier.to_matrix();
    let drift = problem.barrier.drift_matrix();
    contact_set_diagnostics(&ContactInputs {
        y: &solution.last.y_hat,
        s: &s,
        z: &solution.state.z,
        sigma: &sigma,
        k: &solution.state.k,
        drivers: &solution.last.drivers,
        drift: &drift,
        dim: d,
        dt: problem.grid().dt(),
    })
}

pub fn build_report(
    config: &RunConfig,
    problem: &Problem,
    solution: &Solution,
) -> Result<RunReport> {
    let last = solution
        .report
        .final_record()
        .expect("at least one iteration");
    Ok(RunReport {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        grid: GridInfo {
            horizon: problem.grid().horizon(),
            steps: problem.steps(),
            paths: problem.paths(),
            dim: problem.dim(),
            seed: problem.ensemble.seed(),
        },
        y0: last.y0,
        y0_se: last.y0_se,
        fixed_point_residual: fixed_point_residual(&solution.state, problem, config.solver.ito)?,
        apriori: verify_apriori(&solution.state, problem)?,
        local_time_diagnostics: local_time_diagnostics(problem, solution)?,
        picard: solution.report.clone(),
    })
}

/// `t, mean Y, SE, mean K, SE` per node, 17 significant digits.
pub fn solution_csv(problem: &Problem, solution: &Solution) -> String {
    let mut out = String::from("t,mean_y,se_y,mean_k,se_k\n");
    for i in 0..=problem.steps() {
        let (y, ys) = mean_and_se(&solution.state.y.column(i));
        let (k, ks) = mean_and_se(&solution.state.k.column(i));
        let t = problem.grid().time(i);
        writeln!(out, "{t:.16e},{y:.16e},{ys:.16e},{k:.16e},{ks:.16e}").expect("string write");
    }
    out
}

pub fn convergence_csv(report: &PicardReport) -> String {
    let mut out = String::from("iteration,distance,ratio,flat_off,projection_residual,y0,y0_se\n");
    for r in &report.iterations {
        let ratio = r.ratio.map(|v| format!("{v:.16e}")).unwrap_or_default();
        writeln!(
            out,
            "{},{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.iteration, r.distance, ratio, r.flat_off, r.projection_residual, r.y0, r.y0_se
        )
        .expect("string write");
    }
    out
}

/// Write `report.json`, `solution.csv` and `convergence.csv` into `dir`.
pub fn write_artifacts(
    dir: &Path,
    report: &RunReport,
    problem: &Problem,
    solution: &Solution,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(report)?,
    )?;
    std::fs::write(dir.join("solution.csv"), solution_csv(problem, solution))?;
    std::fs::write(
        dir.join("convergence.csv"),
        convergence_csv(&solution.report),
    )?;
    Ok(())
}
