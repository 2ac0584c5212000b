//! Picard iteration for reflected BSDEs whose driver depends on the
//! reflecting process.
//!
//! One application of the map takes `(Y, Z, K)` to `(Y~, Z~, K~)`:
//!
//! 1. evaluate the driver along `(Y, Z, K^flat)` and reflect the reversed
//!    forward path of every sample with the Skorohod map, giving `K~` and the
//!    non-adapted value `Y^ >= S`;
//! 2. project `Y^` slice by slice to get the adapted `Y~`;
//! 3. project `K~` (optional and dual optional) and read `Z~` off the
//!    martingale increments of `Y~`.
//!
//! Iterates are compared in the weighted norm
//! `||Y||_alpha^2 + ||Z||_alpha^2 + beta sup_t E|K_t|^2`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barrier::{make_barrier, BarrierKind, BarrierProcess};
use crate::driver::{DriverSpec, Terminal};
use crate::error::{invalid, Error, Result};
use crate::grid::{sample_brownian, PathEnsemble, TimeGrid};
use crate::matrix::{mean_and_se, PathMatrix};
use crate::projection::{ProjectedProcess, ProjectionEngine, ProjectionKind, RegressionBasis};
use crate::skorohod::{build_reversed_input, k_from_double_max, skorohod_reflect};

/// Contraction factor of the map under exact projections.
pub const EXACT_CONTRACTION: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Data of a reflected BSDE, independent of any sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub name: String,
    pub driver: DriverSpec,
    pub terminal: Terminal,
    /// Added to every terminal value; used for perturbation studies.
    #[serde(default)]
    pub terminal_shift: f64,
    pub barrier: BarrierKind,
}

/// A [`ProblemSpec`] sampled on an ensemble.
#[derive(Clone, Debug)]
pub struct Problem {
    pub spec: ProblemSpec,
    pub ensemble: PathEnsemble,
    pub barrier: BarrierProcess,
    pub xi: Vec<f64>,
}

impl Problem {
    /// Sample barrier and terminal on `ensemble`; rejects `xi < S_T` on any path.
    pub fn new(spec: ProblemSpec, ensemble: PathEnsemble) -> Result<Self> {
        let barrier = make_barrier(&spec.barrier, &ensemble)?;
        let xi = spec
            .terminal
            .sample(&ensemble, &barrier, spec.terminal_shift)?;
        let n = ensemble.steps();
        for (m, x) in xi.iter().enumerate() {
            let s = barrier.value(m, n);
            if !(*x >= s) {
                return Err(Error::Admissibility {
                    path: m,
                    xi: *x,
                    barrier: s,
                });
            }
        }
        Ok(Self {
            spec,
            ensemble,
            barrier,
            xi,
        })
    }

    pub fn sample(
        spec: ProblemSpec,
        grid: &TimeGrid,
        paths: usize,
        dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let ensemble = sample_brownian(grid, paths, dim, seed)?;
        Self::new(spec, ensemble)
    }

    pub fn paths(&self) -> usize {
        self.ensemble.paths()
    }

    pub fn steps(&self) -> usize {
        self.ensemble.steps()
    }

    pub fn dim(&self) -> usize {
        self.ensemble.dim()
    }

    pub fn grid(&self) -> &TimeGrid {
        self.ensemble.grid()
    }

    /// `max(1, sqrt(E xi^2))`, the unit for default tolerances.
    pub fn scale(&self) -> f64 {
        let ms = self.xi.iter().map(|x| x * x).sum::<f64>() / self.xi.len() as f64;
        ms.sqrt().max(1.0)
    }
}

/// Ensemble triple `(Y, Z, K)` plus the projections of `K`.
#[derive(Clone, Debug, PartialEq)]
pub struct SolutionState {
    /// `M x (N + 1)`.
    pub y: PathMatrix,
    /// `M x (N d)`, step-major then coordinate.
    pub z: PathMatrix,
    /// `M x (N + 1)`, nondecreasing per path with `K[.][0] = 0`.
    pub k: PathMatrix,
    pub k_flat: ProjectedProcess,
    pub k_dual: ProjectedProcess,
    /// Martingale increments `dM_i` (`M x N`) of the decomposition of `Y`.
    pub martingale: PathMatrix,
    pub dim: usize,
}

impl SolutionState {
    #[inline]
    pub fn z_at(&self, m: usize, i: usize) -> &[f64] {
        &self.z.row(m)[i * self.dim..(i + 1) * self.dim]
    }

    /// `Y^0 = E[xi | F_t]` slice by slice, `Z^0 = 0`, `K^0 = 0`.
    pub fn initial(problem: &Problem, engine: &ProjectionEngine<'_>) -> Result<Self> {
        let m = problem.paths();
        let n = problem.steps();
        let d = problem.dim();
        let mut y = PathMatrix::zeros(m, n + 1);
        for i in 0..n {
            y.set_column(i, &engine.cond_expect(&problem.xi, i)?);
        }
        y.set_column(n, &problem.xi);
        let zeros = PathMatrix::zeros(m, n + 1);
        Ok(Self {
            y,
            z: PathMatrix::zeros(m, n * d),
            k: zeros.clone(),
            k_flat: ProjectedProcess {
                values: zeros.clone(),
                kind: ProjectionKind::OptionalProjection,
            },
            k_dual: ProjectedProcess {
                values: zeros,
                kind: ProjectionKind::DualOptionalProjection,
            },
            martingale: PathMatrix::zeros(m, n),
            dim: d,
        })
    }
}

/// Weights of the contraction norm and the auxiliary constants used to derive them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormWeights {
    pub alpha: f64,
    pub beta: f64,
    pub eps: f64,
    pub eps_prime: f64,
}

impl NormWeights {
    /// `eps = 8 C1`, `eps' = 1`, `alpha = 1 + 8 C1^2 + C2`,
    /// `beta = 1 / (16 (4 T C1^2 + 1))`.
    pub fn from_constants(c1: f64, c2: f64, horizon: f64) -> Self {
        Self {
            alpha: 1.0 + 8.0 * c1 * c1 + c2,
            beta: 1.0 / (16.0 * (4.0 * horizon * c1 * c1 + 1.0)),
            eps: 8.0 * c1,
            eps_prime: 1.0,
        }
    }
}

/// How the stochastic integral in the reversed path is discretized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ItoSum {
    /// Left-endpoint sums `sum Z_k dB_k` of the regressed integrand.
    Integrand,
    /// Sums of the discrete martingale increments `dM_k` of the previous
    /// iterate, of which `Z_k dB_k` is the projection on `dB_k`.
    #[default]
    Increments,
}

impl ItoSum {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "integrand" => Ok(Self::Integrand),
            "increments" => Ok(Self::Increments),
            other => Err(Error::Unknown {
                what: "ito sum",
                name: other.to_string(),
            }),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Integrand => "integrand",
            Self::Increments => "increments",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub basis: RegressionBasis,
    /// Absolute fixed-point tolerance; `None` means `1e-4 * problem scale`.
    pub tol_fix: Option<f64>,
    /// Relative flat-off tolerance, scaled by `E[K_T] (1 + sup |S|)`.
    pub tol_flat: f64,
    /// Bound on `max_i E[((S_i - Y_i)^+)^2]` relative to the squared problem scale.
    pub tol_proj: f64,
    pub max_iter: usize,
    pub c2t_max: f64,
    pub ito: ItoSum,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
}

impl SolverConfig {
    pub fn new(basis: RegressionBasis) -> Self {
        Self {
            basis,
            tol_fix: None,
            tol_flat: 1e-3,
            tol_proj: 1e-2,
            max_iter: 50,
            c2t_max: 0.05,
            ito: ItoSum::default(),
            alpha: None,
            beta: None,
        }
    }

    pub fn weights(&self, problem: &Problem) -> NormWeights {
        let mut w = NormWeights::from_constants(
            problem.spec.driver.c1(),
            problem.spec.driver.c2(),
            problem.grid().horizon(),
        );
        if let Some(a) = self.alpha {
            w.alpha = a;
        }
        if let Some(b) = self.beta {
            w.beta = b;
        }
        w
    }

    pub fn tol_fix_for(&self, problem: &Problem) -> f64 {
        self.tol_fix.unwrap_or(1e-4 * problem.scale())
    }
}

/// By-products of one application of the map.
#[derive(Clone, Debug)]
pub struct Mapped {
    pub state: SolutionState,
    /// Non-adapted value `Y^`, `>= S` on every path.
    pub y_hat: PathMatrix,
    /// Driver values on each step (`M x N`) along the input state.
    pub drivers: PathMatrix,
    /// `E sum_i (Y^_i - S_i)(K~_{i+1} - K~_i)`.
    pub flat_off: f64,
    /// `max_i E[((S_i - Y~_i)^+)^2]`.
    pub violation_mass: f64,
    pub y0: f64,
    pub y0_se: f64,
}

/// Driver values along `(Y, Z, K^flat)` and the Ito sums `I_i = sum_{k<i} Z_k dB_k`
/// (or `sum_{k<i} dM_k`).
fn path_inputs(
    problem: &Problem,
    state: &SolutionState,
    ito: ItoSum,
    m: usize,
    drivers: &mut [f64],
    stoch_int: &mut [f64],
) {
    let n = problem.steps();
    let grid = problem.grid();
    let f = &problem.spec.driver;
    stoch_int[0] = 0.0;
    for i in 0..n {
        let z = state.z_at(m, i);
        drivers[i] = f.eval(
            grid.time(i),
            state.y.get(m, i),
            z,
            state.k_flat.values.get(m, i),
        );
        let dw: f64 = match ito {
            ItoSum::Integrand => z
                .iter()
                .zip(problem.ensemble.step_increments(m, i))
                .map(|(a, b)| a * b)
                .sum(),
            ItoSum::Increments => state.martingale.get(m, i),
        };
        stoch_int[i + 1] = stoch_int[i] + dw;
    }
}

fn check_state(problem: &Problem, state: &SolutionState) -> Result<()> {
    let m = problem.paths();
    let n = problem.steps();
    let d = problem.dim();
    let ok = state.y.rows() == m
        && state.y.cols() == n + 1
        && state.k.rows() == m
        && state.k.cols() == n + 1
        && state.k_flat.values.rows() == m
        && state.k_flat.values.cols() == n + 1
        && state.z.rows() == m
        && state.z.cols() == n * d
        && state.martingale.rows() == m
        && state.martingale.cols() == n
        && state.dim == d;
    if ok {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "state does not match a problem with {m} paths, {n} steps and dimension {d}"
        )))
    }
}

/// One application of the Picard map.
pub fn apply_l(
    state: &SolutionState,
    problem: &Problem,
    engine: &ProjectionEngine<'_>,
    ito: ItoSum,
) -> Result<Mapped> {
    check_state(problem, state)?;
    let m = problem.paths();
    let n = problem.steps();
    let dt = problem.grid().dt();

    let mut y_hat = PathMatrix::zeros(m, n + 1);
    let mut k_new = PathMatrix::zeros(m, n + 1);
    let mut target = PathMatrix::zeros(m, n + 1);
    let mut drivers = PathMatrix::zeros(m, n);

    let per_path: Vec<Result<f64>> = y_hat
        .par_rows_mut()
        .zip(k_new.par_rows_mut())
        .zip(target.par_rows_mut())
        .zip(drivers.par_rows_mut())
        .enumerate()
        .map(|(p, (((yh, kk), tg), fv))| {
            let mut stoch_int = vec![0.0; n + 1];
            path_inputs(problem, state, ito, p, fv, &mut stoch_int);
            let s = problem.barrier.path(p);
            let xi = problem.xi[p];
            let input = build_reversed_input(xi, fv, s, &stoch_int, dt).map_err(|e| match e {
                Error::Admissibility { xi, barrier, .. } => Error::Admissibility {
                    path: p,
                    xi,
                    barrier,
                },
                other => other,
            })?;
            let out = skorohod_reflect(&input)?;
            kk.copy_from_slice(&out.k);
            let k_total = out.k[n];
            let mut driver_tail = 0.0;
            for i in (0..=n).rev() {
                if i < n {
                    driver_tail += fv[i] * dt;
                }
                yh[i] = s[i] + out.y[n - i];
                tg[i] = xi + driver_tail + (k_total - out.k[i]);
            }
            let mut flat = 0.0;
            for i in 0..n {
                flat += (yh[i] - s[i]) * (kk[i + 1] - kk[i]);
            }
            Ok(flat)
        })
        .collect();
    let mut flat_sum = 0.0;
    for r in per_path {
        flat_sum += r?;
    }
    let flat_off = flat_sum / m as f64;

    // Y~ = E[xi + int_t^T f ds + K~_T - K~_t | F_t]; the Ito tail has zero conditional mean.
    let mut y_new = PathMatrix::zeros(m, n + 1);
    for i in 0..n {
        y_new.set_column(i, &engine.cond_expect(&target.column(i), i)?);
    }
    y_new.set_column(n, &problem.xi);

    let k_flat = engine.optional_projection(&k_new)?;
    let k_dual = engine.dual_optional_projection(&k_new)?;

    // dM~_i = dY~_i + dK~^o_i + f_i dt
    let increments = PathMatrix::from_fn(m, n, |p, i| {
        y_new.get(p, i + 1) - y_new.get(p, i)
            + (k_dual.values.get(p, i + 1) - k_dual.values.get(p, i))
            + drivers.get(p, i) * dt
    });
    let z_new = engine.extract_z(&increments)?;

    let violation_mass = (0..=n)
        .map(|i| {
            (0..m)
                .map(|p| {
                    let v = (problem.barrier.value(p, i) - y_new.get(p, i)).max(0.0);
                    v * v
                })
                .sum::<f64>()
                / m as f64
        })
        .fold(0.0, f64::max);
    let (y0, y0_se) = mean_and_se(&target.column(0));

    Ok(Mapped {
        state: SolutionState {
            y: y_new,
            z: z_new,
            k: k_new,
            k_flat,
            k_dual,
            martingale: increments,
            dim: problem.dim(),
        },
        y_hat,
        drivers,
        flat_off,
        violation_mass,
        y0,
        y0_se,
    })
}

/// `||(Y,Z,K)_a - (Y,Z,K)_b||_{alpha,beta}` with left-endpoint time sums and
/// ensemble means.
pub fn weighted_distance(
    a: &SolutionState,
    b: &SolutionState,
    weights: &NormWeights,
    grid: &TimeGrid,
) -> Result<f64> {
    if !a.y.same_shape(&b.y) || !a.z.same_shape(&b.z) || !a.k.same_shape(&b.k) || a.dim != b.dim {
        return Err(Error::ShapeMismatch("states have different shapes".into()));
    }
    let m = a.y.rows();
    let n = a.y.cols() - 1;
    if n != grid.steps() {
        return Err(Error::ShapeMismatch("state and grid disagree".into()));
    }
    let d = a.dim;
    let dt = grid.dt();
    let w: Vec<f64> = (0..n)
        .map(|i| (weights.alpha * grid.time(i)).exp() * dt)
        .collect();
    let per_path: Vec<(f64, f64)> = (0..m)
        .into_par_iter()
        .map(|p| {
            let (ya, yb) = (a.y.row(p), b.y.row(p));
            let (za, zb) = (a.z.row(p), b.z.row(p));
            let mut sy = 0.0;
            let mut sz = 0.0;
            for i in 0..n {
                let dy = ya[i] - yb[i];
                sy += w[i] * dy * dy;
                let mut dz2 = 0.0;
                for j in 0..d {
                    let dz = za[i * d + j] - zb[i * d + j];
                    dz2 += dz * dz;
                }
                sz += w[i] * dz2;
            }
            (sy, sz)
        })
        .collect();
    let (mut y_norm, mut z_norm) = (0.0, 0.0);
    for (sy, sz) in per_path {
        y_norm += sy;
        z_norm += sz;
    }
    y_norm /= m as f64;
    z_norm /= m as f64;
    let k_norm = sup_mean_square(&a.k, &b.k);
    Ok((y_norm + z_norm + weights.beta * k_norm).sqrt())
}

/// `max_i E|A_i - B_i|^2`.
pub fn sup_mean_square(a: &PathMatrix, b: &PathMatrix) -> f64 {
    let m = a.rows();
    (0..a.cols())
        .map(|i| {
            (0..m)
                .map(|p| {
                    let d = a.get(p, i) - b.get(p, i);
                    d * d
                })
                .sum::<f64>()
                / m as f64
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub distance: f64,
    pub ratio: Option<f64>,
    pub flat_off: f64,
    pub projection_residual: f64,
    pub y0: f64,
    pub y0_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardReport {
    pub problem: String,
    pub weights: NormWeights,
    pub tol_fix: f64,
    pub tol_flat: f64,
    pub tol_proj: f64,
    pub c2t: f64,
    pub exact_contraction_bound: f64,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    pub iteration_count: usize,
    pub flat_off_passed: bool,
    pub projection_passed: bool,
    pub mean_terminal_k: f64,
    pub warnings: Vec<String>,
}

impl PicardReport {
    pub fn final_record(&self) -> Option<&IterationRecord> {
        self.iterations.last()
    }

    /// Largest measured contraction ratio from iteration `from` on.
    pub fn max_ratio_from(&self, from: usize) -> Option<f64> {
        self.iterations
            .iter()
            .filter(|r| r.iteration >= from)
            .filter_map(|r| r.ratio)
            .fold(None, |acc: Option<f64>, r| {
                Some(acc.map_or(r, |a| a.max(r)))
            })
    }
}

/// Result of a Picard run, converged or not.
#[derive(Clone, Debug)]
pub struct Solution {
    pub state: SolutionState,
    pub last: Mapped,
    pub report: PicardReport,
}

/// Iterate the map from the standard initial state. Returns the final state
/// and report whether or not the fixed-point tolerance was reached.
pub fn run(problem: &Problem, config: &SolverConfig) -> Result<Solution> {
    if config.max_iter == 0 {
        return Err(invalid("max_iter must be at least 1"));
    }
    let engine = ProjectionEngine::new(&problem.ensemble, &problem.barrier, config.basis.clone())?;
    let weights = config.weights(problem);
    let tol_fix = config.tol_fix_for(problem);
    let c2t = problem.spec.driver.c2() * problem.grid().horizon();
    let mut warnings = Vec::new();
    if c2t > config.c2t_max {
        warnings.push(format!(
            "C2 * T = {c2t} exceeds the configured smallness threshold {}; contraction is not guaranteed",
            config.c2t_max
        ));
    }
    let mut state = SolutionState::initial(problem, &engine)?;
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut converged = false;
    let mut last = None;
    for k in 1..=config.max_iter {
        let mapped = apply_l(&state, problem, &engine, config.ito)?;
        let distance = weighted_distance(&mapped.state, &state, &weights, problem.grid())?;
        let ratio = records
            .last()
            .filter(|r| r.distance > 0.0)
            .map(|r| distance / r.distance);
        records.push(IterationRecord {
            iteration: k,
            distance,
            ratio,
            flat_off: mapped.flat_off,
            projection_residual: mapped.violation_mass,
            y0: mapped.y0,
            y0_se: mapped.y0_se,
        });
        state = mapped.state.clone();
        last = Some(mapped);
        if distance < tol_fix {
            converged = true;
            break;
        }
    }
    let last = last.expect("at least one iteration");
    let mean_terminal_k = state.k.column_mean(problem.steps());
    let tol_flat = config.tol_flat * mean_terminal_k * (1.0 + problem.barrier.sup_abs());
    let tol_proj = config.tol_proj * problem.scale().powi(2);
    let flat_off_passed = last.flat_off <= tol_flat;
    let projection_passed = last.violation_mass <= tol_proj;
    if !projection_passed {
        warnings.push(format!(
            "post-projection barrier violation {} exceeds {tol_proj}",
            last.violation_mass
        ));
    }
    let report = PicardReport {
        problem: problem.spec.name.clone(),
        weights,
        tol_fix,
        tol_flat,
        tol_proj,
        c2t,
        exact_contraction_bound: EXACT_CONTRACTION,
        iteration_count: records.len(),
        iterations: records,
        converged,
        flat_off_passed,
        projection_passed,
        mean_terminal_k,
        warnings,
    };
    Ok(Solution {
        state,
        last,
        report,
    })
}

/// Like [`run`], but non-convergence is an error carrying the report.
pub fn solve(problem: &Problem, config: &SolverConfig) -> Result<Solution> {
    let solution = run(problem, config)?;
    if solution.report.converged {
        Ok(solution)
    } else {
        Err(Error::NonConvergence(Box::new(solution.report)))
    }
}

/// Re-derive `K` from `(Y, Z, K^flat)` through the double-max representation
/// and return `sqrt(max_i E|K_new - K|^2)`.
pub fn fixed_point_residual(state: &SolutionState, problem: &Problem, ito: ItoSum) -> Result<f64> {
    check_state(problem, state)?;
    let m = problem.paths();
    let n = problem.steps();
    let dt = problem.grid().dt();
    let rederived = PathMatrix::from_fn(m, n + 1, |_, _| 0.0);
    let mut rederived = rederived;
    rederived.par_rows_mut().enumerate().for_each(|(p, row)| {
        let mut drivers = vec![0.0; n];
        let mut stoch_int = vec![0.0; n + 1];
        path_inputs(problem, state, ito, p, &mut drivers, &mut stoch_int);
        let k = k_from_double_max(
            problem.xi[p],
            &drivers,
            problem.barrier.path(p),
            &stoch_int,
            dt,
        );
        row.copy_from_slice(&k);
    });
    Ok(sup_mean_square(&rederived, &state.k).sqrt())
}

/// Both sides of the a priori estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AprioriReport {
    /// `E(sup_t Y_t^2 + int |Z|^2 + K_T^2)`.
    pub lhs: f64,
    /// `E(xi^2 + int (f^0)^2 + (sup_t S_t^+)^2)`.
    pub rhs: f64,
    pub ratio: f64,
}

pub fn verify_apriori(state: &SolutionState, problem: &Problem) -> Result<AprioriReport> {
    check_state(problem, state)?;
    let m = problem.paths();
    let n = problem.steps();
    let grid = problem.grid();
    let dt = grid.dt();
    let lhs_paths: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|p| {
            let sup_y2 = state.y.row(p).iter().fold(0.0_f64, |a, v| a.max(v * v));
            let z2: f64 = state.z.row(p).iter().map(|v| v * v).sum::<f64>() * dt;
            let kt = state.k.get(p, n);
            sup_y2 + z2 + kt * kt
        })
        .collect();
    let lhs = lhs_paths.iter().sum::<f64>() / m as f64;
    let f0: f64 = (0..n)
        .map(|i| problem.spec.driver.f0(grid.time(i), problem.dim()).powi(2) * dt)
        .sum();
    let xi2 = problem.xi.iter().map(|x| x * x).sum::<f64>() / m as f64;
    let rhs = xi2 + f0 + problem.barrier.sup_positive_second_moment();
    let ratio = if rhs > 0.0 { lhs / rhs } else { f64::NAN };
    Ok(AprioriReport { lhs, rhs, ratio })
}

/// `E(sup_t |dY_t|^2 + int |dZ|^2 + |dK_T|)` between two solutions.
pub fn solution_difference(a: &SolutionState, b: &SolutionState, dt: f64) -> Result<f64> {
    if !a.y.same_shape(&b.y) || !a.z.same_shape(&b.z) || !a.k.same_shape(&b.k) {
        return Err(Error::ShapeMismatch("states have different shapes".into()));
    }
    let m = a.y.rows();
    let n = a.y.cols() - 1;
    let per_path: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|p| {
            let sup =
                a.y.row(p)
                    .iter()
                    .zip(b.y.row(p))
                    .fold(0.0_f64, |acc, (u, v)| acc.max((u - v) * (u - v)));
            let z: f64 =
                a.z.row(p)
                    .iter()
                    .zip(b.z.row(p))
                    .map(|(u, v)| (u - v) * (u - v))
                    .sum::<f64>()
                    * dt;
            sup + z + (a.k.get(p, n) - b.k.get(p, n)).abs()
        })
        .collect();
    Ok(per_path.iter().sum::<f64>() / m as f64)
}

/// Re-solve with `xi + delta` for each `delta` and report the solution
/// difference against the unperturbed run.
pub fn continuous_dependence(
    problem: &Problem,
    config: &SolverConfig,
    deltas: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let base = run(problem, config)?;
    let dt = problem.grid().dt();
    deltas
        .iter()
        .map(|&delta| {
            let mut spec = problem.spec.clone();
            spec.terminal_shift += delta;
            let perturbed = Problem::new(spec, problem.ensemble.clone())?;
            let sol = run(&perturbed, config)?;
            Ok((delta, solution_difference(&sol.state, &base.state, dt)?))
        })
        .collect()
}
