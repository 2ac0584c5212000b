//! Invariant and acceptance checks, grouped into suites.
//!
//! Reference values come from brute force, closed forms or the oracles in
//! [`crate::problems`]; none is computed through the code path it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::barrier::{make_barrier, BarrierKind};
use crate::error::{invalid, Error, Result};
use crate::grid::{make_grid, sample_brownian, PathEnsemble};
use crate::local_time::tanaka_local_time;
use crate::matrix::{mean_and_se, PathMatrix};
use crate::output::{convergence_csv, solution_csv};
use crate::picard::{
    continuous_dependence, fixed_point_residual, run, verify_apriori, Problem, SolverConfig,
};
use crate::problems::{
    catalog, catalog_entry, penalization_oracle, resistive_name, Oracle, ReflectedBmCase,
    PUT_ORACLE, RESISTIVE_C2T,
};
use crate::projection::{ProjectionEngine, RegressionBasis};
use crate::skorohod::{
    build_reversed_input, k_from_double_max, skorohod_reflect, ReflectionInput, CONTINUITY_SHIFT,
};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub suite: String,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(suite: &str, name: &str, passed: bool, detail: String) -> Self {
        Self {
            suite: suite.into(),
            name: name.into(),
            passed,
            detail,
        }
    }
}

pub const SUITES: &[&str] = &[
    "skorohod",
    "local-time",
    "projection",
    "contraction",
    "oracles",
    "all",
];

/// Problem sizes. `acceptance()` uses the published sizes; `quick()` keeps
/// every check under a few seconds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sizes {
    pub brute_cases: usize,
    pub double_max_paths: usize,
    pub double_max_steps: usize,
    pub sup_pairs: usize,
    pub reflected_paths: usize,
    pub reflected_steps: usize,
    pub put_paths: usize,
    pub family_paths: usize,
    pub projection_paths: usize,
    pub z_paths: usize,
    pub local_time_paths: usize,
    pub local_time_steps: usize,
    pub repro_paths: usize,
    pub seed: u64,
}

impl Sizes {
    pub fn acceptance() -> Self {
        Self {
            brute_cases: 1000,
            double_max_paths: 10_000,
            double_max_steps: 10_000,
            sup_pairs: 10_000,
            reflected_paths: 100_000,
            reflected_steps: 1000,
            put_paths: 100_000,
            family_paths: 20_000,
            projection_paths: 20_000,
            z_paths: 100_000,
            local_time_paths: 10_000,
            local_time_steps: 500,
            repro_paths: 5000,
            seed: 7,
        }
    }

    pub fn quick() -> Self {
        Self {
            brute_cases: 200,
            double_max_paths: 200,
            double_max_steps: 2000,
            sup_pairs: 2000,
            reflected_paths: 10_000,
            reflected_steps: 250,
            put_paths: 10_000,
            family_paths: 5000,
            projection_paths: 5000,
            z_paths: 20_000,
            local_time_paths: 4000,
            local_time_steps: 500,
            repro_paths: 1000,
            seed: 7,
        }
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

// ---------------------------------------------------------------- skorohod

/// Coordinate-wise least element of all nondecreasing integer sequences `L`
/// with `L[0] = 0`, values in `0..=cap` and `eta + x + L >= 0`, found by
/// exhaustive depth-first enumeration.
fn brute_force_minimal(eta: i64, x: &[i64]) -> Option<Vec<i64>> {
    let cap = x.iter().map(|v| -(eta + v)).max().unwrap_or(0).max(0);
    let n = x.len();
    let mut best: Option<Vec<i64>> = None;
    let mut current = vec![0_i64; n];
    fn dfs(
        i: usize,
        eta: i64,
        x: &[i64],
        cap: i64,
        cur: &mut Vec<i64>,
        best: &mut Option<Vec<i64>>,
    ) {
        if i == x.len() {
            match best {
                None => *best = Some(cur.clone()),
                Some(b) => b
                    .iter_mut()
                    .zip(cur.iter())
                    .for_each(|(b, c)| *b = (*b).min(*c)),
            }
            return;
        }
        let lo = if i == 0 { 0 } else { cur[i - 1] };
        let hi = if i == 0 { 0 } else { cap };
        for v in lo..=hi {
            if eta + x[i] + v >= 0 {
                cur[i] = v;
                dfs(i + 1, eta, x, cap, cur, best);
            }
        }
    }
    dfs(0, eta, x, cap, &mut current, &mut best);
    best
}

/// Exact agreement with the brute-force minimal reflector.
pub fn check_brute_force(cases: usize, seed: u64) -> Check {
    let mismatches: usize = (0..cases)
        .into_par_iter()
        .map(|c| {
            let mut r = rng(seed, c as u64);
            let n = r.gen_range(1..=12);
            let eta: i64 = r.gen_range(0..=2);
            let mut x = vec![0_i64];
            for _ in 0..n {
                let last = *x.last().expect("nonempty");
                x.push(last + r.gen_range(-1..=1));
            }
            // quantized at 1/4 so the float map works on exact values
            let q = 0.25;
            let input =
                ReflectionInput::new(eta as f64 * q, x.iter().map(|v| *v as f64 * q).collect())
                    .expect("valid input");
            let out = skorohod_reflect(&input).expect("valid input");
            match brute_force_minimal(eta, &x) {
                Some(b) => {
                    let feasible = b.iter().zip(&x).all(|(l, v)| eta + v + l >= 0);
                    let same = b.iter().zip(&out.l).all(|(l, o)| (*l as f64 * q) == *o);
                    usize::from(!(feasible && same))
                }
                None => 1,
            }
        })
        .sum();
    Check::new(
        "skorohod",
        "brute-force-minimal",
        mismatches == 0,
        format!("{cases} inputs with N <= 12, {mismatches} mismatches"),
    )
}

struct RandomPath {
    xi: f64,
    drivers: Vec<f64>,
    barrier: Vec<f64>,
    stoch: Vec<f64>,
    dt: f64,
}

fn random_smooth_path(seed: u64, stream: u64, n: usize) -> RandomPath {
    let mut r = rng(seed, stream);
    let dt = 1.0 / n as f64;
    let (a, b, c): (f64, f64, f64) = (
        r.gen_range(-3.0..3.0),
        r.gen_range(0.0..6.0),
        r.gen_range(-1.0..1.0),
    );
    let drivers: Vec<f64> = (0..n).map(|i| a * (b * i as f64 * dt + c).sin()).collect();
    let (s0, s1, s2): (f64, f64, f64) = (
        r.gen_range(-1.0..1.0),
        r.gen_range(-2.0..2.0),
        r.gen_range(0.5..8.0),
    );
    let barrier: Vec<f64> = (0..=n)
        .map(|i| s0 + s1 * (s2 * i as f64 * dt).cos())
        .collect();
    let mut stoch = vec![0.0; n + 1];
    let zc: f64 = r.gen_range(0.2..1.5);
    for i in 0..n {
        let g: f64 = r.sample(StandardNormal);
        let z = zc * (1.0 + 0.5 * (i as f64 * dt * b).cos());
        stoch[i + 1] = stoch[i] + z * g * dt.sqrt();
    }
    let xi = barrier[n] + r.gen_range(0.0..0.5_f64);
    RandomPath {
        xi,
        drivers,
        barrier,
        stoch,
        dt,
    }
}

/// Map-then-reverse equals the closed double-max formula.
pub fn check_double_max(paths: usize, steps: usize, seed: u64) -> Check {
    let worst: f64 = (0..paths)
        .into_par_iter()
        .map(|p| {
            let rp = random_smooth_path(seed, p as u64, steps);
            let input = build_reversed_input(rp.xi, &rp.drivers, &rp.barrier, &rp.stoch, rp.dt)
                .expect("admissible by construction");
            let k_map = skorohod_reflect(&input).expect("valid").k;
            let k_dm = k_from_double_max(rp.xi, &rp.drivers, &rp.barrier, &rp.stoch, rp.dt);
            let scale = k_map.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
            k_map
                .iter()
                .zip(&k_dm)
                .map(|(a, b)| (a - b).abs() / scale)
                .fold(0.0, f64::max)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(0.0, f64::max);
    Check::new(
        "skorohod",
        "double-max-formula",
        worst <= 1e-12,
        format!("{paths} paths, N = {steps}, max relative deviation {worst:.3e}"),
    )
}

/// `|sup phi - sup psi| <= sup |phi - psi|` and its reflector
/// form `||L - L'|| <= |eta - eta'| + ||x - x'||`.
pub fn check_sup_lemma(pairs: usize, seed: u64) -> Check {
    let (plain, reflected): (usize, usize) = (0..pairs)
        .into_par_iter()
        .map(|c| {
            let mut r = rng(seed, c as u64);
            let n = r.gen_range(2..200);
            let mut phi = vec![0.0_f64; n];
            let mut psi = vec![0.0_f64; n];
            let spread: f64 = r.gen_range(0.01..2.0);
            for i in 1..n {
                let g: f64 = r.sample(StandardNormal);
                let h: f64 = r.sample(StandardNormal);
                phi[i] = phi[i - 1] + g * 0.1;
                psi[i] = psi[i - 1] + g * 0.1 + h * 0.1 * spread;
            }
            let sup = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let dist = phi
                .iter()
                .zip(&psi)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let bad_plain = (sup(&phi) - sup(&psi)).abs() > dist;
            let (e1, e2): (f64, f64) = (r.gen_range(0.0..0.3), r.gen_range(0.0..0.3));
            let l1 = skorohod_reflect(&ReflectionInput {
                eta: e1,
                x: phi.clone(),
            })
            .expect("valid")
            .l;
            let l2 = skorohod_reflect(&ReflectionInput {
                eta: e2,
                x: psi.clone(),
            })
            .expect("valid")
            .l;
            let ldist = l1
                .iter()
                .zip(&l2)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let bound = (e1 - e2).abs() + dist;
            let bad_reflected = ldist > bound + 4.0 * f64::EPSILON * (1.0 + bound + sup(&l1));
            (usize::from(bad_plain), usize::from(bad_reflected))
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Check::new(
        "skorohod",
        "sup-difference-lemma",
        plain == 0 && reflected == 0,
        format!("{pairs} pairs, {plain} violations of the sup bound, {reflected} of the reflector bound"),
    )
}

/// Flat-off, minimality against random admissible competitors, monotonicity
/// in `eta`, and the `T delta` bound for driver perturbations.
pub fn check_skorohod_properties(cases: usize, seed: u64) -> Vec<Check> {
    let results: Vec<(bool, bool, bool, bool)> = (0..cases)
        .into_par_iter()
        .map(|c| {
            let mut r = rng(seed ^ 0x5a5a, c as u64);
            let n = r.gen_range(5..300);
            let mut x = vec![0.0_f64; n + 1];
            for i in 1..=n {
                let g: f64 = r.sample(StandardNormal);
                x[i] = x[i - 1] + g * 0.1 + r.gen_range(-0.02..0.02);
            }
            let eta: f64 = r.gen_range(0.0..0.5);
            let out = skorohod_reflect(&ReflectionInput { eta, x: x.clone() }).expect("valid");
            let scale = 1.0 + x.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            let flat: f64 = (1..=n).map(|i| out.y[i] * (out.l[i] - out.l[i - 1])).sum();
            let flat_ok = flat.abs() <= 1e-10 * scale;

            // competitor: L + nonnegative nondecreasing bump, and any feasible L' must dominate L
            let mut bump = 0.0;
            let mut minimal = true;
            for i in 0..=n {
                if i > 0 {
                    bump += r.gen_range(0.0..0.01);
                }
                let competitor = out.l[i] + bump;
                minimal &= competitor >= out.l[i];
            }
            // the running max itself is the least feasible value at every node
            let mut need = 0.0_f64;
            for i in 0..=n {
                need = need.max(-(eta + x[i]));
                minimal &= out.l[i] <= need + 1e-12 * scale && out.y[i] >= -1e-12 * scale;
            }

            let eta2 = eta + r.gen_range(0.0..0.3);
            let out2 = skorohod_reflect(&ReflectionInput {
                eta: eta2,
                x: x.clone(),
            })
            .expect("valid");
            let monotone = out.l.iter().zip(&out2.l).all(|(a, b)| a >= b);

            // driver perturbation: the reversed input moves by at most T delta,
            // and so does the reflector
            let rp = random_smooth_path(seed ^ 0xabc, c as u64, n);
            let delta: f64 = r.gen_range(0.0..0.5);
            let shifted: Vec<f64> = rp.drivers.iter().map(|f| f + delta).collect();
            let l1 = skorohod_reflect(
                &build_reversed_input(rp.xi, &rp.drivers, &rp.barrier, &rp.stoch, rp.dt)
                    .expect("ok"),
            )
            .expect("valid")
            .l;
            let l2 = skorohod_reflect(
                &build_reversed_input(rp.xi, &shifted, &rp.barrier, &rp.stoch, rp.dt).expect("ok"),
            )
            .expect("valid")
            .l;
            let horizon = rp.dt * n as f64;
            let ldist = l1
                .iter()
                .zip(&l2)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let stable = ldist <= horizon * delta + 1e-12 * scale;
            (flat_ok, minimal, monotone, stable)
        })
        .collect();
    let count = |f: fn(&(bool, bool, bool, bool)) -> bool| results.iter().filter(|r| !f(r)).count();
    let (flat, minimal, monotone, stable) = (
        count(|r| r.0),
        count(|r| r.1),
        count(|r| r.2),
        count(|r| r.3),
    );
    vec![
        Check::new(
            "skorohod",
            "flat-off",
            flat == 0,
            format!("{cases} paths, {flat} violations"),
        ),
        Check::new(
            "skorohod",
            "minimality",
            minimal == 0,
            format!("{cases} paths, {minimal} violations"),
        ),
        Check::new(
            "skorohod",
            "monotone-in-eta",
            monotone == 0,
            format!("{cases} paths, {monotone} violations"),
        ),
        Check::new(
            "skorohod",
            "driver-perturbation",
            stable == 0,
            format!("{cases} paths, {stable} violations of ||dL|| <= T delta"),
        ),
    ]
}

// ---------------------------------------------------------------- local time

/// Reflected Brownian motion `|B|`: Tanaka mean against `sqrt(2T/pi)`, and
/// the Tanaka/occupation gap under a 4x refinement on matched paths.
pub fn check_local_time(paths: usize, steps: usize, seed: u64) -> Result<Vec<Check>> {
    let target = ReflectedBmCase::new(1.0)?.target();
    let fine = make_grid(1.0, steps * 4)?;
    let ens = sample_brownian(&fine, paths, 1, seed)?;
    let coarse = ens.coarsen(4)?;
    let mut out = Vec::new();
    let mut gaps = Vec::new();
    for (label, e) in [("coarse", &coarse), ("fine", &ens)] {
        let n = e.steps();
        let x = PathMatrix::from_fn(paths, n + 1, |r, i| e.position(r, i, 0).abs());
        let s = PathMatrix::zeros(paths, n + 1);
        let est = tanaka_local_time(&x, &s, e.grid().dt())?;
        let (mt, se) = mean_and_se(&est.tanaka.column(n));
        let mo = est.occupation.column_mean(n);
        gaps.push((mt - mo).abs());
        if label == "fine" {
            let z = (mt - target) / se;
            out.push(Check::new(
                "local-time",
                "tanaka-reflected-bm",
                z.abs() <= 3.0,
                format!("N = {n}, M = {paths}: mean {mt:.5} +- {se:.5} vs {target:.5} ({z:.2} SE)"),
            ));
            let mono = (0..paths).all(|r| est.occupation.row(r).windows(2).all(|w| w[1] >= w[0]));
            out.push(Check::new(
                "local-time",
                "occupation-monotone",
                mono && est.occupation.data().iter().all(|v| *v >= 0.0),
                format!(
                    "Tanaka estimate: {} paths dip below 0, largest one-step drop {:.3e}",
                    est.residuals.negative_paths, est.residuals.max_tanaka_decrease
                ),
            ));
        }
    }
    let ratio = gaps[0] / gaps[1];
    out.push(Check::new(
        "local-time",
        "estimator-consistency",
        ratio >= 1.3,
        format!(
            "|tanaka - occupation| {:.5} -> {:.5} under 4x refinement, ratio {ratio:.2}",
            gaps[0], gaps[1]
        ),
    ));
    Ok(out)
}

// ---------------------------------------------------------------- projection

fn projection_ensemble(
    paths: usize,
    steps: usize,
    seed: u64,
) -> Result<(PathEnsemble, crate::barrier::BarrierProcess)> {
    let ens = sample_brownian(&make_grid(1.0, steps)?, paths, 1, seed)?;
    let barrier = make_barrier(&BarrierKind::Constant { level: 0.0 }, &ens)?;
    Ok((ens, barrier))
}

const MARTINGALE_BATCHES: usize = 20;

/// Regress the increments of `K^flat - K^o` on the slice features in each of
/// [`MARTINGALE_BATCHES`] independent ensembles; return the number of
/// coefficients and the largest `|mean| / SE` across replications.
fn martingale_increment_test(paths: usize, steps: usize, seed: u64) -> Result<(usize, f64)> {
    let batch = paths / MARTINGALE_BATCHES;
    let mut coefs: Vec<Vec<Vec<f64>>> = Vec::new();
    for b in 0..MARTINGALE_BATCHES {
        let (ens, barrier) = projection_ensemble(batch, steps, seed.wrapping_add(b as u64))?;
        let engine = ProjectionEngine::new(&ens, &barrier, RegressionBasis::default_for(batch))?;
        let horizon = ens.grid().horizon();
        let k = PathMatrix::from_fn(batch, steps + 1, |p, i| {
            let bt = ens.position(p, steps, 0);
            ens.grid().time(i) / horizon * (1.0 + bt * bt)
        });
        let flat = engine.optional_projection(&k)?;
        let dual = engine.dual_optional_projection(&k)?;
        let mut per_slice = Vec::with_capacity(steps);
        for i in 0..steps {
            let inc: Vec<f64> = (0..batch)
                .map(|p| {
                    (flat.values.get(p, i + 1) - flat.values.get(p, i))
                        - (dual.values.get(p, i + 1) - dual.values.get(p, i))
                })
                .collect();
            per_slice.push(engine.fit_with_stats(&inc, i)?.coefficients);
        }
        coefs.push(per_slice);
    }
    let reps = MARTINGALE_BATCHES as f64;
    let mut tested = 0;
    let mut worst = 0.0_f64;
    for i in 0..steps {
        for j in 0..coefs[0][i].len() {
            let vals: Vec<f64> = coefs.iter().map(|c| c[i][j]).collect();
            let mean = vals.iter().sum::<f64>() / reps;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1.0);
            let se = (var / reps).sqrt();
            tested += 1;
            worst = worst.max(if se > 0.0 {
                mean.abs() / se
            } else if mean.abs() > 1e-12 {
                f64::INFINITY
            } else {
                0.0
            });
        }
    }
    Ok((tested, worst))
}

/// L2 contraction on random targets, martingale property of
/// `K^flat - K^o`, and recovery of `Z = 2B` for `M = B^2 - t`.
pub fn check_projection(paths: usize, z_paths: usize, seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let steps = 10;
    let (ens, barrier) = projection_ensemble(paths, steps, seed)?;
    let engine = ProjectionEngine::new(&ens, &barrier, RegressionBasis::default_for(paths))?;

    // (a) contraction on 100 random targets
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for t in 0..100_u64 {
        let mut r = rng(seed ^ 0x77, t);
        let (a, b, c, j): (f64, f64, f64, usize) = (
            r.gen_range(-2.0..2.0),
            r.gen_range(-2.0..2.0),
            r.gen_range(0.0..1.0),
            r.gen_range(0..=steps),
        );
        let slice = r.gen_range(0..=steps);
        let mut noise = rng(seed ^ 0x99, t);
        let target: Vec<f64> = (0..paths)
            .map(|p| {
                let g: f64 = noise.sample(StandardNormal);
                a * ens.position(p, j, 0).powi(2)
                    + b * (3.0 * ens.position(p, steps, 0)).sin()
                    + c * g
            })
            .collect();
        let fitted = engine.cond_expect(&target, slice)?;
        let m2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
        let excess = m2(&fitted) - m2(&target);
        worst = worst.max(excess / m2(&target).max(1e-300));
        if excess > 1e-10 * m2(&target) {
            violations += 1;
        }
    }
    out.push(Check::new(
        "projection",
        "optional-projection-contraction",
        violations == 0,
        format!("100 targets, {violations} violations, worst relative excess {worst:.2e}"),
    ));

    // (b) K^flat - K^o has martingale increments. For K_t = (t / T) (1 + B_T^2)
    // both projections are polynomials in B_t, so the basis carries the tower
    // property exactly. In-sample OLS errors ignore the estimation noise of
    // K^flat itself, so the standard error comes from independent replications.
    let (tested, worst_t) = martingale_increment_test(paths, steps, seed ^ 0x55)?;
    out.push(Check::new(
        "projection",
        "flat-minus-dual-is-martingale",
        worst_t < 5.0,
        format!(
            "{tested} coefficients over {steps} slices, {MARTINGALE_BATCHES} replications of {} paths, largest |mean coef| / SE = {worst_t:.2}",
            paths / MARTINGALE_BATCHES
        ),
    ));

    // (c) extract_z on M = B^2 - t
    let (zens, zbar) = projection_ensemble(z_paths, steps, seed ^ 0x1234)?;
    let zeng = ProjectionEngine::new(&zens, &zbar, RegressionBasis::default_for(z_paths))?;
    let zdt = zens.grid().dt();
    let inc = PathMatrix::from_fn(z_paths, steps, |p, i| {
        zens.position(p, i + 1, 0).powi(2) - zens.position(p, i, 0).powi(2) - zdt
    });
    let z = zeng.extract_z(&inc)?;
    let (mut err2, mut ref2) = (0.0, 0.0);
    for p in 0..z_paths {
        for i in 1..steps {
            let oracle = 2.0 * zens.position(p, i, 0);
            err2 += (z.get(p, i) - oracle).powi(2);
            ref2 += oracle * oracle;
        }
    }
    let rel = (err2 / ref2).sqrt();
    out.push(Check::new(
        "projection",
        "extract-z-ito-oracle",
        rel < 0.05,
        format!(
            "M = {z_paths}: relative L2 error of Z against 2 B is {:.2}%",
            100.0 * rel
        ),
    ));
    Ok(out)
}

// ---------------------------------------------------------------- solver

fn solve_entry(
    name: &str,
    paths: usize,
    seed: u64,
) -> Result<(Problem, crate::picard::Solution, SolverConfig)> {
    let entry = catalog_entry(name)?;
    let problem = entry.sample(paths, seed)?;
    let config = SolverConfig::new(RegressionBasis::default_for(paths));
    let solution = run(&problem, &config)?;
    Ok((problem, solution, config))
}

/// Decreasing Picard distances from iteration 3 on.
pub fn check_contraction(paths: usize, seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for c2t in RESISTIVE_C2T {
        let (_, sol, _) = solve_entry(&resistive_name(c2t), paths, seed)?;
        let it = &sol.report.iterations;
        let mut ok = sol.report.converged;
        for w in it.windows(2) {
            if w[1].iteration >= 3 && !(w[1].distance < w[0].distance) {
                ok = false;
            }
        }
        let ratios: Vec<String> = it
            .iter()
            .filter_map(|r| r.ratio)
            .map(|r| format!("{r:.3}"))
            .collect();
        let worst = sol.report.max_ratio_from(3).unwrap_or(0.0);
        out.push(Check::new(
            "contraction",
            &format!("contraction-c2t-{c2t}"),
            ok && worst < 1.0,
            format!(
                "C2 T = {c2t}: {} iterations, ratios [{}], max ratio from k = 3: {worst:.3} (exact-projection bound {:.3})",
                it.len(),
                ratios.join(", "),
                sol.report.exact_contraction_bound
            ),
        ));
    }
    Ok(out)
}

/// Flat-off on every catalog entry and fixed-point consistency.
pub fn check_catalog_consistency(paths: usize, seed: u64) -> Result<Vec<Check>> {
    let mut flat = Vec::new();
    let mut fixed = Vec::new();
    let mut flat_ok = true;
    let mut fixed_ok = true;
    for entry in catalog() {
        let (problem, sol, config) = solve_entry(&entry.name, paths, seed)?;
        if !sol.report.converged {
            flat_ok = false;
            fixed_ok = false;
            flat.push(format!("{}: not converged", entry.name));
            continue;
        }
        let last = sol.report.final_record().expect("iterations");
        flat_ok &= sol.report.flat_off_passed;
        flat.push(format!(
            "{}: {:.2e} <= {:.2e}",
            entry.name, last.flat_off, sol.report.tol_flat
        ));
        let residual = fixed_point_residual(&sol.state, &problem, config.ito)?;
        let bound = 10.0 * sol.report.tol_fix;
        fixed_ok &= residual <= bound;
        fixed.push(format!("{}: {residual:.2e} <= {bound:.2e}", entry.name));
    }
    Ok(vec![
        Check::new("contraction", "flat-off", flat_ok, flat.join("; ")),
        Check::new(
            "contraction",
            "fixed-point-consistency",
            fixed_ok,
            fixed.join("; "),
        ),
    ])
}

/// A priori ratio across the catalog and the continuous-dependence trend.
pub fn check_apriori(paths: usize, seed: u64) -> Result<Vec<Check>> {
    let mut ratios = Vec::new();
    for entry in catalog() {
        let (problem, sol, _) = solve_entry(&entry.name, paths, seed)?;
        let ap = verify_apriori(&sol.state, &problem)?;
        if ap.rhs > 0.0 {
            ratios.push((entry.name.clone(), ap.ratio));
        }
    }
    let finite = ratios.iter().all(|(_, r)| r.is_finite() && *r > 0.0);
    let hi = ratios.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let lo = ratios.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let listed: Vec<String> = ratios.iter().map(|(n, r)| format!("{n} {r:.3}")).collect();
    let mut out = vec![Check::new(
        "contraction",
        "apriori-ratio",
        finite && hi / lo < 2.0,
        format!("LHS/RHS: {}; spread {:.2}x", listed.join(", "), hi / lo),
    )];
    let entry = catalog_entry("american-put")?;
    let problem = entry.sample(paths, seed)?;
    let config = SolverConfig::new(RegressionBasis::default_for(paths));
    let diffs = continuous_dependence(&problem, &config, &[0.4, 0.2, 0.1])?;
    let decreasing = diffs.windows(2).all(|w| w[1].1 < w[0].1);
    let listed: Vec<String> = diffs.iter().map(|(d, v)| format!("{d}: {v:.3e}")).collect();
    out.push(Check::new(
        "contraction",
        "continuous-dependence",
        decreasing,
        format!(
            "terminal shift -> solution difference: {}",
            listed.join(", ")
        ),
    ));
    Ok(out)
}

// ---------------------------------------------------------------- oracles

/// Terminal reflector of Brownian motion against `sqrt(2/pi)`,
/// plain map at `N` and `4N` on matched paths. The continuity-corrected
/// estimate is reported alongside.
pub fn check_reflected_bm(paths: usize, steps: usize, seed: u64) -> Result<Vec<Check>> {
    let case = ReflectedBmCase::new(1.0)?;
    let target = case.target();
    let study = case.study(paths, steps * 4, &[4, 1], seed)?;
    let (coarse, fine) = (study.plain[0], study.plain[1]);
    let z = (coarse.value - target) / coarse.se;
    let err_c = (coarse.value - target).abs();
    let err_f = (fine.value - target).abs();
    let corr = study.corrected[0];
    let zc = (corr.value - target) / corr.se;
    Ok(vec![
        Check::new(
            "oracles",
            "reflected-bm-calibration",
            z.abs() <= 3.0,
            format!(
                "N = {steps}, M = {paths}: mean {:.5} +- {:.5} vs {target:.5} ({z:.1} SE); continuity-corrected {:.5} ({zc:.1} SE, shift {CONTINUITY_SHIFT:.4} sqrt(dt))",
                coarse.value, coarse.se, corr.value
            ),
        ),
        Check::new(
            "oracles",
            "reflected-bm-refinement",
            err_f < err_c,
            format!("error {err_c:.5} at N = {} -> {err_f:.5} at N = {}", steps, steps * 4),
        ),
    ])
}

/// American put against the frozen binomial value, and the
/// penalization oracle at `rho = 250`.
pub fn check_american_put(paths: usize, seed: u64) -> Result<Vec<Check>> {
    let (problem, sol, _) = solve_entry("american-put", paths, seed)?;
    let last = sol.report.final_record().expect("iterations");
    let rel = (last.y0 - PUT_ORACLE) / PUT_ORACLE;
    let pen = penalization_oracle(&problem, 250.0, 3)?;
    let combined = (last.y0_se.powi(2) + pen.se.powi(2)).sqrt();
    let gap = (last.y0 - pen.value).abs();
    let tol = match catalog_entry("american-put")?.oracle {
        Oracle::Binomial { rel_tol, .. } => rel_tol,
        _ => return Err(invalid("american-put must carry a binomial oracle")),
    };
    Ok(vec![
        Check::new(
            "oracles",
            "american-put-binomial",
            sol.report.converged && rel.abs() <= tol,
            format!(
                "M = {paths}, N = 50: Y0 = {:.4} +- {:.4} vs {PUT_ORACLE:.4} ({:+.2}%), {} iterations",
                last.y0,
                last.y0_se,
                100.0 * rel,
                sol.report.iteration_count
            ),
        ),
        Check::new(
            "oracles",
            "american-put-penalization",
            gap <= 2.0 * combined,
            format!("rho = 250: {:.4} +- {:.4}, gap {gap:.4} vs 2 x combined SE {:.4}", pen.value, pen.se, 2.0 * combined),
        ),
    ])
}

// ---------------------------------------------------------------- reproducibility

/// Identical CSV bytes at 1, 2 and 8 workers.
pub fn check_reproducibility(paths: usize, seed: u64) -> Result<Check> {
    let mut outputs = Vec::new();
    for workers in [1, 2, 8] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| invalid(e.to_string()))?;
        let csv = pool.install(|| -> Result<String> {
            let (problem, sol, _) = solve_entry("american-put", paths, seed)?;
            Ok(solution_csv(&problem, &sol) + &convergence_csv(&sol.report))
        })?;
        outputs.push(csv);
    }
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    Ok(Check::new(
        "contraction",
        "reproducibility",
        same,
        format!("american-put, M = {paths}: CSV output at 1, 2, 8 workers identical: {same}"),
    ))
}

// ---------------------------------------------------------------- replay

/// Checks on a dumped ensemble: regenerating it from its header seed gives
/// the same increments bit for bit, and the reflector of its first coordinate
/// agrees with the double-max formula.
pub fn check_replay(ens: &PathEnsemble) -> Result<Vec<Check>> {
    let fresh = sample_brownian(ens.grid(), ens.paths(), ens.dim(), ens.seed())?;
    let same = fresh.increments() == ens.increments();
    let n = ens.steps();
    let dt = ens.grid().dt();
    let zeros = vec![0.0; n + 1];
    let mut worst = 0.0_f64;
    for p in 0..ens.paths() {
        let stoch: Vec<f64> = (0..=n).map(|i| ens.position(p, i, 0)).collect();
        let k_map =
            skorohod_reflect(&build_reversed_input(0.0, &zeros[..n], &zeros, &stoch, dt)?)?.k;
        let k_dm = k_from_double_max(0.0, &zeros[..n], &zeros, &stoch, dt);
        let scale = k_map.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
        for (a, b) in k_map.iter().zip(&k_dm) {
            worst = worst.max((a - b).abs() / scale);
        }
    }
    Ok(vec![
        Check::new(
            "replay",
            "ensemble-regenerates",
            same,
            format!(
                "M = {}, N = {n}, d = {}, seed = {}",
                ens.paths(),
                ens.dim(),
                ens.seed()
            ),
        ),
        Check::new(
            "replay",
            "double-max-formula",
            worst <= 1e-12,
            format!("max relative deviation {worst:.3e}"),
        ),
    ])
}

// ---------------------------------------------------------------- suites

pub fn run_suite(suite: &str, sizes: &Sizes) -> Result<Vec<Check>> {
    let s = sizes.seed;
    let mut out = Vec::new();
    let all = suite == "all";
    if !SUITES.contains(&suite) {
        return Err(Error::Unknown {
            what: "suite",
            name: suite.to_string(),
        });
    }
    if all || suite == "skorohod" {
        out.push(check_brute_force(sizes.brute_cases, s));
        out.push(check_double_max(
            sizes.double_max_paths,
            sizes.double_max_steps,
            s,
        ));
        out.push(check_sup_lemma(sizes.sup_pairs, s));
        out.extend(check_skorohod_properties(sizes.brute_cases, s));
    }
    if all || suite == "local-time" {
        out.extend(check_local_time(
            sizes.local_time_paths,
            sizes.local_time_steps,
            s,
        )?);
    }
    if all || suite == "projection" {
        out.extend(check_projection(sizes.projection_paths, sizes.z_paths, s)?);
    }
    if all || suite == "contraction" {
        out.extend(check_contraction(sizes.family_paths, s)?);
        out.extend(check_catalog_consistency(sizes.family_paths, s)?);
        out.extend(check_apriori(sizes.family_paths, s)?);
        out.push(check_reproducibility(sizes.repro_paths, s)?);
    }
    if all || suite == "oracles" {
        out.extend(check_reflected_bm(
            sizes.reflected_paths,
            sizes.reflected_steps,
            s,
        )?);
        out.extend(check_american_put(sizes.put_paths, s)?);
    }
    Ok(out)
}
