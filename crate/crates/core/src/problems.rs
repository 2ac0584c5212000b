//! Test problems and reference solvers that share no code with the Picard solver.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barrier::BarrierKind;
use crate::driver::{resistive_driver_family, BaseDriver, DriverSpec, Terminal};
use crate::error::{invalid, Error, Result};
use crate::grid::path_rng;
use crate::matrix::mean_and_se;
use crate::picard::{Problem, ProblemSpec};
use crate::skorohod::{build_reversed_input, corrected_terminal_reflector, skorohod_reflect};

/// Cox-Ross-Rubinstein price of an American put.
pub fn american_put_oracle(
    s0: f64,
    strike: f64,
    rate: f64,
    vol: f64,
    horizon: f64,
    steps: usize,
) -> Result<f64> {
    if !(s0 > 0.0 && strike > 0.0 && vol > 0.0 && horizon > 0.0 && rate >= 0.0) || steps == 0 {
        return Err(invalid(
            "binomial tree needs positive spot, strike, vol, horizon and steps",
        ));
    }
    let dt = horizon / steps as f64;
    let up = (vol * dt.sqrt()).exp();
    let down = 1.0 / up;
    let growth = (rate * dt).exp();
    let p = (growth - down) / (up - down);
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!(
            "risk-neutral probability {p} outside [0, 1]; refine the tree"
        )));
    }
    let disc = 1.0 / growth;
    let mut values: Vec<f64> = (0..=steps)
        .map(|j| (strike - s0 * up.powi(j as i32) * down.powi((steps - j) as i32)).max(0.0))
        .collect();
    for n in (0..steps).rev() {
        for j in 0..=n {
            let cont = disc * (p * values[j + 1] + (1.0 - p) * values[j]);
            let spot = s0 * up.powi(j as i32) * down.powi((n - j) as i32);
            values[j] = cont.max(strike - spot);
        }
    }
    Ok(values[0])
}

/// Estimate at time zero with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let (value, se) = mean_and_se(samples);
        Self { value, se }
    }
}

/// Monomials up to `degree` in standardized columns, solved through the
/// ridged normal equations with an LU factorisation.
struct PlainRegression {
    basis: DMatrix<f64>,
    solver: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl PlainRegression {
    fn new(columns: &[Vec<f64>], degree: usize) -> Option<Self> {
        let m = columns.first()?.len();
        let mut active: Vec<Vec<f64>> = Vec::new();
        for c in columns {
            let mean = c.iter().sum::<f64>() / m as f64;
            let sd = (c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64).sqrt();
            if sd > 1e-12 * (1.0 + mean.abs()) {
                active.push(c.iter().map(|v| (v - mean) / sd).collect());
            }
        }
        let mut terms: Vec<Vec<usize>> = vec![vec![0; active.len()]];
        for _ in 0..degree {
            let mut next = Vec::new();
            for t in &terms {
                for v in 0..active.len() {
                    let mut e = t.clone();
                    e[v] += 1;
                    if !terms.contains(&e) && !next.contains(&e) {
                        next.push(e);
                    }
                }
            }
            terms.extend(next);
        }
        terms.retain(|t| t.iter().sum::<usize>() <= degree);
        let basis = DMatrix::from_fn(m, terms.len(), |r, c| {
            terms[c]
                .iter()
                .zip(&active)
                .map(|(&e, col)| col[r].powi(e as i32))
                .product()
        });
        let mut gram = basis.tr_mul(&basis);
        for k in 1..terms.len() {
            gram[(k, k)] += 1e-8 * m as f64;
        }
        Some(Self {
            solver: gram.lu(),
            basis,
        })
    }

    fn fitted(&self, target: &[f64]) -> Option<Vec<f64>> {
        let y = DVector::from_column_slice(target);
        let coef = self.solver.solve(&self.basis.tr_mul(&y))?;
        Some((&self.basis * coef).iter().copied().collect())
    }
}

/// Backward regression for the unreflected BSDE with driver
/// `f + rho (Y - S)^-`. The penalty is treated implicitly, the driver
/// explicitly at the continuation value. Requires a driver without resistance.
pub fn penalization_oracle(problem: &Problem, rho: f64, degree: usize) -> Result<Estimate> {
    if problem.spec.driver.c2() != 0.0 {
        return Err(invalid(
            "penalization oracle needs a driver without resistance",
        ));
    }
    if !(rho >= 0.0) {
        return Err(invalid(format!("penalty must be >= 0, got {rho}")));
    }
    let m = problem.paths();
    let n = problem.steps();
    let d = problem.dim();
    let grid = problem.grid();
    let dt = grid.dt();
    let ens = &problem.ensemble;
    let driver = &problem.spec.driver;
    let mut y = problem.xi.clone();
    let mut y0_samples = Vec::new();
    for i in (0..n).rev() {
        let mut columns: Vec<Vec<f64>> = (0..d)
            .map(|j| (0..m).map(|p| ens.position(p, i, j)).collect())
            .collect();
        columns.push((0..m).map(|p| problem.barrier.value(p, i)).collect());
        let reg = PlainRegression::new(&columns, degree)
            .ok_or_else(|| invalid("empty ensemble in penalization oracle"))?;
        let cont = reg.fitted(&y).ok_or(Error::RankDeficient { slice: i })?;
        let mut z = vec![0.0; m * d];
        for j in 0..d {
            let target: Vec<f64> = (0..m).map(|p| y[p] * ens.increment(p, i, j) / dt).collect();
            let fz = reg
                .fitted(&target)
                .ok_or(Error::RankDeficient { slice: i })?;
            for p in 0..m {
                z[p * d + j] = fz[p];
            }
        }
        let t = grid.time(i);
        let step = |p: usize, c: f64| {
            let base = c + driver.eval(t, c, &z[p * d..(p + 1) * d], 0.0) * dt;
            let s = problem.barrier.value(p, i);
            if base >= s {
                base
            } else {
                (base + rho * dt * s) / (1.0 + rho * dt)
            }
        };
        if i == 0 {
            // Pathwise targets give the standard error of the time-zero value.
            y0_samples = (0..m).map(|p| step(p, y[p])).collect();
        }
        y = (0..m).map(|p| step(p, cont[p])).collect();
    }
    let mut est = Estimate::from_samples(&y0_samples);
    est.value = y[0];
    Ok(est)
}

/// Pure reflection of a Brownian motion at zero: driver, barrier and
/// terminal slack vanish and the integrand is one, so the reversed input is a
/// Brownian path and the terminal reflector has mean `E|B_T| = sqrt(2T/pi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectedBmCase {
    pub horizon: f64,
}

/// Terminal reflector statistics on matched paths at several resolutions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectorStudy {
    pub steps: Vec<usize>,
    /// Plain discrete map at each resolution.
    pub plain: Vec<Estimate>,
    /// Continuity-corrected terminal reflector at each resolution.
    pub corrected: Vec<Estimate>,
}

impl ReflectedBmCase {
    pub fn new(horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self { horizon })
    }

    pub fn target(&self) -> f64 {
        (2.0 * self.horizon / std::f64::consts::PI).sqrt()
    }

    /// Simulate `paths` Brownian paths at `fine_steps` and evaluate the
    /// terminal reflector at `fine_steps / f` for each coarsening factor `f`.
    pub fn study(
        &self,
        paths: usize,
        fine_steps: usize,
        factors: &[usize],
        seed: u64,
    ) -> Result<ReflectorStudy> {
        if paths == 0 || fine_steps == 0 {
            return Err(invalid("paths and steps must be at least 1"));
        }
        if let Some(f) = factors.iter().find(|f| **f == 0 || fine_steps % **f != 0) {
            return Err(invalid(format!("factor {f} does not divide {fine_steps}")));
        }
        let fine_dt = self.horizon / fine_steps as f64;
        let per_path: Vec<Result<Vec<(f64, f64)>>> = (0..paths)
            .into_par_iter()
            .map(|p| {
                let mut rng = path_rng(seed, p);
                let mut b = Vec::with_capacity(fine_steps + 1);
                b.push(0.0);
                let mut acc = 0.0;
                for _ in 0..fine_steps {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    acc += fine_dt.sqrt() * z;
                    b.push(acc);
                }
                factors
                    .iter()
                    .map(|&f| {
                        let n = fine_steps / f;
                        let dt = fine_dt * f as f64;
                        let stoch: Vec<f64> = (0..=n).map(|i| b[i * f]).collect();
                        let zeros = vec![0.0; n + 1];
                        let input = build_reversed_input(0.0, &zeros[..n], &zeros, &stoch, dt)?;
                        let out = skorohod_reflect(&input)?;
                        Ok((out.k[n], corrected_terminal_reflector(&input, 1.0, dt)))
                    })
                    .collect()
            })
            .collect();
        let mut plain = vec![Vec::with_capacity(paths); factors.len()];
        let mut corrected = vec![Vec::with_capacity(paths); factors.len()];
        for r in per_path {
            for (k, (a, c)) in r?.into_iter().enumerate() {
                plain[k].push(a);
                corrected[k].push(c);
            }
        }
        Ok(ReflectorStudy {
            steps: factors.iter().map(|f| fine_steps / f).collect(),
            plain: plain.iter().map(|s| Estimate::from_samples(s)).collect(),
            corrected: corrected
                .iter()
                .map(|s| Estimate::from_samples(s))
                .collect(),
        })
    }
}

pub fn reflected_bm_case() -> ReflectedBmCase {
    ReflectedBmCase { horizon: 1.0 }
}

/// Where a catalog entry's reference value comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Oracle {
    /// Binomial-tree price, relative tolerance.
    Binomial { value: f64, rel_tol: f64 },
    /// Closed-form value, absolute tolerance.
    Exact { value: f64, abs_tol: f64 },
    /// No external truth; only internal consistency checks apply.
    Consistency,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: String,
    pub spec: ProblemSpec,
    pub horizon: f64,
    pub steps: usize,
    pub dim: usize,
    pub oracle: Oracle,
}

impl CatalogEntry {
    pub fn sample(&self, paths: usize, seed: u64) -> Result<Problem> {
        let grid = crate::grid::make_grid(self.horizon, self.steps)?;
        Problem::sample(self.spec.clone(), &grid, paths, self.dim, seed)
    }
}

pub const PUT_SPOT: f64 = 100.0;
pub const PUT_STRIKE: f64 = 100.0;
pub const PUT_RATE: f64 = 0.05;
pub const PUT_VOL: f64 = 0.2;
pub const PUT_HORIZON: f64 = 0.5;
/// Frozen CRR value for the put above (10000 steps); see `fixtures/oracles.txt`.
pub const PUT_ORACLE: f64 = 4.655_623_211_507_837_3;

fn put_spec(name: &str, resistance: f64) -> Result<ProblemSpec> {
    let base = DriverSpec::new(BaseDriver::Discount { rate: PUT_RATE });
    Ok(ProblemSpec {
        name: name.to_string(),
        driver: resistive_driver_family(resistance, &base)?,
        terminal: Terminal::Barrier,
        terminal_shift: 0.0,
        barrier: BarrierKind::GeometricPut {
            spot: PUT_SPOT,
            strike: PUT_STRIKE,
            rate: PUT_RATE,
            vol: PUT_VOL,
        },
    })
}

/// Resistive puts with `C2 T` in `{0, 0.02, 0.05}`.
pub const RESISTIVE_C2T: [f64; 3] = [0.0, 0.02, 0.05];

pub fn resistive_name(c2t: f64) -> String {
    format!("resistive-put-{c2t}")
}

pub fn catalog() -> Vec<CatalogEntry> {
    let mut out = vec![CatalogEntry {
        name: "american-put".into(),
        spec: put_spec("american-put", 0.0).expect("valid resistance"),
        horizon: PUT_HORIZON,
        steps: 50,
        dim: 1,
        oracle: Oracle::Binomial {
            value: PUT_ORACLE,
            rel_tol: 0.015,
        },
    }];
    for c2t in RESISTIVE_C2T {
        let name = resistive_name(c2t);
        out.push(CatalogEntry {
            spec: put_spec(&name, c2t / PUT_HORIZON).expect("valid resistance"),
            name,
            horizon: PUT_HORIZON,
            steps: 50,
            dim: 1,
            oracle: Oracle::Consistency,
        });
    }
    out.push(CatalogEntry {
        name: "zero".into(),
        spec: ProblemSpec {
            name: "zero".into(),
            driver: DriverSpec::new(BaseDriver::Zero),
            terminal: Terminal::Constant { value: 0.0 },
            terminal_shift: 0.0,
            barrier: BarrierKind::Constant { level: -1e3 },
        },
        horizon: 1.0,
        steps: 20,
        dim: 1,
        oracle: Oracle::Exact {
            value: 0.0,
            abs_tol: 1e-12,
        },
    });
    out.push(CatalogEntry {
        name: "martingale".into(),
        spec: ProblemSpec {
            name: "martingale".into(),
            driver: DriverSpec::new(BaseDriver::Zero),
            terminal: Terminal::Brownian {
                coord: 0,
                scale: 1.0,
            },
            terminal_shift: 0.0,
            barrier: BarrierKind::Constant { level: -50.0 },
        },
        horizon: 1.0,
        steps: 20,
        dim: 1,
        oracle: Oracle::Exact {
            value: 0.0,
            abs_tol: 0.02,
        },
    });
    out.push(CatalogEntry {
        name: "pure-reflection".into(),
        spec: ProblemSpec {
            name: "pure-reflection".into(),
            driver: DriverSpec::new(BaseDriver::Zero),
            terminal: Terminal::AbsBrownian {
                coord: 0,
                scale: 1.0,
            },
            terminal_shift: 0.0,
            barrier: BarrierKind::Constant { level: 0.0 },
        },
        horizon: 1.0,
        steps: 20,
        dim: 1,
        oracle: Oracle::Exact {
            value: ReflectedBmCase { horizon: 1.0 }.target(),
            abs_tol: 0.02,
        },
    });
    out.push(CatalogEntry {
        name: "drifted-barrier".into(),
        spec: ProblemSpec {
            name: "drifted-barrier".into(),
            driver: DriverSpec::new(BaseDriver::Saturating {
                level: 0.0,
                y_coef: 0.2,
                z_coef: 0.1,
            }),
            terminal: Terminal::Barrier,
            terminal_shift: 0.5,
            barrier: BarrierKind::DriftedBrownian {
                s0: 0.0,
                drift: -0.5,
                vol: 1.0,
            },
        },
        horizon: 1.0,
        steps: 20,
        dim: 1,
        oracle: Oracle::Consistency,
    });
    out
}

pub fn catalog_entry(name: &str) -> Result<CatalogEntry> {
    catalog()
        .into_iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::Unknown {
            what: "problem",
            name: name.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worthless_and_deep_puts() {
        let p = american_put_oracle(200.0, 100.0, 0.0, 1e-3, 1.0, 2000).unwrap();
        assert!(p.abs() < 1e-12);
        let p = american_put_oracle(80.0, 100.0, 0.0, 1e-3, 1.0, 2000).unwrap();
        assert!((p - 20.0).abs() < 1e-6);
        assert!(american_put_oracle(100.0, 100.0, 0.05, 1e-6, 1.0, 10).is_err());
    }

    #[test]
    fn binomial_european_limit_matches_black_scholes() {
        // With zero rate early exercise of a put is never optimal.
        let p = american_put_oracle(100.0, 100.0, 0.0, 0.2, 1.0, 4000).unwrap();
        let bs = 7.965567455405804;
        assert!((p - bs).abs() < 2e-3, "{p}");
    }

    #[test]
    fn reflected_bm_targets() {
        assert!((ReflectedBmCase::new(1.0).unwrap().target() - 0.7978845608028654).abs() < 1e-15);
        let four = ReflectedBmCase::new(4.0).unwrap().target();
        assert!((four - 2.0 * 0.7978845608028654).abs() < 1e-15);
        assert!(ReflectedBmCase::new(1e-12).unwrap().target() < 1e-5);
        assert!(ReflectedBmCase::new(0.0).is_err());
    }

    #[test]
    fn catalog_names_are_unique() {
        let names: Vec<String> = catalog().into_iter().map(|e| e.name).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert!(catalog_entry("nope").is_err());
    }
}
