//! Barrier semimartingales `S = N + A` sampled on a path ensemble.
//!
//! The catalog is closed: each kind ships its grid decomposition, with the
//! martingale density `sigma` taken at the left endpoint and the
//! finite-variation increment `dA` holding the rest of the step.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::PathEnsemble;
use crate::matrix::PathMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BarrierKind {
    /// `S_t = level`.
    Constant { level: f64 },
    /// `S_t = s0 + drift * t + vol * B^1_t`.
    DriftedBrownian { s0: f64, drift: f64, vol: f64 },
    /// Put payoff `(strike - X_t)^+` on the geometric Brownian motion
    /// `X_t = spot * exp((rate - vol^2 / 2) t + vol * B^1_t)`.
    GeometricPut {
        spot: f64,
        strike: f64,
        rate: f64,
        vol: f64,
    },
}

impl BarrierKind {
    /// Parse the compact form used by config files, e.g. `constant:-5`,
    /// `drifted:0,1,0.5` or `put:100,100,0.05,0.2`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, args) = spec.split_once(':').unwrap_or((spec, ""));
        let nums: Vec<f64> = if args.trim().is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|a| a.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Unknown {
                    what: "barrier parameters",
                    name: spec.to_string(),
                })?
        };
        let unknown = || Error::Unknown {
            what: "barrier kind",
            name: spec.to_string(),
        };
        match (name.trim(), nums.as_slice()) {
            ("constant", [level]) => Ok(Self::Constant { level: *level }),
            ("drifted", [s0, drift, vol]) => Ok(Self::DriftedBrownian {
                s0: *s0,
                drift: *drift,
                vol: *vol,
            }),
            ("put", [spot, strike, rate, vol]) => Ok(Self::GeometricPut {
                spot: *spot,
                strike: *strike,
                rate: *rate,
                vol: *vol,
            }),
            _ => Err(unknown()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Constant { level } => format!("constant:{level}"),
            Self::DriftedBrownian { s0, drift, vol } => format!("drifted:{s0},{drift},{vol}"),
            Self::GeometricPut {
                spot,
                strike,
                rate,
                vol,
            } => format!("put:{spot},{strike},{rate},{vol}"),
        }
    }
}

/// A sampled barrier with its exact grid decomposition.
#[derive(Clone, Debug)]
pub struct BarrierProcess {
    paths: usize,
    steps: usize,
    dim: usize,
    /// `M x (N + 1)`.
    values: Vec<f64>,
    /// `M x N x d` martingale density.
    sigma: Vec<f64>,
    /// `M x N` finite-variation increments.
    drift: Vec<f64>,
    pub description: String,
}

impl BarrierProcess {
    #[inline]
    pub fn value(&self, m: usize, i: usize) -> f64 {
        self.values[m * (self.steps + 1) + i]
    }

    pub fn path(&self, m: usize) -> &[f64] {
        &self.values[m * (self.steps + 1)..(m + 1) * (self.steps + 1)]
    }

    #[inline]
    pub fn sigma(&self, m: usize, i: usize) -> &[f64] {
        let start = (m * self.steps + i) * self.dim;
        &self.sigma[start..start + self.dim]
    }

    #[inline]
    pub fn drift_increment(&self, m: usize, i: usize) -> f64 {
        self.drift[m * self.steps + i]
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Barrier values as an `M x (N + 1)` matrix.
    pub fn to_matrix(&self) -> PathMatrix {
        PathMatrix::from_vec(self.paths, self.steps + 1, self.values.clone())
    }

    /// Finite-variation increments as an `M x N` matrix.
    pub fn drift_matrix(&self) -> PathMatrix {
        PathMatrix::from_vec(self.paths, self.steps, self.drift.clone())
    }

    /// `sup_{i,m} |S|`, used to scale tolerances.
    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
    }

    /// Largest deviation of `S[i] + (sigma . dB + dA)` from `S[i+1]`.
    pub fn decomposition_residual(&self, ensemble: &PathEnsemble) -> f64 {
        (0..self.paths)
            .into_par_iter()
            .map(|m| {
                let mut worst = 0.0_f64;
                for i in 0..self.steps {
                    let step = martingale_step(self.sigma(m, i), ensemble.step_increments(m, i))
                        + self.drift_increment(m, i);
                    worst = worst.max((self.value(m, i) + step - self.value(m, i + 1)).abs());
                }
                worst
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold(0.0, f64::max)
    }

    /// Sample mean of `(max_i S_i^+)^2`.
    pub fn sup_positive_second_moment(&self) -> f64 {
        let per_path: Vec<f64> = (0..self.paths)
            .into_par_iter()
            .map(|m| {
                let s = self.path(m).iter().fold(0.0_f64, |a, v| a.max(*v));
                s * s
            })
            .collect();
        per_path.iter().sum::<f64>() / self.paths as f64
    }
}

#[inline]
fn martingale_step(sigma: &[f64], db: &[f64]) -> f64 {
    sigma.iter().zip(db).map(|(s, b)| s * b).sum()
}

/// Sample `kind` on every path of `ensemble`.
pub fn make_barrier(kind: &BarrierKind, ensemble: &PathEnsemble) -> Result<BarrierProcess> {
    let paths = ensemble.paths();
    let n = ensemble.steps();
    let d = ensemble.dim();
    let dt = ensemble.grid().dt();
    let mut values = vec![0.0; paths * (n + 1)];
    let mut sigma = vec![0.0; paths * n * d];
    let mut drift = vec![0.0; paths * n];

    if let BarrierKind::GeometricPut {
        spot, strike, vol, ..
    } = kind
    {
        if !(*spot > 0.0 && *strike > 0.0 && *vol >= 0.0) {
            return Err(Error::Validation(format!(
                "put barrier needs positive spot/strike and non-negative vol, got {}",
                kind.label()
            )));
        }
    }

    values
        .par_chunks_mut(n + 1)
        .zip(sigma.par_chunks_mut(n * d))
        .zip(drift.par_chunks_mut(n))
        .enumerate()
        .for_each(|(m, ((s, sig), da))| match *kind {
            BarrierKind::Constant { level } => {
                s.fill(level);
            }
            BarrierKind::DriftedBrownian { s0, drift, vol } => {
                s[0] = s0;
                for i in 0..n {
                    sig[i * d] = vol;
                    da[i] = drift * dt;
                    let step = vol * ensemble.increment(m, i, 0) + da[i];
                    s[i + 1] = s[i] + step;
                }
            }
            BarrierKind::GeometricPut {
                spot,
                strike,
                rate,
                vol,
            } => {
                let mu = (rate - 0.5 * vol * vol) * dt;
                let mut x = spot;
                s[0] = (strike - x).max(0.0);
                for i in 0..n {
                    let x_next = x * (mu + vol * ensemble.increment(m, i, 0)).exp();
                    let target = (strike - x_next).max(0.0);
                    // Ito density of the payoff at the left endpoint; the kink
                    // and curvature terms land in dA.
                    sig[i * d] = if x < strike { -vol * x } else { 0.0 };
                    let mart = sig[i * d] * ensemble.increment(m, i, 0);
                    da[i] = (target - s[i]) - mart;
                    s[i + 1] = s[i] + (mart + da[i]);
                    x = x_next;
                }
            }
        });

    Ok(BarrierProcess {
        paths,
        steps: n,
        dim: d,
        values,
        sigma,
        drift,
        description: kind.label(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, sample_brownian};

    fn ensemble() -> PathEnsemble {
        sample_brownian(&make_grid(1.0, 16).unwrap(), 40, 2, 5).unwrap()
    }

    #[test]
    fn constant_barrier() {
        let e = ensemble();
        let b = make_barrier(&BarrierKind::Constant { level: -5.0 }, &e).unwrap();
        for m in 0..40 {
            for i in 0..=16 {
                assert_eq!(b.value(m, i), -5.0);
            }
            for i in 0..16 {
                assert_eq!(b.sigma(m, i), &[0.0, 0.0]);
                assert_eq!(b.drift_increment(m, i), 0.0);
            }
        }
        assert_eq!(b.decomposition_residual(&e), 0.0);
    }

    #[test]
    fn deterministic_line() {
        let e = ensemble();
        let kind = BarrierKind::DriftedBrownian {
            s0: 0.0,
            drift: 1.0,
            vol: 0.0,
        };
        let b = make_barrier(&kind, &e).unwrap();
        let g = e.grid();
        for m in 0..40 {
            for i in 0..=16 {
                assert!((b.value(m, i) - g.time(i)).abs() < 1e-12);
            }
            for i in 0..16 {
                assert_eq!(b.drift_increment(m, i), g.dt());
            }
        }
    }

    #[test]
    fn pure_martingale_has_zero_residual() {
        let e = ensemble();
        let kind = BarrierKind::DriftedBrownian {
            s0: 0.0,
            drift: 0.0,
            vol: 1.0,
        };
        let b = make_barrier(&kind, &e).unwrap();
        assert_eq!(b.decomposition_residual(&e), 0.0);
        for m in 0..40 {
            for i in 0..=16 {
                assert_eq!(b.value(m, i), e.position(m, i, 0));
            }
        }
    }

    #[test]
    fn put_barrier_decomposes() {
        let e = ensemble();
        let kind = BarrierKind::GeometricPut {
            spot: 100.0,
            strike: 100.0,
            rate: 0.05,
            vol: 0.2,
        };
        let b = make_barrier(&kind, &e).unwrap();
        assert!(b.decomposition_residual(&e) < 1e-12 * 100.0);
        for m in 0..40 {
            assert!(b.path(m).iter().all(|v| *v >= 0.0));
        }
        assert!(b.sup_positive_second_moment().is_finite());
    }

    #[test]
    fn parse_catalog() {
        assert_eq!(
            BarrierKind::parse("constant:-5").unwrap(),
            BarrierKind::Constant { level: -5.0 }
        );
        assert_eq!(
            BarrierKind::parse("put:100,100,0.05,0.2").unwrap(),
            BarrierKind::GeometricPut {
                spot: 100.0,
                strike: 100.0,
                rate: 0.05,
                vol: 0.2
            }
        );
        let k = BarrierKind::parse("drifted:0,1,0.5").unwrap();
        assert_eq!(BarrierKind::parse(&k.label()).unwrap(), k);
        assert!(BarrierKind::parse("spline:1").is_err());
        assert!(BarrierKind::parse("constant:1,2").is_err());
    }
}
