//! Drivers `f(t, y, z, k)` and terminal values.

use serde::{Deserialize, Serialize};

use crate::barrier::BarrierProcess;
use crate::error::{invalid, Error, Result};
use crate::grid::PathEnsemble;

/// The `(t, y, z)` part of a driver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaseDriver {
    Zero,
    Constant {
        value: f64,
    },
    /// `-rate * y`, the discounting driver of option pricing.
    Discount {
        rate: f64,
    },
    /// `constant + y_coef * y + z_coef * z_1`.
    Linear {
        constant: f64,
        y_coef: f64,
        z_coef: f64,
    },
    /// `level + y_coef * tanh(y) + z_coef * |z|`.
    Saturating {
        level: f64,
        y_coef: f64,
        z_coef: f64,
    },
}

impl BaseDriver {
    #[inline]
    pub fn eval(&self, _t: f64, y: f64, z: &[f64]) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Constant { value } => value,
            Self::Discount { rate } => -rate * y,
            Self::Linear {
                constant,
                y_coef,
                z_coef,
            } => constant + y_coef * y + z_coef * z.first().copied().unwrap_or(0.0),
            Self::Saturating {
                level,
                y_coef,
                z_coef,
            } => level + y_coef * y.tanh() + z_coef * norm(z),
        }
    }

    /// Lipschitz constant in `(y, z)` for the `|dy| + |dz|` metric.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            Self::Zero | Self::Constant { .. } => 0.0,
            Self::Discount { rate } => rate.abs(),
            Self::Linear { y_coef, z_coef, .. } | Self::Saturating { y_coef, z_coef, .. } => {
                y_coef.abs().max(z_coef.abs())
            }
        }
    }

    /// Parse `zero`, `constant:c`, `discount:r`, `linear:c,a,b`, `saturating:c,a,b`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, nums) = split_spec(spec, "driver")?;
        match (name, nums.as_slice()) {
            ("zero", []) => Ok(Self::Zero),
            ("constant", [value]) => Ok(Self::Constant { value: *value }),
            ("discount", [rate]) => Ok(Self::Discount { rate: *rate }),
            ("linear", [c, a, b]) => Ok(Self::Linear {
                constant: *c,
                y_coef: *a,
                z_coef: *b,
            }),
            ("saturating", [c, a, b]) => Ok(Self::Saturating {
                level: *c,
                y_coef: *a,
                z_coef: *b,
            }),
            _ => Err(Error::Unknown {
                what: "driver",
                name: spec.to_string(),
            }),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Zero => "zero".into(),
            Self::Constant { value } => format!("constant:{value}"),
            Self::Discount { rate } => format!("discount:{rate}"),
            Self::Linear {
                constant,
                y_coef,
                z_coef,
            } => format!("linear:{constant},{y_coef},{z_coef}"),
            Self::Saturating {
                level,
                y_coef,
                z_coef,
            } => format!("saturating:{level},{y_coef},{z_coef}"),
        }
    }
}

fn norm(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn split_spec<'a>(spec: &'a str, what: &'static str) -> Result<(&'a str, Vec<f64>)> {
    let (name, args) = spec.split_once(':').unwrap_or((spec, ""));
    let nums = if args.trim().is_empty() {
        Vec::new()
    } else {
        args.split(',')
            .map(|a| a.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Unknown {
                what,
                name: spec.to_string(),
            })?
    };
    Ok((name.trim(), nums))
}

/// `f(t, y, z, k) = base(t, y, z) - resistance * k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriverSpec {
    pub base: BaseDriver,
    pub resistance: f64,
}

impl DriverSpec {
    pub fn new(base: BaseDriver) -> Self {
        Self {
            base,
            resistance: 0.0,
        }
    }

    #[inline]
    pub fn eval(&self, t: f64, y: f64, z: &[f64], k: f64) -> f64 {
        self.base.eval(t, y, z) - self.resistance * k
    }

    /// Lipschitz constant in `(y, z)`.
    pub fn c1(&self) -> f64 {
        self.base.lipschitz()
    }

    /// Lipschitz constant in `k`.
    pub fn c2(&self) -> f64 {
        self.resistance.abs()
    }

    /// `f(t, 0, 0, 0)`.
    pub fn f0(&self, t: f64, dim: usize) -> f64 {
        let zeros = [0.0; 8];
        self.eval(t, 0.0, &zeros[..dim.min(8)], 0.0)
    }
}

/// Attach a resistance `c >= 0` to `base`, making the driver decreasing in `k`.
pub fn resistive_driver_family(c: f64, base: &DriverSpec) -> Result<DriverSpec> {
    if !(c >= 0.0) {
        return Err(invalid(format!(
            "resistance coefficient must be >= 0, got {c}"
        )));
    }
    Ok(DriverSpec {
        base: base.base.clone(),
        resistance: c,
    })
}

/// Terminal value `xi` as a function of the path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Terminal {
    Constant {
        value: f64,
    },
    /// `scale * B^coord_T`.
    Brownian {
        coord: usize,
        scale: f64,
    },
    /// `scale * |B^coord_T|`.
    AbsBrownian {
        coord: usize,
        scale: f64,
    },
    /// `S_T`, e.g. the option payoff when the barrier is a payoff process.
    Barrier,
}

impl Terminal {
    /// Parse `constant:c`, `brownian:j,scale`, `abs-brownian:j,scale` or `barrier`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, nums) = split_spec(spec, "terminal")?;
        match (name, nums.as_slice()) {
            ("constant", [v]) => Ok(Self::Constant { value: *v }),
            ("brownian", [j, scale]) if *j >= 0.0 && j.fract() == 0.0 => Ok(Self::Brownian {
                coord: *j as usize,
                scale: *scale,
            }),
            ("abs-brownian", [j, scale]) if *j >= 0.0 && j.fract() == 0.0 => {
                Ok(Self::AbsBrownian {
                    coord: *j as usize,
                    scale: *scale,
                })
            }
            ("barrier", []) => Ok(Self::Barrier),
            _ => Err(Error::Unknown {
                what: "terminal",
                name: spec.to_string(),
            }),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Constant { value } => format!("constant:{value}"),
            Self::Brownian { coord, scale } => format!("brownian:{coord},{scale}"),
            Self::AbsBrownian { coord, scale } => format!("abs-brownian:{coord},{scale}"),
            Self::Barrier => "barrier".into(),
        }
    }

    /// One terminal value per path, plus `shift`.
    pub fn sample(
        &self,
        ensemble: &PathEnsemble,
        barrier: &BarrierProcess,
        shift: f64,
    ) -> Result<Vec<f64>> {
        let n = ensemble.steps();
        let m = ensemble.paths();
        match *self {
            Self::Constant { value } => Ok(vec![value + shift; m]),
            Self::Brownian { coord, scale } | Self::AbsBrownian { coord, scale } => {
                if coord >= ensemble.dim() {
                    return Err(invalid(format!(
                        "terminal uses coordinate {coord} of a {}-dimensional ensemble",
                        ensemble.dim()
                    )));
                }
                let abs = matches!(self, Self::AbsBrownian { .. });
                Ok((0..m)
                    .map(|r| {
                        let b = ensemble.position(r, n, coord);
                        scale * if abs { b.abs() } else { b } + shift
                    })
                    .collect())
            }
            Self::Barrier => Ok((0..m).map(|r| barrier.value(r, n) + shift).collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lipschitz_holds(f: &DriverSpec) -> bool {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        (0..1000).all(|_| {
            let mut draw = || rng.gen_range(-10.0..10.0);
            let (y, y2, k, k2) = (draw(), draw(), draw(), draw());
            let z = [draw(), draw()];
            let z2 = [draw(), draw()];
            let lhs = (f.eval(0.3, y, &z, k) - f.eval(0.3, y2, &z2, k2)).abs();
            let dz = ((z[0] - z2[0]).powi(2) + (z[1] - z2[1]).powi(2)).sqrt();
            let rhs = f.c1() * ((y - y2).abs() + dz) + f.c2() * (k - k2).abs();
            lhs <= rhs * (1.0 + 1e-12) + 1e-12
        })
    }

    #[test]
    fn lipschitz_constants_hold_on_random_quadruples() {
        let bases = [
            BaseDriver::Zero,
            BaseDriver::Constant { value: 2.0 },
            BaseDriver::Discount { rate: 0.05 },
            BaseDriver::Linear {
                constant: 1.0,
                y_coef: -0.3,
                z_coef: 0.7,
            },
            BaseDriver::Saturating {
                level: 0.2,
                y_coef: 0.5,
                z_coef: -0.4,
            },
        ];
        for base in bases {
            for c in [0.0, 0.04, 1.0] {
                let f = resistive_driver_family(c, &DriverSpec::new(base.clone())).unwrap();
                assert!(lipschitz_holds(&f), "{base:?} with c = {c}");
            }
        }
    }

    #[test]
    fn resistance_is_decreasing_in_k() {
        let base = DriverSpec::new(BaseDriver::Discount { rate: 0.05 });
        let zero = resistive_driver_family(0.0, &base).unwrap();
        assert_eq!(zero, base);
        let f = resistive_driver_family(0.1, &base).unwrap();
        assert_eq!(f.c2(), 0.1);
        assert!(f.eval(0.0, 1.0, &[0.0], 2.0) < f.eval(0.0, 1.0, &[0.0], 1.0));
        assert!(resistive_driver_family(-0.1, &base).is_err());
    }

    #[test]
    fn f0_is_driver_at_origin() {
        let f = DriverSpec::new(BaseDriver::Linear {
            constant: 1.5,
            y_coef: 2.0,
            z_coef: 3.0,
        });
        assert_eq!(f.f0(0.2, 2), 1.5);
    }

    #[test]
    fn parse_round_trips() {
        for s in [
            "zero",
            "constant:1",
            "discount:0.05",
            "linear:1,2,3",
            "saturating:0,1,-1",
        ] {
            let d = BaseDriver::parse(s).unwrap();
            assert_eq!(BaseDriver::parse(&d.label()).unwrap(), d);
        }
        assert!(BaseDriver::parse("cubic:1").is_err());
        for s in ["constant:0", "brownian:0,1", "abs-brownian:0,2", "barrier"] {
            let t = Terminal::parse(s).unwrap();
            assert_eq!(Terminal::parse(&t.label()).unwrap(), t);
        }
        assert!(Terminal::parse("brownian:0.5,1").is_err());
    }
}
