//! Flat `key = value` run configuration with strict key checking.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::barrier::BarrierKind;
use crate::driver::{BaseDriver, DriverSpec, Terminal};
use crate::error::{Error, Result};
use crate::grid::make_grid;
use crate::picard::{ItoSum, Problem, ProblemSpec, SolverConfig};
use crate::problems::catalog_entry;
use crate::projection::{Features, RegressionBasis};

pub const KEYS: &[&str] = &[
    "problem",
    "driver",
    "resistance",
    "terminal",
    "terminal_shift",
    "barrier",
    "M",
    "N",
    "d",
    "T",
    "seed",
    "basis_degree",
    "ridge",
    "features",
    "alpha",
    "beta",
    "tol_fix",
    "tol_flat",
    "tol_proj",
    "max_iter",
    "c2t_max",
    "ito_sum",
    "output",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub spec: ProblemSpec,
    pub paths: usize,
    pub steps: usize,
    pub dim: usize,
    pub horizon: f64,
    pub seed: u64,
    pub solver: SolverConfig,
    pub output: Option<String>,
}

fn cfg_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| cfg_err(key, format!("cannot parse '{value}'")))
}

fn positive(key: &str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(cfg_err(
            key,
            format!("must be a positive number, got {value}"),
        ))
    }
}

fn non_negative(key: &str, value: f64) -> Result<f64> {
    if value >= 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(cfg_err(key, format!("must be >= 0, got {value}")))
    }
}

/// Split `text` into `key -> value`, rejecting unknown and repeated keys.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(cfg_err(
                line,
                format!("line {} is not 'key = value'", lineno + 1),
            ));
        };
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(cfg_err(key, "unknown key"));
        }
        if out
            .insert(key.to_string(), value.trim().to_string())
            .is_some()
        {
            return Err(cfg_err(key, "given more than once"));
        }
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let get = |k: &str| pairs.get(k).map(String::as_str);

        let entry = get("problem")
            .map(catalog_entry)
            .transpose()
            .map_err(|e| match e {
                Error::Unknown { name, .. } => {
                    cfg_err("problem", format!("no catalog problem named '{name}'"))
                }
                other => other,
            })?;
        let (mut spec, mut horizon, mut steps, mut dim) = match &entry {
            Some(e) => (Some(e.spec.clone()), e.horizon, e.steps, e.dim),
            None => (None, 1.0, 50, 1),
        };
        if spec.is_none() {
            for key in ["driver", "terminal", "barrier"] {
                if get(key).is_none() {
                    return Err(cfg_err(key, "required when no catalog problem is named"));
                }
            }
            spec = Some(ProblemSpec {
                name: "custom".into(),
                driver: DriverSpec::new(BaseDriver::Zero),
                terminal: Terminal::Constant { value: 0.0 },
                terminal_shift: 0.0,
                barrier: BarrierKind::Constant { level: 0.0 },
            });
        }
        let mut spec = spec.expect("set above");
        if let Some(v) = get("driver") {
            spec.driver.base =
                BaseDriver::parse(v).map_err(|e| cfg_err("driver", e.to_string()))?;
        }
        if let Some(v) = get("resistance") {
            spec.driver.resistance = non_negative("resistance", num("resistance", v)?)?;
        }
        if let Some(v) = get("terminal") {
            spec.terminal = Terminal::parse(v).map_err(|e| cfg_err("terminal", e.to_string()))?;
        }
        if let Some(v) = get("terminal_shift") {
            spec.terminal_shift = num("terminal_shift", v)?;
        }
        if let Some(v) = get("barrier") {
            spec.barrier = BarrierKind::parse(v).map_err(|e| cfg_err("barrier", e.to_string()))?;
        }
        if let Some(v) = get("T") {
            horizon = positive("T", num("T", v)?)?;
        }
        if let Some(v) = get("N") {
            steps = num("N", v)?;
            if steps == 0 {
                return Err(cfg_err("N", "must be at least 1"));
            }
        }
        if let Some(v) = get("d") {
            dim = num("d", v)?;
            if !(1..=3).contains(&dim) {
                return Err(cfg_err("d", "must be 1, 2 or 3"));
            }
        }
        let paths: usize = get("M").map(|v| num("M", v)).transpose()?.unwrap_or(10_000);
        if paths < 2 {
            return Err(cfg_err("M", "must be at least 2"));
        }
        let seed: u64 = get("seed")
            .map(|v| num("seed", v))
            .transpose()?
            .unwrap_or(1);

        let mut basis = RegressionBasis::default_for(paths);
        if let Some(v) = get("basis_degree") {
            basis.degree = num("basis_degree", v)?;
            if basis.degree > 7 {
                return Err(cfg_err("basis_degree", "must be at most 7"));
            }
        }
        if let Some(v) = get("ridge") {
            basis.ridge = non_negative("ridge", num("ridge", v)?)?;
        }
        if let Some(v) = get("features") {
            basis.features = Features::parse(v).map_err(|e| cfg_err("features", e.to_string()))?;
        }
        let mut solver = SolverConfig::new(basis);
        if let Some(v) = get("alpha") {
            solver.alpha = Some(non_negative("alpha", num("alpha", v)?)?);
        }
        if let Some(v) = get("beta") {
            solver.beta = Some(positive("beta", num("beta", v)?)?);
        }
        if let Some(v) = get("tol_fix") {
            solver.tol_fix = Some(positive("tol_fix", num("tol_fix", v)?)?);
        }
        if let Some(v) = get("tol_flat") {
            solver.tol_flat = positive("tol_flat", num("tol_flat", v)?)?;
        }
        if let Some(v) = get("tol_proj") {
            solver.tol_proj = positive("tol_proj", num("tol_proj", v)?)?;
        }
        if let Some(v) = get("max_iter") {
            solver.max_iter = num("max_iter", v)?;
            if solver.max_iter == 0 {
                return Err(cfg_err("max_iter", "must be at least 1"));
            }
        }
        if let Some(v) = get("c2t_max") {
            solver.c2t_max = positive("c2t_max", num("c2t_max", v)?)?;
        }
        if let Some(v) = get("ito_sum") {
            solver.ito = ItoSum::parse(v).map_err(|e| cfg_err("ito_sum", e.to_string()))?;
        }
        Ok(Self {
            spec,
            paths,
            steps,
            dim,
            horizon,
            seed,
            solver,
            output: get("output").map(str::to_string),
        })
    }

    /// Sample the configured problem.
    pub fn problem(&self) -> Result<Problem> {
        let grid = make_grid(self.horizon, self.steps)?;
        Problem::sample(self.spec.clone(), &grid, self.paths, self.dim, self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_problem_with_overrides() {
        let cfg = RunConfig::parse(
            "# put\nproblem = american-put\nM = 500\nseed = 9\nbasis_degree = 2\nmax_iter = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.paths, 500);
        assert_eq!(cfg.steps, 50);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.solver.basis.degree, 2);
        assert_eq!(cfg.solver.max_iter, 3);
        assert!((cfg.solver.basis.ridge - 5e-6).abs() < 1e-18);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("problem = zero\nbasis_dgree = 3\n").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "basis_dgree"));
        assert!(err.to_string().contains("basis_dgree"));
    }

    #[test]
    fn rejects_bad_values_and_duplicates() {
        assert!(RunConfig::parse("problem = zero\nM = -3\n").is_err());
        assert!(RunConfig::parse("problem = zero\nT = 0\n").is_err());
        assert!(RunConfig::parse("problem = zero\nM = 10\nM = 20\n").is_err());
        assert!(RunConfig::parse("problem = nope\n").is_err());
        assert!(RunConfig::parse("M = 100\n").is_err());
        assert!(RunConfig::parse("problem zero\n").is_err());
    }

    #[test]
    fn inline_problem() {
        let cfg = RunConfig::parse(
            "driver = linear:0,0.1,0\nresistance = 0.02\nterminal = brownian:0,1\nbarrier = constant:-10\nT = 1\nN = 10\nM = 200\n",
        )
        .unwrap();
        assert_eq!(cfg.spec.driver.resistance, 0.02);
        assert_eq!(cfg.spec.barrier, BarrierKind::Constant { level: -10.0 });
        let p = cfg.problem().unwrap();
        assert_eq!(p.paths(), 200);
        assert_eq!(p.steps(), 10);
    }
}
