//! Cross-sectional least-squares stand-ins for conditional expectations.
//!
//! `E[X | F_{t_i}]` is approximated by a ridge regression of `X` on
//! polynomials in the time-`t_i` state (Brownian coordinates and barrier
//! value). Optional and dual optional projections of increasing processes and
//! the martingale-representation density `Z` are built on top of it.
//!
//! All ensemble reductions run over fixed-size row chunks combined in chunk
//! order, so fits are bit-identical for any thread count.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barrier::BarrierProcess;
use crate::error::{invalid, Error, Result};
use crate::grid::PathEnsemble;
use crate::matrix::PathMatrix;

const CHUNK: usize = 2048;

/// Which time-slice state variables enter the basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Features {
    pub brownian: bool,
    pub barrier: bool,
}

impl Default for Features {
    fn default() -> Self {
        Self {
            brownian: true,
            barrier: true,
        }
    }
}

impl Features {
    /// Parse `brownian`, `barrier` or `brownian+barrier` (comma also accepted).
    pub fn parse(s: &str) -> Result<Self> {
        let mut f = Self {
            brownian: false,
            barrier: false,
        };
        for part in s.split(['+', ',']) {
            match part.trim() {
                "brownian" => f.brownian = true,
                "barrier" => f.barrier = true,
                other => {
                    return Err(Error::Unknown {
                        what: "feature",
                        name: other.to_string(),
                    })
                }
            }
        }
        Ok(f)
    }

    pub fn label(&self) -> String {
        match (self.brownian, self.barrier) {
            (true, true) => "brownian+barrier".into(),
            (true, false) => "brownian".into(),
            (false, true) => "barrier".into(),
            (false, false) => "none".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionBasis {
    pub degree: usize,
    /// Absolute ridge weight on the non-intercept coefficients.
    pub ridge: f64,
    pub features: Features,
}

impl RegressionBasis {
    /// Degree 3 in `(B, S)` with ridge `1e-8 * M`.
    pub fn default_for(paths: usize) -> Self {
        Self {
            degree: 3,
            ridge: 1e-8 * paths as f64,
            features: Features::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ridge >= 0.0) {
            return Err(invalid(format!("ridge must be >= 0, got {}", self.ridge)));
        }
        Ok(())
    }
}

/// Row-wise access to raw regression features.
pub trait FeatureSource: Sync {
    fn rows(&self) -> usize;
    fn width(&self) -> usize;
    fn fill(&self, row: usize, out: &mut [f64]);
}

/// Features given as explicit columns.
pub struct ColumnFeatures<'a>(pub Vec<&'a [f64]>);

impl FeatureSource for ColumnFeatures<'_> {
    fn rows(&self) -> usize {
        self.0.first().map_or(0, |c| c.len())
    }

    fn width(&self) -> usize {
        self.0.len()
    }

    fn fill(&self, row: usize, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.0) {
            *o = c[row];
        }
    }
}

/// Time-slice state `(B_{t_i}, S_{t_i})` of an ensemble.
pub struct SliceFeatures<'a> {
    pub ensemble: &'a PathEnsemble,
    pub barrier: &'a BarrierProcess,
    pub slice: usize,
    pub features: Features,
}

impl FeatureSource for SliceFeatures<'_> {
    fn rows(&self) -> usize {
        self.ensemble.paths()
    }

    fn width(&self) -> usize {
        let mut w = 0;
        if self.features.brownian {
            w += self.ensemble.dim();
        }
        if self.features.barrier {
            w += 1;
        }
        w
    }

    fn fill(&self, row: usize, out: &mut [f64]) {
        let mut k = 0;
        if self.features.brownian {
            let b = self.ensemble.positions_at(row, self.slice);
            out[..b.len()].copy_from_slice(b);
            k = b.len();
        }
        if self.features.barrier {
            out[k] = self.barrier.value(row, self.slice);
        }
    }
}

/// A factorised regression design for one feature source.
#[derive(Clone, Debug)]
pub struct Design {
    rows: usize,
    width: usize,
    active: Vec<usize>,
    shift: Vec<f64>,
    scale: Vec<f64>,
    /// Exponent of each active variable, one entry per basis function.
    exponents: Vec<Vec<u8>>,
    degree: usize,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

/// Coefficients and fitted values of one regression.
#[derive(Clone, Debug)]
pub struct Fit {
    pub coefficients: Vec<f64>,
    pub fitted: Vec<f64>,
}

/// A fit with ordinary least-squares standard errors.
#[derive(Clone, Debug)]
pub struct FitStats {
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub fitted: Vec<f64>,
}

fn monomial_exponents(vars: usize, degree: usize) -> Vec<Vec<u8>> {
    let mut out = vec![vec![0u8; vars]];
    if vars == 0 {
        return out;
    }
    for total in 1..=degree {
        let mut current = vec![0u8; vars];
        push_compositions(&mut out, &mut current, 0, total);
    }
    out
}

fn push_compositions(out: &mut Vec<Vec<u8>>, current: &mut Vec<u8>, var: usize, left: usize) {
    if var + 1 == current.len() {
        current[var] = left as u8;
        out.push(current.clone());
        current[var] = 0;
        return;
    }
    for e in (0..=left).rev() {
        current[var] = e as u8;
        push_compositions(out, current, var + 1, left - e);
    }
    current[var] = 0;
}

fn chunk_reduce<T: Send>(
    rows: usize,
    map: impl Fn(std::ops::Range<usize>) -> T + Sync + Send,
    mut combine: impl FnMut(T, T) -> T,
) -> Option<T> {
    let starts: Vec<usize> = (0..rows).step_by(CHUNK).collect();
    let partials: Vec<T> = starts
        .par_iter()
        .map(|&s| map(s..(s + CHUNK).min(rows)))
        .collect();
    let mut it = partials.into_iter();
    let first = it.next()?;
    Some(it.fold(first, &mut combine))
}

impl Design {
    /// Build and factorise `X^T X + ridge * diag(0, 1, ..., 1)`.
    ///
    /// With `standardize`, each raw feature is centred and scaled before the
    /// monomials are formed; features with zero spread are dropped either way.
    pub fn new(
        source: &dyn FeatureSource,
        degree: usize,
        ridge: f64,
        standardize: bool,
        slice: usize,
    ) -> Result<Self> {
        let rows = source.rows();
        let width = source.width();
        let mut sums = vec![0.0; width];
        let mut buf = vec![0.0; width];
        for r in 0..rows {
            source.fill(r, &mut buf);
            for k in 0..width {
                sums[k] += buf[k];
            }
        }
        let means: Vec<f64> = sums.iter().map(|s| s / rows.max(1) as f64).collect();
        let mut sq = vec![0.0; width];
        for r in 0..rows {
            source.fill(r, &mut buf);
            for k in 0..width {
                let c = buf[k] - means[k];
                sq[k] += c * c;
            }
        }
        let mut active = Vec::new();
        let mut shift = Vec::new();
        let mut scale = Vec::new();
        for k in 0..width {
            let mean = means[k];
            let sd = (sq[k] / rows.max(1) as f64).sqrt();
            if sd > 1e-12 * mean.abs().max(1.0) {
                active.push(k);
                if standardize {
                    shift.push(mean);
                    scale.push(1.0 / sd);
                } else {
                    shift.push(0.0);
                    scale.push(1.0);
                }
            }
        }
        if degree > 7 || active.len() > 8 {
            return Err(invalid(format!(
                "basis supports degree <= 7 in at most 8 variables, got degree {degree} in {}",
                active.len()
            )));
        }
        let exponents = monomial_exponents(active.len(), degree);
        let p = exponents.len();
        if rows <= p {
            return Err(invalid(format!(
                "regression at slice {slice} needs more than {p} paths, got {rows}"
            )));
        }
        let mut design = Self {
            rows,
            width,
            active,
            shift,
            scale,
            exponents,
            degree,
            chol: DMatrix::<f64>::identity(1, 1)
                .cholesky()
                .expect("1x1 identity"),
        };
        let gram = chunk_reduce(
            rows,
            |range| {
                let mut g = vec![0.0; p * p];
                let mut raw = vec![0.0; width];
                let mut phi = vec![0.0; p];
                for r in range {
                    source.fill(r, &mut raw);
                    design.basis_row(&raw, &mut phi);
                    for a in 0..p {
                        let pa = phi[a];
                        for b in a..p {
                            g[a * p + b] += pa * phi[b];
                        }
                    }
                }
                g
            },
            |mut acc, part| {
                acc.iter_mut().zip(&part).for_each(|(a, b)| *a += b);
                acc
            },
        )
        .unwrap_or_else(|| vec![0.0; p * p]);
        let mut gm = DMatrix::<f64>::zeros(p, p);
        for a in 0..p {
            for b in a..p {
                gm[(a, b)] = gram[a * p + b];
                gm[(b, a)] = gram[a * p + b];
            }
        }
        for a in 1..p {
            gm[(a, a)] += ridge;
        }
        let max_diag = (0..p).map(|a| gm[(a, a)]).fold(0.0, f64::max);
        let chol = gm
            .clone()
            .cholesky()
            .ok_or(Error::RankDeficient { slice })?;
        let min_pivot = (0..p)
            .map(|a| chol.l()[(a, a)].powi(2))
            .fold(f64::INFINITY, f64::min);
        if !(min_pivot > 1e-13 * max_diag) {
            return Err(Error::RankDeficient { slice });
        }
        design.chol = chol;
        Ok(design)
    }

    pub fn basis_len(&self) -> usize {
        self.exponents.len()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    fn basis_row(&self, raw: &[f64], out: &mut [f64]) {
        let q = self.active.len();
        // powers[v][e] for e <= degree
        let mut powers = [[1.0_f64; 8]; 8];
        for (v, &k) in self.active.iter().enumerate() {
            let z = (raw[k] - self.shift[v]) * self.scale[v];
            for e in 1..=self.degree {
                powers[v][e] = powers[v][e - 1] * z;
            }
        }
        for (o, exps) in out.iter_mut().zip(&self.exponents) {
            let mut val = 1.0;
            for v in 0..q {
                let e = exps[v] as usize;
                if e > 0 {
                    val *= powers[v][e];
                }
            }
            *o = val;
        }
    }

    fn check(&self, source: &dyn FeatureSource, target: &[f64]) -> Result<()> {
        if source.rows() != self.rows || source.width() != self.width || target.len() != self.rows {
            return Err(Error::ShapeMismatch(format!(
                "design built for {} rows x {} features, got {} x {} with {} targets",
                self.rows,
                self.width,
                source.rows(),
                source.width(),
                target.len()
            )));
        }
        if let Some(r) = target.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite regression target at row {r}")));
        }
        Ok(())
    }

    fn solve_coefficients(&self, source: &dyn FeatureSource, target: &[f64]) -> Vec<f64> {
        let p = self.basis_len();
        let width = self.width;
        let rhs = chunk_reduce(
            self.rows,
            |range| {
                let mut acc = vec![0.0; p];
                let mut raw = vec![0.0; width];
                let mut phi = vec![0.0; p];
                for r in range {
                    source.fill(r, &mut raw);
                    self.basis_row(&raw, &mut phi);
                    let t = target[r];
                    for a in 0..p {
                        acc[a] += phi[a] * t;
                    }
                }
                acc
            },
            |mut acc, part| {
                acc.iter_mut().zip(&part).for_each(|(a, b)| *a += b);
                acc
            },
        )
        .unwrap_or_else(|| vec![0.0; p]);
        self.chol
            .solve(&DVector::from_vec(rhs))
            .iter()
            .copied()
            .collect()
    }

    fn evaluate(&self, source: &dyn FeatureSource, coefficients: &[f64]) -> Vec<f64> {
        let p = self.basis_len();
        let width = self.width;
        let mut fitted = vec![0.0; self.rows];
        fitted
            .par_chunks_mut(CHUNK)
            .enumerate()
            .for_each(|(c, out)| {
                let mut raw = vec![0.0; width];
                let mut phi = vec![0.0; p];
                for (k, o) in out.iter_mut().enumerate() {
                    source.fill(c * CHUNK + k, &mut raw);
                    self.basis_row(&raw, &mut phi);
                    *o = phi.iter().zip(coefficients).map(|(a, b)| a * b).sum();
                }
            });
        fitted
    }

    pub fn fit(&self, source: &dyn FeatureSource, target: &[f64]) -> Result<Fit> {
        self.check(source, target)?;
        let coefficients = self.solve_coefficients(source, target);
        let fitted = self.evaluate(source, &coefficients);
        Ok(Fit {
            coefficients,
            fitted,
        })
    }

    pub fn fit_with_stats(&self, source: &dyn FeatureSource, target: &[f64]) -> Result<FitStats> {
        let Fit {
            coefficients,
            fitted,
        } = self.fit(source, target)?;
        let p = self.basis_len();
        let rss: f64 = target
            .iter()
            .zip(&fitted)
            .map(|(t, f)| (t - f) * (t - f))
            .sum();
        let sigma2 = rss / (self.rows - p) as f64;
        let standard_errors = (0..p)
            .map(|a| {
                let mut e = DVector::<f64>::zeros(p);
                e[a] = 1.0;
                let col = self.chol.solve(&e);
                (sigma2 * col[a]).max(0.0).sqrt()
            })
            .collect();
        Ok(FitStats {
            coefficients,
            standard_errors,
            fitted,
        })
    }
}

/// Kind tag of a projected process.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionKind {
    OptionalProjection,
    DualOptionalProjection,
    PlainConditional,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedProcess {
    pub values: PathMatrix,
    pub kind: ProjectionKind,
}

/// Per-slice designs over one ensemble and barrier.
pub struct ProjectionEngine<'a> {
    ensemble: &'a PathEnsemble,
    barrier: &'a BarrierProcess,
    basis: RegressionBasis,
    designs: Vec<Design>,
}

impl<'a> ProjectionEngine<'a> {
    pub fn new(
        ensemble: &'a PathEnsemble,
        barrier: &'a BarrierProcess,
        basis: RegressionBasis,
    ) -> Result<Self> {
        basis.validate()?;
        if barrier.paths() != ensemble.paths() || barrier.steps() != ensemble.steps() {
            return Err(Error::ShapeMismatch("barrier and ensemble disagree".into()));
        }
        let designs = (0..=ensemble.steps())
            .map(|i| {
                let src = SliceFeatures {
                    ensemble,
                    barrier,
                    slice: i,
                    features: basis.features,
                };
                Design::new(&src, basis.degree, basis.ridge, true, i)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            ensemble,
            barrier,
            basis,
            designs,
        })
    }

    pub fn basis(&self) -> &RegressionBasis {
        &self.basis
    }

    pub fn ensemble(&self) -> &PathEnsemble {
        self.ensemble
    }

    pub fn steps(&self) -> usize {
        self.ensemble.steps()
    }

    pub fn paths(&self) -> usize {
        self.ensemble.paths()
    }

    fn source(&self, slice: usize) -> SliceFeatures<'_> {
        SliceFeatures {
            ensemble: self.ensemble,
            barrier: self.barrier,
            slice,
            features: self.basis.features,
        }
    }

    fn design(&self, slice: usize) -> Result<&Design> {
        self.designs
            .get(slice)
            .ok_or_else(|| invalid(format!("slice {slice} outside the grid")))
    }

    /// Regression estimate of `E[target | F_{t_slice}]`, one value per path.
    pub fn cond_expect(&self, target: &[f64], slice: usize) -> Result<Vec<f64>> {
        Ok(self.design(slice)?.fit(&self.source(slice), target)?.fitted)
    }

    pub fn fit_with_stats(&self, target: &[f64], slice: usize) -> Result<FitStats> {
        self.design(slice)?
            .fit_with_stats(&self.source(slice), target)
    }

    /// Slice-wise conditional expectation of every column of `process`.
    pub fn optional_projection(&self, process: &PathMatrix) -> Result<ProjectedProcess> {
        self.check_process(process)?;
        let n = self.steps();
        let mut values = PathMatrix::zeros(process.rows(), n + 1);
        for i in 0..=n {
            let fitted = self.cond_expect(&process.column(i), i)?;
            values.set_column(i, &fitted);
        }
        Ok(ProjectedProcess {
            values,
            kind: ProjectionKind::OptionalProjection,
        })
    }

    /// Compensator of a nondecreasing process: projected increments, clamped at
    /// zero, then summed.
    pub fn dual_optional_projection(&self, process: &PathMatrix) -> Result<ProjectedProcess> {
        self.check_process(process)?;
        let n = self.steps();
        let m = process.rows();
        for r in 0..m {
            let row = process.row(r);
            if let Some(i) = row.windows(2).position(|w| w[1] < w[0]) {
                return Err(invalid(format!(
                    "dual optional projection needs a nondecreasing process; path {r} decreases at step {i}"
                )));
            }
        }
        let mut values = PathMatrix::zeros(m, n + 1);
        for i in 0..n {
            let inc: Vec<f64> = (0..m)
                .map(|r| process.get(r, i + 1) - process.get(r, i))
                .collect();
            let fitted = self.cond_expect(&inc, i)?;
            for r in 0..m {
                let prev = values.get(r, i);
                values.set(r, i + 1, prev + fitted[r].max(0.0));
            }
        }
        Ok(ProjectedProcess {
            values,
            kind: ProjectionKind::DualOptionalProjection,
        })
    }

    /// Density `Z` of the martingale with increments `increments` (`M x N`):
    /// `Z[m][i][j] = E[dM_i dB_i^j / dt | F_{t_i}]`. Returned as `M x (N d)`.
    pub fn extract_z(&self, increments: &PathMatrix) -> Result<PathMatrix> {
        let n = self.steps();
        let m = self.paths();
        let d = self.ensemble.dim();
        if increments.rows() != m || increments.cols() != n {
            return Err(Error::ShapeMismatch(format!(
                "martingale increments must be {m} x {n}, got {} x {}",
                increments.rows(),
                increments.cols()
            )));
        }
        let dt = self.ensemble.grid().dt();
        let mut z = PathMatrix::zeros(m, n * d);
        for i in 0..n {
            for j in 0..d {
                let target: Vec<f64> = (0..m)
                    .map(|r| increments.get(r, i) * self.ensemble.increment(r, i, j) / dt)
                    .collect();
                let fitted = self.cond_expect(&target, i)?;
                for r in 0..m {
                    z.set(r, i * d + j, fitted[r]);
                }
            }
        }
        Ok(z)
    }

    fn check_process(&self, process: &PathMatrix) -> Result<()> {
        if process.rows() != self.paths() || process.cols() != self.steps() + 1 {
            return Err(Error::ShapeMismatch(format!(
                "process must be {} x {}, got {} x {}",
                self.paths(),
                self.steps() + 1,
                process.rows(),
                process.cols()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::{make_barrier, BarrierKind};
    use crate::grid::{make_grid, sample_brownian};

    #[test]
    fn monomial_counts() {
        assert_eq!(monomial_exponents(2, 3).len(), 10);
        assert_eq!(monomial_exponents(1, 3).len(), 4);
        assert_eq!(monomial_exponents(0, 3).len(), 1);
        assert_eq!(monomial_exponents(3, 2).len(), 10);
        assert_eq!(monomial_exponents(2, 0), vec![vec![0, 0]]);
    }

    #[test]
    fn constant_target_is_reproduced() {
        let e = sample_brownian(&make_grid(1.0, 5).unwrap(), 500, 1, 1).unwrap();
        let s = make_barrier(&BarrierKind::Constant { level: 0.0 }, &e).unwrap();
        let engine = ProjectionEngine::new(&e, &s, RegressionBasis::default_for(500)).unwrap();
        for i in 0..=5 {
            let out = engine.cond_expect(&vec![2.5; 500], i).unwrap();
            assert!(out.iter().all(|v| (v - 2.5).abs() < 1e-9));
        }
    }

    #[test]
    fn adapted_target_is_a_fixed_point() {
        let e = sample_brownian(&make_grid(1.0, 4).unwrap(), 400, 1, 2).unwrap();
        let s = make_barrier(&BarrierKind::Constant { level: 0.0 }, &e).unwrap();
        let engine = ProjectionEngine::new(&e, &s, RegressionBasis::default_for(400)).unwrap();
        let target: Vec<f64> = (0..400).map(|m| e.position(m, 4, 0)).collect();
        let out = engine.cond_expect(&target, 4).unwrap();
        for (a, b) in out.iter().zip(&target) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rank_deficient_without_ridge() {
        let e = sample_brownian(&make_grid(1.0, 3).unwrap(), 200, 1, 3).unwrap();
        // S = B^1 duplicates the Brownian feature
        let kind = BarrierKind::DriftedBrownian {
            s0: 0.0,
            drift: 0.0,
            vol: 1.0,
        };
        let s = make_barrier(&kind, &e).unwrap();
        let basis = RegressionBasis {
            degree: 2,
            ridge: 0.0,
            features: Features::default(),
        };
        let err = ProjectionEngine::new(&e, &s, basis.clone()).err().unwrap();
        assert!(matches!(err, Error::RankDeficient { .. }));
        assert!(err.to_string().contains("ridge"));
        let ok = RegressionBasis {
            ridge: 1e-6,
            ..basis
        };
        assert!(ProjectionEngine::new(&e, &s, ok).is_ok());
    }

    #[test]
    fn too_few_paths() {
        let e = sample_brownian(&make_grid(1.0, 2).unwrap(), 5, 2, 3).unwrap();
        let s = make_barrier(&BarrierKind::Constant { level: 0.0 }, &e).unwrap();
        assert!(ProjectionEngine::new(&e, &s, RegressionBasis::default_for(5)).is_err());
    }

    #[test]
    fn non_finite_target_rejected() {
        let e = sample_brownian(&make_grid(1.0, 2).unwrap(), 100, 1, 3).unwrap();
        let s = make_barrier(&BarrierKind::Constant { level: 0.0 }, &e).unwrap();
        let engine = ProjectionEngine::new(&e, &s, RegressionBasis::default_for(100)).unwrap();
        let mut t = vec![0.0; 100];
        t[7] = f64::NAN;
        assert!(engine.cond_expect(&t, 1).is_err());
    }

    #[test]
    fn deterministic_process_projections() {
        let e = sample_brownian(&make_grid(1.0, 6).unwrap(), 300, 1, 4).unwrap();
        let s = make_barrier(&BarrierKind::Constant { level: 0.0 }, &e).unwrap();
        let engine = ProjectionEngine::new(&e, &s, RegressionBasis::default_for(300)).unwrap();
        let k = PathMatrix::from_fn(300, 7, |_, i| (i as f64).sqrt());
        let ko = engine.dual_optional_projection(&k).unwrap();
        let kf = engine.optional_projection(&k).unwrap();
        for r in 0..300 {
            for i in 0..=6 {
                assert!((ko.values.get(r, i) - k.get(r, i)).abs() < 1e-9);
                assert!((kf.values.get(r, i) - k.get(r, i)).abs() < 1e-9);
            }
        }
        let bad = PathMatrix::from_fn(300, 7, |_, i| -(i as f64));
        assert!(engine.dual_optional_projection(&bad).is_err());
    }

    #[test]
    fn features_parse() {
        assert_eq!(
            Features::parse("brownian+barrier").unwrap(),
            Features::default()
        );
        assert!(!Features::parse("brownian").unwrap().barrier);
        assert!(Features::parse("volume").is_err());
    }
}
