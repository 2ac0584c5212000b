//! Uniform time grids and seeded Brownian ensembles.
//!
//! Path `m` draws its increments from a ChaCha stream selected by `m`, so an
//! ensemble depends only on `(seed, M, N, d, T)` and never on how the paths
//! are scheduled across threads.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, Result};

/// Uniform discretisation `0 = t_0 < t_1 < ... < t_N = T`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(invalid("step count must be at least 1"));
        }
        Ok(Self {
            horizon,
            steps,
            dt: horizon / steps as f64,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Node `t_i`; the last node is pinned to the horizon exactly.
    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            i as f64 * self.dt
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.time(i)).collect()
    }
}

/// Convenience wrapper matching the `make_grid` operation.
pub fn make_grid(horizon: f64, steps: usize) -> Result<TimeGrid> {
    TimeGrid::new(horizon, steps)
}

/// `M` sampled `d`-dimensional Brownian paths on a [`TimeGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble {
    grid: TimeGrid,
    paths: usize,
    dim: usize,
    seed: u64,
    /// Row-major `M x N x d` increments.
    increments: Vec<f64>,
    /// Row-major `M x (N + 1) x d` cumulative paths.
    positions: Vec<f64>,
}

impl PathEnsemble {
    /// Assemble an ensemble from raw increments, rebuilding the cumulative paths.
    pub fn from_increments(
        grid: TimeGrid,
        paths: usize,
        dim: usize,
        seed: u64,
        increments: Vec<f64>,
    ) -> Result<Self> {
        if paths == 0 || dim == 0 {
            return Err(invalid("path count and dimension must be at least 1"));
        }
        let n = grid.steps();
        if increments.len() != paths * n * dim {
            return Err(invalid(format!(
                "expected {} increments, got {}",
                paths * n * dim,
                increments.len()
            )));
        }
        let mut positions = vec![0.0; paths * (n + 1) * dim];
        positions
            .par_chunks_mut((n + 1) * dim)
            .zip(increments.par_chunks(n * dim))
            .for_each(|(pos, inc)| accumulate(pos, inc, dim));
        Ok(Self {
            grid,
            paths,
            dim,
            seed,
            increments,
            positions,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    /// `dB[m][i][j]`.
    #[inline]
    pub fn increment(&self, m: usize, i: usize, j: usize) -> f64 {
        self.increments[(m * self.grid.steps() + i) * self.dim + j]
    }

    /// The `d` increments of path `m` over step `i`.
    #[inline]
    pub fn step_increments(&self, m: usize, i: usize) -> &[f64] {
        let start = (m * self.grid.steps() + i) * self.dim;
        &self.increments[start..start + self.dim]
    }

    /// `B[m][i][j]`.
    #[inline]
    pub fn position(&self, m: usize, i: usize, j: usize) -> f64 {
        self.positions[(m * (self.grid.steps() + 1) + i) * self.dim + j]
    }

    #[inline]
    pub fn positions_at(&self, m: usize, i: usize) -> &[f64] {
        let start = (m * (self.grid.steps() + 1) + i) * self.dim;
        &self.positions[start..start + self.dim]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    /// Aggregate blocks of `factor` consecutive steps into one, giving the same
    /// Brownian paths observed on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let n = self.grid.steps();
        if factor == 0 || n % factor != 0 {
            return Err(invalid(format!(
                "coarsening factor {factor} must divide the step count {n}"
            )));
        }
        let coarse_n = n / factor;
        let grid = TimeGrid::new(self.grid.horizon(), coarse_n)?;
        let d = self.dim;
        let mut increments = vec![0.0; self.paths * coarse_n * d];
        increments
            .par_chunks_mut(coarse_n * d)
            .enumerate()
            .for_each(|(m, row)| {
                for i in 0..coarse_n {
                    for j in 0..d {
                        // difference of positions keeps the coarse path on the fine one
                        row[i * d + j] =
                            self.position(m, (i + 1) * factor, j) - self.position(m, i * factor, j);
                    }
                }
            });
        Self::from_increments(grid, self.paths, d, self.seed, increments)
    }

    /// Write the canonical CSV dump: a header line, the parameter line, then
    /// one row of `N * d` increments per path with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "T,N,M,d,seed")?;
        writeln!(
            out,
            "{:.16e},{},{},{},{}",
            self.grid.horizon(),
            self.grid.steps(),
            self.paths,
            self.dim,
            self.seed
        )?;
        let row_len = self.grid.steps() * self.dim;
        let mut line = String::new();
        for row in self.increments.chunks(row_len) {
            line.clear();
            for (k, v) in row.iter().enumerate() {
                if k > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{v:.16e}"));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Parse a dump produced by [`PathEnsemble::write_csv`].
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| invalid("empty ensemble dump"))??;
        if header.trim() != "T,N,M,d,seed" {
            return Err(invalid(format!("unexpected ensemble header `{header}`")));
        }
        let params = lines
            .next()
            .ok_or_else(|| invalid("missing parameter line"))??;
        let fields: Vec<&str> = params.trim().split(',').collect();
        if fields.len() != 5 {
            return Err(invalid("parameter line must have 5 fields"));
        }
        let bad = |what: &str| invalid(format!("could not parse {what} in ensemble dump"));
        let horizon: f64 = fields[0].parse().map_err(|_| bad("T"))?;
        let steps: usize = fields[1].parse().map_err(|_| bad("N"))?;
        let paths: usize = fields[2].parse().map_err(|_| bad("M"))?;
        let dim: usize = fields[3].parse().map_err(|_| bad("d"))?;
        let seed: u64 = fields[4].parse().map_err(|_| bad("seed"))?;
        let grid = TimeGrid::new(horizon, steps)?;
        let mut increments = Vec::with_capacity(paths * steps * dim);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            for v in line.split(',') {
                increments.push(v.trim().parse::<f64>().map_err(|_| bad("increment"))?);
            }
        }
        Self::from_increments(grid, paths, dim, seed, increments)
    }
}

fn accumulate(pos: &mut [f64], inc: &[f64], dim: usize) {
    let n = inc.len() / dim;
    for i in 0..n {
        for j in 0..dim {
            pos[(i + 1) * dim + j] = pos[i * dim + j] + inc[i * dim + j];
        }
    }
}

/// Generator for the increments of path `m`.
pub(crate) fn path_rng(seed: u64, m: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(m as u64);
    rng
}

/// Draw `M` independent `d`-dimensional Brownian paths on `grid`.
pub fn sample_brownian(
    grid: &TimeGrid,
    paths: usize,
    dim: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    if paths == 0 || dim == 0 {
        return Err(invalid("path count and dimension must be at least 1"));
    }
    let n = grid.steps();
    let scale = grid.dt().sqrt();
    let mut increments = vec![0.0; paths * n * dim];
    increments
        .par_chunks_mut(n * dim)
        .enumerate()
        .for_each(|(m, row)| {
            let mut rng = path_rng(seed, m);
            for v in row.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = scale * z;
            }
        });
    PathEnsemble::from_increments(grid.clone(), paths, dim, seed, increments)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_nodes() {
        let g = make_grid(1.0, 4).unwrap();
        assert_eq!(g.nodes(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(make_grid(1.0, 1).unwrap().nodes(), vec![0.0, 1.0]);
        assert!((make_grid(0.5, 5).unwrap().dt() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(make_grid(0.0, 4).is_err());
        assert!(make_grid(-1.0, 4).is_err());
        assert!(make_grid(f64::NAN, 4).is_err());
        assert!(make_grid(1.0, 0).is_err());
    }

    #[test]
    fn grid_gaps_uniform() {
        let g = make_grid(3.7, 977).unwrap();
        let nodes = g.nodes();
        assert_eq!(nodes[0], 0.0);
        assert_eq!(*nodes.last().unwrap(), 3.7);
        for w in nodes.windows(2) {
            assert!(w[1] > w[0]);
            assert!(((w[1] - w[0]) - g.dt()).abs() < 1e-12);
        }
    }

    #[test]
    fn ensemble_is_deterministic_and_reconstructs() {
        let g = make_grid(1.0, 20).unwrap();
        let a = sample_brownian(&g, 50, 2, 7).unwrap();
        let b = sample_brownian(&g, 50, 2, 7).unwrap();
        assert_eq!(a, b);
        let c = sample_brownian(&g, 50, 2, 8).unwrap();
        assert_ne!(a.increments(), c.increments());
        for m in 0..50 {
            assert_eq!(a.position(m, 0, 0), 0.0);
            for i in 0..20 {
                for j in 0..2 {
                    let step = a.position(m, i + 1, j) - a.position(m, i, j);
                    assert!((step - a.increment(m, i, j)).abs() <= 1e-12 * 20.0);
                }
            }
        }
    }

    #[test]
    fn path_does_not_depend_on_ensemble_size() {
        let g = make_grid(1.0, 10).unwrap();
        let small = sample_brownian(&g, 3, 1, 11).unwrap();
        let large = sample_brownian(&g, 30, 1, 11).unwrap();
        for m in 0..3 {
            for i in 0..10 {
                assert_eq!(small.increment(m, i, 0), large.increment(m, i, 0));
            }
        }
    }

    #[test]
    fn coarsen_keeps_terminal_values() {
        let g = make_grid(1.0, 12).unwrap();
        let fine = sample_brownian(&g, 10, 1, 3).unwrap();
        let coarse = fine.coarsen(4).unwrap();
        assert_eq!(coarse.steps(), 3);
        for m in 0..10 {
            assert!((coarse.position(m, 3, 0) - fine.position(m, 12, 0)).abs() < 1e-14);
        }
        assert!(fine.coarsen(5).is_err());
    }

    #[test]
    fn csv_dump_round_trips() {
        let g = make_grid(0.7, 6).unwrap();
        let e = sample_brownian(&g, 4, 2, 99).unwrap();
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        let back = PathEnsemble::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, e);
    }
}
