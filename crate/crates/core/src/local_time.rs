//! Local time of `X - S` at zero and contact-set diagnostics.
//!
//! `L` is normalised as in `(X_t - S_t)^- = (X_0 - S_0)^- - int 1{X <= S} d(X - S) + L_t`,
//! i.e. half the usual right local time.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::PathMatrix;

/// Tanaka band in units of `sqrt(dt)`. On a grid `X - S` is essentially
/// never exactly zero, so the indicator `1{X <= S}` is widened to
/// `1{X - S <= TANAKA_BAND sqrt(dt)}`.
pub const TANAKA_BAND: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalTimeResiduals {
    /// Paths with `X == S` at every node.
    pub degenerate_paths: usize,
    /// Largest one-step decrease of the Tanaka estimate over all paths.
    pub max_tanaka_decrease: f64,
    /// Paths on which the Tanaka estimate goes negative somewhere.
    pub negative_paths: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalTimeEstimate {
    /// Discrete Tanaka identity solved for `L`; `M x (N + 1)`.
    pub tanaka: PathMatrix,
    /// Occupation time of `[0, band]` times the path's realized variance
    /// rate, over `2 band`.
    pub occupation: PathMatrix,
    /// Occupation band `sqrt(dt)`.
    pub band: f64,
    /// Indicator band of the Tanaka sum.
    pub tanaka_band: f64,
    pub residuals: LocalTimeResiduals,
}

/// Both local-time estimators of `X - S` at zero.
pub fn tanaka_local_time(x: &PathMatrix, s: &PathMatrix, dt: f64) -> Result<LocalTimeEstimate> {
    banded_local_time(x, s, dt, TANAKA_BAND * dt.sqrt())
}

fn banded_local_time(
    x: &PathMatrix,
    s: &PathMatrix,
    dt: f64,
    tanaka_band: f64,
) -> Result<LocalTimeEstimate> {
    if !x.same_shape(s) {
        return Err(Error::ShapeMismatch(
            "process and barrier differ in shape".into(),
        ));
    }
    let m = x.rows();
    let cols = x.cols();
    let band = dt.sqrt();
    let mut tanaka = PathMatrix::zeros(m, cols);
    let mut occupation = PathMatrix::zeros(m, cols);
    let flags: Vec<(bool, f64, bool)> = tanaka
        .par_rows_mut()
        .zip(occupation.par_rows_mut())
        .enumerate()
        .map(|(p, (lt, lo))| {
            let gap: Vec<f64> = x.row(p).iter().zip(s.row(p)).map(|(a, b)| a - b).collect();
            let start = (-gap[0]).max(0.0);
            let steps = cols.saturating_sub(1).max(1) as f64;
            let rate = gap.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / (steps * dt);
            let mut sum = 0.0;
            let mut worst_drop = 0.0_f64;
            let mut negative = false;
            for i in 0..cols.saturating_sub(1) {
                let step = gap[i + 1] - gap[i];
                if gap[i] <= tanaka_band {
                    sum += step;
                }
                lt[i + 1] = (-gap[i + 1]).max(0.0) - start + sum;
                worst_drop = worst_drop.max(lt[i] - lt[i + 1]);
                negative |= lt[i + 1] < 0.0;
                let near = (0.0..=band).contains(&gap[i]);
                lo[i + 1] = lo[i] + if near { rate * dt / (2.0 * band) } else { 0.0 };
            }
            (gap.iter().all(|g| *g == 0.0), worst_drop, negative)
        })
        .collect();
    let residuals = LocalTimeResiduals {
        degenerate_paths: flags.iter().filter(|f| f.0).count(),
        max_tanaka_decrease: flags.iter().fold(0.0, |a, f| a.max(f.1)),
        negative_paths: flags.iter().filter(|f| f.2).count(),
    };
    Ok(LocalTimeEstimate {
        tanaka,
        occupation,
        band,
        tanaka_band,
        residuals,
    })
}

/// Inputs to [`contact_set_diagnostics`], all on one grid.
pub struct ContactInputs<'a> {
    /// `M x (N + 1)`, expected to satisfy `Y >= S`.
    pub y: &'a PathMatrix,
    pub s: &'a PathMatrix,
    /// `M x (N d)`.
    pub z: &'a PathMatrix,
    /// `M x (N d)`.
    pub sigma: &'a PathMatrix,
    /// `M x (N + 1)`.
    pub k: &'a PathMatrix,
    /// Driver values per step, `M x N`.
    pub drivers: &'a PathMatrix,
    /// Finite-variation increments of `S`, `M x N`.
    pub drift: &'a PathMatrix,
    pub dim: usize,
    pub dt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactDiagnostics {
    /// False when no node falls in the contact set.
    pub applicable: bool,
    pub delta_contact: f64,
    /// Fraction of (path, step) pairs in the contact set.
    pub contact_fraction: f64,
    /// Mean of `|Z - sigma|^2` over the contact set.
    pub z_sigma_mean_sq: Option<f64>,
    /// `E|K_T + int 1_c f + int 1_c dA + L_T|`, `L` from the Tanaka sum over the contact set.
    pub identity_residual: Option<f64>,
    /// `E[K_T]` for scale.
    pub mean_terminal_k: f64,
    /// `sup_i |E[K_i] - E[L^r_N - L^r_{N-i}]|` with `L^r` the Tanaka local
    /// time of the time-reversed gap `Y - S` at zero.
    pub k_vs_local_time: Option<f64>,
}

/// Discrete checks of `1{Y = S}(Z - sigma) = 0` and
/// `K_t = -int 1{Y = S} f ds - int 1{Y = S} dA - L_t` on the contact set
/// `{|Y - S| <= delta_contact}`, `delta_contact = 2 sqrt(dt) (1 + std(Y - S))`.
pub fn contact_set_diagnostics(inp: &ContactInputs<'_>) -> Result<ContactDiagnostics> {
    let m = inp.y.rows();
    let cols = inp.y.cols();
    let n = cols - 1;
    let d = inp.dim;
    let shapes_ok = inp.s.same_shape(inp.y)
        && inp.k.same_shape(inp.y)
        && inp.z.rows() == m
        && inp.z.cols() == n * d
        && inp.sigma.same_shape(inp.z)
        && inp.drivers.rows() == m
        && inp.drivers.cols() == n
        && inp.drift.same_shape(inp.drivers);
    if !shapes_ok {
        return Err(Error::ShapeMismatch(
            "contact diagnostics inputs disagree in shape".into(),
        ));
    }
    let count = (m * cols) as f64;
    let mean_gap = inp
        .y
        .data()
        .iter()
        .zip(inp.s.data())
        .map(|(a, b)| a - b)
        .sum::<f64>()
        / count;
    let var_gap = inp
        .y
        .data()
        .iter()
        .zip(inp.s.data())
        .map(|(a, b)| (a - b - mean_gap).powi(2))
        .sum::<f64>()
        / count;
    let delta = 2.0 * inp.dt.sqrt() * (1.0 + var_gap.sqrt());
    // Tanaka sum over the contact set itself, so the drift terms of the
    // identity cancel and only the discrete martingale mismatch remains.
    let lt = banded_local_time(inp.y, inp.s, inp.dt, delta)?;

    // (contact steps, sum |Z - sigma|^2 on contact, |identity residual at T|)
    let per_path: Vec<(usize, f64, f64)> = (0..m)
        .into_par_iter()
        .map(|p| {
            let mut hits = 0;
            let mut zs = 0.0;
            let mut integral = 0.0;
            for i in 0..n {
                if (inp.y.get(p, i) - inp.s.get(p, i)).abs() <= delta {
                    hits += 1;
                    for j in 0..d {
                        let diff = inp.z.get(p, i * d + j) - inp.sigma.get(p, i * d + j);
                        zs += diff * diff;
                    }
                    integral += inp.drivers.get(p, i) * inp.dt + inp.drift.get(p, i);
                }
            }
            let residual = inp.k.get(p, n) + integral + lt.tanaka.get(p, n);
            (hits, zs, residual.abs())
        })
        .collect();
    let hits: usize = per_path.iter().map(|r| r.0).sum();
    let mean_terminal_k = inp.k.column_mean(n);
    if hits == 0 {
        return Ok(ContactDiagnostics {
            applicable: false,
            delta_contact: delta,
            contact_fraction: 0.0,
            z_sigma_mean_sq: None,
            identity_residual: None,
            mean_terminal_k,
            k_vs_local_time: None,
        });
    }
    let zs: f64 = per_path.iter().map(|r| r.1).sum();
    let residual = per_path.iter().map(|r| r.2).sum::<f64>() / m as f64;
    let reversed_y = PathMatrix::from_fn(m, cols, |p, r| inp.y.get(p, n - r));
    let reversed_s = PathMatrix::from_fn(m, cols, |p, r| inp.s.get(p, n - r));
    let reversed = tanaka_local_time(&reversed_y, &reversed_s, inp.dt)?;
    let k_vs_lt = (0..cols)
        .map(|i| {
            (inp.k.column_mean(i) - reversed.tanaka.column_mean(n)
                + reversed.tanaka.column_mean(n - i))
            .abs()
        })
        .fold(0.0, f64::max);
    Ok(ContactDiagnostics {
        applicable: true,
        delta_contact: delta,
        contact_fraction: hits as f64 / (m * n) as f64,
        z_sigma_mean_sq: Some(zs / hits as f64),
        identity_residual: Some(residual),
        mean_terminal_k,
        k_vs_local_time: Some(k_vs_lt),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn far_above_barrier_gives_zero() {
        let x = PathMatrix::from_fn(3, 11, |r, i| 1.5 + (r as f64 + i as f64 * 0.3).sin() * 0.4);
        let s = PathMatrix::zeros(3, 11);
        let est = tanaka_local_time(&x, &s, 0.01).unwrap();
        assert!(est.tanaka.data().iter().all(|v| *v == 0.0));
        assert!(est.occupation.data().iter().all(|v| *v == 0.0));
        assert_eq!(est.residuals.degenerate_paths, 0);
    }

    #[test]
    fn degenerate_paths_are_flagged() {
        let x = PathMatrix::zeros(2, 5);
        let est = tanaka_local_time(&x, &x, 0.25).unwrap();
        assert_eq!(est.residuals.degenerate_paths, 2);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = PathMatrix::zeros(2, 5);
        let b = PathMatrix::zeros(2, 4);
        assert!(tanaka_local_time(&a, &b, 0.1).is_err());
    }

    #[test]
    fn occupation_is_nondecreasing() {
        let x = PathMatrix::from_fn(4, 50, |r, i| {
            ((r + 1) as f64 * i as f64 * 0.37).sin().abs() * 0.2
        });
        let s = PathMatrix::zeros(4, 50);
        let est = tanaka_local_time(&x, &s, 0.02).unwrap();
        for r in 0..4 {
            let row = est.occupation.row(r);
            assert!(row.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn empty_contact_set_is_not_applicable() {
        let (m, n) = (3, 10);
        let y = PathMatrix::filled(m, n + 1, 5.0);
        let s = PathMatrix::zeros(m, n + 1);
        let z = PathMatrix::zeros(m, n);
        let k = PathMatrix::zeros(m, n + 1);
        let f = PathMatrix::zeros(m, n);
        let diag = contact_set_diagnostics(&ContactInputs {
            y: &y,
            s: &s,
            z: &z,
            sigma: &z,
            k: &k,
            drivers: &f,
            drift: &f,
            dim: 1,
            dt: 0.1,
        })
        .unwrap();
        assert!(!diag.applicable);
        assert!(diag.z_sigma_mean_sq.is_none());
    }
}
