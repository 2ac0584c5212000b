//! Path-wise Skorohod reflection at zero.
//!
//! Given a slack `eta >= 0` and a path `x` with `x[0] = 0`, the reflector
//! `L[i] = max(0, max_{s <= i} -(eta + x[s]))` is the smallest nondecreasing
//! sequence keeping `y = eta + x + L` non-negative. Running the map on the
//! time-reversed forward path of a reflected BSDE and flipping the clock back
//! gives the increasing process `K`.

use crate::error::{invalid, Error, Result};

/// Brownian continuity-correction constant `-zeta(1/2) / sqrt(2 pi)`.
pub const CONTINUITY_SHIFT: f64 = 0.582_597_157_939_010_6;

#[derive(Clone, Debug, PartialEq)]
pub struct ReflectionInput {
    pub eta: f64,
    /// Reversed-time path, `x[0] = 0`.
    pub x: Vec<f64>,
}

impl ReflectionInput {
    pub fn new(eta: f64, x: Vec<f64>) -> Result<Self> {
        let input = Self { eta, x };
        input.validate()?;
        Ok(input)
    }

    fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) {
            return Err(invalid(format!(
                "terminal slack must be >= 0, got {}",
                self.eta
            )));
        }
        match self.x.first() {
            None => Err(invalid("reflection input path is empty")),
            Some(&x0) if x0 != 0.0 => Err(invalid(format!("path must start at 0, got {x0}"))),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReflectionOutput {
    /// Reflector in reversed time.
    pub l: Vec<f64>,
    /// Reflected path `eta + x + L`.
    pub y: Vec<f64>,
    /// Forward-time increasing process `K[i] = L[N] - L[N - i]`.
    pub k: Vec<f64>,
}

/// Single running-max sweep. Where `L` increases, `y` is exactly zero.
pub fn skorohod_reflect(input: &ReflectionInput) -> Result<ReflectionOutput> {
    input.validate()?;
    let n = input.x.len();
    let mut l = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut level = 0.0_f64;
    for &x in &input.x {
        let free = input.eta + x;
        if -free > level {
            level = -free;
        }
        l.push(level);
        y.push(free + level);
    }
    let k = reverse_to_k(&l)?;
    Ok(ReflectionOutput { l, y, k })
}

/// Flip a reversed-time reflector back to forward time.
pub fn reverse_to_k(l: &[f64]) -> Result<Vec<f64>> {
    let Some(&last) = l.last() else {
        return Err(invalid("empty reflector"));
    };
    if l[0] != 0.0 {
        return Err(invalid(format!("reflector must start at 0, got {}", l[0])));
    }
    if let Some(w) = l.windows(2).position(|w| w[1] < w[0]) {
        return Err(invalid(format!("reflector decreases at index {}", w + 1)));
    }
    let n = l.len() - 1;
    Ok((0..=n).map(|i| last - l[n - i]).collect())
}

/// Assemble the reversed-time input for one path.
///
/// `drivers[k]` is the driver value on step `k` (left endpoint), `barrier`
/// and `stoch_int` live on the nodes with `stoch_int[0] = 0`. The reversed
/// path is
/// `x[r] = sum_{k >= N-r} f_k dt - (I_N - I_{N-r}) + S_N - S_{N-r}`,
/// so `eta + x[r]` is the slack of the unreflected backward value at node `N - r`.
///
/// An inadmissible terminal (`xi < S_N`) is reported with `path = 0`; callers
/// working on an ensemble substitute the real index.
pub fn build_reversed_input(
    xi: f64,
    drivers: &[f64],
    barrier: &[f64],
    stoch_int: &[f64],
    dt: f64,
) -> Result<ReflectionInput> {
    let n = drivers.len();
    if barrier.len() != n + 1 || stoch_int.len() != n + 1 {
        return Err(Error::ShapeMismatch(format!(
            "expected {} nodes for barrier and stochastic integral, got {} and {}",
            n + 1,
            barrier.len(),
            stoch_int.len()
        )));
    }
    let eta = xi - barrier[n];
    if !(eta >= 0.0) {
        return Err(Error::Admissibility {
            path: 0,
            xi,
            barrier: barrier[n],
        });
    }
    let mut x = Vec::with_capacity(n + 1);
    x.push(0.0);
    let mut driver_tail = 0.0;
    for r in 1..=n {
        let j = n - r;
        driver_tail += drivers[j] * dt;
        let martingale_tail = stoch_int[n] - stoch_int[j];
        x.push(driver_tail - martingale_tail + (barrier[n] - barrier[j]));
    }
    Ok(ReflectionInput { eta, x })
}

/// `K` from the closed double-max formula
/// `K_i = max(0, max_{j >= 0} -G_j) - max(0, max_{j >= i} -G_j)` with
/// `G_j = xi + sum_{k >= j} f_k dt - S_j - (I_N - I_j)`.
///
/// This route shares no code with [`skorohod_reflect`]; the solver uses it to
/// re-derive `K` from a converged state.
pub fn k_from_double_max(
    xi: f64,
    drivers: &[f64],
    barrier: &[f64],
    stoch_int: &[f64],
    dt: f64,
) -> Vec<f64> {
    let n = drivers.len();
    let mut suffix = vec![0.0; n + 1];
    let mut tail = 0.0;
    let mut best = f64::NEG_INFINITY;
    for j in (0..=n).rev() {
        if j < n {
            tail += drivers[j] * dt;
        }
        let g = xi + tail - barrier[j] - (stoch_int[n] - stoch_int[j]);
        best = best.max(-g);
        suffix[j] = best.max(0.0);
    }
    let total = suffix[0];
    suffix.iter().map(|s| total - s).collect()
}

/// Terminal reflector with the discrete-monitoring continuity correction:
/// the running maximum of `-(eta + x)` is shifted by
/// `CONTINUITY_SHIFT * vol * sqrt(dt)` before flooring at zero. Estimates the
/// continuous-time reflector when `x` is locally Brownian with volatility `vol`.
pub fn corrected_terminal_reflector(input: &ReflectionInput, vol: f64, dt: f64) -> f64 {
    let peak = input
        .x
        .iter()
        .map(|x| -(input.eta + x))
        .fold(f64::NEG_INFINITY, f64::max);
    (peak + CONTINUITY_SHIFT * vol * dt.sqrt()).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fully_absorbed_path() {
        let t: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let x: Vec<f64> = t.iter().map(|v| -v).collect();
        let out = skorohod_reflect(&ReflectionInput::new(0.0, x).unwrap()).unwrap();
        for i in 0..=10 {
            assert!((out.l[i] - t[i]).abs() < 1e-15);
            assert_eq!(out.y[i], 0.0);
        }
    }

    #[test]
    fn never_touches() {
        let out = skorohod_reflect(&ReflectionInput::new(1.0, vec![0.0; 6]).unwrap()).unwrap();
        assert!(out.l.iter().all(|v| *v == 0.0));
        assert!(out.y.iter().all(|v| *v == 1.0));
        assert!(out.k.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sine_path_against_prefix_scan() {
        let n = 100;
        let x: Vec<f64> = (0..=n)
            .map(|i| (2.0 * std::f64::consts::PI * i as f64 / n as f64).sin())
            .collect();
        let out = skorohod_reflect(&ReflectionInput::new(0.0, x.clone()).unwrap()).unwrap();
        for i in 0..=n {
            let mut brute = 0.0_f64;
            for s in 0..=i {
                brute = brute.max(-x[s]);
            }
            assert_eq!(out.l[i], brute);
        }
        let expected = x.iter().fold(0.0_f64, |a, v| a.max(-v));
        assert_eq!(out.l[n], expected);
    }

    #[test]
    fn reversal_examples() {
        assert_eq!(
            reverse_to_k(&[0.0, 1.0, 1.0, 2.0]).unwrap(),
            vec![0.0, 1.0, 1.0, 2.0]
        );
        assert_eq!(reverse_to_k(&[0.0; 5]).unwrap(), vec![0.0; 5]);
        assert_eq!(
            reverse_to_k(&[0.0, 0.0, 0.0, 3.5]).unwrap(),
            vec![0.0, 3.5, 3.5, 3.5]
        );
        assert!(reverse_to_k(&[0.0, 2.0, 1.0]).is_err());
        assert!(reverse_to_k(&[1.0, 2.0]).is_err());
        assert!(reverse_to_k(&[]).is_err());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ReflectionInput::new(-0.1, vec![0.0, 1.0]).is_err());
        assert!(ReflectionInput::new(0.0, vec![0.5, 1.0]).is_err());
        let raw = ReflectionInput {
            eta: -1.0,
            x: vec![0.0],
        };
        assert!(skorohod_reflect(&raw).is_err());
    }

    #[test]
    fn reversed_input_trivial_cases() {
        let n = 4;
        let dt = 0.25;
        let zeros = vec![0.0; n + 1];
        let input = build_reversed_input(1.0, &vec![0.0; n], &zeros, &zeros, dt).unwrap();
        assert_eq!(input.eta, 1.0);
        assert!(input.x.iter().all(|v| *v == 0.0));

        // f = 1: x_t = t on the reversed clock, no reflection
        let input = build_reversed_input(0.0, &vec![1.0; n], &zeros, &zeros, dt).unwrap();
        for (r, x) in input.x.iter().enumerate() {
            assert!((x - r as f64 * dt).abs() < 1e-15);
        }
        let out = skorohod_reflect(&input).unwrap();
        assert!(out.k.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn inadmissible_terminal() {
        let err = build_reversed_input(0.0, &[0.0], &[0.0, 1.0], &[0.0, 0.0], 1.0).unwrap_err();
        assert!(matches!(err, Error::Admissibility { .. }));
        assert!(err.to_string().contains("non-negative"));
    }

    #[test]
    fn continuity_correction_is_a_shift() {
        let input = ReflectionInput::new(0.0, vec![0.0, -0.5, 0.2]).unwrap();
        let dt: f64 = 0.01;
        let got = corrected_terminal_reflector(&input, 2.0, dt);
        assert!((got - (0.5 + CONTINUITY_SHIFT * 2.0 * 0.1)).abs() < 1e-15);
        let high = ReflectionInput::new(5.0, vec![0.0, 1.0]).unwrap();
        assert_eq!(corrected_terminal_reflector(&high, 1.0, dt), 0.0);
    }
}
