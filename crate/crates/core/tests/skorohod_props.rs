use proptest::prelude::*;
use rbsde::skorohod::{build_reversed_input, reverse_to_k, skorohod_reflect, ReflectionInput};

fn path() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0_f64..1.0, 1..120).prop_map(|steps| {
        let mut x = vec![0.0];
        for s in steps {
            let last = *x.last().unwrap();
            x.push(last + s);
        }
        x
    })
}

fn sup(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #[test]
    fn reflected_path_is_nonnegative_and_flat_off(eta in 0.0_f64..2.0, x in path()) {
        let out = skorohod_reflect(&ReflectionInput::new(eta, x).unwrap()).unwrap();
        prop_assert!(out.y.iter().all(|v| *v >= 0.0));
        prop_assert!(out.l.windows(2).all(|w| w[1] >= w[0]));
        for i in 1..out.l.len() {
            if out.l[i] > out.l[i - 1] {
                prop_assert_eq!(out.y[i], 0.0);
            }
        }
        prop_assert_eq!(reverse_to_k(&out.l).unwrap(), out.k);
    }

    #[test]
    fn any_smaller_reflector_is_infeasible(eta in 0.0_f64..2.0, x in path(), cut in 1e-9_f64..1.0) {
        let out = skorohod_reflect(&ReflectionInput::new(eta, x.clone()).unwrap()).unwrap();
        let top = *out.l.last().unwrap();
        prop_assume!(top > 0.0);
        let lower: Vec<f64> = out.l.iter().map(|v| (v - cut * top).max(0.0)).collect();
        let feasible = lower.iter().zip(&x).all(|(l, v)| eta + v + l >= 0.0);
        prop_assert!(!feasible);
    }

    #[test]
    fn sup_difference_bound(a in path(), noise in prop::collection::vec(-0.5_f64..0.5, 121)) {
        let b: Vec<f64> = a.iter().zip(&noise).map(|(u, e)| u + e).collect();
        prop_assert!((sup(&a) - sup(&b)).abs() <= sup_dist(&a, &b));
    }

    #[test]
    fn reflector_is_lipschitz_in_input(e1 in 0.0_f64..1.0, e2 in 0.0_f64..1.0, a in path(), noise in prop::collection::vec(-0.5_f64..0.5, 121)) {
        let mut b: Vec<f64> = a.iter().zip(&noise).map(|(u, e)| u + e).collect();
        b[0] = 0.0;
        let l1 = skorohod_reflect(&ReflectionInput::new(e1, a.clone()).unwrap()).unwrap().l;
        let l2 = skorohod_reflect(&ReflectionInput::new(e2, b.clone()).unwrap()).unwrap().l;
        let bound = (e1 - e2).abs() + sup_dist(&a, &b);
        prop_assert!(sup_dist(&l1, &l2) <= bound * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn reflector_decreases_in_eta(eta in 0.0_f64..1.0, bump in 0.0_f64..1.0, x in path()) {
        let a = skorohod_reflect(&ReflectionInput::new(eta, x.clone()).unwrap()).unwrap().l;
        let b = skorohod_reflect(&ReflectionInput::new(eta + bump, x).unwrap()).unwrap().l;
        prop_assert!(a.iter().zip(&b).all(|(u, v)| u >= v));
    }

    #[test]
    fn driver_shift_moves_reflector_by_at_most_t_delta(
        drivers in prop::collection::vec(-2.0_f64..2.0, 1..80),
        dw in prop::collection::vec(-0.3_f64..0.3, 80),
        delta in 0.0_f64..1.0,
        slack in 0.0_f64..0.5,
    ) {
        let n = drivers.len();
        let dt = 1.0 / n as f64;
        let mut stoch = vec![0.0];
        for w in &dw[..n] {
            let last = *stoch.last().unwrap();
            stoch.push(last + w);
        }
        let barrier: Vec<f64> = (0..=n).map(|i| (i as f64 * dt * 3.0).sin()).collect();
        let xi = barrier[n] + slack;
        let shifted: Vec<f64> = drivers.iter().map(|f| f + delta).collect();
        let l1 = skorohod_reflect(&build_reversed_input(xi, &drivers, &barrier, &stoch, dt).unwrap()).unwrap().l;
        let l2 = skorohod_reflect(&build_reversed_input(xi, &shifted, &barrier, &stoch, dt).unwrap()).unwrap().l;
        prop_assert!(sup_dist(&l1, &l2) <= delta * (1.0 + 1e-12) + 1e-12);
    }
}

#[test]
fn rejects_bad_input() {
    assert!(ReflectionInput::new(-0.1, vec![0.0, 1.0]).is_err());
    assert!(ReflectionInput::new(0.0, vec![0.5, 1.0]).is_err());
    assert!(ReflectionInput::new(0.0, vec![]).is_err());
}
