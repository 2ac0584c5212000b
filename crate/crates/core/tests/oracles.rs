use rbsde::problems::{
    american_put_oracle, catalog, penalization_oracle, ReflectedBmCase, PUT_HORIZON, PUT_ORACLE,
    PUT_RATE, PUT_SPOT, PUT_STRIKE, PUT_VOL,
};

struct FixtureLine {
    name: String,
    params: String,
    value: f64,
}

fn fixtures() -> Vec<FixtureLine> {
    let text = include_str!("../fixtures/oracles.txt");
    text.lines()
        .filter(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let parts: Vec<&str> = l.split('|').map(str::trim).collect();
            assert_eq!(parts.len(), 5, "malformed fixture line: {l}");
            FixtureLine {
                name: parts[0].into(),
                params: parts[1].into(),
                value: parts[2].parse().unwrap(),
            }
        })
        .collect()
}

fn param(params: &str, key: &str) -> f64 {
    params
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing in {params}"))
        .parse()
        .unwrap()
}

#[test]
fn frozen_put_value_matches_fixture_and_recomputation() {
    let line = fixtures()
        .into_iter()
        .find(|f| f.name == "american-put")
        .unwrap();
    assert_eq!(line.value, PUT_ORACLE);
    assert_eq!(param(&line.params, "s0"), PUT_SPOT);
    assert_eq!(param(&line.params, "strike"), PUT_STRIKE);
    assert_eq!(param(&line.params, "r"), PUT_RATE);
    assert_eq!(param(&line.params, "vol"), PUT_VOL);
    assert_eq!(param(&line.params, "T"), PUT_HORIZON);
    let steps = param(&line.params, "steps") as usize;
    let again =
        american_put_oracle(PUT_SPOT, PUT_STRIKE, PUT_RATE, PUT_VOL, PUT_HORIZON, steps).unwrap();
    assert!(
        (again - line.value).abs() < 1e-12,
        "{again} vs {}",
        line.value
    );
}

#[test]
fn reflected_bm_fixtures_are_analytic() {
    for f in fixtures().into_iter().filter(|f| f.name == "reflected-bm") {
        let t = param(&f.params, "T");
        let target = ReflectedBmCase::new(t).unwrap().target();
        assert!((target - f.value).abs() < 1e-15);
    }
}

#[test]
fn binomial_tree_converges() {
    let a =
        american_put_oracle(PUT_SPOT, PUT_STRIKE, PUT_RATE, PUT_VOL, PUT_HORIZON, 1000).unwrap();
    let b =
        american_put_oracle(PUT_SPOT, PUT_STRIKE, PUT_RATE, PUT_VOL, PUT_HORIZON, 4000).unwrap();
    assert!((a - PUT_ORACLE).abs() > (b - PUT_ORACLE).abs());
    assert!((b - PUT_ORACLE).abs() < 2e-3);
}

#[test]
fn penalization_increases_with_rho() {
    let entry = catalog()
        .into_iter()
        .find(|e| e.name == "american-put")
        .unwrap();
    let problem = entry.sample(4000, 2).unwrap();
    let lo = penalization_oracle(&problem, 10.0, 3).unwrap();
    let hi = penalization_oracle(&problem, 250.0, 3).unwrap();
    assert!(hi.value > lo.value);
    assert!(hi.value > 4.3 && hi.value < 5.1, "{}", hi.value);
}
