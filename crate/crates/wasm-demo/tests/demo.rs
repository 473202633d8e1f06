use qosalloc_wasm_demo::{compare_network, generate_network, solve_network};

fn network(d: usize, m: usize, seed: u64) -> String {
    serde_json::to_string(&generate_network(d, m, seed, 1e-3).unwrap()).unwrap()
}

#[test]
fn generate_positions_match_gains() {
    let net = generate_network(4, 2, 9, 1e-3).unwrap();
    assert_eq!(net.tx.len(), 4);
    assert_eq!(net.rx.len(), 4);
    assert_eq!(net.instance.gains.len(), 4 * 4 * 2);
    for (t, r) in net.tx.iter().zip(&net.rx) {
        let d = (t[0] - r[0]).hypot(t[1] - r[1]);
        assert!((2.0..=10.0).contains(&d), "{d}");
    }
    let again = generate_network(4, 2, 9, 1e-3).unwrap();
    assert_eq!(again.instance, net.instance);
}

#[test]
fn generate_rejects_bad_sizes() {
    assert!(generate_network(0, 2, 1, 1e-3).is_err());
    assert!(generate_network(4, 99, 1, 1e-3).is_err());
}

#[test]
fn solve_respects_budget() {
    let out = solve_network(&network(3, 2, 4), 50).unwrap();
    let v: serde_json::Value = serde_json::to_value(&out.trace).unwrap();
    assert!(!v.as_array().unwrap().is_empty());
    for row in &out.allocation {
        assert!(row.iter().sum::<f64>() <= 1.0 + 1e-9);
    }
    assert_eq!(out.user_rate_bits.len(), 3);
    assert!(out.sum_rate_bits > 0.0);
}

#[test]
fn compare_includes_oracle_only_when_small() {
    let small = compare_network(&network(3, 2, 5)).unwrap();
    let names: Vec<_> = small.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(names, ["heuristic", "ewmmse", "oracle"]);
    let big = compare_network(&network(4, 2, 5)).unwrap();
    assert_eq!(big.len(), 2);
}

#[test]
fn malformed_json_is_an_error() {
    assert!(solve_network("{", 10).is_err());
    assert!(compare_network("{\"instance\":1}").is_err());
}
