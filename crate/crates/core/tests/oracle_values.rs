//! Worked examples checked against `oracle/expected.json`, produced by the
//! high-precision script `oracle/exact_values.py`.

use rvpo_core::trainer::kl_categorical;
use rvpo_core::{
    aggregate, aggregate_explicit, aggregate_softmin, grpo_advantages,
    grpo_explicit_scalar_advantages, group_sum_stats, softmin_diagnostics, whiten, z_normalize,
    AggregationMethod, RewardMatrix, RiskSchedule,
};
use serde_json::Value;

const TOL: f64 = 1e-9;

fn oracle() -> Value {
    serde_json::from_str(include_str!("oracle/expected.json")).expect("oracle json")
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array()
        .expect("array")
        .iter()
        .map(|x| x.as_f64().expect("number"))
        .collect()
}

fn close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len());
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() <= tol, "entry {i}: got {g}, want {w}");
    }
}

fn matrix(rows: &[&[f64]]) -> RewardMatrix {
    RewardMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn sum_matrix() -> RewardMatrix {
    matrix(&[&[1.0, 0.03], &[0.5, 0.5], &[0.0, 0.6]])
}

fn gdpo_matrix() -> RewardMatrix {
    matrix(&[&[1.0, 0.0], &[0.5, 0.5], &[0.0, 0.6]])
}

/// Runs the same checks at one epsilon against one section of the oracle.
fn check_section(section: &Value, eps: f64) {
    let z = z_normalize(&matrix(&[&[1.0], &[2.0], &[3.0], &[4.0]]), eps).unwrap().0;
    close(&(0..4).map(|g| z.get(g, 0).unwrap()).collect::<Vec<_>>(), &floats(&section["z_1234"]), TOL);
    let z = z_normalize(&matrix(&[&[1.0], &[0.0]]), eps).unwrap().0;
    close(&[z.get(0, 0).unwrap(), z.get(1, 0).unwrap()], &floats(&section["z_10"]), TOL);

    let (sums, stats) = group_sum_stats(&sum_matrix(), eps).unwrap();
    close(&sums, &floats(&section["sum_stats"]["sums"]), 1e-15);
    close(
        &[stats.sum_mean, stats.sum_std],
        &[
            section["sum_stats"]["mean"].as_f64().unwrap(),
            section["sum_stats"]["std"].as_f64().unwrap(),
        ],
        TOL,
    );
    close(&grpo_advantages(&sum_matrix(), eps).unwrap(), &floats(&section["grpo_example"]), TOL);
    close(
        &grpo_advantages(&matrix(&[&[1.0, 0.03], &[0.5, 0.5], &[0.0, 0.0]]), eps).unwrap(),
        &floats(&section["grpo_zero_row_example"]),
        TOL,
    );
    close(
        &grpo_advantages(&matrix(&[&[1.0], &[0.0]]), eps).unwrap(),
        &floats(&section["grpo_single_channel"]),
        TOL,
    );
    close(
        &grpo_explicit_scalar_advantages(&matrix(&[&[1.0, 1.0], &[0.0, 1.0]]), &[0.3, 1.0], eps).unwrap(),
        &floats(&section["grpo_explicit_example"]),
        TOL,
    );

    let z = z_normalize(&gdpo_matrix(), eps).unwrap().0;
    for (g, row) in section["gdpo_matrix_z"].as_array().unwrap().iter().enumerate() {
        close(&z.active_row(g), &floats(row), TOL);
    }
    let gdpo = aggregate(&AggregationMethod::Gdpo, &gdpo_matrix(), 0, eps).unwrap();
    close(&gdpo, &floats(&section["gdpo_matrix"]), TOL);
    close(&whiten(&gdpo, eps), &floats(&section["gdpo_matrix_whitened"]), TOL);
    let rvpo = aggregate(&AggregationMethod::Rvpo(RiskSchedule::Constant(1.0)), &gdpo_matrix(), 0, eps).unwrap();
    close(&rvpo, &floats(&section["rvpo_k1_matrix"]), TOL);
    close(&whiten(&[1.0, 2.0, 3.0], eps), &floats(&section["whiten_123"]), TOL);
}

#[test]
fn default_epsilon_matches_oracle() {
    check_section(&oracle()["eps1e-6"], 1e-6);
}

#[test]
fn vanishing_epsilon_matches_unguarded_oracle() {
    check_section(&oracle()["eps0"], f64::MIN_POSITIVE);
}

#[test]
fn epsilon_free_values_match_oracle() {
    let ex = &oracle()["exact"];
    let get = |k: &str| ex[k].as_f64().unwrap();
    assert!((aggregate_softmin(&[2.0, -1.0], 1.0).unwrap() - get("softmin_2_m1_k1")).abs() < TOL);
    assert!((aggregate_softmin(&[1.0, -1.0], 100.0).unwrap() - get("softmin_1_m1_k100")).abs() < TOL);
    assert!((aggregate_explicit(&[2.0, -1.0], 1.0).unwrap() - get("explicit_2_m1_b1")).abs() < TOL);
    assert!(((1.224745 - 1.396963) / 2.0 - get("gdpo_row")).abs() < TOL);

    let d = softmin_diagnostics(&[0.1, -0.1], 1.0).unwrap();
    let pair = &ex["taylor_pair"];
    assert!((d.softmin - pair["softmin"].as_f64().unwrap()).abs() < 1e-15);
    assert!((d.taylor_value - pair["taylor"].as_f64().unwrap()).abs() < 1e-15);
    assert!((d.taylor_error - pair["error"].as_f64().unwrap()).abs() < 1e-12);
    let d = softmin_diagnostics(&[0.2, -0.1, -0.1], 1.0).unwrap();
    assert!((d.taylor_error - ex["taylor_triple"]["error"].as_f64().unwrap()).abs() < 1e-12);

    let s = RiskSchedule::linear(0.5, 2.0, 300).unwrap();
    assert!((s.value_at(150) - get("anneal_150")).abs() < 1e-12);
    assert!((kl_categorical(&[1.0, 0.0], &[0.5, 0.5]) - get("kl_onehot_uniform")).abs() < 1e-12);
    assert!((kl_categorical(&[0.5, 0.5], &[0.25, 0.75]) - get("kl_half_quarter")).abs() < 1e-12);
}
