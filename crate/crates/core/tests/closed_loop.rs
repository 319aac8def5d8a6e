use evi_core::integrator::{simulate_with, SimOptions};
use evi_core::regulation::lyapunov_decrease_check;
use evi_core::scenarios::{convergence_study, simulate_scenario, RunOptions, Scenario};
use nalgebra::DVector;

fn weighted(d: &DVector<f64>, p: &nalgebra::DMatrix<f64>) -> f64 {
    d.dot(&(p * d))
}

#[test]
fn circuit_storage_decreases_across_jumps() {
    let sc = Scenario::load("diode_circuit").unwrap();
    let run = simulate_scenario(&sc, &RunOptions::default()).unwrap();
    assert!(run.trajectory.jump_flags.iter().any(|&j| j), "expected jumps in the circuit run");
    let q = sc.lyapunov_weight().unwrap();
    let scale = run.errors.iter().map(|e| weighted(e, &q)).fold(0.0, f64::max);
    let check = lyapunov_decrease_check(&run.errors, &run.trajectory.jump_flags, &q, 1e-9 * scale.max(1.0));
    assert!(check.monotone, "{check:?}");
}

#[test]
fn trajectories_contract_in_storage_metric() {
    let sc = Scenario::load("clipped_sine").unwrap();
    let cl = sc.closed_loop().unwrap();
    let x_r0 = sc.x_r0.clone();
    let a = cl.initial_state(&DVector::from_vec(vec![0.5, -0.5]), &x_r0);
    let b = cl.initial_state(&DVector::from_vec(vec![-0.3, 0.8]), &x_r0);
    let opts = SimOptions::default();
    let ta = simulate_with(&cl.system, &a, 5.0, 1e-3, &opts).unwrap();
    let tb = simulate_with(&cl.system, &b, 5.0, 1e-3, &opts).unwrap();
    let p = &sc.design.p;
    let mut prev = f64::INFINITY;
    for (k, (xa, xb)) in ta.states.iter().zip(&tb.states).enumerate() {
        let d = cl.plant_state(xa) - cl.plant_state(xb);
        let v = weighted(&d, p);
        // the first sample may jump onto the admissible set
        if k > 0 {
            assert!(v <= prev * (1.0 + 1e-9) + 1e-14, "step {k}: {v} > {prev}");
        }
        prev = v;
    }
    assert!(prev < 1e-3, "distance did not shrink: {prev}");
}

#[test]
fn linear_ode_converges_at_first_order() {
    let sc = Scenario::load("linear_ode").unwrap();
    let opts = RunOptions {
        horizon: Some(2.0),
        ..RunOptions::default()
    };
    let table = convergence_study(&sc, &[4e-3, 2e-3, 1e-3], &opts).unwrap();
    assert!(table.errors.windows(2).all(|w| w[1] < w[0]), "{:?}", table.errors);
    assert!((0.8..=1.2).contains(&table.order), "order {}", table.order);
}

#[test]
fn simulation_is_deterministic() {
    let sc = Scenario::load("diode_circuit").unwrap();
    let opts = RunOptions {
        horizon: Some(0.3),
        ..RunOptions::default()
    };
    let r1 = simulate_scenario(&sc, &opts).unwrap();
    let r2 = simulate_scenario(&sc, &opts).unwrap();
    let mut c1 = Vec::new();
    let mut c2 = Vec::new();
    r1.write_error_csv(&mut c1).unwrap();
    r2.write_error_csv(&mut c2).unwrap();
    assert_eq!(c1, c2);
    assert_eq!(r1.report_text(), r2.report_text());
}
