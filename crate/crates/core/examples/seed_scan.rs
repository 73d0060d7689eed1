//! Scans root seeds for the acceptance reference run and prints the margins
//! the shared-pulse criteria depend on. Scratch tool, not part of the suite.

use qfi_grape::metrology::{exact_qfi_of_controls, noon_fidelity};
use qfi_grape::noise::{NoiseModel, RelaxationParams};
use qfi_grape::optimizer::{derive_seed, run_grape, OptimizerConfig, Problem};
use qfi_grape::sensor::Sensor;

fn main() {
    let problem = Problem::two_qubit_reference();
    let deco_only = NoiseModel {
        relaxation: Some(RelaxationParams {
            t1: vec![18.5, 9.9],
            t2: vec![0.3, 3.3],
            gad_p: 0.5,
        }),
        ..NoiseModel::default()
    };
    let pulse_only = NoiseModel {
        pulse_fluctuation: Some(0.05),
        ..NoiseModel::default()
    };
    println!(
        "{:>4} {:>10} {:>8} {:>6} {:>10} {:>10}",
        "seed", "final_qfi", "noon", "iters", "deco_drop", "pulse_drop"
    );
    for seed in 1..=10u64 {
        let opt = OptimizerConfig {
            max_iterations: 200,
            restarts: 10,
            seed,
            ..OptimizerConfig::default()
        };
        let trace = run_grape(&problem, &opt).unwrap();
        let u = &trace.final_controls;
        let ideal = exact_qfi_of_controls(
            &problem.hamiltonian,
            &problem.control_specs,
            u,
            &problem.probe,
            problem.hamiltonian.dh_domega(),
        )
        .unwrap()
        .normalized;
        let state = qfi_grape::encoding::propagate(
            &problem.hamiltonian,
            &problem.control_specs,
            u,
            &problem.probe,
        )
        .unwrap();
        let noon = noon_fidelity(&state).unwrap();
        let mut deco = Sensor::new(problem.sensor_config(&deco_only).unwrap(), 0);
        let deco_drop = ideal - deco.measure_qfi(u).unwrap().qfi_normalized;
        let cfg = problem.sensor_config(&pulse_only).unwrap();
        let mut sum = 0.0;
        for trial in 0..1000u64 {
            let mut s = Sensor::new(cfg.clone(), derive_seed(7, "criterion7", trial));
            sum += s.measure_qfi(u).unwrap().qfi_normalized;
        }
        let pulse_drop = ideal - sum / 1000.0;
        println!(
            "{:>4} {:>10.6} {:>8.5} {:>6} {:>10.4} {:>10.4}",
            seed,
            trace.final_qfi,
            noon,
            trace.rows.iter().map(|r| r.iteration).max().unwrap(),
            deco_drop,
            pulse_drop
        );
    }
}
