//! A twin built from the true covariance and channel drives the agent along the same
//! trajectory as the real environment.

use ndarray::Array2;
use num_complex::Complex;

use twinbeam::agent::{Agent, AgentConfig};
use twinbeam::array::{generate_scenario, ScenarioSpec};
use twinbeam::beamforming::gram_matrix;
use twinbeam::environment::{RealEnvironment, TwinEnvironment};
use twinbeam::twin::{QuadraticPredictor, TwinPredictor};

#[test]
fn exact_twin_replays_real_trajectory() {
    let s = generate_scenario(&ScenarioSpec::default_family(8, 2, 2), 3).unwrap();
    let q_in = QuadraticPredictor::from_hermitian(&gram_matrix(&s)).unwrap();
    let root = s.tx_power.sqrt();
    let q_s = Array2::from_shape_fn((8, 1), |(i, _)| s.ue_channel.coefficients()[i] * Complex::new(root, 0.0));
    let mut twin = TwinEnvironment::new(
        TwinPredictor::Quadratic(q_in),
        TwinPredictor::Quadratic(QuadraticPredictor::from_matrix(q_s)),
    )
    .unwrap();
    let mut real = RealEnvironment::new(s);

    let cfg = AgentConfig { batch_size: 32, buffer_capacity: 256, width_factor: 4, ..AgentConfig::default() };
    let mut a = Agent::new(cfg.clone(), 8, 2, 11).unwrap();
    let mut b = Agent::new(cfg, 8, 2, 11).unwrap();
    for step in 0..300 {
        let ra = a.interact(&mut real).unwrap();
        let rb = b.interact(&mut twin).unwrap();
        assert_eq!(ra.combiner.phases(), rb.combiner.phases(), "step {step}");
        assert!((ra.sinr - rb.sinr).abs() <= 1e-6 * ra.sinr, "step {step}: {} vs {}", ra.sinr, rb.sinr);
        assert!((ra.report.in_power - rb.report.in_power).abs() <= 1e-6 * ra.report.in_power);
    }
    assert_eq!(real.count(), 301);
}
