//! Measurement-only view of the radio environment.
//!
//! The learner never sees channels. It forms a beam and receives two power
//! observables: total received power and interference-plus-noise power. The real
//! environment computes them from a hidden [`Scenario`] and counts every call; the
//! twin environment predicts them from trained models and never touches the counter.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::array::Scenario;
use crate::beamforming::{compute_powers, Combiner};
use crate::twin::TwinPredictor;
use crate::{Error, Result};

/// The two observables of one interaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementReport {
    /// Signal + interference + noise, watts.
    pub total_power: f64,
    /// Interference + noise, watts.
    pub in_power: f64,
}

impl MeasurementReport {
    pub fn signal_power(&self) -> f64 {
        derive_signal_power(self)
    }

    /// SINR implied by the report; zero when the interference estimate is not positive.
    pub fn sinr(&self) -> f64 {
        if self.in_power > 0.0 {
            self.signal_power() / self.in_power
        } else {
            0.0
        }
    }
}

/// `max(0, total - in)`.
pub fn derive_signal_power(report: &MeasurementReport) -> f64 {
    (report.total_power - report.in_power).max(0.0)
}

/// Anything the agent can probe with a beam.
pub trait MeasurementChannel {
    fn measure(&mut self, combiner: &Combiner) -> Result<MeasurementReport>;

    fn is_real(&self) -> bool;

    fn num_antennas(&self) -> usize;
}

/// Multiplicative log-normal estimation error on each observable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// Standard deviation of the estimation error in dB.
    pub sigma_db: f64,
    pub seed: u64,
}

/// Exact observables of `combiner` in `scenario`.
pub fn measure_exact(scenario: &Scenario, combiner: &Combiner) -> Result<MeasurementReport> {
    let p = compute_powers(combiner, scenario)?;
    Ok(MeasurementReport {
        total_power: p.signal_power + p.interference_noise_power,
        in_power: p.interference_noise_power,
    })
}

/// Scenario-backed environment with a monotone real-measurement counter.
#[derive(Debug, Clone)]
pub struct RealEnvironment {
    scenario: Scenario,
    noise: Option<(NoiseModel, ChaCha8Rng)>,
    count: u64,
    budget: Option<u64>,
}

impl RealEnvironment {
    pub fn new(scenario: Scenario) -> Self {
        Self { scenario, noise: None, count: 0, budget: None }
    }

    pub fn with_noise(mut self, model: NoiseModel) -> Self {
        self.noise = Some((model, ChaCha8Rng::seed_from_u64(model.seed)));
        self
    }

    /// Caps the number of measurements; the call that would exceed it fails with a budget error.
    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = Some(budget);
        self
    }

    pub fn set_budget(&mut self, budget: Option<u64>) {
        self.budget = budget;
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    /// Number of real measurements taken so far.
    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn budget(&self) -> Option<u64> {
        self.budget
    }

    pub fn remaining(&self) -> Option<u64> {
        self.budget.map(|b| b.saturating_sub(self.count))
    }

    pub fn measure_real(&mut self, combiner: &Combiner) -> Result<MeasurementReport> {
        if let Some(budget) = self.budget {
            if self.count >= budget {
                return Err(Error::Budget(format!("real-measurement budget of {budget} exhausted")));
            }
        }
        let exact = measure_exact(&self.scenario, combiner)?;
        self.count += 1;
        Ok(match &mut self.noise {
            None => exact,
            Some((model, rng)) => {
                let mut perturb = |p: f64| {
                    let z: f64 = StandardNormal.sample(rng);
                    p * crate::from_db(model.sigma_db * z)
                };
                let total_power = perturb(exact.total_power);
                let in_power = perturb(exact.in_power);
                MeasurementReport { total_power, in_power }
            }
        })
    }
}

impl MeasurementChannel for RealEnvironment {
    fn measure(&mut self, combiner: &Combiner) -> Result<MeasurementReport> {
        self.measure_real(combiner)
    }

    fn is_real(&self) -> bool {
        true
    }

    fn num_antennas(&self) -> usize {
        self.scenario.num_antennas()
    }
}

/// The twin's pair of power predictors, exposed through the measurement contract.
#[derive(Debug, Clone)]
pub struct TwinEnvironment {
    pub interference: TwinPredictor,
    pub signal: TwinPredictor,
}

impl TwinEnvironment {
    pub fn new(interference: TwinPredictor, signal: TwinPredictor) -> Result<Self> {
        if interference.num_antennas() != signal.num_antennas() {
            return Err(Error::invalid("twin predictors disagree on the antenna count"));
        }
        Ok(Self { interference, signal })
    }

    pub fn measure_twin(&self, combiner: &Combiner) -> Result<MeasurementReport> {
        if !self.interference.is_trained() || !self.signal.is_trained() {
            return Err(Error::State("twin predictors are not trained".into()));
        }
        let in_power = self.interference.predict(combiner)?;
        let signal = self.signal.predict(combiner)?;
        Ok(MeasurementReport { total_power: signal + in_power, in_power })
    }
}

impl MeasurementChannel for TwinEnvironment {
    fn measure(&mut self, combiner: &Combiner) -> Result<MeasurementReport> {
        self.measure_twin(combiner)
    }

    fn is_real(&self) -> bool {
        false
    }

    fn num_antennas(&self) -> usize {
        self.interference.num_antennas()
    }
}
