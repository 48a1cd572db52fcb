//! Actor-critic beam-learning agent.
//!
//! The state is the executed phase vector, the action is the next phase vector, and the
//! reward is `+1` when the measured SINR strictly improves on the previous step and `-1`
//! otherwise. Actions are quantized only when executed; training uses the continuous
//! actor output.

use std::collections::VecDeque;

use ndarray::{s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::beamforming::{phase_set, quantize_phases_with, Combiner, PhaseCodebook, QuantizeMetric};
use crate::environment::{MeasurementChannel, MeasurementReport};
use crate::nn::{Adam, DenseNetworkSpec, Network, OutputActivation};
use crate::{Error, Result};

/// Keeps clipped actions strictly inside `(-pi, pi)`.
const ACTION_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub gamma: f64,
    pub tau: f64,
    /// Standard deviation of the Gaussian exploration noise, radians.
    pub noise_scale: f64,
    /// Multiplier applied to the noise scale after every step.
    pub noise_decay: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// DDPG updates per environment step once the buffer holds a batch.
    pub updates_per_step: usize,
    /// Hidden width multiplier: hidden 1 is this times the input size, hidden 2 this times the output size.
    pub width_factor: usize,
    pub quantize_metric: QuantizeMetric,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            tau: 0.005,
            noise_scale: 0.3,
            noise_decay: 0.999,
            buffer_capacity: 8192,
            batch_size: 128,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            updates_per_step: 1,
            width_factor: 16,
            quantize_metric: QuantizeMetric::Linear,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.noise_scale >= 0.0) || !(self.noise_decay > 0.0 && self.noise_decay <= 1.0) {
            return bad("noise scale must be non-negative and decay in (0, 1]");
        }
        if self.batch_size < 2 || self.buffer_capacity < self.batch_size {
            return bad("batch size must be at least 2 and no larger than the buffer capacity");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) || self.width_factor == 0 {
            return bad("learning rates and width factor must be positive");
        }
        Ok(())
    }

    /// `M -> fM -> fM -> M`, scaled tanh output.
    pub fn actor_spec(&self, m: usize) -> Result<DenseNetworkSpec> {
        let f = self.width_factor;
        DenseNetworkSpec::new(vec![m, f * m, f * m, m], true, OutputActivation::ScaledTanh)
    }

    /// `2M -> 2fM -> f -> 1`, linear output.
    pub fn critic_spec(&self, m: usize) -> Result<DenseNetworkSpec> {
        let f = self.width_factor;
        DenseNetworkSpec::new(vec![2 * m, f * 2 * m, f, 1], true, OutputActivation::Linear)
    }
}

/// Current phases and the SINR measured for them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub phases: Vec<f64>,
    /// Linear SINR of the previous step; `None` before the seeding measurement.
    pub last_sinr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    /// Continuous actor output, before quantization.
    pub action: Vec<f64>,
    pub reward: f64,
    /// Executed (quantized) phases.
    pub next_state: Vec<f64>,
}

/// Bounded FIFO with seeded uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { items: VecDeque::with_capacity(capacity.min(1 << 16)), capacity }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// `n` transitions drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Transition> {
        (0..n).map(|_| self.items[rng.random_range(0..self.items.len())].clone()).collect()
    }
}

/// `+1` if `sinr` strictly exceeds `previous`, else `-1`.
pub fn compute_reward(sinr: f64, previous: f64) -> f64 {
    if sinr > previous {
        1.0
    } else {
        -1.0
    }
}

/// What one agent step did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub transition: Transition,
    pub combiner: Combiner,
    pub report: MeasurementReport,
    pub sinr: f64,
    /// The seeding measurement of the initial state, if this step took one.
    pub seeding: Option<(Combiner, MeasurementReport)>,
}

/// Losses of one DDPG update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    /// Mean critic value of the actor's actions.
    pub actor_objective: f64,
}

#[derive(Debug, Clone)]
pub struct Agent {
    config: AgentConfig,
    codebook: PhaseCodebook,
    actor: Network,
    critic: Network,
    actor_target: Network,
    critic_target: Network,
    actor_opt: Adam,
    critic_opt: Adam,
    buffer: ReplayBuffer,
    state: AgentState,
    noise_scale: f64,
    steps: u64,
    rng: ChaCha8Rng,
}

/// Serializable snapshot of an agent's networks and counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub config: AgentConfig,
    pub phase_bits: u32,
    pub actor: Network,
    pub critic: Network,
    pub actor_target: Network,
    pub critic_target: Network,
    pub state: AgentState,
    pub noise_scale: f64,
    pub steps: u64,
    pub buffer_len: usize,
}

impl Agent {
    /// Fresh agent with random networks and a random codebook start state.
    pub fn new(config: AgentConfig, num_antennas: usize, phase_bits: u32, seed: u64) -> Result<Self> {
        config.validate()?;
        if num_antennas == 0 {
            return Err(Error::config("agent needs at least one antenna"));
        }
        let codebook = phase_set(phase_bits)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = Network::new(config.actor_spec(num_antennas)?, &mut rng)?;
        let critic = Network::new(config.critic_spec(num_antennas)?, &mut rng)?;
        let phases = (0..num_antennas).map(|_| codebook.value(rng.random_range(0..codebook.len()))).collect();
        Ok(Self {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            actor_opt: Adam::new(config.actor_lr),
            critic_opt: Adam::new(config.critic_lr),
            buffer: ReplayBuffer::new(config.buffer_capacity),
            state: AgentState { phases, last_sinr: None },
            noise_scale: config.noise_scale,
            steps: 0,
            codebook,
            config,
            rng,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn codebook(&self) -> &PhaseCodebook {
        &self.codebook
    }

    pub fn num_antennas(&self) -> usize {
        self.state.phases.len()
    }

    pub fn state(&self) -> &AgentState {
        &self.state
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn actor(&self) -> &Network {
        &self.actor
    }

    pub fn critic(&self) -> &Network {
        &self.critic
    }

    pub fn targets(&self) -> (&Network, &Network) {
        (&self.actor_target, &self.critic_target)
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Combiner of the current state.
    pub fn current_combiner(&self) -> Result<Combiner> {
        Combiner::from_phases(&self.state.phases)
    }

    /// Continuous action and the executed (quantized) phases for `state`.
    pub fn select_action(&mut self, state: &[f64], explore: bool) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = Array2::from_shape_vec((1, state.len()), state.to_vec())
            .map_err(|e| Error::invalid(e.to_string()))?;
        let mut action: Vec<f64> = self.actor.forward_eval(&x)?.row(0).to_vec();
        if explore && self.noise_scale > 0.0 {
            let normal = Normal::new(0.0, self.noise_scale).expect("finite noise scale");
            for a in &mut action {
                *a += normal.sample(&mut self.rng);
            }
        }
        let limit = std::f64::consts::PI - ACTION_MARGIN;
        for a in &mut action {
            *a = a.clamp(-limit, limit);
        }
        let executed = quantize_phases_with(&action, &self.codebook, self.config.quantize_metric);
        Ok((action, executed))
    }

    /// Measures the current state on `env` and stores its SINR as the reward reference.
    pub fn reseed<E: MeasurementChannel + ?Sized>(&mut self, env: &mut E) -> Result<(Combiner, MeasurementReport)> {
        let c = self.current_combiner()?;
        let report = env.measure(&c)?;
        self.state.last_sinr = Some(report.sinr());
        Ok((c, report))
    }

    /// Selects an exploring action, executes it on `env`, rewards it and stores the transition.
    /// The first step also measures the initial state once.
    pub fn step<E: MeasurementChannel + ?Sized>(&mut self, env: &mut E) -> Result<StepOutcome> {
        let seeding = match self.state.last_sinr {
            None => Some(self.reseed(env)?),
            Some(_) => None,
        };
        let prev = self.state.last_sinr.expect("seeded");
        let state = self.state.phases.clone();
        let (action, executed) = self.select_action(&state, true)?;
        let combiner = Combiner::from_phases(&executed)?;
        let report = env.measure(&combiner)?;
        let sinr = report.sinr();
        let reward = compute_reward(sinr, prev);
        let transition = Transition { state, action, reward, next_state: executed.clone() };
        self.buffer.push(transition.clone());
        self.state = AgentState { phases: executed, last_sinr: Some(sinr) };
        self.noise_scale *= self.config.noise_decay;
        self.steps += 1;
        Ok(StepOutcome { transition, combiner, report, sinr, seeding })
    }

    /// Runs the configured number of DDPG updates if the buffer holds a full batch.
    pub fn learn(&mut self) -> Result<Option<UpdateStats>> {
        if self.buffer.len() < self.config.batch_size {
            return Ok(None);
        }
        let mut last = None;
        for _ in 0..self.config.updates_per_step {
            let batch = self.buffer.sample(self.config.batch_size, &mut self.rng);
            last = Some(self.ddpg_update(&batch)?);
        }
        Ok(last)
    }

    /// `step` followed by `learn`.
    pub fn interact<E: MeasurementChannel + ?Sized>(&mut self, env: &mut E) -> Result<StepOutcome> {
        let out = self.step(env)?;
        self.learn()?;
        Ok(out)
    }

    /// One critic regression step toward `r + gamma Q'(s', mu'(s'))`, one actor ascent
    /// step on `Q(s, mu(s))`, then soft target updates.
    pub fn ddpg_update(&mut self, batch: &[Transition]) -> Result<UpdateStats> {
        if batch.len() < 2 {
            return Err(Error::State(format!("DDPG update needs at least 2 transitions, got {}", batch.len())));
        }
        let m = self.num_antennas();
        let b = batch.len();
        let rows = |f: &dyn Fn(&Transition) -> &[f64]| {
            Array2::from_shape_fn((b, m), |(i, j)| f(&batch[i])[j])
        };
        let s = rows(&|t| &t.state);
        let a = rows(&|t| &t.action);
        let s_next = rows(&|t| &t.next_state);

        // critic
        let a_next = self.actor_target.forward_eval(&s_next)?;
        let q_next = self.critic_target.forward_eval(&concat(&s_next, &a_next))?;
        let y = Array2::from_shape_fn((b, 1), |(i, _)| batch[i].reward + self.config.gamma * q_next[[i, 0]]);
        let trace = self.critic.forward_train(&concat(&s, &a))?;
        let (critic_loss, d_out) = crate::nn::mse_loss(&trace.output, &y);
        let (grads, _) = self.critic.backward(&trace, &d_out)?;
        self.critic.update_running_stats(&trace);
        self.critic.adam_step(&grads, &mut self.critic_opt);

        // actor
        let actor_trace = self.actor.forward_train(&s)?;
        let critic_trace = self.critic.forward_train(&concat(&s, &actor_trace.output))?;
        let actor_objective = critic_trace.output.mean().unwrap_or(0.0);
        let d_q = Array2::from_elem((b, 1), -1.0 / b as f64);
        let (_, d_input) = self.critic.backward(&critic_trace, &d_q)?;
        let d_action = d_input.slice(s![.., m..]).to_owned();
        let (actor_grads, _) = self.actor.backward(&actor_trace, &d_action)?;
        self.actor.update_running_stats(&actor_trace);
        self.actor.adam_step(&actor_grads, &mut self.actor_opt);

        self.actor_target.soft_update_from(&self.actor, self.config.tau);
        self.critic_target.soft_update_from(&self.critic, self.config.tau);
        Ok(UpdateStats { critic_loss, actor_objective })
    }

    pub fn checkpoint(&self) -> AgentCheckpoint {
        AgentCheckpoint {
            config: self.config.clone(),
            phase_bits: self.codebook.bits(),
            actor: self.actor.clone(),
            critic: self.critic.clone(),
            actor_target: self.actor_target.clone(),
            critic_target: self.critic_target.clone(),
            state: self.state.clone(),
            noise_scale: self.noise_scale,
            steps: self.steps,
            buffer_len: self.buffer.len(),
        }
    }
}

fn concat(left: &Array2<f64>, right: &Array2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[left.view(), right.view()]).expect("equal row counts")
}
