//! Real-only baseline and the twin-assisted learning loop.
//!
//! The assisted loop runs an initial real acquisition, then up to `R` rounds of
//! twin training, virtual interaction until the best virtual SINR plateaus, real
//! re-evaluation of the best virtual beams and active re-acquisition. Every real
//! measurement goes through [`RealEnvironment`], whose counter is mirrored in the trace.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentConfig, StepOutcome};
use crate::beamforming::{phase_set, Combiner};
use crate::environment::{MeasurementReport, RealEnvironment, TwinEnvironment};
use crate::twin::{evaluate_nmse, train_twin, PowerDataset, PowerRole, TwinArchitecture, TwinConfig};
use crate::{to_db, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwitchPolicy {
    /// `N_init`: agent steps in the initial real acquisition.
    pub initial_real_budget: u64,
    /// `eps_switch`: largest held-out NMSE (both predictors) that allows virtual interaction.
    pub nmse_gate: f64,
    /// `W`: virtual steps without a new best virtual SINR that end a virtual phase.
    pub plateau_window: u64,
    /// Hard cap on the steps of one virtual phase.
    pub virtual_cap: u64,
    /// `N_re`: agent steps per re-acquisition.
    pub reacquisition_size: u64,
    /// `R`: maximum number of twin rounds.
    pub max_rounds: u32,
    /// `B`: total real-measurement budget, including seeding and re-evaluations.
    pub total_budget: u64,
    /// Best virtual beams re-evaluated on the real environment after each virtual phase.
    pub reevaluate_top: usize,
}

impl Default for SwitchPolicy {
    fn default() -> Self {
        Self {
            initial_real_budget: 1000,
            nmse_gate: 0.05,
            plateau_window: 500,
            virtual_cap: 5000,
            reacquisition_size: 200,
            max_rounds: 4,
            total_budget: 2000,
            reevaluate_top: 5,
        }
    }
}

impl SwitchPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.nmse_gate > 0.0) || self.plateau_window == 0 || self.virtual_cap == 0 || self.total_budget == 0 {
            return Err(Error::config("switch policy gate, window, cap and budget must be positive"));
        }
        if self.max_rounds > 0 && self.reacquisition_size == 0 {
            return Err(Error::config("reacquisition_size must be positive when rounds are enabled"));
        }
        let planned = self.initial_real_budget + self.max_rounds as u64 * self.reacquisition_size;
        if planned > self.total_budget {
            return Err(Error::config(format!(
                "N_init + R * N_re = {planned} exceeds the total budget {}",
                self.total_budget
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvTag {
    Real,
    Virtual,
}

impl std::fmt::Display for EnvTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EnvTag::Real => "real",
            EnvTag::Virtual => "virtual",
        })
    }
}

/// One interaction with either environment. Seeding and re-evaluation rows have no reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: u64,
    pub env: EnvTag,
    pub sinr: f64,
    pub reward: Option<f64>,
    pub total_power: f64,
    pub in_power: f64,
    pub cumulative_real: u64,
}

/// Twin quality and outcome of one assisted round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub dataset_size: usize,
    pub nmse_interference: Option<f64>,
    pub nmse_signal: Option<f64>,
    pub gate_passed: bool,
    pub virtual_steps: u64,
    pub best_real_sinr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningTrace {
    pub rows: Vec<TraceRow>,
    pub rounds: Vec<RoundRecord>,
}

impl LearningTrace {
    fn push(&mut self, env: EnvTag, report: &MeasurementReport, reward: Option<f64>, cumulative_real: u64) {
        self.rows.push(TraceRow {
            iteration: self.rows.len() as u64,
            env,
            sinr: report.sinr(),
            reward,
            total_power: report.total_power,
            in_power: report.in_power,
            cumulative_real,
        });
    }

    pub fn cumulative_real(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.cumulative_real)
    }

    pub fn virtual_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.env == EnvTag::Virtual).count()
    }

    /// CSV columns: `iteration,env,sinr,sinr_db,reward,total_power,in_power,cumulative_real`;
    /// `header` lines become `#` comments.
    pub fn write_csv(&self, path: &Path, header: &[String]) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        for line in header {
            writeln!(file, "# {line}")?;
        }
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["iteration", "env", "sinr", "sinr_db", "reward", "total_power", "in_power", "cumulative_real"])?;
        for r in &self.rows {
            w.write_record([
                r.iteration.to_string(),
                r.env.to_string(),
                format!("{:?}", r.sinr),
                format!("{:?}", to_db(r.sinr)),
                r.reward.map_or(String::new(), |v| format!("{v}")),
                format!("{:?}", r.total_power),
                format!("{:?}", r.in_power),
                r.cumulative_real.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Outcome of a learning run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub trace: LearningTrace,
    /// Best beam by real measurement.
    pub best: Combiner,
    /// Its real-measured SINR.
    pub best_sinr: f64,
    pub real_measurements: u64,
    /// Datasets accumulated by the assisted loop (empty for the baseline).
    pub d_in: PowerDataset,
    pub d_s: PowerDataset,
}

/// Best real-measured beam so far.
#[derive(Debug, Clone)]
struct BestBeam {
    beam: Option<(Combiner, f64)>,
}

impl BestBeam {
    fn new() -> Self {
        Self { beam: None }
    }

    fn offer(&mut self, c: &Combiner, sinr: f64) {
        if self.beam.as_ref().is_none_or(|(_, s)| sinr > *s) {
            self.beam = Some((c.clone(), sinr));
        }
    }

    fn sinr(&self) -> f64 {
        self.beam.as_ref().map_or(f64::NEG_INFINITY, |(_, s)| *s)
    }

    fn take(self) -> Result<(Combiner, f64)> {
        self.beam.ok_or_else(|| Error::State("no real measurement was taken".into()))
    }
}

fn record_sample(d_in: &mut PowerDataset, d_s: &mut PowerDataset, c: &Combiner, r: &MeasurementReport) -> Result<()> {
    d_in.push(c, r.in_power)?;
    d_s.push(c, r.signal_power())
}

/// One real agent step with learning, recorded in the trace.
fn real_step(agent: &mut Agent, env: &mut RealEnvironment, trace: &mut LearningTrace, best: &mut BestBeam) -> Result<StepOutcome> {
    let out = agent.step(env)?;
    if let Some((c, r)) = &out.seeding {
        let seeding_count = env.count() - 1;
        trace.push(EnvTag::Real, r, None, seeding_count);
        best.offer(c, r.sinr());
    }
    trace.push(EnvTag::Real, &out.report, Some(out.transition.reward), env.count());
    best.offer(&out.combiner, out.sinr);
    agent.learn()?;
    Ok(out)
}

fn ensure_budget(env: &RealEnvironment, needed: u64) -> Result<()> {
    match env.remaining() {
        Some(left) if left < needed => Err(Error::Budget(format!("{needed} real measurements needed, {left} left"))),
        _ => Ok(()),
    }
}

/// Extra measurement the agent's first step would take.
fn seeding_cost(agent: &Agent) -> u64 {
    u64::from(agent.state().last_sinr.is_none())
}

/// Runs `n_init` real agent steps, recording every measured pair in fresh datasets.
pub fn initial_acquisition(
    agent: &mut Agent,
    env: &mut RealEnvironment,
    n_init: u64,
    trace: &mut LearningTrace,
) -> Result<(PowerDataset, PowerDataset)> {
    let m = agent.num_antennas();
    let mut d_in = PowerDataset::new(PowerRole::Interference, m);
    let mut d_s = PowerDataset::new(PowerRole::Signal, m);
    let mut best = BestBeam::new();
    acquire(agent, env, n_init, &mut d_in, &mut d_s, trace, &mut best)?;
    Ok((d_in, d_s))
}

/// Runs `n_re` real agent steps with the current policy and appends the samples.
pub fn active_reacquisition(
    agent: &mut Agent,
    env: &mut RealEnvironment,
    n_re: u64,
    d_in: &mut PowerDataset,
    d_s: &mut PowerDataset,
    trace: &mut LearningTrace,
) -> Result<()> {
    let mut best = BestBeam::new();
    acquire(agent, env, n_re, d_in, d_s, trace, &mut best)
}

fn acquire(
    agent: &mut Agent,
    env: &mut RealEnvironment,
    steps: u64,
    d_in: &mut PowerDataset,
    d_s: &mut PowerDataset,
    trace: &mut LearningTrace,
    best: &mut BestBeam,
) -> Result<()> {
    if steps == 0 {
        return Ok(());
    }
    ensure_budget(env, steps + seeding_cost(agent))?;
    for _ in 0..steps {
        let out = real_step(agent, env, trace, best)?;
        record_sample(d_in, d_s, &out.combiner, &out.report)?;
    }
    Ok(())
}

/// Result of a virtual phase.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualOutcome {
    pub steps: u64,
    /// Distinct beams with the highest virtual SINR, best first.
    pub top_beams: Vec<(Combiner, f64)>,
}

fn offer_top(top: &mut Vec<(Combiner, f64)>, c: &Combiner, sinr: f64, k: usize) {
    if k == 0 || top.iter().any(|(b, _)| b.phases() == c.phases()) {
        return;
    }
    if top.len() == k && top.last().is_some_and(|(_, s)| sinr <= *s) {
        return;
    }
    let pos = top.iter().position(|(_, s)| sinr > *s).unwrap_or(top.len());
    top.insert(pos, (c.clone(), sinr));
    top.truncate(k);
}

/// Agent steps against the twin until the best virtual SINR has not improved for `window`
/// consecutive steps, or `cap` steps have run. Takes no real measurements; rows carry
/// `real_so_far` as their cumulative real count.
pub fn virtual_phase(
    agent: &mut Agent,
    twin: &mut TwinEnvironment,
    window: u64,
    cap: u64,
    top_k: usize,
    real_so_far: u64,
    trace: &mut LearningTrace,
) -> Result<VirtualOutcome> {
    let (c0, r0) = agent.reseed(twin)?;
    trace.push(EnvTag::Virtual, &r0, None, real_so_far);
    let mut best = r0.sinr();
    let mut top = Vec::new();
    offer_top(&mut top, &c0, best, top_k);
    let mut stale = 0;
    let mut steps = 0;
    while steps < cap && stale < window {
        let out = agent.interact(twin)?;
        steps += 1;
        trace.push(EnvTag::Virtual, &out.report, Some(out.transition.reward), real_so_far);
        offer_top(&mut top, &out.combiner, out.sinr, top_k);
        if out.sinr > best {
            best = out.sinr;
            stale = 0;
        } else {
            stale += 1;
        }
    }
    Ok(VirtualOutcome { steps, top_beams: top })
}

/// Measures `beams` on the real environment (at most what the budget allows).
fn reevaluate(
    beams: &[(Combiner, f64)],
    env: &mut RealEnvironment,
    d_in: &mut PowerDataset,
    d_s: &mut PowerDataset,
    trace: &mut LearningTrace,
    best: &mut BestBeam,
) -> Result<()> {
    let allowed = env.remaining().map_or(beams.len(), |r| beams.len().min(r as usize));
    for (c, _) in &beams[..allowed] {
        let r = env.measure_real(c)?;
        trace.push(EnvTag::Real, &r, None, env.count());
        record_sample(d_in, d_s, c, &r)?;
        best.offer(c, r.sinr());
    }
    Ok(())
}

/// Trains both predictors on a seeded split of the data; returns held-out NMSEs.
fn train_round(
    twin: &mut TwinEnvironment,
    d_in: &PowerDataset,
    d_s: &PowerDataset,
    config: &TwinConfig,
    seed: u64,
) -> Result<(Option<f64>, Option<f64>)> {
    let fit = |pred: &mut crate::twin::TwinPredictor, data: &PowerDataset, salt: u64| -> Result<Option<f64>> {
        let (train, held) = data.split(config.validation_fraction, seed ^ salt);
        train_twin(pred, &train, &config.hyper(seed ^ salt))?;
        if held.is_empty() {
            return Ok(None);
        }
        match evaluate_nmse(pred, &held) {
            Ok(v) => Ok(Some(v)),
            Err(Error::DegenerateInput(_)) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let nmse_in = fit(&mut twin.interference, d_in, 0x1)?;
    let nmse_s = fit(&mut twin.signal, d_s, 0x2)?;
    Ok((nmse_in, nmse_s))
}

/// Twin-assisted learning on `env` under `policy`; `env`'s budget is set to `B`.
pub fn run_assisted(
    env: &mut RealEnvironment,
    agent_config: &AgentConfig,
    twin_config: &TwinConfig,
    policy: &SwitchPolicy,
    seed: u64,
) -> Result<RunResult> {
    policy.validate()?;
    twin_config.validate()?;
    env.set_budget(Some(policy.total_budget));
    let scenario = env.scenario().clone();
    let m = scenario.num_antennas();
    let mut agent = Agent::new(agent_config.clone(), m, scenario.phase_bits, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7477_696e);
    let mut twin = TwinEnvironment::new(
        twin_config.build(PowerRole::Interference, m, scenario.num_interferers(), &mut rng)?,
        twin_config.build(PowerRole::Signal, m, scenario.num_interferers(), &mut rng)?,
    )?;

    let mut trace = LearningTrace::default();
    let mut best = BestBeam::new();
    let mut d_in = PowerDataset::new(PowerRole::Interference, m);
    let mut d_s = PowerDataset::new(PowerRole::Signal, m);
    acquire(&mut agent, env, policy.initial_real_budget, &mut d_in, &mut d_s, &mut trace, &mut best)?;

    let mut previous_best = f64::NEG_INFINITY;
    for round in 0..policy.max_rounds {
        let mut record = RoundRecord {
            round,
            dataset_size: d_in.len(),
            nmse_interference: None,
            nmse_signal: None,
            gate_passed: false,
            virtual_steps: 0,
            best_real_sinr: best.sinr(),
        };
        if d_in.len() >= 2 {
            let (ni, ns) = train_round(&mut twin, &d_in, &d_s, twin_config, seed.wrapping_add(round as u64))?;
            record.nmse_interference = ni;
            record.nmse_signal = ns;
            record.gate_passed = matches!((ni, ns), (Some(a), Some(b)) if a <= policy.nmse_gate && b <= policy.nmse_gate);
        }
        if record.gate_passed {
            let outcome = virtual_phase(
                &mut agent,
                &mut twin,
                policy.plateau_window,
                policy.virtual_cap,
                policy.reevaluate_top,
                env.count(),
                &mut trace,
            )?;
            record.virtual_steps = outcome.steps;
            reevaluate(&outcome.top_beams, env, &mut d_in, &mut d_s, &mut trace, &mut best)?;
        }
        record.best_real_sinr = best.sinr();
        trace.rounds.push(record);

        let improved = best.sinr() > previous_best;
        previous_best = best.sinr();
        if round > 0 && !improved {
            break;
        }
        let needed = policy.reacquisition_size + seeding_cost(&agent);
        if env.remaining().is_some_and(|left| left < needed) {
            break;
        }
        acquire(&mut agent, env, policy.reacquisition_size, &mut d_in, &mut d_s, &mut trace, &mut best)?;
    }

    let (best_beam, best_sinr) = best.take()?;
    Ok(RunResult { trace, best: best_beam, best_sinr, real_measurements: env.count(), d_in, d_s })
}

/// Plain real-environment learning for `iterations` steps (plus one seeding measurement).
pub fn run_baseline_real(
    env: &mut RealEnvironment,
    agent_config: &AgentConfig,
    iterations: u64,
    seed: u64,
) -> Result<RunResult> {
    let scenario = env.scenario().clone();
    let m = scenario.num_antennas();
    let mut agent = Agent::new(agent_config.clone(), m, scenario.phase_bits, seed)?;
    let mut trace = LearningTrace::default();
    let mut best = BestBeam::new();
    ensure_budget(env, iterations + 1)?;
    for _ in 0..iterations {
        real_step(&mut agent, env, &mut trace, &mut best)?;
    }
    let (best_beam, best_sinr) = best.take()?;
    Ok(RunResult {
        trace,
        best: best_beam,
        best_sinr,
        real_measurements: env.count(),
        d_in: PowerDataset::new(PowerRole::Interference, m),
        d_s: PowerDataset::new(PowerRole::Signal, m),
    })
}

/// Measures `n` uniformly random codebook beams on the real environment.
pub fn collect_random_beams(env: &mut RealEnvironment, n: u64, seed: u64) -> Result<(PowerDataset, PowerDataset)> {
    let scenario = env.scenario();
    let m = scenario.num_antennas();
    let codebook = phase_set(scenario.phase_bits)?;
    ensure_budget(env, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d_in = PowerDataset::new(PowerRole::Interference, m);
    let mut d_s = PowerDataset::new(PowerRole::Signal, m);
    for _ in 0..n {
        let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..codebook.len())).collect();
        let c = Combiner::from_indices(&idx, &codebook)?;
        let r = env.measure_real(&c)?;
        record_sample(&mut d_in, &mut d_s, &c, &r)?;
    }
    Ok((d_in, d_s))
}

/// Agent trained purely against a twin fitted to `samples` random real beams, for `iterations`
/// virtual steps; its best `top_k` virtual beams are then measured on the real environment.
/// Real cost: `samples + top_k`.
pub fn run_virtual_trained(
    env: &mut RealEnvironment,
    agent_config: &AgentConfig,
    twin_config: &TwinConfig,
    samples: u64,
    iterations: u64,
    top_k: usize,
    seed: u64,
) -> Result<RunResult> {
    twin_config.validate()?;
    let scenario = env.scenario().clone();
    let m = scenario.num_antennas();
    let (mut d_in, mut d_s) = collect_random_beams(env, samples, seed ^ 0x636f_6c6c)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7477_696e);
    let mut twin = TwinEnvironment::new(
        twin_config.build(PowerRole::Interference, m, scenario.num_interferers(), &mut rng)?,
        twin_config.build(PowerRole::Signal, m, scenario.num_interferers(), &mut rng)?,
    )?;
    let mut trace = LearningTrace::default();
    let (ni, ns) = train_round(&mut twin, &d_in, &d_s, twin_config, seed)?;
    let mut agent = Agent::new(agent_config.clone(), m, scenario.phase_bits, seed)?;
    let outcome = virtual_phase(&mut agent, &mut twin, u64::MAX, iterations, top_k, env.count(), &mut trace)?;
    trace.rounds.push(RoundRecord {
        round: 0,
        dataset_size: d_in.len(),
        nmse_interference: ni,
        nmse_signal: ns,
        gate_passed: true,
        virtual_steps: outcome.steps,
        best_real_sinr: f64::NEG_INFINITY,
    });
    let mut best = BestBeam::new();
    reevaluate(&outcome.top_beams, env, &mut d_in, &mut d_s, &mut trace, &mut best)?;
    if let Some(r) = trace.rounds.last_mut() {
        r.best_real_sinr = best.sinr();
    }
    let (best_beam, best_sinr) = best.take()?;
    Ok(RunResult { trace, best: best_beam, best_sinr, real_measurements: env.count(), d_in, d_s })
}

/// Held-out NMSE of one (architecture, training size, seed) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub architecture: TwinArchitecture,
    pub size: u64,
    pub seed: u64,
    pub nmse_interference: f64,
    pub nmse_signal: f64,
}

/// Trains fresh twins of every architecture on `sizes` random real beams and scores them on
/// `heldout` further random beams. Each size draws its own training beams.
pub fn twin_sweep(
    env: &mut RealEnvironment,
    twin_config: &TwinConfig,
    sizes: &[u64],
    architectures: &[TwinArchitecture],
    heldout: u64,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    let m = env.scenario().num_antennas();
    let k = env.scenario().num_interferers();
    let (h_in, h_s) = collect_random_beams(env, heldout, seed ^ 0x6865_6c64)?;
    let mut rows = Vec::new();
    for &n in sizes {
        let (d_in, d_s) = collect_random_beams(env, n, seed.wrapping_add(n))?;
        for &architecture in architectures {
            let cfg = TwinConfig { architecture, ..twin_config.clone() };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut fit = |role, data: &PowerDataset, held: &PowerDataset| -> Result<f64> {
                let mut pred = cfg.build(role, m, k, &mut rng)?;
                train_twin(&mut pred, data, &cfg.hyper(seed))?;
                evaluate_nmse(&pred, held)
            };
            let nmse_interference = fit(PowerRole::Interference, &d_in, &h_in)?;
            let nmse_signal = fit(PowerRole::Signal, &d_s, &h_s)?;
            rows.push(SweepRow { architecture, size: n, seed, nmse_interference, nmse_signal });
        }
    }
    Ok(rows)
}

/// Machine-readable run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: String,
    pub seed: u64,
    pub final_sinr: f64,
    pub final_sinr_db: f64,
    pub real_measurements: u64,
    pub oracle_sinr_db: Option<f64>,
    pub oracle_gap_db: Option<f64>,
    pub best_phases: Vec<f64>,
    pub rounds: Vec<RoundRecord>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl RunSummary {
    pub fn new(mode: &str, seed: u64, result: &RunResult, oracle_sinr: Option<f64>) -> Self {
        let final_db = to_db(result.best_sinr);
        Self {
            mode: mode.to_string(),
            seed,
            final_sinr: result.best_sinr,
            final_sinr_db: final_db,
            real_measurements: result.real_measurements,
            oracle_sinr_db: oracle_sinr.map(to_db),
            oracle_gap_db: oracle_sinr.map(|o| to_db(o) - final_db),
            best_phases: result.best.phases().to_vec(),
            rounds: result.trace.rounds.clone(),
            meta: serde_json::Value::Null,
        }
    }
}
