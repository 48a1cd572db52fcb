use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use twinbeam::aggregate::{aggregate_seeds, write_aggregate_csv};
use twinbeam::array::{generate_scenario, Scenario};
use twinbeam::beamforming::{beam_gain_pattern, compute_powers, exhaustive_search, matched_filter_beam, Combiner};
use twinbeam::config::ExperimentConfig;
use twinbeam::environment::{NoiseModel, RealEnvironment};
use twinbeam::orchestrator::{self, collect_random_beams, run_assisted, run_baseline_real, RunResult, RunSummary, SweepRow};
use twinbeam::twin::{evaluate_nmse, train_twin, PowerDataset, PowerRole};
use twinbeam::{to_db, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "twinbeam", version, about = "Twin-assisted interference-aware beam learning experiments")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run a single seed instead of the configured seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; overrides the config's output_dir.
    #[arg(long, global = true, env = "TWINBEAM_OUT")]
    out: Option<PathBuf>,

    /// Worker threads for seed-parallel stages.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the scenario of every seed as JSON.
    GenScenario,
    /// Measure random codebook beams and write the interference and signal datasets.
    Collect,
    /// Train the configured twin on collected datasets and report held-out NMSE.
    TrainTwin {
        /// Directory holding the `collect` output; defaults to the output directory.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Held-out NMSE of every (architecture, training size, seed).
    TwinSweep,
    /// Real-environment-only learning baseline.
    TrainReal,
    /// Twin-assisted learning.
    TrainAssisted,
    /// Per-iteration mean and standard deviation of trace files across seeds.
    Evaluate {
        /// Which traces to aggregate.
        #[arg(long, value_enum, default_value_t = Mode::Real)]
        mode: Mode,
        /// Trace column to aggregate.
        #[arg(long, default_value = "sinr_db")]
        column: String,
        /// Explicit trace files; defaults to the configured seeds' traces of `mode`.
        inputs: Vec<PathBuf>,
    },
    /// Exhaustive-search optimum and the interference-blind beam of every seed.
    Oracle,
    /// Gain patterns of the optimum, interference-blind and learned beams.
    Pattern {
        /// Learned-run summary JSON whose best beam is added to the patterns.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Real,
    Assisted,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Real => "real",
            Mode::Assisted => "assisted",
        }
    }
}

struct Ctx {
    config: ExperimentConfig,
    seeds: Vec<u64>,
    out: PathBuf,
    threads: usize,
}

impl Ctx {
    fn header(&self, seed: u64) -> Vec<String> {
        vec![self.config.header(seed)]
    }

    fn meta(&self, seed: u64) -> serde_json::Value {
        json!({
            "version": twinbeam::config::ARTIFACT_VERSION,
            "config_hash": self.config.hash(),
            "seed": seed,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn scenario(&self, seed: u64) -> Result<Scenario> {
        generate_scenario(&self.config.scenario, seed)
    }

    fn real_env(&self, seed: u64) -> Result<RealEnvironment> {
        let env = RealEnvironment::new(self.scenario(seed)?);
        Ok(match self.config.noise {
            Some(n) => env.with_noise(NoiseModel { sigma_db: n.sigma_db, seed: n.seed.wrapping_add(seed) }),
            None => env,
        })
    }

    fn write_json(&self, name: &str, value: &serde_json::Value) -> Result<()> {
        std::fs::write(self.path(name), serde_json::to_string_pretty(value)? + "\n")?;
        Ok(())
    }

    /// Runs `job` for every seed on up to `threads` workers; results keep seed order.
    fn per_seed<T: Send>(&self, job: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
        let workers = self.threads.max(1).min(self.seeds.len());
        let chunks: Vec<Vec<u64>> = (0..workers)
            .map(|w| self.seeds.iter().copied().skip(w).step_by(workers).collect())
            .collect();
        let mut slots: Vec<Option<Result<T>>> = (0..self.seeds.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .iter()
                .map(|chunk| scope.spawn(|| chunk.iter().map(|&s| job(s)).collect::<Vec<_>>()))
                .collect();
            for (w, h) in handles.into_iter().enumerate() {
                for (i, r) in h.join().expect("worker panicked").into_iter().enumerate() {
                    slots[w + i * workers] = Some(r);
                }
            }
        });
        slots.into_iter().map(|s| s.expect("every seed ran")).collect()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::InvalidConfig(_) | Error::Toml(_) => 2,
                Error::Budget(_) => 3,
                _ => 1,
            })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let path = cli.config.ok_or_else(|| Error::InvalidConfig("--config is required".into()))?;
    let config = ExperimentConfig::load(&path)?;
    let seeds = cli.seed.map_or_else(|| config.seeds.clone(), |s| vec![s]);
    let out = cli.out.unwrap_or_else(|| config.output_dir.clone());
    std::fs::create_dir_all(&out)?;
    let ctx = Ctx { config, seeds, out, threads: cli.threads };
    match cli.command {
        Command::GenScenario => gen_scenario(&ctx),
        Command::Collect => collect(&ctx),
        Command::TrainTwin { data } => train_twin_cmd(&ctx, data.as_deref()),
        Command::TwinSweep => twin_sweep(&ctx),
        Command::TrainReal => train(&ctx, Mode::Real),
        Command::TrainAssisted => train(&ctx, Mode::Assisted),
        Command::Evaluate { mode, column, inputs } => evaluate(&ctx, mode, &column, inputs),
        Command::Oracle => oracle(&ctx),
        Command::Pattern { summary } => pattern(&ctx, summary.as_deref()),
    }
}

fn gen_scenario(ctx: &Ctx) -> Result<()> {
    for &seed in &ctx.seeds {
        let scenario = ctx.scenario(seed)?;
        let value = json!({ "meta": ctx.meta(seed), "scenario": scenario });
        ctx.write_json(&format!("scenario_seed{seed}.json"), &value)?;
    }
    Ok(())
}

fn write_dataset(ctx: &Ctx, ds: &PowerDataset, stem: &str, seed: u64, scenario: &Scenario) -> Result<()> {
    ds.write_csv(&ctx.path(&format!("{stem}.csv")), &ctx.header(seed))?;
    let hash = twinbeam::config::sha256_hex(scenario.to_json()?.as_bytes());
    let sidecar = ds.sidecar(&hash, ctx.meta(seed));
    std::fs::write(ctx.path(&format!("{stem}.json")), serde_json::to_string_pretty(&sidecar)? + "\n")?;
    Ok(())
}

fn collect(ctx: &Ctx) -> Result<()> {
    let n = ctx.config.collect.samples;
    ctx.per_seed(|seed| {
        let mut env = ctx.real_env(seed)?;
        let (d_in, d_s) = collect_random_beams(&mut env, n, seed)?;
        write_dataset(ctx, &d_in, &format!("d_in_seed{seed}"), seed, env.scenario())?;
        write_dataset(ctx, &d_s, &format!("d_s_seed{seed}"), seed, env.scenario())
    })?;
    Ok(())
}

fn train_twin_cmd(ctx: &Ctx, data: Option<&Path>) -> Result<()> {
    let dir = data.unwrap_or(&ctx.out).to_path_buf();
    let twin = &ctx.config.twin;
    let m = ctx.config.scenario.num_antennas;
    let k = ctx.config.scenario.interferers.len();
    ctx.per_seed(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut report = serde_json::Map::new();
        for (role, stem) in [(PowerRole::Interference, "in"), (PowerRole::Signal, "s")] {
            let data = PowerDataset::read_csv(&dir.join(format!("d_{stem}_seed{seed}.csv")), role)?;
            let (train, held) = data.split(twin.validation_fraction, seed);
            let mut pred = twin.build(role, m, k, &mut rng)?;
            let losses = train_twin(&mut pred, &train, &twin.hyper(seed))?;
            let nmse = if held.is_empty() { None } else { Some(evaluate_nmse(&pred, &held)?) };
            pred.save(&ctx.path(&format!("twin_{stem}_seed{seed}.json")))?;
            report.insert(
                role.to_string(),
                json!({ "train_size": train.len(), "heldout_size": held.len(), "nmse": nmse, "final_loss": losses.last() }),
            );
        }
        report.insert("architecture".into(), json!(twin.architecture));
        report.insert("meta".into(), ctx.meta(seed));
        ctx.write_json(&format!("twin_nmse_seed{seed}.json"), &serde_json::Value::Object(report))
    })?;
    Ok(())
}

fn twin_sweep(ctx: &Ctx) -> Result<()> {
    let sweep = &ctx.config.sweep;
    let rows = ctx.per_seed(|seed| {
        let mut env = ctx.real_env(seed)?;
        orchestrator::twin_sweep(&mut env, &ctx.config.twin, &sweep.sizes, &sweep.architectures, sweep.heldout, seed)
    })?;
    let path = ctx.path("twin_sweep.csv");
    let mut w = csv::Writer::from_writer(header_file(&path, &ctx.header(ctx.seeds[0]))?);
    w.write_record(["architecture", "size", "seed", "nmse_interference", "nmse_signal"])?;
    for r in rows.iter().flatten() {
        w.write_record([
            r.architecture.to_string(),
            r.size.to_string(),
            r.seed.to_string(),
            format!("{:?}", r.nmse_interference),
            format!("{:?}", r.nmse_signal),
        ])?;
    }
    w.flush()?;

    let mut summary = Vec::new();
    for &arch in &sweep.architectures {
        for &n in &sweep.sizes {
            let pick = |f: fn(&SweepRow) -> f64| {
                let v: Vec<f64> = rows.iter().flatten().filter(|r| r.architecture == arch && r.size == n).map(f).collect();
                median(v)
            };
            summary.push(json!({
                "architecture": arch,
                "size": n,
                "median_nmse_interference": pick(|r| r.nmse_interference),
                "median_nmse_signal": pick(|r| r.nmse_signal),
            }));
        }
    }
    ctx.write_json("twin_sweep_summary.json", &json!({ "meta": ctx.meta(ctx.seeds[0]), "medians": summary }))
}

fn header_file(path: &Path, header: &[String]) -> Result<std::fs::File> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    for line in header {
        writeln!(f, "# {line}")?;
    }
    Ok(f)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn oracle_sinr(ctx: &Ctx, scenario: &Scenario) -> Option<f64> {
    exhaustive_search(scenario, ctx.config.oracle_cap).ok().map(|(_, p)| p.sinr)
}

fn train(ctx: &Ctx, mode: Mode) -> Result<()> {
    let cfg = &ctx.config;
    ctx.per_seed(|seed| {
        let mut env = ctx.real_env(seed)?;
        let result: RunResult = match mode {
            Mode::Real => run_baseline_real(&mut env, &cfg.agent, cfg.baseline.iterations, seed)?,
            Mode::Assisted => run_assisted(&mut env, &cfg.agent, &cfg.twin, &cfg.policy, seed)?,
        };
        let name = mode.name();
        result.trace.write_csv(&ctx.path(&format!("trace_{name}_seed{seed}.csv")), &ctx.header(seed))?;
        let mut summary = RunSummary::new(name, seed, &result, oracle_sinr(ctx, env.scenario()));
        summary.meta = ctx.meta(seed);
        ctx.write_json(&format!("summary_{name}_seed{seed}.json"), &serde_json::to_value(&summary)?)?;
        println!(
            "seed {seed}: {name} final SINR {:.2} dB after {} real measurements",
            summary.final_sinr_db, summary.real_measurements
        );
        Ok(())
    })?;
    Ok(())
}

fn evaluate(ctx: &Ctx, mode: Mode, column: &str, inputs: Vec<PathBuf>) -> Result<()> {
    let inputs = if inputs.is_empty() {
        ctx.seeds.iter().map(|s| ctx.path(&format!("trace_{}_seed{s}.csv", mode.name()))).collect()
    } else {
        inputs
    };
    let rows = aggregate_seeds(&inputs, column)?;
    let mut header = ctx.header(ctx.seeds[0]);
    header.push(format!("aggregate of {column} over {} traces", inputs.len()));
    write_aggregate_csv(&rows, &ctx.path(&format!("aggregate_{}.csv", mode.name())), &header)
}

fn oracle(ctx: &Ctx) -> Result<()> {
    ctx.per_seed(|seed| {
        let scenario = ctx.scenario(seed)?;
        let (best, report) = exhaustive_search(&scenario, ctx.config.oracle_cap)?;
        let blind = matched_filter_beam(&scenario)?;
        let blind_report = compute_powers(&blind, &scenario)?;
        let value = json!({
            "meta": ctx.meta(seed),
            "sinr": report.sinr,
            "sinr_db": report.sinr_db(),
            "rate": report.rate,
            "phases": best.phases(),
            "interference_blind_sinr": blind_report.sinr,
            "interference_blind_sinr_db": blind_report.sinr_db(),
            "interference_blind_phases": blind.phases(),
        });
        ctx.write_json(&format!("oracle_seed{seed}.json"), &value)
    })?;
    Ok(())
}

fn pattern(ctx: &Ctx, summary: Option<&Path>) -> Result<()> {
    let learned: Option<Vec<f64>> = match summary {
        Some(p) => {
            let s: RunSummary = serde_json::from_str(&std::fs::read_to_string(p)?)?;
            Some(s.best_phases)
        }
        None => None,
    };
    let n = ctx.config.pattern.points;
    let grid: Vec<f64> = (0..n)
        .map(|i| -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * i as f64 / (n - 1) as f64)
        .collect();
    for &seed in &ctx.seeds {
        let scenario = ctx.scenario(seed)?;
        let mut beams = vec![("matched", matched_filter_beam(&scenario)?)];
        if let Ok((best, _)) = exhaustive_search(&scenario, ctx.config.oracle_cap) {
            beams.push(("oracle", best));
        }
        if let Some(p) = &learned {
            beams.push(("learned", Combiner::from_phases(p)?));
        }
        for (label, beam) in beams {
            let gains = beam_gain_pattern(&beam, &scenario.geometry, &grid)?;
            let path = ctx.path(&format!("pattern_{label}_seed{seed}.csv"));
            let mut w = csv::Writer::from_writer(header_file(&path, &ctx.header(seed))?);
            w.write_record(["azimuth_deg", "gain_db"])?;
            for (az, g) in grid.iter().zip(&gains) {
                w.write_record([format!("{:?}", az.to_degrees()), format!("{:?}", to_db(*g))])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}
