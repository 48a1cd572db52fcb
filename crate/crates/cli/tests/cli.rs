use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
seeds = [3, 4]

[scenario]
num_antennas = 4
phase_bits = 2
tx_power = 1.0
noise_power = 0.1
ue = { kind = "random", num_paths = 2, mean_power = 1.0 }
interferers = [{ kind = "random", num_paths = 1, mean_power = 1.0 }]

[agent]
batch_size = 8
buffer_capacity = 64
width_factor = 2

[twin]
architecture = "quadratic"
train = { batch_size = 512, epochs = 30, learning_rate = 0.1, milestones = [20], decay_factor = 0.1, seed = 0 }

[policy]
initial_real_budget = 40
reacquisition_size = 10
max_rounds = 2
total_budget = 100
plateau_window = 10
virtual_cap = 40
nmse_gate = 10.0

[baseline]
iterations = 30

[collect]
samples = 40

[sweep]
sizes = [20, 40]
architectures = ["quadratic"]
heldout = 30

[pattern]
points = 19
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_twinbeam"));
    c.env_remove("TWINBEAM_OUT");
    c
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn run(config: &Path, out: &Path, args: &[&str]) -> Output {
    bin().arg("--config").arg(config).arg("--out").arg(out).args(args).output().unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

fn toy_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml")
}

#[test]
fn oracle_on_toy_scenario() {
    let dir = tempfile::tempdir().unwrap();
    ok(&run(&toy_config(), dir.path(), &["oracle"]));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("oracle_seed0.json")).unwrap()).unwrap();
    assert!((v["sinr"].as_f64().unwrap() - 20.0).abs() < 1e-9);
    assert_eq!(v["phases"], serde_json::json!([0.0, 0.0]));
    assert_eq!(v["meta"]["seed"], 0);
}

#[test]
fn invalid_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}\n[extra]\nkey = 1\n"));
    let o = run(&cfg, dir.path(), &["oracle"]);
    assert_eq!(o.status.code(), Some(2));
    let cfg = write_config(dir.path(), &SMALL.replace("noise_power = 0.1", "noise_power = 0.0"));
    assert_eq!(run(&cfg, dir.path(), &["oracle"]).status.code(), Some(2));
    let missing = dir.path().join("missing.toml");
    assert_eq!(run(&missing, dir.path(), &["oracle"]).status.code(), Some(2));
}

#[test]
fn budget_violation_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    // N_init = B leaves no room for the seeding measurement
    let text = SMALL.replace("initial_real_budget = 40", "initial_real_budget = 100").replace("max_rounds = 2", "max_rounds = 0");
    let cfg = write_config(dir.path(), &text);
    let o = run(&cfg, dir.path(), &["--seed", "3", "train-assisted"]);
    assert_eq!(o.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&run(&cfg, &a, &["train-real"]));
    ok(&run(&cfg, &b, &["--threads", "2", "train-real"]));
    for seed in [3, 4] {
        let name = format!("trace_real_seed{seed}.csv");
        let ta = std::fs::read(a.join(&name)).unwrap();
        assert_eq!(ta, std::fs::read(b.join(&name)).unwrap());
        let text = String::from_utf8(ta).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.starts_with("# twinbeam ") && first.contains("config=") && first.ends_with(&format!("seed={seed}")));
        assert_eq!(text.lines().count(), 2 + 31);
    }
}

#[test]
fn full_pipeline_writes_declared_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    for cmd in ["gen-scenario", "collect", "train-twin", "twin-sweep", "train-real", "train-assisted", "oracle"] {
        ok(&run(&cfg, &out, &[cmd]));
    }
    ok(&run(&cfg, &out, &["evaluate", "--mode", "real"]));
    ok(&run(&cfg, &out, &["evaluate", "--mode", "assisted", "--column", "sinr"]));
    let summary = out.join("summary_assisted_seed3.json");
    ok(&run(&cfg, &out, &["--seed", "3", "pattern", "--summary", summary.to_str().unwrap()]));

    for seed in [3, 4] {
        for f in [
            "scenario_seed{}.json",
            "d_in_seed{}.csv",
            "d_in_seed{}.json",
            "d_s_seed{}.csv",
            "twin_in_seed{}.json",
            "twin_s_seed{}.json",
            "twin_nmse_seed{}.json",
            "trace_real_seed{}.csv",
            "summary_real_seed{}.json",
            "trace_assisted_seed{}.csv",
            "summary_assisted_seed{}.json",
            "oracle_seed{}.json",
        ] {
            let name = f.replace("{}", &seed.to_string());
            assert!(out.join(&name).exists(), "missing {name}");
        }
    }
    for f in ["twin_sweep.csv", "twin_sweep_summary.json", "aggregate_real.csv", "aggregate_assisted.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    for label in ["matched", "oracle", "learned"] {
        let text = std::fs::read_to_string(out.join(format!("pattern_{label}_seed3.csv"))).unwrap();
        assert_eq!(text.lines().nth(1), Some("azimuth_deg,gain_db"));
        assert_eq!(text.lines().count(), 2 + 19);
    }

    let sweep = std::fs::read_to_string(out.join("twin_sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 2 + 2 * 2);

    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert!(s["real_measurements"].as_u64().unwrap() <= 100);
    assert!(s["oracle_gap_db"].as_f64().unwrap() >= -1e-9);
}

#[test]
fn out_dir_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("from_env");
    let o = bin().arg("--config").arg(toy_config()).arg("oracle").env("TWINBEAM_OUT", &out).output().unwrap();
    ok(&o);
    assert!(out.join("oracle_seed0.json").exists());
}

#[test]
fn aggregate_of_explicit_traces() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    std::fs::write(&a, "iteration,sinr_db\n0,3\n1,3\n").unwrap();
    std::fs::write(&b, "iteration,sinr_db\n0,5\n1,5\n").unwrap();
    ok(&run(&toy_config(), dir.path(), &["evaluate", a.to_str().unwrap(), b.to_str().unwrap()]));
    let text = std::fs::read_to_string(dir.path().join("aggregate_real.csv")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows, vec!["iteration,mean,std,padded", "0,4.0,1.0,0", "1,4.0,1.0,0"]);
}
