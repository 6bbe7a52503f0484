use std::path::Path;
use std::process::Command;

use reflect_lab::{
    execute, parse_config, ExperimentConfig, RunManifest, Subcommand, EXIT_CONFIG, EXIT_OK,
    EXIT_RUNTIME,
};

const SMALL: &str = r#"
scenario = "small"

[grid]
nx = 16
nt = 50
t_final = 0.1

[noise]
amp = 3.0

[sweep]
n = [1.0, 10.0, 100.0, 1000.0, 10000.0]

[ensemble]
num_paths = 2

[capacity]
nx = 4
nt = 4
"#;

fn small() -> ExperimentConfig {
    parse_config(SMALL).unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_reflect-lab"))
}

#[test]
fn minimal_config_parses_with_defaults() {
    let cfg = parse_config("[grid]\nnx = 16\n").unwrap();
    assert_eq!(cfg.grid.nx, 16);
    assert_eq!(cfg.sweep.n.len(), 5);
    cfg.solver_config(cfg.model.strength).unwrap();
}

#[test]
fn sweep_writes_one_row_per_strength() {
    let dir = tempfile::tempdir().unwrap();
    let out = execute(Subcommand::Sweep, &small(), dir.path()).unwrap();
    assert_eq!(out.exit_code, EXIT_OK);
    let text = String::from_utf8(read(dir.path(), "sweep_report.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 5);
    let plot = String::from_utf8(read(dir.path(), "negativity_by_level.csv")).unwrap();
    assert_eq!(plot.lines().count(), 1 + 51);
    assert!(out.manifest.complete);
    assert_eq!(out.manifest.runs.len(), 5);
}

#[test]
fn single_writes_csvs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    execute(Subcommand::Single, &small(), dir.path()).unwrap();
    for f in ["trajectory.csv", "ledger.csv", "norms.csv"] {
        assert!(!read(dir.path(), f).is_empty(), "{f}");
    }
    let m = RunManifest::load(dir.path()).unwrap();
    assert!(m.complete);
    assert_eq!(m.config, small());
    assert_eq!(m.fingerprint, small().fingerprint());
    assert_eq!(m.outputs.len(), 3);
    assert_eq!(m.seeds, vec![small().noise.seed]);
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let cfg = small();
    for cmd in [Subcommand::Single, Subcommand::Ensemble, Subcommand::Capacity] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = execute(cmd, &cfg, a.path()).unwrap().manifest;
        let mb = execute(cmd, &cfg, b.path()).unwrap().manifest;
        assert_eq!(ma.outputs, mb.outputs, "{cmd:?}");
        for f in &ma.outputs {
            assert_eq!(read(a.path(), &f.file), read(b.path(), &f.file));
        }
    }
}

#[test]
fn validate_is_deterministic_and_passes() {
    let cfg = small();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = execute(Subcommand::Validate, &cfg, a.path()).unwrap();
    execute(Subcommand::Validate, &cfg, b.path()).unwrap();
    let report = read(a.path(), "validate_report.csv");
    assert_eq!(report, read(b.path(), "validate_report.csv"));
    let text = String::from_utf8(report).unwrap();
    assert_eq!(ra.exit_code, EXIT_OK, "{text}");
    for module in [
        "grid_fields",
        "models",
        "qwiener_noise",
        "penalized_solver",
        "reflection_diagnostics",
        "capacity_lab",
    ] {
        assert!(text.lines().any(|l| l.starts_with(module)), "{module}");
    }
}

#[test]
fn seed_override_changes_results_but_not_shape() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    execute(Subcommand::Single, &small(), a.path()).unwrap();
    execute(Subcommand::Single, &small().with_seed(99), b.path()).unwrap();
    let (x, y) = (read(a.path(), "norms.csv"), read(b.path(), "norms.csv"));
    assert_ne!(x, y);
    assert_eq!(
        String::from_utf8(x).unwrap().lines().count(),
        String::from_utf8(y).unwrap().lines().count()
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    };

    let bad = write("bad.toml", "[grid]\nnx = 0\nbogus = 1\n");
    let status = bin()
        .args(["single", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("bad"))
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&status.stderr).contains("grid.bogus"));

    let failing = write(
        "fail.toml",
        "[grid]\nnx = 8\nnt = 5\n[solver]\nnewton_max_iters = 1\nnewton_tol = 1e-300\n",
    );
    let out = dir.path().join("fail");
    let status = bin()
        .args(["single", "--config"])
        .arg(&failing)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(EXIT_RUNTIME));
    let m = RunManifest::load(&out).unwrap();
    assert!(!m.complete);
    assert!(m.error.unwrap().contains("did not converge"));

    let ok = write("ok.toml", "[grid]\nnx = 8\nnt = 5\n");
    let status = bin()
        .args(["capacity", "--threads", "1", "--seed-override", "3", "--config"])
        .arg(&ok)
        .arg("--out")
        .arg(dir.path().join("ok"))
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(EXIT_OK));
    let m = RunManifest::load(&dir.path().join("ok")).unwrap();
    assert_eq!(m.config.noise.seed, 3);
}
