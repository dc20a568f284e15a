use std::path::{Path, PathBuf};
use std::process::Command;

use epfde::harness::{
    read_results_json, ExitRow, ExperimentConfig, ResultRow, ScenarioKind, SweepRow,
};

fn configs_dir() -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs"]
        .iter()
        .collect()
}

fn epfde(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_epfde"))
        .args(args)
        .output()
        .expect("binary runs")
}

const SMALL: &str = r#"
kind = "sc_fde"
seed = 11
block_len = 64
constellation = "qpsk"
code = { polys = "1,5/7" }

[channel]
preset = "proakis_b"

[receiver]
mode = "ep"
self_iterations = 1
turbo_iterations = 1
damping = { mode = "feature", beta0 = 0.7 }

[sim]
ebn0_db = [2.0, 6.0]
max_blocks = 40
"#;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn shipped_configs_parse_and_validate() {
    let mut n = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg =
                ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            match cfg.kind {
                ScenarioKind::Exit => assert!(cfg.exit.is_some()),
                _ => assert!(cfg.sim.is_some()),
            }
            n += 1;
        }
    }
    assert!(n >= 7);
}

#[test]
fn run_writes_csv_with_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("out.csv");
    let res = epfde(&[
        "run",
        cfg.to_str().unwrap(),
        "--workers",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config_sha256: "));
    assert_eq!(lines.next().unwrap(), "# seed: 11");
    assert!(lines.next().unwrap().starts_with("# version: "));
    assert_eq!(
        lines.next().unwrap(),
        "snr_db,tau,s,ber,bler,blocks_run,bit_errors,block_errors,wall_seconds"
    );
    // two SNR points times two turbo iterations
    assert_eq!(lines.count(), 4);
}

#[test]
fn run_json_matches_library_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write(dir.path(), "small.toml", SMALL);
    let res = epfde(&[
        "run",
        cfg_path.to_str().unwrap(),
        "--format",
        "json",
        "--seed",
        "5",
    ]);
    assert!(res.status.success());
    let (meta, rows) =
        read_results_json::<ResultRow>(&String::from_utf8(res.stdout).unwrap()).unwrap();
    assert_eq!(meta.seed, 5);

    let mut cfg = ExperimentConfig::from_toml(SMALL).unwrap();
    cfg.seed = 5;
    let direct = epfde::harness::run_experiment(&cfg).unwrap();
    assert_eq!(rows.len(), direct.len());
    for (a, b) in rows.iter().zip(&direct) {
        assert_eq!(
            (a.tau, a.blocks_run, a.bit_errors, a.block_errors),
            (b.tau, b.blocks_run, b.bit_errors, b.block_errors)
        );
        // JSON floats carry six significant digits
        assert!((a.ber - b.ber).abs() <= 1e-5 * b.ber);
    }
}

#[test]
fn sweep_tags_rows_with_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let res = epfde(&[
        "sweep",
        cfg.to_str().unwrap(),
        "--param",
        "receiver.self_iterations",
        "--values",
        "0,2",
        "--format",
        "json",
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let (_, rows) = read_results_json::<SweepRow>(&String::from_utf8(res.stdout).unwrap()).unwrap();
    assert_eq!(rows.len(), 8);
    assert!(rows[..4].iter().all(|r| r.sweep_value == "0"));
    assert!(rows[4..].iter().all(|r| r.sweep_value == "2"));
}

#[test]
fn exit_command_emits_curve_points() {
    let text = std::fs::read_to_string(configs_dir().join("exit_proakis_c.toml")).unwrap();
    let mut table: toml::Table = text.parse().unwrap();
    let exit = table["exit"].as_table_mut().unwrap();
    exit.insert("blocks".into(), 5.into());
    exit.insert("self_iterations".into(), toml::Value::Array(vec![1.into()]));
    exit.insert(
        "ia_grid".into(),
        toml::Value::Array(vec![0.0.into(), 0.5.into(), 1.0.into()]),
    );
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exit.toml", &toml::to_string(&table).unwrap());
    let res = epfde(&["exit", cfg.to_str().unwrap(), "--format", "json"]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let (_, rows) = read_results_json::<ExitRow>(&String::from_utf8(res.stdout).unwrap()).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.windows(2).all(|w| w[1].i_e >= w[0].i_e - 0.02));
    assert!(rows.iter().all(|r| r.s == 1 && r.mode.starts_with("ep")));
}

#[test]
fn invalid_config_reports_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.toml",
        &SMALL.replace("max_blocks = 40", "max_blocks = 0"),
    );
    let res = epfde(&["run", cfg.to_str().unwrap()]);
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("sim.max_blocks"), "{err}");
}
