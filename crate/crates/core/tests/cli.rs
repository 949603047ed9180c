//! End-to-end checks of the `dtc-sensor` binary.

use std::path::Path;
use std::process::{Command, Output};

use dtc_sensor::io::manifest::{read_manifest, verify_outputs, MANIFEST_FILE};
use dtc_sensor::io::read_table;

const SMALL: &str = r#"preset = "dtc-fig2"

[ensemble]
n_dis = 6

[drive]
n_periods = 24
"#;

fn dtc_sensor(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtc-sensor"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn dtc-sensor")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.toml"), "[ensemble]\nn_spins = 4\nbogus = 1\n").unwrap();
    std::fs::write(d.join("empty.toml"), "").unwrap();
    std::fs::write(d.join("small.toml"), SMALL).unwrap();

    let out = dtc_sensor(&["run", "--config", "bad.toml"], d);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let out = dtc_sensor(&["run", "--config", "empty.toml"], d);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_spins"));

    assert_eq!(code(&dtc_sensor(&["run", "--preset", "no-such"], d)), 2);
    assert_eq!(code(&dtc_sensor(&["run", "--config", "absent.toml"], d)), 4);
    assert_eq!(code(&dtc_sensor(&["fit", "absent.csv", "--eps", "0.5"], d)), 4);

    let out = dtc_sensor(&["run", "--config", "small.toml", "--out", "o"], d);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    // quadratic growth from the first period: nothing to cross over from
    assert_eq!(code(&dtc_sensor(&["fit", "o/trajectory.csv", "--h-ac", "0.1"], d)), 3);
    assert_eq!(code(&dtc_sensor(&["fit", "o/trajectory.csv"], d)), 2);

    let out = dtc_sensor(&["oracle", "--preset", "dtc-fig2", "--out", "orc"], d);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_table(&d.join("orc/oracle.csv")).unwrap().rows.len(), 21);
    let out = dtc_sensor(&["oracle", "--config", "small.toml", "--seed", "1", "--out", "seeded"], d);
    assert_eq!(code(&out), 0);
}

#[test]
fn manifest_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("small.toml"), SMALL).unwrap();
    let out = dtc_sensor(&["run", "--config", "small.toml", "--seed", "77", "--out", "a"], d);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let manifest = read_manifest(&d.join("a").join(MANIFEST_FILE)).unwrap();
    assert!(manifest.outputs.iter().any(|o| o.file == "trajectory.csv"));
    assert!(manifest.config.contains("master_seed = 77"));
    assert!(verify_outputs(&d.join("a"), &manifest).unwrap().is_empty());

    // the snapshot alone must be enough to rerun
    std::fs::write(d.join("snapshot.toml"), &manifest.config).unwrap();
    let out = dtc_sensor(&["run", "--config", "snapshot.toml", "--out", "b", "--workers", "3"], d);
    assert_eq!(code(&out), 0);
    assert!(verify_outputs(&d.join("b"), &manifest).unwrap().is_empty());
    assert_eq!(
        std::fs::read(d.join("a/trajectory.csv")).unwrap(),
        std::fs::read(d.join("b/trajectory.csv")).unwrap()
    );
}

#[test]
fn sweep_fit_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let config = format!(
        "{SMALL}\n[sweep]\naxis = \"omega_ac\"\nvalues = [3.3, 2.9, 3.141592653589793]\nrecord_times = [24]\n"
    );
    std::fs::write(d.join("sweep.toml"), config).unwrap();
    let out = dtc_sensor(&["sweep", "--config", "sweep.toml", "--out", "s"], d);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let table = read_table(&d.join("s/sweep.csv")).unwrap();
    assert_eq!(table.columns[0], "omega_ac");
    assert_eq!(table.rows.len(), 3);
    let omegas = table.column_f64("omega_ac").unwrap();
    assert!(omegas.windows(2).all(|w| w[0] < w[1]), "{omegas:?}");
    assert!(table.rows.iter().all(|r| r.last().unwrap() == "ok"));

    let out = dtc_sensor(&["plot", "s/sweep.csv", "--kind", "qfi_vs_omega"], d);
    assert_eq!(code(&out), 0);
    let svg = std::fs::read_to_string(d.join("s/sweep_qfi_vs_omega.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("class=\"series\""));

    assert_eq!(code(&dtc_sensor(&["sweep", "--preset", "dtc-fig2"], d)), 2);

    let out = dtc_sensor(&["run", "--config", "sweep.toml", "--out", "r"], d);
    assert_eq!(code(&out), 0);
    let out = dtc_sensor(
        &["fit", "r/trajectory.csv", "--window", "4", "24", "--eps", "0.5", "--out", "f"],
        d,
    );
    assert_eq!(code(&out), 0);
    let report: toml::Table = std::fs::read_to_string(d.join("f/fit.toml")).unwrap().parse().unwrap();
    let beta = report["growth"]["exponent"].as_float().unwrap();
    assert!((1.5..2.5).contains(&beta), "{beta}");
    assert_eq!(report["thermalization"]["reached"].as_bool(), Some(false));
    assert_eq!(
        code(&dtc_sensor(&["plot", "r/trajectory.csv", "--kind", "nonsense"], d)),
        2
    );
}
