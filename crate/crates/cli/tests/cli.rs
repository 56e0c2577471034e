use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SCENARIO: &str = r#"
[dataset]
id = "mini"

[synth]
sample_rate = 2.046e6
duration = 3.5
noise_seed = 21

[[satellite]]
prn = 2
doppler = 900.0
code_phase = 101.3
carrier_phase = 0.1
cn0 = 50.0
nav_seed = 1

[[satellite]]
prn = 5
doppler = -1600.0
code_phase = 640.8
carrier_phase = 0.9
cn0 = 50.0
nav_seed = 2

[[satellite]]
prn = 13
doppler = 2300.0
code_phase = 12.6
carrier_phase = 1.7
cn0 = 50.0
nav_seed = 3

[[satellite]]
prn = 20
doppler = -350.0
code_phase = 455.1
carrier_phase = 2.5
cn0 = 50.0
nav_seed = 4

[[satellite]]
prn = 27
doppler = 3100.0
code_phase = 870.4
carrier_phase = 0.6
cn0 = 50.0
nav_seed = 5

[[satellite]]
prn = 30
doppler = -2750.0
code_phase = 299.9
carrier_phase = 1.2
cn0 = 50.0
nav_seed = 6

[attack]
mode = "spoofing"
power = "over"
takeover_time = 2.2
phase_offset = 0.8
seed = 9
spoofer_signature = { gain_asymmetry = 1.2, filter_taps = [0.25, 0.5, 0.25], phase_noise_std = 0.0 }
"#;

fn eplguard(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eplguard"))
        .env_remove("EPLGUARD_OUT")
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn glob(dir: &Path, suffix: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| s(p).ends_with(suffix))
        .collect();
    v.sort();
    v
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&eplguard(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&eplguard(dir.path(), &["train"])), 1);
    assert_eq!(code(&eplguard(dir.path(), &["--help"])), 0);
    let missing = eplguard(dir.path(), &["track", "/no/such/capture.toml"]);
    assert_eq!(code(&missing), 1);
    assert!(stderr(&missing).contains("/no/such/capture.toml"));
}

#[test]
fn malformed_feature_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "t,prn,x\n1,2,3\n").unwrap();
    let o = eplguard(dir.path(), &["train", "--genuine", s(&bad)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn duplicate_prn_scenario_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let scn = dir.path().join("dup.toml");
    fs::write(&scn, SCENARIO.replace("prn = 5", "prn = 2")).unwrap();
    let out = dir.path().join("out");
    let o = eplguard(&out, &["simulate", s(&scn)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("duplicate PRN 2"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn out_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let scn = dir.path().join("mini.toml");
    fs::write(&scn, SCENARIO.replace("duration = 3.5", "duration = 0.05")).unwrap();
    let out = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_eplguard"))
        .env("EPLGUARD_OUT", &out)
        .args(["simulate", s(&scn)])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("mini.manifest.toml").exists());
    assert!(out.join("simulate.run.json").exists());
}

#[test]
fn full_chain_raises_an_alarm_on_a_takeover() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let scn = dir.path().join("mini.toml");
    fs::write(&scn, SCENARIO).unwrap();

    let o = eplguard(&out, &["simulate", s(&scn)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest = out.join("mini.manifest.toml");
    let labels = out.join("mini.labels.csv");

    let o = eplguard(&out, &["track", s(&manifest), "--prns", "2,5,13,20,27,30"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let epochs = glob(&out, ".epochs.csv");
    assert_eq!(epochs.len(), 6);

    let mut args = vec!["extract"];
    args.extend(epochs.iter().map(|p| s(p)));
    args.extend(["--labels", s(&labels)]);
    let o = eplguard(&out, &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let genuine = out.join("mini.genuine.features.csv");
    let spoofed = out.join("mini.attacked.features.csv");

    let o = eplguard(
        &out,
        &[
            "train",
            "--genuine",
            s(&genuine),
            "--spoofed",
            s(&spoofed),
            "--seed",
            "4",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let model = out.join("model.json");
    assert!(model.exists());

    let o = eplguard(
        &out,
        &[
            "eval",
            "--model",
            s(&model),
            "--genuine",
            s(&genuine),
            "--spoofed",
            s(&spoofed),
            "--n",
            "1,5",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = fs::read_to_string(out.join("eval_report.csv")).unwrap();
    assert_eq!(report.lines().count(), 3, "{report}");

    let mut args = vec!["detect", "--model", s(&model)];
    args.extend(epochs.iter().map(|p| s(p)));
    args.extend(["--labels", s(&labels)]);
    let o = eplguard(&out, &args);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("ALARM"));
    assert!(out.join("decisions.csv").exists());

    for cmd in ["simulate", "track", "extract", "train", "eval", "detect"] {
        let text = fs::read_to_string(out.join(format!("{cmd}.run.json"))).unwrap();
        assert!(text.contains(&format!("\"command\": \"{cmd}\"")), "{text}");
    }

    let o = eplguard(
        &out,
        &[
            "xval",
            "--fold",
            &format!("a={},{}", s(&genuine), s(&spoofed)),
            "--fold",
            &format!("b={},{}", s(&genuine), s(&spoofed)),
            "--fold",
            &format!("c={},{}", s(&genuine), s(&spoofed)),
            "--fold",
            &format!("d={},{}", s(&genuine), s(&spoofed)),
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = fs::read_to_string(out.join("xval_report.csv")).unwrap();
    assert_eq!(table.lines().count(), 5, "{table}");
}
