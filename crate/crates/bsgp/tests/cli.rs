use std::path::Path;
use std::process::Command;

use bsgp::config::RunConfig;
use bsgp::experiment::{initial_state, load_dataset, prepare_fold, stream_rng};
use bsgp::io::{load, Fitted};

fn bsgp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bsgp"))
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const TOY: &str = "[data]\ndataset = toy1d\ngenerator_n = 40\nfolds = 2\n[model]\ninducing = 5\n[sampler]\nburn_in = 20\nkeep_every = 2\nsamples = 5\n";

#[test]
fn zero_step_size_returns_the_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[data]\ndataset = toy1d\ngenerator_n = 40\nfolds = 2\n[model]\ninducing = 5\n\
                [sampler]\nstep_size = 0\nburn_in = 0\nkeep_every = 1\nsamples = 1\n";
    let cfg_path = write(dir.path(), "c.cfg", text);
    let out = dir.path().join("s.bsgp");
    let st = bsgp().args(["train", "--config"]).arg(&cfg_path).arg("--out").arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(0));

    let cfg = RunConfig::parse(&std::fs::read_to_string(&cfg_path).unwrap()).unwrap();
    let ds = load_dataset(&cfg).unwrap();
    let fd = prepare_fold(&cfg, &ds).unwrap();
    let init = initial_state(&cfg, &fd.x_train, fd.task, &mut stream_rng(cfg.sampler.sghmc.rng_seed, 1)).unwrap();
    let Fitted::Samples(s) = load(&out).unwrap().fitted else { panic!("expected samples") };
    assert_eq!(s.states, vec![init]);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.cfg", "[sampler]\nstep = 0.1\n");
    let o = bsgp().args(["train", "--config"]).arg(&cfg).args(["--out", "x"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("step_size") && err.contains("friction"), "{err}");
    assert_eq!(bsgp().arg("frobnicate").status().unwrap().code(), Some(2));
}

#[test]
fn missing_input_is_a_run_error() {
    let o = bsgp().args(["predict", "--model", "/nonexistent.bsgp", "--data", "/nonexistent.csv", "--out", "/tmp/x"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn identical_chains_give_unit_rhat() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("a,b,c,d\n");
    for i in 0..50 {
        let v = (i as f64 * 0.37).sin();
        text.push_str(&format!("{v},{v},{v},{v}\n"));
    }
    let t = write(dir.path(), "t.csv", &text);
    let o = bsgp().args(["diag", "--traces"]).arg(&t).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let out = String::from_utf8_lossy(&o.stdout);
    let r: f64 = out.trim().trim_start_matches("rhat = ").parse().unwrap();
    assert!((r - 1.0).abs() < 0.02, "{r}");
}

#[test]
fn train_predict_diag_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.cfg", &format!("{TOY}chains = 2\n"));
    let model = dir.path().join("m.bsgp");
    let metrics = dir.path().join("metrics.csv");
    let st = bsgp().args(["train", "--config"]).arg(&cfg).arg("--out").arg(&model).arg("--metrics").arg(&metrics).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let rows = std::fs::read_to_string(&metrics).unwrap();
    let mut lines = rows.lines();
    assert_eq!(lines.next(), Some(bsgp::experiment::METRICS_HEADER));
    let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(fields.len(), 12);
    assert!(fields[7].parse::<f64>().unwrap().is_finite());
    assert!(fields[11].parse::<f64>().unwrap().is_finite());

    let data = write(dir.path(), "d.csv", "x,y\n0.1,0.2\n-1.0,0.5\n2.0,-0.3\n");
    let pred = dir.path().join("p.csv");
    let st = bsgp().args(["predict", "--model"]).arg(&model).arg("--data").arg(&data).arg("--out").arg(&pred).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let p = std::fs::read_to_string(&pred).unwrap();
    assert_eq!(p.lines().count(), 4);
    assert!(p.starts_with("row,target,mean,variance,nll"));

    let o = bsgp().args(["diag", "--model"]).arg(&model).arg("--data").arg(&data).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 3);
}

#[test]
fn bench_appends_rows_and_reports_missing_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.cfg", &format!("{TOY}[data]\ndir = {}\n", dir.path().display()));
    let out = dir.path().join("m.csv");
    let st = bsgp()
        .args(["bench", "--config"])
        .arg(&cfg)
        .args(["--datasets", "toy1d", "--models", "bsgp,svgp", "--set", "sampler.adam_iterations=50", "--out"])
        .arg(&out)
        .env("BSGP_WORKERS", "2")
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 1 + 2 * 2);
    let o = bsgp().args(["bench", "--config"]).arg(&cfg).args(["--datasets", "nosuch", "--out"]).arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing dataset"));
}
