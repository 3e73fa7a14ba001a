use std::path::Path;
use std::process::Command;

use aqcf_cli::commands;
use aqcf_cli::config::RunConfig;
use aqcf_cli::metrics::read_log;
use aqcf_cli::toy;
use aqcf_core::model::Model;
use aqcf_core::training::{Example, PlateauConfig, TrainState, Trainer};
use aqcf_core::{rng, Error};

fn micro_config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::parse(toy::TOY_CONFIG).unwrap();
    cfg.model.d_model = 8;
    cfg.model.n_heads = 2;
    cfg.model.n_qubits = 2;
    cfg.model.l_max = 2;
    cfg.model.memory_slots = 2;
    cfg.training.epochs = 1;
    cfg.output_dir = dir.join("out");
    cfg.data.train = Some(dir.join("train.csv"));
    cfg.data.test = Some(dir.join("test.csv"));
    cfg
}

fn write_toy(dir: &Path, n_train: usize, n_test: usize) {
    let spec = toy::ToySpec::default();
    toy::write_csv(&dir.join("train.csv"), &toy::generate(&spec, n_train, &mut rng::stream(0, &[1]))).unwrap();
    toy::write_csv(&dir.join("test.csv"), &toy::generate(&spec, n_test, &mut rng::stream(0, &[2]))).unwrap();
}

#[test]
fn shipped_toy_config_is_pinned() {
    let cfg = RunConfig::parse(toy::TOY_CONFIG).unwrap();
    assert_eq!(cfg.seed, 0);
    assert_eq!(cfg.output_dir, Path::new("runs/toy"));
    assert_eq!(
        (cfg.model.d_model, cfg.model.n_heads, cfg.model.n_layers, cfg.model.n_qubits),
        (32, 2, 1, 4)
    );
    assert_eq!((cfg.model.l_max, cfg.model.memory_slots, cfg.model.max_seq_len), (4, 8, 16));
    assert_eq!((cfg.training.epochs, cfg.training.batch_size), (6, 32));
    assert_eq!(cfg.training.optimizer.lr, 3e-3);
    assert_eq!(cfg.training.noise.epsilon, 0.01);
    assert_eq!(cfg.data.min_count, 2);
    assert_eq!(cfg.plateau, PlateauConfig::default());
}

#[test]
fn zero_epochs_writes_initial_checkpoint_and_empty_metrics() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path(), 40, 10);
    let mut cfg = micro_config(dir.path());
    cfg.training.epochs = 0;
    let summary = commands::train(cfg.clone(), |_| {}).unwrap();
    assert_eq!(summary.steps, 0);
    let out = &cfg.output_dir;
    assert!(commands::checkpoint_path(out, 0).is_file());
    assert!(!commands::checkpoint_path(out, 1).exists());
    assert_eq!(std::fs::read_to_string(out.join("metrics.jsonl")).unwrap(), "");
    assert!(out.join("summary.json").is_file());
}

#[test]
fn config_echo_reparses_to_the_effective_config() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path(), 40, 10);
    let cfg = micro_config(dir.path());
    commands::train(cfg.clone(), |_| {}).unwrap();
    let echo = RunConfig::parse(&std::fs::read_to_string(cfg.output_dir.join("config.toml")).unwrap()).unwrap();
    let loaded = aqcf_cli::checkpoint::load(&commands::checkpoint_path(&cfg.output_dir, 1)).unwrap();
    assert_eq!(echo, loaded.config);
    assert_eq!(echo.model.vocab_size, loaded.vocab.len());
    let log = read_log(&cfg.output_dir.join("metrics.jsonl")).unwrap();
    assert_eq!(log.len(), 2);
    assert_eq!(log[1].step, 2);
}

#[test]
fn missing_or_empty_data_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = micro_config(dir.path());
    let err = commands::train(cfg.clone(), |_| {}).unwrap_err().to_string();
    assert!(err.contains("not found"), "{err}");
    std::fs::write(dir.path().join("train.csv"), "text,label\n").unwrap();
    let err = commands::train(cfg, |_| {}).unwrap_err().to_string();
    assert!(err.contains("no examples"), "{err}");
}

#[test]
fn eval_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path(), 40, 10);
    let cfg = micro_config(dir.path());
    commands::train(cfg.clone(), |_| {}).unwrap();
    let ckpt = commands::checkpoint_path(&cfg.output_dir, 1);
    let report = commands::eval(&ckpt, &dir.path().join("test.csv"), &dir.path().join("eval")).unwrap();
    assert_eq!(report.metrics.n, 10);
    assert!(report.utilization.mean_lambda > 0.0 && report.utilization.mean_lambda < 1.0);
    assert!(dir.path().join("eval/eval.json").is_file());
    let enc = commands::encode(&ckpt, "w10 w12 unseenword").unwrap();
    assert_eq!(enc.tokens.len(), 3);
    assert_eq!(enc.tokens[2], aqcf_cli::data::UNK);
    assert_eq!(enc.expectations.len(), 3);
    assert!(enc.expectations.iter().flatten().all(|z| z.abs() <= 1.0));
}

#[test]
fn plateau_refuses_few_samples_and_marks_depth_zero() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.output_dir = dir.path().to_path_buf();
    cfg.plateau = PlateauConfig {
        n_qubits: vec![2],
        depths: vec![0, 1],
        samples: 29,
    };
    assert!(commands::diagnose_plateau(&cfg).is_err());
    cfg.plateau.samples = 30;
    commands::diagnose_plateau(&cfg).unwrap();
    let text = std::fs::read_to_string(dir.path().join("plateau.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n_qubits,depth,grad_variance,samples");
    assert_eq!(lines[1], "2,0,skipped,30");
    assert!(lines[2].starts_with("2,1,"));
}

#[test]
fn non_finite_parameters_abort_before_the_update() {
    let cfg = micro_config(Path::new("."));
    let mut mc = cfg.model.clone();
    mc.vocab_size = 10;
    let (model, mut store) = Model::new(&mc, &mut rng::stream(0, &[])).unwrap();
    store.get_mut(model.classifier_bias).data_mut()[0] = f64::NAN;
    let mut trainer = Trainer::new(&model, cfg.training.clone(), TrainState::new(store, 0)).unwrap();
    let ex = Example { ids: vec![2, 3], label: 0 };
    let err = trainer.train_step(&[&ex], 0.0, 10).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    assert_eq!(trainer.state.step, 0);
}

#[test]
fn binary_reports_errors_with_nonzero_exit() {
    let bin = env!("CARGO_BIN_EXE_aqcf");
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[data]\ntrain = \"missing.csv\"\n").unwrap();
    let out = Command::new(bin)
        .args(["train", "--config"])
        .arg(dir.path().join("c.toml"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not found"));

    let out = Command::new(bin)
        .args(["make-toy", "--train", "20", "--test", "6", "--output-dir"])
        .arg(dir.path().join("toy"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let rows = aqcf_cli::data::load_rows(&dir.path().join("toy/train.csv"), 2).unwrap();
    assert_eq!(rows.len(), 20);
}
