//! Subcommand implementations. Each takes parsed arguments and writes its
//! artifacts under an output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use aqcf_core::fusion::{quantum_utilization, Utilization};
use aqcf_core::model::{ForwardOptions, Model};
use aqcf_core::training::{plateau_diagnostic, predict_all, Example, PlateauRow, StepMetrics, TrainState, Trainer};
use aqcf_core::{rng, Error as CoreError};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::{load_rows, tokenize, Row, Vocab};
use crate::error::CliError;
use crate::metrics::{classification, ClassMetrics, MetricsLog};

const INIT_STREAM: u64 = 0x494e_4954;
const SPLIT_STREAM: u64 = 0x5350_4c54;

pub struct Prepared {
    pub vocab: Vocab,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

fn to_examples(rows: &[Row], vocab: &Vocab, max_len: usize, truncate: bool, source: &Path) -> Result<Vec<Example>, CliError> {
    rows.iter()
        .map(|r| {
            let ids = tokenize(&r.text, vocab, max_len, truncate)
                .map_err(|e| CliError::Data(format!("{}: line {}: {e}", source.display(), r.line)))?;
            if ids.is_empty() {
                return Err(CliError::Data(format!("{}: line {}: text has no tokens", source.display(), r.line)));
            }
            Ok(Example { ids, label: r.label })
        })
        .collect()
}

/// Loads the configured data, builds the vocabulary from the training split
/// and tokenizes both splits. Sets `cfg.model.vocab_size`.
pub fn prepare(cfg: &mut RunConfig) -> Result<Prepared, CliError> {
    let train_path = cfg
        .data
        .train
        .clone()
        .ok_or_else(|| CliError::Config("data.train is not set".into()))?;
    if !train_path.is_file() {
        return Err(CliError::Config(format!("training data {} not found", train_path.display())));
    }
    let classes = cfg.model.num_classes;
    let mut train_rows = load_rows(&train_path, classes)?;
    if train_rows.is_empty() {
        return Err(CliError::Data(format!("{} has no examples; nothing to train on", train_path.display())));
    }
    let (test_rows, test_path) = match &cfg.data.test {
        Some(p) => {
            if !p.is_file() {
                return Err(CliError::Config(format!("test data {} not found", p.display())));
            }
            (load_rows(p, classes)?, p.clone())
        }
        None => {
            train_rows.shuffle(&mut rng::stream(cfg.seed, &[SPLIT_STREAM]));
            let n_test = (train_rows.len() as f64 * cfg.data.holdout).round() as usize;
            let test = train_rows.split_off(train_rows.len() - n_test);
            (test, train_path.clone())
        }
    };
    let vocab = Vocab::build(train_rows.iter().map(|r| r.text.as_str()), cfg.data.min_count);
    cfg.model.vocab_size = vocab.len();
    let (len, trunc) = (cfg.model.max_seq_len, cfg.data.truncate);
    Ok(Prepared {
        train: to_examples(&train_rows, &vocab, len, trunc, &train_path)?,
        test: to_examples(&test_rows, &vocab, len, trunc, &test_path)?,
        vocab,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub epochs: usize,
    pub steps: u64,
    pub train_examples: usize,
    pub test_examples: usize,
    /// Held-out metrics; absent when the test split is empty.
    pub test: Option<ClassMetrics>,
    pub utilization: Option<Utilization>,
    pub final_loss: Option<f64>,
    pub seconds: f64,
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("checkpoint-epoch{epoch}.aqcf"))
}

/// Predictions, fusion weights and metrics of `state` on `data` in the
/// deterministic configuration of its current stage.
pub fn evaluate(
    model: &Model,
    cfg: &RunConfig,
    state: &TrainState,
    data: &[Example],
) -> Result<(ClassMetrics, Utilization, Vec<String>), CliError> {
    let trainer = Trainer::new(model, cfg.training.clone(), state.clone())?;
    let opts = trainer.eval_options();
    let (pred, lambdas) = predict_all(model, &state.store, data, &opts, state.seed)?;
    let truth: Vec<usize> = data.iter().map(|e| e.label).collect();
    let (m, warnings) = classification(&pred, &truth, cfg.model.num_classes);
    Ok((m, quantum_utilization(&lambdas)?, warnings))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Staged training. Writes `config.toml`, `metrics.jsonl`, one checkpoint
/// per epoch (epoch 0 is the initialisation) and `summary.json`. A
/// non-finite loss aborts the run; the checkpoint of the last finished
/// epoch stays on disk.
pub fn train(mut cfg: RunConfig, mut on_step: impl FnMut(&StepMetrics)) -> Result<Summary, CliError> {
    let start = Instant::now();
    cfg.validate()?;
    let data = prepare(&mut cfg)?;
    cfg.model.validate()?;
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;

    let (model, store) = Model::new(&cfg.model, &mut rng::stream(cfg.seed, &[INIT_STREAM]))?;
    let mut trainer = Trainer::new(&model, cfg.training.clone(), TrainState::new(store, cfg.seed))?;
    let mut log = MetricsLog::create(&out.join("metrics.jsonl"))?;
    checkpoint::save(&checkpoint_path(&out, 0), &cfg, &data.vocab, &trainer.state)?;

    let mut last_loss = None;
    for epoch in 1..=cfg.training.epochs {
        trainer
            .train_epoch(&data.train, |m| {
                log.write(m).map_err(|e| CoreError::InvalidInput(format!("metrics log: {e}")))?;
                last_loss = Some(m.loss);
                on_step(m);
                Ok(())
            })
            .map_err(|e| match e {
                CoreError::NonFinite(what) => CliError::Core(CoreError::NonFinite(format!(
                    "{what}; training aborted, last good checkpoint is {}",
                    checkpoint_path(&out, epoch - 1).display()
                ))),
                e => e.into(),
            })?;
        checkpoint::save(&checkpoint_path(&out, epoch), &cfg, &data.vocab, &trainer.state)?;
    }

    let (test, utilization) = if data.test.is_empty() {
        (None, None)
    } else {
        let (m, u, warnings) = evaluate(&model, &cfg, &trainer.state, &data.test)?;
        for w in warnings {
            eprintln!("warning: {w}");
        }
        (Some(m), Some(u))
    };
    let summary = Summary {
        epochs: cfg.training.epochs,
        steps: trainer.state.step,
        train_examples: data.train.len(),
        test_examples: data.test.len(),
        test,
        utilization,
        final_loss: last_loss,
        seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub metrics: ClassMetrics,
    pub utilization: Utilization,
    pub warnings: Vec<String>,
}

/// Scores a checkpoint on a CSV file and writes `eval.json` to `output_dir`.
pub fn eval(checkpoint_file: &Path, data: &Path, output_dir: &Path) -> Result<EvalReport, CliError> {
    let loaded = checkpoint::load(checkpoint_file)?;
    let cfg = &loaded.config;
    let rows = load_rows(data, cfg.model.num_classes)?;
    if rows.is_empty() {
        return Err(CliError::Data(format!("{} has no examples", data.display())));
    }
    let examples = to_examples(&rows, &loaded.vocab, cfg.model.max_seq_len, cfg.data.truncate, data)?;
    let (metrics, utilization, warnings) = evaluate(&loaded.model, cfg, &loaded.state, &examples)?;
    let report = EvalReport {
        checkpoint: checkpoint_file.to_path_buf(),
        data: data.to_path_buf(),
        metrics,
        utilization,
        warnings,
    };
    std::fs::create_dir_all(output_dir)?;
    write_json(&output_dir.join("eval.json"), &report)?;
    Ok(report)
}

/// Gradient-variance table as CSV text. Cells without a parameter print `skipped`.
pub fn plateau_csv(rows: &[PlateauRow]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n_qubits", "depth", "grad_variance", "samples"])
        .map_err(std::io::Error::other)?;
    for r in rows {
        let var = r.grad_variance.map_or_else(|| "skipped".to_string(), |v| format!("{v:e}"));
        w.write_record([r.n_qubits.to_string(), r.depth.to_string(), var, r.samples.to_string()])
            .map_err(std::io::Error::other)?;
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf8"))
}

pub fn diagnose_plateau(cfg: &RunConfig) -> Result<Vec<PlateauRow>, CliError> {
    let rows = plateau_diagnostic(&cfg.plateau, cfg.seed)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("plateau.csv"), plateau_csv(&rows)?)?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    pub tokens: Vec<usize>,
    /// Per token, `<Z_i>` for every qubit.
    pub expectations: Vec<Vec<f64>>,
    pub depths: Vec<usize>,
    pub lambda: f64,
}

/// Circuit expectations and fusion weight for one text, in inference mode
/// with the quantum pathway on.
pub fn encode(checkpoint_file: &Path, text: &str) -> Result<Encoding, CliError> {
    let loaded = checkpoint::load(checkpoint_file)?;
    let cfg = &loaded.config;
    let ids = tokenize(text, &loaded.vocab, cfg.model.max_seq_len, cfg.data.truncate)?;
    let mut opts = ForwardOptions::new(aqcf_core::Mode::Infer);
    opts.noise = cfg.training.noise;
    let (z, lambda, trace) = loaded
        .model
        .encode(&loaded.state.store, &ids, &opts, &mut rng::stream(loaded.state.seed, &[]))?;
    Ok(Encoding {
        expectations: (0..z.rows()).map(|r| z.row(r).to_vec()).collect(),
        tokens: ids,
        depths: trace.depths,
        lambda,
    })
}

/// Writes `train.csv`, `test.csv` and a matching `config.toml` for the toy task.
pub fn make_toy(dir: &Path, n_train: usize, n_test: usize, seed: u64) -> Result<(), CliError> {
    use crate::toy::{generate, write_csv, ToySpec};
    std::fs::create_dir_all(dir)?;
    let spec = ToySpec::default();
    write_csv(&dir.join("train.csv"), &generate(&spec, n_train, &mut rng::stream(seed, &[1])))
        .map_err(std::io::Error::other)?;
    write_csv(&dir.join("test.csv"), &generate(&spec, n_test, &mut rng::stream(seed, &[2])))
        .map_err(std::io::Error::other)?;
    std::fs::write(dir.join("config.toml"), crate::toy::TOY_CONFIG)?;
    Ok(())
}
