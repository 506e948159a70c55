use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;

use propall_core::datasets::{
    load_pll_csv, save_pll_csv, CorruptionSpec, DatasetError, PllDataset,
};
use propall_core::gradcheck::{run_all, CostVariant, GradcheckConfig};
use propall_core::metrics::{aggregate_runs, RunSummary};
use propall_core::nn::{
    evaluate, load_checkpoint, save_checkpoint, train as train_model, Architecture, NnError,
    TrainConfig,
};
use propall_core::oracles::MAX_ENUMERATION_CLASSES;

use crate::args::{
    AblateArgs, CorruptArgs, CorruptMode, EvalArgs, GradcheckArgs, InputArgs, Switch,
    TestInputArgs, TrainArgs, TrainingArgs,
};
use crate::manifest::RunManifest;
use crate::{CliError, OUT_DIR_ENV};

fn say(out: &mut dyn Write, text: impl std::fmt::Display) -> Result<(), CliError> {
    writeln!(out, "{text}").map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

fn dataset_err(path: &Path, e: DatasetError) -> CliError {
    match e {
        DatasetError::Io(io) => CliError::io(path, io),
        other => CliError::Validation(format!("{}: {other}", path.display())),
    }
}

fn nn_err(e: NnError) -> CliError {
    match e {
        NnError::Io(io) => CliError::Io {
            path: PathBuf::from("<model>"),
            message: io.to_string(),
        },
        other => CliError::invalid(other),
    }
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
        }
        _ => Ok(()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    ensure_parent(path)?;
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Loads a dataset from PLL-CSV or an IDX pair, returning it with the
/// files it was read from.
fn load_dataset(
    data: Option<&PathBuf>,
    idx: Option<(&PathBuf, &PathBuf)>,
    num_classes: usize,
    limit: Option<usize>,
) -> Result<(PllDataset, Vec<PathBuf>), CliError> {
    let (dataset, files) = match (data, idx) {
        (Some(path), None) => (
            load_pll_csv(path).map_err(|e| dataset_err(path, e))?,
            vec![path.clone()],
        ),
        (None, Some((images, labels))) => (
            PllDataset::load_idx_pair(images, labels, num_classes)
                .map_err(|e| dataset_err(images, e))?,
            vec![images.clone(), labels.clone()],
        ),
        _ => {
            return Err(CliError::Usage(
                "give either a PLL-CSV file or an IDX images/labels pair".into(),
            ))
        }
    };
    let dataset = match limit {
        Some(n) if n < dataset.len() => dataset.subset(&(0..n).collect::<Vec<_>>()),
        _ => dataset,
    };
    Ok((dataset, files))
}

fn load_input(input: &InputArgs) -> Result<(PllDataset, Vec<PathBuf>), CliError> {
    let idx = input.idx_images.as_ref().zip(input.idx_labels.as_ref());
    load_dataset(input.data.as_ref(), idx, input.num_classes, input.limit)
}

fn load_test(
    test: &TestInputArgs,
    num_classes: usize,
) -> Result<Option<(PllDataset, Vec<PathBuf>)>, CliError> {
    let idx = test
        .test_idx_images
        .as_ref()
        .zip(test.test_idx_labels.as_ref());
    if test.test.is_none() && idx.is_none() {
        return Ok(None);
    }
    load_dataset(test.test.as_ref(), idx, num_classes, test.test_limit).map(Some)
}

fn resolve_out_dir(arg: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = arg
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

fn parse_scores(path: &Path) -> Result<Array2<f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Validation(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(CliError::Validation(format!(
                "{}:{}: ragged score row",
                path.display(),
                i + 1
            )));
        }
        values.extend(row);
        rows += 1;
    }
    Array2::from_shape_vec((rows, width.unwrap_or(0)), values).map_err(CliError::invalid)
}

pub fn corrupt(args: &CorruptArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let conflict = |flag: &str| {
        Err(CliError::Usage(format!(
            "--{flag} does not apply to --mode {}",
            serde_json::to_value(args.mode).unwrap().as_str().unwrap()
        )))
    };
    let missing = |flag: &str| Err(CliError::Usage(format!("this mode needs --{flag}")));
    let mut inputs = Vec::new();
    let spec = match args.mode {
        CorruptMode::Fixed => {
            if args.q.is_some() {
                return conflict("q");
            }
            if args.scores.is_some() {
                return conflict("scores");
            }
            let Some(extra) = args.extra else {
                return missing("extra");
            };
            CorruptionSpec::FixedCount { extra }
        }
        CorruptMode::Bernoulli => {
            if args.extra.is_some() {
                return conflict("extra");
            }
            if args.scores.is_some() {
                return conflict("scores");
            }
            let Some(q) = args.q else { return missing("q") };
            CorruptionSpec::Bernoulli { q }
        }
        CorruptMode::Instance => {
            if args.extra.is_some() {
                return conflict("extra");
            }
            if args.q.is_some() {
                return conflict("q");
            }
            let Some(path) = &args.scores else {
                return missing("scores");
            };
            inputs.push(path.clone());
            CorruptionSpec::ScoreMatrix {
                scores: parse_scores(path)?,
            }
        }
    };

    let (dataset, files) = load_input(&args.input)?;
    inputs.splice(0..0, files);
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let manifest = RunManifest::new("corrupt", args, Some(args.seed), &input_refs)?;
    let manifest_path = sidecar(&args.output, "manifest.json");
    ensure_parent(&manifest_path)?;
    manifest.write(&manifest_path)?;

    if dataset.labels().is_none() {
        return Err(CliError::Validation(
            "corruption needs a true label on every row".into(),
        ));
    }
    let corrupted = dataset
        .corrupted(&spec, args.seed)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    save_pll_csv(&corrupted, &args.output).map_err(|e| dataset_err(&args.output, e))?;
    say(
        out,
        format!(
            "wrote {} rows ({}, avg |S| = {:.4}) to {}",
            corrupted.len(),
            corrupted.corruption(),
            corrupted.average_candidate_count(),
            args.output.display()
        ),
    )
}

/// `<path>.<suffix>` next to `path`.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    path.with_file_name(name)
}

fn train_config(t: &TrainingArgs, seed: u64) -> Result<TrainConfig, CliError> {
    let architecture = Architecture::parse(&t.arch, t.bn).map_err(nn_err)?;
    let config = TrainConfig {
        architecture,
        epochs: t.epochs,
        batch_size: t.batch,
        learning_rate: t.lr,
        momentum: t.momentum,
        weight_decay: t.wd,
        plateau_fraction: t.plateau,
        peak_lambda: match t.noise {
            Switch::On => t.peak_lambda,
            Switch::Off => 0.0,
        },
        seed,
        eval_every: t.eval_every,
        eval_train: t.eval_train,
        threads: t.threads,
    };
    config.validate().map_err(nn_err)?;
    if !(0.0..=1.0).contains(&config.plateau_fraction)
        || !(config.peak_lambda >= 0.0 && config.peak_lambda.is_finite())
    {
        return Err(CliError::Validation(
            "noise plateau must lie in [0, 1] and peak lambda must be non-negative".into(),
        ));
    }
    Ok(config)
}

fn check_fit(config: &TrainConfig, data: &PllDataset, what: &str) -> Result<(), CliError> {
    let arch = &config.architecture;
    if arch.num_classes() != data.num_classes() {
        return Err(CliError::Validation(format!(
            "architecture ends in {} classes but the {what} data has {}",
            arch.num_classes(),
            data.num_classes()
        )));
    }
    if arch.input_dim() != data.num_features() {
        return Err(CliError::Validation(format!(
            "architecture expects {} features but the {what} data has {}",
            arch.input_dim(),
            data.num_features()
        )));
    }
    Ok(())
}

struct Prepared {
    train: PllDataset,
    test: Option<PllDataset>,
    inputs: Vec<PathBuf>,
    out_dir: PathBuf,
}

fn prepare(t: &TrainingArgs, config: &TrainConfig) -> Result<Prepared, CliError> {
    let (train, mut inputs) = load_input(&t.input)?;
    check_fit(config, &train, "training")?;
    let test = match load_test(&t.test, train.num_classes())? {
        Some((test, files)) => {
            check_fit(config, &test, "test")?;
            if test.labels().is_none() {
                return Err(CliError::Validation(
                    "test data has rows without a true label".into(),
                ));
            }
            inputs.extend(files);
            Some(test)
        }
        None => None,
    };
    let out_dir = resolve_out_dir(&t.out_dir)?;
    Ok(Prepared {
        train,
        test,
        inputs,
        out_dir,
    })
}

pub fn train(args: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = train_config(&args.training, args.seed)?;
    let p = prepare(&args.training, &config)?;
    let mut resolved = args.clone();
    resolved.training.out_dir = Some(p.out_dir.clone());
    let refs: Vec<&Path> = p.inputs.iter().map(PathBuf::as_path).collect();
    RunManifest::new("train", &resolved, Some(args.seed), &refs)?
        .write(&p.out_dir.join("manifest.json"))?;

    let (model, history) = train_model(&p.train, p.test.as_ref(), &config).map_err(nn_err)?;

    let checkpoint = p.out_dir.join("checkpoint.json");
    save_checkpoint(&model, &checkpoint).map_err(nn_err)?;
    write_file(&p.out_dir.join("history.jsonl"), &history.to_jsonl())?;
    write_file(
        &p.out_dir.join("history.csv"),
        &history.to_wide_csv(model.num_classes()),
    )?;

    let last = history.records.last().expect("at least one record");
    say(
        out,
        format!(
            "trained {} epochs ({} iterations), final train loss {:.6}",
            config.epochs, last.iteration, last.train_loss
        ),
    )?;
    if let Some(acc) = last.train_accuracy {
        say(out, format!("train accuracy {:.4}", acc))?;
    }
    if let Some(acc) = last.test_accuracy {
        say(out, format!("test accuracy {:.4}", acc))?;
    }
    say(out, format!("outputs in {}", p.out_dir.display()))
}

#[derive(Serialize)]
struct EvalReport {
    samples: usize,
    accuracy: f64,
    confusion: Vec<Vec<u64>>,
    sensitivity: Vec<f64>,
    supported: Vec<bool>,
}

pub fn eval(args: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model = load_checkpoint(&args.checkpoint).map_err(|e| match e {
        NnError::Io(io) => CliError::io(&args.checkpoint, io),
        other => CliError::Validation(format!("{}: {other}", args.checkpoint.display())),
    })?;
    let (data, _) = load_input(&args.input)?;
    if data.labels().is_none() {
        return Err(CliError::Validation(
            "evaluation data has rows without a true label".into(),
        ));
    }
    if model.num_classes() != data.num_classes() || model.input_dim() != data.num_features() {
        return Err(CliError::Validation(format!(
            "checkpoint expects {} features and {} classes; data has {} and {}",
            model.input_dim(),
            model.num_classes(),
            data.num_features(),
            data.num_classes()
        )));
    }
    let e = evaluate(&model, &data, args.threads.max(1)).map_err(nn_err)?;
    let report = EvalReport {
        samples: data.len(),
        accuracy: e.accuracy,
        confusion: e.confusion.rows().to_vec(),
        sensitivity: e.sensitivity.clone(),
        supported: e.supported.clone(),
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Some(path) = &args.output {
        write_file(path, &format!("{json}\n"))?;
    }
    if args.json {
        return say(out, json);
    }
    say(out, format!("samples   {}", report.samples))?;
    say(out, format!("accuracy  {:.6}", report.accuracy))?;
    say(out, "confusion (rows = true, columns = predicted)")?;
    write!(out, "{}", e.confusion).map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
    say(out, "sensitivity")?;
    for (c, (s, ok)) in e.sensitivity.iter().zip(&e.supported).enumerate() {
        say(
            out,
            format!(
                "  {c:>3}  {s:.4}{}",
                if *ok { "" } else { "  (no samples)" }
            ),
        )?;
    }
    Ok(())
}

pub fn gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if !(2..=MAX_ENUMERATION_CLASSES).contains(&args.k) {
        return Err(CliError::Usage(format!(
            "--k must lie in 2..={MAX_ENUMERATION_CLASSES}"
        )));
    }
    let config = GradcheckConfig {
        k_min: 2,
        k_max: args.k,
        trials: args.trials,
        fd_cases: args.fd_cases,
        seed: args.seed,
        cost: if args.negative_control {
            CostVariant::Direct
        } else {
            CostVariant::default()
        },
        ..GradcheckConfig::default()
    };
    let report = run_all(&config);
    if args.json {
        say(
            out,
            serde_json::to_string_pretty(&report).expect("report serializes"),
        )?;
    } else {
        write!(out, "{report}").map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::OracleFailure)
    }
}

#[derive(Serialize)]
struct AblationArm {
    noise: &'static str,
    peak_lambda: f64,
    seeds: Vec<u64>,
    accuracies: Vec<f64>,
    summary: RunSummary,
}

pub fn ablate(args: &AblateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if args.seeds.is_empty() {
        return Err(CliError::Usage("--seeds needs at least one seed".into()));
    }
    let t = &args.training;
    let base = train_config(t, args.seeds[0])?;
    let p = prepare(t, &base)?;
    let Some(test) = p.test.as_ref() else {
        return Err(CliError::Usage("ablation needs a test set".into()));
    };
    let mut resolved = args.clone();
    resolved.training.out_dir = Some(p.out_dir.clone());
    let refs: Vec<&Path> = p.inputs.iter().map(PathBuf::as_path).collect();
    RunManifest::new("ablate", &resolved, None, &refs)?.write(&p.out_dir.join("manifest.json"))?;

    let peak_on = if t.noise == Switch::On {
        t.peak_lambda
    } else {
        1.0
    };
    let mut arms = Vec::new();
    for (noise, peak) in [("off", 0.0), ("on", peak_on)] {
        let mut accuracies = Vec::new();
        for &seed in &args.seeds {
            let config = TrainConfig {
                seed,
                peak_lambda: peak,
                ..base.clone()
            };
            let (model, _) = train_model(&p.train, None, &config).map_err(nn_err)?;
            accuracies.push(
                evaluate(&model, test, config.threads)
                    .map_err(nn_err)?
                    .accuracy,
            );
        }
        let summary = aggregate_runs(&accuracies).expect("nonempty");
        say(
            out,
            format!(
                "noise {noise:<3}  {summary}  over {} seeds {:?}",
                accuracies.len(),
                args.seeds
            ),
        )?;
        arms.push(AblationArm {
            noise,
            peak_lambda: peak,
            seeds: args.seeds.clone(),
            accuracies,
            summary,
        });
    }
    let json = serde_json::to_string_pretty(&arms).expect("report serializes");
    write_file(&p.out_dir.join("ablation.json"), &format!("{json}\n"))
}
