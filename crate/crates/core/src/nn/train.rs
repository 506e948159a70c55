use std::fmt::Write as _;

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{argmax_rows, sgd_step, Architecture, MlpModel, Mode, NnError, OptimizerState};
use crate::datasets::PllDataset;
use crate::gumbel::{perturb_logits_batch, NoiseSchedule, RandomSource};
use crate::loss::{batch_cost, CandidateSet, StableConstants};
use crate::metrics::{per_class_sensitivity, ConfusionMatrix};

/// Sub-stream ids of the run seed, one per consumer of randomness.
pub const STREAM_INIT: u64 = 0;
pub const STREAM_SHUFFLE: u64 = 1;
pub const STREAM_NOISE: u64 = 2;

/// Rows per forward pass during evaluation.
const EVAL_CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Fraction of the run at full noise before the linear decay.
    pub plateau_fraction: f64,
    /// Noise scale during the plateau; 0 disables the regularizer.
    pub peak_lambda: f64,
    pub seed: u64,
    /// Record every this many iterations; 0 records at the end of each epoch.
    /// The final iteration is always recorded.
    pub eval_every: usize,
    /// Also measure accuracy on the training data at each record.
    pub eval_train: bool,
    /// Worker threads for eval-mode inference. Training itself is serial.
    pub threads: usize,
}

impl TrainConfig {
    /// Batch size 256, learning rate 0.05, momentum 0.9, weight decay 1e-6,
    /// full noise for 80% of the run.
    pub fn new(architecture: Architecture, epochs: usize) -> Self {
        Self {
            architecture,
            epochs,
            batch_size: 256,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-6,
            plateau_fraction: NoiseSchedule::DEFAULT_PLATEAU,
            peak_lambda: NoiseSchedule::DEFAULT_PEAK,
            seed: 0,
            eval_every: 0,
            eval_train: false,
            threads: 1,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        Architecture::new(
            self.architecture.widths.clone(),
            self.architecture.batch_norm,
        )?;
        let bad = |what: &str| Err(NnError::InvalidConfig(what.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.architecture.batch_norm && self.batch_size < 2 {
            return bad("batch norm needs a batch size of at least 2");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be non-negative");
        }
        if self.threads == 0 {
            return bad("thread count must be positive");
        }
        Ok(())
    }
}

/// One evaluation point of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: u64,
    /// 1-based epoch the iteration belongs to.
    pub epoch: usize,
    /// Mean mini-batch cost since the previous record.
    pub train_loss: f64,
    /// Noise scale used at this iteration.
    pub lambda: f64,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub sensitivity: Option<Vec<f64>>,
    pub confusion: Option<ConfusionMatrix>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EvalRecord>,
    /// Mean mini-batch cost of each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainHistory {
    /// One JSON object per record, newline-terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Vec<EvalRecord>, serde_json::Error> {
        text.lines()
            .filter(|l| !l.is_empty())
            .map(serde_json::from_str)
            .collect()
    }

    /// Flat table for plotting: scalar columns followed by `sens_<c>` for
    /// every class. Missing values are empty cells.
    pub fn to_wide_csv(&self, num_classes: usize) -> String {
        let mut out =
            String::from("iteration,epoch,train_loss,lambda,train_accuracy,test_accuracy");
        for c in 0..num_classes {
            write!(out, ",sens_{c}").unwrap();
        }
        out.push('\n');
        let opt = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
        for r in &self.records {
            write!(
                out,
                "{},{},{:?},{:?},{},{}",
                r.iteration,
                r.epoch,
                r.train_loss,
                r.lambda,
                opt(r.train_accuracy),
                opt(r.test_accuracy)
            )
            .unwrap();
            for c in 0..num_classes {
                let v = r.sensitivity.as_ref().and_then(|s| s.get(c).copied());
                write!(out, ",{}", opt(v)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Accuracy, confusion matrix and per-class recall on a labeled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub sensitivity: Vec<f64>,
    pub supported: Vec<bool>,
}

/// Eval-mode argmax predictions. Rows are split into contiguous blocks
/// across `threads` workers; the result does not depend on the split.
pub fn predict(
    model: &MlpModel,
    x: ArrayView2<'_, f64>,
    threads: usize,
) -> Result<Vec<usize>, NnError> {
    if x.ncols() != model.input_dim() {
        return Err(NnError::ShapeMismatch {
            expected: format!("{} input features", model.input_dim()),
            found: x.ncols().to_string(),
        });
    }
    let serial = |x: ArrayView2<'_, f64>| -> Result<Vec<usize>, NnError> {
        let mut out = Vec::with_capacity(x.nrows());
        for chunk in x.axis_chunks_iter(Axis(0), EVAL_CHUNK) {
            out.extend(argmax_rows(model.logits(chunk)?.view()));
        }
        Ok(out)
    };
    let threads = threads.max(1);
    if threads == 1 || x.nrows() < 2 * threads {
        return serial(x);
    }
    let block = x.nrows().div_ceil(threads);
    let parts: Vec<Result<Vec<usize>, NnError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = x
            .axis_chunks_iter(Axis(0), block)
            .map(|part| scope.spawn(move || serial(part)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("inference worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(x.nrows());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn evaluate(
    model: &MlpModel,
    dataset: &PllDataset,
    threads: usize,
) -> Result<Evaluation, NnError> {
    if dataset.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    check_compatible(model.architecture(), dataset)?;
    let truths = dataset.labels().ok_or(NnError::MissingLabels)?;
    let preds = predict(model, dataset.features().view(), threads)?;
    let confusion = ConfusionMatrix::from_predictions(&preds, &truths, model.num_classes())?;
    let sens = per_class_sensitivity(&confusion);
    Ok(Evaluation {
        accuracy: confusion.accuracy().expect("nonempty"),
        confusion,
        sensitivity: sens.values,
        supported: sens.supported,
    })
}

fn check_compatible(arch: &Architecture, dataset: &PllDataset) -> Result<(), NnError> {
    if arch.num_classes() != dataset.num_classes() {
        return Err(NnError::ClassMismatch {
            model: arch.num_classes(),
            data: dataset.num_classes(),
        });
    }
    if arch.input_dim() != dataset.num_features() {
        return Err(NnError::ShapeMismatch {
            expected: format!("{} input features", arch.input_dim()),
            found: dataset.num_features().to_string(),
        });
    }
    Ok(())
}

/// Mini-batch boundaries for `n` rows. The last short batch is kept; with
/// batch norm a trailing single row is merged into the batch before it,
/// since a one-row batch has no variance.
fn batch_bounds(n: usize, batch_size: usize, batch_norm: bool) -> Vec<(usize, usize)> {
    let mut bounds: Vec<(usize, usize)> = (0..n)
        .step_by(batch_size)
        .map(|start| (start, (start + batch_size).min(n)))
        .collect();
    if batch_norm && bounds.len() > 1 {
        let (start, end) = *bounds.last().unwrap();
        if end - start == 1 {
            bounds.pop();
            bounds.last_mut().unwrap().1 = end;
        }
    }
    bounds
}

/// Trains a fresh model on `train`, recording metrics on `test` (when
/// given) along the way.
///
/// Every epoch reshuffles the rows, then each mini-batch goes through a
/// train-mode forward pass, Gumbel-difference noise on the logits with the
/// scheduled λ, the partial-label cost and its gradient, backpropagation
/// and one SGD step. With one thread the run is a pure function of
/// `config`.
pub fn train(
    train: &PllDataset,
    test: Option<&PllDataset>,
    config: &TrainConfig,
) -> Result<(MlpModel, TrainHistory), NnError> {
    config.validate()?;
    if train.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let arch = &config.architecture;
    check_compatible(arch, train)?;
    if let Some(test) = test {
        check_compatible(arch, test)?;
        if test.is_empty() {
            return Err(NnError::EmptyDataset);
        }
        if test.labels().is_none() {
            return Err(NnError::MissingLabels);
        }
    }
    if config.eval_train && train.labels().is_none() {
        return Err(NnError::MissingLabels);
    }
    if arch.batch_norm && train.len() < 2 {
        return Err(NnError::BatchTooSmall);
    }

    let mut model = MlpModel::init(
        arch,
        &mut RandomSource::with_stream(config.seed, STREAM_INIT),
    )?;
    let mut opt = OptimizerState::new(
        &model,
        config.learning_rate,
        config.momentum,
        config.weight_decay,
    );
    let mut shuffle_rng = RandomSource::with_stream(config.seed, STREAM_SHUFFLE);
    let mut noise_rng = RandomSource::with_stream(config.seed, STREAM_NOISE);
    let consts = StableConstants::default();

    let n = train.len();
    let bounds = batch_bounds(n, config.batch_size, arch.batch_norm);
    let total = (config.epochs * bounds.len()) as u64;
    let schedule = NoiseSchedule::new(config.plateau_fraction, config.peak_lambda, total)?;

    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..n).collect();
    let mut step: u64 = 0;
    let (mut window_loss, mut window_batches) = (0.0, 0usize);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for &(start, end) in &bounds {
            let idx = &order[start..end];
            let x = train.features().select(Axis(0), idx);
            let sets: Vec<CandidateSet> = idx
                .iter()
                .map(|&i| train.candidate_sets()[i].clone())
                .collect();

            let (mut logits, cache) = model.forward(x.view(), Mode::Train)?;
            let lambda = schedule.lambda_at(step)?;
            perturb_logits_batch(&mut logits, lambda, &mut noise_rng)?;
            let cost = batch_cost(logits.view(), &sets, &consts)?;
            let grads = model.backward(&cache, cost.grad.view())?;
            sgd_step(&mut model, &grads, &mut opt)?;

            step += 1;
            epoch_loss += cost.mean_cost;
            window_loss += cost.mean_cost;
            window_batches += 1;

            let due = if config.eval_every == 0 {
                end == n
            } else {
                step % config.eval_every as u64 == 0
            };
            if due || step == total {
                history.records.push(record(
                    &model,
                    train,
                    test,
                    config,
                    step,
                    epoch,
                    window_loss / window_batches as f64,
                    lambda,
                )?);
                window_loss = 0.0;
                window_batches = 0;
            }
        }
        history.epoch_losses.push(epoch_loss / bounds.len() as f64);
    }
    Ok((model, history))
}

#[allow(clippy::too_many_arguments)]
fn record(
    model: &MlpModel,
    train: &PllDataset,
    test: Option<&PllDataset>,
    config: &TrainConfig,
    iteration: u64,
    epoch: usize,
    train_loss: f64,
    lambda: f64,
) -> Result<EvalRecord, NnError> {
    let train_accuracy = if config.eval_train {
        Some(evaluate(model, train, config.threads)?.accuracy)
    } else {
        None
    };
    let test_eval = test
        .map(|t| evaluate(model, t, config.threads))
        .transpose()?;
    Ok(EvalRecord {
        iteration,
        epoch,
        train_loss,
        lambda,
        train_accuracy,
        test_accuracy: test_eval.as_ref().map(|e| e.accuracy),
        sensitivity: test_eval.as_ref().map(|e| e.sensitivity.clone()),
        confusion: test_eval.map(|e| e.confusion),
    })
}
