//! Training loop, metrics and leave-one-subject-out cross-validation.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::Task;
use crate::models::{ArchDescriptor, ModelVariant, NetworkModel};
use crate::nn::sgd_step;
use crate::rng::{derive_seed, Xoshiro256StarStar};
use crate::spectrogram::write_pgm16;

/// One network input with its class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub participant_id: String,
    pub session_id: String,
    pub origin_col: usize,
    pub class: usize,
    pub input: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub input_side: usize,
    pub examples: Vec<LabeledExample>,
}

impl Dataset {
    pub fn participants(&self) -> Vec<String> {
        self.examples
            .iter()
            .map(|e| e.participant_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.task.n_classes()];
        for e in &self.examples {
            counts[e.class] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.5,
            batch_size: 50,
            epochs: 300,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: NetworkModel,
    /// Mean per-example loss of each epoch, measured before each batch update.
    pub epoch_losses: Vec<f64>,
}

fn one_hot(class: usize, n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n];
    t[class] = 1.0;
    t
}

/// Mini-batch SGD with a seeded Fisher-Yates shuffle every epoch. The last
/// partial batch is applied at its actual size.
pub fn train_model(arch: &ArchDescriptor, train: &[&LabeledExample], config: &TrainConfig) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Eval("empty training set".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let n_classes = arch.n_classes;
    if let Some(e) = train.iter().find(|e| e.class >= n_classes) {
        return Err(Error::Eval(format!("class {} out of range for {n_classes} classes", e.class)));
    }
    let present: BTreeSet<usize> = train.iter().map(|e| e.class).collect();
    if present.len() < n_classes {
        log::warn!("training set covers only classes {present:?} of {n_classes}");
    }

    let mut model = NetworkModel::build(*arch, config.seed)?;
    let targets: Vec<Vec<f64>> = (0..n_classes).map(|c| one_hot(c, n_classes)).collect();
    let mut rng = Xoshiro256StarStar::seed_from_u64(derive_seed(config.seed, 1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grads = model.network.zero_gradients();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.zero();
            for &i in batch {
                let e = train[i];
                total += model
                    .network
                    .accumulate_gradients(&e.input, &targets[e.class], &mut grads)?;
            }
            sgd_step(&mut model.network, &grads, config.lr, batch.len())?;
        }
        epoch_losses.push(total / train.len() as f64);
    }
    Ok(TrainOutcome { model, epoch_losses })
}

/// Index of the largest output; the first wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: u64,
    pub accuracy: f64,
    /// Unweighted mean F1 over the classes that occur in the actual labels.
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Rows are actual classes, columns predicted classes.
    pub confusion: Vec<Vec<u64>>,
}

pub fn metrics_from_confusion(confusion: &[Vec<u64>]) -> Result<Metrics> {
    let k = confusion.len();
    if k == 0 || confusion.iter().any(|r| r.len() != k) {
        return Err(Error::Eval("confusion matrix must be square and non-empty".into()));
    }
    let n: u64 = confusion.iter().flatten().sum();
    if n == 0 {
        return Err(Error::Eval("empty test set".into()));
    }
    let trace: u64 = (0..k).map(|i| confusion[i][i]).sum();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = confusion[c][c] as f64;
            let support: u64 = confusion[c].iter().sum();
            let predicted: u64 = confusion.iter().map(|r| r[c]).sum();
            let fn_ = support as f64 - tp;
            let fp = predicted as f64 - tp;
            let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
            ClassMetrics {
                support,
                precision: ratio(tp, predicted as f64),
                recall: ratio(tp, support as f64),
                f1: ratio(2.0 * tp, 2.0 * tp + fp + fn_),
            }
        })
        .collect();
    let present: Vec<&ClassMetrics> = per_class.iter().filter(|c| c.support > 0).collect();
    let macro_f1 = present.iter().map(|c| c.f1).sum::<f64>() / present.len() as f64;
    Ok(Metrics {
        n,
        accuracy: trace as f64 / n as f64,
        macro_f1,
        per_class,
        confusion: confusion.to_vec(),
    })
}

/// Predicts every example by argmax and scores the predictions.
pub fn evaluate(model: &NetworkModel, test: &[&LabeledExample]) -> Result<Metrics> {
    if test.is_empty() {
        return Err(Error::Eval("empty test set".into()));
    }
    let k = model.arch.n_classes;
    let mut confusion = vec![vec![0u64; k]; k];
    for e in test {
        if e.class >= k {
            return Err(Error::Eval(format!("class {} out of range", e.class)));
        }
        let predicted = argmax(&model.network.forward(&e.input)?);
        confusion[e.class][predicted] += 1;
    }
    metrics_from_confusion(&confusion)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub fold_id: usize,
    pub train_participants: Vec<String>,
    pub test_participant: String,
}

/// One fold per participant, ordered by participant id.
pub fn make_folds(participants: &[String]) -> Result<Vec<FoldPlan>> {
    let ids: BTreeSet<&String> = participants.iter().collect();
    if ids.len() < 2 {
        return Err(Error::Eval(format!(
            "leave-one-subject-out needs at least 2 participants, got {}",
            ids.len()
        )));
    }
    Ok(ids
        .iter()
        .enumerate()
        .map(|(fold_id, &test)| FoldPlan {
            fold_id,
            train_participants: ids.iter().filter(|&&p| p != test).map(|p| (*p).clone()).collect(),
            test_participant: test.clone(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold_id: usize,
    pub test_participant: String,
    pub train_participants: Vec<String>,
    pub seed: u64,
    pub n_train: usize,
    pub final_train_loss: Option<f64>,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: ModelVariant,
    pub task: Task,
    pub config: TrainConfig,
    pub folds: Vec<FoldReport>,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
    pub mean_macro_f1: f64,
    pub sd_macro_f1: f64,
    pub pooled_confusion: Vec<Vec<u64>>,
}

#[derive(Debug, Clone)]
pub struct LosoOutcome {
    pub report: EvalReport,
    /// Trained model of each fold, in fold order.
    pub models: Vec<NetworkModel>,
}

/// Arithmetic mean and sample (n - 1) standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn run_loso(dataset: &Dataset, variant: ModelVariant, config: &TrainConfig, parallel: bool) -> Result<LosoOutcome> {
    let arch = variant.arch(dataset.task);
    if dataset.input_side != arch.input_side {
        return Err(Error::Shape(format!(
            "{variant} expects {0}x{0} inputs, dataset holds {1}x{1}",
            arch.input_side, dataset.input_side
        )));
    }
    let folds = make_folds(&dataset.participants())?;

    let run_fold = |plan: &FoldPlan| -> Result<(FoldReport, NetworkModel)> {
        let train: Vec<&LabeledExample> = dataset
            .examples
            .iter()
            .filter(|e| e.participant_id != plan.test_participant)
            .collect();
        let test: Vec<&LabeledExample> = dataset
            .examples
            .iter()
            .filter(|e| e.participant_id == plan.test_participant)
            .collect();
        let leaked = train.iter().any(|e| e.participant_id == plan.test_participant);
        assert!(!leaked, "fold {} trains on its test participant", plan.fold_id);

        let fold_config = TrainConfig {
            seed: derive_seed(config.seed, plan.fold_id as u64),
            ..*config
        };
        let outcome = train_model(&arch, &train, &fold_config)?;
        let metrics = evaluate(&outcome.model, &test)?;
        log::info!(
            "fold {} ({}): accuracy {:.4}, macro-F1 {:.4}",
            plan.fold_id,
            plan.test_participant,
            metrics.accuracy,
            metrics.macro_f1
        );
        Ok((
            FoldReport {
                fold_id: plan.fold_id,
                test_participant: plan.test_participant.clone(),
                train_participants: plan.train_participants.clone(),
                seed: fold_config.seed,
                n_train: train.len(),
                final_train_loss: outcome.epoch_losses.last().copied(),
                metrics,
            },
            outcome.model,
        ))
    };

    let results: Vec<Result<(FoldReport, NetworkModel)>> = if parallel {
        folds.par_iter().map(run_fold).collect()
    } else {
        folds.iter().map(run_fold).collect()
    };
    let (fold_reports, models): (Vec<_>, Vec<_>) =
        results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();

    let accs: Vec<f64> = fold_reports.iter().map(|f| f.metrics.accuracy).collect();
    let f1s: Vec<f64> = fold_reports.iter().map(|f| f.metrics.macro_f1).collect();
    let (mean_accuracy, sd_accuracy) = mean_sd(&accs);
    let (mean_macro_f1, sd_macro_f1) = mean_sd(&f1s);
    let k = dataset.task.n_classes();
    let mut pooled = vec![vec![0u64; k]; k];
    for f in &fold_reports {
        for (r, row) in f.metrics.confusion.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                pooled[r][c] += v;
            }
        }
    }
    Ok(LosoOutcome {
        report: EvalReport {
            model: variant,
            task: dataset.task,
            config: *config,
            folds: fold_reports,
            mean_accuracy,
            sd_accuracy,
            mean_macro_f1,
            sd_macro_f1,
            pooled_confusion: pooled,
        },
        models,
    })
}

fn confusion_csv(task: Task, confusion: &[Vec<u64>]) -> String {
    let names = task.class_names();
    let mut out = String::from("actual\\predicted");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (name, row) in names.iter().zip(confusion) {
        out.push_str(name);
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

impl EvalReport {
    pub fn folds_csv(&self) -> String {
        let mut out = String::from("fold_id,test_participant,accuracy,macro_f1\n");
        for f in &self.folds {
            out.push_str(&format!(
                "{},{},{},{}\n",
                f.fold_id, f.test_participant, f.metrics.accuracy, f.metrics.macro_f1
            ));
        }
        out
    }

    /// Writes `report.json`, `folds.csv`, one confusion CSV per fold and the
    /// pooled confusion CSV; `confusion.pgm` when `pgm` is set.
    pub fn write_dir(&self, dir: &Path, pgm: bool) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(path, e))
        };
        write("report.json", serde_json::to_string_pretty(self)? + "\n")?;
        write("folds.csv", self.folds_csv())?;
        for f in &self.folds {
            write(
                &format!("confusion_fold_{:02}.csv", f.fold_id),
                confusion_csv(self.task, &f.metrics.confusion),
            )?;
        }
        write("confusion_pooled.csv", confusion_csv(self.task, &self.pooled_confusion))?;
        if pgm {
            self.render_pooled_pgm(&dir.join("confusion.pgm"))?;
        }
        Ok(())
    }

    /// Row-normalized pooled confusion matrix, 16 pixels per cell; darker is
    /// more predictions.
    pub fn render_pooled_pgm(&self, path: &Path) -> Result<()> {
        const CELL: usize = 16;
        let k = self.pooled_confusion.len();
        let side = k * CELL;
        let mut words = vec![0u16; side * side];
        for (r, row) in self.pooled_confusion.iter().enumerate() {
            let total: u64 = row.iter().sum();
            for (c, &v) in row.iter().enumerate() {
                let frac = if total > 0 { v as f64 / total as f64 } else { 0.0 };
                let word = (65535.0 * (1.0 - frac)).round() as u16;
                for y in r * CELL..(r + 1) * CELL {
                    for x in c * CELL..(c + 1) * CELL {
                        words[y * side + x] = word;
                    }
                }
            }
        }
        write_pgm16(path, side, side, &words)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Xoshiro256StarStar;

    #[test]
    fn fold_plans() {
        let ids: Vec<String> = (1..=8).map(|i| format!("P{i:02}")).collect();
        let folds = make_folds(&ids).unwrap();
        assert_eq!(folds.len(), 8);
        for f in &folds {
            assert!(!f.train_participants.contains(&f.test_participant));
            assert_eq!(f.train_participants.len(), 7);
        }
        let two = make_folds(&["B".into(), "A".into(), "A".into()]).unwrap();
        assert_eq!(two.len(), 2);
        assert_eq!(two[0].test_participant, "A");
        assert_eq!(two[0].train_participants, vec!["B".to_string()]);
        assert!(make_folds(&["A".into(), "A".into()]).is_err());
    }

    #[test]
    fn confusion_metrics_hand_case() {
        let m = metrics_from_confusion(&[vec![8, 2], vec![3, 7]]).unwrap();
        assert!((m.accuracy - 0.75).abs() < 1e-15);
        assert!((m.per_class[0].f1 - 16.0 / 21.0).abs() < 1e-15);
        assert!((m.per_class[1].f1 - 14.0 / 19.0).abs() < 1e-15);
        assert!((m.macro_f1 - (16.0 / 21.0 + 14.0 / 19.0) / 2.0).abs() < 1e-15);
        assert!((m.per_class[0].f1 - 0.7619).abs() < 1e-4);
        assert!((m.macro_f1 - 0.7494).abs() < 1e-4);
    }

    #[test]
    fn perfect_and_constant_predictions() {
        let m = metrics_from_confusion(&[vec![5, 0, 0], vec![0, 4, 0], vec![0, 0, 6]]).unwrap();
        assert_eq!((m.accuracy, m.macro_f1), (1.0, 1.0));
        let m = metrics_from_confusion(&[vec![10, 0], vec![10, 0]]).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.per_class[1].precision, 0.0);
        assert!(metrics_from_confusion(&[vec![0, 0], vec![0, 0]]).is_err());
    }

    #[test]
    fn absent_class_excluded_from_macro_f1() {
        let m = metrics_from_confusion(&[vec![6, 2, 0], vec![0, 0, 0], vec![1, 1, 4]]).unwrap();
        let f0 = 12.0 / (12.0 + 1.0 + 2.0);
        let f2 = 8.0 / (8.0 + 0.0 + 2.0);
        assert!((m.macro_f1 - (f0 + f2) / 2.0).abs() < 1e-15);
        let row_sums: Vec<u64> = m.confusion.iter().map(|r| r.iter().sum()).collect();
        assert_eq!(row_sums, vec![8, 0, 6]);
    }

    #[test]
    fn sample_standard_deviation() {
        let (mean, sd) = mean_sd(&[0.5, 0.75, 1.0]);
        assert!((mean - 0.75).abs() < 1e-15);
        // sqrt(((0.25)^2 + 0 + (0.25)^2) / 2) = 0.25
        assert!((sd - 0.25).abs() < 1e-15);
    }

    fn toy_dataset(participants: usize, per: usize, seed: u64) -> Dataset {
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        let mut examples = Vec::new();
        for p in 0..participants {
            for i in 0..per {
                let class = i % 2;
                // Class 1 puts its mass on the left half of the image.
                let input = (0..784)
                    .map(|px| {
                        let left = (px % 28) < 14;
                        let base = if (class == 1) == left { 0.8 } else { 0.2 };
                        (base + 0.1 * rng.normal()).clamp(0.0, 1.0)
                    })
                    .collect();
                examples.push(LabeledExample {
                    participant_id: format!("P{p}"),
                    session_id: "S1".into(),
                    origin_col: i,
                    class,
                    input,
                });
            }
        }
        Dataset { task: Task::Binary, input_side: 28, examples }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let data = toy_dataset(2, 4, 1);
        let refs: Vec<&LabeledExample> = data.examples.iter().collect();
        let cfg = TrainConfig { epochs: 0, seed: 3, ..TrainConfig::default() };
        let arch = ModelVariant::Cnn.arch(Task::Binary);
        let out = train_model(&arch, &refs, &cfg).unwrap();
        assert_eq!(out.model, NetworkModel::build(arch, 3).unwrap());
        assert!(out.epoch_losses.is_empty());
        assert!(train_model(&arch, &[], &cfg).is_err());
    }

    #[test]
    fn separable_training_converges_and_is_deterministic() {
        let data = toy_dataset(2, 30, 2);
        let refs: Vec<&LabeledExample> = data.examples.iter().collect();
        let cfg = TrainConfig { epochs: 40, batch_size: 10, seed: 4, ..TrainConfig::default() };
        let arch = ModelVariant::Nn1.arch(Task::Binary);
        let a = train_model(&arch, &refs, &cfg).unwrap();
        let b = train_model(&arch, &refs, &cfg).unwrap();
        assert_eq!(a.model.to_json().unwrap(), b.model.to_json().unwrap());
        assert_eq!(a.epoch_losses.len(), 40);
        assert!(*a.epoch_losses.last().unwrap() < 0.05);
        let m = evaluate(&a.model, &refs).unwrap();
        assert_eq!(m.accuracy, 1.0);
    }

    #[test]
    fn loso_aggregates_and_parallel_matches_sequential() {
        let data = toy_dataset(3, 10, 5);
        let cfg = TrainConfig { epochs: 5, batch_size: 7, seed: 9, ..TrainConfig::default() };
        let seq = run_loso(&data, ModelVariant::Nn1, &cfg, false).unwrap();
        let par = run_loso(&data, ModelVariant::Nn1, &cfg, true).unwrap();
        assert_eq!(seq.report, par.report);
        assert_eq!(seq.models, par.models);

        let r = &seq.report;
        assert_eq!(r.folds.len(), 3);
        let accs: Vec<f64> = r.folds.iter().map(|f| f.metrics.accuracy).collect();
        assert!((r.mean_accuracy - accs.iter().sum::<f64>() / 3.0).abs() < 1e-15);
        let pooled: u64 = r.pooled_confusion.iter().flatten().sum();
        assert_eq!(pooled, 30);
        for f in &r.folds {
            let m = &f.metrics;
            let trace: u64 = (0..2).map(|i| m.confusion[i][i]).sum();
            assert_eq!(m.accuracy, trace as f64 / m.n as f64);
        }
        assert!(run_loso(&data, ModelVariant::Nn2, &cfg, false).is_err());
    }

    #[test]
    fn report_files() {
        let data = toy_dataset(2, 6, 6);
        let cfg = TrainConfig { epochs: 1, seed: 1, ..TrainConfig::default() };
        let out = run_loso(&data, ModelVariant::Nn1, &cfg, false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        out.report.write_dir(dir.path(), true).unwrap();
        let folds = std::fs::read_to_string(dir.path().join("folds.csv")).unwrap();
        assert_eq!(folds.lines().count(), 3);
        assert!(folds.starts_with("fold_id,test_participant,accuracy,macro_f1\n0,P0,"));
        let pooled = std::fs::read_to_string(dir.path().join("confusion_pooled.csv")).unwrap();
        assert!(pooled.starts_with("actual\\predicted,no_stress,stress\n"));
        assert!(dir.path().join("confusion_fold_01.csv").exists());
        let pgm = std::fs::read(dir.path().join("confusion.pgm")).unwrap();
        assert!(pgm.starts_with(b"P5\n32 32\n65535\n"));
        let back: EvalReport =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(back, out.report);
    }
}
