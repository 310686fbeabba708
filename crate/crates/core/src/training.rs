//! Splitting, the training loop, evaluation metrics and the ablation harness.

use std::collections::{BTreeMap, HashMap};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{FeatureMode, Model, ModelConfig, ModelInput};
use crate::pipeline::{fit_norm_stats, model_inputs, PreparedPoint};
use crate::pose::{base_id, Dataset};
use crate::tensor::{AdamConfig, AdamState, Graph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    #[default]
    Random,
    Subject,
    Kfold,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SplitMode::Random),
            "subject" | "subject-independent" => Ok(SplitMode::Subject),
            "kfold" => Ok(SplitMode::Kfold),
            _ => Err(Error::invalid(format!("unknown split mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub mode: SplitMode,
    /// Train, validation and test fractions.
    pub ratios: [f64; 3],
    pub k: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            mode: SplitMode::Random,
            ratios: [0.8, 0.1, 0.1],
            k: 10,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ratios.iter().any(|r| !(*r >= 0.0)) || (self.ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split ratios {:?} must be non-negative and sum to 1", self.ratios)));
        }
        if self.k < 2 {
            return Err(Error::invalid("k must be at least 2"));
        }
        Ok(())
    }
}

/// Index sets into a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Split stored by sequence id, as written next to checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub spec: SplitSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    pub fn to_file(&self, ds: &Dataset, spec: &SplitSpec, fold: Option<usize>) -> SplitFile {
        let ids = |idx: &[usize]| idx.iter().map(|&i| ds.points[i].sequence.id.clone()).collect();
        SplitFile {
            spec: spec.clone(),
            fold,
            train: ids(&self.train),
            val: ids(&self.val),
            test: ids(&self.test),
        }
    }

    pub fn from_file(ds: &Dataset, file: &SplitFile) -> Result<Split> {
        let index: HashMap<&str, usize> = ds
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (p.sequence.id.as_str(), i))
            .collect();
        let lookup = |ids: &[String]| {
            ids.iter()
                .map(|id| {
                    index
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| Error::Split(format!("split file names unknown id `{id}`")))
                })
                .collect::<Result<Vec<_>>>()
        };
        Ok(Split {
            train: lookup(&file.train)?,
            val: lookup(&file.val)?,
            test: lookup(&file.test)?,
        })
    }
}

/// Groups of point indices that must stay together: all variants of one
/// source walk, in first-appearance order.
fn groups_by<'a>(keys: impl Iterator<Item = &'a str>) -> Vec<Vec<usize>> {
    let mut order: Vec<Vec<usize>> = Vec::new();
    let mut pos: HashMap<&str, usize> = HashMap::new();
    for (i, k) in keys.enumerate() {
        let g = *pos.entry(k).or_insert_with(|| {
            order.push(Vec::new());
            order.len() - 1
        });
        order[g].push(i);
    }
    order
}

fn targets(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let train = (ratios[0] * n as f64).round() as usize;
    let val = ((ratios[1] * n as f64).round() as usize).min(n - train.min(n));
    [train.min(n), val, n - train.min(n) - val]
}

fn check_nonempty(split: &Split) -> Result<()> {
    for (name, part) in [("train", &split.train), ("validation", &split.val), ("test", &split.test)] {
        if part.is_empty() {
            return Err(Error::Split(format!("{name} partition is empty")));
        }
    }
    Ok(())
}

/// Train/validation/test split. Random mode shuffles source walks and cuts
/// at the ratios; subject mode assigns whole subjects, largest first, to
/// whichever partition is furthest below its target point count.
pub fn split_dataset(ds: &Dataset, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    if ds.is_empty() {
        return Err(Error::Split("dataset is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = ds.len();
    let target = targets(n, spec.ratios);
    let mut parts: [Vec<usize>; 3] = Default::default();
    match spec.mode {
        SplitMode::Random => {
            let mut groups = groups_by(ds.points.iter().map(|p| base_id(&p.sequence.id)));
            groups.shuffle(&mut rng);
            for g in groups {
                let slot = (0..3).find(|&s| parts[s].len() < target[s]).unwrap_or(2);
                parts[slot].extend(g);
            }
        }
        SplitMode::Subject => {
            let mut groups = groups_by(ds.points.iter().map(|p| p.sequence.subject_id.as_str()));
            if groups.len() < 3 {
                return Err(Error::Split(format!(
                    "subject-independent split needs at least 3 subjects, found {}",
                    groups.len()
                )));
            }
            groups.shuffle(&mut rng);
            groups.sort_by_key(|g| std::cmp::Reverse(g.len()));
            for g in groups {
                let slot = (0..3)
                    .max_by_key(|&s| (target[s] as i64 - parts[s].len() as i64, std::cmp::Reverse(s)))
                    .unwrap();
                parts[slot].extend(g);
            }
        }
        SplitMode::Kfold => {
            return Err(Error::invalid("k-fold splits are produced by kfold_splits"));
        }
    }
    let [mut train, mut val, mut test] = parts;
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    let split = Split { train, val, test };
    check_nonempty(&split)?;
    Ok(split)
}

/// `k` folds over source walks, balanced by point count. Fold `f` tests on
/// fold `f`, validates on fold `f + 1 (mod k)` and trains on the rest.
pub fn kfold_splits(ds: &Dataset, k: usize, seed: u64) -> Result<Vec<Split>> {
    if k < 2 {
        return Err(Error::invalid("k must be at least 2"));
    }
    let mut groups = groups_by(ds.points.iter().map(|p| base_id(&p.sequence.id)));
    if groups.len() < k {
        return Err(Error::Split(format!("{} source walks cannot fill {k} folds", groups.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups.shuffle(&mut rng);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for g in groups {
        let f = (0..k).min_by_key(|&f| (folds[f].len(), f)).unwrap();
        folds[f].extend(g);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    let splits = (0..k)
        .map(|f| {
            let v = (f + 1) % k;
            let mut train: Vec<usize> = (0..k).filter(|&i| i != f && i != v).flat_map(|i| folds[i].clone()).collect();
            train.sort_unstable();
            Split {
                train,
                val: folds[v].clone(),
                test: folds[f].clone(),
            }
        })
        .collect::<Vec<_>>();
    for s in &splits {
        check_nonempty(s)?;
    }
    Ok(splits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    /// Epochs at which the learning rate halves; `None` means
    /// `floor(n/2), floor(3n/4), floor(7n/8)`, with zeros and repeats
    /// dropped for very short runs.
    pub halving_epochs: Option<Vec<usize>>,
    /// Seed for batch shuffling.
    pub seed: u64,
    pub eval_batch_size: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 8,
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 1e-4,
            halving_epochs: None,
            seed: 0,
            eval_batch_size: 64,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn halvings(&self) -> Vec<usize> {
        self.halving_epochs.clone().unwrap_or_else(|| {
            let n = self.epochs;
            let mut h = vec![n / 2, 3 * n / 4, 7 * n / 8];
            h.retain(|&e| e > 0);
            h.dedup();
            h
        })
    }

    /// Learning rate for 1-based `epoch`: halved once for every halving
    /// epoch already completed.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.halvings().iter().filter(|&&h| h < epoch).count();
        self.lr * 0.5f64.powi(drops as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::invalid("epochs and batch sizes must be positive"));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("lr must be positive and weight_decay non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        let h = self.halvings();
        if h.windows(2).any(|w| w[0] >= w[1]) || h.iter().any(|&e| e == 0 || e >= self.epochs) {
            return Err(Error::invalid(format!(
                "halving epochs {h:?} must be strictly increasing, positive and below {}",
                self.epochs
            )));
        }
        self.model.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// `None` when there is no validation split.
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// Epoch at which validation accuracy first reached its maximum; the last
/// epoch when nothing was validated.
pub fn best_epoch(history: &[EpochRecord]) -> usize {
    let mut best: Option<(f64, usize)> = None;
    for r in history {
        if let Some(a) = r.val_accuracy {
            if best.is_none_or(|(b, _)| a > b) {
                best = Some((a, r.epoch));
            }
        }
    }
    best.map_or(history.len(), |(_, e)| e)
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,train_loss,val_accuracy\n");
    for r in history {
        let va = r.val_accuracy.map_or(String::new(), |a| a.to_string());
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.lr, r.train_loss, va));
    }
    out
}

/// Trains on `train`, selecting the parameters of the epoch with the best
/// accuracy on `val` (earliest on ties). Min-max statistics are fitted on
/// the training points.
pub fn train(train: &[PreparedPoint], val: &[PreparedPoint], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let mut model = Model::new(cfg.model.clone())?;
    model.norm_stats = Some(fit_norm_stats(train)?);
    let train_inputs = model_inputs(&model, train)?;
    let train_labels: Vec<usize> = train.iter().map(|p| usize::from(p.label)).collect();
    let val_inputs = model_inputs(&model, val)?;
    let val_labels: Vec<u8> = val.iter().map(|p| p.label).collect();

    let adam_cfg = AdamConfig {
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(model.params(), adam_cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Vec<crate::tensor::Tensor>)> = None;

    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let inputs: Vec<ModelInput> = chunk.iter().map(|&i| train_inputs[i].clone()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train_labels[i]).collect();
            let mut g = Graph::new();
            let vars = model.bind(&mut g);
            let trace = model.forward(&mut g, &vars, &inputs)?;
            let (loss, _) = g.softmax_cross_entropy(trace.logits, &labels)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: bi + 1,
                    loss: value,
                });
            }
            g.backward(loss)?;
            let grads: Vec<Vec<f64>> = vars
                .iter()
                .zip(model.params())
                .map(|(&v, p)| g.grad(v).map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec))
                .collect();
            adam.step(model.params_mut(), &grads, lr, cfg.weight_decay)?;
            loss_sum += value * chunk.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_accuracy = if val.is_empty() {
            None
        } else {
            let preds = predict_inputs(&model, &val_inputs, cfg.eval_batch_size)?;
            Some(Metrics::from_predictions(&val_labels, &preds).accuracy)
        };
        if let Some(a) = val_accuracy {
            if best.as_ref().is_none_or(|(b, _)| a > *b) {
                best = Some((a, model.params().to_vec()));
            }
        }
        debug!("epoch {epoch}: lr {lr}, train loss {train_loss:.6}, val acc {val_accuracy:?}");
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_accuracy,
        });
    }
    let best_epoch = best_epoch(&history);
    if let Some((acc, params)) = best {
        model.params_mut().clone_from_slice(&params);
        info!("kept epoch {best_epoch} (validation accuracy {acc:.4})");
    }
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}

/// Predictions in fixed-size chunks so results do not depend on how the
/// caller batches.
pub fn predict_inputs(model: &Model, inputs: &[ModelInput], chunk: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(inputs.len());
    for c in inputs.chunks(chunk.max(1)) {
        out.extend(model.predict_batch(c)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub accuracy: f64,
    /// Per class; 0 when the class is never predicted.
    pub precision: [f64; 2],
    /// Per class; 0 when the class never occurs.
    pub recall: [f64; 2],
    /// `confusion[truth][predicted]`.
    pub confusion: [[usize; 2]; 2],
}

impl Metrics {
    pub fn from_predictions(truth: &[u8], predicted: &[u8]) -> Metrics {
        assert_eq!(truth.len(), predicted.len());
        let mut confusion = [[0usize; 2]; 2];
        for (&t, &p) in truth.iter().zip(predicted) {
            confusion[t as usize][p as usize] += 1;
        }
        let n = truth.len();
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let correct = confusion[0][0] + confusion[1][1];
        Metrics {
            n,
            accuracy: ratio(correct, n),
            precision: [0, 1].map(|c| ratio(confusion[c][c], confusion[0][c] + confusion[1][c])),
            recall: [0, 1].map(|c| ratio(confusion[c][c], confusion[c][0] + confusion[c][1])),
            confusion,
        }
    }
}

pub fn evaluate(model: &Model, points: &[PreparedPoint]) -> Result<Metrics> {
    if points.is_empty() {
        return Err(Error::invalid("evaluation split is empty"));
    }
    let inputs = model_inputs(model, points)?;
    let preds = predict_inputs(model, &inputs, 64)?;
    let truth: Vec<u8> = points.iter().map(|p| p.label).collect();
    Ok(Metrics::from_predictions(&truth, &preds))
}

pub fn select(points: &[PreparedPoint], idx: &[usize]) -> Vec<PreparedPoint> {
    idx.iter().map(|&i| points[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub mode: FeatureMode,
    pub accuracy: f64,
    pub best_epoch: usize,
    pub metrics: Metrics,
}

/// Trains and tests one model per feature mode on the same split.
pub fn ablation_run(points: &[PreparedPoint], split: &Split, cfg: &TrainConfig) -> Result<Vec<AblationRow>> {
    let (tr, va, te) = (select(points, &split.train), select(points, &split.val), select(points, &split.test));
    FeatureMode::ALL_MODES
        .iter()
        .map(|&mode| {
            let mut c = cfg.clone();
            c.model.feature_mode = mode;
            let out = train(&tr, &va, &c)?;
            let metrics = evaluate(&out.model, &te)?;
            info!("ablation {}: test accuracy {:.4}", mode.display_name(), metrics.accuracy);
            Ok(AblationRow {
                mode,
                accuracy: metrics.accuracy,
                best_epoch: out.best_epoch,
                metrics,
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("mode,accuracy,best_epoch\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.mode.display_name(), r.accuracy, r.best_epoch));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossValidation {
    pub folds: Vec<Metrics>,
    pub mean_accuracy: f64,
}

/// Trains one model per fold and reports test metrics for each.
pub fn cross_validate(ds: &Dataset, points: &[PreparedPoint], k: usize, seed: u64, cfg: &TrainConfig) -> Result<CrossValidation> {
    let splits = kfold_splits(ds, k, seed)?;
    let mut folds = Vec::with_capacity(k);
    for (f, s) in splits.iter().enumerate() {
        let out = train(&select(points, &s.train), &select(points, &s.val), cfg)?;
        let m = evaluate(&out.model, &select(points, &s.test))?;
        info!("fold {}: test accuracy {:.4}", f + 1, m.accuracy);
        folds.push(m);
    }
    let mean_accuracy = folds.iter().map(|m| m.accuracy).sum::<f64>() / folds.len() as f64;
    Ok(CrossValidation { folds, mean_accuracy })
}

/// Subject ids appearing in each partition.
pub fn partition_subjects(ds: &Dataset, split: &Split) -> [BTreeMap<String, usize>; 3] {
    let count = |idx: &[usize]| {
        let mut m = BTreeMap::new();
        for &i in idx {
            *m.entry(ds.points[i].sequence.subject_id.clone()).or_insert(0) += 1;
        }
        m
    };
    [count(&split.train), count(&split.val), count(&split.test)]
}
