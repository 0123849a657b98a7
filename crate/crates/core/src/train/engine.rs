use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::model::{episode_forward, episode_gradients, EpisodeBatch, EpisodeOutput, Model};
use super::optim::{lr_at, Adam};
use crate::backbone::{update_running_stats, Mode};
use crate::dataset::LabeledExample;
use crate::episode::{episode_stream, sample_episode, Episode, EpisodeSpec};
use crate::error::{Error, Result};
use crate::params::all_finite;
use crate::rng::{derive_tagged, rng_from};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub accuracy: f64,
}

/// One optimizer step on one episode, then the normalization statistics
/// are folded in.
pub fn train_episode(
    cfg: &TrainConfig,
    model: &mut Model,
    opt: &mut Adam,
    batch: &EpisodeBatch,
    lr: f64,
) -> Result<StepOutcome> {
    let (out, grads, cache) = episode_gradients(cfg, model, batch, Mode::Train)?;
    if !all_finite(&grads) {
        return Err(Error::NonFinite("parameter gradients".into()));
    }
    opt.step(model, &grads, lr, &cfg.optimizer);
    update_running_stats(&mut model.backbone, &cache);
    Ok(StepOutcome {
        loss: out.loss,
        accuracy: out.accuracy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mean_accuracy: f64,
    pub ci95_halfwidth: f64,
    pub per_episode_accuracies: Vec<f64>,
    /// Test accuracy of each fold when produced by cross-validation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fold_accuracies: Vec<f64>,
    /// Epoch whose checkpoint produced the test numbers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    pub config: serde_json::Value,
    pub wall_time_secs: f64,
}

/// Mean and normal-approximation 95% half-width `1.96 * s / sqrt(E)` with
/// the sample standard deviation `s`.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let e = values.len();
    if e == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / e as f64;
    if e == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (e - 1) as f64;
    (mean, 1.96 * var.sqrt() / (e as f64).sqrt())
}

/// Scores one episode without augmentation.
pub fn score_episode(
    cfg: &TrainConfig,
    model: &Model,
    episode: &Episode,
    seed: u64,
) -> Result<EpisodeOutput> {
    let batch = EpisodeBatch::prepare(episode, cfg.n_points, None, seed)?;
    episode_forward(cfg, model, &batch, Mode::Eval)
}

/// Mean accuracy over `count` episodes drawn from `pool`. Episodes are scored
/// in parallel and reduced in index order.
pub fn evaluate(
    cfg: &TrainConfig,
    model: &Model,
    pool: &[LabeledExample],
    spec: EpisodeSpec,
    count: usize,
    seed: u64,
) -> Result<RunReport> {
    let start = Instant::now();
    let stream = episode_stream(pool, spec, count, seed)?;
    let accs = (0..count)
        .into_par_iter()
        .map(|i| {
            let ep = stream.get(i)?;
            score_episode(cfg, model, &ep, derive_tagged(seed, "score", i as u64))
                .map(|o| o.accuracy)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (mean_accuracy, ci95_halfwidth) = mean_ci95(&accs);
    Ok(RunReport {
        mean_accuracy,
        ci95_halfwidth,
        per_episode_accuracies: accs,
        fold_accuracies: Vec::new(),
        best_epoch: None,
        config: serde_json::to_value(cfg)?,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    /// Empty when the run has no validation episodes.
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters of the epoch with the best validation accuracy (the last
    /// epoch when there is no validation).
    pub model: Model,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// The configured spec with the query count reduced so that every class in
/// `pool` can fill an episode.
pub fn spec_fitting(pool: &[LabeledExample], spec: EpisodeSpec) -> Result<EpisodeSpec> {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for e in pool {
        *counts.entry(e.class_id).or_default() += 1;
    }
    let smallest = counts.values().copied().min().unwrap_or(0);
    if smallest <= spec.k_shot {
        return Err(Error::InsufficientExamples {
            class_id: counts
                .iter()
                .find(|(_, &n)| n == smallest)
                .map_or(-1, |(&c, _)| c),
            needed: spec.k_shot + 1,
            available: smallest,
        });
    }
    EpisodeSpec::new(
        spec.n_way,
        spec.k_shot,
        spec.q_query.min(smallest - spec.k_shot),
    )
}

/// Episodic training for `cfg.epochs` epochs. `on_epoch` sees the model at
/// the end of every epoch, e.g. to write a checkpoint.
pub fn fit(
    cfg: &TrainConfig,
    train_pool: &[LabeledExample],
    val_pool: &[LabeledExample],
    on_epoch: &mut dyn FnMut(&EpochRecord, &Model) -> Result<()>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    let spec = cfg.episode_spec()?;
    let validate = cfg.val_episodes > 0 && !val_pool.is_empty();
    let val_spec = if validate {
        Some(spec_fitting(val_pool, spec)?)
    } else {
        None
    };
    let mut model = Model::init(cfg)?;
    let mut opt = Adam::new(&model);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, &cfg.optimizer);
        let (mut loss_sum, mut acc_sum) = (0.0, 0.0);
        for e in 0..cfg.train_episodes {
            let seed = derive_tagged(cfg.seed, "train", (epoch * cfg.train_episodes + e) as u64);
            let episode = sample_episode(train_pool, spec, seed)?;
            let batch =
                EpisodeBatch::prepare(&episode, cfg.n_points, Some(&cfg.augmentation), seed)?;
            let step = train_episode(cfg, &mut model, &mut opt, &batch, lr)?;
            loss_sum += step.loss;
            acc_sum += step.accuracy;
        }
        // the same validation episodes every epoch keep epochs comparable
        let val_acc = match val_spec {
            Some(vs) => Some(
                evaluate(
                    cfg,
                    &model,
                    val_pool,
                    vs,
                    cfg.val_episodes,
                    derive_tagged(cfg.seed, "val", 0),
                )?
                .mean_accuracy,
            ),
            None => None,
        };
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / cfg.train_episodes as f64,
            train_acc: acc_sum / cfg.train_episodes as f64,
            val_acc,
        };
        on_epoch(&record, &model)?;
        let score = val_acc.unwrap_or(epoch as f64);
        if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, epoch, model.clone()));
        }
        history.push(record);
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(FitOutcome {
        model,
        best_epoch,
        history,
    })
}

/// Splits every class of `pool` into training and validation instances,
/// holding out `round(fraction * count)` per class.
pub fn holdout_split(
    pool: &[LabeledExample],
    fraction: f64,
    seed: u64,
) -> (Vec<LabeledExample>, Vec<LabeledExample>) {
    let mut by_class: BTreeMap<i64, Vec<&LabeledExample>> = BTreeMap::new();
    for e in pool {
        by_class.entry(e.class_id).or_default().push(e);
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (c, mut members) in by_class {
        members.shuffle(&mut rng_from(derive_tagged(seed, "holdout", c as u64)));
        let n_val = (fraction * members.len() as f64).round() as usize;
        val.extend(members[..n_val].iter().map(|e| (*e).clone()));
        train.extend(members[n_val..].iter().map(|e| (*e).clone()));
    }
    (train, val)
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub fit: FitOutcome,
    pub test: RunReport,
}

/// Single run: train on base classes with held-out instances for validation,
/// then test the selected model on novel classes.
pub fn run_single(
    cfg: &TrainConfig,
    base_pool: &[LabeledExample],
    novel_pool: &[LabeledExample],
    on_epoch: &mut dyn FnMut(&EpochRecord, &Model) -> Result<()>,
) -> Result<RunOutcome> {
    let start = Instant::now();
    let (train, val) = holdout_split(base_pool, cfg.val_fraction, cfg.seed);
    let fit = fit(cfg, &train, &val, on_epoch)?;
    let mut test = evaluate(
        cfg,
        &fit.model,
        novel_pool,
        cfg.episode_spec()?,
        cfg.test_episodes,
        derive_tagged(cfg.seed, "test", 0),
    )?;
    test.wall_time_secs = start.elapsed().as_secs_f64();
    test.best_epoch = Some(fit.best_epoch);
    Ok(RunOutcome { fit, test })
}

/// Random class-level partition into `folds` subsets whose sizes differ by
/// at most one.
pub fn fold_partition(classes: &[i64], folds: usize, seed: u64) -> Result<Vec<Vec<i64>>> {
    if folds < 2 {
        return Err(Error::InvalidConfig("folds must be >= 2".into()));
    }
    let unique: BTreeSet<i64> = classes.iter().copied().collect();
    if unique.len() < folds {
        return Err(Error::InsufficientClasses {
            needed: folds,
            available: unique.len(),
        });
    }
    let mut shuffled: Vec<i64> = unique.into_iter().collect();
    shuffled.shuffle(&mut rng_from(derive_tagged(seed, "folds", 0)));
    let (q, r) = (shuffled.len() / folds, shuffled.len() % folds);
    let mut out = Vec::with_capacity(folds);
    let mut rest = shuffled.as_slice();
    for f in 0..folds {
        let (head, tail) = rest.split_at(q + usize::from(f < r));
        let mut fold = head.to_vec();
        fold.sort_unstable();
        out.push(fold);
        rest = tail;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct CrossValidation {
    pub folds: Vec<RunOutcome>,
    /// All folds' test episodes pooled; `mean_accuracy` is the mean of the
    /// fold accuracies because every fold runs the same number of episodes.
    pub aggregate: RunReport,
}

pub fn cross_validate(
    cfg: &TrainConfig,
    base_pool: &[LabeledExample],
    novel_pool: &[LabeledExample],
    on_epoch: &mut dyn FnMut(usize, &EpochRecord, &Model) -> Result<()>,
) -> Result<CrossValidation> {
    let start = Instant::now();
    let classes: BTreeSet<i64> = base_pool.iter().map(|e| e.class_id).collect();
    if classes.len() < cfg.folds * cfg.way {
        return Err(Error::InsufficientClasses {
            needed: cfg.folds * cfg.way,
            available: classes.len(),
        });
    }
    let classes: Vec<i64> = classes.into_iter().collect();
    let partition = fold_partition(&classes, cfg.folds, cfg.seed)?;
    let mut folds = Vec::with_capacity(cfg.folds);
    for (f, held_out) in partition.iter().enumerate() {
        let held: BTreeSet<i64> = held_out.iter().copied().collect();
        let (val, train): (Vec<LabeledExample>, Vec<LabeledExample>) = base_pool
            .iter()
            .cloned()
            .partition(|e| held.contains(&e.class_id));
        let fold_cfg = TrainConfig {
            seed: derive_tagged(cfg.seed, "fold", f as u64),
            ..cfg.clone()
        };
        let fit = fit(&fold_cfg, &train, &val, &mut |r, m| on_epoch(f, r, m))?;
        let test = evaluate(
            &fold_cfg,
            &fit.model,
            novel_pool,
            cfg.episode_spec()?,
            cfg.test_episodes,
            derive_tagged(fold_cfg.seed, "test", 0),
        )?;
        let test = RunReport {
            best_epoch: Some(fit.best_epoch),
            ..test
        };
        folds.push(RunOutcome { fit, test });
    }
    let all: Vec<f64> = folds
        .iter()
        .flat_map(|f| f.test.per_episode_accuracies.iter().copied())
        .collect();
    let (mean_accuracy, ci95_halfwidth) = mean_ci95(&all);
    let aggregate = RunReport {
        mean_accuracy,
        ci95_halfwidth,
        per_episode_accuracies: all,
        fold_accuracies: folds.iter().map(|f| f.test.mean_accuracy).collect(),
        best_epoch: None,
        config: serde_json::to_value(cfg)?,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok(CrossValidation { folds, aggregate })
}
