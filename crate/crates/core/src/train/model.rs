use std::sync::Arc;

use ndarray::{concatenate, s, Array2, Axis};

use super::config::TrainConfig;
use crate::backbone::{self, init_backbone, BackboneCache, BackboneParams, Mode};
use crate::cia::{cia_backward, cia_forward_cached, init_cia, CiaCache, CiaParams};
use crate::dataset::{augment, normalize_cloud, sample_points, AugmentationConfig, PointCloud};
use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::gradcheck::{max_relative_error, numeric_gradient};
use crate::head::{
    compute_prototypes, distance_logits, episode_accuracy, episode_loss, logits_backward,
    loss_grad_logits, prototypes_backward, softmax_rows,
};
use crate::params::{flatten, join, unflatten, zeros_like, TensorKind, Tensors, Visit, VisitMut};
use crate::rng::derive_tagged;

/// Backbone plus the optional adaptation module. A model built without the
/// module is a plain prototype network.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub backbone: BackboneParams,
    pub cia: Option<CiaParams>,
}

impl Tensors for Model {
    fn visit(&self, prefix: &str, v: Visit<'_>) {
        self.backbone.visit(&join(prefix, "backbone"), v);
        if let Some(c) = &self.cia {
            c.visit(&join(prefix, "cia"), v);
        }
    }

    fn visit_mut(&mut self, prefix: &str, v: VisitMut<'_>) {
        self.backbone.visit_mut(&join(prefix, "backbone"), v);
        if let Some(c) = &mut self.cia {
            c.visit_mut(&join(prefix, "cia"), v);
        }
    }
}

impl Model {
    /// Backbone and module draw from separate seed streams, so a model with
    /// and one without the module share identical backbone weights.
    pub fn init(cfg: &TrainConfig) -> Result<Self> {
        let backbone = init_backbone(&cfg.backbone, derive_tagged(cfg.seed, "backbone", 0))?;
        let cia = if cfg.with_cia {
            Some(init_cia(
                &cfg.cia,
                cfg.backbone.embed_dim,
                derive_tagged(cfg.seed, "cia", 0),
            )?)
        } else {
            None
        };
        Ok(Self { backbone, cia })
    }
}

/// Network-ready clouds of one episode: supports first, then queries.
#[derive(Debug, Clone)]
pub struct EpisodeBatch {
    pub clouds: Vec<Arc<PointCloud>>,
    pub support_labels: Vec<usize>,
    pub query_labels: Vec<usize>,
}

impl EpisodeBatch {
    /// Resamples every cloud to `n_points`, centres and scales it into the
    /// unit ball, then optionally augments it.
    pub fn prepare(
        episode: &Episode,
        n_points: usize,
        augmentation: Option<&AugmentationConfig>,
        seed: u64,
    ) -> Result<Self> {
        let clouds = episode
            .support
            .iter()
            .chain(&episode.query)
            .enumerate()
            .map(|(i, ex)| {
                let i = i as u64;
                let sampled = if ex.cloud.len() == n_points {
                    normalize_cloud(&ex.cloud)
                } else {
                    let s = sample_points(&ex.cloud, n_points, derive_tagged(seed, "points", i))?;
                    normalize_cloud(&s)
                };
                let cloud = match augmentation {
                    Some(aug) => augment(&sampled, aug, derive_tagged(seed, "augment", i))?,
                    None => sampled,
                };
                Ok(Arc::new(cloud))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            clouds,
            support_labels: episode.support_labels(),
            query_labels: episode.query_labels(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeOutput {
    pub probs: Array2<f64>,
    pub loss: f64,
    pub accuracy: f64,
}

struct ForwardCache {
    backbone: BackboneCache,
    cia: Option<CiaCache>,
    protos: Array2<f64>,
    queries: Array2<f64>,
}

fn forward_cached(
    cfg: &TrainConfig,
    model: &Model,
    batch: &EpisodeBatch,
    mode: Mode,
) -> Result<(EpisodeOutput, ForwardCache)> {
    let (emb, bb_cache) = backbone::forward(&cfg.backbone, &model.backbone, &batch.clouds, mode)?;
    let ns = batch.support_labels.len();
    if emb.nrows() != ns + batch.query_labels.len() {
        return Err(Error::DimensionMismatch(
            "batch labels do not cover every cloud".into(),
        ));
    }
    let support = emb.slice(s![..ns, ..]).to_owned();
    let raw_queries = emb.slice(s![ns.., ..]).to_owned();
    let raw_protos = compute_prototypes(&support, &batch.support_labels)?;
    let (protos, queries, cia) = match &model.cia {
        Some(params) => {
            let (p, q, c) = cia_forward_cached(&raw_protos, &raw_queries, params, &cfg.cia)?;
            (p, q, Some(c))
        }
        None => (raw_protos, raw_queries, None),
    };
    let probs = softmax_rows(&distance_logits(&protos, &queries)?);
    let loss = episode_loss(&probs, &batch.query_labels)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("episode loss".into()));
    }
    let accuracy = episode_accuracy(&probs, &batch.query_labels)?;
    Ok((
        EpisodeOutput {
            probs,
            loss,
            accuracy,
        },
        ForwardCache {
            backbone: bb_cache,
            cia,
            protos,
            queries,
        },
    ))
}

/// Forward pass only; no state is touched.
pub fn episode_forward(
    cfg: &TrainConfig,
    model: &Model,
    batch: &EpisodeBatch,
    mode: Mode,
) -> Result<EpisodeOutput> {
    forward_cached(cfg, model, batch, mode).map(|(o, _)| o)
}

/// Loss, accuracy and the gradient of the loss w.r.t. every learnable tensor.
/// The backbone cache is returned so callers can fold in batch statistics.
pub fn episode_gradients(
    cfg: &TrainConfig,
    model: &Model,
    batch: &EpisodeBatch,
    mode: Mode,
) -> Result<(EpisodeOutput, Model, BackboneCache)> {
    let (out, cache) = forward_cached(cfg, model, batch, mode)?;
    let g_logits = loss_grad_logits(&out.probs, &batch.query_labels)?;
    let (gp, gq) = logits_backward(&cache.protos, &cache.queries, &g_logits);
    let mut grads = zeros_like(model);
    let (gp, gq) = match (&model.cia, &cache.cia, &mut grads.cia) {
        (Some(params), Some(c), Some(g)) => cia_backward(params, c, &gp, &gq, g),
        _ => (gp, gq),
    };
    let gs = prototypes_backward(&gp, &batch.support_labels);
    let g_emb = concatenate(Axis(0), &[gs.view(), gq.view()]).expect("same width");
    grads.backbone = backbone::backward(&model.backbone, &cache.backbone, &g_emb);
    Ok((out, grads, cache.backbone))
}

/// Name of every learnable scalar, in [`flatten`] order.
pub fn learnable_names<T: Tensors + ?Sized>(t: &T) -> Vec<String> {
    let mut out = Vec::new();
    t.visit("", &mut |name, kind, _, data| {
        if kind == TensorKind::Learnable {
            out.extend((0..data.len()).map(|i| format!("{name}[{i}]")));
        }
    });
    out
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Scalar with the largest relative error.
    pub worst: String,
    pub n_params: usize,
}

/// Flattened analytic gradient of the episode loss.
pub fn analytic_gradient(
    cfg: &TrainConfig,
    model: &Model,
    batch: &EpisodeBatch,
) -> Result<Vec<f64>> {
    check_differentiable(cfg)?;
    let (_, grads, _) = episode_gradients(cfg, model, batch, Mode::Train)?;
    Ok(flatten(&grads))
}

/// Central differences of the episode loss w.r.t. every learnable scalar.
pub fn numeric_loss_gradient(
    cfg: &TrainConfig,
    model: &Model,
    batch: &EpisodeBatch,
    step: f64,
) -> Result<Vec<f64>> {
    check_differentiable(cfg)?;
    let x0 = flatten(model);
    let failure = std::cell::RefCell::new(None);
    let g = numeric_gradient(
        |x| {
            let mut m = model.clone();
            unflatten(&mut m, x);
            match episode_forward(cfg, &m, batch, Mode::Train) {
                Ok(o) => o.loss,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &x0,
        step,
    );
    match failure.into_inner() {
        Some(e) => Err(e),
        None if g.iter().all(|v| v.is_finite()) => Ok(g),
        None => Err(Error::NonFinite("finite-difference gradient".into())),
    }
}

/// Largest relative disagreement between analytic and finite-difference
/// gradients of the episode loss.
pub fn grad_check(
    cfg: &TrainConfig,
    model: &Model,
    batch: &EpisodeBatch,
    step: f64,
) -> Result<GradCheckReport> {
    let analytic = analytic_gradient(cfg, model, batch)?;
    let numeric = numeric_loss_gradient(cfg, model, batch, step)?;
    Ok(compare_gradients(
        &analytic,
        &numeric,
        &learnable_names(model),
    ))
}

pub fn compare_gradients(analytic: &[f64], numeric: &[f64], names: &[String]) -> GradCheckReport {
    let mut worst = (0.0, 0);
    for i in 0..analytic.len() {
        let e = max_relative_error(&analytic[i..=i], &numeric[i..=i]);
        if e > worst.0 {
            worst = (e, i);
        }
    }
    GradCheckReport {
        max_rel_err: worst.0,
        worst: names.get(worst.1).cloned().unwrap_or_default(),
        n_params: analytic.len(),
    }
}

fn check_differentiable(cfg: &TrainConfig) -> Result<()> {
    if cfg.backbone.normalization {
        return Err(Error::InvalidConfig(
            "gradient checks need normalization off: batch statistics couple the batch".into(),
        ));
    }
    Ok(())
}
