//! Point-set embedding networks: a PointNet-style shared MLP with max pooling
//! and a DGCNN-style stack of EdgeConv layers over dynamic kNN graphs.

mod edgeconv;
mod knn;
mod ops;

use ndarray::{concatenate, s, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use edgeconv::{edgeconv_backward, edgeconv_forward, edgeconv_layer, EdgeConvCache};
pub use knn::knn_graph;
pub use ops::{
    leaky, leaky_grad, max_pool, norm_backward, norm_forward, row_moments, BatchStats, Dense, Mode,
    Norm, NormCache, LEAKY_SLOPE,
};

use crate::dataset::PointCloud;
use crate::error::{Error, Result};
use crate::params::{join, Tensors, Visit, VisitMut};
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Pointnet,
    Dgcnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub layer_widths: Vec<usize>,
    /// Neighbourhood size for EdgeConv; clamped to `n - 1` at run time.
    pub k_neighbors: usize,
    pub embed_dim: usize,
    pub normalization: bool,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            kind: BackboneKind::Dgcnn,
            layer_widths: vec![64, 64, 128, 256],
            k_neighbors: 20,
            embed_dim: 256,
            normalization: true,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.is_empty() || self.layer_widths.contains(&0) {
            return Err(Error::InvalidConfig(
                "layer_widths must be non-empty and positive".into(),
            ));
        }
        if self.embed_dim == 0 {
            return Err(Error::InvalidConfig("embed_dim must be >= 1".into()));
        }
        if self.kind == BackboneKind::Dgcnn && self.k_neighbors == 0 {
            return Err(Error::InvalidConfig("k_neighbors must be >= 1".into()));
        }
        Ok(())
    }
}

/// A dense map optionally followed by normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub dense: Dense,
    pub norm: Option<Norm>,
}

impl Tensors for Block {
    fn visit(&self, prefix: &str, v: Visit<'_>) {
        self.dense.visit(prefix, v);
        if let Some(n) = &self.norm {
            n.visit(&join(prefix, "norm"), v);
        }
    }

    fn visit_mut(&mut self, prefix: &str, v: VisitMut<'_>) {
        self.dense.visit_mut(prefix, v);
        if let Some(n) = &mut self.norm {
            n.visit_mut(&join(prefix, "norm"), v);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams {
    pub blocks: Vec<Block>,
    pub head: Block,
}

impl Tensors for BackboneParams {
    fn visit(&self, prefix: &str, v: Visit<'_>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), v);
        }
        self.head.visit(&join(prefix, "head"), v);
    }

    fn visit_mut(&mut self, prefix: &str, v: VisitMut<'_>) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks.{i}")), v);
        }
        self.head.visit_mut(&join(prefix, "head"), v);
    }
}

pub fn init_backbone(config: &BackboneConfig, seed: u64) -> Result<BackboneParams> {
    config.validate()?;
    let mut rng = rng_from(seed);
    let norm = |c: usize| config.normalization.then(|| Norm::new(c));
    let mut blocks = Vec::with_capacity(config.layer_widths.len());
    let mut c_in = 3;
    for &w in &config.layer_widths {
        let fan_in = match config.kind {
            BackboneKind::Pointnet => c_in,
            BackboneKind::Dgcnn => 2 * c_in,
        };
        blocks.push(Block {
            dense: Dense::init(w, fan_in, &mut rng),
            norm: norm(w),
        });
        c_in = w;
    }
    let head = match config.kind {
        BackboneKind::Pointnet => Block {
            dense: Dense::init(config.embed_dim, c_in, &mut rng),
            norm: None,
        },
        BackboneKind::Dgcnn => Block {
            dense: Dense::init(config.embed_dim, config.layer_widths.iter().sum(), &mut rng),
            norm: norm(config.embed_dim),
        },
    };
    Ok(BackboneParams { blocks, head })
}

fn check_params(config: &BackboneConfig, params: &BackboneParams) -> Result<()> {
    let fresh = init_backbone(config, 0)?;
    let shapes = |p: &BackboneParams| {
        let mut v = Vec::new();
        p.visit("", &mut |name, _, shape, _| {
            v.push((name.to_string(), shape.to_vec()))
        });
        v
    };
    if shapes(&fresh) != shapes(params) {
        return Err(Error::DimensionMismatch(
            "backbone parameters do not match the configuration".into(),
        ));
    }
    Ok(())
}

struct BlockCache {
    input: Vec<Array2<f64>>,
    /// Input to the activation (post-normalization).
    z: Vec<Array2<f64>>,
    norm: Option<NormCache>,
    activate: bool,
}

fn block_forward(
    block: &Block,
    xs: Vec<Array2<f64>>,
    mode: Mode,
    activate: bool,
) -> (Vec<Array2<f64>>, BlockCache) {
    let pre: Vec<Array2<f64>> = xs
        .par_iter()
        .map(|x| block.dense.forward(x.view()))
        .collect();
    let (z, norm) = match &block.norm {
        Some(n) => {
            let (z, c) = norm_forward(n, &pre, mode);
            (z, Some(c))
        }
        None => (pre, None),
    };
    let out = if activate {
        z.par_iter().map(|m| m.mapv(leaky)).collect()
    } else {
        z.clone()
    };
    (
        out,
        BlockCache {
            input: xs,
            z,
            norm,
            activate,
        },
    )
}

fn block_backward(
    block: &Block,
    cache: &BlockCache,
    gys: Vec<Array2<f64>>,
    grad: &mut Block,
) -> Vec<Array2<f64>> {
    let mut g: Vec<Array2<f64>> = if cache.activate {
        gys.into_par_iter()
            .zip(cache.z.par_iter())
            .map(|(mut g, z)| {
                g.zip_mut_with(z, |gv, &zv| *gv *= leaky_grad(zv));
                g
            })
            .collect()
    } else {
        gys
    };
    if let (Some(n), Some(nc)) = (&block.norm, &cache.norm) {
        g = norm_backward(n, nc, &g, grad.norm.as_mut().expect("norm grad"));
    }
    let parts: Vec<(Array2<f64>, ndarray::Array1<f64>, Array2<f64>)> = g
        .par_iter()
        .zip(cache.input.par_iter())
        .map(|(g, x)| {
            (
                g.t().dot(x),
                g.sum_axis(Axis(0)),
                g.dot(&block.dense.weight),
            )
        })
        .collect();
    let mut gxs = Vec::with_capacity(parts.len());
    for (gw, gb, gx) in parts {
        grad.dense.weight += &gw;
        grad.dense.bias += &gb;
        gxs.push(gx);
    }
    gxs
}

enum KindCache {
    Pointnet {
        blocks: Vec<BlockCache>,
        head: BlockCache,
    },
    Dgcnn {
        layers: Vec<EdgeConvCache>,
        widths: Vec<usize>,
        head: BlockCache,
    },
}

/// Everything the backward pass needs from one batched forward pass.
pub struct BackboneCache {
    kind: KindCache,
    pool_args: Vec<Vec<usize>>,
    n_points: usize,
}

impl BackboneCache {
    /// Batch moments of every normalized layer, in block order, head last.
    pub fn batch_stats(&self) -> Vec<Option<BatchStats>> {
        let from_block = |b: &BlockCache| b.norm.as_ref().and_then(|n| n.stats.clone());
        match &self.kind {
            KindCache::Pointnet { blocks, head } => blocks
                .iter()
                .chain(std::iter::once(head))
                .map(from_block)
                .collect(),
            KindCache::Dgcnn { layers, head, .. } => layers
                .iter()
                .map(|l| l.stats.clone())
                .chain(std::iter::once(from_block(head)))
                .collect(),
        }
    }
}

/// Folds the batch moments of a train-mode pass into the tracked statistics.
pub fn update_running_stats(params: &mut BackboneParams, cache: &BackboneCache) {
    let stats = cache.batch_stats();
    let blocks = params
        .blocks
        .iter_mut()
        .chain(std::iter::once(&mut params.head));
    for (block, st) in blocks.zip(stats) {
        if let (Some(n), Some(st)) = (block.norm.as_mut(), st) {
            n.update_running(&st);
        }
    }
}

fn gather_clouds<P: AsRef<PointCloud>>(clouds: &[P]) -> Result<(Vec<Array2<f64>>, usize)> {
    let first = clouds
        .first()
        .ok_or_else(|| Error::Empty("embedding batch".into()))?;
    let n = first.as_ref().len();
    if clouds.iter().any(|c| c.as_ref().len() != n) {
        return Err(Error::DimensionMismatch(
            "all clouds in a batch must share the point count".into(),
        ));
    }
    Ok((
        clouds
            .iter()
            .map(|c| c.as_ref().points().to_owned())
            .collect(),
        n,
    ))
}

/// Batched forward pass returning one `embed_dim` row per cloud.
pub fn forward<P: AsRef<PointCloud>>(
    config: &BackboneConfig,
    params: &BackboneParams,
    clouds: &[P],
    mode: Mode,
) -> Result<(Array2<f64>, BackboneCache)> {
    config.validate()?;
    check_params(config, params)?;
    let (xs, n) = gather_clouds(clouds)?;
    let (out, kind, pool_args) = match config.kind {
        BackboneKind::Pointnet => {
            let mut h = xs;
            let mut caches = Vec::with_capacity(params.blocks.len());
            for block in &params.blocks {
                let (y, c) = block_forward(block, h, mode, true);
                caches.push(c);
                h = y;
            }
            let (pooled, args) = max_pool(&h);
            let (mut y, head) = block_forward(&params.head, vec![pooled], mode, false);
            (
                y.remove(0),
                KindCache::Pointnet {
                    blocks: caches,
                    head,
                },
                args,
            )
        }
        BackboneKind::Dgcnn => {
            if n < 2 {
                return Err(Error::InvalidConfig(
                    "EdgeConv needs at least 2 points per cloud".into(),
                ));
            }
            let k = config.k_neighbors.min(n - 1);
            let mut h = xs;
            let mut layers = Vec::with_capacity(params.blocks.len());
            let mut outs: Vec<Vec<Array2<f64>>> = Vec::with_capacity(params.blocks.len());
            for block in &params.blocks {
                let nbrs = h
                    .par_iter()
                    .map(|x| knn_graph(x.view(), k))
                    .collect::<Result<Vec<_>>>()?;
                let (y, c) = edgeconv_forward(&block.dense, block.norm.as_ref(), &h, nbrs, mode);
                layers.push(c);
                outs.push(y.clone());
                h = y;
            }
            let concat: Vec<Array2<f64>> = (0..h.len())
                .into_par_iter()
                .map(|b| {
                    let views: Vec<_> = outs.iter().map(|o| o[b].view()).collect();
                    concatenate(Axis(1), &views).expect("row counts agree")
                })
                .collect();
            let (act, head) = block_forward(&params.head, concat, mode, true);
            let (pooled, args) = max_pool(&act);
            (
                pooled,
                KindCache::Dgcnn {
                    layers,
                    widths: config.layer_widths.clone(),
                    head,
                },
                args,
            )
        }
    };
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("backbone output".into()));
    }
    Ok((
        out,
        BackboneCache {
            kind,
            pool_args,
            n_points: n,
        },
    ))
}

/// Inference-only embedding of a batch.
pub fn embed<P: AsRef<PointCloud>>(
    config: &BackboneConfig,
    params: &BackboneParams,
    clouds: &[P],
    mode: Mode,
) -> Result<Array2<f64>> {
    forward(config, params, clouds, mode).map(|(e, _)| e)
}

/// Gradient of `sum(grad_out * embeddings)` w.r.t. every backbone parameter.
pub fn backward(
    params: &BackboneParams,
    cache: &BackboneCache,
    grad_out: &Array2<f64>,
) -> BackboneParams {
    let mut grad = crate::params::zeros_like(params);
    match &cache.kind {
        KindCache::Pointnet { blocks, head } => {
            let g = block_backward(&params.head, head, vec![grad_out.clone()], &mut grad.head);
            let mut g = ops::max_pool_backward(&g[0], &cache.pool_args, cache.n_points);
            for (i, bc) in blocks.iter().enumerate().rev() {
                g = block_backward(&params.blocks[i], bc, g, &mut grad.blocks[i]);
            }
        }
        KindCache::Dgcnn {
            layers,
            widths,
            head,
        } => {
            let g = ops::max_pool_backward(grad_out, &cache.pool_args, cache.n_points);
            let g_concat = block_backward(&params.head, head, g, &mut grad.head);
            let offsets: Vec<usize> = widths
                .iter()
                .scan(0, |acc, w| {
                    let o = *acc;
                    *acc += w;
                    Some(o)
                })
                .collect();
            let mut carry: Option<Vec<Array2<f64>>> = None;
            for l in (0..layers.len()).rev() {
                let (lo, hi) = (offsets[l], offsets[l] + widths[l]);
                let mut g_out: Vec<Array2<f64>> = g_concat
                    .iter()
                    .map(|g| g.slice(s![.., lo..hi]).to_owned())
                    .collect();
                if let Some(c) = carry.take() {
                    for (a, b) in g_out.iter_mut().zip(c) {
                        *a += &b;
                    }
                }
                let block = &params.blocks[l];
                let gblock = &mut grad.blocks[l];
                let gx = edgeconv_backward(
                    &block.dense,
                    block.norm.as_ref(),
                    &layers[l],
                    &g_out,
                    &mut gblock.dense,
                    gblock.norm.as_mut(),
                );
                carry = Some(gx);
            }
        }
    }
    grad
}
