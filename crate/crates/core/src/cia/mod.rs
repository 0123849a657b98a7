//! Cross-instance adaptation of prototype and query embeddings: channel
//! interaction on every feature, then fusion across the two sets.

mod cif;
mod sci;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

pub use cif::{cif_fuse, cosine_topk, CifBranch, CifCache, CifParams};
pub use sci::{relation_map, sci_forward, RelationMap, SciParams};

use crate::error::{Error, Result};
use crate::params::{join, Tensors, Visit, VisitMut};
use crate::rng::rng_from;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CiaConfig {
    pub sci: bool,
    pub cif: bool,
    /// Queries fused into each prototype (clamped to the query count).
    pub k1: usize,
    /// Prototypes fused into each query (clamped to the way count).
    pub k2: usize,
    pub hidden: usize,
}

impl Default for CiaConfig {
    fn default() -> Self {
        Self {
            sci: true,
            cif: true,
            k1: 3,
            k2: 2,
            hidden: 32,
        }
    }
}

impl CiaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::InvalidConfig("CIF hidden width must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CiaParams {
    pub sci: SciParams,
    pub cif: CifParams,
}

impl Tensors for CiaParams {
    fn visit(&self, prefix: &str, v: Visit<'_>) {
        self.sci.visit(&join(prefix, "sci"), v);
        self.cif.visit(&join(prefix, "cif"), v);
    }

    fn visit_mut(&mut self, prefix: &str, v: VisitMut<'_>) {
        self.sci.visit_mut(&join(prefix, "sci"), v);
        self.cif.visit_mut(&join(prefix, "cif"), v);
    }
}

pub fn init_cia(config: &CiaConfig, embed_dim: usize, seed: u64) -> Result<CiaParams> {
    config.validate()?;
    let mut rng = rng_from(seed);
    let sci = SciParams::init(embed_dim, &mut rng);
    let proto = CifBranch::init(config.k1 + 1, config.hidden, &mut rng);
    let query = CifBranch::init(config.k2 + 1, config.hidden, &mut rng);
    Ok(CiaParams {
        sci,
        cif: CifParams { proto, query },
    })
}

struct FuseRecord {
    selected: Vec<usize>,
    cache: CifCache,
}

/// Intermediate state of one [`cia_forward_cached`] call.
pub struct CiaCache {
    sci_protos: Vec<sci::SciCache>,
    sci_queries: Vec<sci::SciCache>,
    proto_fuse: Vec<FuseRecord>,
    query_fuse: Vec<FuseRecord>,
    sci: bool,
    cif: bool,
}

impl CiaCache {
    /// Slot weights of every prototype fusion followed by every query fusion.
    pub fn fusion_weights(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.proto_fuse
            .iter()
            .chain(&self.query_fuse)
            .map(|r| r.cache.slot_weights())
    }
}

fn rows(m: &Array2<f64>) -> Vec<ArrayView1<'_, f64>> {
    m.rows().into_iter().collect()
}

fn fuse_all(
    anchors: &Array2<f64>,
    others: &Array2<f64>,
    k: usize,
    branch: &CifBranch,
) -> Result<(Array2<f64>, Vec<FuseRecord>)> {
    let k = k.min(others.nrows());
    let cand = rows(others);
    let mut out = Array2::zeros(anchors.dim());
    let mut records = Vec::with_capacity(anchors.nrows());
    for (i, a) in anchors.rows().into_iter().enumerate() {
        let selected = cosine_topk(a, &cand, k);
        let sel_views: Vec<ArrayView1<f64>> = selected.iter().map(|&j| cand[j]).collect();
        let (fused, cache) = cif::cif_forward_cached(a, &sel_views, branch)?;
        out.row_mut(i).assign(&fused);
        records.push(FuseRecord { selected, cache });
    }
    Ok((out, records))
}

pub fn cia_forward_cached(
    prototypes: &Array2<f64>,
    queries: &Array2<f64>,
    params: &CiaParams,
    config: &CiaConfig,
) -> Result<(Array2<f64>, Array2<f64>, CiaCache)> {
    let d = params.sci.dim();
    if prototypes.ncols() != d || (queries.nrows() > 0 && queries.ncols() != d) {
        return Err(Error::DimensionMismatch(format!(
            "CIA expects {d} channels, got prototypes {:?} and queries {:?}",
            prototypes.dim(),
            queries.dim()
        )));
    }
    let mut cache = CiaCache {
        sci_protos: Vec::new(),
        sci_queries: Vec::new(),
        proto_fuse: Vec::new(),
        query_fuse: Vec::new(),
        sci: config.sci,
        cif: config.cif,
    };
    let (p1, q1) = if config.sci {
        let apply = |m: &Array2<f64>, caches: &mut Vec<sci::SciCache>| -> Result<Array2<f64>> {
            let mut out = Array2::zeros(m.dim());
            for (i, r) in m.rows().into_iter().enumerate() {
                let (o, c) = sci::sci_forward_cached(r, &params.sci)?;
                out.row_mut(i).assign(&o);
                caches.push(c);
            }
            Ok(out)
        };
        (
            apply(prototypes, &mut cache.sci_protos)?,
            apply(queries, &mut cache.sci_queries)?,
        )
    } else {
        (prototypes.clone(), queries.clone())
    };
    if !config.cif {
        return Ok((p1, q1, cache));
    }
    // both directions select on the same post-SCI features
    let (p2, proto_fuse) = fuse_all(&p1, &q1, config.k1, &params.cif.proto)?;
    let (q2, query_fuse) = fuse_all(&q1, &p1, config.k2, &params.cif.query)?;
    cache.proto_fuse = proto_fuse;
    cache.query_fuse = query_fuse;
    Ok((p2, q2, cache))
}

/// Adapted `(prototypes, queries)`.
pub fn cia_forward(
    prototypes: &Array2<f64>,
    queries: &Array2<f64>,
    params: &CiaParams,
    config: &CiaConfig,
) -> Result<(Array2<f64>, Array2<f64>)> {
    cia_forward_cached(prototypes, queries, params, config).map(|(p, q, _)| (p, q))
}

/// Gradients w.r.t. the input prototypes and queries; parameter gradients
/// are accumulated into `grad`.
pub fn cia_backward(
    params: &CiaParams,
    cache: &CiaCache,
    g_protos: &Array2<f64>,
    g_queries: &Array2<f64>,
    grad: &mut CiaParams,
) -> (Array2<f64>, Array2<f64>) {
    let (mut gp, mut gq) = if cache.cif {
        let mut gp = Array2::zeros(g_protos.dim());
        let mut gq = Array2::zeros(g_queries.dim());
        for (i, rec) in cache.proto_fuse.iter().enumerate() {
            let gz = cif::cif_backward(
                &params.cif.proto,
                &rec.cache,
                g_protos.row(i),
                &mut grad.cif.proto,
            );
            let mut row = gp.row_mut(i);
            row += &gz.column(0);
            for (s, &j) in rec.selected.iter().enumerate() {
                let mut row = gq.row_mut(j);
                row += &gz.column(s + 1);
            }
        }
        for (j, rec) in cache.query_fuse.iter().enumerate() {
            let gz = cif::cif_backward(
                &params.cif.query,
                &rec.cache,
                g_queries.row(j),
                &mut grad.cif.query,
            );
            let mut row = gq.row_mut(j);
            row += &gz.column(0);
            for (s, &i) in rec.selected.iter().enumerate() {
                let mut row = gp.row_mut(i);
                row += &gz.column(s + 1);
            }
        }
        (gp, gq)
    } else {
        (g_protos.clone(), g_queries.clone())
    };
    if cache.sci {
        for (i, c) in cache.sci_protos.iter().enumerate() {
            let g = sci::sci_backward(&params.sci, c, gp.row(i), &mut grad.sci);
            gp.row_mut(i).assign(&g);
        }
        for (j, c) in cache.sci_queries.iter().enumerate() {
            let g = sci::sci_backward(&params.sci, c, gq.row(j), &mut grad.sci);
            gq.row_mut(j).assign(&g);
        }
    }
    (gp, gq)
}
