//! Self-channel interaction: a bilinear channel relation map, normalized per
//! column, re-weights the embedding and is added back residually.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::params::{join, visit_matrix, visit_matrix_mut, TensorKind, Tensors, Visit, VisitMut};
use crate::rng::Rng;

/// Projections producing the query-vector and key-vector (`q = f W_query`).
#[derive(Debug, Clone, PartialEq)]
pub struct SciParams {
    pub w_query: Array2<f64>,
    pub w_key: Array2<f64>,
}

impl SciParams {
    pub fn init(d: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        let mut draw = || Array2::from_shape_fn((d, d), |_| rng.random_range(-bound..bound));
        let w_query = draw();
        let w_key = draw();
        Self { w_query, w_key }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            w_query: Array2::zeros((d, d)),
            w_key: Array2::zeros((d, d)),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_query.nrows()
    }
}

impl Tensors for SciParams {
    fn visit(&self, prefix: &str, v: Visit<'_>) {
        visit_matrix(
            &self.w_query,
            &join(prefix, "w_query"),
            TensorKind::Learnable,
            v,
        );
        visit_matrix(
            &self.w_key,
            &join(prefix, "w_key"),
            TensorKind::Learnable,
            v,
        );
    }

    fn visit_mut(&mut self, prefix: &str, v: VisitMut<'_>) {
        visit_matrix_mut(
            &mut self.w_query,
            &join(prefix, "w_query"),
            TensorKind::Learnable,
            v,
        );
        visit_matrix_mut(
            &mut self.w_key,
            &join(prefix, "w_key"),
            TensorKind::Learnable,
            v,
        );
    }
}

/// Raw scores `R = q^T k` and their column-normalized weights.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationMap {
    pub r: Array2<f64>,
    pub r_norm: Array2<f64>,
}

pub struct SciCache {
    f: Array1<f64>,
    q: Array1<f64>,
    k: Array1<f64>,
    r_norm: Array2<f64>,
    v: Array1<f64>,
}

fn check_dim(f: ArrayView1<f64>, params: &SciParams) -> Result<()> {
    if params.w_query.dim() != (f.len(), f.len()) || params.w_key.dim() != (f.len(), f.len()) {
        return Err(Error::DimensionMismatch(format!(
            "feature has {} channels, SCI projections are {:?}",
            f.len(),
            params.w_query.dim()
        )));
    }
    Ok(())
}

/// Softmax of `-R` down each column.
fn column_softmax_neg(r: &Array2<f64>) -> Array2<f64> {
    let mut out = r.mapv(|x| -x);
    for mut col in out.columns_mut() {
        let m = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        col.mapv_inplace(|x| (x - m).exp());
        let s = col.sum();
        col.mapv_inplace(|x| x / s);
    }
    out
}

pub fn relation_map(f: ArrayView1<f64>, params: &SciParams) -> Result<RelationMap> {
    check_dim(f, params)?;
    let q = f.dot(&params.w_query);
    let k = f.dot(&params.w_key);
    let r = outer(&q, &k);
    let r_norm = column_softmax_neg(&r);
    Ok(RelationMap { r, r_norm })
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

pub(crate) fn sci_forward_cached(
    f: ArrayView1<f64>,
    params: &SciParams,
) -> Result<(Array1<f64>, SciCache)> {
    check_dim(f, params)?;
    let q = f.dot(&params.w_query);
    let k = f.dot(&params.w_key);
    let r_norm = column_softmax_neg(&outer(&q, &k));
    let v = f.dot(&r_norm);
    let out = &v + &f;
    Ok((
        out,
        SciCache {
            f: f.to_owned(),
            q,
            k,
            r_norm,
            v,
        },
    ))
}

/// `f' = f R' + f`.
pub fn sci_forward(f: ArrayView1<f64>, params: &SciParams) -> Result<Array1<f64>> {
    sci_forward_cached(f, params).map(|(o, _)| o)
}

/// Returns the gradient w.r.t. `f` and accumulates into `grad`.
pub(crate) fn sci_backward(
    params: &SciParams,
    cache: &SciCache,
    g: ArrayView1<f64>,
    grad: &mut SciParams,
) -> Array1<f64> {
    let d = g.len();
    let SciCache { f, q, k, r_norm, v } = cache;
    // through v = f R'
    let mut gf = g.to_owned() + r_norm.dot(&g);
    // d(loss)/dR_ij = -R'_ij g_j (f_i - v_j), column softmax of -R
    let mut gq = Array1::zeros(d);
    let mut gk = Array1::zeros(d);
    for i in 0..d {
        let mut acc_q = 0.0;
        for j in 0..d {
            let gr = -r_norm[[i, j]] * g[j] * (f[i] - v[j]);
            acc_q += gr * k[j];
            gk[j] += gr * q[i];
        }
        gq[i] = acc_q;
    }
    // q = f W_query, k = f W_key
    for a in 0..d {
        let fa = f[a];
        let mut row_q = grad.w_query.row_mut(a);
        row_q.scaled_add(fa, &gq);
        let mut row_k = grad.w_key.row_mut(a);
        row_k.scaled_add(fa, &gk);
    }
    gf += &params.w_query.dot(&gq);
    gf += &params.w_key.dot(&gk);
    gf
}
