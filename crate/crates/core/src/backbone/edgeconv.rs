//! EdgeConv over a fixed kNN graph.
//!
//! Edge feature `W [x_i ; x_j - x_i] + b` is evaluated as `A_i + B_j` with
//! `A = X (W_a - W_b)^T + b` and `B = X W_b^T`, so the dense work is per point
//! rather than per edge. Normalization and the leaky rectifier are monotone per
//! channel, which lets the max over a neighbourhood be found on `B` alone.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use super::ops::{leaky, leaky_grad, BatchStats, Dense, Mode, Norm, NORM_EPS};
use crate::error::{Error, Result};

pub struct EdgeConvCache {
    x: Vec<Array2<f64>>,
    a: Vec<Array2<f64>>,
    b: Vec<Array2<f64>>,
    nbrs: Vec<Array2<usize>>,
    /// Selected neighbour slot per (point, channel).
    sel: Vec<Array2<usize>>,
    pre: Vec<Array2<f64>>,
    mean: Array1<f64>,
    inv_std: Array1<f64>,
    pub(crate) stats: Option<BatchStats>,
    normalized: bool,
}

/// Per-cloud gradients: weight halves, bias, input features.
type CloudGrads = (Array2<f64>, Array2<f64>, Array1<f64>, Array2<f64>);

fn split_weight(dense: &Dense) -> (Array2<f64>, Array2<f64>) {
    let c = dense.in_dim() / 2;
    let wa = dense.weight.slice(s![.., ..c]);
    let wb = dense.weight.slice(s![.., c..]);
    (&wa - &wb, wb.to_owned())
}

fn row(m: &[f64], i: usize, c: usize) -> &[f64] {
    &m[i * c..(i + 1) * c]
}

fn edge_moments(a: &[Array2<f64>], b: &[Array2<f64>], nbrs: &[Array2<usize>]) -> BatchStats {
    let c = a[0].ncols();
    let count: usize = nbrs.iter().map(|g| g.len()).sum();
    let sums: Vec<Vec<f64>> = (0..a.len())
        .into_par_iter()
        .map(|bi| {
            let (a, b) = (slice(&a[bi]), slice(&b[bi]));
            let k = nbrs[bi].ncols() as f64;
            let mut s = vec![0.0; c];
            for (i, nb) in nbrs[bi].rows().into_iter().enumerate() {
                for (sv, av) in s.iter_mut().zip(row(a, i, c)) {
                    *sv += k * av;
                }
                for &p in nb {
                    for (sv, bv) in s.iter_mut().zip(row(b, p, c)) {
                        *sv += bv;
                    }
                }
            }
            s
        })
        .collect();
    let mut mean = Array1::zeros(c);
    for s in &sums {
        mean += &ArrayView1::from(s);
    }
    mean /= count as f64;
    let mean_s = slice1(&mean);
    let sq: Vec<Vec<f64>> = (0..a.len())
        .into_par_iter()
        .map(|bi| {
            let (a, b) = (slice(&a[bi]), slice(&b[bi]));
            let mut s = vec![0.0; c];
            let mut centred = vec![0.0; c];
            for (i, nb) in nbrs[bi].rows().into_iter().enumerate() {
                for ((cv, av), mv) in centred.iter_mut().zip(row(a, i, c)).zip(mean_s) {
                    *cv = av - mv;
                }
                for &p in nb {
                    for ((sv, bv), cv) in s.iter_mut().zip(row(b, p, c)).zip(&centred) {
                        let d = cv + bv;
                        *sv += d * d;
                    }
                }
            }
            s
        })
        .collect();
    let mut var = Array1::zeros(c);
    for s in &sq {
        var += &ArrayView1::from(s);
    }
    var /= count as f64;
    BatchStats { mean, var, count }
}

fn slice(m: &Array2<f64>) -> &[f64] {
    m.as_slice().expect("standard layout")
}

/// Matrix products may come back column-major (e.g. single-channel inputs);
/// the edge loops index rows of contiguous slices.
fn standard(m: Array2<f64>) -> Array2<f64> {
    if m.is_standard_layout() {
        m
    } else {
        m.as_standard_layout().into_owned()
    }
}

fn slice1(m: &Array1<f64>) -> &[f64] {
    m.as_slice().expect("standard layout")
}

/// Batched forward over per-cloud feature matrices and neighbour graphs.
pub fn edgeconv_forward(
    dense: &Dense,
    norm: Option<&Norm>,
    xs: &[Array2<f64>],
    nbrs: Vec<Array2<usize>>,
    mode: Mode,
) -> (Vec<Array2<f64>>, EdgeConvCache) {
    let (p, q) = split_weight(dense);
    let a: Vec<Array2<f64>> = xs
        .par_iter()
        .map(|x| {
            let mut a = standard(x.dot(&p.t()));
            a += &dense.bias;
            a
        })
        .collect();
    let b: Vec<Array2<f64>> = xs.par_iter().map(|x| standard(x.dot(&q.t()))).collect();
    let c = dense.out_dim();

    let (stats, mean, inv_std, gamma, beta) = match norm {
        None => (
            None,
            Array1::zeros(c),
            Array1::ones(c),
            Array1::ones(c),
            Array1::zeros(c),
        ),
        Some(nm) => {
            let stats = match mode {
                Mode::Train => Some(edge_moments(&a, &b, &nbrs)),
                Mode::Eval => None,
            };
            let (mean, var) = match &stats {
                Some(s) => (s.mean.clone(), s.var.clone()),
                None => (nm.running_mean.clone(), nm.running_var.clone()),
            };
            let inv_std = var.mapv(|v| 1.0 / (v + NORM_EPS).sqrt());
            (stats, mean, inv_std, nm.gamma.clone(), nm.beta.clone())
        }
    };
    let scale = &gamma * &inv_std;

    let per_cloud: Vec<(Array2<usize>, Array2<f64>, Array2<f64>)> = (0..xs.len())
        .into_par_iter()
        .map(|bi| {
            let g = &nbrs[bi];
            let (n, k) = g.dim();
            let (a, b) = (slice(&a[bi]), slice(&b[bi]));
            let (scale, mean, beta) = (slice1(&scale), slice1(&mean), slice1(&beta));
            let mut sel = Array2::zeros((n, c));
            let mut pre = Array2::zeros((n, c));
            let mut out = Array2::zeros((n, c));
            // a plain max over sign-flipped B picks the min where the scale is negative
            let sign: Vec<f64> = scale
                .iter()
                .map(|&v| if v >= 0.0 { 1.0 } else { -1.0 })
                .collect();
            let mut signed = b.to_vec();
            for r in signed.chunks_exact_mut(c) {
                for (v, s) in r.iter_mut().zip(&sign) {
                    *v *= s;
                }
            }
            let mut best = vec![0.0; c];
            let mut best_j = vec![0usize; c];
            for i in 0..n {
                best.copy_from_slice(row(&signed, g[[i, 0]], c));
                best_j.fill(0);
                for j in 1..k {
                    let brow = row(&signed, g[[i, j]], c);
                    for ch in 0..c {
                        let better = brow[ch] > best[ch];
                        best[ch] = if better { brow[ch] } else { best[ch] };
                        best_j[ch] = if better { j } else { best_j[ch] };
                    }
                }
                let arow = row(a, i, c);
                for ch in 0..c {
                    let bv = sign[ch] * best[ch];
                    let u = scale[ch] * (arow[ch] + bv - mean[ch]) + beta[ch];
                    sel[[i, ch]] = best_j[ch];
                    pre[[i, ch]] = u;
                    out[[i, ch]] = leaky(u);
                }
            }
            (sel, pre, out)
        })
        .collect();

    let mut sel = Vec::with_capacity(xs.len());
    let mut pre = Vec::with_capacity(xs.len());
    let mut outs = Vec::with_capacity(xs.len());
    for (s, p, o) in per_cloud {
        sel.push(s);
        pre.push(p);
        outs.push(o);
    }
    let cache = EdgeConvCache {
        x: xs.to_vec(),
        a,
        b,
        nbrs,
        sel,
        pre,
        mean,
        inv_std,
        stats,
        normalized: norm.is_some(),
    };
    (outs, cache)
}

/// Accumulates parameter gradients and returns the gradient w.r.t. the input
/// features. The neighbour graph is treated as a constant.
pub fn edgeconv_backward(
    dense: &Dense,
    norm: Option<&Norm>,
    cache: &EdgeConvCache,
    gys: &[Array2<f64>],
    grad_dense: &mut Dense,
    grad_norm: Option<&mut Norm>,
) -> Vec<Array2<f64>> {
    let c = dense.out_dim();
    let gamma = norm.map_or_else(|| Array1::ones(c), |n| n.gamma.clone());
    let inv_std = &cache.inv_std;
    let scale = &gamma * inv_std;

    // gradient at the pre-activation of the selected edge
    let gus: Vec<Array2<f64>> = gys
        .par_iter()
        .zip(cache.pre.par_iter())
        .map(|(g, u)| {
            let mut gu = g.clone();
            gu.zip_mut_with(u, |gv, &uv| *gv *= leaky_grad(uv));
            gu
        })
        .collect();

    let batch_stats = cache.normalized && cache.stats.is_some();
    let xhat_sel = |bi: usize, i: usize, ch: usize| {
        let p = cache.nbrs[bi][[i, cache.sel[bi][[i, ch]]]];
        (cache.a[bi][[i, ch]] + cache.b[bi][[p, ch]] - cache.mean[ch]) * inv_std[ch]
    };

    let (g1, g2) = if cache.normalized {
        let gn = grad_norm.expect("norm gradient buffer");
        let mut sum_gu = Array1::<f64>::zeros(c);
        let mut sum_gux = Array1::<f64>::zeros(c);
        for (bi, gu) in gus.iter().enumerate() {
            for i in 0..gu.nrows() {
                for ch in 0..c {
                    sum_gu[ch] += gu[[i, ch]];
                    sum_gux[ch] += gu[[i, ch]] * xhat_sel(bi, i, ch);
                }
            }
        }
        gn.beta += &sum_gu;
        gn.gamma += &sum_gux;
        if batch_stats {
            let count = cache.stats.as_ref().expect("batch stats").count as f64;
            (&sum_gu * &gamma / count, &sum_gux * &gamma / count)
        } else {
            (Array1::zeros(c), Array1::zeros(c))
        }
    } else {
        (Array1::zeros(c), Array1::zeros(c))
    };

    let grads: Vec<(Array2<f64>, Array2<f64>)> = (0..gys.len())
        .into_par_iter()
        .map(|bi| {
            let g = &cache.nbrs[bi];
            let (n, k) = g.dim();
            let mut ga = Array2::<f64>::zeros((n, c));
            let mut gb = Array2::<f64>::zeros((n, c));
            let gu = &gus[bi];
            for i in 0..n {
                for ch in 0..c {
                    let v = gu[[i, ch]] * scale[ch];
                    ga[[i, ch]] += v;
                    gb[[g[[i, cache.sel[bi][[i, ch]]]], ch]] += v;
                }
            }
            if batch_stats {
                // Every edge feeds the batch moments. Per edge the gradient is
                // c1_i - h * b_p, with c1 depending on the centre point only.
                let (a, b) = (slice(&cache.a[bi]), slice(&cache.b[bi]));
                let (mean, inv_std) = (slice1(&cache.mean), slice1(inv_std));
                let h: Vec<f64> = (0..c)
                    .map(|ch| inv_std[ch] * inv_std[ch] * g2[ch])
                    .collect();
                let mut indeg = vec![0usize; n];
                let mut c1 = vec![0.0; c];
                let mut bsum = vec![0.0; c];
                let ga_s = ga.as_slice_mut().expect("standard layout");
                let gb_s = gb.as_slice_mut().expect("standard layout");
                for i in 0..n {
                    let arow = row(a, i, c);
                    for ch in 0..c {
                        c1[ch] = -inv_std[ch] * g1[ch] - h[ch] * (arow[ch] - mean[ch]);
                    }
                    bsum.fill(0.0);
                    for j in 0..k {
                        let p = g[[i, j]];
                        indeg[p] += 1;
                        for (sv, bv) in bsum.iter_mut().zip(row(b, p, c)) {
                            *sv += bv;
                        }
                        for (gv, cv) in gb_s[p * c..(p + 1) * c].iter_mut().zip(&c1) {
                            *gv += cv;
                        }
                    }
                    let garow = &mut ga_s[i * c..(i + 1) * c];
                    for ch in 0..c {
                        garow[ch] += k as f64 * c1[ch] - h[ch] * bsum[ch];
                    }
                }
                for (p, &d) in indeg.iter().enumerate() {
                    if d == 0 {
                        continue;
                    }
                    let brow = row(b, p, c);
                    let gbrow = &mut gb_s[p * c..(p + 1) * c];
                    for ch in 0..c {
                        gbrow[ch] -= d as f64 * h[ch] * brow[ch];
                    }
                }
            }
            (ga, gb)
        })
        .collect();

    let (p, q) = split_weight(dense);
    let c_in = dense.in_dim() / 2;
    let parts: Vec<CloudGrads> = grads
        .par_iter()
        .zip(cache.x.par_iter())
        .map(|((ga, gb), x)| {
            let gp = ga.t().dot(x);
            let gq = gb.t().dot(x);
            let gbias = ga.sum_axis(ndarray::Axis(0));
            let gx = ga.dot(&p) + gb.dot(&q);
            (gp, gq, gbias, gx)
        })
        .collect();
    let mut gxs = Vec::with_capacity(parts.len());
    for (gp, gq, gbias, gx) in parts {
        {
            let mut wa = grad_dense.weight.slice_mut(s![.., ..c_in]);
            wa += &gp;
        }
        {
            let mut wb = grad_dense.weight.slice_mut(s![.., c_in..]);
            wb += &(&gq - &gp);
        }
        grad_dense.bias += &gbias;
        gxs.push(gx);
    }
    gxs
}

/// One EdgeConv layer without normalization on a single cloud.
pub fn edgeconv_layer(
    features: ArrayView2<f64>,
    neighbors: &Array2<usize>,
    dense: &Dense,
) -> Result<Array2<f64>> {
    if dense.in_dim() != 2 * features.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "layer expects {} input channels, features have {}",
            dense.in_dim() / 2,
            features.ncols()
        )));
    }
    if neighbors.nrows() != features.nrows() || neighbors.ncols() == 0 {
        return Err(Error::DimensionMismatch(
            "neighbour matrix must have one non-empty row per point".into(),
        ));
    }
    if neighbors.iter().any(|&j| j >= features.nrows()) {
        return Err(Error::DimensionMismatch(
            "neighbour index out of range".into(),
        ));
    }
    let (mut out, _) = edgeconv_forward(
        dense,
        None,
        &[features.to_owned()],
        vec![neighbors.clone()],
        Mode::Eval,
    );
    Ok(out.remove(0))
}

#[cfg(test)]
mod tests {
    use ndarray::array;
    use rand::Rng as _;

    use super::*;
    use crate::backbone::knn::knn_graph;
    use crate::rng::rng_from;

    /// Direct per-edge evaluation: every edge feature built from the
    /// concatenated vector, then a running max.
    fn oracle(x: &Array2<f64>, g: &Array2<usize>, dense: &Dense) -> Array2<f64> {
        let (n, c) = x.dim();
        let co = dense.out_dim();
        let mut out = Array2::from_elem((n, co), f64::NEG_INFINITY);
        for i in 0..n {
            for &j in g.row(i) {
                let mut concat = vec![0.0; 2 * c];
                for d in 0..c {
                    concat[d] = x[[i, d]];
                    concat[c + d] = x[[j, d]] - x[[i, d]];
                }
                for o in 0..co {
                    let mut e = dense.bias[o];
                    for (d, v) in concat.iter().enumerate() {
                        e += dense.weight[[o, d]] * v;
                    }
                    let e = if e > 0.0 { e } else { 0.2 * e };
                    out[[i, o]] = out[[i, o]].max(e);
                }
            }
        }
        out
    }

    #[test]
    fn identical_rows_give_identical_outputs() {
        let mut rng = rng_from(1);
        let dense = Dense::init(5, 6, &mut rng);
        let x = Array2::from_shape_fn((6, 3), |(_, c)| c as f64 * 0.3 - 0.1);
        let g = knn_graph(x.view(), 3).unwrap();
        let y = edgeconv_layer(x.view(), &g, &dense).unwrap();
        for i in 1..6 {
            assert_eq!(y.row(i), y.row(0));
        }
    }

    #[test]
    fn single_neighbour_is_that_edge() {
        let mut rng = rng_from(3);
        let dense = Dense::init(4, 4, &mut rng);
        let x = array![[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]];
        let g = knn_graph(x.view(), 1).unwrap();
        let y = edgeconv_layer(x.view(), &g, &dense).unwrap();
        let expect = oracle(&x, &g, &dense);
        for (a, b) in y.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_channel_features() {
        let mut rng = rng_from(4);
        let dense = Dense::init(3, 2, &mut rng);
        let x = array![[0.1], [0.7], [-0.4], [0.2]];
        let g = knn_graph(x.view(), 2).unwrap();
        let y = edgeconv_layer(x.view(), &g, &dense).unwrap();
        let expect = oracle(&x, &g, &dense);
        for (a, b) in y.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_scalar_oracle_on_random_instances() {
        let mut rng = rng_from(11);
        for _ in 0..20 {
            let x = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
            let mut dense = Dense::init(3, 4, &mut rng);
            dense.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
            let k = rng.random_range(1..4);
            let g = knn_graph(x.view(), k).unwrap();
            let y = edgeconv_layer(x.view(), &g, &dense).unwrap();
            let expect = oracle(&x, &g, &dense);
            for (a, b) in y.iter().zip(expect.iter()) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut rng = rng_from(0);
        let dense = Dense::init(3, 6, &mut rng);
        let x = array![[0.0, 1.0], [1.0, 0.0]];
        let g = array![[1usize], [0]];
        assert!(edgeconv_layer(x.view(), &g, &dense).is_err());
    }
}
