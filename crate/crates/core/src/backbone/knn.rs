use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// For every row, the `k` nearest other rows by squared Euclidean distance,
/// nearest first; equal distances resolve to the lower index.
pub fn knn_graph(points: ArrayView2<f64>, k: usize) -> Result<Array2<usize>> {
    let n = points.nrows();
    if k >= n {
        return Err(Error::InvalidConfig(format!(
            "k_neighbors ({k}) must be below the point count ({n})"
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("knn input".into()));
    }
    let c = points.ncols();
    let owned;
    let flat: &[f64] = match points.as_slice() {
        Some(s) => s,
        None => {
            owned = points.to_owned();
            owned.as_slice().expect("standard layout")
        }
    };
    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        let xi = &flat[i * c..(i + 1) * c];
        for j in (i + 1)..n {
            let xj = &flat[j * c..(j + 1) * c];
            let d: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut out = Array2::zeros((n, k));
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    for i in 0..n {
        cand.clear();
        cand.extend((0..n).filter(|&j| j != i).map(|j| (dist[i * n + j], j)));
        if k > 0 && k < cand.len() {
            cand.select_nth_unstable_by(k - 1, order);
        }
        let head = &mut cand[..k];
        head.sort_unstable_by(order);
        for (slot, (_, j)) in head.iter().enumerate() {
            out[[i, slot]] = *j;
        }
    }
    Ok(out)
}
