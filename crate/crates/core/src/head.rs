//! Prototype classification head: class means, squared-distance softmax and
//! the episode cross-entropy. Parameter-free, but differentiable end to end.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Lower bound applied before taking the log of a probability.
pub const LOG_FLOOR: f64 = 1e-12;

/// Per-class means of `support`, with row `c` for local label `c`.
///
/// The way count is `max(labels) + 1`; every class in between must appear
/// and all must have the same number of shots.
pub fn compute_prototypes(support: &Array2<f64>, labels: &[usize]) -> Result<Array2<f64>> {
    if support.nrows() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} support rows but {} labels",
            support.nrows(),
            labels.len()
        )));
    }
    let n_way = labels.iter().max().map_or(0, |&m| m + 1);
    if n_way == 0 {
        return Err(Error::Empty("support set".into()));
    }
    let mut counts = vec![0usize; n_way];
    let mut protos = Array2::zeros((n_way, support.ncols()));
    for (row, &c) in support.rows().into_iter().zip(labels) {
        counts[c] += 1;
        let mut p = protos.row_mut(c);
        p += &row;
    }
    if let Some(c) = counts.iter().position(|&k| k == 0) {
        return Err(Error::CountMismatch(format!(
            "class {c} has no support examples"
        )));
    }
    if counts.iter().any(|&k| k != counts[0]) {
        return Err(Error::CountMismatch(format!(
            "unequal shots per class: {counts:?}"
        )));
    }
    protos /= counts[0] as f64;
    Ok(protos)
}

/// Spreads prototype gradients back onto the support rows.
pub fn prototypes_backward(g_protos: &Array2<f64>, labels: &[usize]) -> Array2<f64> {
    let shots = labels.len() / g_protos.nrows().max(1);
    let scale = 1.0 / shots.max(1) as f64;
    let mut g = Array2::zeros((labels.len(), g_protos.ncols()));
    for (mut row, &c) in g.rows_mut().into_iter().zip(labels) {
        row.assign(&(&g_protos.row(c) * scale));
    }
    g
}

/// Negative squared distances, `logits[j][i] = -‖q_j − p_i‖²`.
pub fn distance_logits(prototypes: &Array2<f64>, queries: &Array2<f64>) -> Result<Array2<f64>> {
    if prototypes.ncols() != queries.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "prototypes have {} channels, queries {}",
            prototypes.ncols(),
            queries.ncols()
        )));
    }
    let mut out = Array2::zeros((queries.nrows(), prototypes.nrows()));
    for (j, q) in queries.rows().into_iter().enumerate() {
        for (i, p) in prototypes.rows().into_iter().enumerate() {
            out[[j, i]] = -q.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    Ok(out)
}

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

/// Class probabilities for every query.
pub fn classify(prototypes: &Array2<f64>, queries: &Array2<f64>) -> Result<Array2<f64>> {
    distance_logits(prototypes, queries).map(|l| softmax_rows(&l))
}

fn check_labels(probs: &Array2<f64>, labels: &[usize]) -> Result<()> {
    if probs.nrows() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} probability rows but {} labels",
            probs.nrows(),
            labels.len()
        )));
    }
    if probs.nrows() == 0 {
        return Err(Error::Empty("query set".into()));
    }
    let n_way = probs.ncols();
    match labels.iter().find(|&&y| y >= n_way) {
        Some(&label) => Err(Error::LabelOutOfRange { label, n_way }),
        None => Ok(()),
    }
}

/// Cross-entropy averaged over both the queries and the ways.
///
/// The extra `1/N` means a uniform guess over five ways costs `ln 5 / 5`.
pub fn episode_loss(probs: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    check_labels(probs, labels)?;
    let (nq, n) = probs.dim();
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(j, &y)| probs[[j, y]].max(LOG_FLOOR).ln())
        .sum();
    Ok(-total / (n * nq) as f64)
}

/// Gradient of [`episode_loss`] with respect to the logits fed to the softmax.
pub fn loss_grad_logits(probs: &Array2<f64>, labels: &[usize]) -> Result<Array2<f64>> {
    check_labels(probs, labels)?;
    let (nq, n) = probs.dim();
    let scale = 1.0 / (n * nq) as f64;
    let mut g = probs * scale;
    for (j, &y) in labels.iter().enumerate() {
        if probs[[j, y]] < LOG_FLOOR {
            // the floor makes that term constant
            g.row_mut(j).fill(0.0);
        } else {
            g[[j, y]] -= scale;
        }
    }
    Ok(g)
}

/// Backpropagates through [`distance_logits`].
pub fn logits_backward(
    prototypes: &Array2<f64>,
    queries: &Array2<f64>,
    g_logits: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let mut gp = Array2::zeros(prototypes.dim());
    let mut gq = Array2::zeros(queries.dim());
    for (j, q) in queries.rows().into_iter().enumerate() {
        for (i, p) in prototypes.rows().into_iter().enumerate() {
            let g = g_logits[[j, i]];
            if g == 0.0 {
                continue;
            }
            let diff = &q - &p;
            // d(-|q-p|^2)/dq = -2(q-p)
            gq.row_mut(j).scaled_add(-2.0 * g, &diff);
            gp.row_mut(i).scaled_add(2.0 * g, &diff);
        }
    }
    (gp, gq)
}

/// Row argmax, ties to the lowest index.
pub fn predictions(probs: &Array2<f64>) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

pub fn episode_accuracy(probs: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    check_labels(probs, labels)?;
    let hits = predictions(probs)
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}
