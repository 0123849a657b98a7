//! Per-point building blocks with hand-written backward passes.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;
use rayon::prelude::*;

use crate::params::{
    join, visit_matrix, visit_matrix_mut, visit_vector, visit_vector_mut, Visit, VisitMut,
};
use crate::params::{TensorKind, Tensors};
use crate::rng::Rng;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const NORM_EPS: f64 = 1e-5;
pub const NORM_MOMENTUM: f64 = 0.1;

#[inline]
pub fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

#[inline]
pub fn leaky_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// `y = x W^T + b`, weight stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    /// Fan-in scaled uniform weights (He bound for the leaky rectifier), zero bias.
    pub fn init(out: usize, inp: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * inp as f64)).sqrt();
        let weight = Array2::from_shape_fn((out, inp), |_| rng.random_range(-bound..bound));
        Self {
            weight,
            bias: Array1::zeros(out),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }
}

impl Tensors for Dense {
    fn visit(&self, prefix: &str, v: Visit<'_>) {
        visit_matrix(
            &self.weight,
            &join(prefix, "weight"),
            TensorKind::Learnable,
            v,
        );
        visit_vector(&self.bias, &join(prefix, "bias"), TensorKind::Learnable, v);
    }

    fn visit_mut(&mut self, prefix: &str, v: VisitMut<'_>) {
        visit_matrix_mut(
            &mut self.weight,
            &join(prefix, "weight"),
            TensorKind::Learnable,
            v,
        );
        visit_vector_mut(
            &mut self.bias,
            &join(prefix, "bias"),
            TensorKind::Learnable,
            v,
        );
    }
}

/// Per-channel standardization with learnable scale/shift and tracked statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl Norm {
    pub fn new(c: usize) -> Self {
        Self {
            gamma: Array1::ones(c),
            beta: Array1::zeros(c),
            running_mean: Array1::zeros(c),
            running_var: Array1::ones(c),
        }
    }

    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = NORM_MOMENTUM;
        let unbias = if stats.count > 1 {
            stats.count as f64 / (stats.count - 1) as f64
        } else {
            1.0
        };
        Zip::from(&mut self.running_mean)
            .and(&stats.mean)
            .for_each(|r, &b| *r = (1.0 - m) * *r + m * b);
        Zip::from(&mut self.running_var)
            .and(&stats.var)
            .for_each(|r, &b| *r = (1.0 - m) * *r + m * b * unbias);
    }
}

impl Tensors for Norm {
    fn visit(&self, prefix: &str, v: Visit<'_>) {
        visit_vector(
            &self.gamma,
            &join(prefix, "gamma"),
            TensorKind::Learnable,
            v,
        );
        visit_vector(&self.beta, &join(prefix, "beta"), TensorKind::Learnable, v);
        visit_vector(
            &self.running_mean,
            &join(prefix, "running_mean"),
            TensorKind::Buffer,
            v,
        );
        visit_vector(
            &self.running_var,
            &join(prefix, "running_var"),
            TensorKind::Buffer,
            v,
        );
    }

    fn visit_mut(&mut self, prefix: &str, v: VisitMut<'_>) {
        visit_vector_mut(
            &mut self.gamma,
            &join(prefix, "gamma"),
            TensorKind::Learnable,
            v,
        );
        visit_vector_mut(
            &mut self.beta,
            &join(prefix, "beta"),
            TensorKind::Learnable,
            v,
        );
        visit_vector_mut(
            &mut self.running_mean,
            &join(prefix, "running_mean"),
            TensorKind::Buffer,
            v,
        );
        visit_vector_mut(
            &mut self.running_var,
            &join(prefix, "running_var"),
            TensorKind::Buffer,
            v,
        );
    }
}

/// Per-channel moments of one normalization call.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
    pub count: usize,
}

/// Whether normalization uses batch moments (training) or the tracked ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Cache of a row-wise normalization over a batch of per-cloud matrices.
pub struct NormCache {
    pub xhat: Vec<Array2<f64>>,
    pub inv_std: Array1<f64>,
    pub stats: Option<BatchStats>,
}

/// Moments over the rows of all matrices, reduced in batch order.
pub fn row_moments(xs: &[Array2<f64>]) -> BatchStats {
    let c = xs[0].ncols();
    let count: usize = xs.iter().map(|x| x.nrows()).sum();
    let sums: Vec<Array1<f64>> = xs.par_iter().map(|x| x.sum_axis(Axis(0))).collect();
    let mut mean = Array1::zeros(c);
    for s in &sums {
        mean += s;
    }
    mean /= count as f64;
    let sq: Vec<Array1<f64>> = xs
        .par_iter()
        .map(|x| {
            let d = x - &mean;
            (&d * &d).sum_axis(Axis(0))
        })
        .collect();
    let mut var = Array1::zeros(c);
    for s in &sq {
        var += s;
    }
    var /= count as f64;
    BatchStats { mean, var, count }
}

pub fn norm_forward(norm: &Norm, xs: &[Array2<f64>], mode: Mode) -> (Vec<Array2<f64>>, NormCache) {
    let stats = match mode {
        Mode::Train => Some(row_moments(xs)),
        Mode::Eval => None,
    };
    let (mean, var) = match &stats {
        Some(s) => (s.mean.clone(), s.var.clone()),
        None => (norm.running_mean.clone(), norm.running_var.clone()),
    };
    let inv_std = var.mapv(|v| 1.0 / (v + NORM_EPS).sqrt());
    let xhat: Vec<Array2<f64>> = xs.par_iter().map(|x| (x - &mean) * &inv_std).collect();
    let ys = xhat
        .par_iter()
        .map(|h| h * &norm.gamma + &norm.beta)
        .collect();
    (
        ys,
        NormCache {
            xhat,
            inv_std,
            stats,
        },
    )
}

/// Backward pass; in train mode the batch moments are functions of the input.
/// Accumulates into `grad` and returns the input gradient.
pub fn norm_backward(
    norm: &Norm,
    cache: &NormCache,
    gys: &[Array2<f64>],
    grad: &mut Norm,
) -> Vec<Array2<f64>> {
    let count: usize = gys.iter().map(|g| g.nrows()).sum();
    let c = norm.gamma.len();
    let mut sum_g = Array1::zeros(c);
    let mut sum_gx = Array1::zeros(c);
    let partial: Vec<(Array1<f64>, Array1<f64>)> = gys
        .par_iter()
        .zip(cache.xhat.par_iter())
        .map(|(g, h)| (g.sum_axis(Axis(0)), (g * h).sum_axis(Axis(0))))
        .collect();
    for (a, b) in &partial {
        sum_g += a;
        sum_gx += b;
    }
    grad.beta += &sum_g;
    grad.gamma += &sum_gx;
    // gradient w.r.t. xhat is gamma * g; its per-channel means:
    let (m1, m2) = if cache.stats.is_some() {
        (
            &sum_g * &norm.gamma / count as f64,
            &sum_gx * &norm.gamma / count as f64,
        )
    } else {
        (Array1::zeros(c), Array1::zeros(c))
    };
    let scale = &norm.gamma * &cache.inv_std;
    let inv_std = &cache.inv_std;
    gys.par_iter()
        .zip(cache.xhat.par_iter())
        .map(|(g, h)| {
            let gh = g * &scale;
            gh - &(&m1 * inv_std) - &(h * &(&m2 * inv_std))
        })
        .collect()
}

/// Column-wise maximum over the rows of each matrix; ties go to the lowest row.
pub fn max_pool(xs: &[Array2<f64>]) -> (Array2<f64>, Vec<Vec<usize>>) {
    let c = xs[0].ncols();
    let results: Vec<(Vec<f64>, Vec<usize>)> = xs
        .par_iter()
        .map(|x| {
            let mut best = x.row(0).to_vec();
            let mut arg = vec![0usize; c];
            for (i, row) in x.rows().into_iter().enumerate().skip(1) {
                for ch in 0..c {
                    if row[ch] > best[ch] {
                        best[ch] = row[ch];
                        arg[ch] = i;
                    }
                }
            }
            (best, arg)
        })
        .collect();
    let mut out = Array2::zeros((xs.len(), c));
    let mut args = Vec::with_capacity(xs.len());
    for (b, (vals, arg)) in results.into_iter().enumerate() {
        out.row_mut(b).assign(&Array1::from(vals));
        args.push(arg);
    }
    (out, args)
}

pub fn max_pool_backward(
    grad_out: &Array2<f64>,
    args: &[Vec<usize>],
    rows: usize,
) -> Vec<Array2<f64>> {
    let c = grad_out.ncols();
    args.iter()
        .enumerate()
        .map(|(b, arg)| {
            let mut g = Array2::zeros((rows, c));
            for ch in 0..c {
                g[[arg[ch], ch]] += grad_out[[b, ch]];
            }
            g
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_rectifier_values() {
        assert_eq!(leaky(2.0), 2.0);
        assert_eq!(leaky(-1.0), -0.2);
        assert_eq!(leaky_grad(-3.0), LEAKY_SLOPE);
    }

    #[test]
    fn max_pool_ties_pick_first_row() {
        let x = ndarray::array![[1.0, 5.0], [3.0, 5.0], [3.0, 0.0]];
        let (out, args) = max_pool(&[x]);
        assert_eq!(out.row(0).to_vec(), vec![3.0, 5.0]);
        assert_eq!(args[0], vec![1, 0]);
    }

    #[test]
    fn train_norm_standardizes() {
        let xs = vec![
            ndarray::array![[1.0, 2.0], [3.0, -2.0]],
            ndarray::array![[5.0, 0.0]],
        ];
        let (ys, _) = norm_forward(&Norm::new(2), &xs, Mode::Train);
        let stats = row_moments(&ys);
        for c in 0..2 {
            assert!(stats.mean[c].abs() < 1e-12);
            assert!((stats.var[c] - 1.0).abs() < 1e-4);
        }
    }
}
