//! Cross-instance fusion: an anchor feature is stacked with its most
//! cosine-similar features from the other set, a two-layer 1x1 meta-learner
//! scores every slot per channel, and the output is the slot-softmax
//! weighted sum of the stack.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};

use crate::backbone::{leaky, leaky_grad, Dense};
use crate::error::{Error, Result};
use crate::params::{join, Tensors, Visit, VisitMut};
use crate::rng::Rng;

/// One branch of the meta-learner. `f_a` maps the slot axis to `h` hidden
/// units, `f_b` maps back; both are shared across channels. Sized for
/// `capacity` slots; fewer slots use the leading sub-block.
#[derive(Debug, Clone, PartialEq)]
pub struct CifBranch {
    pub f_a: Dense,
    pub f_b: Dense,
}

impl CifBranch {
    pub fn init(capacity: usize, hidden: usize, rng: &mut Rng) -> Self {
        Self {
            f_a: Dense::init(hidden, capacity, rng),
            f_b: Dense::init(capacity, hidden, rng),
        }
    }

    pub fn zeros(capacity: usize, hidden: usize) -> Self {
        Self {
            f_a: Dense {
                weight: Array2::zeros((hidden, capacity)),
                bias: Array1::zeros(hidden),
            },
            f_b: Dense {
                weight: Array2::zeros((capacity, hidden)),
                bias: Array1::zeros(capacity),
            },
        }
    }

    /// Maximum number of slots (anchor included).
    pub fn capacity(&self) -> usize {
        self.f_a.in_dim()
    }

    pub fn hidden(&self) -> usize {
        self.f_a.out_dim()
    }

    fn visit_named(&self, prefix: &str, names: (&str, &str), v: Visit<'_>) {
        self.f_a.visit(&join(prefix, names.0), v);
        self.f_b.visit(&join(prefix, names.1), v);
    }

    fn visit_named_mut(&mut self, prefix: &str, names: (&str, &str), v: VisitMut<'_>) {
        self.f_a.visit_mut(&join(prefix, names.0), v);
        self.f_b.visit_mut(&join(prefix, names.1), v);
    }
}

/// Prototype branch (`f1`, `f2`) and query branch (`f3`, `f4`); separate storage.
#[derive(Debug, Clone, PartialEq)]
pub struct CifParams {
    pub proto: CifBranch,
    pub query: CifBranch,
}

impl Tensors for CifParams {
    fn visit(&self, prefix: &str, v: Visit<'_>) {
        self.proto
            .visit_named(&join(prefix, "proto"), ("f1", "f2"), v);
        self.query
            .visit_named(&join(prefix, "query"), ("f3", "f4"), v);
    }

    fn visit_mut(&mut self, prefix: &str, v: VisitMut<'_>) {
        self.proto
            .visit_named_mut(&join(prefix, "proto"), ("f1", "f2"), v);
        self.query
            .visit_named_mut(&join(prefix, "query"), ("f3", "f4"), v);
    }
}

/// Indices of the `k` candidates most cosine-similar to `anchor`, best first.
/// Zero vectors have similarity 0; ties go to the lower index.
pub fn cosine_topk(
    anchor: ArrayView1<f64>,
    candidates: &[ArrayView1<f64>],
    k: usize,
) -> Vec<usize> {
    let na = anchor.dot(&anchor).sqrt();
    let mut scored: Vec<(f64, usize)> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let nc = c.dot(c).sqrt();
            let sim = if na == 0.0 || nc == 0.0 {
                0.0
            } else {
                anchor.dot(c) / (na * nc)
            };
            (sim, i)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, i)| i).collect()
}

pub struct CifCache {
    z: Array2<f64>,
    h_pre: Array2<f64>,
    hidden: Array2<f64>,
    alpha: Array2<f64>,
}

impl CifCache {
    /// Per-channel slot weights, `d x (K+1)`.
    pub fn slot_weights(&self) -> &Array2<f64> {
        &self.alpha
    }
}

fn stack(anchor: ArrayView1<f64>, selected: &[ArrayView1<f64>]) -> Result<Array2<f64>> {
    let d = anchor.len();
    let mut z = Array2::zeros((d, selected.len() + 1));
    z.column_mut(0).assign(&anchor);
    for (s, f) in selected.iter().enumerate() {
        if f.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "selected feature has {} channels, anchor has {d}",
                f.len()
            )));
        }
        z.column_mut(s + 1).assign(f);
    }
    Ok(z)
}

pub(crate) fn cif_forward_cached(
    anchor: ArrayView1<f64>,
    selected: &[ArrayView1<f64>],
    branch: &CifBranch,
) -> Result<(Array1<f64>, CifCache)> {
    let slots = selected.len() + 1;
    if slots > branch.capacity() {
        return Err(Error::DimensionMismatch(format!(
            "{slots} slots exceed the branch capacity of {}",
            branch.capacity()
        )));
    }
    let z = stack(anchor, selected)?;
    let w1 = branch.f_a.weight.slice(s![.., ..slots]);
    let w2 = branch.f_b.weight.slice(s![..slots, ..]);
    let b2 = branch.f_b.bias.slice(s![..slots]);

    let mut h_pre = z.dot(&w1.t());
    h_pre += &branch.f_a.bias;
    let hidden = h_pre.mapv(leaky);
    let mut logits = hidden.dot(&w2.t());
    logits += &b2;

    let mut alpha = logits;
    for mut row in alpha.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - m).exp());
        let total = row.sum();
        row.mapv_inplace(|x| x / total);
    }
    let out = (&alpha * &z).sum_axis(Axis(1));
    Ok((
        out,
        CifCache {
            z,
            h_pre,
            hidden,
            alpha,
        },
    ))
}

/// Fuses `anchor` with `selected` through one branch of the meta-learner.
pub fn cif_fuse(
    anchor: ArrayView1<f64>,
    selected: &[ArrayView1<f64>],
    branch: &CifBranch,
) -> Result<Array1<f64>> {
    cif_forward_cached(anchor, selected, branch).map(|(o, _)| o)
}

/// Returns the gradient w.r.t. the stacked slots (`d x (K+1)`).
pub(crate) fn cif_backward(
    branch: &CifBranch,
    cache: &CifCache,
    g: ArrayView1<f64>,
    grad: &mut CifBranch,
) -> Array2<f64> {
    let CifCache {
        z,
        h_pre,
        hidden,
        alpha,
    } = cache;
    let slots = z.ncols();
    let g_col = g.insert_axis(Axis(1));
    let mut gz = alpha * &g_col;
    let g_alpha = z * &g_col;
    let dot = (alpha * &g_alpha).sum_axis(Axis(1)).insert_axis(Axis(1));
    let g_logits = alpha * &(&g_alpha - &dot);

    let w1 = branch.f_a.weight.slice(s![.., ..slots]);
    let w2 = branch.f_b.weight.slice(s![..slots, ..]);
    {
        let mut gw2 = grad.f_b.weight.slice_mut(s![..slots, ..]);
        gw2 += &g_logits.t().dot(hidden);
        let mut gb2 = grad.f_b.bias.slice_mut(s![..slots]);
        gb2 += &g_logits.sum_axis(Axis(0));
    }
    let mut g_h = g_logits.dot(&w2);
    g_h.zip_mut_with(h_pre, |gv, &x| *gv *= leaky_grad(x));
    {
        let mut gw1 = grad.f_a.weight.slice_mut(s![.., ..slots]);
        gw1 += &g_h.t().dot(z);
        grad.f_a.bias += &g_h.sum_axis(Axis(0));
    }
    gz += &g_h.dot(&w1);
    gz
}

#[cfg(test)]
mod tests {
    use ndarray::array;
    use rand::Rng as _;

    use super::*;
    use crate::rng::rng_from;

    /// Per-channel scalar evaluation of the weight matrix and slot softmax.
    #[allow(clippy::needless_range_loop)]
    pub(crate) fn cif_oracle(anchor: &[f64], selected: &[Vec<f64>], b: &CifBranch) -> Vec<f64> {
        let d = anchor.len();
        let slots = selected.len() + 1;
        let h = b.hidden();
        (0..d)
            .map(|c| {
                let z: Vec<f64> = std::iter::once(anchor[c])
                    .chain(selected.iter().map(|s| s[c]))
                    .collect();
                let hid: Vec<f64> = (0..h)
                    .map(|u| {
                        let mut a = b.f_a.bias[u];
                        for s in 0..slots {
                            a += b.f_a.weight[[u, s]] * z[s];
                        }
                        if a > 0.0 {
                            a
                        } else {
                            0.2 * a
                        }
                    })
                    .collect();
                let w: Vec<f64> = (0..slots)
                    .map(|s| {
                        let mut a = b.f_b.bias[s];
                        for u in 0..h {
                            a += b.f_b.weight[[s, u]] * hid[u];
                        }
                        a
                    })
                    .collect();
                let denom: f64 = w.iter().map(|x| x.exp()).sum();
                (0..slots).map(|s| w[s].exp() / denom * z[s]).sum()
            })
            .collect()
    }

    #[test]
    fn cosine_picks_aligned_candidate() {
        let a = array![1.0, 0.0];
        let c = [array![2.0, 0.0], array![0.0, 1.0], array![-1.0, 0.0]];
        let views: Vec<_> = c.iter().map(|x| x.view()).collect();
        assert_eq!(cosine_topk(a.view(), &views, 1), vec![0]);
        assert_eq!(cosine_topk(a.view(), &views, 3), vec![0, 1, 2]);
        assert!(cosine_topk(a.view(), &views, 0).is_empty());
        assert_eq!(cosine_topk(a.view(), &views, 10).len(), 3);
    }

    #[test]
    fn cosine_ties_and_zero_vectors() {
        let a = array![1.0, 1.0];
        let c = [
            array![0.0, 0.0],
            array![-1.0, 1.0],
            array![3.0, 3.0],
            array![1.0, 1.0],
        ];
        let views: Vec<_> = c.iter().map(|x| x.view()).collect();
        // sims: 0 (zero vector), 0, 1, 1
        assert_eq!(cosine_topk(a.view(), &views, 4), vec![2, 3, 0, 1]);
        let zero = array![0.0, 0.0];
        assert_eq!(cosine_topk(zero.view(), &views, 2), vec![0, 1]);
    }

    #[test]
    fn cosine_matches_sort_oracle() {
        let mut rng = rng_from(8);
        for _ in 0..20 {
            let anchor = Array1::from_shape_fn(8, |_| rng.random_range(-1.0..1.0));
            let cands: Vec<Array1<f64>> = (0..10)
                .map(|_| Array1::from_shape_fn(8, |_| rng.random_range(-1.0..1.0)))
                .collect();
            let views: Vec<_> = cands.iter().map(|x| x.view()).collect();
            let mut sims: Vec<(f64, usize)> = cands
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let num: f64 = (0..8).map(|j| anchor[j] * c[j]).sum();
                    let na: f64 = (0..8).map(|j| anchor[j] * anchor[j]).sum::<f64>().sqrt();
                    let nc: f64 = (0..8).map(|j| c[j] * c[j]).sum::<f64>().sqrt();
                    (num / (na * nc), i)
                })
                .collect();
            sims.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            let expect: Vec<usize> = sims[..4].iter().map(|x| x.1).collect();
            assert_eq!(cosine_topk(anchor.view(), &views, 4), expect);
        }
    }

    #[test]
    fn empty_fusion_is_identity() {
        let mut rng = rng_from(1);
        let b = CifBranch::init(4, 5, &mut rng);
        let anchor = array![0.3, -1.7, 2.5];
        let out = cif_fuse(anchor.view(), &[], &b).unwrap();
        assert_eq!(out, anchor);
    }

    #[test]
    fn constant_weights_average_slots() {
        let b = CifBranch::zeros(2, 3);
        let out = cif_fuse(array![1.0, 0.0].view(), &[array![3.0, 2.0].view()], &b).unwrap();
        assert_eq!(out.to_vec(), vec![2.0, 1.0]);
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut rng = rng_from(21);
        for _ in 0..20 {
            let mut b = CifBranch::init(3, 3, &mut rng);
            b.f_a.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
            b.f_b.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
            let anchor: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let sel: Vec<Vec<f64>> = (0..2)
                .map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let a = Array1::from(anchor.clone());
            let s: Vec<Array1<f64>> = sel.iter().map(|v| Array1::from(v.clone())).collect();
            let views: Vec<_> = s.iter().map(|x| x.view()).collect();
            let (out, cache) = cif_forward_cached(a.view(), &views, &b).unwrap();
            let expect = cif_oracle(&anchor, &sel, &b);
            for (x, y) in out.iter().zip(&expect) {
                assert!((x - y).abs() < 1e-9);
            }
            for row in cache.slot_weights().rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
            // convex combination of the slots
            for c in 0..2 {
                let vals: Vec<f64> = std::iter::once(anchor[c])
                    .chain(sel.iter().map(|v| v[c]))
                    .collect();
                let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                assert!(out[c] >= lo - 1e-12 && out[c] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn too_many_slots_is_an_error() {
        let b = CifBranch::zeros(2, 3);
        let x = array![1.0, 1.0];
        assert!(cif_fuse(x.view(), &[x.view(), x.view()], &b).is_err());
    }
}
