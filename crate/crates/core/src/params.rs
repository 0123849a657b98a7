//! Named tensor traversal shared by the optimizer, gradient checks and the
//! checkpoint container.

use ndarray::{Array1, Array2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    /// Updated by the optimizer.
    Learnable,
    /// Saved in checkpoints but not differentiated (normalization running stats).
    Buffer,
}

/// Receives `(name, kind, shape, values)` for each tensor.
pub type Visit<'a> = &'a mut dyn FnMut(&str, TensorKind, &[usize], &[f64]);
pub type VisitMut<'a> = &'a mut dyn FnMut(&str, TensorKind, &[usize], &mut [f64]);

pub trait Tensors {
    fn visit(&self, prefix: &str, v: Visit<'_>);
    fn visit_mut(&mut self, prefix: &str, v: VisitMut<'_>);
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn visit_matrix(m: &Array2<f64>, name: &str, kind: TensorKind, v: Visit<'_>) {
    v(
        name,
        kind,
        m.shape(),
        m.as_slice().expect("standard layout"),
    );
}

pub(crate) fn visit_matrix_mut(m: &mut Array2<f64>, name: &str, kind: TensorKind, v: VisitMut<'_>) {
    let shape = m.shape().to_vec();
    v(
        name,
        kind,
        &shape,
        m.as_slice_mut().expect("standard layout"),
    );
}

pub(crate) fn visit_vector(a: &Array1<f64>, name: &str, kind: TensorKind, v: Visit<'_>) {
    v(
        name,
        kind,
        a.shape(),
        a.as_slice().expect("standard layout"),
    );
}

pub(crate) fn visit_vector_mut(a: &mut Array1<f64>, name: &str, kind: TensorKind, v: VisitMut<'_>) {
    let shape = a.shape().to_vec();
    v(
        name,
        kind,
        &shape,
        a.as_slice_mut().expect("standard layout"),
    );
}

/// Learnable values concatenated in visit order.
pub fn flatten<T: Tensors + ?Sized>(t: &T) -> Vec<f64> {
    let mut out = Vec::new();
    t.visit("", &mut |_, kind, _, data| {
        if kind == TensorKind::Learnable {
            out.extend_from_slice(data);
        }
    });
    out
}

/// Inverse of [`flatten`]. Panics if `values` has the wrong length.
pub fn unflatten<T: Tensors + ?Sized>(t: &mut T, values: &[f64]) {
    let mut offset = 0;
    t.visit_mut("", &mut |_, kind, _, data| {
        if kind == TensorKind::Learnable {
            data.copy_from_slice(&values[offset..offset + data.len()]);
            offset += data.len();
        }
    });
    assert_eq!(offset, values.len(), "flat parameter length mismatch");
}

pub fn num_learnable<T: Tensors + ?Sized>(t: &T) -> usize {
    let mut n = 0;
    t.visit("", &mut |_, kind, _, data| {
        if kind == TensorKind::Learnable {
            n += data.len();
        }
    });
    n
}

/// Same structure with every tensor zeroed; used as a gradient accumulator.
pub fn zeros_like<T: Tensors + Clone>(t: &T) -> T {
    let mut z = t.clone();
    z.visit_mut("", &mut |_, _, _, data| data.fill(0.0));
    z
}

pub fn all_finite<T: Tensors + ?Sized>(t: &T) -> bool {
    let mut ok = true;
    t.visit("", &mut |_, _, _, data| {
        ok &= data.iter().all(|v| v.is_finite());
    });
    ok
}
