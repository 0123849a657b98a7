use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::rng_from;

/// An unordered set of 3D points stored as an `n x 3` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Array2<f64>,
}

impl PointCloud {
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.ncols() != 3 {
            return Err(Error::InvalidCloud(format!(
                "expected 3 columns, got {}",
                points.ncols()
            )));
        }
        if points.nrows() == 0 {
            return Err(Error::InvalidCloud("cloud has no points".into()));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCloud("non-finite coordinate".into()));
        }
        Ok(Self { points })
    }

    pub fn from_rows(rows: &[[f64; 3]]) -> Result<Self> {
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let points = Array2::from_shape_vec((rows.len(), 3), flat)
            .map_err(|e| Error::InvalidCloud(e.to_string()))?;
        Self::new(points)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn into_points(self) -> Array2<f64> {
        self.points
    }

    pub fn centroid(&self) -> [f64; 3] {
        let m = self.points.mean_axis(Axis(0)).expect("non-empty cloud");
        [m[0], m[1], m[2]]
    }

    pub fn max_norm(&self) -> f64 {
        self.points
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .fold(0.0, f64::max)
    }
}

impl AsRef<PointCloud> for PointCloud {
    fn as_ref(&self) -> &PointCloud {
        self
    }
}

/// A cloud with its class label. Clouds are shared so episodes can be built
/// without copying coordinates.
#[derive(Debug, Clone)]
pub struct LabeledExample {
    pub cloud: Arc<PointCloud>,
    pub class_id: i64,
    pub instance_id: u64,
}

impl LabeledExample {
    pub fn new(cloud: PointCloud, class_id: i64, instance_id: u64) -> Self {
        Self {
            cloud: Arc::new(cloud),
            class_id,
            instance_id,
        }
    }
}

/// Draws `n` rows: without replacement when the cloud is large enough,
/// with replacement otherwise.
pub fn sample_points(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::InvalidConfig("sample size must be >= 1".into()));
    }
    let mut rng = rng_from(seed);
    let avail = cloud.len();
    let rows: Vec<usize> = if avail >= n {
        index::sample(&mut rng, avail, n).into_vec()
    } else {
        (0..n).map(|_| rng.random_range(0..avail)).collect()
    };
    Ok(PointCloud {
        points: cloud.points.select(Axis(0), &rows),
    })
}

/// Centers the cloud at its centroid and scales the farthest point to radius 1.
/// A cloud whose points all coincide maps to the origin.
pub fn normalize_cloud(cloud: &PointCloud) -> PointCloud {
    let c = cloud.centroid();
    let mut pts = cloud.points.clone();
    for mut row in pts.rows_mut() {
        row[0] -= c[0];
        row[1] -= c[1];
        row[2] -= c[2];
    }
    let r = pts
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .fold(0.0, f64::max);
    if r > 0.0 {
        pts.mapv_inplace(|v| v / r);
    } else {
        pts.fill(0.0);
    }
    PointCloud { points: pts }
}

/// Symmetric Chamfer distance: mean nearest-neighbour squared distance in
/// both directions.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> f64 {
    fn one_way(from: ArrayView2<f64>, to: ArrayView2<f64>) -> f64 {
        let total: f64 = from
            .rows()
            .into_iter()
            .map(|p| {
                to.rows()
                    .into_iter()
                    .map(|q| {
                        let d = &p - &q;
                        d.dot(&d)
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        total / from.nrows() as f64
    }
    one_way(a.points(), b.points()) + one_way(b.points(), a.points())
}
