//! Analytic-surface point clouds used as desk-scale stand-ins for CAD classes.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::cloud::{LabeledExample, PointCloud};
use super::split::SplitManifest;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeFamily {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
    Plane,
    Helix,
    Ellipsoid,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 8] = [
        ShapeFamily::Sphere,
        ShapeFamily::Cube,
        ShapeFamily::Cylinder,
        ShapeFamily::Cone,
        ShapeFamily::Torus,
        ShapeFamily::Plane,
        ShapeFamily::Helix,
        ShapeFamily::Ellipsoid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeFamily::Sphere => "sphere",
            ShapeFamily::Cube => "cube",
            ShapeFamily::Cylinder => "cylinder",
            ShapeFamily::Cone => "cone",
            ShapeFamily::Torus => "torus",
            ShapeFamily::Plane => "plane",
            ShapeFamily::Helix => "helix",
            ShapeFamily::Ellipsoid => "ellipsoid",
        }
    }

    /// Parameters used when none are given.
    pub fn default_params(self) -> Vec<f64> {
        match self {
            ShapeFamily::Sphere => vec![1.0],
            ShapeFamily::Cube => vec![2.0],
            ShapeFamily::Cylinder => vec![1.0, 2.0],
            ShapeFamily::Cone => vec![1.0, 2.0],
            ShapeFamily::Torus => vec![1.0, 0.3],
            ShapeFamily::Plane => vec![2.0, 2.0],
            ShapeFamily::Helix => vec![1.0, 2.0, 3.0],
            ShapeFamily::Ellipsoid => vec![1.5, 1.0, 0.5],
        }
    }
}

impl fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::UnknownFamily(s.to_string()))
    }
}

/// A family together with its dimensions; one synthetic class.
///
/// Parameter layouts:
/// sphere `[radius]`, cube `[edge]` or `[ex, ey, ez]`, cylinder `[radius, height]`,
/// cone `[radius, height]`, torus `[major, minor]` with `minor < major`,
/// plane `[width, depth]`, helix `[radius, height, turns]`, ellipsoid `[a, b, c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub family: ShapeFamily,
    pub params: Vec<f64>,
}

impl ShapeSpec {
    pub fn new(family: ShapeFamily, params: Vec<f64>) -> Result<Self> {
        let spec = Self { family, params };
        spec.validate()?;
        Ok(spec)
    }

    pub fn default_for(family: ShapeFamily) -> Self {
        Self {
            family,
            params: family.default_params(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let arity_ok = match self.family {
            ShapeFamily::Sphere => self.params.len() == 1,
            ShapeFamily::Cube => matches!(self.params.len(), 1 | 3),
            ShapeFamily::Cylinder | ShapeFamily::Cone | ShapeFamily::Torus | ShapeFamily::Plane => {
                self.params.len() == 2
            }
            ShapeFamily::Helix | ShapeFamily::Ellipsoid => self.params.len() == 3,
        };
        if !arity_ok {
            return Err(Error::InvalidConfig(format!(
                "{} does not accept {} parameters",
                self.family,
                self.params.len()
            )));
        }
        if self.params.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "{} dimensions must be positive, got {:?}",
                self.family, self.params
            )));
        }
        if self.family == ShapeFamily::Torus && self.params[1] >= self.params[0] {
            return Err(Error::InvalidConfig(
                "torus minor radius must be below the major radius".into(),
            ));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let dims: Vec<String> = self.params.iter().map(|p| format!("{p}")).collect();
        format!("{}({})", self.family, dims.join(","))
    }
}

/// Class catalog for synthetic pools: the eight families at default
/// dimensions followed by dimensional variants that read as distinct shapes.
pub fn shape_catalog() -> Vec<ShapeSpec> {
    let mut out: Vec<ShapeSpec> = ShapeFamily::ALL
        .into_iter()
        .map(ShapeSpec::default_for)
        .collect();
    let variants: [(ShapeFamily, &[f64]); 8] = [
        (ShapeFamily::Cube, &[2.0, 1.0, 0.3]),
        (ShapeFamily::Cylinder, &[0.25, 3.0]),
        (ShapeFamily::Torus, &[1.0, 0.08]),
        (ShapeFamily::Cone, &[1.0, 0.4]),
        (ShapeFamily::Helix, &[0.5, 3.0, 6.0]),
        (ShapeFamily::Ellipsoid, &[2.0, 0.5, 0.5]),
        (ShapeFamily::Plane, &[3.0, 0.5]),
        (ShapeFamily::Sphere, &[0.5]),
    ];
    out.extend(variants.iter().map(|(f, p)| ShapeSpec {
        family: *f,
        params: p.to_vec(),
    }));
    out
}

fn normal3(rng: &mut Rng) -> [f64; 3] {
    [
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    ]
}

fn unit_vector(rng: &mut Rng) -> [f64; 3] {
    loop {
        let v = normal3(rng);
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn disk(rng: &mut Rng, radius: f64) -> (f64, f64) {
    let r = radius * rng.random::<f64>().sqrt();
    let t = TAU * rng.random::<f64>();
    (r * t.cos(), r * t.sin())
}

fn surface_point(spec: &ShapeSpec, rng: &mut Rng) -> [f64; 3] {
    let p = &spec.params;
    match spec.family {
        ShapeFamily::Sphere => {
            let u = unit_vector(rng);
            [u[0] * p[0], u[1] * p[0], u[2] * p[0]]
        }
        ShapeFamily::Cube => {
            let (ex, ey, ez) = if p.len() == 1 {
                (p[0], p[0], p[0])
            } else {
                (p[0], p[1], p[2])
            };
            let areas = [ey * ez, ex * ez, ex * ey];
            let total: f64 = areas.iter().sum();
            let mut pick = rng.random::<f64>() * total;
            let mut axis = 2;
            for (i, a) in areas.iter().enumerate() {
                if pick < *a {
                    axis = i;
                    break;
                }
                pick -= a;
            }
            let half = [ex / 2.0, ey / 2.0, ez / 2.0];
            let mut q = [0.0; 3];
            for (i, v) in q.iter_mut().enumerate() {
                *v = if i == axis {
                    if rng.random::<bool>() {
                        half[i]
                    } else {
                        -half[i]
                    }
                } else {
                    rng.random_range(-half[i]..half[i])
                };
            }
            q
        }
        ShapeFamily::Cylinder => {
            let (r, h) = (p[0], p[1]);
            let side = TAU * r * h;
            let cap = PI * r * r;
            let pick = rng.random::<f64>() * (side + 2.0 * cap);
            if pick < side {
                let t = TAU * rng.random::<f64>();
                [
                    r * t.cos(),
                    r * t.sin(),
                    rng.random_range(-h / 2.0..h / 2.0),
                ]
            } else {
                let (x, y) = disk(rng, r);
                let z = if pick < side + cap { h / 2.0 } else { -h / 2.0 };
                [x, y, z]
            }
        }
        ShapeFamily::Cone => {
            let (r, h) = (p[0], p[1]);
            let slant = (r * r + h * h).sqrt();
            let side = PI * r * slant;
            let base = PI * r * r;
            if rng.random::<f64>() * (side + base) < side {
                // distance from apex ~ sqrt(u) gives uniform area density
                let t = rng.random::<f64>().sqrt();
                let a = TAU * rng.random::<f64>();
                [r * t * a.cos(), r * t * a.sin(), h / 2.0 - h * t]
            } else {
                let (x, y) = disk(rng, r);
                [x, y, -h / 2.0]
            }
        }
        ShapeFamily::Torus => {
            let (big, small) = (p[0], p[1]);
            // tube angle density is proportional to the local ring radius
            let theta = loop {
                let th = TAU * rng.random::<f64>();
                if rng.random::<f64>() * (big + small) <= big + small * th.cos() {
                    break th;
                }
            };
            let phi = TAU * rng.random::<f64>();
            let ring = big + small * theta.cos();
            [ring * phi.cos(), ring * phi.sin(), small * theta.sin()]
        }
        ShapeFamily::Plane => {
            let (w, d) = (p[0], p[1]);
            [
                rng.random_range(-w / 2.0..w / 2.0),
                rng.random_range(-d / 2.0..d / 2.0),
                0.0,
            ]
        }
        ShapeFamily::Helix => {
            let (r, h, turns) = (p[0], p[1], p[2]);
            let t = rng.random::<f64>();
            let a = TAU * turns * t;
            [r * a.cos(), r * a.sin(), h * (t - 0.5)]
        }
        ShapeFamily::Ellipsoid => {
            let (a, b, c) = (p[0], p[1], p[2]);
            let gmax = (b * c).max(a * c).max(a * b);
            loop {
                let u = unit_vector(rng);
                let g = ((b * c * u[0]).powi(2) + (a * c * u[1]).powi(2) + (a * b * u[2]).powi(2))
                    .sqrt();
                if rng.random::<f64>() * gmax <= g {
                    break [a * u[0], b * u[1], c * u[2]];
                }
            }
        }
    }
}

/// `n` points drawn uniformly (by area, or by arc length for the helix) from
/// the analytic surface, centred at the origin.
pub fn sample_surface(spec: &ShapeSpec, n: usize, seed: u64) -> Result<PointCloud> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidConfig("n_points must be >= 1".into()));
    }
    let mut rng = rng_from(seed);
    let mut pts = Array2::zeros((n, 3));
    for mut row in pts.rows_mut() {
        let q = surface_point(spec, &mut rng);
        row[0] = q[0];
        row[1] = q[1];
        row[2] = q[2];
    }
    PointCloud::new(pts)
}

/// Random anisotropic scale, a small tilt about x, then a yaw about z.
fn perturb(cloud: PointCloud, rng: &mut Rng) -> Result<PointCloud> {
    let s = [
        rng.random_range(0.8..1.2),
        rng.random_range(0.8..1.2),
        rng.random_range(0.8..1.2),
    ];
    let tilt: f64 = rng.random_range(-0.15..0.15);
    let yaw: f64 = rng.random_range(0.0..TAU);
    let (st, ct) = tilt.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    let mut pts = cloud.into_points();
    for mut row in pts.rows_mut() {
        let (x, y, z) = (row[0] * s[0], row[1] * s[1], row[2] * s[2]);
        let (y, z) = (ct * y - st * z, st * y + ct * z);
        row[0] = cy * x - sy * y;
        row[1] = sy * x + cy * y;
        row[2] = z;
    }
    PointCloud::new(pts)
}

/// `count` perturbed instances of one synthetic class. Instance ids run from
/// `first_instance_id` upwards.
pub fn generate_synthetic_class(
    spec: &ShapeSpec,
    class_id: i64,
    first_instance_id: u64,
    count: usize,
    n_points: usize,
    seed: u64,
) -> Result<Vec<LabeledExample>> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::InvalidConfig("count must be >= 1".into()));
    }
    if n_points < 8 {
        return Err(Error::InvalidConfig(format!(
            "n_points must be >= 8, got {n_points}"
        )));
    }
    (0..count)
        .map(|i| {
            let inst_seed = derive_seed(seed, i as u64);
            let surface = sample_surface(spec, n_points, inst_seed)?;
            let mut rng = rng_from(derive_seed(inst_seed, u64::MAX));
            let cloud = perturb(surface, &mut rng)?;
            Ok(LabeledExample::new(
                cloud,
                class_id,
                first_instance_id + i as u64,
            ))
        })
        .collect()
}

/// A labelled pool over `classes` (class id = position in `classes`), with
/// globally unique, sequential instance ids.
pub fn generate_pool(
    classes: &[ShapeSpec],
    per_class: usize,
    n_points: usize,
    seed: u64,
) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::with_capacity(classes.len() * per_class);
    for (c, spec) in classes.iter().enumerate() {
        out.extend(generate_synthetic_class(
            spec,
            c as i64,
            (c * per_class) as u64,
            per_class,
            n_points,
            derive_seed(seed, c as u64),
        )?);
    }
    Ok(out)
}

/// A pool over the first `n_classes` catalog entries, with the last `n_novel`
/// of them on the novel side of the returned manifest.
pub fn synthetic_split(
    n_classes: usize,
    n_novel: usize,
    per_class: usize,
    n_points: usize,
    seed: u64,
) -> Result<(Vec<LabeledExample>, SplitManifest)> {
    let catalog = shape_catalog();
    if n_classes > catalog.len() {
        return Err(Error::InvalidConfig(format!(
            "the shape catalog has {} classes, {n_classes} requested",
            catalog.len()
        )));
    }
    if n_novel == 0 || n_novel >= n_classes {
        return Err(Error::InvalidConfig(format!(
            "need 1 <= novel classes < {n_classes}, got {n_novel}"
        )));
    }
    let pool = generate_pool(&catalog[..n_classes], per_class, n_points, seed)?;
    let novel: Vec<i64> = ((n_classes - n_novel) as i64..n_classes as i64).collect();
    let manifest = SplitManifest::from_examples(&pool, &novel);
    Ok((pool, manifest))
}
