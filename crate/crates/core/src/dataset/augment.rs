use std::f64::consts::TAU;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis3 {
    X,
    Y,
    Z,
}

/// Random rotation about one axis followed by clipped Gaussian jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationConfig {
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
    pub rotation_axis: Axis3,
    /// Rotation angle is drawn uniformly from `[lo, hi)`.
    pub angle_range: (f64, f64),
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            jitter_sigma: 0.02,
            jitter_clip: 0.05,
            rotation_axis: Axis3::Z,
            angle_range: (0.0, TAU),
        }
    }
}

impl AugmentationConfig {
    pub fn identity() -> Self {
        Self {
            jitter_sigma: 0.0,
            angle_range: (0.0, 0.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.angle_range;
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(Error::InvalidConfig("jitter_sigma must be >= 0".into()));
        }
        if !(self.jitter_clip > 0.0 && self.jitter_clip.is_finite()) {
            return Err(Error::InvalidConfig("jitter_clip must be > 0".into()));
        }
        if !(0.0 <= lo && lo <= hi && hi <= TAU) {
            return Err(Error::InvalidConfig(format!(
                "angle range ({lo}, {hi}) must lie within [0, 2pi]"
            )));
        }
        Ok(())
    }
}

/// Rotates every point by `angle` radians about `axis` (right-handed).
pub fn rotate(cloud: &PointCloud, axis: Axis3, angle: f64) -> PointCloud {
    let (s, c) = angle.sin_cos();
    let (a, b) = match axis {
        Axis3::X => (1, 2),
        Axis3::Y => (2, 0),
        Axis3::Z => (0, 1),
    };
    let mut pts = cloud.points().to_owned();
    for mut row in pts.rows_mut() {
        let (u, v) = (row[a], row[b]);
        row[a] = c * u - s * v;
        row[b] = s * u + c * v;
    }
    PointCloud::new(pts).expect("rotation preserves validity")
}

pub fn augment(cloud: &PointCloud, cfg: &AugmentationConfig, seed: u64) -> Result<PointCloud> {
    cfg.validate()?;
    let mut rng = rng_from(seed);
    let (lo, hi) = cfg.angle_range;
    let angle = if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    };
    let rotated = if angle == 0.0 {
        cloud.clone()
    } else {
        rotate(cloud, cfg.rotation_axis, angle)
    };
    if cfg.jitter_sigma == 0.0 {
        return Ok(rotated);
    }
    let normal = Normal::new(0.0, cfg.jitter_sigma).expect("sigma validated");
    let clip = cfg.jitter_clip;
    let mut pts = rotated.into_points();
    pts.mapv_inplace(|v| v + normal.sample(&mut rng).clamp(-clip, clip));
    PointCloud::new(pts)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use super::*;
    use crate::dataset::synthetic::{sample_surface, ShapeFamily, ShapeSpec};

    #[test]
    fn identity_augmentation() {
        let c = sample_surface(&ShapeSpec::default_for(ShapeFamily::Cone), 64, 1).unwrap();
        assert_eq!(augment(&c, &AugmentationConfig::identity(), 9).unwrap(), c);
    }

    #[test]
    fn quarter_turn_about_z() {
        let c = PointCloud::from_rows(&[[1.0, 0.0, 0.0]]).unwrap();
        let r = rotate(&c, Axis3::Z, FRAC_PI_2);
        let p = r.points();
        assert!((p[[0, 0]]).abs() < 1e-9);
        assert!((p[[0, 1]] - 1.0).abs() < 1e-9);
        assert!(p[[0, 2]].abs() < 1e-9);

        let cfg = AugmentationConfig {
            jitter_sigma: 0.0,
            angle_range: (FRAC_PI_2, FRAC_PI_2),
            ..AugmentationConfig::default()
        };
        assert_eq!(augment(&c, &cfg, 0).unwrap(), r);
    }

    #[test]
    fn jitter_is_clipped() {
        let n = 100_000;
        let rows: Vec<[f64; 3]> = (0..n).map(|i| [i as f64 * 1e-3, 0.5, -0.25]).collect();
        let c = PointCloud::from_rows(&rows).unwrap();
        let cfg = AugmentationConfig {
            angle_range: (0.0, 0.0),
            ..AugmentationConfig::default()
        };
        let out = augment(&c, &cfg, 11).unwrap();
        let max_dev = (&out.points() - &c.points())
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        // recovering the offset as (x + d) - x rounds at the ulp of x
        assert!(max_dev <= 0.05 + 1e-12, "{max_dev}");
        assert!(
            max_dev > 0.04,
            "clip should be reached at sigma 0.02 over 3e5 draws"
        );
    }

    #[test]
    fn rotation_is_rigid() {
        let c = sample_surface(&ShapeSpec::default_for(ShapeFamily::Torus), 40, 2).unwrap();
        let cfg = AugmentationConfig {
            jitter_sigma: 0.0,
            ..AugmentationConfig::default()
        };
        for seed in 0..5 {
            let out = augment(&c, &cfg, seed).unwrap();
            let (a, b) = (c.points(), out.points());
            for i in 0..a.nrows() {
                for j in 0..a.nrows() {
                    let da = &a.row(i) - &a.row(j);
                    let db = &b.row(i) - &b.row(j);
                    assert!((da.dot(&da).sqrt() - db.dot(&db).sqrt()).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn rejects_invalid_config() {
        let mut cfg = AugmentationConfig {
            jitter_clip: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg = AugmentationConfig::default();
        cfg.angle_range = (0.0, 7.0);
        assert!(cfg.validate().is_err());
    }
}
