//! Point-cloud data model, synthetic classes, on-disk records, split
//! manifests and training-time augmentation.

mod augment;
mod cloud;
mod io;
mod split;
mod synthetic;

pub use augment::{augment, rotate, AugmentationConfig, Axis3};
pub use cloud::{chamfer_distance, normalize_cloud, sample_points, LabeledExample, PointCloud};
pub use io::{format_xyz, load_examples, parse_xyz, write_examples, LABELS_FILE};
pub use split::{validate_split, Side, SplitManifest, SplitReport, SplitTotals};
pub use synthetic::{
    generate_pool, generate_synthetic_class, sample_surface, shape_catalog, synthetic_split,
    ShapeFamily, ShapeSpec,
};
