//! Directory container: one `<instance_id>.xyz` text file per record plus a
//! `labels.csv` sidecar with header `instance_id,class_id`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::cloud::{LabeledExample, PointCloud};
use super::split::{Side, SplitManifest};
use crate::error::{Error, Result};

pub const LABELS_FILE: &str = "labels.csv";

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    instance_id: u64,
    class_id: i64,
}

pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 48);
    for r in cloud.points().rows() {
        let _ = writeln!(s, "{} {} {}", r[0], r[1], r[2]);
    }
    s
}

pub fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let malformed = |reason: String| Error::MalformedRecord {
        path: path.to_path_buf(),
        reason,
    };
    let mut flat = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() != 3 {
            return Err(malformed(format!(
                "line {}: expected 3 space-separated values",
                lineno + 1
            )));
        }
        for f in fields {
            let v: f64 = f
                .parse()
                .map_err(|_| malformed(format!("line {}: bad number `{f}`", lineno + 1)))?;
            if !v.is_finite() {
                return Err(malformed(format!("line {}: non-finite value", lineno + 1)));
            }
            flat.push(v);
        }
    }
    if flat.is_empty() {
        return Err(malformed("record has no points".into()));
    }
    let pts = Array2::from_shape_vec((flat.len() / 3, 3), flat).expect("row-major triples");
    PointCloud::new(pts).map_err(|e| malformed(e.to_string()))
}

pub fn write_examples(dir: &Path, examples: &[LabeledExample]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let labels_path = dir.join(LABELS_FILE);
    let mut w = csv::Writer::from_path(&labels_path)?;
    for ex in examples {
        let path = dir.join(format!("{}.xyz", ex.instance_id));
        fs::write(&path, format_xyz(&ex.cloud)).map_err(|e| Error::io(&path, e))?;
        w.serialize(LabelRow {
            instance_id: ex.instance_id,
            class_id: ex.class_id,
        })?;
    }
    w.flush().map_err(|e| Error::io(&labels_path, e))?;
    Ok(())
}

/// Reads every record whose class sits on `side` of the manifest, in
/// `labels.csv` order.
pub fn load_examples(
    dir: &Path,
    manifest: &SplitManifest,
    side: Side,
) -> Result<Vec<LabeledExample>> {
    let labels_path = dir.join(LABELS_FILE);
    if !labels_path.exists() {
        return Err(Error::io(
            &labels_path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "labels file not found"),
        ));
    }
    let mut rdr = csv::Reader::from_path(&labels_path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize::<LabelRow>() {
        let row = row?;
        let row_side = manifest
            .side_of(row.class_id)
            .ok_or(Error::UnknownClass(row.class_id))?;
        if row_side != side {
            continue;
        }
        let path = dir.join(format!("{}.xyz", row.instance_id));
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let cloud = parse_xyz(&text, &path)?;
        out.push(LabeledExample::new(cloud, row.class_id, row.instance_id));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthetic::{generate_pool, ShapeFamily, ShapeSpec};

    fn fixture(dir: &Path) -> (Vec<LabeledExample>, SplitManifest) {
        let classes = [
            ShapeSpec::default_for(ShapeFamily::Sphere),
            ShapeSpec::default_for(ShapeFamily::Cube),
        ];
        let pool = generate_pool(&classes, 5, 16, 3).unwrap();
        write_examples(dir, &pool).unwrap();
        let manifest = SplitManifest::from_examples(&pool, &[]);
        (pool, manifest)
    }

    #[test]
    fn reads_requested_side_only() {
        let tmp = tempfile::tempdir().unwrap();
        let (pool, manifest) = fixture(tmp.path());
        let base = load_examples(tmp.path(), &manifest, Side::Base).unwrap();
        assert_eq!(base.len(), 10);
        for (a, b) in base.iter().zip(&pool) {
            assert_eq!(a.instance_id, b.instance_id);
            assert_eq!(a.class_id, b.class_id);
            assert_eq!(*a.cloud, *b.cloud, "decimal text must round-trip exactly");
        }
        assert!(load_examples(tmp.path(), &manifest, Side::Novel)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn empty_record_is_malformed() {
        let tmp = tempfile::tempdir().unwrap();
        let (_, manifest) = fixture(tmp.path());
        fs::write(tmp.path().join("3.xyz"), "").unwrap();
        let err = load_examples(tmp.path(), &manifest, Side::Base).unwrap_err();
        assert!(matches!(err, Error::MalformedRecord { .. }), "{err}");
        assert!(err.to_string().contains("malformed record"));
    }

    #[test]
    fn undeclared_class_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let (_, mut manifest) = fixture(tmp.path());
        manifest.base_classes.retain(|&c| c != 1);
        assert!(matches!(
            load_examples(tmp.path(), &manifest, Side::Base),
            Err(Error::UnknownClass(1))
        ));
    }

    #[test]
    fn bad_lines_are_malformed() {
        let p = Path::new("x.xyz");
        assert!(parse_xyz("1 2\n", p).is_err());
        assert!(parse_xyz("1  2 3\n", p).is_err());
        assert!(parse_xyz("1 2 nan\n", p).is_err());
        assert_eq!(parse_xyz("1 2 3\n4 5 6\n", p).unwrap().len(), 2);
    }
}
