use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cloud::LabeledExample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Base,
    Novel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitTotals {
    pub base_examples: usize,
    pub novel_examples: usize,
}

/// Class-disjoint partition of a dataset into meta-training (base) and
/// meta-testing (novel) classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub base_classes: Vec<i64>,
    pub novel_classes: Vec<i64>,
    pub class_counts: BTreeMap<i64, usize>,
    pub totals: SplitTotals,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitReport {
    pub disjoint: bool,
    pub base_classes: usize,
    pub novel_classes: usize,
    pub base_examples: usize,
    pub novel_examples: usize,
}

const MODELNET40_FS: &str = include_str!("../../fixtures/modelnet40_fs.json");
const SHAPENET70_FS: &str = include_str!("../../fixtures/shapenet70_fs.json");

impl SplitManifest {
    /// Builds a manifest from an in-memory pool; classes in `novel` go to the
    /// novel side, every other class to the base side.
    pub fn from_examples(examples: &[LabeledExample], novel: &[i64]) -> Self {
        let mut class_counts = BTreeMap::new();
        for e in examples {
            *class_counts.entry(e.class_id).or_insert(0usize) += 1;
        }
        let novel_set: BTreeSet<i64> = novel.iter().copied().collect();
        let (mut base_examples, mut novel_examples) = (0, 0);
        let mut base_classes = Vec::new();
        let mut novel_classes = Vec::new();
        for (&c, &n) in &class_counts {
            if novel_set.contains(&c) {
                novel_classes.push(c);
                novel_examples += n;
            } else {
                base_classes.push(c);
                base_examples += n;
            }
        }
        Self {
            name: None,
            note: None,
            base_classes,
            novel_classes,
            class_counts,
            totals: SplitTotals {
                base_examples,
                novel_examples,
            },
        }
    }

    pub fn modelnet40_fs() -> Self {
        serde_json::from_str(MODELNET40_FS).expect("bundled fixture parses")
    }

    pub fn shapenet70_fs() -> Self {
        serde_json::from_str(SHAPENET70_FS).expect("bundled fixture parses")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn side_of(&self, class_id: i64) -> Option<Side> {
        if self.base_classes.contains(&class_id) {
            Some(Side::Base)
        } else if self.novel_classes.contains(&class_id) {
            Some(Side::Novel)
        } else {
            None
        }
    }

    pub fn classes(&self, side: Side) -> &[i64] {
        match side {
            Side::Base => &self.base_classes,
            Side::Novel => &self.novel_classes,
        }
    }
}

/// Checks disjointness and that per-class counts add up to the declared totals.
pub fn validate_split(manifest: &SplitManifest) -> Result<SplitReport> {
    let base: BTreeSet<i64> = manifest.base_classes.iter().copied().collect();
    let novel: BTreeSet<i64> = manifest.novel_classes.iter().copied().collect();
    let overlap: Vec<i64> = base.intersection(&novel).copied().collect();
    if !overlap.is_empty() {
        return Err(Error::Overlap(overlap));
    }
    if base.len() != manifest.base_classes.len() || novel.len() != manifest.novel_classes.len() {
        return Err(Error::CountMismatch(
            "duplicate class id within a side".into(),
        ));
    }
    for c in manifest.class_counts.keys() {
        if !base.contains(c) && !novel.contains(c) {
            return Err(Error::UnknownClass(*c));
        }
    }
    let side_total =
        |set: &BTreeSet<i64>| -> Result<usize> {
            set.iter()
                .map(|c| {
                    manifest.class_counts.get(c).copied().ok_or_else(|| {
                        Error::CountMismatch(format!("class {c} has no example count"))
                    })
                })
                .sum()
        };
    let base_examples = side_total(&base)?;
    let novel_examples = side_total(&novel)?;
    if base_examples != manifest.totals.base_examples {
        return Err(Error::CountMismatch(format!(
            "base classes hold {base_examples} examples, totals declare {}",
            manifest.totals.base_examples
        )));
    }
    if novel_examples != manifest.totals.novel_examples {
        return Err(Error::CountMismatch(format!(
            "novel classes hold {novel_examples} examples, totals declare {}",
            manifest.totals.novel_examples
        )));
    }
    Ok(SplitReport {
        disjoint: true,
        base_classes: base.len(),
        novel_classes: novel.len(),
        base_examples,
        novel_examples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_modelnet_split() {
        let r = validate_split(&SplitManifest::modelnet40_fs()).unwrap();
        assert_eq!(
            (
                r.base_classes,
                r.base_examples,
                r.novel_classes,
                r.novel_examples
            ),
            (30, 9240, 10, 3104)
        );
        assert!(r.disjoint);
    }

    #[test]
    fn bundled_shapenet_split() {
        let r = validate_split(&SplitManifest::shapenet70_fs()).unwrap();
        assert_eq!(
            (
                r.base_classes,
                r.base_examples,
                r.novel_classes,
                r.novel_examples
            ),
            (50, 21722, 20, 8351)
        );
    }

    fn small() -> SplitManifest {
        SplitManifest {
            name: None,
            note: None,
            base_classes: vec![1, 7],
            novel_classes: vec![3],
            class_counts: [(1, 5), (7, 5), (3, 4)].into_iter().collect(),
            totals: SplitTotals {
                base_examples: 10,
                novel_examples: 4,
            },
        }
    }

    #[test]
    fn overlap_is_rejected() {
        let mut m = small();
        m.novel_classes.push(7);
        assert!(matches!(validate_split(&m), Err(Error::Overlap(v)) if v == vec![7]));
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let mut m = small();
        m.totals.novel_examples = 5;
        assert!(matches!(validate_split(&m), Err(Error::CountMismatch(_))));
        let mut m = small();
        m.class_counts.remove(&3);
        assert!(matches!(validate_split(&m), Err(Error::CountMismatch(_))));
    }

    #[test]
    fn json_round_trip_uses_documented_keys() {
        let m = small();
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        for key in ["base_classes", "novel_classes", "class_counts", "totals"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["totals"]["base_examples"], 10);
        assert_eq!(v["class_counts"]["7"], 5);
        let back: SplitManifest = serde_json::from_value(v).unwrap();
        assert_eq!(back, m);
    }
}
