//! N-way K-shot Q-query episode construction.

use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledExample;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
}

impl EpisodeSpec {
    pub fn new(n_way: usize, k_shot: usize, q_query: usize) -> Result<Self> {
        let spec = Self {
            n_way,
            k_shot,
            q_query,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 || self.k_shot < 1 {
            return Err(Error::InvalidConfig(format!(
                "episode needs N >= 2 and K >= 1, got {}-way {}-shot",
                self.n_way, self.k_shot
            )));
        }
        Ok(())
    }

    pub fn support_len(&self) -> usize {
        self.n_way * self.k_shot
    }

    pub fn query_len(&self) -> usize {
        self.n_way * self.q_query
    }
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub spec: EpisodeSpec,
    /// Grouped by local class, `k_shot` consecutive entries per class.
    pub support: Vec<LabeledExample>,
    /// Grouped by local class, `q_query` consecutive entries per class.
    pub query: Vec<LabeledExample>,
    /// Original class id to local label; local labels follow ascending class id.
    pub class_remap: BTreeMap<i64, usize>,
}

impl Episode {
    pub fn local_label(&self, class_id: i64) -> usize {
        self.class_remap[&class_id]
    }

    pub fn support_labels(&self) -> Vec<usize> {
        self.support
            .iter()
            .map(|e| self.local_label(e.class_id))
            .collect()
    }

    pub fn query_labels(&self) -> Vec<usize> {
        self.query
            .iter()
            .map(|e| self.local_label(e.class_id))
            .collect()
    }
}

fn group_by_class(pool: &[LabeledExample]) -> BTreeMap<i64, Vec<usize>> {
    let mut by_class: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, e) in pool.iter().enumerate() {
        by_class.entry(e.class_id).or_default().push(i);
    }
    by_class
}

/// Classes with enough instances are chosen uniformly without replacement,
/// then `K + Q` instances per class uniformly without replacement.
pub fn sample_episode(pool: &[LabeledExample], spec: EpisodeSpec, seed: u64) -> Result<Episode> {
    spec.validate()?;
    let by_class = group_by_class(pool);
    sample_from_groups(pool, &by_class, spec, seed)
}

fn sample_from_groups(
    pool: &[LabeledExample],
    by_class: &BTreeMap<i64, Vec<usize>>,
    spec: EpisodeSpec,
    seed: u64,
) -> Result<Episode> {
    let per_class = spec.k_shot + spec.q_query;
    if by_class.len() < spec.n_way {
        return Err(Error::InsufficientClasses {
            needed: spec.n_way,
            available: by_class.len(),
        });
    }
    let eligible: Vec<(i64, &Vec<usize>)> = by_class
        .iter()
        .filter(|(_, m)| m.len() >= per_class)
        .map(|(c, m)| (*c, m))
        .collect();
    if eligible.len() < spec.n_way {
        let (class_id, members) = by_class
            .iter()
            .min_by_key(|(_, m)| m.len())
            .expect("non-empty pool");
        return Err(Error::InsufficientExamples {
            class_id: *class_id,
            needed: per_class,
            available: members.len(),
        });
    }

    let mut rng = rng_from(seed);
    let mut picked: Vec<usize> = index::sample(&mut rng, eligible.len(), spec.n_way).into_vec();
    picked.sort_unstable();

    let mut support = Vec::with_capacity(spec.support_len());
    let mut query = Vec::with_capacity(spec.query_len());
    let mut class_remap = BTreeMap::new();
    for (local, &ci) in picked.iter().enumerate() {
        let (class_id, members) = eligible[ci];
        class_remap.insert(class_id, local);
        let draw = index::sample(&mut rng, members.len(), per_class).into_vec();
        let (s, q) = draw.split_at(spec.k_shot);
        support.extend(s.iter().map(|&m| pool[members[m]].clone()));
        query.extend(q.iter().map(|&m| pool[members[m]].clone()));
    }
    Ok(Episode {
        spec,
        support,
        query,
        class_remap,
    })
}

/// Lazily generated episodes; episode `i` is `sample_episode(pool, spec, derive_seed(seed, i))`.
pub struct EpisodeStream<'a> {
    pool: &'a [LabeledExample],
    by_class: BTreeMap<i64, Vec<usize>>,
    spec: EpisodeSpec,
    seed: u64,
    next: usize,
    count: usize,
}

impl<'a> EpisodeStream<'a> {
    pub fn get(&self, i: usize) -> Result<Episode> {
        sample_from_groups(
            self.pool,
            &self.by_class,
            self.spec,
            derive_seed(self.seed, i as u64),
        )
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

impl Iterator for EpisodeStream<'_> {
    type Item = Result<Episode>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.count {
            return None;
        }
        let ep = self.get(self.next);
        self.next += 1;
        Some(ep)
    }
}

pub fn episode_stream(
    pool: &[LabeledExample],
    spec: EpisodeSpec,
    count: usize,
    seed: u64,
) -> Result<EpisodeStream<'_>> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::InvalidConfig("episode count must be >= 1".into()));
    }
    let stream = EpisodeStream {
        pool,
        by_class: group_by_class(pool),
        spec,
        seed,
        next: 0,
        count,
    };
    // surface pool errors up front rather than on first pull
    stream.get(0)?;
    Ok(stream)
}
