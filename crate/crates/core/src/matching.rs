//! Nearest-neighbor search in descriptor space and correspondence sets.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{brute_force_knn, KdTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DescriptorSource {
    PpfInvariant,
    PcVariant,
}

impl fmt::Display for DescriptorSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DescriptorSource::PpfInvariant => "ppf",
            DescriptorSource::PcVariant => "pc",
        })
    }
}

impl FromStr for DescriptorSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ppf" | "ppf-invariant" => Ok(DescriptorSource::PpfInvariant),
            "pc" | "pc-variant" => Ok(DescriptorSource::PcVariant),
            other => Err(Error::InvalidConfig(format!("unknown descriptor source {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MatchStrategy {
    MutualK(usize),
    Closest,
}

impl fmt::Display for MatchStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatchStrategy::MutualK(k) => write!(f, "mutual-{k}"),
            MatchStrategy::Closest => f.write_str("closest"),
        }
    }
}

impl FromStr for MatchStrategy {
    type Err = Error;
    /// Accepts `closest`, `mutual-k` (k = 1) or `mutual-<k>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closest" => Ok(MatchStrategy::Closest),
            "mutual-k" | "mutual" => Ok(MatchStrategy::MutualK(1)),
            _ => s
                .strip_prefix("mutual-")
                .and_then(|k| k.parse().ok())
                .filter(|k| *k >= 1)
                .map(MatchStrategy::MutualK)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub index_a: usize,
    pub index_b: usize,
    pub distance: f64,
}

/// Putative matches between keypoints of fragment `a` and fragment `b`,
/// sorted by `(index_a, index_b)` without duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
    pub source: DescriptorSource,
    pub strategy: MatchStrategy,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn index_pairs(&self) -> BTreeSet<(usize, usize)> {
        self.pairs.iter().map(|c| (c.index_a, c.index_b)).collect()
    }

    /// CSV with columns `index_a,index_b,distance`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["index_a", "index_b", "distance"])?;
        for c in &self.pairs {
            w.serialize((c.index_a, c.index_b, c.distance))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, source: DescriptorSource, strategy: MatchStrategy) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut pairs = Vec::new();
        for rec in r.deserialize() {
            let (index_a, index_b, distance): (usize, usize, f64) = rec?;
            pairs.push(Correspondence {
                index_a,
                index_b,
                distance,
            });
        }
        Ok(Self {
            pairs,
            source,
            strategy,
        })
    }
}

fn check_rows<R: AsRef<[f64]>>(query: &[R], target: &[R]) -> Result<usize> {
    let Some(first) = target.first() else {
        return Err(Error::EmptyTarget);
    };
    let dim = first.as_ref().len();
    if query.iter().chain(target).any(|r| r.as_ref().len() != dim) {
        return Err(Error::ShapeMismatch("descriptors of differing length".into()));
    }
    Ok(dim)
}

/// Exact `k` nearest targets of every query under L2, closest first, ties
/// to the lower index.
pub fn feature_nn_search<R: AsRef<[f64]>>(query: &[R], target: &[R], k: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    let dim = check_rows(query, target)?;
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let tree = KdTree::new(target, dim);
    Ok(query.iter().map(|q| tree.knn(q.as_ref(), k)).collect())
}

/// Reference scan used to validate [`feature_nn_search`].
pub fn feature_nn_search_brute<R: AsRef<[f64]>>(query: &[R], target: &[R], k: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    check_rows(query, target)?;
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    Ok(query.iter().map(|q| brute_force_knn(target, q.as_ref(), k)).collect())
}

fn build(mut pairs: Vec<Correspondence>, source: DescriptorSource, strategy: MatchStrategy) -> CorrespondenceSet {
    pairs.sort_by(|x, y| (x.index_a, x.index_b).cmp(&(y.index_a, y.index_b)));
    pairs.dedup_by(|x, y| x.index_a == y.index_a && x.index_b == y.index_b);
    CorrespondenceSet {
        pairs,
        source,
        strategy,
    }
}

/// Keeps `(i, j)` iff `j` is among the `k` nearest of `i` in `b` and `i` is
/// among the `k` nearest of `j` in `a`.
pub fn mutual_k_correspondences<R: AsRef<[f64]>>(
    feat_a: &[R],
    feat_b: &[R],
    k: usize,
    source: DescriptorSource,
) -> Result<CorrespondenceSet> {
    if feat_a.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let ab = feature_nn_search(feat_a, feat_b, k)?;
    let ba = feature_nn_search(feat_b, feat_a, k)?;
    let back: Vec<BTreeSet<usize>> = ba.iter().map(|l| l.iter().map(|(i, _)| *i).collect()).collect();
    let pairs = ab
        .iter()
        .enumerate()
        .flat_map(|(i, list)| {
            let back = &back;
            list.iter().filter(move |(j, _)| back[*j].contains(&i)).map(move |&(j, d)| Correspondence {
                index_a: i,
                index_b: j,
                distance: d,
            })
        })
        .collect();
    Ok(build(pairs, source, MatchStrategy::MutualK(k)))
}

/// Union of every `a -> b` and `b -> a` nearest neighbor.
pub fn closest_correspondences<R: AsRef<[f64]>>(feat_a: &[R], feat_b: &[R], source: DescriptorSource) -> Result<CorrespondenceSet> {
    if feat_a.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let ab = feature_nn_search(feat_a, feat_b, 1)?;
    let ba = feature_nn_search(feat_b, feat_a, 1)?;
    let mut pairs: Vec<Correspondence> = ab
        .iter()
        .enumerate()
        .map(|(i, l)| Correspondence {
            index_a: i,
            index_b: l[0].0,
            distance: l[0].1,
        })
        .collect();
    pairs.extend(ba.iter().enumerate().map(|(j, l)| Correspondence {
        index_a: l[0].0,
        index_b: j,
        distance: l[0].1,
    }));
    Ok(build(pairs, source, MatchStrategy::Closest))
}

pub fn match_descriptors<R: AsRef<[f64]>>(
    feat_a: &[R],
    feat_b: &[R],
    strategy: MatchStrategy,
    source: DescriptorSource,
) -> Result<CorrespondenceSet> {
    match strategy {
        MatchStrategy::MutualK(k) => mutual_k_correspondences(feat_a, feat_b, k, source),
        MatchStrategy::Closest => closest_correspondences(feat_a, feat_b, source),
    }
}
