//! Evaluation metrics: fragment matching recall, registration
//! recall/precision, pose errors and hypothesis spread.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, Vec3};
use crate::matching::CorrespondenceSet;
use crate::registration::{Hypothesis, RegistrationResult};

/// A pair counts as matched when at least this fraction of its
/// correspondences is true.
pub const MATCH_RATIO_THRESHOLD: f64 = 0.05;

/// Correspondences and ground truth of one fragment pair.
#[derive(Debug, Clone, Copy)]
pub struct MatchingInput<'a> {
    pub pair_id: usize,
    pub keypoints_a: &'a [Vec3],
    pub keypoints_b: &'a [Vec3],
    pub correspondences: &'a CorrespondenceSet,
    /// Maps `b` into the frame of `a`.
    pub gt: RigidTransform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingRecord {
    pub pair_id: usize,
    pub correspondences: usize,
    pub inlier_ratio: f64,
    pub matched: bool,
}

/// Fraction of correspondences `(i, j)` with `|T_gt(p_j) - p_i| < r_inlier`;
/// 0 for an empty set.
pub fn inlier_ratio(input: &MatchingInput<'_>, r_inlier: f64) -> Result<f64> {
    let set = input.correspondences;
    if set.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for c in &set.pairs {
        let (Some(pa), Some(pb)) = (input.keypoints_a.get(c.index_a), input.keypoints_b.get(c.index_b)) else {
            return Err(Error::ShapeMismatch(format!(
                "pair {}: correspondence ({}, {}) out of range",
                input.pair_id, c.index_a, c.index_b
            )));
        };
        if (input.gt.apply_point(pb) - pa).norm() < r_inlier {
            hits += 1;
        }
    }
    Ok(hits as f64 / set.len() as f64)
}

pub fn evaluate_fragment_matching(inputs: &[MatchingInput<'_>], r_inlier: f64, threshold: f64) -> Result<Vec<MatchingRecord>> {
    inputs
        .iter()
        .map(|inp| {
            let ratio = inlier_ratio(inp, r_inlier)?;
            Ok(MatchingRecord {
                pair_id: inp.pair_id,
                correspondences: inp.correspondences.len(),
                inlier_ratio: ratio,
                matched: ratio >= threshold,
            })
        })
        .collect()
}

pub fn matching_recall(records: &[MatchingRecord]) -> f64 {
    fraction(records.iter().filter(|r| r.matched).count(), records.len())
}

/// How a registration is judged correct.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegistrationCriterion {
    /// Rotation and translation error against the ground-truth pose.
    #[default]
    Pose,
    /// RMSE between `b` points mapped by the estimate and by the ground
    /// truth, below this bound (scene units).
    Rmse { max: f64 },
}

/// Thresholds for calling a registration correct.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationThresholds {
    /// Radians.
    pub theta_max: f64,
    pub t_max: f64,
    #[serde(default)]
    pub criterion: RegistrationCriterion,
}

impl RegistrationThresholds {
    /// 15 degrees and a tenth of the scene diameter.
    pub fn desk(scene_diameter: f64) -> Self {
        Self {
            theta_max: 15f64.to_radians(),
            t_max: 0.1 * scene_diameter,
            criterion: RegistrationCriterion::Pose,
        }
    }

    /// Same thresholds judged by correspondence RMSE instead of pose error.
    pub fn with_rmse(self, max: f64) -> Self {
        Self {
            criterion: RegistrationCriterion::Rmse { max },
            ..self
        }
    }
}

/// Root mean square distance between `points` mapped by `est` and by `gt`.
pub fn correspondence_rmse(points: &[Vec3], est: &RigidTransform, gt: &RigidTransform) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let sum: f64 = points.iter().map(|p| (est.apply_point(p) - gt.apply_point(p)).norm_squared()).sum();
    (sum / points.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationRecord {
    pub pair_id: usize,
    pub registered: bool,
    /// Score reached the minimum-inlier threshold.
    pub accepted: bool,
    pub rotation_error: f64,
    pub translation_error: f64,
    /// Set when points were supplied to the evaluator.
    pub rmse: Option<f64>,
    pub runtime_seconds: f64,
    pub hypotheses: usize,
}

/// One result per ground-truth pose, in the same order. Judges by pose
/// error; the RMSE criterion needs [`evaluate_registration_set_with_points`].
pub fn evaluate_registration_set(
    pair_ids: &[usize],
    gts: &[RigidTransform],
    results: &[RegistrationResult],
    thresholds: &RegistrationThresholds,
) -> Result<Vec<RegistrationRecord>> {
    evaluate_registration_set_with_points(pair_ids, gts, results, None, thresholds)
}

/// As [`evaluate_registration_set`], with per-pair `b` points for the RMSE
/// column and criterion.
pub fn evaluate_registration_set_with_points(
    pair_ids: &[usize],
    gts: &[RigidTransform],
    results: &[RegistrationResult],
    points_b: Option<&[Vec<Vec3>]>,
    thresholds: &RegistrationThresholds,
) -> Result<Vec<RegistrationRecord>> {
    if let Some(pts) = points_b {
        if pts.len() != results.len() {
            return Err(Error::ShapeMismatch(format!("{} point sets for {} results", pts.len(), results.len())));
        }
    } else if matches!(thresholds.criterion, RegistrationCriterion::Rmse { .. }) {
        return Err(Error::InvalidConfig("the RMSE criterion needs fragment points".into()));
    }
    if gts.len() != results.len() || pair_ids.len() != results.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} ids, {} ground truths, {} results",
            pair_ids.len(),
            gts.len(),
            results.len()
        )));
    }
    Ok(pair_ids
        .iter()
        .zip(gts)
        .zip(results)
        .enumerate()
        .map(|(i, ((&pair_id, gt), r))| {
            let rotation_error = r.transform.rotation_error(gt);
            let translation_error = r.transform.translation_error(gt);
            let rmse = points_b.map(|pts| correspondence_rmse(&pts[i], &r.transform, gt));
            let registered = match (thresholds.criterion, rmse) {
                (RegistrationCriterion::Rmse { max }, Some(e)) => e < max,
                _ => rotation_error < thresholds.theta_max && translation_error < thresholds.t_max,
            };
            RegistrationRecord {
                pair_id,
                registered,
                accepted: r.reliable,
                rotation_error,
                translation_error,
                rmse,
                runtime_seconds: r.total_seconds(),
                hypotheses: r.hypotheses_evaluated,
            }
        })
        .collect())
}

pub fn registration_recall(records: &[RegistrationRecord]) -> f64 {
    fraction(records.iter().filter(|r| r.registered).count(), records.len())
}

/// Correct among accepted; 0 when nothing was accepted.
pub fn registration_precision(records: &[RegistrationRecord]) -> f64 {
    let accepted = records.iter().filter(|r| r.accepted).count();
    fraction(records.iter().filter(|r| r.accepted && r.registered).count(), accepted)
}

fn fraction(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Joined per-pair row of an [`EvalReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: usize,
    pub correspondences: usize,
    pub inlier_ratio: f64,
    pub matched: bool,
    pub registered: bool,
    pub accepted: bool,
    pub rotation_error: f64,
    pub translation_error: f64,
    pub rmse: Option<f64>,
    pub runtime_seconds: f64,
    pub hypotheses: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub pairs: usize,
    pub matching_recall: f64,
    pub registration_recall: f64,
    pub registration_precision: f64,
    pub mean_runtime_seconds: f64,
    pub mean_hypotheses: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<PairRecord>,
    pub aggregates: Aggregates,
}

impl EvalReport {
    /// Joins matching and registration records by position.
    pub fn new(matching: &[MatchingRecord], registration: &[RegistrationRecord]) -> Result<Self> {
        if matching.len() != registration.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} matching records but {} registration records",
                matching.len(),
                registration.len()
            )));
        }
        let mut records = Vec::with_capacity(matching.len());
        for (m, r) in matching.iter().zip(registration) {
            if m.pair_id != r.pair_id {
                return Err(Error::ShapeMismatch(format!("pair id {} joined with {}", m.pair_id, r.pair_id)));
            }
            records.push(PairRecord {
                pair_id: m.pair_id,
                correspondences: m.correspondences,
                inlier_ratio: m.inlier_ratio,
                matched: m.matched,
                registered: r.registered,
                accepted: r.accepted,
                rotation_error: r.rotation_error,
                translation_error: r.translation_error,
                rmse: r.rmse,
                runtime_seconds: r.runtime_seconds,
                hypotheses: r.hypotheses,
            });
        }
        Ok(Self::from_records(records))
    }

    pub fn from_records(records: Vec<PairRecord>) -> Self {
        let aggregates = Self::aggregate(&records);
        Self { records, aggregates }
    }

    pub fn aggregate(records: &[PairRecord]) -> Aggregates {
        let n = records.len();
        let accepted = records.iter().filter(|r| r.accepted).count();
        let mean = |f: fn(&PairRecord) -> f64| if n == 0 { 0.0 } else { records.iter().map(f).sum::<f64>() / n as f64 };
        Aggregates {
            pairs: n,
            matching_recall: fraction(records.iter().filter(|r| r.matched).count(), n),
            registration_recall: fraction(records.iter().filter(|r| r.registered).count(), n),
            registration_precision: fraction(records.iter().filter(|r| r.accepted && r.registered).count(), accepted),
            mean_runtime_seconds: mean(|r| r.runtime_seconds),
            mean_hypotheses: mean(|r| r.hypotheses as f64),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let records = r.deserialize().collect::<std::result::Result<Vec<PairRecord>, _>>()?;
        Ok(Self::from_records(records))
    }

    pub fn summary(&self, label: &str) -> String {
        let a = &self.aggregates;
        let mut s = String::new();
        let _ = write!(
            s,
            "{label:<12} pairs={:<3} match_recall={:.3} reg_recall={:.3} reg_precision={:.3} mean_time={:.4}s mean_hypos={:.1}",
            a.pairs, a.matching_recall, a.registration_recall, a.registration_precision, a.mean_runtime_seconds, a.mean_hypotheses
        );
        s
    }
}

/// Median deviation of a hypothesis set from ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisStats {
    pub count: usize,
    /// Radians.
    pub median_angular_deviation: f64,
    pub median_translation_deviation: f64,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

pub fn hypothesis_stats(hypotheses: &[Hypothesis], gt: &RigidTransform) -> Result<HypothesisStats> {
    let mut rot: Vec<f64> = hypotheses.iter().map(|h| h.transform.rotation_error(gt)).collect();
    let mut tr: Vec<f64> = hypotheses.iter().map(|h| h.transform.translation_error(gt)).collect();
    Ok(HypothesisStats {
        count: hypotheses.len(),
        median_angular_deviation: median(&mut rot).ok_or(Error::EmptyInput)?,
        median_translation_deviation: median(&mut tr).ok_or(Error::EmptyInput)?,
    })
}

#[derive(Serialize)]
struct HypothesisRow {
    kind: &'static str,
    rodrigues_x: f64,
    rodrigues_y: f64,
    rodrigues_z: f64,
    t_x: f64,
    t_y: f64,
    t_z: f64,
    score: i64,
}

impl HypothesisRow {
    fn new(kind: &'static str, t: &RigidTransform, score: i64) -> Self {
        let r = t.rotation.to_rodrigues();
        let [t_x, t_y, t_z] = t.translation;
        Self {
            kind,
            rodrigues_x: r.x,
            rodrigues_y: r.y,
            rodrigues_z: r.z,
            t_x,
            t_y,
            t_z,
            score,
        }
    }
}

/// One row per hypothesis plus a final `gt` row (score -1). Returns the
/// deviation summary.
pub fn export_hypotheses_csv(hypotheses: &[Hypothesis], gt: &RigidTransform, path: &Path) -> Result<HypothesisStats> {
    let stats = hypothesis_stats(hypotheses, gt)?;
    let mut w = csv::Writer::from_path(path)?;
    for h in hypotheses {
        w.serialize(HypothesisRow::new("hypothesis", &h.transform, h.inlier_count() as i64))?;
    }
    w.serialize(HypothesisRow::new("gt", gt, -1))?;
    w.flush()?;
    Ok(stats)
}
