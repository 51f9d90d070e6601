//! Hypothesize-and-verify registration.
//!
//! The direct method turns every correspondence into one rigid hypothesis
//! (a predicted rotation plus the translation that makes the matched
//! keypoints coincide). The baseline draws 3-point minimal samples. Both
//! verify hypotheses by counting correspondences they map within `tau` and
//! refine the winner with Kabsch on its inliers.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{kabsch_align, Mat3, RigidTransform, UnitQuat, Vec3};
use crate::matching::CorrespondenceSet;
use crate::models::{Networks, PoseFeature};

/// `p1 - R p2`: the translation that maps `p2` onto `p1` after rotating.
pub fn translation_from_rotation(p1: &Vec3, p2: &Vec3, r: &UnitQuat) -> Vec3 {
    p1 - r.rotate(p2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Maps fragment `b` onto fragment `a`.
    pub transform: RigidTransform,
    /// Correspondence the hypothesis was built from (first sample for RANSAC).
    pub correspondence: usize,
    /// Indices into the correspondence set.
    pub inliers: Vec<usize>,
}

impl Hypothesis {
    pub fn new(transform: RigidTransform, correspondence: usize) -> Self {
        Self {
            transform,
            correspondence,
            inliers: Vec::new(),
        }
    }

    pub fn inlier_count(&self) -> usize {
        self.inliers.len()
    }
}

/// Supplies one rotation (`b` onto `a`) per correspondence.
pub trait RotationProvider {
    fn rotations(&self, set: &CorrespondenceSet) -> Result<Vec<UnitQuat>>;
}

/// Returns the same rotation for every correspondence.
#[derive(Debug, Clone, Copy)]
pub struct OracleRotations(pub UnitQuat);

impl RotationProvider for OracleRotations {
    fn rotations(&self, set: &CorrespondenceSet) -> Result<Vec<UnitQuat>> {
        Ok(vec![self.0; set.len()])
    }
}

/// RelativeNet on the pose features of the matched keypoints.
pub struct NetworkRotations<'a> {
    pub nets: &'a Networks,
    pub features_a: &'a [PoseFeature],
    pub features_b: &'a [PoseFeature],
}

impl RotationProvider for NetworkRotations<'_> {
    fn rotations(&self, set: &CorrespondenceSet) -> Result<Vec<UnitQuat>> {
        let pairs = set
            .pairs
            .iter()
            .map(|c| match (self.features_a.get(c.index_a), self.features_b.get(c.index_b)) {
                (Some(a), Some(b)) => Ok((a, b)),
                _ => Err(Error::ShapeMismatch(format!(
                    "correspondence ({}, {}) outside the feature lists",
                    c.index_a, c.index_b
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        self.nets.relative_poses(&pairs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationConfig {
    /// Inlier distance.
    pub tau: f64,
    /// Results scoring below this are flagged unreliable.
    pub min_inliers: usize,
    /// Refinement rounds; 1 is a single Kabsch recomputation.
    pub refine_rounds: usize,
}

impl RegistrationConfig {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            min_inliers: 3,
            refine_rounds: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Direct,
    Ransac,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Direct => "direct",
            Method::Ransac => "ransac",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub method: Method,
    pub transform: RigidTransform,
    /// Inlier count of the returned transform.
    pub score: usize,
    pub hypotheses_evaluated: usize,
    pub generation_seconds: f64,
    pub verification_seconds: f64,
    pub refined: bool,
    /// `score >= min_inliers`.
    pub reliable: bool,
}

impl RegistrationResult {
    pub fn total_seconds(&self) -> f64 {
        self.generation_seconds + self.verification_seconds
    }
}

fn endpoints<'a>(set: &CorrespondenceSet, kps_a: &'a [Vec3], kps_b: &'a [Vec3]) -> Result<Vec<(&'a Vec3, &'a Vec3)>> {
    set.pairs
        .iter()
        .map(|c| match (kps_a.get(c.index_a), kps_b.get(c.index_b)) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::ShapeMismatch(format!(
                "correspondence ({}, {}) outside keypoint lists of {} and {}",
                c.index_a,
                c.index_b,
                kps_a.len(),
                kps_b.len()
            ))),
        })
        .collect()
}

/// One hypothesis per correspondence, in correspondence order.
pub fn generate_hypotheses(
    set: &CorrespondenceSet,
    kps_a: &[Vec3],
    kps_b: &[Vec3],
    provider: &dyn RotationProvider,
) -> Result<Vec<Hypothesis>> {
    if set.is_empty() {
        return Err(Error::EmptyCorrespondences);
    }
    let ends = endpoints(set, kps_a, kps_b)?;
    let rotations = provider.rotations(set)?;
    if rotations.len() != set.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rotations for {} correspondences",
            rotations.len(),
            set.len()
        )));
    }
    Ok(ends
        .iter()
        .zip(&rotations)
        .enumerate()
        .map(|(i, ((p1, p2), r))| Hypothesis::new(RigidTransform::new(*r, translation_from_rotation(p1, p2, r)), i))
        .collect())
}

fn inliers_of(t: &RigidTransform, ends: &[(&Vec3, &Vec3)], tau: f64) -> Vec<usize> {
    let r: Mat3 = t.rotation_matrix();
    let tr = t.t();
    let tau2 = tau * tau;
    ends.iter()
        .enumerate()
        .filter(|(_, (pa, pb))| (r * **pb + tr - **pa).norm_squared() < tau2)
        .map(|(i, _)| i)
        .collect()
}

/// Sets the inliers: correspondences `(i, j)` with `|T(p_j) - p_i| < tau`.
pub fn score_hypothesis(h: &Hypothesis, set: &CorrespondenceSet, kps_a: &[Vec3], kps_b: &[Vec3], tau: f64) -> Result<Hypothesis> {
    let ends = endpoints(set, kps_a, kps_b)?;
    Ok(Hypothesis {
        inliers: inliers_of(&h.transform, &ends, tau),
        ..h.clone()
    })
}

fn refine(h: Hypothesis, ends: &[(&Vec3, &Vec3)], tau: f64, rounds: usize) -> (Hypothesis, bool) {
    let mut best = h;
    let mut refined = false;
    for _ in 0..rounds {
        if best.inliers.len() < 3 {
            break;
        }
        let src: Vec<Vec3> = best.inliers.iter().map(|&i| *ends[i].1).collect();
        let dst: Vec<Vec3> = best.inliers.iter().map(|&i| *ends[i].0).collect();
        let Ok(t) = kabsch_align(&src, &dst) else {
            break;
        };
        let inliers = inliers_of(&t, ends, tau);
        if inliers.len() < best.inliers.len() {
            break;
        }
        let grew = inliers.len() > best.inliers.len();
        best = Hypothesis {
            transform: t,
            correspondence: best.correspondence,
            inliers,
        };
        refined = true;
        if !grew {
            break;
        }
    }
    (best, refined)
}

/// Re-estimates `h` by Kabsch over its inliers, repeating while the inlier
/// count grows (at most `rounds` times). Returns `h` unchanged and `false`
/// with fewer than three inliers or a degenerate configuration.
pub fn refine_with_inliers(
    h: &Hypothesis,
    set: &CorrespondenceSet,
    kps_a: &[Vec3],
    kps_b: &[Vec3],
    tau: f64,
    rounds: usize,
) -> Result<(Hypothesis, bool)> {
    let ends = endpoints(set, kps_a, kps_b)?;
    Ok(refine(h.clone(), &ends, tau, rounds))
}

/// Index of the highest-scoring hypothesis; ties go to the earliest.
pub fn select_best(hypotheses: &[Hypothesis]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, h) in hypotheses.iter().enumerate() {
        if best.is_none_or(|b| h.inlier_count() > hypotheses[b].inlier_count()) {
            best = Some(i);
        }
    }
    best
}

fn finish(
    method: Method,
    hypotheses: &[Hypothesis],
    ends: &[(&Vec3, &Vec3)],
    cfg: &RegistrationConfig,
    generation_seconds: f64,
    verify_start: Instant,
) -> RegistrationResult {
    let (transform, score, refined) = match select_best(hypotheses) {
        Some(b) => {
            let (h, refined) = refine(hypotheses[b].clone(), ends, cfg.tau, cfg.refine_rounds);
            (h.transform, h.inlier_count(), refined)
        }
        None => (RigidTransform::IDENTITY, 0, false),
    };
    RegistrationResult {
        method,
        transform,
        score,
        hypotheses_evaluated: hypotheses.len(),
        generation_seconds,
        verification_seconds: verify_start.elapsed().as_secs_f64(),
        refined,
        reliable: score >= cfg.min_inliers,
    }
}

/// Direct registration; also returns every scored hypothesis.
pub fn register_direct_detailed(
    kps_a: &[Vec3],
    kps_b: &[Vec3],
    set: &CorrespondenceSet,
    provider: &dyn RotationProvider,
    cfg: &RegistrationConfig,
) -> Result<(RegistrationResult, Vec<Hypothesis>)> {
    if !(cfg.tau > 0.0) {
        return Err(Error::InvalidConfig("tau must be positive".into()));
    }
    let start = Instant::now();
    let mut hyps = generate_hypotheses(set, kps_a, kps_b, provider)?;
    let generation_seconds = start.elapsed().as_secs_f64();
    let verify_start = Instant::now();
    let ends = endpoints(set, kps_a, kps_b)?;
    for h in &mut hyps {
        h.inliers = inliers_of(&h.transform, &ends, cfg.tau);
    }
    let result = finish(Method::Direct, &hyps, &ends, cfg, generation_seconds, verify_start);
    Ok((result, hyps))
}

/// Generates one hypothesis per correspondence, verifies all, refines the best.
pub fn register_direct(
    kps_a: &[Vec3],
    kps_b: &[Vec3],
    set: &CorrespondenceSet,
    provider: &dyn RotationProvider,
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult> {
    Ok(register_direct_detailed(kps_a, kps_b, set, provider, cfg)?.0)
}

/// RANSAC baseline; also returns every scored 3-point hypothesis.
pub fn register_ransac_detailed(
    kps_a: &[Vec3],
    kps_b: &[Vec3],
    set: &CorrespondenceSet,
    iterations: usize,
    cfg: &RegistrationConfig,
    seed: u64,
) -> Result<(RegistrationResult, Vec<Hypothesis>)> {
    if set.len() < 3 {
        return Err(Error::TooFewCorrespondences {
            needed: 3,
            got: set.len(),
        });
    }
    if !(cfg.tau > 0.0) {
        return Err(Error::InvalidConfig("tau must be positive".into()));
    }
    let ends = endpoints(set, kps_a, kps_b)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hyps = Vec::with_capacity(iterations);
    let mut generation = 0.0;
    let mut verification = 0.0;
    for _ in 0..iterations {
        let t0 = Instant::now();
        let idx = rand::seq::index::sample(&mut rng, set.len(), 3).into_vec();
        let src: Vec<Vec3> = idx.iter().map(|&i| *ends[i].1).collect();
        let dst: Vec<Vec3> = idx.iter().map(|&i| *ends[i].0).collect();
        let fit = kabsch_align(&src, &dst);
        let t1 = Instant::now();
        generation += (t1 - t0).as_secs_f64();
        if let Ok(t) = fit {
            let mut h = Hypothesis::new(t, idx[0]);
            h.inliers = inliers_of(&h.transform, &ends, cfg.tau);
            hyps.push(h);
        }
        verification += t1.elapsed().as_secs_f64();
    }
    let verify_start = Instant::now();
    let mut result = finish(Method::Ransac, &hyps, &ends, cfg, generation, verify_start);
    result.verification_seconds += verification;
    Ok((result, hyps))
}

/// Samples `iterations` minimal 3-correspondence sets, keeps the best-scoring
/// Kabsch fit and refines it. Deterministic per `seed`.
pub fn register_ransac(
    kps_a: &[Vec3],
    kps_b: &[Vec3],
    set: &CorrespondenceSet,
    iterations: usize,
    cfg: &RegistrationConfig,
    seed: u64,
) -> Result<RegistrationResult> {
    Ok(register_ransac_detailed(kps_a, kps_b, set, iterations, cfg, seed)?.0)
}
