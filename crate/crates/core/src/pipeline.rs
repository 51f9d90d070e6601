//! End-to-end plumbing: describe fragments, match, register and evaluate
//! a dataset; train on a dataset; loss ablations.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    evaluate_fragment_matching, evaluate_registration_set_with_points, export_hypotheses_csv, hypothesis_stats, inlier_ratio, median, EvalReport, HypothesisStats,
    MatchingInput, MatchingRecord, RegistrationThresholds, MATCH_RATIO_THRESHOLD,
};
use crate::geometry::{PointCloud, RigidTransform, Vec3};
use crate::matching::{match_descriptors, CorrespondenceSet, DescriptorSource, MatchStrategy};
use crate::models::{Networks, PoseFeature};
use crate::patches::{estimate_normals, extract_patch_with, patch_seed, sample_keypoints, Keypoint, PatchConfig};
use crate::registration::{
    register_direct_detailed, register_ransac_detailed, Hypothesis, Method, NetworkRotations, OracleRotations, RegistrationConfig,
    RegistrationResult, RotationProvider,
};
use crate::spatial::KdTree;
use crate::synth::FragmentPair;
use crate::training::{sample_training_pairs, train, LossBreakdown, SamplingConfig, TrainConfig};

/// Scale-dependent settings shared by training and inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Keypoint voxel edge.
    pub voxel: f64,
    pub patch: PatchConfig,
    /// Training pairs: max distance between a keypoint and its mapped match.
    pub r_match: f64,
    /// Fragment matching: a correspondence is true within this distance.
    pub r_inlier: f64,
    pub registration: RegistrationConfig,
    pub thresholds: RegistrationThresholds,
    /// Seed of patch subsampling at inference.
    pub seed: u64,
}

impl PipelineConfig {
    /// Desk defaults for a scene of the given diameter: voxel 4.5% of the
    /// diameter, `tau = 2.5 v`, `r_match = v / 2`, `r_inlier = v`.
    pub fn desk(scene_diameter: f64) -> Self {
        let voxel = 0.045 * scene_diameter;
        Self {
            voxel,
            patch: PatchConfig::desk(scene_diameter),
            r_match: 0.5 * voxel,
            r_inlier: voxel,
            registration: RegistrationConfig::new(2.5 * voxel),
            thresholds: RegistrationThresholds::desk(scene_diameter),
            seed: 0,
        }
    }

    pub fn sampling(&self, per_pair: usize) -> SamplingConfig {
        SamplingConfig {
            voxel: self.voxel,
            patch: self.patch,
            r_match: self.r_match,
            per_pair,
        }
    }
}

/// Keypoints of one fragment with their three descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragmentDescription {
    pub keypoint_indices: Vec<usize>,
    pub positions: Vec<[f64; 3]>,
    /// Invariant latents.
    pub ppf: Vec<Vec<f64>>,
    /// Pose-variant latents.
    pub pc: Vec<Vec<f64>>,
    /// `pc - ppf`.
    pub pose: Vec<Vec<f64>>,
}

impl FragmentDescription {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn keypoints(&self) -> Vec<Vec3> {
        self.positions.iter().map(|p| Vec3::from(*p)).collect()
    }

    pub fn descriptors(&self, source: DescriptorSource) -> &[Vec<f64>] {
        match source {
            DescriptorSource::PpfInvariant => &self.ppf,
            DescriptorSource::PcVariant => &self.pc,
        }
    }

    pub fn pose_features(&self) -> Vec<PoseFeature> {
        self.pose.iter().map(|v| PoseFeature { values: v.clone() }).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let d: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        let n = d.positions.len();
        if [d.keypoint_indices.len(), d.ppf.len(), d.pc.len(), d.pose.len()].iter().any(|&m| m != n) {
            return Err(Error::ShapeMismatch(format!("{}: ragged description", path.display())));
        }
        Ok(d)
    }
}

/// Fills in PCA normals (16 neighbors, oriented toward the origin) when the
/// cloud has none.
pub fn ensure_normals(cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.normals.is_some() {
        Ok(cloud.clone())
    } else {
        estimate_normals(cloud, 16, &Vec3::zeros())
    }
}

/// Samples voxel keypoints, extracts a patch around each and encodes it.
/// Keypoints with an empty neighborhood are skipped.
pub fn describe_fragment(nets: &Networks, cloud: &PointCloud, cfg: &PipelineConfig) -> Result<FragmentDescription> {
    let cloud = ensure_normals(cloud)?;
    let keypoints = sample_keypoints(&cloud, cfg.voxel);
    describe_keypoints(nets, &cloud, &keypoints, cfg)
}

/// Encodes the patches around the given keypoints of `cloud`, which must
/// carry normals.
pub fn describe_keypoints(nets: &Networks, cloud: &PointCloud, keypoints: &[Keypoint], cfg: &PipelineConfig) -> Result<FragmentDescription> {
    let tree = KdTree::from_points(&cloud.points);
    let patch_cfg = PatchConfig {
        n_patch: nets.config.n_patch,
        ..cfg.patch
    };
    let mut d = FragmentDescription {
        keypoint_indices: Vec::new(),
        positions: Vec::new(),
        ppf: Vec::new(),
        pc: Vec::new(),
        pose: Vec::new(),
    };
    for kp in keypoints {
        let patch = match extract_patch_with(cloud, &tree, kp, &patch_cfg, patch_seed(cfg.seed, kp.index)) {
            Ok(p) => p,
            Err(Error::EmptyNeighborhood { .. }) => continue,
            Err(e) => return Err(e),
        };
        let (ppf, pc, f) = nets.describe_patch(&patch)?;
        push_keypoint(&mut d, kp, ppf.values, pc.values, f.values);
    }
    Ok(d)
}

fn push_keypoint(d: &mut FragmentDescription, kp: &Keypoint, ppf: Vec<f64>, pc: Vec<f64>, pose: Vec<f64>) {
    d.keypoint_indices.push(kp.index);
    d.positions.push(kp.position.into());
    d.ppf.push(ppf);
    d.pc.push(pc);
    d.pose.push(pose);
}

pub fn match_fragments(
    a: &FragmentDescription,
    b: &FragmentDescription,
    strategy: MatchStrategy,
    source: DescriptorSource,
) -> Result<CorrespondenceSet> {
    match_descriptors(a.descriptors(source), b.descriptors(source), strategy, source)
}

/// Registration of `b` onto `a`. With `oracle` set, every hypothesis uses
/// that rotation instead of the network prediction.
pub fn register_descriptions(
    nets: &Networks,
    a: &FragmentDescription,
    b: &FragmentDescription,
    set: &CorrespondenceSet,
    cfg: &RegistrationConfig,
    oracle: Option<RigidTransform>,
) -> Result<(RegistrationResult, Vec<Hypothesis>)> {
    let (fa, fb) = (a.pose_features(), b.pose_features());
    let network = NetworkRotations {
        nets,
        features_a: &fa,
        features_b: &fb,
    };
    let oracle = oracle.map(|t| OracleRotations(t.rotation));
    let provider: &dyn RotationProvider = match &oracle {
        Some(o) => o,
        None => &network,
    };
    register_direct_detailed(&a.keypoints(), &b.keypoints(), set, provider, cfg)
}

/// Result for a pair where a method could not run (too few correspondences).
pub fn failed_result(method: Method) -> RegistrationResult {
    RegistrationResult {
        method,
        transform: RigidTransform::IDENTITY,
        score: 0,
        hypotheses_evaluated: 0,
        generation_seconds: 0.0,
        verification_seconds: 0.0,
        refined: false,
        reliable: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub pipeline: PipelineConfig,
    /// Strategies whose correspondence counts and matching recall are reported.
    pub strategies: Vec<MatchStrategy>,
    /// Strategy feeding both registration methods.
    pub registration_strategy: MatchStrategy,
    pub source: DescriptorSource,
    pub ransac_iterations: usize,
    pub ransac_seed: u64,
    pub oracle_rotations: bool,
}

impl BenchConfig {
    pub fn new(pipeline: PipelineConfig) -> Self {
        Self {
            pipeline,
            strategies: vec![
                MatchStrategy::MutualK(1),
                MatchStrategy::MutualK(2),
                MatchStrategy::MutualK(3),
                MatchStrategy::MutualK(4),
                MatchStrategy::Closest,
            ],
            registration_strategy: MatchStrategy::MutualK(1),
            source: DescriptorSource::PpfInvariant,
            ransac_iterations: 1000,
            ransac_seed: 0,
            oracle_rotations: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairOutcome {
    pub pair_id: usize,
    pub gt: RigidTransform,
    /// `(strategy, matching record)` in [`BenchConfig::strategies`] order.
    pub strategies: Vec<(MatchStrategy, MatchingRecord)>,
    /// Matching record of the registration strategy.
    pub matching: MatchingRecord,
    /// Registration correspondences and the keypoints they index.
    pub correspondences: CorrespondenceSet,
    pub keypoints_a: Vec<Vec3>,
    pub keypoints_b: Vec<Vec3>,
    pub direct: RegistrationResult,
    pub ransac: RegistrationResult,
    /// Rotation deviation (radians) of every direct / RANSAC hypothesis.
    pub direct_deviations: Vec<f64>,
    pub ransac_deviations: Vec<f64>,
    pub direct_stats: Option<HypothesisStats>,
    pub ransac_stats: Option<HypothesisStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: MatchStrategy,
    pub matching_recall: f64,
    pub mean_correspondences: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub direct: EvalReport,
    pub ransac: EvalReport,
    pub strategies: Vec<StrategySummary>,
    pub pairs: Vec<PairOutcome>,
    /// Pooled median rotation deviation of all hypotheses; `None` when empty.
    pub direct_median_deviation: Option<f64>,
    pub ransac_median_deviation: Option<f64>,
}

impl BenchReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        s.push_str(&self.direct.summary("direct"));
        s.push('\n');
        s.push_str(&self.ransac.summary("ransac"));
        s.push('\n');
        let fmt = |m: Option<f64>| m.map_or("n/a".to_string(), |v| format!("{:.2} deg", v.to_degrees()));
        s.push_str(&format!(
            "median hypothesis rotation deviation: direct {} ransac {}\n",
            fmt(self.direct_median_deviation),
            fmt(self.ransac_median_deviation)
        ));
        for st in &self.strategies {
            s.push_str(&format!(
                "{:<10} match_recall={:.3} mean_correspondences={:.1}\n",
                st.strategy.to_string(),
                st.matching_recall,
                st.mean_correspondences
            ));
        }
        s
    }
}

/// Describes, matches and registers one pair with both methods. When
/// `dump_dir` is set, writes `pair_XXXX_{direct,ransac}_hypotheses.csv`.
pub fn run_pair(nets: &Networks, pair: &FragmentPair, cfg: &BenchConfig, dump_dir: Option<&Path>) -> Result<PairOutcome> {
    let pc = &cfg.pipeline;
    let da = describe_fragment(nets, &pair.cloud_a, pc)?;
    let db = describe_fragment(nets, &pair.cloud_b, pc)?;
    let (ka, kb) = (da.keypoints(), db.keypoints());
    let gt = pair.gt_transform;

    let matching_of = |set: &CorrespondenceSet| -> Result<MatchingRecord> {
        let input = MatchingInput {
            pair_id: pair.id,
            keypoints_a: &ka,
            keypoints_b: &kb,
            correspondences: set,
            gt,
        };
        Ok(evaluate_fragment_matching(&[input], pc.r_inlier, MATCH_RATIO_THRESHOLD)?.remove(0))
    };
    let empty = da.is_empty() || db.is_empty();
    let mut strategies = Vec::with_capacity(cfg.strategies.len());
    for &s in &cfg.strategies {
        let set = if empty {
            CorrespondenceSet {
                pairs: Vec::new(),
                source: cfg.source,
                strategy: s,
            }
        } else {
            match_fragments(&da, &db, s, cfg.source)?
        };
        strategies.push((s, matching_of(&set)?));
    }
    let set = if empty {
        CorrespondenceSet {
            pairs: Vec::new(),
            source: cfg.source,
            strategy: cfg.registration_strategy,
        }
    } else {
        match_fragments(&da, &db, cfg.registration_strategy, cfg.source)?
    };
    let matching = matching_of(&set)?;

    let oracle = cfg.oracle_rotations.then_some(gt);
    let (direct, direct_h) = match register_descriptions(nets, &da, &db, &set, &pc.registration, oracle) {
        Ok(r) => r,
        Err(Error::EmptyCorrespondences) => (failed_result(Method::Direct), Vec::new()),
        Err(e) => return Err(e),
    };
    let (ransac, ransac_h) = match register_ransac_detailed(&ka, &kb, &set, cfg.ransac_iterations, &pc.registration, cfg.ransac_seed) {
        Ok(r) => r,
        Err(Error::TooFewCorrespondences { .. }) => (failed_result(Method::Ransac), Vec::new()),
        Err(e) => return Err(e),
    };
    let stats = |h: &[Hypothesis], name: &str| -> Result<Option<HypothesisStats>> {
        if h.is_empty() {
            return Ok(None);
        }
        match dump_dir {
            Some(dir) => export_hypotheses_csv(h, &gt, &dir.join(format!("pair_{:04}_{name}_hypotheses.csv", pair.id))).map(Some),
            None => hypothesis_stats(h, &gt).map(Some),
        }
    };
    Ok(PairOutcome {
        pair_id: pair.id,
        gt,
        strategies,
        matching,
        direct_stats: stats(&direct_h, "direct")?,
        ransac_stats: stats(&ransac_h, "ransac")?,
        direct_deviations: direct_h.iter().map(|h| h.transform.rotation_error(&gt)).collect(),
        ransac_deviations: ransac_h.iter().map(|h| h.transform.rotation_error(&gt)).collect(),
        direct,
        ransac,
        correspondences: set,
        keypoints_a: ka,
        keypoints_b: kb,
    })
}

/// Runs [`run_pair`] over a dataset and aggregates both methods.
pub fn bench_dataset<F>(
    nets: &Networks,
    pairs: &[FragmentPair],
    cfg: &BenchConfig,
    dump_dir: Option<&Path>,
    mut on_pair: F,
) -> Result<BenchReport>
where
    F: FnMut(&PairOutcome),
{
    if let Some(dir) = dump_dir {
        fs::create_dir_all(dir)?;
    }
    let mut outcomes = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let o = run_pair(nets, pair, cfg, dump_dir)?;
        on_pair(&o);
        outcomes.push(o);
    }
    summarize(outcomes, cfg)
}

/// Aggregates per-pair outcomes into a report.
pub fn summarize(outcomes: Vec<PairOutcome>, cfg: &BenchConfig) -> Result<BenchReport> {
    let ids: Vec<usize> = outcomes.iter().map(|o| o.pair_id).collect();
    let gts: Vec<RigidTransform> = outcomes.iter().map(|o| o.gt).collect();
    let matching: Vec<MatchingRecord> = outcomes.iter().map(|o| o.matching.clone()).collect();
    let th = &cfg.pipeline.thresholds;
    let direct_results: Vec<RegistrationResult> = outcomes.iter().map(|o| o.direct.clone()).collect();
    let ransac_results: Vec<RegistrationResult> = outcomes.iter().map(|o| o.ransac.clone()).collect();
    let points_b: Vec<Vec<Vec3>> = outcomes.iter().map(|o| o.keypoints_b.clone()).collect();
    let evaluate = |results: &[RegistrationResult]| evaluate_registration_set_with_points(&ids, &gts, results, Some(&points_b), th);
    let direct = EvalReport::new(&matching, &evaluate(&direct_results)?)?;
    let ransac = EvalReport::new(&matching, &evaluate(&ransac_results)?)?;
    let n = outcomes.len().max(1) as f64;
    let strategies = cfg
        .strategies
        .iter()
        .enumerate()
        .map(|(k, &strategy)| StrategySummary {
            strategy,
            matching_recall: outcomes.iter().filter(|o| o.strategies[k].1.matched).count() as f64 / n,
            mean_correspondences: outcomes.iter().map(|o| o.strategies[k].1.correspondences as f64).sum::<f64>() / n,
        })
        .collect();
    let mut pooled_d: Vec<f64> = outcomes.iter().flat_map(|o| o.direct_deviations.iter().copied()).collect();
    let mut pooled_r: Vec<f64> = outcomes.iter().flat_map(|o| o.ransac_deviations.iter().copied()).collect();
    Ok(BenchReport {
        direct,
        ransac,
        strategies,
        direct_median_deviation: median(&mut pooled_d),
        ransac_median_deviation: median(&mut pooled_r),
        pairs: outcomes,
    })
}

/// Fragment matching recall only (no registration), for ablations.
pub fn matching_recall_on(nets: &Networks, pairs: &[FragmentPair], cfg: &PipelineConfig, strategy: MatchStrategy, source: DescriptorSource) -> Result<f64> {
    let mut matched = 0usize;
    for pair in pairs {
        let da = describe_fragment(nets, &pair.cloud_a, cfg)?;
        let db = describe_fragment(nets, &pair.cloud_b, cfg)?;
        if da.is_empty() || db.is_empty() {
            continue;
        }
        let set = match_fragments(&da, &db, strategy, source)?;
        let (ka, kb) = (da.keypoints(), db.keypoints());
        let input = MatchingInput {
            pair_id: pair.id,
            keypoints_a: &ka,
            keypoints_b: &kb,
            correspondences: &set,
            gt: pair.gt_transform,
        };
        if inlier_ratio(&input, cfg.r_inlier)? >= MATCH_RATIO_THRESHOLD {
            matched += 1;
        }
    }
    Ok(if pairs.is_empty() { 0.0 } else { matched as f64 / pairs.len() as f64 })
}

/// Draws training pairs from `pairs`, initializes networks from
/// `cfg.seed` and trains for `cfg.epochs`.
pub fn train_on_dataset<F>(
    pairs: &[FragmentPair],
    cfg: &TrainConfig,
    pipeline: &PipelineConfig,
    on_epoch: F,
) -> Result<(Networks, Vec<LossBreakdown>)>
where
    F: FnMut(usize, &LossBreakdown),
{
    cfg.validate()?;
    let mut sampling = pipeline.sampling(cfg.samples_per_pair);
    sampling.patch.n_patch = cfg.n_patch;
    let samples = sample_training_pairs(pairs, &sampling, cfg.seed)?;
    let mut nets = Networks::new(cfg.model_config(), cfg.seed)?;
    let log = train(&mut nets, &samples, cfg, on_epoch)?;
    Ok((nets, log))
}

/// Loss configurations compared by the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    All,
    NoRec,
    NoPose,
    NoFeat,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::All, Ablation::NoRec, Ablation::NoPose, Ablation::NoFeat];

    pub fn apply(self, cfg: &TrainConfig) -> TrainConfig {
        let mut c = cfg.clone();
        match self {
            Ablation::All => {}
            Ablation::NoRec => c.use_rec = false,
            Ablation::NoPose => c.use_pose = false,
            Ablation::NoFeat => c.use_feat = false,
        }
        c
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Ablation::All => "all",
            Ablation::NoRec => "no-rec",
            Ablation::NoPose => "no-pose",
            Ablation::NoFeat => "no-feat",
        })
    }
}
