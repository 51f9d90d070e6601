//! Multi-task training: reconstruction, relative-pose and feature-consistency
//! losses over pairs of corresponding patches.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{random_rotation, UnitQuat, Vec3};
use crate::models::{EncodeTape, ModelConfig, Networks, Variant};
use crate::nn::{adam_step, backprop, ops, AdamConfig, Gradients, Tensor};
use crate::patches::{extract_patch_with, patch_seed, sample_keypoints, LocalPatch, PatchConfig};
use crate::spatial::KdTree;
use crate::synth::FragmentPair;

/// Training hyper-parameters. Parsed from flat `key = value` text whose keys
/// are exactly these field names; omitted keys keep their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the pose loss.
    pub lambda1: f64,
    /// Weight of the feature-consistency loss.
    pub lambda2: f64,
    pub use_rec: bool,
    pub use_pose: bool,
    pub use_feat: bool,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub n_patch: usize,
    pub latent_dim: usize,
    /// Patch pairs drawn from each training fragment pair.
    pub samples_per_pair: usize,
    /// Each epoch re-rotates patch `b` so its label is a fresh rotation of
    /// at most this angle (degrees); 0 disables.
    pub augment_max_angle_deg: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            use_rec: true,
            use_pose: true,
            use_feat: true,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 20,
            batch_size: 8,
            seed: 0,
            n_patch: 256,
            latent_dim: 64,
            samples_per_pair: 10,
            augment_max_angle_deg: 60.0,
        }
    }
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad("lambda1 and lambda2 must be non-negative");
        }
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("invalid optimizer settings");
        }
        if self.batch_size == 0 || self.n_patch == 0 || self.latent_dim == 0 {
            return bad("batch_size, n_patch and latent_dim must be positive");
        }
        if !(0.0..=180.0).contains(&self.augment_max_angle_deg) {
            return bad("augment_max_angle_deg must lie in [0, 180]");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// Default architecture with this config's `latent_dim` and `n_patch`.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            latent_dim: self.latent_dim,
            n_patch: self.n_patch,
            ..ModelConfig::default()
        }
    }
}

/// Two patches of the same surface point seen in two fragments.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPairSample {
    pub patch_a: LocalPatch,
    pub patch_b: LocalPatch,
    /// Rotation taking patch `b` onto patch `a`.
    pub gt_rotation: UnitQuat,
    pub p1: Vec3,
    pub p2: Vec3,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_rec: f64,
    pub l_pose: f64,
    pub l_feat: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn add_scaled(&mut self, o: &LossBreakdown, s: f64) {
        self.l_rec += s * o.l_rec;
        self.l_pose += s * o.l_pose;
        self.l_feat += s * o.l_feat;
        self.total += s * o.total;
    }
}

/// Keypoint and patch settings for drawing training pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub voxel: f64,
    pub patch: PatchConfig,
    pub r_match: f64,
    pub per_pair: usize,
}

/// Matches voxel keypoints of `a` to the closest point of `b` under the
/// ground truth (within `r_match`) and draws up to `per_pair` of them per
/// fragment pair.
pub fn sample_training_pairs(pairs: &[FragmentPair], cfg: &SamplingConfig, seed: u64) -> Result<Vec<PatchPairSample>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for pair in pairs {
        let gt = &pair.gt_transform;
        let mapped: Vec<Vec3> = pair.cloud_b.points.iter().map(|p| gt.apply_point(p)).collect();
        let mapped_tree = KdTree::from_points(&mapped);
        let tree_a = KdTree::from_points(&pair.cloud_a.points);
        let tree_b = KdTree::from_points(&pair.cloud_b.points);
        let mut matches: Vec<(usize, usize)> = sample_keypoints(&pair.cloud_a, cfg.voxel)
            .iter()
            .filter_map(|kp| {
                let (j, d) = mapped_tree.nearest(kp.position.as_slice())?;
                (d < cfg.r_match).then_some((kp.index, j))
            })
            .collect();
        matches.shuffle(&mut rng);
        matches.truncate(cfg.per_pair);
        matches.sort_unstable();
        let pair_seed: u64 = rng.random();
        let rotation = pair.gt_transform.rotation;
        for (ia, ib) in matches {
            let ka = crate::patches::Keypoint {
                index: ia,
                position: pair.cloud_a.points[ia],
            };
            let kb = crate::patches::Keypoint {
                index: ib,
                position: pair.cloud_b.points[ib],
            };
            out.push(PatchPairSample {
                patch_a: extract_patch_with(&pair.cloud_a, &tree_a, &ka, &cfg.patch, patch_seed(pair_seed, ia))?,
                patch_b: extract_patch_with(&pair.cloud_b, &tree_b, &kb, &cfg.patch, patch_seed(pair_seed ^ 1, ib))?,
                gt_rotation: rotation,
                p1: ka.position,
                p2: kb.position,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::NoOverlap);
    }
    Ok(out)
}

/// Sign (+1 or -1) that maps a unit 4-vector to its canonical form.
fn canonical_sign(q: &[f64]) -> f64 {
    for &c in q {
        if c != 0.0 {
            return c.signum();
        }
    }
    1.0
}

struct Encoded<'a> {
    /// Indexed `[patch a/b][ppf/pc]`.
    z: [[Vec<f64>; 2]; 2],
    tapes: [[EncodeTape<'a>; 2]; 2],
    dz: [[Vec<f64>; 2]; 2],
}

const VARIANTS: [Variant; 2] = [Variant::Ppf, Variant::Pc];

type PatchEncoding<'a> = ([Vec<f64>; 2], [EncodeTape<'a>; 2], [Vec<f64>; 2]);

/// Encodes one patch with both auto-encoders. With reconstruction enabled,
/// also adds its Chamfer terms and returns their latent gradients.
fn encode_patch<'a>(
    nets: &'a Networks,
    patch: &LocalPatch,
    cfg: &TrainConfig,
    batch: f64,
    loss: &mut LossBreakdown,
    grads: &mut Gradients,
) -> Result<PatchEncoding<'a>> {
    let d = nets.config.latent_dim;
    let mut out: Vec<(Vec<f64>, EncodeTape<'a>, Vec<f64>)> = Vec::with_capacity(2);
    for v in VARIANTS {
        let model = nets.model(v);
        let x = model.input_rows(patch)?;
        let (z, tape) = model.encode_rows_tape(&nets.params, &x)?;
        let dz = if cfg.use_rec {
            let (y, dt) = model.decode_tape(&nets.params, &z)?;
            let (c, ct) = ops::chamfer_forward(&y, &x)?;
            let w = 1.0 / (4.0 * batch);
            loss.l_rec += w * c;
            let (gy, _) = ops::chamfer_backward(&ct, &y, &x, w);
            model.decode_backward(&dt, &gy, grads)?
        } else {
            vec![0.0; d]
        };
        out.push((z, tape, dz));
    }
    let (pc, ppf) = (out.pop().expect("pc"), out.pop().expect("ppf"));
    Ok(([ppf.0, pc.0], [ppf.1, pc.1], [ppf.2, pc.2]))
}

/// Loss breakdown and parameter gradients of one batch.
///
/// `l_rec` averages `(cham(P, P') + cham(F, F')) / 2` over all patches,
/// `l_pose` averages `|q - q_gt|` and `l_feat` averages the distance between
/// the invariant latents of both patches. Disabled terms are exactly zero
/// and contribute no gradient.
pub fn compute_losses(nets: &Networks, batch: &[PatchPairSample], cfg: &TrainConfig) -> Result<(LossBreakdown, Gradients)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput);
    }
    let params = &nets.params;
    let b = batch.len() as f64;
    let mut grads = Gradients::new();
    let mut loss = LossBreakdown::default();
    let mut encoded = Vec::with_capacity(batch.len());

    for s in batch {
        let (za, ta, da) = encode_patch(nets, &s.patch_a, cfg, b, &mut loss, &mut grads)?;
        let (zb, tb, db) = encode_patch(nets, &s.patch_b, cfg, b, &mut loss, &mut grads)?;
        encoded.push(Encoded {
            z: [za, zb],
            tapes: [ta, tb],
            dz: [da, db],
        });
    }

    if cfg.use_pose {
        let rows: Vec<Vec<f64>> = encoded
            .iter()
            .map(|e| {
                let fa = ops::subtract(&e.z[0][1], &e.z[0][0])?;
                let fb = ops::subtract(&e.z[1][1], &e.z[1][0])?;
                Ok(ops::concat(&fa, &fb))
            })
            .collect::<Result<_>>()?;
        let x = Tensor::from_rows(&rows)?;
        let (q, tape) = nets.rel.forward_tape(params, &x)?;
        let mut up = Tensor::zeros(q.shape());
        for (r, s) in batch.iter().enumerate() {
            let raw = q.row(r);
            let sign = canonical_sign(raw);
            let gt = s.gt_rotation.to_array();
            let diff: Vec<f64> = (0..4).map(|k| sign * raw[k] - gt[k]).collect();
            let n = ops::l2_norm(&diff);
            loss.l_pose += n / b;
            if n > 0.0 && cfg.lambda1 > 0.0 {
                for (k, u) in up.row_mut(r).iter_mut().enumerate() {
                    *u = cfg.lambda1 / b * sign * diff[k] / n;
                }
            }
        }
        if cfg.lambda1 > 0.0 {
            let dx = backprop(&tape, &up, &mut grads)?.input;
            let d = nets.config.latent_dim;
            for (r, e) in encoded.iter_mut().enumerate() {
                let row = dx.row(r);
                for (p, df) in [&row[..d], &row[d..]].into_iter().enumerate() {
                    for k in 0..d {
                        e.dz[p][1][k] += df[k];
                        e.dz[p][0][k] -= df[k];
                    }
                }
            }
        }
    }

    if cfg.use_feat {
        for e in encoded.iter_mut() {
            let diff = ops::subtract(&e.z[0][0], &e.z[1][0])?;
            let n = ops::l2_norm(&diff);
            loss.l_feat += n / b;
            if n > 0.0 && cfg.lambda2 > 0.0 {
                for (k, dv) in diff.iter().enumerate() {
                    let g = cfg.lambda2 / b * dv / n;
                    e.dz[0][0][k] += g;
                    e.dz[1][0][k] -= g;
                }
            }
        }
    }

    for e in &encoded {
        for p in 0..2 {
            for (vi, v) in VARIANTS.iter().enumerate() {
                if e.dz[p][vi].iter().any(|g| *g != 0.0) {
                    nets.model(*v).encode_backward(&e.tapes[p][vi], &e.dz[p][vi], &mut grads)?;
                }
            }
        }
    }

    loss.total = loss.l_rec + cfg.lambda1 * loss.l_pose + cfg.lambda2 * loss.l_feat;
    Ok((loss, grads))
}

/// Re-rotates patch `b` so that the label becomes a fresh random rotation.
fn augment<R: Rng + ?Sized>(s: &PatchPairSample, max_angle: f64, rng: &mut R) -> PatchPairSample {
    let label = random_rotation(rng, max_angle);
    let r_aug = label.inverse().mul(&s.gt_rotation);
    PatchPairSample {
        patch_b: s.patch_b.rotated(&r_aug.to_rotation_matrix()),
        gt_rotation: label,
        ..s.clone()
    }
}

fn epoch_batches(n: usize, cfg: &TrainConfig, epoch: usize) -> (Vec<usize>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    (order, rng)
}

fn run_epoch(nets: &mut Networks, samples: &[PatchPairSample], cfg: &TrainConfig, epoch: usize, update: bool) -> Result<LossBreakdown> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (order, mut rng) = epoch_batches(samples.len(), cfg, epoch);
    let max_angle = cfg.augment_max_angle_deg.to_radians();
    let adam = cfg.adam();
    let mut mean = LossBreakdown::default();
    for chunk in order.chunks(cfg.batch_size) {
        let batch: Vec<PatchPairSample> = chunk
            .iter()
            .map(|&i| {
                if max_angle > 0.0 {
                    augment(&samples[i], max_angle, &mut rng)
                } else {
                    samples[i].clone()
                }
            })
            .collect();
        let (loss, grads) = compute_losses(nets, &batch, cfg)?;
        if !loss.total.is_finite() || !grads.is_finite() {
            return Err(Error::InvalidConfig(format!("non-finite loss at epoch {epoch}")));
        }
        mean.add_scaled(&loss, chunk.len() as f64 / samples.len() as f64);
        if update {
            adam_step(&mut nets.params, &grads, &adam)?;
        }
    }
    Ok(mean)
}

/// One shuffled pass of mini-batch Adam updates; returns sample-weighted
/// mean losses. Deterministic given `cfg.seed` and `epoch`.
pub fn train_epoch(nets: &mut Networks, samples: &[PatchPairSample], cfg: &TrainConfig, epoch: usize) -> Result<LossBreakdown> {
    run_epoch(nets, samples, cfg, epoch, true)
}

/// Same batches and augmentation as [`train_epoch`], without updates.
pub fn evaluate_epoch(nets: &Networks, samples: &[PatchPairSample], cfg: &TrainConfig, epoch: usize) -> Result<LossBreakdown> {
    let mut copy = nets.clone();
    run_epoch(&mut copy, samples, cfg, epoch, false)
}

/// Runs `cfg.epochs` epochs, calling `on_epoch` after each.
pub fn train<F>(nets: &mut Networks, samples: &[PatchPairSample], cfg: &TrainConfig, mut on_epoch: F) -> Result<Vec<LossBreakdown>>
where
    F: FnMut(usize, &LossBreakdown),
{
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let l = train_epoch(nets, samples, cfg, epoch)?;
        on_epoch(epoch, &l);
        log.push(l);
    }
    Ok(log)
}

/// CSV with columns `epoch,l_rec,l_pose,l_feat,total`; epochs count from 1.
pub fn write_loss_log(path: &Path, log: &[LossBreakdown]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "l_rec", "l_pose", "l_feat", "total"])?;
    for (i, l) in log.iter().enumerate() {
        w.write_record(&[
            (i + 1).to_string(),
            l.l_rec.to_string(),
            l.l_pose.to_string(),
            l.l_feat.to_string(),
            l.total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
