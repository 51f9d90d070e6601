//! The twin folding auto-encoders, the latent pose feature and RelativeNet.
//!
//! All three networks share one [`ParamStore`]; parameter names are prefixed
//! with `ppf.`, `pc.` and `rel.` respectively.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::UnitQuat;
use crate::nn::{
    backprop, load_checkpoint, mlp_forward, mlp_forward_broadcast, ops, save_checkpoint, Activation,
    Gradients, MlpSpec, MlpTape, OutputNorm, ParamStore, Tensor,
};
use crate::patches::{encode_patch_ppfs, LocalPatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Point-pair-feature input; rotation invariant.
    Ppf,
    /// Raw normalized points; pose variant.
    Pc,
}

impl Variant {
    pub fn input_width(self) -> usize {
        match self {
            Variant::Ppf => 4,
            Variant::Pc => 3,
        }
    }

    pub fn prefix(self) -> &'static str {
        match self {
            Variant::Ppf => "ppf",
            Variant::Pc => "pc",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.prefix())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ppf" => Ok(Variant::Ppf),
            "pc" => Ok(Variant::Pc),
            other => Err(Error::InvalidConfig(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentDescriptor {
    pub values: Vec<f64>,
    pub variant: Variant,
}

/// `pc latent - ppf latent` of one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseFeature {
    pub values: Vec<f64>,
}

/// Architecture hyper-parameters, stored alongside checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub latent_dim: usize,
    /// Per-point encoder widths after the input layer.
    pub point_widths: Vec<usize>,
    /// Hidden widths of each folding MLP.
    pub fold_hidden: Vec<usize>,
    /// Hidden widths of RelativeNet (three for a four-layer network).
    pub rel_hidden: Vec<usize>,
    pub n_patch: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            point_widths: vec![64, 128],
            fold_hidden: vec![64, 64],
            rel_hidden: vec![256, 128, 64],
            n_patch: 256,
        }
    }
}

impl ModelConfig {
    pub fn grid_side(&self) -> usize {
        let mut m = (self.n_patch as f64).sqrt().ceil() as usize;
        while m * m < self.n_patch {
            m += 1;
        }
        m.max(1)
    }

    fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.n_patch == 0 || self.point_widths.is_empty() {
            return Err(Error::InvalidConfig(format!("degenerate model config {self:?}")));
        }
        Ok(())
    }
}

/// Square `m x m` grid on `[-1, 1]^2`, row-major.
pub fn folding_grid(m: usize) -> Tensor {
    let coord = |i: usize| {
        if m == 1 {
            0.0
        } else {
            -1.0 + 2.0 * i as f64 / (m - 1) as f64
        }
    };
    let mut data = Vec::with_capacity(m * m * 2);
    for i in 0..m {
        for j in 0..m {
            data.push(coord(i));
            data.push(coord(j));
        }
    }
    Tensor::matrix(m * m, 2, data).expect("grid shape")
}

/// Recorded state of one encoder pass.
pub struct EncodeTape<'a> {
    point: MlpTape<'a>,
    argmax: Vec<usize>,
    rows: usize,
    latent: MlpTape<'a>,
}

/// Recorded state of one decoder pass.
pub struct DecodeTape<'a> {
    fold1: MlpTape<'a>,
    fold2: MlpTape<'a>,
}

/// Encoder (per-point MLP, max-pool, latent layer) plus a two-stage folding
/// decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldNetModel {
    pub variant: Variant,
    pub latent_dim: usize,
    pub grid_side: usize,
    pub point_mlp: MlpSpec,
    pub latent_mlp: MlpSpec,
    pub fold1: MlpSpec,
    pub fold2: MlpSpec,
    grid: Tensor,
}

impl FoldNetModel {
    pub fn new(variant: Variant, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.latent_dim;
        let out = variant.input_width();
        let mut pw = vec![out];
        pw.extend(&cfg.point_widths);
        let point_mlp = MlpSpec::new(pw.clone(), vec![Activation::Relu; pw.len() - 1], OutputNorm::None)?;
        let latent_mlp = MlpSpec::new(vec![*pw.last().expect("non-empty"), d], vec![Activation::None], OutputNorm::None)?;
        let fold = |input: usize| {
            let mut w = vec![input + d];
            w.extend(&cfg.fold_hidden);
            w.push(out);
            MlpSpec::relu_hidden(w, OutputNorm::None)
        };
        let m = cfg.grid_side();
        Ok(Self {
            variant,
            latent_dim: d,
            grid_side: m,
            point_mlp,
            latent_mlp,
            fold1: fold(2)?,
            fold2: fold(out)?,
            grid: folding_grid(m),
        })
    }

    pub fn output_width(&self) -> usize {
        self.variant.input_width()
    }

    fn names(&self) -> [String; 4] {
        let p = self.variant.prefix();
        [format!("{p}.enc"), format!("{p}.lat"), format!("{p}.fold1"), format!("{p}.fold2")]
    }

    pub fn init<R: rand::Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        let [enc, lat, f1, f2] = self.names();
        self.point_mlp.init(&enc, store, rng);
        self.latent_mlp.init(&lat, store, rng);
        self.fold1.init(&f1, store, rng);
        self.fold2.init(&f2, store, rng);
    }

    /// Encoder input rows: normalized points (`pc`) or PPF rows (`ppf`).
    pub fn input_rows(&self, patch: &LocalPatch) -> Result<Tensor> {
        match self.variant {
            Variant::Pc => Tensor::from_rows(&patch.points.iter().map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>()),
            Variant::Ppf => Tensor::from_rows(&encode_patch_ppfs(patch).features),
        }
    }

    pub fn encode_rows_tape<'a>(&self, params: &'a ParamStore, x: &Tensor) -> Result<(Vec<f64>, EncodeTape<'a>)> {
        let [enc, lat, ..] = self.names();
        let (h, point) = mlp_forward(&self.point_mlp, params, &enc, x)?;
        let (pooled, argmax) = ops::max_pool_rows(&h)?;
        let (z, latent) = mlp_forward(&self.latent_mlp, params, &lat, &pooled)?;
        Ok((
            z.into_data(),
            EncodeTape {
                point,
                argmax,
                rows: x.rows(),
                latent,
            },
        ))
    }

    pub fn encode_backward(&self, tape: &EncodeTape<'_>, dz: &[f64], grads: &mut Gradients) -> Result<()> {
        let up = Tensor::row_vector(dz.to_vec());
        let dpool = backprop(&tape.latent, &up, grads)?.input;
        let dh = ops::max_pool_backward(&tape.argmax, tape.rows, dpool.data())?;
        backprop(&tape.point, &dh, grads)?;
        Ok(())
    }

    pub fn encode(&self, params: &ParamStore, patch: &LocalPatch) -> Result<LatentDescriptor> {
        let x = self.input_rows(patch)?;
        let (values, _) = self.encode_rows_tape(params, &x)?;
        Ok(LatentDescriptor {
            values,
            variant: self.variant,
        })
    }

    pub fn decode_tape<'a>(&self, params: &'a ParamStore, z: &[f64]) -> Result<(Tensor, DecodeTape<'a>)> {
        if z.len() != self.latent_dim {
            return Err(Error::ShapeMismatch(format!(
                "latent of length {}, expected {}",
                z.len(),
                self.latent_dim
            )));
        }
        let [_, _, f1, f2] = self.names();
        let (y1, fold1) = mlp_forward_broadcast(&self.fold1, params, &f1, &self.grid, z)?;
        let (y2, fold2) = mlp_forward_broadcast(&self.fold2, params, &f2, &y1, z)?;
        debug_assert_eq!(y2.shape(), [self.grid_side * self.grid_side, self.output_width()]);
        Ok((y2, DecodeTape { fold1, fold2 }))
    }

    /// Returns the gradient with respect to the latent code.
    pub fn decode_backward(&self, tape: &DecodeTape<'_>, upstream: &Tensor, grads: &mut Gradients) -> Result<Vec<f64>> {
        let g2 = backprop(&tape.fold2, upstream, grads)?;
        let g1 = backprop(&tape.fold1, &g2.input, grads)?;
        let mut dz = g2.broadcast.expect("broadcast forward");
        for (a, b) in dz.iter_mut().zip(g1.broadcast.expect("broadcast forward")) {
            *a += b;
        }
        Ok(dz)
    }

    pub fn decode_fold(&self, params: &ParamStore, z: &LatentDescriptor) -> Result<Tensor> {
        if z.variant != self.variant {
            return Err(Error::VariantMismatch(format!(
                "{} latent fed to a {} decoder",
                z.variant, self.variant
            )));
        }
        Ok(self.decode_tape(params, &z.values)?.0)
    }
}

/// Elementwise `pc - ppf`.
pub fn pose_feature(pc: &LatentDescriptor, ppf: &LatentDescriptor) -> Result<PoseFeature> {
    if pc.variant != Variant::Pc || ppf.variant != Variant::Ppf {
        return Err(Error::VariantMismatch(format!(
            "pose feature needs (pc, ppf), got ({}, {})",
            pc.variant, ppf.variant
        )));
    }
    Ok(PoseFeature {
        values: ops::subtract(&pc.values, &ppf.values)?,
    })
}

/// Four affine layers from a concatenated pose-feature pair to a unit
/// quaternion.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeNetModel {
    pub mlp: MlpSpec,
    pub latent_dim: usize,
}

pub const REL_PREFIX: &str = "rel";

impl RelativeNetModel {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut w = vec![2 * cfg.latent_dim];
        w.extend(&cfg.rel_hidden);
        w.push(4);
        Ok(Self {
            mlp: MlpSpec::relu_hidden(w, OutputNorm::UnitVector)?,
            latent_dim: cfg.latent_dim,
        })
    }

    pub fn init<R: rand::Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        self.mlp.init(REL_PREFIX, store, rng);
    }

    /// Runs a batch of concatenated pairs (`[batch, 2D]`); rows are unit
    /// vectors, not yet sign-canonicalized.
    pub fn forward_tape<'a>(&self, params: &'a ParamStore, x: &Tensor) -> Result<(Tensor, MlpTape<'a>)> {
        mlp_forward(&self.mlp, params, REL_PREFIX, x)
    }

    pub fn pair_input(f1: &PoseFeature, f2: &PoseFeature) -> Vec<f64> {
        ops::concat(&f1.values, &f2.values)
    }

    /// Rotation taking the frame of the second patch onto the first.
    pub fn relative_pose_forward(&self, params: &ParamStore, f1: &PoseFeature, f2: &PoseFeature) -> Result<UnitQuat> {
        Ok(self.relative_poses(params, &[(f1, f2)])?.remove(0))
    }

    pub fn relative_poses(&self, params: &ParamStore, pairs: &[(&PoseFeature, &PoseFeature)]) -> Result<Vec<UnitQuat>> {
        let d = self.latent_dim;
        for (a, b) in pairs {
            if a.values.len() != d || b.values.len() != d {
                return Err(Error::ShapeMismatch(format!(
                    "pose features of length {} and {}, expected {d}",
                    a.values.len(),
                    b.values.len()
                )));
            }
        }
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let rows: Vec<Vec<f64>> = pairs.iter().map(|(a, b)| Self::pair_input(a, b)).collect();
        let (q, _) = self.forward_tape(params, &Tensor::from_rows(&rows)?)?;
        (0..q.rows())
            .map(|r| {
                let v = q.row(r);
                UnitQuat::canonicalize([v[0], v[1], v[2], v[3]])
            })
            .collect()
    }
}

/// The three networks and their shared parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Networks {
    pub config: ModelConfig,
    pub ppf: FoldNetModel,
    pub pc: FoldNetModel,
    pub rel: RelativeNetModel,
    pub params: ParamStore,
}

impl Networks {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let ppf = FoldNetModel::new(Variant::Ppf, &config)?;
        let pc = FoldNetModel::new(Variant::Pc, &config)?;
        let rel = RelativeNetModel::new(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        ppf.init(&mut params, &mut rng);
        pc.init(&mut params, &mut rng);
        rel.init(&mut params, &mut rng);
        Ok(Self {
            config,
            ppf,
            pc,
            rel,
            params,
        })
    }

    pub fn model(&self, variant: Variant) -> &FoldNetModel {
        match variant {
            Variant::Ppf => &self.ppf,
            Variant::Pc => &self.pc,
        }
    }

    pub fn encode(&self, variant: Variant, patch: &LocalPatch) -> Result<LatentDescriptor> {
        self.model(variant).encode(&self.params, patch)
    }

    pub fn decode_fold(&self, z: &LatentDescriptor) -> Result<Tensor> {
        self.model(z.variant).decode_fold(&self.params, z)
    }

    /// Both latents of a patch and the resulting pose feature.
    pub fn describe_patch(&self, patch: &LocalPatch) -> Result<(LatentDescriptor, LatentDescriptor, PoseFeature)> {
        let ppf = self.encode(Variant::Ppf, patch)?;
        let pc = self.encode(Variant::Pc, patch)?;
        let f = pose_feature(&pc, &ppf)?;
        Ok((ppf, pc, f))
    }

    pub fn relative_pose(&self, f1: &PoseFeature, f2: &PoseFeature) -> Result<UnitQuat> {
        self.rel.relative_pose_forward(&self.params, f1, f2)
    }

    pub fn relative_poses(&self, pairs: &[(&PoseFeature, &PoseFeature)]) -> Result<Vec<UnitQuat>> {
        self.rel.relative_poses(&self.params, pairs)
    }

    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "dpreg-networks",
            "model": self.config,
            "grid_side": self.config.grid_side(),
            "decoder_widths": {"ppf": self.ppf.output_width(), "pc": self.pc.output_width()},
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.params, &self.metadata())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, meta) = load_checkpoint(path)?;
        let config: ModelConfig = serde_json::from_value(
            meta.get("model")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("missing model metadata".into()))?,
        )?;
        Self::from_parts(config, params)
    }

    /// Wraps existing parameters, checking every expected tensor is present
    /// with the right shape.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut fresh = Self::new(config, 0)?;
        if fresh.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                fresh.params.len(),
                params.len()
            )));
        }
        for (name, t) in fresh.params.iter() {
            match params.get(name) {
                Some(u) if u.shape() == t.shape() => {}
                _ => return Err(Error::Checkpoint(format!("tensor {name} missing or misshapen"))),
            }
        }
        fresh.params = params;
        Ok(fresh)
    }
}
