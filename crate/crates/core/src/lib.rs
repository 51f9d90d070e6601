//! Direct pairwise registration of 3D point clouds.
//!
//! Twin folding auto-encoders learn a rotation-invariant descriptor (from
//! point pair features) and a pose-variant one (from raw points). Their
//! latent difference feeds a small MLP that regresses the relative rotation
//! of two matched patches, so each correspondence yields a full rigid
//! hypothesis. Registration verifies every hypothesis against the
//! correspondence set and refines the winner with Kabsch.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod matching;
pub mod models;
pub mod nn;
pub mod patches;
pub mod pipeline;
pub mod registration;
pub mod spatial;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use geometry::{chamfer_distance, kabsch_align, PointCloud, RigidTransform, UnitQuat, Vec3};
pub use matching::{CorrespondenceSet, DescriptorSource, MatchStrategy};
pub use models::{FoldNetModel, LatentDescriptor, ModelConfig, Networks, PoseFeature, RelativeNetModel, Variant};
pub use patches::{Keypoint, LocalPatch, PatchConfig, PpfSignatureSet};
pub use registration::{Hypothesis, RegistrationResult, RotationProvider};
pub use training::{LossBreakdown, PatchPairSample, TrainConfig};
pub use eval::{EvalReport, RegistrationThresholds};
pub use pipeline::{BenchConfig, FragmentDescription, PipelineConfig};
pub use synth::{DatasetSpec, FragmentPair, SceneSpec};
