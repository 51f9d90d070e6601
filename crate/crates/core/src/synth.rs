//! Desk-scale synthetic scenes and two-view fragment pairs with exact
//! ground truth.
//!
//! A scene is a ground square `[-1, 1]^2` at `z = 0` with boxes, spheres and
//! cylinders standing on it, sampled uniformly by area with analytic normals.
//! Two views are carved by ranking the samples along a random horizontal
//! direction: view `a` keeps the first `L` ranks and view `b` the last `L`,
//! so exactly `overlap * L` samples are shared.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{random_rotation, PointCloud, RigidTransform, Vec3};
use crate::spatial::KdTree;

/// Scene composition and view parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub boxes: usize,
    pub spheres: usize,
    pub cylinders: usize,
    pub points_per_fragment: usize,
    /// Upper bound of the ground-truth rotation angle, degrees.
    pub max_rotation_deg: f64,
    /// Ground-truth translation components are uniform in `[-t, t]`.
    pub max_translation: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            boxes: 3,
            spheres: 2,
            cylinders: 2,
            points_per_fragment: 2000,
            max_rotation_deg: 60.0,
            max_translation: 0.5,
        }
    }
}

/// Objects are at most this tall, so scenes fit in `[-1, 1]^2 x [0, 0.8]`.
const MAX_HEIGHT: f64 = 0.8;
/// Placement grid over the ground square.
const GRID: usize = 3;

impl SceneSpec {
    /// Diagonal of the scene bounding box.
    pub fn nominal_diameter() -> f64 {
        (8.0 + MAX_HEIGHT * MAX_HEIGHT).sqrt()
    }

    fn validate(&self) -> Result<()> {
        if self.points_per_fragment == 0 {
            return Err(Error::InvalidSpec("points_per_fragment must be positive".into()));
        }
        if self.boxes + self.spheres + self.cylinders > GRID * GRID {
            return Err(Error::InvalidSpec(format!("at most {} objects fit the scene", GRID * GRID)));
        }
        if !(self.max_rotation_deg >= 0.0 && self.max_rotation_deg <= 180.0) {
            return Err(Error::InvalidSpec("max_rotation_deg must lie in [0, 180]".into()));
        }
        if !(self.max_translation >= 0.0) {
            return Err(Error::InvalidSpec("max_translation must be non-negative".into()));
        }
        Ok(())
    }
}

/// Two overlapping views of one scene; `gt_transform` maps `b` onto `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct FragmentPair {
    pub id: usize,
    pub cloud_a: PointCloud,
    pub cloud_b: PointCloud,
    pub gt_transform: RigidTransform,
    pub overlap: f64,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, Copy)]
enum Surface {
    /// Axis-aligned rectangle in a local frame: origin, two edge vectors.
    Rect { origin: Vec3, u: Vec3, v: Vec3 },
    Sphere { center: Vec3, radius: f64 },
    /// Vertical cylinder side.
    Tube { base: Vec3, radius: f64, height: f64 },
    /// Horizontal disk facing up.
    Disk { center: Vec3, radius: f64 },
}

impl Surface {
    fn area(&self) -> f64 {
        match *self {
            Surface::Rect { u, v, .. } => u.cross(&v).norm(),
            Surface::Sphere { radius, .. } => 4.0 * PI * radius * radius,
            Surface::Tube { radius, height, .. } => 2.0 * PI * radius * height,
            Surface::Disk { radius, .. } => PI * radius * radius,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec3, Vec3) {
        match *self {
            Surface::Rect { origin, u, v } => {
                let p = origin + u * rng.random::<f64>() + v * rng.random::<f64>();
                (p, u.cross(&v).normalize())
            }
            Surface::Sphere { center, radius } => {
                let n = crate::geometry::random_unit_vector(rng);
                (center + n * radius, n)
            }
            Surface::Tube { base, radius, height } => {
                let a = rng.random::<f64>() * 2.0 * PI;
                let n = Vec3::new(a.cos(), a.sin(), 0.0);
                (base + n * radius + Vec3::z() * (height * rng.random::<f64>()), n)
            }
            Surface::Disk { center, radius } => {
                let r = radius * rng.random::<f64>().sqrt();
                let a = rng.random::<f64>() * 2.0 * PI;
                (center + Vec3::new(r * a.cos(), r * a.sin(), 0.0), Vec3::z())
            }
        }
    }
}

/// Outward faces of a yawed box standing on the ground (bottom omitted).
fn box_faces(center: Vec3, half: Vec3, yaw: f64) -> Vec<Surface> {
    let ex = Vec3::new(yaw.cos(), yaw.sin(), 0.0) * half.x;
    let ey = Vec3::new(-yaw.sin(), yaw.cos(), 0.0) * half.y;
    let ez = Vec3::z() * half.z;
    let c = center;
    // Each face: origin corner and edges ordered so u x v points outward.
    vec![
        Surface::Rect { origin: c + ez - ex - ey, u: ex * 2.0, v: ey * 2.0 },
        Surface::Rect { origin: c + ex - ey - ez, u: ey * 2.0, v: ez * 2.0 },
        Surface::Rect { origin: c - ex - ey - ez, u: ez * 2.0, v: ey * 2.0 },
        Surface::Rect { origin: c + ey - ex - ez, u: ez * 2.0, v: ex * 2.0 },
        Surface::Rect { origin: c - ey - ex - ez, u: ex * 2.0, v: ez * 2.0 },
    ]
}

fn scene_surfaces<R: Rng + ?Sized>(spec: &SceneSpec, rng: &mut R) -> Vec<Surface> {
    let mut surfaces = vec![Surface::Rect {
        origin: Vec3::new(-1.0, -1.0, 0.0),
        u: Vec3::new(2.0, 0.0, 0.0),
        v: Vec3::new(0.0, 2.0, 0.0),
    }];
    let mut cells: Vec<usize> = (0..GRID * GRID).collect();
    cells.shuffle(rng);
    let cell = 2.0 / GRID as f64;
    let kinds = std::iter::repeat_n(0, spec.boxes)
        .chain(std::iter::repeat_n(1, spec.spheres))
        .chain(std::iter::repeat_n(2, spec.cylinders));
    for (kind, &c) in kinds.zip(&cells) {
        let cx = -1.0 + cell * ((c % GRID) as f64 + 0.5);
        let cy = -1.0 + cell * ((c / GRID) as f64 + 0.5);
        let jitter = cell * 0.1;
        let x = cx + rng.random_range(-jitter..=jitter);
        let y = cy + rng.random_range(-jitter..=jitter);
        match kind {
            0 => {
                let h = rng.random_range(0.15..=MAX_HEIGHT) / 2.0;
                let half = Vec3::new(rng.random_range(0.1..=0.22), rng.random_range(0.1..=0.22), h);
                let yaw = rng.random_range(0.0..PI);
                surfaces.extend(box_faces(Vec3::new(x, y, h), half, yaw));
            }
            1 => {
                let r = rng.random_range(0.1..=0.22);
                surfaces.push(Surface::Sphere {
                    center: Vec3::new(x, y, r),
                    radius: r,
                });
            }
            _ => {
                let r = rng.random_range(0.08..=0.18);
                let h = rng.random_range(0.2..=MAX_HEIGHT);
                surfaces.push(Surface::Tube {
                    base: Vec3::new(x, y, 0.0),
                    radius: r,
                    height: h,
                });
                surfaces.push(Surface::Disk {
                    center: Vec3::new(x, y, h),
                    radius: r,
                });
            }
        }
    }
    surfaces
}

fn sample_scene<R: Rng + ?Sized>(surfaces: &[Surface], n: usize, rng: &mut R) -> (Vec<Vec3>, Vec<Vec3>) {
    let total: f64 = surfaces.iter().map(Surface::area).sum();
    let mut cdf = Vec::with_capacity(surfaces.len());
    let mut acc = 0.0;
    for s in surfaces {
        acc += s.area() / total;
        cdf.push(acc);
    }
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let k = cdf.partition_point(|&c| c < u).min(surfaces.len() - 1);
        let (p, nrm) = surfaces[k].sample(rng);
        points.push(p);
        normals.push(nrm);
    }
    (points, normals)
}

/// Builds one fragment pair. `overlap` is the shared fraction of each view
/// and `noise_sigma` the isotropic Gaussian noise added to view `b`.
pub fn generate_synthetic_pair(spec: &SceneSpec, overlap: f64, noise_sigma: f64, seed: u64) -> Result<FragmentPair> {
    spec.validate()?;
    if !(overlap > 0.0 && overlap <= 1.0) {
        return Err(Error::InvalidSpec(format!("overlap must lie in (0, 1], got {overlap}")));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidSpec(format!("noise sigma must be non-negative, got {noise_sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = spec.points_per_fragment;
    let shared = ((overlap * l as f64).round() as usize).clamp(1, l);
    let total = 2 * l - shared;

    let surfaces = scene_surfaces(spec, &mut rng);
    let (points, normals) = sample_scene(&surfaces, total, &mut rng);
    let a = rng.random_range(0.0..2.0 * PI);
    let dir = Vec3::new(a.cos(), a.sin(), 0.0);
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&i, &j| dir.dot(&points[i]).total_cmp(&dir.dot(&points[j])).then(i.cmp(&j)));

    let take = |idx: &[usize]| -> (Vec<Vec3>, Vec<Vec3>) {
        (idx.iter().map(|&i| points[i]).collect(), idx.iter().map(|&i| normals[i]).collect())
    };
    let (pa, na) = take(&order[..l]);
    let mut b_idx = order[total - l..].to_vec();
    b_idx.shuffle(&mut rng);
    let (pb_world, nb_world) = take(&b_idx);

    let rotation = random_rotation(&mut rng, spec.max_rotation_deg.to_radians());
    let t = spec.max_translation;
    let translation = Vec3::new(
        rng.random_range(-t..=t),
        rng.random_range(-t..=t),
        rng.random_range(-t..=t),
    );
    let gt = RigidTransform::new(rotation, translation);
    let to_b = gt.inverse();
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let pb = pb_world
        .iter()
        .map(|p| {
            let q = to_b.apply_point(p);
            if noise_sigma > 0.0 {
                q + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                q
            }
        })
        .collect();
    let nb = nb_world.iter().map(|n| to_b.apply_vector(n)).collect();

    Ok(FragmentPair {
        id: 0,
        cloud_a: PointCloud::with_normals(pa, na)?,
        cloud_b: PointCloud::with_normals(pb, nb)?,
        gt_transform: gt,
        overlap: shared as f64 / l as f64,
        noise_sigma,
    })
}

/// Fraction of `b` points that, mapped by `gt`, have an `a` point within
/// `radius`.
pub fn measure_overlap(a: &PointCloud, b: &PointCloud, gt: &RigidTransform, radius: f64) -> f64 {
    if b.is_empty() || a.is_empty() {
        return 0.0;
    }
    let tree = KdTree::from_points(&a.points);
    let hits = b
        .points
        .iter()
        .filter(|p| {
            let q = gt.apply_point(p);
            tree.nearest(q.as_slice()).is_some_and(|(_, d)| d <= radius)
        })
        .count();
    hits as f64 / b.len() as f64
}

/// Split of the desk benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Dataset-level parameters of the desk benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub scene: SceneSpec,
    pub pairs: usize,
    pub min_overlap: f64,
    pub max_overlap: f64,
    /// Noise sigma as a fraction of the scene diameter.
    pub relative_noise: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            pairs: 50,
            min_overlap: 0.3,
            max_overlap: 0.7,
            relative_noise: 0.005,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    fn split_seed(&self, split: Split) -> u64 {
        match split {
            Split::Train => self.seed.wrapping_mul(2).wrapping_add(0x7261_696e),
            Split::Test => self.seed.wrapping_mul(2).wrapping_add(0x7465_7374),
        }
    }
}

/// Generates one split; pair ids are `0..pairs`.
pub fn generate_dataset(spec: &DatasetSpec, split: Split) -> Result<Vec<FragmentPair>> {
    if !(spec.min_overlap > 0.0 && spec.min_overlap <= spec.max_overlap && spec.max_overlap <= 1.0) {
        return Err(Error::InvalidSpec("overlap range must satisfy 0 < min <= max <= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.split_seed(split));
    let sigma = spec.relative_noise * SceneSpec::nominal_diameter();
    (0..spec.pairs)
        .map(|id| {
            let overlap = rng.random_range(spec.min_overlap..=spec.max_overlap);
            let seed: u64 = rng.random();
            let mut pair = generate_synthetic_pair(&spec.scene, overlap, sigma, seed)?;
            pair.id = id;
            Ok(pair)
        })
        .collect()
}
