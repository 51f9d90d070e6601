//! Keypoint sampling, local patch extraction, normal estimation and
//! point-pair-feature encoding.

use std::collections::HashMap;

use nalgebra::SymmetricEigen;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Mat3, PointCloud, Vec3};
use crate::spatial::KdTree;

/// A sampled point of a parent cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub index: usize,
    pub position: Vec3,
}

/// Neighborhood of a keypoint, centered on it and scaled by `1 / radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPatch {
    /// Keypoint position in the parent cloud frame (scene units).
    pub reference: Vec3,
    pub reference_normal: Vec3,
    /// Normalized neighbor coordinates; the reference sits at the origin.
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub radius: f64,
    pub keypoint: usize,
}

impl LocalPatch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Rotates the patch about its reference (a rigid motion of the parent
    /// cloud about the keypoint).
    pub fn rotated(&self, rotation: &Mat3) -> LocalPatch {
        LocalPatch {
            reference: self.reference,
            reference_normal: rotation * self.reference_normal,
            points: self.points.iter().map(|p| rotation * p).collect(),
            normals: self.normals.iter().map(|n| rotation * n).collect(),
            radius: self.radius,
            keypoint: self.keypoint,
        }
    }
}

/// One `(angle(n1, d), angle(n2, d), angle(n1, n2), |d|)` row per neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct PpfSignatureSet {
    pub features: Vec<[f64; 4]>,
}

impl PpfSignatureSet {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Extraction parameters shared by training and inference.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PatchConfig {
    pub radius: f64,
    pub n_patch: usize,
}

impl PatchConfig {
    /// 2048 points within 30 cm, as used on real scans.
    pub const PAPER_SCALE: PatchConfig = PatchConfig {
        radius: 0.30,
        n_patch: 2048,
    };

    /// Desk-scale default: `n_patch = 256`, radius `0.15 x` scene diameter.
    pub fn desk(scene_diameter: f64) -> Self {
        Self {
            radius: 0.15 * scene_diameter,
            n_patch: 256,
        }
    }
}

/// Unsigned angle between two vectors via `atan2(|a x b|, a . b)`.
#[inline]
pub fn vector_angle(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Point pair feature of two oriented points.
pub fn compute_ppf(p1: &Vec3, n1: &Vec3, p2: &Vec3, n2: &Vec3) -> [f64; 4] {
    let d = p2 - p1;
    let dist = d.norm();
    let n12 = vector_angle(n1, n2);
    if dist == 0.0 {
        return [0.0, 0.0, n12, 0.0];
    }
    [vector_angle(n1, &d), vector_angle(n2, &d), n12, dist]
}

/// Pairs the patch reference with each neighbor, in neighbor order.
pub fn encode_patch_ppfs(patch: &LocalPatch) -> PpfSignatureSet {
    let origin = Vec3::zeros();
    let features = patch
        .points
        .iter()
        .zip(&patch.normals)
        .map(|(p, n)| compute_ppf(&origin, &patch.reference_normal, p, n))
        .collect();
    PpfSignatureSet { features }
}

/// PCA normals from `k` nearest neighbors, oriented toward `viewpoint`.
pub fn estimate_normals(cloud: &PointCloud, k: usize, viewpoint: &Vec3) -> Result<PointCloud> {
    if k < 3 || cloud.len() <= k {
        return Err(Error::TooFewPoints {
            needed: k.max(3),
            got: cloud.len(),
        });
    }
    let tree = KdTree::from_points(&cloud.points);
    let normals = cloud
        .points
        .iter()
        .map(|p| {
            let nbrs = tree.knn(p.as_slice(), k);
            let mean = nbrs.iter().map(|(i, _)| cloud.points[*i]).sum::<Vec3>() / k as f64;
            let mut cov = Mat3::zeros();
            for (i, _) in &nbrs {
                let d = cloud.points[*i] - mean;
                cov += d * d.transpose();
            }
            let eig = SymmetricEigen::new(cov);
            let (imin, _) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .expect("3 eigenvalues");
            let mut n: Vec3 = eig.eigenvectors.column(imin).into_owned();
            n /= n.norm();
            if n.dot(&(viewpoint - p)) < 0.0 {
                n = -n;
            }
            n
        })
        .collect();
    PointCloud::with_normals(cloud.points.clone(), normals)
}

/// One keypoint per occupied voxel: the point nearest the voxel centroid.
/// Keypoints are ordered by the first appearance of their voxel.
pub fn sample_keypoints(cloud: &PointCloud, voxel: f64) -> Vec<Keypoint> {
    assert!(voxel > 0.0, "voxel edge must be positive");
    let mut slots: HashMap<[i64; 3], usize> = HashMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let key = voxel_key(p, voxel);
        let slot = *slots.entry(key).or_insert_with(|| {
            members.push(Vec::new());
            members.len() - 1
        });
        members[slot].push(i);
    }
    members
        .iter()
        .map(|idx| {
            let centroid = idx.iter().map(|&i| cloud.points[i]).sum::<Vec3>() / idx.len() as f64;
            let mut best = idx[0];
            let mut best_d = f64::INFINITY;
            for &i in idx {
                let d = (cloud.points[i] - centroid).norm_squared();
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            Keypoint {
                index: best,
                position: cloud.points[best],
            }
        })
        .collect()
}

pub fn voxel_key(p: &Vec3, voxel: f64) -> [i64; 3] {
    [
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    ]
}

/// Samples `n_patch` neighbors within `radius` of `keypoint` and normalizes
/// them. Sampling is without replacement when enough neighbors exist.
pub fn extract_patch(
    cloud: &PointCloud,
    keypoint: &Keypoint,
    cfg: &PatchConfig,
    seed: u64,
) -> Result<LocalPatch> {
    let tree = KdTree::from_points(&cloud.points);
    extract_patch_with(cloud, &tree, keypoint, cfg, seed)
}

/// [`extract_patch`] with a prebuilt spatial index over `cloud.points`.
pub fn extract_patch_with(
    cloud: &PointCloud,
    tree: &KdTree,
    keypoint: &Keypoint,
    cfg: &PatchConfig,
    seed: u64,
) -> Result<LocalPatch> {
    let normals = cloud
        .normals
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("patch extraction requires normals".into()))?;
    // Slack keeps points placed exactly on the sphere inside it.
    let neighbors = tree.within_radius(keypoint.position.as_slice(), cfg.radius * (1.0 + 1e-9));
    if neighbors.is_empty() {
        return Err(Error::EmptyNeighborhood {
            keypoint: keypoint.index,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<usize> = if neighbors.len() >= cfg.n_patch {
        rand::seq::index::sample(&mut rng, neighbors.len(), cfg.n_patch)
            .into_iter()
            .map(|i| neighbors[i])
            .collect()
    } else {
        use rand::Rng;
        (0..cfg.n_patch)
            .map(|_| neighbors[rng.random_range(0..neighbors.len())])
            .collect()
    };
    let inv_r = 1.0 / cfg.radius;
    Ok(LocalPatch {
        reference: keypoint.position,
        reference_normal: normals[keypoint.index],
        points: chosen
            .iter()
            .map(|&i| (cloud.points[i] - keypoint.position) * inv_r)
            .collect(),
        normals: chosen.iter().map(|&i| normals[i]).collect(),
        radius: cfg.radius,
        keypoint: keypoint.index,
    })
}

/// Per-keypoint sampling seed, stable across runs.
pub fn patch_seed(base: u64, keypoint: usize) -> u64 {
    base ^ (keypoint as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{random_rotation, RigidTransform, UnitQuat};
    use rand::Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_oriented_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        let pts: Vec<Vec3> = (0..n)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let nrm: Vec<Vec3> = (0..n)
            .map(|_| crate::geometry::random_unit_vector(rng))
            .collect();
        PointCloud::with_normals(pts, nrm).unwrap()
    }

    #[test]
    fn ppf_examples() {
        let o = Vec3::zeros();
        let f = compute_ppf(&o, &Vec3::z(), &Vec3::x(), &Vec3::z());
        assert_eq!(f, [FRAC_PI_2, FRAC_PI_2, 0.0, 1.0]);
        let f = compute_ppf(&o, &Vec3::z(), &Vec3::x(), &Vec3::x());
        assert_eq!(f, [FRAC_PI_2, 0.0, FRAC_PI_2, 1.0]);
        let f = compute_ppf(&o, &Vec3::z(), &o, &Vec3::x());
        assert_eq!(f, [0.0, 0.0, FRAC_PI_2, 0.0]);
    }

    #[test]
    fn ppf_is_rigid_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let p1 = Vec3::new(rng.random(), rng.random(), rng.random());
            let p2 = Vec3::new(rng.random(), rng.random(), rng.random());
            let n1 = crate::geometry::random_unit_vector(&mut rng);
            let n2 = crate::geometry::random_unit_vector(&mut rng);
            let t = RigidTransform::new(random_rotation(&mut rng, PI), Vec3::new(3.0, -1.0, 2.0));
            let a = compute_ppf(&p1, &n1, &p2, &n2);
            let b = compute_ppf(
                &t.apply_point(&p1),
                &t.apply_vector(&n1),
                &t.apply_point(&p2),
                &t.apply_vector(&n2),
            );
            for k in 0..4 {
                assert!((a[k] - b[k]).abs() < 1e-9);
                assert!(a[k] >= 0.0);
            }
            assert!(a[..3].iter().all(|x| *x <= PI));
        }
    }

    #[test]
    fn normals_of_plane_face_viewpoint() {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push(Vec3::new(i as f64 * 0.1, j as f64 * 0.1, 0.0));
            }
        }
        let cloud = PointCloud::new(pts);
        let up = estimate_normals(&cloud, 8, &Vec3::new(0.5, 0.5, 3.0)).unwrap();
        for n in up.normals.unwrap() {
            assert!((n - Vec3::z()).norm() < 1e-9);
        }
        let down = estimate_normals(&cloud, 8, &Vec3::new(0.5, 0.5, -3.0)).unwrap();
        for n in down.normals.unwrap() {
            assert!((n + Vec3::z()).norm() < 1e-9);
        }
    }

    #[test]
    fn sphere_normals_are_radial() {
        // Fibonacci sphere, viewpoint outside: normals should point outward.
        let n = 2000;
        let golden = PI * (3.0 - 5f64.sqrt());
        let pts: Vec<Vec3> = (0..n)
            .map(|i| {
                let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - y * y).sqrt();
                let th = golden * i as f64;
                Vec3::new(r * th.cos(), y, r * th.sin())
            })
            .collect();
        let cloud = PointCloud::new(pts.clone());
        // Orient toward the centre, then compare with the inward radial direction.
        let est = estimate_normals(&cloud, 10, &Vec3::zeros()).unwrap();
        for (p, nrm) in pts.iter().zip(est.normals.unwrap()) {
            let radial = -p.normalize();
            assert!(vector_angle(&nrm, &radial) < 5f64.to_radians());
        }
    }

    #[test]
    fn too_few_points_for_normals() {
        let cloud = PointCloud::new(vec![Vec3::zeros(), Vec3::x()]);
        assert!(matches!(
            estimate_normals(&cloud, 3, &Vec3::zeros()),
            Err(Error::TooFewPoints { .. })
        ));
    }

    #[test]
    fn keypoint_examples() {
        let cloud = PointCloud::new(vec![
            Vec3::new(0.1, 0.1, 0.1),
            Vec3::new(0.2, 0.2, 0.2),
            Vec3::new(0.3, 0.1, 0.2),
        ]);
        assert_eq!(sample_keypoints(&cloud, 1.0).len(), 1);
        let corners: Vec<Vec3> = (0..8)
            .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64) * 10.0)
            .collect();
        let kps = sample_keypoints(&PointCloud::new(corners), 0.5);
        assert_eq!(kps.len(), 8);
        assert!(kps.iter().enumerate().all(|(i, k)| k.index == i));
    }

    #[test]
    fn keypoint_count_matches_voxel_hash_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cloud = random_oriented_cloud(&mut rng, 3000);
        for voxel in [0.05, 0.1, 0.33] {
            let mut occupied = std::collections::HashSet::new();
            for p in &cloud.points {
                occupied.insert((
                    (p.x / voxel).floor() as i64,
                    (p.y / voxel).floor() as i64,
                    (p.z / voxel).floor() as i64,
                ));
            }
            let kps = sample_keypoints(&cloud, voxel);
            assert_eq!(kps.len(), occupied.len());
            for k in &kps {
                assert_eq!(cloud.points[k.index], k.position);
            }
        }
    }

    #[test]
    fn single_point_patch_is_all_origin() {
        let cloud = PointCloud::with_normals(vec![Vec3::new(1.0, 2.0, 3.0)], vec![Vec3::z()]).unwrap();
        let kp = Keypoint {
            index: 0,
            position: cloud.points[0],
        };
        let cfg = PatchConfig {
            radius: 0.5,
            n_patch: 16,
        };
        let patch = extract_patch(&cloud, &kp, &cfg, 3).unwrap();
        assert_eq!(patch.len(), 16);
        assert!(patch.points.iter().all(|p| *p == Vec3::zeros()));
        let ppf = encode_patch_ppfs(&patch);
        assert!(ppf.features.iter().all(|f| *f == [0.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn neighbors_on_sphere_normalize_to_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let r = 0.3;
        let centre = Vec3::new(0.5, -0.2, 1.0);
        let mut pts = vec![centre];
        for _ in 0..100 {
            pts.push(centre + crate::geometry::random_unit_vector(&mut rng) * r);
        }
        let nrm = vec![Vec3::z(); pts.len()];
        let cloud = PointCloud::with_normals(pts, nrm).unwrap();
        let kp = Keypoint {
            index: 0,
            position: centre,
        };
        let patch = extract_patch(&cloud, &kp, &PatchConfig { radius: r, n_patch: 101 }, 1).unwrap();
        let at_radius = patch.points.iter().filter(|p| p.norm() > 0.0).count();
        assert_eq!(at_radius, 100);
        for p in patch.points.iter().filter(|p| p.norm() > 0.0) {
            assert!((p.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_neighborhood_is_an_error() {
        let cloud = PointCloud::with_normals(vec![Vec3::zeros()], vec![Vec3::z()]).unwrap();
        let kp = Keypoint {
            index: 0,
            position: Vec3::new(5.0, 5.0, 5.0),
        };
        let cfg = PatchConfig {
            radius: 0.1,
            n_patch: 4,
        };
        assert!(matches!(
            extract_patch(&cloud, &kp, &cfg, 0),
            Err(Error::EmptyNeighborhood { .. })
        ));
    }

    #[test]
    fn translation_cancels_in_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let cloud = random_oriented_cloud(&mut rng, 800);
        let t = RigidTransform::from_translation(Vec3::new(10.0, -4.0, 2.5));
        let moved = t.apply_cloud(&cloud);
        let cfg = PatchConfig {
            radius: 0.25,
            n_patch: 64,
        };
        for idx in [0, 100, 500] {
            let a = extract_patch(
                &cloud,
                &Keypoint {
                    index: idx,
                    position: cloud.points[idx],
                },
                &cfg,
                99,
            )
            .unwrap();
            let b = extract_patch(
                &moved,
                &Keypoint {
                    index: idx,
                    position: moved.points[idx],
                },
                &cfg,
                99,
            )
            .unwrap();
            for (p, q) in a.points.iter().zip(&b.points) {
                assert!((p - q).norm() < 1e-12);
            }
            assert_eq!(a.normals, b.normals);
        }
    }

    #[test]
    fn patch_ppfs_are_invariant_and_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let cloud = random_oriented_cloud(&mut rng, 600);
        let cfg = PatchConfig {
            radius: 0.3,
            n_patch: 256,
        };
        let q = UnitQuat::from_axis_angle(&Vec3::new(1.0, 2.0, 0.5), 1.2);
        let t = RigidTransform::new(q, Vec3::new(0.4, 0.1, -3.0));
        let moved = t.apply_cloud(&cloud);
        let kp = |c: &PointCloud| Keypoint {
            index: 42,
            position: c.points[42],
        };
        let a = encode_patch_ppfs(&extract_patch(&cloud, &kp(&cloud), &cfg, 5).unwrap());
        let b = encode_patch_ppfs(&extract_patch(&moved, &kp(&moved), &cfg, 5).unwrap());
        assert_eq!(a.len(), 256);
        for (x, y) in a.features.iter().zip(&b.features) {
            for k in 0..4 {
                assert!((x[k] - y[k]).abs() < 1e-6);
            }
            assert!(x[..3].iter().all(|v| (0.0..=PI).contains(v)));
            assert!((0.0..=2.0).contains(&x[3]));
        }
    }

    #[test]
    fn extraction_is_deterministic_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let cloud = random_oriented_cloud(&mut rng, 400);
        let cfg = PatchConfig {
            radius: 0.4,
            n_patch: 32,
        };
        let kp = Keypoint {
            index: 7,
            position: cloud.points[7],
        };
        let a = extract_patch(&cloud, &kp, &cfg, 1).unwrap();
        let b = extract_patch(&cloud, &kp, &cfg, 1).unwrap();
        let c = extract_patch(&cloud, &kp, &cfg, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn paper_scale_config() {
        assert_eq!(PatchConfig::PAPER_SCALE.n_patch, 2048);
        assert_eq!(PatchConfig::PAPER_SCALE.radius, 0.30);
    }
}
