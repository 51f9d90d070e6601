//! Rigid 3D math: unit quaternions, SE(3) elements, Kabsch alignment,
//! Chamfer distance and Rodrigues vectors.
//!
//! Quaternions are always kept in canonical form (`w >= 0`, and when
//! `w == 0` the first nonzero of `x, y, z` is positive) so that `q` and `-q`
//! have a single representative.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// A point set with optional per-point unit normals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self {
            points,
            normals: None,
        }
    }

    pub fn with_normals(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        if points.len() != normals.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} points but {} normals",
                points.len(),
                normals.len()
            )));
        }
        Ok(Self {
            points,
            normals: Some(normals),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks the finiteness and unit-normal invariants.
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::DegenerateConfiguration(format!("non-finite point {i}")));
        }
        if let Some(normals) = &self.normals {
            if normals.len() != self.points.len() {
                return Err(Error::ShapeMismatch("normal count differs from point count".into()));
            }
            if let Some(i) = normals.iter().position(|n| (n.norm() - 1.0).abs() > 1e-6) {
                return Err(Error::DegenerateConfiguration(format!("normal {i} is not unit length")));
            }
        }
        Ok(())
    }

    /// Diagonal of the axis-aligned bounding box.
    pub fn bbox_diagonal(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (hi - lo).norm()
    }
}

/// Unit quaternion `(w, x, y, z)` in canonical sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitQuat {
    pub const IDENTITY: UnitQuat = UnitQuat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes and resolves the `q` / `-q` ambiguity.
    pub fn canonicalize(q: [f64; 4]) -> Result<Self> {
        let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::ZeroQuaternion);
        }
        let flip = if q[0] != 0.0 {
            q[0] < 0.0
        } else {
            q[1..].iter().find(|c| **c != 0.0).is_some_and(|c| *c < 0.0)
        };
        let s = if flip { -1.0 / norm } else { 1.0 / norm };
        Ok(Self {
            w: q[0] * s,
            x: q[1] * s,
            y: q[2] * s,
            z: q[3] * s,
        })
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 || angle == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let a = axis / n;
        Self::canonicalize([c, a.x * s, a.y * s, a.z * s]).unwrap_or(Self::IDENTITY)
    }

    /// Inverse of [`UnitQuat::to_rodrigues`].
    pub fn from_rodrigues(v: &Vec3) -> Self {
        Self::from_axis_angle(v, v.norm())
    }

    /// Quaternion of a proper rotation matrix (Shepperd's method).
    pub fn from_rotation_matrix(m: &Mat3) -> Self {
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if trace > 0.0 {
            let s = 2.0 * (trace + 1.0).sqrt();
            [
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            ]
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
            [
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            ]
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt();
            [
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            ]
        } else {
            let s = 2.0 * (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt();
            [
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            ]
        };
        Self::canonicalize(q).unwrap_or(Self::IDENTITY)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn to_rotation_matrix(&self) -> Mat3 {
        let UnitQuat { w, x, y, z } = *self;
        Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.to_rotation_matrix() * v
    }

    /// Hamilton product `self * other` (apply `other` first).
    pub fn mul(&self, o: &UnitQuat) -> UnitQuat {
        let (a, b) = (self, o);
        let q = [
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        ];
        Self::canonicalize(q).unwrap_or(Self::IDENTITY)
    }

    pub fn inverse(&self) -> UnitQuat {
        Self::canonicalize([self.w, -self.x, -self.y, -self.z]).unwrap_or(Self::IDENTITY)
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let v = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        2.0 * v.atan2(self.w.abs())
    }

    /// Geodesic distance between two rotations, in radians.
    pub fn angle_to(&self, other: &UnitQuat) -> f64 {
        self.inverse().mul(other).angle()
    }

    /// Axis-angle vector with angle in `[0, pi]`; identity maps to zero.
    pub fn to_rodrigues(&self) -> Vec3 {
        let v = Vec3::new(self.x, self.y, self.z);
        let s = v.norm();
        if s == 0.0 {
            return Vec3::zeros();
        }
        let angle = 2.0 * s.atan2(self.w);
        v * (angle / s)
    }
}

/// Rotation followed by translation: `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: UnitQuat,
    pub translation: [f64; 3],
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: UnitQuat::IDENTITY,
        translation: [0.0; 3],
    };

    pub fn new(rotation: UnitQuat, translation: Vec3) -> Self {
        Self {
            rotation,
            translation: [translation.x, translation.y, translation.z],
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(UnitQuat::IDENTITY, t)
    }

    pub fn t(&self) -> Vec3 {
        Vec3::from(self.translation)
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        self.rotation.to_rotation_matrix()
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.rotation_matrix() * p + self.t()
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation_matrix() * v
    }

    /// Transforms every point; normals are rotated only.
    pub fn apply_cloud(&self, cloud: &PointCloud) -> PointCloud {
        let r = self.rotation_matrix();
        let t = self.t();
        PointCloud {
            points: cloud.points.iter().map(|p| r * p + t).collect(),
            normals: cloud
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| r * n).collect()),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let rotation = self.rotation.mul(&other.rotation);
        let translation = self.rotation_matrix() * other.t() + self.t();
        RigidTransform::new(rotation, translation)
    }

    pub fn inverse(&self) -> RigidTransform {
        let rotation = self.rotation.inverse();
        let translation = -(rotation.to_rotation_matrix() * self.t());
        RigidTransform::new(rotation, translation)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.t());
        m
    }

    /// Rotation angle of `self^-1 ∘ other`, in radians.
    pub fn rotation_error(&self, other: &RigidTransform) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }

    pub fn translation_error(&self, other: &RigidTransform) -> f64 {
        (self.t() - other.t()).norm()
    }
}

/// Least-squares rigid alignment mapping `src[i]` onto `dst[i]`.
pub fn kabsch_align(src: &[Vec3], dst: &[Vec3]) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(Error::ShapeMismatch(format!(
            "kabsch: {} source vs {} target points",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(Error::DegenerateConfiguration(format!(
            "kabsch needs at least 3 pairs, got {}",
            src.len()
        )));
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vec3>() / n;
    let cd = dst.iter().sum::<Vec3>() / n;
    let mut h = Mat3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateConfiguration("SVD failed".into())),
    };
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] <= 1e-10 * sv[0] {
        return Err(Error::DegenerateConfiguration(
            "centered covariance has rank < 2".into(),
        ));
    }
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    // nalgebra does not order singular values; flip the column of the smallest one.
    let smallest = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(2);
    let mut corr = Mat3::identity();
    corr[(smallest, smallest)] = d;
    let r = v * corr * u.transpose();
    let rotation = UnitQuat::from_rotation_matrix(&r);
    let translation = cd - rotation.to_rotation_matrix() * cs;
    Ok(RigidTransform::new(rotation, translation))
}

/// Anything usable as a fixed-width coordinate row.
pub trait Row {
    fn coords(&self) -> &[f64];
}

impl Row for Vec3 {
    fn coords(&self) -> &[f64] {
        self.as_slice()
    }
}

impl<const N: usize> Row for [f64; N] {
    fn coords(&self) -> &[f64] {
        self
    }
}

impl Row for Vec<f64> {
    fn coords(&self) -> &[f64] {
        self
    }
}

fn directed_mean_nn<R: Row>(from: &[R], to: &[R]) -> f64 {
    let mut total = 0.0;
    for a in from {
        let mut best = f64::INFINITY;
        for b in to {
            let d2: f64 = a
                .coords()
                .iter()
                .zip(b.coords())
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            if d2 < best {
                best = d2;
            }
        }
        total += best.sqrt();
    }
    total / from.len() as f64
}

/// Symmetric Chamfer distance with a max combiner:
/// `max(mean_x min_y |x - y|, mean_y min_x |x - y|)`.
pub fn chamfer_distance<R: Row>(x: &[R], y: &[R]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptySet);
    }
    let dim = x[0].coords().len();
    if x.iter().chain(y).any(|r| r.coords().len() != dim) {
        return Err(Error::ShapeMismatch("chamfer: mixed row widths".into()));
    }
    Ok(directed_mean_nn(x, y).max(directed_mean_nn(y, x)))
}

/// Random rotation with angle uniform in `[0, max_angle]` about a uniform axis.
pub fn random_rotation<R: rand::Rng + ?Sized>(rng: &mut R, max_angle: f64) -> UnitQuat {
    let axis = random_unit_vector(rng);
    let angle = rng.random::<f64>() * max_angle;
    UnitQuat::from_axis_angle(&axis, angle)
}

pub fn random_unit_vector<R: rand::Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 2.0 - 1.0,
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_transform(rng: &mut ChaCha8Rng) -> RigidTransform {
        let q = random_rotation(rng, PI);
        let t = Vec3::new(rng.random(), rng.random(), rng.random()) * 4.0 - Vec3::repeat(2.0);
        RigidTransform::new(q, t)
    }

    fn rz90() -> UnitQuat {
        UnitQuat::from_axis_angle(&Vec3::z(), FRAC_PI_2)
    }

    #[test]
    fn apply_transform_examples() {
        let cloud = PointCloud::new(vec![Vec3::new(0.3, -1.0, 2.0)]);
        assert_eq!(RigidTransform::IDENTITY.apply_cloud(&cloud), cloud);
        let t = RigidTransform::from_translation(Vec3::x());
        assert_eq!(t.apply_point(&Vec3::zeros()), Vec3::x());
        let r = RigidTransform::new(rz90(), Vec3::zeros());
        assert!((r.apply_point(&Vec3::x()) - Vec3::y()).norm() < 1e-15);
    }

    #[test]
    fn normals_are_rotated_not_translated() {
        let cloud = PointCloud::with_normals(vec![Vec3::zeros()], vec![Vec3::x()]).unwrap();
        let t = RigidTransform::new(rz90(), Vec3::new(5.0, 5.0, 5.0));
        let out = t.apply_cloud(&cloud);
        let n = out.normals.unwrap()[0];
        assert!((n - Vec3::y()).norm() < 1e-15);
        assert!((n.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn compose_matches_homogeneous_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let a = random_transform(&mut rng);
            let b = random_transform(&mut rng);
            let lhs = a.compose(&b).to_homogeneous();
            let rhs = a.to_homogeneous() * b.to_homogeneous();
            assert!((lhs - rhs).abs().max() < 1e-12);
            assert!(a.compose(&RigidTransform::IDENTITY).rotation.angle_to(&a.rotation) < 1e-12);
            let e = a.compose(&a.inverse());
            assert!(e.rotation.angle() < 1e-9 && e.t().norm() < 1e-9);
        }
    }

    #[test]
    fn inverse_matches_homogeneous_inverse() {
        assert_eq!(RigidTransform::IDENTITY.inverse(), RigidTransform::IDENTITY);
        let t = RigidTransform::from_translation(Vec3::new(1.0, 2.0, 3.0)).inverse();
        assert_eq!(t.t(), Vec3::new(-1.0, -2.0, -3.0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let a = random_transform(&mut rng);
            let oracle = a.to_homogeneous().try_inverse().unwrap();
            assert!((a.inverse().to_homogeneous() - oracle).abs().max() < 1e-12);
        }
    }

    #[test]
    fn group_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (a, b, c) = (
                random_transform(&mut rng),
                random_transform(&mut rng),
                random_transform(&mut rng),
            );
            let l = a.compose(&b).compose(&c).to_homogeneous();
            let r = a.compose(&b.compose(&c)).to_homogeneous();
            assert!((l - r).abs().max() < 1e-9);
            let left = a.inverse().compose(&a);
            assert!(left.rotation.angle() < 1e-9 && left.t().norm() < 1e-9);
        }
    }

    #[test]
    fn kabsch_examples() {
        let pts = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        let t = kabsch_align(&pts, &pts).unwrap();
        assert!(t.rotation.angle() < 1e-12 && t.t().norm() < 1e-12);

        let line = vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0];
        assert!(matches!(
            kabsch_align(&line, &line),
            Err(Error::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn kabsch_recovers_random_transforms_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..200 {
            let gt = random_transform(&mut rng);
            let n = 3 + trial % 20;
            let src: Vec<Vec3> = (0..n)
                .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
                .collect();
            let dst: Vec<Vec3> = src.iter().map(|p| gt.apply_point(p)).collect();
            let est = kabsch_align(&src, &dst).unwrap();
            assert!(est.rotation_matrix().determinant() > 0.0);
            assert!(est.rotation_error(&gt) < 1e-9, "trial {trial}");
            assert!(est.translation_error(&gt) < 1e-9, "trial {trial}");
        }
    }

    #[test]
    fn kabsch_never_returns_reflection() {
        // dst is a mirror image of src: best proper rotation must still have det +1.
        let src = vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(1.0, 1.0, 1.0),
        ];
        let dst: Vec<Vec3> = src.iter().map(|p| Vec3::new(-p.x, p.y, p.z)).collect();
        let t = kabsch_align(&src, &dst).unwrap();
        assert!((t.rotation_matrix().determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn chamfer_examples() {
        let x = vec![Vec3::zeros(), Vec3::x()];
        assert_eq!(chamfer_distance(&x, &x).unwrap(), 0.0);
        assert_eq!(
            chamfer_distance(&[Vec3::zeros()], &[Vec3::x()]).unwrap(),
            1.0
        );
        let x = vec![Vec3::zeros(), Vec3::x() * 2.0];
        assert_eq!(chamfer_distance(&x, &[Vec3::zeros()]).unwrap(), 1.0);
        let empty: Vec<Vec3> = vec![];
        assert!(matches!(chamfer_distance(&empty, &x), Err(Error::EmptySet)));
        assert!(matches!(
            chamfer_distance(&[vec![0.0; 3]], &[vec![0.0; 4]]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn chamfer_works_on_ppf_rows() {
        let x = [[0.0, 0.0, 0.0, 0.0]];
        let y = [[0.0, 0.0, 0.0, 2.0]];
        assert_eq!(chamfer_distance(&x, &y).unwrap(), 2.0);
    }

    #[test]
    fn canonicalize_examples() {
        assert_eq!(
            UnitQuat::canonicalize([-1.0, 0.0, 0.0, 0.0]).unwrap(),
            UnitQuat::IDENTITY
        );
        let q = UnitQuat::canonicalize([0.0, 0.0, 0.0, -2.0]).unwrap();
        assert_eq!(q.to_array(), [0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            UnitQuat::canonicalize([0.0; 4]),
            Err(Error::ZeroQuaternion)
        ));
    }

    #[test]
    fn rodrigues_examples() {
        assert_eq!(UnitQuat::IDENTITY.to_rodrigues(), Vec3::zeros());
        let r = rz90().to_rodrigues();
        assert!((r - Vec3::new(0.0, 0.0, FRAC_PI_2)).norm() < 1e-15);
    }

    #[test]
    fn rodrigues_round_trips_through_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let q = random_rotation(&mut rng, PI);
            let rv = q.to_rodrigues();
            assert!(rv.norm() <= PI + 1e-12);
            // Oracle: Rodrigues' rotation formula, independent of the quaternion path.
            let theta = rv.norm();
            let k = rv / theta;
            let kx = Mat3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
            let r = Mat3::identity() + kx * theta.sin() + kx * kx * (1.0 - theta.cos());
            assert!((r - q.to_rotation_matrix()).abs().max() < 1e-9);
        }
    }

    #[test]
    fn matrix_quaternion_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let q = random_rotation(&mut rng, PI);
            let back = UnitQuat::from_rotation_matrix(&q.to_rotation_matrix());
            assert!(q.angle_to(&back) < 1e-9);
            assert!(back.w >= 0.0);
        }
    }

    proptest::proptest! {
        #[test]
        fn canonicalize_is_sign_invariant(
            w in -1.0f64..1.0, x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0
        ) {
            proptest::prop_assume!(w * w + x * x + y * y + z * z > 1e-12);
            let a = UnitQuat::canonicalize([w, x, y, z]).unwrap();
            let b = UnitQuat::canonicalize([-w, -x, -y, -z]).unwrap();
            proptest::prop_assert_eq!(a, b);
            proptest::prop_assert!(a.w >= 0.0);
            let n = (a.w * a.w + a.x * a.x + a.y * a.y + a.z * a.z).sqrt();
            proptest::prop_assert!((n - 1.0).abs() < 1e-9);
        }

        #[test]
        fn chamfer_is_symmetric_and_non_negative(
            xs in proptest::collection::vec(proptest::array::uniform3(-5.0f64..5.0), 1..20),
            ys in proptest::collection::vec(proptest::array::uniform3(-5.0f64..5.0), 1..20),
        ) {
            let d1 = chamfer_distance(&xs, &ys).unwrap();
            let d2 = chamfer_distance(&ys, &xs).unwrap();
            proptest::prop_assert_eq!(d1, d2);
            proptest::prop_assert!(d1 >= 0.0);
        }
    }
}
