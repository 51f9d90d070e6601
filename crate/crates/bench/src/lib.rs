//! Deterministic fixtures shared by the criterion benches.

use std::f64::consts::PI;

use dpreg::geometry::{random_rotation, random_unit_vector};
use dpreg::matching::Correspondence;
use dpreg::synth::generate_synthetic_pair;
use dpreg::{
    CorrespondenceSet, DescriptorSource, FragmentPair, Hypothesis, MatchStrategy, RigidTransform, SceneSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A synthetic pair with `points` points per fragment.
pub fn fragment_pair(points: usize, seed: u64) -> FragmentPair {
    let spec = SceneSpec {
        points_per_fragment: points,
        ..SceneSpec::default()
    };
    generate_synthetic_pair(&spec, 0.5, 0.01, seed).expect("valid spec")
}

/// `n` random correspondences between the points of `pair`.
pub fn random_correspondences(pair: &FragmentPair, n: usize, seed: u64) -> CorrespondenceSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CorrespondenceSet {
        pairs: (0..n)
            .map(|_| Correspondence {
                index_a: rng.random_range(0..pair.cloud_a.len()),
                index_b: rng.random_range(0..pair.cloud_b.len()),
                distance: 0.0,
            })
            .collect(),
        source: DescriptorSource::PpfInvariant,
        strategy: MatchStrategy::Closest,
    }
}

/// `n` random rigid hypotheses.
pub fn random_hypotheses(n: usize, seed: u64) -> Vec<Hypothesis> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| Hypothesis::new(RigidTransform::new(random_rotation(&mut rng, PI), random_unit_vector(&mut rng)), i))
        .collect()
}

/// `n` random descriptors of width `d`.
pub fn random_descriptors(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}
