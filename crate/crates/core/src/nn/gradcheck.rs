//! Central finite-difference checking of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParamStore};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tolerance: f64,
    /// Denominator floor: `rel = |a - n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    /// Check at most this many coordinates per tensor (sampled), or all.
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            max_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Compares `analytic` with central differences of `loss` at `params`.
/// A non-finite loss or gradient counts as an infinite error.
pub fn finite_difference_check<F>(
    mut loss: F,
    params: &ParamStore,
    analytic: &Gradients,
    opts: &GradCheckOptions,
) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut work = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut entries = Vec::new();
    let names: Vec<String> = params.names().map(String::from).collect();
    for name in names {
        let len = params.get(&name).map_or(0, |t| t.len());
        let indices: Vec<usize> = match opts.max_per_tensor {
            Some(k) if k < len => {
                let mut v = sample(&mut rng, len, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        for i in indices {
            let original = work.get(&name).expect("cloned store").data()[i];
            work.value_mut(&name).expect("cloned store").data_mut()[i] = original + opts.eps;
            let plus = loss(&work);
            work.value_mut(&name).expect("cloned store").data_mut()[i] = original - opts.eps;
            let minus = loss(&work);
            work.value_mut(&name).expect("cloned store").data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic.get(&name).map_or(0.0, |t| t.data()[i]);
            let rel_error = if numeric.is_finite() && a.is_finite() {
                (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor)
            } else {
                f64::INFINITY
            };
            entries.push(GradCheckEntry {
                name: name.clone(),
                index: i,
                analytic: a,
                numeric,
                rel_error,
            });
        }
    }
    let max_rel_error = entries.iter().fold(0.0f64, |m, e| {
        if e.rel_error.is_nan() {
            f64::INFINITY
        } else {
            m.max(e.rel_error)
        }
    });
    GradCheckReport {
        passed: !entries.is_empty() && max_rel_error < opts.tolerance,
        entries,
        max_rel_error,
    }
}
