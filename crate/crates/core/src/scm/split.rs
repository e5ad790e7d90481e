//! Seen/unseen class splits with few-shot training subsets.

use std::collections::BTreeSet;

use super::image::{sample_scm, ScmSample, ScmSpec, ORIENTATION_BUCKETS};
use crate::error::{contract, Result};
use crate::rng::derive_seed;

#[derive(Clone, Debug, PartialEq)]
pub struct SplitOptions {
    /// Test samples drawn for every seen and unseen class.
    pub test_per_class: usize,
    /// Fraction of each seen class's training shots whose stripe orientation
    /// is tied to the class (selection bias). Test samples are never biased.
    pub spurious_rho: f64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            test_per_class: 100,
            spurious_rho: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub seen: Vec<usize>,
    pub unseen: Vec<usize>,
    pub shots: usize,
    pub train: Vec<ScmSample>,
    pub test: Vec<ScmSample>,
}

impl DatasetSplit {
    pub fn test_of<'a>(&'a self, classes: &'a [usize]) -> impl Iterator<Item = &'a ScmSample> + 'a {
        self.test.iter().filter(move |s| classes.contains(&s.y))
    }
}

/// The orientation bucket training samples of `class` are biased towards.
pub fn preferred_bucket(class: usize) -> usize {
    class % ORIENTATION_BUCKETS
}

/// Draws `per_class` samples of every class in `classes` from the stream
/// `(seed, tag)`, in class order. `accept` can reject draws (selection).
pub fn class_balanced(
    spec: &ScmSpec,
    classes: &[usize],
    per_class: usize,
    seed: u64,
    tag: &str,
) -> Result<Vec<ScmSample>> {
    let mut out = Vec::with_capacity(classes.len() * per_class);
    for &c in classes {
        out.extend(draw_class(spec, c, per_class, seed, &format!("{tag}/{c}"), |_| true)?);
    }
    Ok(out)
}

/// Like [`class_balanced`], but a fraction `rho` of each class's samples is
/// drawn with its stripe orientation in the class's preferred bucket.
pub fn biased_pool(
    spec: &ScmSpec,
    classes: &[usize],
    per_class: usize,
    rho: f64,
    seed: u64,
    tag: &str,
) -> Result<Vec<ScmSample>> {
    if !(0.0..=1.0).contains(&rho) {
        return contract(format!("selection bias must be in [0, 1], got {rho}"));
    }
    let biased = (rho * per_class as f64).round() as usize;
    let mut out = Vec::with_capacity(classes.len() * per_class);
    for &c in classes {
        let bucket = preferred_bucket(c);
        out.extend(draw_class(spec, c, biased, seed, &format!("{tag}-biased/{c}"), |s| {
            s.orientation_bucket() == bucket
        })?);
        out.extend(draw_class(
            spec,
            c,
            per_class - biased,
            seed,
            &format!("{tag}/{c}"),
            |_| true,
        )?);
    }
    Ok(out)
}

fn draw_class(
    spec: &ScmSpec,
    class: usize,
    count: usize,
    seed: u64,
    tag: &str,
    accept: impl Fn(&ScmSample) -> bool,
) -> Result<Vec<ScmSample>> {
    if class >= spec.num_classes {
        return contract(format!("class {class} out of range for K = {}", spec.num_classes));
    }
    let mut out = Vec::with_capacity(count);
    let mut i = 0u64;
    while out.len() < count {
        let s = sample_scm(spec, derive_seed(seed, tag, i))?;
        i += 1;
        if s.y == class && accept(&s) {
            out.push(s);
        }
    }
    Ok(out)
}

pub fn make_splits(
    spec: &ScmSpec,
    seen: &[usize],
    unseen: &[usize],
    shots: usize,
    seed: u64,
    options: &SplitOptions,
) -> Result<DatasetSplit> {
    spec.validate()?;
    if shots == 0 {
        return contract("shots must be at least 1");
    }
    if seen.is_empty() {
        return contract("at least one seen class is required");
    }
    if !(0.0..=1.0).contains(&options.spurious_rho) {
        return contract(format!("spurious_rho must be in [0, 1], got {}", options.spurious_rho));
    }
    let seen_set: BTreeSet<usize> = seen.iter().copied().collect();
    let unseen_set: BTreeSet<usize> = unseen.iter().copied().collect();
    if seen_set.len() != seen.len() || unseen_set.len() != unseen.len() {
        return contract("class lists contain duplicates");
    }
    if let Some(c) = seen_set.intersection(&unseen_set).next() {
        return contract(format!("class {c} is both seen and unseen"));
    }

    let train = biased_pool(spec, seen, shots, options.spurious_rho, seed, "train")?;

    let mut all: Vec<usize> = seen.to_vec();
    all.extend_from_slice(unseen);
    let test = class_balanced(spec, &all, options.test_per_class, seed, "test")?;

    Ok(DatasetSplit {
        seen: seen.to_vec(),
        unseen: unseen.to_vec(),
        shots,
        train,
        test,
    })
}
