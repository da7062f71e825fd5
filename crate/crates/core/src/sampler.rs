//! Class-balanced batch construction and mining of pairs, triplets and
//! tuplets. All randomness comes from an explicit generator.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::Dataset;
use crate::density::group_by_class;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::losses::{PairSet, Triplet, TripletSet, Tuplet, TupletSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub classes_per_batch: usize,
    pub samples_per_class: usize,
    /// Fill the batch with whole classes instead of `K` rows per class.
    pub accumulate: bool,
    pub capacity: usize,
}

impl Default for BatchPlan {
    fn default() -> Self {
        Self {
            classes_per_batch: 10,
            samples_per_class: 10,
            accumulate: false,
            capacity: 100,
        }
    }
}

impl BatchPlan {
    pub fn new(classes_per_batch: usize, samples_per_class: usize) -> Result<Self> {
        let plan = Self {
            classes_per_batch,
            samples_per_class,
            accumulate: false,
            capacity: classes_per_batch * samples_per_class,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes_per_batch < 2 || self.samples_per_class < 1 {
            return Err(Error::Config(format!(
                "batch plan needs P >= 2 and K >= 1, got P={} K={}",
                self.classes_per_batch, self.samples_per_class
            )));
        }
        if !self.accumulate && self.classes_per_batch * self.samples_per_class > self.capacity {
            return Err(Error::Config(format!(
                "P*K = {} exceeds capacity {}",
                self.classes_per_batch * self.samples_per_class,
                self.capacity
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub source_indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn make_batch<R: Rng + ?Sized>(dataset: &Dataset, plan: &BatchPlan, rng: &mut R) -> Result<Batch> {
    plan.validate()?;
    let by_class = dataset.rows_by_class();
    let num_classes = by_class.len();
    let needed = if plan.accumulate { 2 } else { plan.classes_per_batch };
    if num_classes < needed {
        return Err(Error::InsufficientClasses { needed, available: num_classes });
    }

    let mut source_indices = Vec::with_capacity(plan.capacity);
    if plan.accumulate {
        let mut order: Vec<usize> = (0..num_classes).collect();
        order.shuffle(rng);
        let mut taken = 0;
        for c in order {
            let rows = &by_class[c];
            if source_indices.len() + rows.len() > plan.capacity {
                break;
            }
            source_indices.extend_from_slice(rows);
            taken += 1;
        }
        if taken < 2 {
            return Err(Error::InsufficientClasses { needed: 2, available: taken });
        }
    } else {
        let classes = sample(rng, num_classes, plan.classes_per_batch);
        for c in classes.iter() {
            let rows = &by_class[c];
            if rows.len() < plan.samples_per_class {
                return Err(Error::InsufficientSamples {
                    class: c,
                    needed: plan.samples_per_class,
                    available: rows.len(),
                });
            }
            for k in sample(rng, rows.len(), plan.samples_per_class).iter() {
                source_indices.push(rows[k]);
            }
        }
    }

    let labels = source_indices.iter().map(|&i| dataset.labels()[i]).collect();
    Ok(Batch {
        features: dataset.features().select_rows(&source_indices),
        labels,
        source_indices,
    })
}

/// Every unordered pair `i < j`, split by label equality.
pub fn mine_pairs(labels: &[usize]) -> PairSet {
    let mut out = PairSet::default();
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            if labels[i] == labels[j] {
                out.positives.push((i, j));
            } else {
                out.negatives.push((i, j));
            }
        }
    }
    out
}

/// `per_anchor` random triplets for each anchor that has a same-class partner.
pub fn mine_triplets<R: Rng + ?Sized>(labels: &[usize], per_anchor: usize, rng: &mut R) -> Result<TripletSet> {
    let groups = group_by_class(labels);
    let mut out = TripletSet::default();
    if groups.len() < 2 || per_anchor == 0 {
        return Err(Error::NoValidTriplets);
    }
    for (anchor, &label) in labels.iter().enumerate() {
        let same = &groups[&label];
        if same.len() < 2 {
            continue;
        }
        let n_other = labels.len() - same.len();
        for _ in 0..per_anchor {
            // skip the anchor's own slot
            let mut p = rng.random_range(0..same.len() - 1);
            if same[p] == anchor {
                p = same.len() - 1;
            }
            let positive = same[p];
            let negative = nth_other(labels, label, rng.random_range(0..n_other));
            out.triplets.push(Triplet { anchor, positive, negative });
        }
    }
    if out.is_empty() {
        return Err(Error::NoValidTriplets);
    }
    Ok(out)
}

/// The `k`-th row (in index order) whose label differs from `label`.
fn nth_other(labels: &[usize], label: usize, k: usize) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l != label)
        .nth(k)
        .map(|(i, _)| i)
        .expect("k is below the count of other-class rows")
}

/// One tuplet per anchor: a random positive plus one random negative from
/// every other class in the batch.
pub fn mine_tuplets<R: Rng + ?Sized>(labels: &[usize], rng: &mut R) -> Result<TupletSet> {
    let groups = group_by_class(labels);
    let mut out = TupletSet::default();
    if groups.len() < 2 {
        return Err(Error::NoValidTuplets);
    }
    for (anchor, &label) in labels.iter().enumerate() {
        let same = &groups[&label];
        if same.len() < 2 {
            continue;
        }
        let mut p = rng.random_range(0..same.len() - 1);
        if same[p] == anchor {
            p = same.len() - 1;
        }
        let negatives = groups
            .iter()
            .filter(|(&c, _)| c != label)
            .map(|(_, rows)| rows[rng.random_range(0..rows.len())])
            .collect();
        out.tuplets.push(Tuplet { anchor, positive: same[p], negatives });
    }
    if out.is_empty() {
        return Err(Error::NoValidTuplets);
    }
    Ok(out)
}
