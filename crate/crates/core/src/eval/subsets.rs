//! Controlled-diversity subsets: fixed-size subsets whose class coverage
//! grows one class at a time.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embstore::LabelVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlledSubsetPlan {
    subset_size: usize,
    schedule: Vec<usize>,
    seed: u64,
}

impl ControlledSubsetPlan {
    pub fn new(subset_size: usize, schedule: Vec<usize>, seed: u64) -> Result<Self> {
        if schedule.is_empty() {
            return Err(Error::Plan("class schedule is empty".into()));
        }
        if schedule[0] == 0 {
            return Err(Error::Plan("class counts must be positive".into()));
        }
        if schedule.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Plan(format!("class schedule {schedule:?} is not strictly increasing")));
        }
        let max = *schedule.last().unwrap();
        if subset_size < max {
            return Err(Error::Plan(format!(
                "subset size {subset_size} cannot cover {max} classes"
            )));
        }
        Ok(Self {
            subset_size,
            schedule,
            seed,
        })
    }

    pub fn subset_size(&self) -> usize {
        self.subset_size
    }

    pub fn schedule(&self) -> &[usize] {
        &self.schedule
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// One index subset per schedule step, each sorted ascending.
///
/// Classes are introduced in label order. The first subset draws
/// `subset_size` inputs from classes `0..schedule[0]` (at least one per
/// class). Every later step adds each newly scheduled class by evicting a
/// random batch of `⌊subset_size / schedule[i]⌋` present inputs (never the
/// last input of a class) and drawing the same number from the new class.
pub fn build_controlled_subsets(labels: &LabelVector, plan: &ControlledSubsetPlan) -> Result<Vec<Vec<usize>>> {
    let max_classes = *plan.schedule.last().unwrap();
    if max_classes > labels.classes() {
        return Err(Error::Plan(format!(
            "schedule needs {max_classes} classes, labels have {}",
            labels.classes()
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); max_classes];
    for i in 0..labels.len() {
        let l = labels.get(i);
        if l < max_classes {
            by_class[l].push(i);
        }
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::Plan(format!("scheduled class {c} has no inputs")));
    }

    let b = plan.subset_size;
    let first = plan.schedule[0];
    let available: usize = by_class[..first].iter().map(Vec::len).sum();
    if available < b {
        return Err(Error::Plan(format!(
            "first {first} classes hold {available} inputs, fewer than subset size {b}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut used = vec![false; labels.len()];
    let mut class_count = vec![0usize; max_classes];
    let mut subset: Vec<usize> = Vec::with_capacity(b);

    let take = |i: usize, subset: &mut Vec<usize>, used: &mut Vec<bool>, class_count: &mut Vec<usize>| {
        used[i] = true;
        class_count[labels.get(i)] += 1;
        subset.push(i);
    };

    for members in &by_class[..first] {
        let pick = *members.choose(&mut rng).unwrap();
        take(pick, &mut subset, &mut used, &mut class_count);
    }
    let mut rest: Vec<usize> = by_class[..first]
        .iter()
        .flatten()
        .copied()
        .filter(|&i| !used[i])
        .collect();
    rest.shuffle(&mut rng);
    for &i in rest.iter().take(b - first) {
        take(i, &mut subset, &mut used, &mut class_count);
    }

    let mut out = vec![sorted(&subset)];
    let mut present = first;
    for &target in &plan.schedule[1..] {
        let batch = (b / target).max(1);
        for new_class in present..target {
            let mut fresh: Vec<usize> = by_class[new_class].iter().copied().filter(|&i| !used[i]).collect();
            fresh.shuffle(&mut rng);
            fresh.truncate(batch);

            let mut positions: Vec<usize> = (0..subset.len()).collect();
            positions.shuffle(&mut rng);
            let mut evict = Vec::with_capacity(fresh.len());
            for p in positions {
                if evict.len() == fresh.len() {
                    break;
                }
                let class = labels.get(subset[p]);
                if class_count[class] > 1 {
                    class_count[class] -= 1;
                    evict.push(p);
                }
            }
            if evict.len() < fresh.len() {
                return Err(Error::Plan(format!(
                    "cannot free {} slots for class {new_class} without dropping a class",
                    fresh.len()
                )));
            }
            for (p, i) in evict.into_iter().zip(fresh) {
                used[subset[p]] = false;
                subset[p] = i;
                used[i] = true;
                class_count[new_class] += 1;
            }
        }
        present = target;
        out.push(sorted(&subset));
    }
    Ok(out)
}

fn sorted(v: &[usize]) -> Vec<usize> {
    let mut s = v.to_vec();
    s.sort_unstable();
    s
}
