use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, PairedWindow};

/// Source-training / adaptation / test proportions.
pub const DEFAULT_PROPORTIONS: (f64, f64, f64) = (0.30, 0.50, 0.20);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Uniform random partition of windows.
    #[default]
    Window,
    /// Whole subjects go to one partition.
    Subject,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSplit {
    pub train_source: Vec<PairedWindow>,
    pub adapt: Vec<PairedWindow>,
    pub test: Vec<PairedWindow>,
    pub seed: u64,
}

impl WindowedSplit {
    pub fn len(&self) -> usize {
        self.train_source.len() + self.adapt.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Seeded random partition into train-source / adapt / test.
///
/// Windows are first sorted by `(subject, start_time, pair_id)` so the
/// result does not depend on input order.
pub fn split(windows: &[PairedWindow], proportions: (f64, f64, f64), seed: u64, mode: SplitMode) -> Result<WindowedSplit, DataError> {
    let (p_train, p_adapt, p_test) = proportions;
    if [p_train, p_adapt, p_test].iter().any(|p| !(0.0..=1.0).contains(p)) || (p_train + p_adapt + p_test - 1.0).abs() > 1e-9 {
        return Err(DataError::Invalid(format!("proportions {:?} must be in [0,1] and sum to 1", proportions)));
    }
    if windows.len() < 3 {
        return Err(DataError::TooFewWindows {
            needed: 3,
            found: windows.len(),
        });
    }
    let mut sorted: Vec<&PairedWindow> = windows.iter().collect();
    sorted.sort_by(|a, b| {
        a.subject
            .cmp(&b.subject)
            .then(a.start_time.total_cmp(&b.start_time))
            .then(a.pair_id.cmp(&b.pair_id))
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sorted.len();
    let n_train = (p_train * n as f64).round() as usize;
    let n_adapt = ((p_adapt * n as f64).round() as usize).min(n - n_train);

    let ordered: Vec<&PairedWindow> = match mode {
        SplitMode::Window => {
            sorted.shuffle(&mut rng);
            sorted
        }
        SplitMode::Subject => {
            let mut by_subject: BTreeMap<u32, Vec<&PairedWindow>> = BTreeMap::new();
            for w in sorted {
                by_subject.entry(w.subject).or_default().push(w);
            }
            let mut groups: Vec<Vec<&PairedWindow>> = by_subject.into_values().collect();
            groups.shuffle(&mut rng);
            groups.into_iter().flatten().collect()
        }
    };
    let (train, rest) = match mode {
        SplitMode::Window => ordered.split_at(n_train),
        SplitMode::Subject => ordered.split_at(subject_boundary(&ordered, n_train)),
    };
    let adapt_len = match mode {
        SplitMode::Window => n_adapt,
        SplitMode::Subject => subject_boundary(rest, n_adapt),
    };
    let (adapt, test) = rest.split_at(adapt_len.min(rest.len()));
    let own = |v: &[&PairedWindow]| v.iter().map(|w| (*w).clone()).collect::<Vec<_>>();
    Ok(WindowedSplit {
        train_source: own(train),
        adapt: own(adapt),
        test: own(test),
        seed,
    })
}

/// First index at or after `target` where the subject changes.
fn subject_boundary(windows: &[&PairedWindow], target: usize) -> usize {
    let mut i = target.min(windows.len());
    while i > 0 && i < windows.len() && windows[i].subject == windows[i - 1].subject {
        i += 1;
    }
    i
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use std::collections::HashSet;

    fn windows(n: usize) -> Vec<PairedWindow> {
        (0..n)
            .map(|i| PairedWindow {
                pair_id: i as u64,
                subject: (i % 4) as u32,
                start_time: i as f64,
                source: Tensor::zeros(&[1, 1]),
                target: Tensor::zeros(&[1, 1]),
                label: Some(i % 3),
            })
            .collect()
    }

    fn ids(v: &[PairedWindow]) -> Vec<u64> {
        v.iter().map(|w| w.pair_id).collect()
    }

    #[test]
    fn ten_windows_three_five_two() {
        let s = split(&windows(10), DEFAULT_PROPORTIONS, 1, SplitMode::Window).unwrap();
        assert_eq!((s.train_source.len(), s.adapt.len(), s.test.len()), (3, 5, 2));
    }

    #[test]
    fn same_seed_same_partition_and_order_independent() {
        let w = windows(57);
        let a = split(&w, DEFAULT_PROPORTIONS, 7, SplitMode::Window).unwrap();
        let mut rev = w.clone();
        rev.reverse();
        let b = split(&rev, DEFAULT_PROPORTIONS, 7, SplitMode::Window).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let w = windows(1000);
        let a = split(&w, DEFAULT_PROPORTIONS, 1, SplitMode::Window).unwrap();
        let b = split(&w, DEFAULT_PROPORTIONS, 2, SplitMode::Window).unwrap();
        assert_ne!(ids(&a.train_source), ids(&b.train_source));
    }

    #[test]
    fn disjoint_and_exhaustive() {
        for n in [3, 4, 11, 100, 333] {
            let s = split(&windows(n), DEFAULT_PROPORTIONS, n as u64, SplitMode::Window).unwrap();
            let mut all: Vec<u64> = ids(&s.train_source);
            all.extend(ids(&s.adapt));
            all.extend(ids(&s.test));
            assert_eq!(all.len(), n);
            assert_eq!(all.iter().collect::<HashSet<_>>().len(), n);
            let close = |got: usize, p: f64| (got as f64 - p * n as f64).abs() <= 1.0;
            assert!(close(s.train_source.len(), 0.3) && close(s.adapt.len(), 0.5) && close(s.test.len(), 0.2));
        }
    }

    #[test]
    fn too_few_windows() {
        assert!(matches!(
            split(&windows(2), DEFAULT_PROPORTIONS, 0, SplitMode::Window),
            Err(DataError::TooFewWindows { .. })
        ));
    }

    #[test]
    fn subject_mode_keeps_subjects_together() {
        let s = split(&windows(400), DEFAULT_PROPORTIONS, 3, SplitMode::Subject).unwrap();
        let subjects = |v: &[PairedWindow]| v.iter().map(|w| w.subject).collect::<HashSet<_>>();
        let (a, b, c) = (subjects(&s.train_source), subjects(&s.adapt), subjects(&s.test));
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        assert_eq!(s.len(), 400);
    }
}
