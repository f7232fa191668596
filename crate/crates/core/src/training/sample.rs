use rand::seq::index;

use super::{rng_for, streams};

/// Uniform random subset of `round(fraction * N)` items, kept in input
/// order. `fraction` is clamped to `[0, 1]`.
pub fn subsample<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Vec<T> {
    let n = items.len();
    let k = ((fraction.clamp(0.0, 1.0) * n as f64).round() as usize).min(n);
    if k == n {
        return items.to_vec();
    }
    let mut picked = index::sample(&mut rng_for(seed, streams::SUBSAMPLE), n, k).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| items[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_fraction_is_identity() {
        let v: Vec<u32> = (0..50).collect();
        assert_eq!(subsample(&v, 1.0, 3), v);
    }

    #[test]
    fn size_is_rounded() {
        let v: Vec<u32> = (0..300).collect();
        assert_eq!(subsample(&v, 0.33, 0).len(), 99);
        assert_eq!(subsample(&v, 0.15, 0).len(), 45);
    }

    #[test]
    fn seeded_and_distinct() {
        let v: Vec<u32> = (0..1000).collect();
        assert_eq!(subsample(&v, 0.5, 9), subsample(&v, 0.5, 9));
        assert_ne!(subsample(&v, 0.5, 9), subsample(&v, 0.5, 10));
    }
}
