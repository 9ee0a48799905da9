use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::bundle::Splits;
use crate::error::{Error, Result};

/// Seeded disjoint train/val/test split with sizes `round(f·n)`. When the
/// fractions sum to 1 the test set takes the remainder. Index lists are
/// returned sorted.
pub fn make_splits(n: usize, fractions: (f64, f64, f64), seed: u64) -> Result<Splits> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
        return Err(Error::InvalidSplit(format!(
            "fractions must be non-negative, got {fractions:?}"
        )));
    }
    let total = a + b + c;
    if total > 1.0 + 1e-9 {
        return Err(Error::InvalidSplit(format!("fractions sum to {total} > 1")));
    }
    let nf = n as f64;
    let n_train = ((a * nf).round() as usize).min(n);
    let n_val = ((b * nf).round() as usize).min(n - n_train);
    let n_test = if (total - 1.0).abs() <= 1e-9 {
        n - n_train - n_val
    } else {
        ((c * nf).round() as usize).min(n - n_train - n_val)
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |r: std::ops::Range<usize>| {
        let mut v = order[r].to_vec();
        v.sort_unstable();
        v
    };
    Ok(Splits {
        train: take(0..n_train),
        val: take(n_train..n_train + n_val),
        test: take(n_train + n_val..n_train + n_val + n_test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_determinism() {
        let s = make_splits(10, (0.6, 0.2, 0.2), 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
        assert_eq!(s, make_splits(10, (0.6, 0.2, 0.2), 3).unwrap());
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn fractions_over_one_rejected() {
        assert!(matches!(
            make_splits(10, (0.7, 0.2, 0.2), 0),
            Err(Error::InvalidSplit(_))
        ));
    }

    #[test]
    fn partial_cover() {
        let s = make_splits(100, (0.1, 0.1, 0.3), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (10, 10, 30));
    }
}
