use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

/// Shuffles `records` by `seed` and cuts off a validation share of
/// `round(val_fraction * N)` items (at least one).
pub fn split_dataset<T: Clone>(
    records: &[T],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty dataset".into()));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "val_fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    let n = records.len();
    let n_val = ((val_fraction * n as f64).round() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, Stream::Split));
    let val = order[..n_val].iter().map(|&i| records[i].clone()).collect();
    let train = order[n_val..].iter().map(|&i| records[i].clone()).collect();
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ninety_nine_to_one() {
        let items: Vec<u32> = (0..100).collect();
        let (train, val) = split_dataset(&items, 0.01, 3).unwrap();
        assert_eq!((train.len(), val.len()), (99, 1));
    }

    #[test]
    fn two_items_half_split() {
        let (train, val) = split_dataset(&[1, 2], 0.5, 0).unwrap();
        assert_eq!((train.len(), val.len()), (1, 1));
    }

    #[test]
    fn same_seed_same_membership() {
        let items: Vec<u32> = (0..50).collect();
        assert_eq!(
            split_dataset(&items, 0.2, 11).unwrap(),
            split_dataset(&items, 0.2, 11).unwrap()
        );
    }

    #[test]
    fn bad_inputs() {
        assert!(split_dataset::<u8>(&[], 0.1, 0).is_err());
        assert!(split_dataset(&[1], 0.0, 0).is_err());
        assert!(split_dataset(&[1], 1.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_disjoint_cover(n in 1usize..300, frac in 0.001f64..0.999, seed in any::<u64>()) {
            let items: Vec<usize> = (0..n).collect();
            let (train, val) = split_dataset(&items, frac, seed).unwrap();
            prop_assert!(!val.is_empty());
            let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, items);
        }
    }
}
