use crate::numerics::SeededRng;

/// Indices of the mini-batch used at `step`.
///
/// Each epoch is a fresh permutation drawn from a child stream of `seed`, so
/// the batch is a pure function of `(seed, step)` and resuming at any step
/// reproduces the same sequence.
pub fn batch_indices(seed: u64, step: usize, n_items: usize, batch_size: usize) -> Vec<usize> {
    if n_items == 0 || batch_size == 0 {
        return Vec::new();
    }
    let per_epoch = n_items.div_ceil(batch_size);
    let epoch = step / per_epoch;
    let slot = step % per_epoch;
    let mut perm: Vec<usize> = (0..n_items).collect();
    SeededRng::new(seed).derive(epoch as u64).shuffle(&mut perm);
    let lo = slot * batch_size;
    perm[lo..(lo + batch_size).min(n_items)].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epochs_cover_every_item_once() {
        let n = 23;
        for epoch in 0..3 {
            let mut seen: Vec<usize> = (0..5).flat_map(|s| batch_indices(9, epoch * 5 + s, n, 5)).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn batches_depend_only_on_seed_and_step() {
        assert_eq!(batch_indices(3, 17, 40, 8), batch_indices(3, 17, 40, 8));
        assert_ne!(batch_indices(3, 0, 40, 8), batch_indices(4, 0, 40, 8));
    }
}
