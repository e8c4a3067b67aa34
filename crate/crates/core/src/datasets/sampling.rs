//! Seeded subset selection.
//!
//! The algorithm is fixed so that a subset can be reproduced by any
//! implementation:
//!
//! 1. Sort the sample ids by their UTF-8 bytes.
//! 2. Seed SplitMix64 with the seed as its raw 64-bit state.
//! 3. Partial Fisher–Yates: for `i` in `0..n`, draw `j` uniformly from
//!    `i..len` and swap positions `i` and `j`. Uniform draws from `0..m`
//!    take the next output `x` and accept it when
//!    `x < 2^64 - (2^64 mod m)`, returning `x mod m`; otherwise redraw.
//! 4. The first `n` positions form the subset.
//!
//! The selected samples are returned in their input order.

use rand_xoshiro::rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

use super::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("requested {requested} samples but only {available} are available")]
pub struct SubsetTooLarge {
    pub requested: usize,
    pub available: usize,
}

fn uniform_below(rng: &mut SplitMix64, m: u64) -> u64 {
    debug_assert!(m > 0);
    // 2^64 mod m, computed without 128-bit arithmetic.
    let rem = (u64::MAX % m + 1) % m;
    loop {
        let x = rng.next_u64();
        if rem == 0 || x <= u64::MAX - rem {
            return x % m;
        }
    }
}

/// Indices into `ids` of a seeded subset of size `n`, in ascending order.
pub fn subset_indices(ids: &[&str], n: usize, seed: u64) -> Result<Vec<usize>, SubsetTooLarge> {
    if n > ids.len() {
        return Err(SubsetTooLarge {
            requested: n,
            available: ids.len(),
        });
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| ids[a].as_bytes().cmp(ids[b].as_bytes()));
    let mut rng = SplitMix64::seed_from_u64(seed);
    let len = order.len();
    for i in 0..n {
        let j = i + uniform_below(&mut rng, (len - i) as u64) as usize;
        order.swap(i, j);
    }
    let mut picked = order[..n].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Deterministic subset of `n` samples for `seed`.
///
/// The chosen id-set depends only on the set of ids, not on their order in
/// `samples`.
pub fn sample_subset(
    samples: &[Sample],
    n: usize,
    seed: u64,
) -> Result<Vec<Sample>, SubsetTooLarge> {
    let ids: Vec<&str> = samples.iter().map(|s| s.sample_id.as_str()).collect();
    Ok(subset_indices(&ids, n, seed)?
        .into_iter()
        .map(|i| samples[i].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop, prop_assert_eq, proptest};
    use std::collections::BTreeSet;

    #[test]
    fn splitmix_reference_output() {
        // First outputs of SplitMix64 from state 0, as published with the
        // reference C implementation.
        let mut rng = SplitMix64::seed_from_u64(0);
        assert_eq!(rng.next_u64(), 0xe220a8397b1dcdaf);
        assert_eq!(rng.next_u64(), 0x6e789e6aa1b965f4);
    }

    #[test]
    fn golden_small_subset() {
        let ids: Vec<String> = (0..10).map(|i| format!("sample-{i:02}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let picked: Vec<&str> = subset_indices(&refs, 3, 7)
            .unwrap()
            .into_iter()
            .map(|i| refs[i])
            .collect();
        assert_eq!(picked, ["sample-00", "sample-04", "sample-07"]);
    }

    #[test]
    fn too_large() {
        assert_eq!(
            subset_indices(&["a", "b"], 3, 1),
            Err(SubsetTooLarge {
                requested: 3,
                available: 2
            })
        );
    }

    #[test]
    fn full_set_keeps_everything_in_order() {
        let ids = ["c", "a", "b", "d"];
        assert_eq!(subset_indices(&ids, 4, 99).unwrap(), vec![0, 1, 2, 3]);
        assert!(subset_indices(&ids, 0, 99).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn id_set_ignores_input_order(
            ids in prop::collection::btree_set("[a-z0-9]{1,6}", 1..60),
            frac in 0.0f64..=1.0,
            seed in any::<u64>(),
            rot in any::<usize>(),
        ) {
            let ids: Vec<String> = ids.into_iter().collect();
            let n = ((ids.len() as f64) * frac) as usize;
            let a: Vec<&str> = ids.iter().map(String::as_str).collect();
            let mut b = a.clone();
            b.reverse();
            let k = rot % b.len();
            b.rotate_left(k);
            let pick = |v: &[&str]| -> BTreeSet<String> {
                subset_indices(v, n, seed).unwrap().into_iter().map(|i| v[i].to_string()).collect()
            };
            let sa = pick(&a);
            prop_assert_eq!(sa.len(), n);
            prop_assert_eq!(sa, pick(&b));
        }
    }
}
