//! Deterministic reductions and per-cell maps, sequential or parallel.
//!
//! Every reduction in the crate goes through [`pairwise_sum_by`], which sums
//! on a fixed binary tree: split at the midpoint, recurse, add the halves.
//! Leaf chunks are folded with Neumaier compensation. The parallel variants
//! walk the same tree, so enabling the `parallel` feature cannot change a
//! single bit of any result.

/// Below this length a subrange is folded sequentially as one leaf.
const LEAF: usize = 128;

/// Minimum length before the parallel variants actually fork.
#[cfg(feature = "parallel")]
const FORK_MIN: usize = 16_384;

fn leaf_sum<F: Fn(usize) -> f64>(lo: usize, hi: usize, f: &F) -> f64 {
    // Neumaier-compensated fold over one leaf chunk.
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for i in lo..hi {
        let x = f(i);
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn tree_sum<F: Fn(usize) -> f64>(lo: usize, hi: usize, f: &F) -> f64 {
    if hi - lo <= LEAF {
        return leaf_sum(lo, hi, f);
    }
    let mid = lo + (hi - lo) / 2;
    tree_sum(lo, mid, f) + tree_sum(mid, hi, f)
}

#[cfg(feature = "parallel")]
fn tree_sum_par<F: Fn(usize) -> f64 + Sync>(lo: usize, hi: usize, f: &F) -> f64 {
    if hi - lo < FORK_MIN {
        return tree_sum(lo, hi, f);
    }
    let mid = lo + (hi - lo) / 2;
    let (a, b) = rayon::join(|| tree_sum_par(lo, mid, f), || tree_sum_par(mid, hi, f));
    a + b
}

/// Sum `f(i)` for `i` in `0..n` on the fixed pairwise tree, sequentially.
pub fn pairwise_sum_by_seq<F: Fn(usize) -> f64>(n: usize, f: F) -> f64 {
    tree_sum(0, n, &f)
}

/// Sum `f(i)` for `i` in `0..n` on the fixed pairwise tree, forking below
/// the midpoints once subranges are large enough.
#[cfg(feature = "parallel")]
pub fn pairwise_sum_by_par<F: Fn(usize) -> f64 + Sync>(n: usize, f: F) -> f64 {
    tree_sum_par(0, n, &f)
}

/// Sum `f(i)` for `i` in `0..n`; parallel when the feature is enabled and the
/// range is large enough to pay for it.
#[cfg(feature = "parallel")]
pub fn pairwise_sum_by<F: Fn(usize) -> f64 + Sync>(n: usize, f: F) -> f64 {
    if n >= FORK_MIN {
        pairwise_sum_by_par(n, f)
    } else {
        pairwise_sum_by_seq(n, f)
    }
}

/// Sum `f(i)` for `i` in `0..n`; parallel when the feature is enabled and the
/// range is large enough to pay for it.
#[cfg(not(feature = "parallel"))]
pub fn pairwise_sum_by<F: Fn(usize) -> f64>(n: usize, f: F) -> f64 {
    pairwise_sum_by_seq(n, f)
}

/// Pairwise sum of a slice.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    pairwise_sum_by(xs.len(), |i| xs[i])
}

/// Collect `f(i)` for `i` in `0..n`, sequentially.
pub fn map_values_seq<F: Fn(usize) -> f64>(n: usize, f: F) -> Vec<f64> {
    (0..n).map(f).collect()
}

/// Collect `f(i)` for `i` in `0..n` in parallel; order is preserved.
#[cfg(feature = "parallel")]
pub fn map_values_par<F: Fn(usize) -> f64 + Sync + Send>(n: usize, f: F) -> Vec<f64> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Collect `f(i)` for `i` in `0..n`, in parallel for large `n` when the
/// feature is enabled. Element `i` never depends on any other element, so the
/// output is identical either way.
#[cfg(feature = "parallel")]
pub fn map_values<F: Fn(usize) -> f64 + Sync + Send>(n: usize, f: F) -> Vec<f64> {
    if n >= FORK_MIN {
        map_values_par(n, f)
    } else {
        map_values_seq(n, f)
    }
}

/// Collect `f(i)` for `i` in `0..n`, in parallel for large `n` when the
/// feature is enabled. Element `i` never depends on any other element, so the
/// output is identical either way.
#[cfg(not(feature = "parallel"))]
pub fn map_values<F: Fn(usize) -> f64>(n: usize, f: F) -> Vec<f64> {
    map_values_seq(n, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sums_match_plain_addition_on_small_inputs() {
        let xs = [1.0, 2.0, 3.0, 4.5];
        assert_eq!(pairwise_sum(&xs), 10.5);
        assert_eq!(pairwise_sum(&[]), 0.0);
        assert_eq!(pairwise_sum(&[-7.25]), -7.25);
    }

    #[test]
    fn compensation_beats_naive_fold() {
        // 1 followed by many tiny values that a naive fold would drop.
        let n = 10_000;
        let tiny = 1e-17;
        let sum = pairwise_sum_by(n + 1, |i| if i == 0 { 1.0 } else { tiny });
        let exact = 1.0 + n as f64 * tiny;
        assert!((sum - exact).abs() < 1e-18, "sum = {sum:e}");
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_tree_is_bitwise_identical() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for &n in &[0usize, 1, 127, 128, 129, 10_000, 100_000] {
            let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let seq = pairwise_sum_by_seq(n, |i| xs[i] * xs[i] - 0.3);
            let par = pairwise_sum_by_par(n, |i| xs[i] * xs[i] - 0.3);
            assert_eq!(seq.to_bits(), par.to_bits(), "n = {n}");
            let mseq = map_values_seq(n, |i| xs[i].exp());
            let mpar = map_values_par(n, |i| xs[i].exp());
            assert_eq!(mseq, mpar);
        }
    }
}
