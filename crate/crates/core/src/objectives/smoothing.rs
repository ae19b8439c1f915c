//! Monte-Carlo sparse smoothing: cached Bernoulli samples of the clean
//! graph, incremental resampling for perturbed graphs and vote
//! probabilities.

use std::collections::HashSet;

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{argmax, Inference};
use crate::graph::{pair_count, pi_index_unchecked, pi_inverse_unchecked, Graph};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingParams {
    /// Probability of switching a non-edge on.
    pub p_plus: f64,
    /// Probability of switching an edge off.
    pub p_minus: f64,
    /// Number of samples.
    pub samples: usize,
    pub seed: u64,
}

impl SmoothingParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p_plus) {
            return Err(Error::config(format!("p_plus {} outside [0, 1)", self.p_plus)));
        }
        if !(0.0..=1.0).contains(&self.p_minus) {
            return Err(Error::config(format!("p_minus {} outside [0, 1]", self.p_minus)));
        }
        if self.samples == 0 {
            return Err(Error::config("smoothing needs at least one sample"));
        }
        Ok(())
    }
}

/// `m` random graphs stored as sorted flip lists relative to a base graph.
#[derive(Debug, Clone)]
pub struct SmoothingCache {
    params: SmoothingParams,
    n: usize,
    samples: Vec<Vec<(usize, usize)>>,
}

fn draw_sample(g: &Graph, edges: &[(usize, usize)], p: &SmoothingParams, index: usize) -> Vec<(usize, usize)> {
    let n = g.num_nodes();
    let mut rng = substream(p.seed, "smoothing", index as u64);
    let mut flips: Vec<(usize, usize)> = Vec::new();

    if p.p_minus > 0.0 && !edges.is_empty() {
        let k = Binomial::new(edges.len() as u64, p.p_minus).expect("validated").sample(&mut rng) as usize;
        flips.extend(sample_indices(&mut rng, edges.len(), k).into_iter().map(|i| edges[i]));
    }

    let total = pair_count(n);
    let non_edges = total - edges.len() as u64;
    if p.p_plus > 0.0 && non_edges > 0 {
        let k = Binomial::new(non_edges, p.p_plus).expect("validated").sample(&mut rng);
        if k * 2 > non_edges {
            // Dense draw: enumerate the non-edges once.
            let all: Vec<(usize, usize)> = (0..n)
                .flat_map(|r| (r + 1..n).map(move |c| (r, c)))
                .filter(|&(r, c)| !g.has_edge(r, c))
                .collect();
            flips.extend(sample_indices(&mut rng, all.len(), k as usize).into_iter().map(|i| all[i]));
        } else {
            let mut seen: HashSet<u64> = HashSet::with_capacity(k as usize);
            while (seen.len() as u64) < k {
                let l = rng.random_range(0..total);
                let (r, c) = pi_inverse_unchecked(l, n);
                if !g.has_edge(r, c) && seen.insert(l) {
                    flips.push((r, c));
                }
            }
        }
    }
    flips.sort_unstable();
    flips
}

/// Draws `params.samples` smoothed versions of `g`. Sample `i` depends only
/// on `(params.seed, i)`.
pub fn smoothing_sample(g: &Graph, params: SmoothingParams) -> Result<SmoothingCache> {
    params.validate()?;
    let edges = g.edges();
    let samples = (0..params.samples).map(|i| draw_sample(g, &edges, &params, i)).collect();
    Ok(SmoothingCache { params, n: g.num_nodes(), samples })
}

/// Sorted symmetric difference of two sorted pair lists.
fn sym_diff(a: &[(usize, usize)], b: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

impl SmoothingCache {
    pub fn params(&self) -> &SmoothingParams {
        &self.params
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }

    /// Flip list of sample `i` relative to the base graph.
    pub fn sample(&self, i: usize) -> &[(usize, usize)] {
        &self.samples[i]
    }

    pub fn flip_lists(&self) -> Vec<&[(usize, usize)]> {
        self.samples.iter().map(Vec::as_slice).collect()
    }

    /// Redraws the entries of the sorted, distinct pairs `changed` in every
    /// sample for a graph that differs from `g0` exactly on `changed`.
    ///
    /// For a pair whose new state is an edge the sample drops it with
    /// probability `p_minus`; for a new non-edge it appears with `p_plus`.
    /// The draws for a pair depend only on `(seed, pair)`, so the result is
    /// a pure function of its inputs.
    pub fn resample_pairs(&self, g0: &Graph, changed: &[(usize, usize)]) -> SmoothingCache {
        if changed.is_empty() {
            return self.clone();
        }
        let m = self.samples.len();
        // present[i] lists the changed pairs that differ from g0 in sample i.
        let mut present: Vec<Vec<(usize, usize)>> = vec![Vec::new(); m];
        for &(r, c) in changed {
            let now_edge = !g0.has_edge(r, c);
            let p = if now_edge { self.params.p_minus } else { self.params.p_plus };
            let mut rng = substream(self.params.seed, "resample", pi_index_unchecked(r, c, self.n));
            for row in present.iter_mut() {
                // The sample keeps the new state unless the coin flips it
                // back, which coincides with the base state.
                if !rng.random_bool(p) {
                    row.push((r, c));
                }
            }
        }
        let samples = self
            .samples
            .iter()
            .zip(present)
            .map(|(old, fresh)| {
                let mut kept: Vec<(usize, usize)> =
                    old.iter().copied().filter(|e| changed.binary_search(e).is_err()).collect();
                kept.extend(fresh);
                kept.sort_unstable();
                kept
            })
            .collect();
        SmoothingCache { params: self.params, n: self.n, samples }
    }

    /// View of the cache for `g1`, resampling only the pairs in `g0 XOR g1`.
    pub fn adaptive_resample(&self, g0: &Graph, g1: &Graph) -> SmoothingCache {
        self.resample_pairs(g0, &sym_diff(&g0.edges(), &g1.edges()))
    }
}

/// Free-function form of [`SmoothingCache::adaptive_resample`].
pub fn adaptive_resample(cache: &SmoothingCache, g0: &Graph, g1: &Graph) -> SmoothingCache {
    cache.adaptive_resample(g0, g1)
}

/// For each node in `nodes`, the fraction of samples whose prediction
/// equals `vote[k]`. Samples are taken relative to `inference.base()`.
pub fn smooth_probs(inference: &Inference<'_>, cache: &SmoothingCache, nodes: &[usize], vote: &[usize]) -> Vec<f64> {
    let mut counts = vec![0usize; nodes.len()];
    let lists = cache.flip_lists();
    for logits in inference.logits_for_flips(&lists, nodes) {
        for (k, count) in counts.iter_mut().enumerate() {
            *count += usize::from(argmax(logits.row(k)) == vote[k]);
        }
    }
    let m = cache.num_samples() as f64;
    counts.into_iter().map(|c| c as f64 / m).collect()
}

/// Majority-vote class of the smoothed model for each node in `nodes`
/// (ties toward the smallest class id).
pub fn smooth_predictions(inference: &Inference<'_>, cache: &SmoothingCache, nodes: &[usize]) -> Vec<usize> {
    let c = inference.weights().num_classes();
    let mut counts = vec![0usize; nodes.len() * c];
    let lists = cache.flip_lists();
    for logits in inference.logits_for_flips(&lists, nodes) {
        for k in 0..nodes.len() {
            counts[k * c + argmax(logits.row(k))] += 1;
        }
    }
    counts
        .chunks_exact(c)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn check_pbar(pbar: f64) -> Result<()> {
    if !(pbar > 0.5 && pbar <= 1.0) {
        return Err(Error::config(format!("p_bar {pbar} outside (0.5, 1]")));
    }
    Ok(())
}

/// Fraction of `probs` strictly below `pbar`.
pub fn fit_certified_ratio(probs: &[f64], pbar: f64) -> Result<f64> {
    check_pbar(pbar)?;
    if probs.is_empty() {
        return Err(Error::config("fitness needs a nonempty attacked node set"));
    }
    Ok(probs.iter().filter(|&&p| p < pbar).count() as f64 / probs.len() as f64)
}

/// Smallest probability in `[0.5, 1]` (up to `tol`) accepted by a monotone
/// certification oracle.
pub fn find_pbar(oracle: impl Fn(f64) -> bool, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::config("find_pbar tolerance must be positive"));
    }
    if !oracle(1.0) {
        return Err(Error::NoThreshold);
    }
    let (mut lo, mut hi) = (0.5f64, 1.0f64);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if oracle(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{forward, ModelKind, ModelWeights};
    use crate::graph::{apply_flips, test_util};
    use crate::rng::from_seed;

    fn params(p_plus: f64, p_minus: f64, samples: usize) -> SmoothingParams {
        SmoothingParams { p_plus, p_minus, samples, seed: 11 }
    }

    fn ring(n: usize) -> Graph {
        let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        test_util::graph(n, &edges)
    }

    #[test]
    fn zero_rates_give_empty_flips() {
        let c = smoothing_sample(&ring(10), params(0.0, 0.0, 5)).unwrap();
        assert!((0..5).all(|i| c.sample(i).is_empty()));
    }

    #[test]
    fn full_removal_is_edgeless() {
        let g = ring(10);
        let c = smoothing_sample(&g, params(0.0, 1.0, 4)).unwrap();
        for i in 0..4 {
            assert_eq!(apply_flips(&g, c.sample(i)).num_edges(), 0);
        }
    }

    #[test]
    fn samples_are_reproducible_and_symmetric_free_of_loops() {
        let g = ring(30);
        let a = smoothing_sample(&g, params(0.05, 0.3, 6)).unwrap();
        let b = smoothing_sample(&g, params(0.05, 0.3, 6)).unwrap();
        for i in 0..6 {
            assert_eq!(a.sample(i), b.sample(i));
            assert!(a.sample(i).iter().all(|&(r, c)| r < c));
            assert!(a.sample(i).windows(2).all(|w| w[0] < w[1]));
        }
        // Sample i does not depend on how many samples were drawn.
        let short = smoothing_sample(&g, params(0.05, 0.3, 2)).unwrap();
        assert_eq!(short.sample(1), a.sample(1));
    }

    #[test]
    fn addition_count_matches_binomial_mean() {
        let n = 400;
        let g = ring(n);
        let p = 0.001;
        let c = smoothing_sample(&g, params(p, 0.0, 200)).unwrap();
        let non_edges = (n * (n - 1) / 2 - g.num_edges()) as f64;
        let mean = (0..200).map(|i| c.sample(i).len() as f64).sum::<f64>() / 200.0;
        let sigma = (non_edges * p * (1.0 - p) / 200.0).sqrt();
        assert!((mean - non_edges * p).abs() < 3.0 * sigma, "mean {mean}");
        assert!((0..200).all(|i| c.sample(i).iter().all(|&(r, cc)| !g.has_edge(r, cc))));
    }

    #[test]
    fn dense_addition_path() {
        let g = ring(6);
        let c = smoothing_sample(&g, params(0.9, 0.0, 20)).unwrap();
        for i in 0..20 {
            let s = c.sample(i);
            assert!(s.iter().all(|&(r, cc)| !g.has_edge(r, cc)));
            assert!(s.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn identical_graphs_leave_cache_unchanged() {
        let g = ring(20);
        let c = smoothing_sample(&g, params(0.02, 0.3, 8)).unwrap();
        let v = c.adaptive_resample(&g, &g);
        assert_eq!(v.flip_lists(), c.flip_lists());
    }

    #[test]
    fn resample_touches_only_changed_pairs() {
        let g0 = ring(25);
        let changed = vec![(0, 1), (2, 9), (3, 17)];
        let g1 = apply_flips(&g0, &changed);
        let c = smoothing_sample(&g0, params(0.05, 0.4, 50)).unwrap();
        let v = c.adaptive_resample(&g0, &g1);
        for i in 0..50 {
            let outside = |s: &[(usize, usize)]| -> Vec<(usize, usize)> {
                s.iter().copied().filter(|e| !changed.contains(e)).collect()
            };
            assert_eq!(outside(c.sample(i)), outside(v.sample(i)));
        }
    }

    #[test]
    fn redrawn_edge_rate_matches_p_minus() {
        let g0 = ring(12);
        let added = (0usize, 6usize);
        let g1 = apply_flips(&g0, &[added]);
        let m = 10_000;
        let p_minus = 0.4;
        let c = smoothing_sample(&g0, params(0.0, p_minus, m)).unwrap();
        let v = c.adaptive_resample(&g0, &g1);
        // The pair is absent in the smoothed g1 exactly when it is not
        // flipped relative to g0.
        let off = (0..m).filter(|&i| !v.sample(i).contains(&added)).count() as f64 / m as f64;
        let sigma = (p_minus * (1.0 - p_minus) / m as f64).sqrt();
        assert!((off - p_minus).abs() < 3.0 * sigma, "off-rate {off}");
    }

    fn weights(d: usize, c: usize) -> ModelWeights<f32> {
        let mut rng = from_seed(5);
        let mut w = ModelWeights::glorot(ModelKind::Gcn, d, 8, c, &mut rng);
        w.b1 = vec![0.0; c];
        w
    }

    #[test]
    fn zero_rates_give_unit_probability() {
        let g = ring(10);
        let w = weights(3, 2);
        let inf = Inference::new(&w, &g).unwrap();
        let c = smoothing_sample(&g, params(0.0, 0.0, 7)).unwrap();
        let nodes: Vec<usize> = (0..10).collect();
        let vote = inf.clean_predictions();
        assert!(smooth_probs(&inf, &c, &nodes, &vote).iter().all(|&p| p == 1.0));
    }

    #[test]
    fn single_sample_probability_is_binary() {
        let g = ring(10);
        let w = weights(3, 2);
        let inf = Inference::new(&w, &g).unwrap();
        let c = smoothing_sample(&g, params(0.2, 0.5, 1)).unwrap();
        let nodes: Vec<usize> = (0..10).collect();
        let probs = smooth_probs(&inf, &c, &nodes, &inf.clean_predictions());
        assert!(probs.iter().all(|&p| p == 0.0 || p == 1.0));
    }

    #[test]
    fn probabilities_match_naive_loop() {
        let g = test_util::graph(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (1, 4)]);
        let w = weights(3, 2);
        let inf = Inference::new(&w, &g).unwrap();
        let c = smoothing_sample(&g, params(0.2, 0.4, 500)).unwrap();
        let nodes: Vec<usize> = (0..6).collect();
        let vote = inf.clean_predictions();
        let fast = smooth_probs(&inf, &c, &nodes, &vote);
        let mut counts = [0usize; 6];
        for i in 0..500 {
            let z = forward(&w, &apply_flips(&g, c.sample(i)), None).unwrap();
            for v in 0..6 {
                counts[v] += usize::from(argmax(z.row(v)) == vote[v]);
            }
        }
        let naive: Vec<f64> = counts.iter().map(|&k| k as f64 / 500.0).collect();
        assert_eq!(fast, naive);
    }

    #[test]
    fn majority_vote_matches_naive_loop() {
        let g = test_util::graph(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (1, 4)]);
        let w = weights(3, 2);
        let inf = Inference::new(&w, &g).unwrap();
        let c = smoothing_sample(&g, params(0.3, 0.5, 301)).unwrap();
        let nodes: Vec<usize> = (0..6).collect();
        let mut counts = [[0usize; 2]; 6];
        for i in 0..301 {
            let z = forward(&w, &apply_flips(&g, c.sample(i)), None).unwrap();
            for v in 0..6 {
                counts[v][argmax(z.row(v))] += 1;
            }
        }
        let naive: Vec<usize> = counts.iter().map(|k| usize::from(k[1] > k[0])).collect();
        assert_eq!(smooth_predictions(&inf, &c, &nodes), naive);
        let clean = smoothing_sample(&g, params(0.0, 0.0, 3)).unwrap();
        assert_eq!(smooth_predictions(&inf, &clean, &nodes), inf.clean_predictions());
    }

    #[test]
    fn certified_ratio_counts() {
        assert_eq!(fit_certified_ratio(&[1.0; 4], 0.7).unwrap(), 0.0);
        assert_eq!(fit_certified_ratio(&[0.5; 4], 0.7).unwrap(), 1.0);
        assert_eq!(fit_certified_ratio(&[0.9, 0.6, 0.8, 0.65], 0.7).unwrap(), 0.5);
        assert!(fit_certified_ratio(&[0.9], 0.5).is_err());
    }

    #[test]
    fn bisection_for_threshold() {
        let p = find_pbar(|p| p >= 0.75, 1e-4).unwrap();
        assert!((0.75..=0.7501).contains(&p));
        assert!(find_pbar(|_| true, 1e-4).unwrap() <= 0.5 + 1e-4);
        let p = find_pbar(|p| p >= 0.9031, 1e-6).unwrap();
        assert!((p - 0.9031).abs() <= 1e-6);
        assert!(matches!(find_pbar(|_| false, 1e-4), Err(Error::NoThreshold)));
    }

    proptest::proptest! {
        #[test]
        fn certified_ratio_monotone_in_pbar(
            probs in proptest::collection::vec(0.0f64..=1.0, 1..30),
            a in 0.51f64..=1.0,
            b in 0.51f64..=1.0,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            proptest::prop_assert!(fit_certified_ratio(&probs, hi).unwrap() >= fit_certified_ratio(&probs, lo).unwrap());
        }

        #[test]
        fn resample_complement_is_bitwise_identical(
            genes in proptest::collection::vec(0u64..190, 0..8),
            seed in 0u64..1000,
        ) {
            let g0 = ring(20);
            let mut changed: Vec<(usize, usize)> = genes.iter().map(|&l| pi_inverse_unchecked(l, 20)).collect();
            changed.sort_unstable();
            changed.dedup();
            let g1 = apply_flips(&g0, &changed);
            let c = smoothing_sample(&g0, SmoothingParams { p_plus: 0.05, p_minus: 0.3, samples: 12, seed }).unwrap();
            let v = c.adaptive_resample(&g0, &g1);
            for i in 0..12 {
                let a: Vec<_> = c.sample(i).iter().filter(|e| !changed.contains(e)).collect();
                let b: Vec<_> = v.sample(i).iter().filter(|e| !changed.contains(e)).collect();
                proptest::prop_assert_eq!(a, b);
            }
        }
    }
}
