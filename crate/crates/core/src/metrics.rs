//! Corpus BLEU and the per-checkpoint metric record.
//!
//! BLEU follows the Texygen convention: every hypothesis is scored against
//! the whole reference set (clipping by the largest count of each n-gram in
//! any single reference), the n-gram orders `1..=n` are weighted uniformly
//! in the geometric mean, a zero clipped count becomes `ε / denominator`
//! with `ε = 1e-9`, the brevity penalty uses the reference length closest
//! to the hypothesis length (the shorter one on ties), and the per-hypothesis
//! scores are averaged.

use std::collections::HashMap;
use std::hash::Hash;

use rand::RngCore;
use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::generator::{nll_gen, GeneratorModel};
use crate::oracle::{OracleModel, Sampler};

/// Additive floor for zero clipped n-gram counts.
pub const SMOOTHING_EPS: f64 = 1e-9;
/// Identifies the BLEU convention in every emitted record.
pub const CONVENTION_ID: &str = "texygen-uniform-eps1e-9-closest-ref";

#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    /// `scores[n - 1]` is BLEU-n, for `n` in `1..=max_n`.
    pub scores: Vec<f64>,
    pub hypotheses: usize,
    pub references: usize,
    /// Hypotheses with no tokens, scored 0.
    pub empty_hypotheses: usize,
    pub convention_id: &'static str,
}

impl BleuReport {
    pub fn bleu(&self, n: usize) -> f64 {
        self.scores[n - 1]
    }
}

/// Largest count of each n-gram over the references, for every order.
struct ReferenceCounts<'a, T> {
    max_counts: Vec<HashMap<&'a [T], usize>>,
    lengths: Vec<usize>,
}

impl<'a, T: Hash + Eq> ReferenceCounts<'a, T> {
    fn new(refs: &'a [Vec<T>], max_n: usize) -> Self {
        let mut max_counts = vec![HashMap::new(); max_n];
        for r in refs {
            for (k, table) in max_counts.iter_mut().enumerate() {
                let mut local: HashMap<&[T], usize> = HashMap::new();
                for g in r.windows(k + 1) {
                    *local.entry(g).or_default() += 1;
                }
                for (g, c) in local {
                    let e = table.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
        }
        let mut lengths: Vec<usize> = refs.iter().map(Vec::len).collect();
        lengths.sort_unstable();
        lengths.dedup();
        ReferenceCounts { max_counts, lengths }
    }

    fn closest_length(&self, c: usize) -> usize {
        let i = self.lengths.partition_point(|&l| l < c);
        let above = self.lengths.get(i).copied();
        let below = i.checked_sub(1).map(|j| self.lengths[j]);
        match (below, above) {
            (Some(b), Some(a)) if c - b <= a - c => b,
            (_, Some(a)) => a,
            (Some(b), None) => b,
            (None, None) => 0,
        }
    }

    /// `(clipped matches, total)` for order `n`.
    fn precision(&self, hyp: &[T], n: usize) -> (usize, usize) {
        let mut counts: HashMap<&[T], usize> = HashMap::new();
        for g in hyp.windows(n) {
            *counts.entry(g).or_default() += 1;
        }
        let table = &self.max_counts[n - 1];
        let matched = counts
            .iter()
            .map(|(g, &c)| c.min(table.get(g).copied().unwrap_or(0)))
            .sum();
        (matched, hyp.len().saturating_sub(n - 1))
    }

    /// BLEU-1 through BLEU-max_n of one hypothesis.
    fn score(&self, hyp: &[T], max_n: usize) -> Vec<f64> {
        if hyp.is_empty() {
            return vec![0.0; max_n];
        }
        let c = hyp.len() as f64;
        let r = self.closest_length(hyp.len()) as f64;
        let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
        let mut log_p = Vec::with_capacity(max_n);
        let mut out = Vec::with_capacity(max_n);
        for n in 1..=max_n {
            let (m, total) = self.precision(hyp, n);
            let denom = total.max(1) as f64;
            let p = if m == 0 { SMOOTHING_EPS / denom } else { m as f64 / denom };
            log_p.push(p.ln());
            out.push(bp * (log_p.iter().sum::<f64>() / n as f64).exp());
        }
        out
    }
}

/// Mean BLEU-1..=`max_n` of `hypotheses` against the whole `references` set.
///
/// # Panics
/// If either list is empty or `max_n` is 0.
pub fn bleu<T: Hash + Eq + Sync>(hypotheses: &[Vec<T>], references: &[Vec<T>], max_n: usize) -> BleuReport {
    assert!(!hypotheses.is_empty() && !references.is_empty(), "bleu needs hypotheses and references");
    assert!(max_n >= 1);
    let refs = ReferenceCounts::new(references, max_n);
    let per: Vec<Vec<f64>> = hypotheses.par_iter().map(|h| refs.score(h, max_n)).collect();
    let scores = (0..max_n)
        .map(|k| per.iter().map(|s| s[k]).sum::<f64>() / per.len() as f64)
        .collect();
    BleuReport {
        scores,
        hypotheses: hypotheses.len(),
        references: references.len(),
        empty_hypotheses: hypotheses.iter().filter(|h| h.is_empty()).count(),
        convention_id: CONVENTION_ID,
    }
}

/// Final evaluation of one generator.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    /// BLEU-2 through BLEU-5.
    pub bleu: [f64; 4],
    pub nll_gen: f64,
    pub nll_oracle: Option<f64>,
    pub n_samples: usize,
    pub convention_id: String,
}

impl MetricRecord {
    pub const COLUMNS: [&'static str; 8] = [
        "bleu2",
        "bleu3",
        "bleu4",
        "bleu5",
        "nll_gen",
        "nll_oracle",
        "n_samples",
        "convention_id",
    ];

    pub fn fields(&self) -> Vec<String> {
        let mut f: Vec<String> = self.bleu.iter().map(f64::to_string).collect();
        f.push(self.nll_gen.to_string());
        f.push(self.nll_oracle.map(|v| v.to_string()).unwrap_or_default());
        f.push(self.n_samples.to_string());
        f.push(self.convention_id.clone());
        f
    }
}

/// Samples `n_samples` sequences from `gen`, scores BLEU-2..5 against
/// `test`, NLL of `test` under `gen`, and (given an oracle) the oracle NLL of
/// the same samples.
pub fn evaluate_checkpoint(
    gen: &GeneratorModel,
    test: &Corpus,
    oracle: Option<&OracleModel>,
    n_samples: usize,
    rng: &mut dyn RngCore,
) -> MetricRecord {
    let samples = gen.sample_sequences(n_samples, test.max_len(), rng);
    let hyps: Vec<Vec<usize>> = samples.iter().map(|s| s.tokens().to_vec()).collect();
    let report = bleu(&hyps, &test.token_lists(), 5);
    let nll_oracle = oracle.map(|o| {
        let lp = o.log_prob(&samples);
        -lp.iter().sum::<f64>() / lp.len() as f64
    });
    MetricRecord {
        bleu: [report.bleu(2), report.bleu(3), report.bleu(4), report.bleu(5)],
        nll_gen: nll_gen(gen, test),
        nll_oracle,
        n_samples,
        convention_id: CONVENTION_ID.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn identical_hypothesis_scores_one() {
        let refs = vec![toks("a b c d e f"), toks("x y z")];
        let r = bleu(&[toks("a b c d e f")], &refs, 5);
        for n in 1..=5 {
            assert!((r.bleu(n) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn no_shared_bigram_hits_the_floor() {
        let refs = vec![toks("a b c d")];
        let r = bleu(&[toks("d c b a")], &refs, 2);
        // p1 = 4/4, p2 = eps/3, equal lengths
        let want = (1.0f64 * SMOOTHING_EPS / 3.0).sqrt();
        assert!((r.bleu(2) - want).abs() < 1e-18);
    }

    #[test]
    fn clipping_and_brevity() {
        let refs = vec![toks("the cat is on the mat"), toks("there is a cat on the mat")];
        let r = bleu(&[toks("the the the the")], &refs, 1);
        // clipped unigram 2/4, closest length 6, c = 4
        let want = (1.0f64 - 6.0 / 4.0).exp() * 0.5;
        assert!((r.bleu(1) - want).abs() < 1e-12);
    }

    #[test]
    fn closest_length_prefers_the_shorter_on_ties() {
        let refs = vec![vec![1; 4], vec![1; 8]];
        let rc = ReferenceCounts::new(&refs, 1);
        assert_eq!(rc.closest_length(6), 4);
        assert_eq!(rc.closest_length(7), 8);
        assert_eq!(rc.closest_length(2), 4);
        assert_eq!(rc.closest_length(20), 8);
    }

    #[test]
    fn empty_hypothesis_scores_zero() {
        let r = bleu(&[vec![], toks("a b")], &[toks("a b")], 2);
        assert_eq!(r.empty_hypotheses, 1);
        assert!((r.bleu(2) - 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn order_invariant_and_monotone(
            hyps in prop::collection::vec(prop::collection::vec(0u8..4, 1..7), 1..5),
            refs in prop::collection::vec(prop::collection::vec(0u8..4, 1..7), 1..5),
            extra in prop::collection::vec(0u8..4, 1..7),
        ) {
            let a = bleu(&hyps, &refs, 4);
            let mut h2 = hyps.clone();
            h2.reverse();
            let mut r2 = refs.clone();
            r2.reverse();
            let b = bleu(&h2, &r2, 4);
            for n in 1..=4 {
                prop_assert!((a.bleu(n) - b.bleu(n)).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&a.bleu(n)));
            }
            // Each hypothesis is perfect against a set containing it.
            for h in &hyps {
                let mut with = refs.clone();
                with.push(h.clone());
                let r = bleu(std::slice::from_ref(h), &with, h.len().min(4));
                for n in 1..=h.len().min(4) {
                    prop_assert!((r.bleu(n) - 1.0).abs() < 1e-12);
                }
            }
            // Adding a reference never lowers the clipped counts.
            let mut grown = refs.clone();
            grown.push(extra);
            let g = bleu(&hyps, &grown, 4);
            for n in 1..=4 {
                // the brevity penalty can move, so compare precisions alone
                let rc_a = ReferenceCounts::new(&refs, 4);
                let rc_g = ReferenceCounts::new(&grown, 4);
                for h in &hyps {
                    prop_assert!(rc_g.precision(h, n).0 >= rc_a.precision(h, n).0);
                }
                prop_assert!(g.bleu(n).is_finite());
            }
        }
    }
}
