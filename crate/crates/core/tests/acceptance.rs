//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary (`harness = false`) so the lines always print.
//! Failures marked `known:` are limits of the stated thresholds themselves,
//! and `empirical:` marks an experiment whose outcome went the other way;
//! both are explained in the line. Any other failure exits non-zero.
//! Set `PREFIXGAN_SKIP_DESK=1` to skip the multi-minute desk experiment.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::Array2;
use prefixgan::autodiff::{flatten_grads, Tape};
use prefixgan::config::{TrainConfig, TrainingPath};
use prefixgan::corpus::{Corpus, SegmentPlan, Sequence, Vocab};
use prefixgan::discriminator::{DiscriminatorConfig, DiscriminatorModel, OutputMode};
use prefixgan::experiment;
use prefixgan::generator::{nll_gen, GeneratorModel};
use prefixgan::metrics::bleu;
use prefixgan::oracle::{init_oracle, nll_oracle_estimate};
use prefixgan::seg_relgan::{gumbel_noise, gumbel_softmax_step, relaxed_positions, SoftSequence};
use prefixgan::seg_rl::{
    pg_gradient, rewards_baseline, rewards_full_prefix, rewards_two_segment, RewardMatrix, RolloutPolicy, Variant,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

/// Prefix of a failure that is a property of the mathematics rather than of
/// the implementation; reported as FAIL without failing the target.
const KNOWN: &str = "known: ";
/// Prefix of a failed experimental outcome (as opposed to a correctness
/// check); reported as FAIL without failing the target.
const EMPIRICAL: &str = "empirical: ";

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn check(cond: bool, ok: String, bad: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(bad)
    }
}

// ---------------------------------------------------------------------------
// Tiny enumerable instance: three word tokens, T = 3.

const T: usize = 3;

struct Tiny {
    gen: GeneratorModel,
    disc: DiscriminatorModel,
    words: Vec<usize>,
}

fn tiny() -> Tiny {
    let v = Vocab::synthetic(3);
    let mut gen = GeneratorModel::new(&v, 4, false, &mut rng(11));
    for p in gen.params_mut().values_mut() {
        p.mapv_inplace(|x| 8.0 * x);
    }
    let cfg = DiscriminatorConfig {
        emb_dim: 4,
        widths: vec![1, 2],
        filters: 4,
        heads: 1,
        mode: OutputMode::Probability,
    };
    let mut disc = DiscriminatorModel::new(v.len(), T, v.pad_id(), &cfg, &mut rng(12)).unwrap();
    for p in disc.params_mut().values_mut() {
        p.mapv_inplace(|x| 12.0 * x);
    }
    Tiny {
        gen,
        disc,
        words: v.word_ids().collect(),
    }
}

impl Tiny {
    fn all_sequences(&self) -> Vec<Sequence> {
        let mut out = Vec::new();
        for &a in &self.words {
            for &b in &self.words {
                for &c in &self.words {
                    out.push(Sequence::padded(&[a, b, c], T, 0));
                }
            }
        }
        out
    }

    fn d_at(&self, ids: &[usize], cut: usize) -> f64 {
        let seq = Sequence::padded(ids, T, 0);
        self.disc.score_prefix(&seq, cut).unwrap().scores[0]
    }

    /// `E[D(Y[..target]) | Y[..t] = prefix]` under the generator, exactly.
    fn expected(&self, gen: &GeneratorModel, prefix: &[usize], target: usize) -> f64 {
        if prefix.len() == target {
            return self.d_at(prefix, target);
        }
        let p = gen.step_distribution(prefix);
        self.words
            .iter()
            .map(|&w| {
                let mut next = prefix.to_vec();
                next.push(w);
                p[w] * self.expected(gen, &next, target)
            })
            .sum()
    }

    fn exact_rewards(&self, seqs: &[Sequence], variant: Variant, plan: SegmentPlan) -> Array2<f64> {
        let mut q = Array2::zeros((seqs.len(), T));
        for (b, s) in seqs.iter().enumerate() {
            let ids = s.ids();
            for t in 1..=T {
                let target = match variant {
                    Variant::TwoSegment if t <= plan.t_mid => plan.t_mid,
                    _ => T,
                };
                q[[b, t - 1]] = self.expected(&self.gen, &ids[..t], target);
            }
        }
        q
    }

    fn expected_reward(&self, gen: &GeneratorModel) -> f64 {
        self.expected(gen, &[], T)
    }
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn exact_enumeration_rewards() -> Outcome {
    let start = Instant::now();
    let m = tiny();
    let seqs = m.all_sequences();
    let plan_unused = SegmentPlan::new(1, T).unwrap();
    let policy = RolloutPolicy::from_generator(&m.gen);
    let n = 20_000;
    let mut worst: f64 = 0.0;
    let mc = rewards_baseline(&m.disc, &policy, &seqs, n, &mut rng(1)).unwrap();
    let exact = m.exact_rewards(&seqs, Variant::Baseline, plan_unused);
    worst = worst.max(max_abs_diff(&mc.values, &exact));
    for t_mid in 1..T {
        let plan = SegmentPlan::new(t_mid, T).unwrap();
        let mc = rewards_two_segment(&m.disc, &policy, &seqs, plan, n, &mut rng(2)).unwrap();
        let exact = m.exact_rewards(&seqs, Variant::TwoSegment, plan);
        worst = worst.max(max_abs_diff(&mc.values, &exact));
    }
    let secs = start.elapsed().as_secs_f64();
    let full = m.disc.score_full(&seqs);
    let (lo, hi) = full.iter().fold((1.0f64, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    check(
        worst <= 0.01 && secs < 60.0,
        format!("max |MC - exact| = {worst:.5} over 27 sequences x 3 reward sets (D in [{lo:.3}, {hi:.3}]), {secs:.1}s"),
        format!("max |MC - exact| = {worst:.5} (limit 0.01), {secs:.1}s (limit 60s)"),
    )
}

fn reinforce_gradient() -> Outcome {
    let start = Instant::now();
    let m = tiny();
    let seqs = m.all_sequences();
    let q = m.exact_rewards(&seqs, Variant::Baseline, SegmentPlan::new(1, T).unwrap());
    let probs: Vec<f64> = m.gen.log_prob(&seqs).into_iter().map(f64::exp).collect();
    let mass: f64 = probs.iter().sum();
    let mut weighted = q.clone();
    for (b, mut row) in weighted.rows_mut().into_iter().enumerate() {
        row *= probs[b] * seqs.len() as f64;
    }
    let rewards = RewardMatrix {
        values: weighted,
        variant: Variant::Baseline,
    };
    let (_, grads) = pg_gradient(&m.gen, &seqs, &rewards);
    let grad = flatten_grads(&grads);
    let h = 1e-5;
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for k in 0..grad.len() {
        if grad[k].abs() <= 1e-6 {
            continue;
        }
        let base = m.gen.params().scalar(k);
        let mut g = m.gen.clone();
        g.params_mut().set_scalar(k, base + h);
        let plus = m.expected_reward(&g);
        g.params_mut().set_scalar(k, base - h);
        let minus = m.expected_reward(&g);
        let fd = (plus - minus) / (2.0 * h);
        worst = worst.max((fd - grad[k]).abs() / grad[k].abs());
        checked += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-3 && checked > 0 && (mass - 1.0).abs() < 1e-9 && secs < 300.0,
        format!("{checked}/{} coordinates, max relative error {worst:.2e}, {secs:.1}s", grad.len()),
        format!("max relative error {worst:.2e} on {checked} coordinates (mass {mass}), {secs:.1}s"),
    )
}

// ---------------------------------------------------------------------------
// Desk-sized models.

fn desk_models(heads: usize, mode: OutputMode) -> (GeneratorModel, DiscriminatorModel) {
    let v = Vocab::synthetic(50);
    let gen = GeneratorModel::new(&v, 32, false, &mut rng(21));
    let cfg = DiscriminatorConfig {
        emb_dim: 16,
        widths: vec![2, 3, 4, 5],
        filters: 8,
        heads,
        mode,
    };
    let disc = DiscriminatorModel::new(v.len(), 10, v.pad_id(), &cfg, &mut rng(22)).unwrap();
    (gen, disc)
}

fn zero_variance_cells() -> Outcome {
    let (gen, disc) = desk_models(1, OutputMode::Probability);
    let policy = RolloutPolicy::from_generator(&gen);
    let batch = gen.sample(16, 10, &mut rng(3));
    let plan = SegmentPlan::new(5, 10).unwrap();
    let a = rewards_two_segment(&disc, &policy, &batch, plan, 8, &mut rng(100)).unwrap();
    let b = rewards_two_segment(&disc, &policy, &batch, plan, 8, &mut rng(200)).unwrap();
    let same = |t: usize| a.column(t).iter().zip(b.column(t)).all(|(x, y)| x.to_bits() == y.to_bits());
    let mc_differs = a.column(3) != b.column(3);
    check(
        same(5) && same(10) && mc_differs,
        "columns t_mid = 5 and T = 10 bit-identical across rng seeds 100 and 200".into(),
        format!("t_mid identical: {}, T identical: {}, MC columns differ: {mc_differs}", same(5), same(10)),
    )
}

fn masking_invariance() -> Outcome {
    let (gen, disc) = desk_models(2, OutputMode::Logit);
    let mut r = rng(4);
    let seqs = gen.sample(100, 10, &mut r);
    let mut violations = 0;
    let mut comparisons = 0;
    for s in &seqs {
        for t in 1..=10 {
            let mut ids = s.ids().to_vec();
            for id in ids.iter_mut().skip(t) {
                *id = r.random_range(2..52);
            }
            let perturbed = Sequence::padded(&ids, 10, 0);
            let a = disc.score_prefix(s, t).unwrap();
            let b = disc.score_prefix(&perturbed, t).unwrap();
            comparisons += 1;
            if a.scores.iter().zip(&b.scores).any(|(x, y)| x.to_bits() != y.to_bits()) {
                violations += 1;
            }
        }
    }
    check(
        violations == 0,
        format!("{comparisons} (sequence, t) pairs, all scores unchanged bit for bit"),
        format!("{violations}/{comparisons} prefix scores changed"),
    )
}

fn relaxed_gradients() -> Outcome {
    let v = Vocab::synthetic(4);
    let mut gen = GeneratorModel::new(&v, 5, false, &mut rng(31));
    for p in gen.params_mut().values_mut() {
        p.mapv_inplace(|x| 5.0 * x);
    }
    let cfg = DiscriminatorConfig {
        emb_dim: 4,
        widths: vec![1, 2, 3],
        filters: 3,
        heads: 2,
        mode: OutputMode::Probability,
    };
    let len = 4;
    let disc = DiscriminatorModel::new(v.len(), len, v.pad_id(), &cfg, &mut rng(32)).unwrap();
    let vocab = v.len();
    let h = 1e-5;
    let rel = |fd: f64, an: f64| (fd - an).abs() / an.abs();

    // score_soft along simplex-preserving directions e_i - e_j.
    let mut r = rng(33);
    let mut soft = Array2::<f64>::zeros((len, vocab));
    for mut row in soft.rows_mut() {
        row.mapv_inplace(|_| 0.1 + r.random::<f64>());
        let s = row.sum();
        row /= s;
    }
    let mut worst_soft: f64 = 0.0;
    let mut n_soft = 0;
    for head in 0..2 {
        for t in 1..=len {
            let (_, g) = disc.score_soft_with_grad(&soft, t, head).unwrap();
            for p in 0..t {
                for i in 1..vocab {
                    let an = g[[p, i]] - g[[p, 0]];
                    if an.abs() <= 1e-6 {
                        continue;
                    }
                    let shifted = |sign: f64| {
                        let mut x = soft.clone();
                        x[[p, i]] += sign * h;
                        x[[p, 0]] -= sign * h;
                        disc.score_soft(&x, t).unwrap().scores[head]
                    };
                    let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * h);
                    worst_soft = worst_soft.max(rel(fd, an));
                    n_soft += 1;
                }
            }
        }
    }

    // relaxed sample -> discriminator, gradient w.r.t. generator parameters.
    let tau = 0.7;
    let noise: Vec<_> = (0..len).map(|_| gumbel_noise(3, vocab, &mut r)).collect();
    let value = |g: &GeneratorModel| -> (f64, Vec<f64>) {
        let mut tape = Tape::new();
        let pos = relaxed_positions(&mut tape, g, &noise, tau).unwrap();
        let b = disc.bind(&mut tape);
        let logits = disc.logits_soft(&mut tape, &b, &pos);
        let s = tape.sigmoid(logits);
        let total = tape.sum(s);
        let grads = tape.backward(total).for_store(g.params());
        (tape.scalar(total), flatten_grads(&grads))
    };
    let (_, grad) = value(&gen);
    let mut worst_gen: f64 = 0.0;
    let mut n_gen = 0;
    for k in 0..grad.len() {
        if grad[k].abs() <= 1e-6 {
            continue;
        }
        let base = gen.params().scalar(k);
        let mut g = gen.clone();
        g.params_mut().set_scalar(k, base + h);
        let plus = value(&g).0;
        g.params_mut().set_scalar(k, base - h);
        let minus = value(&g).0;
        worst_gen = worst_gen.max(rel((plus - minus) / (2.0 * h), grad[k]));
        n_gen += 1;
    }

    // one-hot inputs reproduce discrete scores.
    let seqs = gen.sample(20, len, &mut r);
    let mut worst_hot: f64 = 0.0;
    for s in &seqs {
        let hot = SoftSequence::one_hot(s, vocab);
        for t in 1..=len {
            let a = disc.score_soft(&hot.probs, t).unwrap().scores;
            let b = disc.score_prefix(s, t).unwrap().scores;
            for (x, y) in a.iter().zip(&b) {
                worst_hot = worst_hot.max((x - y).abs());
            }
        }
    }
    check(
        worst_soft <= 1e-3 && worst_gen <= 1e-3 && worst_hot <= 1e-6 && n_soft > 0 && n_gen > 0,
        format!(
            "score_soft {n_soft} directions max rel {worst_soft:.1e}; relaxed sample {n_gen} params max rel {worst_gen:.1e}; one-hot max |diff| {worst_hot:.1e}"
        ),
        format!("score_soft rel {worst_soft:.1e}, relaxed sample rel {worst_gen:.1e}, one-hot {worst_hot:.1e}"),
    )
}

fn gumbel_max() -> Outcome {
    let logits = [1.0, -0.5, 0.2, 2.0, 0.0, -1.5];
    let z: f64 = logits.iter().map(|l: &f64| l.exp()).sum();
    let p: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
    let n = 50_000;
    let mut r = rng(6);
    let mut counts = vec![0usize; logits.len()];
    for _ in 0..n {
        let y = gumbel_softmax_step(&logits, 1.0, &mut r).unwrap();
        let arg = (0..y.len()).max_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap();
        counts[arg] += 1;
    }
    let worst_z = counts
        .iter()
        .zip(&p)
        .map(|(&c, &pk)| (c as f64 / n as f64 - pk).abs() / (pk * (1.0 - pk) / n as f64).sqrt())
        .fold(0.0, f64::max);
    let sharp_fraction = |logits: &[f64], tau: f64, draws: usize, r: &mut ChaCha8Rng| {
        let hits = (0..draws)
            .filter(|_| {
                let y = gumbel_softmax_step(logits, tau, r).unwrap();
                y.iter().cloned().fold(0.0, f64::max) > 0.99
            })
            .count();
        hits as f64 / draws as f64
    };
    let draws = 20_000;
    let frac = sharp_fraction(&logits, 0.01, draws, &mut r);
    // Two tied logits: max > 0.99 iff |g1 - g2| > tau ln 99, and g1 - g2 is
    // standard logistic, so the fraction is 1 - tanh(tau ln 99 / 2).
    let tied = sharp_fraction(&[0.0, 0.0], 0.01, draws, &mut r);
    let tied_want = 1.0 - (0.01 * 99f64.ln() / 2.0).tanh();
    let tied_z = (tied - tied_want).abs() / (tied_want * (1.0 - tied_want) / draws as f64).sqrt();
    let tau_needed = [0.01, 0.005, 0.0025, 0.00125]
        .into_iter()
        .find(|&tau| sharp_fraction(&logits, tau, draws, &mut r) >= 0.99);
    let detail = format!(
        "argmax frequencies within {worst_z:.2} sigma over {n} draws; tau = 0.01 max > 0.99 in {:.2}% \
         (tied pair {:.2}% vs exact {:.2}%, {tied_z:.1} sigma; >= 99% first at tau = {})",
        100.0 * frac,
        100.0 * tied,
        100.0 * tied_want,
        tau_needed.map_or("none tried".into(), |t| t.to_string()),
    );
    if worst_z > 3.0 || tied_z > 3.0 {
        Err(detail)
    } else if frac < 0.99 {
        Err(format!("{KNOWN}{detail}"))
    } else {
        Ok(detail)
    }
}

// ---------------------------------------------------------------------------
// Metric oracles.

fn ngrams(s: &[&str], n: usize) -> Vec<Vec<String>> {
    if s.len() < n {
        return Vec::new();
    }
    (0..=s.len() - n).map(|i| s[i..i + n].iter().map(|w| w.to_string()).collect()).collect()
}

fn occurrences(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

/// Brute-force sentence BLEU-n against all references, averaged.
fn brute_bleu(hyps: &[Vec<&str>], refs: &[Vec<&str>], n: usize) -> f64 {
    let mut total = 0.0;
    for h in hyps {
        let c = h.len();
        let mut best = usize::MAX;
        let mut r_len = 0;
        for r in refs {
            let d = r.len().abs_diff(c);
            if d < best || (d == best && r.len() < r_len) {
                best = d;
                r_len = r.len();
            }
        }
        let bp = if c > r_len { 1.0 } else { (1.0 - r_len as f64 / c as f64).exp() };
        let mut log_sum = 0.0;
        for k in 1..=n {
            let grams = ngrams(h, k);
            let mut seen: Vec<Vec<String>> = Vec::new();
            let mut matched = 0;
            for g in &grams {
                if seen.contains(g) {
                    continue;
                }
                seen.push(g.clone());
                let max_ref = refs.iter().map(|r| occurrences(&ngrams(r, k), g)).max().unwrap_or(0);
                matched += occurrences(&grams, g).min(max_ref);
            }
            let denom = grams.len().max(1) as f64;
            let prec = if matched == 0 { 1e-9 / denom } else { matched as f64 / denom };
            log_sum += prec.ln();
        }
        total += bp * (log_sum / n as f64).exp();
    }
    total / hyps.len() as f64
}

fn metric_oracles() -> Outcome {
    let split = |lines: &[&'static str]| -> Vec<Vec<&'static str>> {
        lines.iter().map(|l| l.split_whitespace().collect()).collect()
    };
    let refs = split(&[
        "the cat sat on the mat",
        "a dog sat on the log today",
        "the cat ate the fish",
    ]);
    let hyps = split(&["the cat sat on the log", "a cat ate fish", "the the the dog sat on a mat now"]);
    let report = bleu(&hyps, &refs, 5);
    let worst_bleu = (2..=5)
        .map(|n| (report.bleu(n) - brute_bleu(&hyps, &refs, n)).abs())
        .fold(0.0, f64::max);

    let v = Vocab::synthetic(50);
    let mut uniform = GeneratorModel::new(&v, 8, false, &mut rng(7));
    for p in uniform.params_mut().values_mut() {
        p.fill(0.0);
    }
    let mut r = rng(8);
    let corpus = Corpus::from_sequences(
        (0..200)
            .map(|_| Sequence::padded(&(0..10).map(|_| r.random_range(2..52)).collect::<Vec<_>>(), 10, 0))
            .collect(),
        10,
    );
    let nll_uniform = nll_gen(&uniform, &corpus);
    let want = 10.0 * 50f64.ln();

    let oracle = init_oracle(0, 50, 32).unwrap();
    let a = nll_oracle_estimate(&oracle, &oracle, 5000, 10, &mut rng(9));
    let b = nll_oracle_estimate(&oracle, &oracle, 5000, 10, &mut rng(10));
    let z = (a.mean - b.mean).abs() / (a.std_err.powi(2) + b.std_err.powi(2)).sqrt();

    check(
        worst_bleu <= 1e-9 && (nll_uniform - want).abs() <= 1e-6 && z <= 3.0,
        format!(
            "BLEU max |diff| {worst_bleu:.1e}; uniform NLL {nll_uniform:.6} = 10 ln 50; oracle self-NLL {:.3} vs {:.3} ({z:.2} SE)",
            a.mean, b.mean
        ),
        format!("BLEU diff {worst_bleu:.1e}, uniform NLL {nll_uniform} vs {want}, self-NLL gap {z:.2} SE"),
    )
}

// ---------------------------------------------------------------------------
// Desk experiment.

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn desk_config(path: TrainingPath, variant: Variant, out: &Path) -> TrainConfig {
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.cfg"))
        .expect("configs/desk.cfg");
    let mut cfg = TrainConfig::from_text(&text).unwrap();
    cfg.path = path;
    cfg.variant = variant;
    cfg.output = out.to_path_buf();
    cfg
}

fn desk_experiment() -> Outcome {
    if std::env::var_os("PREFIXGAN_SKIP_DESK").is_some() {
        return Err(format!("{EMPIRICAL}skipped (PREFIXGAN_SKIP_DESK set)"));
    }
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut lines = Vec::new();
    let mut hard_fail = false;
    let mut soft_fail = false;
    for path in [TrainingPath::PolicyGradient, TrainingPath::Relaxed] {
        let mut finals = BTreeMap::new();
        for variant in [Variant::Baseline, Variant::TwoSegment] {
            let out = dir.path().join(format!("{}-{}", path.as_str(), variant.as_str()));
            let cfg = desk_config(path, variant, &out);
            let report = experiment::run(&cfg, &cfg.to_text(), &[]).map_err(|e| e.to_string())?;
            let values: Vec<f64> = report
                .seeds
                .iter()
                .map(|s| s.final_record.nll_oracle.expect("synthetic run"))
                .collect();
            finals.insert(variant.as_str(), values);
        }
        let (b, t) = (&finals["baseline"], &finals["two_segment"]);
        let wins = b.iter().zip(t).filter(|(x, y)| y < x).count();
        let (base, two) = (median(b.clone()), median(t.clone()));
        if two > base + 0.05 {
            hard_fail = true;
        } else if two > base {
            soft_fail = true;
        }
        lines.push(format!(
            "{}: median nll_oracle baseline {base:.3}, two_segment {two:.3} (two_segment lower on {wins}/{} seeds)",
            path.as_str(),
            b.len()
        ));
    }
    let elapsed = start.elapsed();
    let summary = format!("{}; {:.0}s", lines.join("; "), elapsed.as_secs_f64());
    if hard_fail || elapsed > Duration::from_secs(30 * 60) {
        Err(format!("{EMPIRICAL}{summary}"))
    } else if soft_fail {
        Err(format!("{EMPIRICAL}soft failure, tie within 0.05 nats: {summary}"))
    } else {
        Ok(summary)
    }
}

// ---------------------------------------------------------------------------

fn call_counts() -> Outcome {
    let (gen, disc) = desk_models(1, OutputMode::Probability);
    let policy = RolloutPolicy::from_generator(&gen);
    let batch = gen.sample(8, 10, &mut rng(12));
    let n = 16;
    disc.reset_evaluation_count();
    rewards_full_prefix(&disc, &batch).unwrap();
    let full = disc.evaluation_count() as f64 / batch.len() as f64;
    disc.reset_evaluation_count();
    rewards_baseline(&disc, &policy, &batch, n, &mut rng(13)).unwrap();
    let mc = disc.evaluation_count() as f64 / batch.len() as f64;
    let want_mc = ((10 - 1) * n + 1) as f64;
    check(
        full == 10.0 && mc == want_mc,
        format!("per sample: full_prefix {full} = T, MC baseline {mc} = (T-1)N+1 (T = 10, N = {n})"),
        format!("per sample: full_prefix {full} (want 10), MC baseline {mc} (want {want_mc})"),
    )
}

fn csv_files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn small_config(path: TrainingPath, variant: Variant, out: &Path) -> TrainConfig {
    let mut cfg = TrainConfig::from_text(
        "vocab_size = 12\nseq_len = 6\noracle_hidden = 8\nn_train = 128\nn_test = 64\n\
         gen_hidden = 8\ndisc_emb = 8\ndisc_filters = 4\nrollouts = 4\n\
         pretrain_epochs = 2\ndisc_pretrain_steps = 2\nadv_epochs = 2\nd_steps = 2\n\
         batch_size = 16\neval_samples = 64\nseeds = 7,8\n",
    )
    .unwrap();
    cfg.path = path;
    cfg.variant = variant;
    cfg.output = out.to_path_buf();
    cfg
}

fn end_to_end_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut files = 0;
    for path in [TrainingPath::PolicyGradient, TrainingPath::Relaxed] {
        for variant in [Variant::Baseline, Variant::FullPrefix, Variant::TwoSegment] {
            let mut runs = Vec::new();
            for rep in 0..2 {
                let out = dir.path().join(format!("{}-{}-{rep}", path.as_str(), variant.as_str()));
                let cfg = small_config(path, variant, &out);
                experiment::run(&cfg, &cfg.to_text(), &[]).map_err(|e| e.to_string())?;
                runs.push(csv_files(&out));
            }
            if runs[0] != runs[1] {
                return Err(format!("{} / {} CSVs differ between reruns", path.as_str(), variant.as_str()));
            }
            files += runs[0].len();
        }
    }
    Ok(format!("{files} CSV files byte-identical across reruns (2 paths x 3 variants, seeds 7 and 8)"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("exact-enumeration rewards", exact_enumeration_rewards),
        ("REINFORCE gradient check", reinforce_gradient),
        ("zero-variance cells", zero_variance_cells),
        ("masking invariance", masking_invariance),
        ("relaxed-path gradients", relaxed_gradients),
        ("Gumbel-max property", gumbel_max),
        ("metric oracles", metric_oracles),
        ("desk directional experiment", desk_experiment),
        ("call counts", call_counts),
        ("end-to-end determinism", end_to_end_determinism),
    ];
    let mut failed = 0;
    let mut known = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS {:>2} {name}: {msg} [{secs:.1}s]", k + 1),
            Err(msg) => {
                if msg.starts_with(KNOWN) || msg.starts_with(EMPIRICAL) {
                    known += 1;
                } else {
                    failed += 1;
                }
                println!("FAIL {:>2} {name}: {msg} [{secs:.1}s]", k + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed, {known} explained failure(s)",
        criteria.len() - failed - known,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
