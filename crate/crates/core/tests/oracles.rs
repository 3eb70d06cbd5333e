//! Library against independent references: exhaustive CRF enumeration,
//! finite differences, and a dense plain skip-gram trainer.

mod support;

use omner::crf::{self, CrfParams, DecodeOptions};
use omner::embed::{train_subword_skipgram_with_report, SgnsConfig, Vocabulary, keep_probability, NegativeSampler};
use omner::schema::{is_well_formed, Tag, NUM_TAGS};
use omner::tensor::{dot, sigmoid, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn crf_matches_enumeration() {
    let s = support::crf_oracle(300, 11);
    assert!(s.max_log_z_rel < 1e-10, "log Z {}", s.max_log_z_rel);
    assert!(s.max_marginal_err < 1e-10, "marginals {}", s.max_marginal_err);
    assert!(s.max_score_rel < 1e-10, "viterbi score {}", s.max_score_rel);
    assert_eq!(s.path_mismatches, 0);
    assert!(s.tied_instances > 0, "integer instances should exercise tie-breaking");
}

#[test]
fn constrained_decoding_is_well_formed_and_optimal_among_valid_paths() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..30 {
        let len = rng.gen_range(1..=3);
        let (e, p) = support::random_crf_instance(&mut rng, NUM_TAGS, len, false);
        let (path, score) = crf::viterbi_decode(&e, &p, DecodeOptions::default());
        let tags: Vec<Tag> = path.iter().map(|&i| Tag::from_index(i).unwrap()).collect();
        assert!(is_well_formed(&tags));
        // brute force over the well-formed sequences only
        let mut best = f64::NEG_INFINITY;
        let mut stack = vec![vec![]];
        while let Some(q) = stack.pop() {
            if q.len() == len {
                let t: Vec<Tag> = q.iter().map(|&i| Tag::from_index(i).unwrap()).collect();
                if is_well_formed(&t) {
                    best = best.max(crf::sequence_score(&e, &q, &p).unwrap());
                }
                continue;
            }
            for y in 0..NUM_TAGS {
                let mut r = q.clone();
                r.push(y);
                stack.push(r);
            }
        }
        assert!((score - best).abs() < 1e-10);
    }
}

#[test]
fn crf_rejects_mismatched_width() {
    let p = CrfParams::zeros(3);
    assert!(crf::sequence_score(&Matrix::zeros(2, 4), &[0, 1], &p).is_err());
    assert!(crf::nll_and_gradient(&Matrix::zeros(2, 4), &[0, 1], &p).is_err());
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let (report, blocks) = support::gradient_suite(4, 21);
    for b in &blocks {
        assert!(report.blocks.contains_key(b), "block {b} not checked");
    }
    assert!(report.max_error() < 1e-4, "{:?}", report.worst());
}

#[test]
fn padded_batch_equals_unpadded_sentences() {
    assert!(support::masking_gap(3) < 1e-10);
}

#[test]
fn iob_codec_round_trip_and_repair() {
    assert_eq!(support::iob_round_trip_failures(2000, 4), 0);
    assert_eq!(support::iob_repair_failures(2000, 5), 0);
}

#[test]
fn sgns_zero_loss_and_gradient() {
    for n in [0, 1, 5] {
        assert_eq!(support::sgns_zero_loss(n), (1 + n) as f64 * std::f64::consts::LN_2);
    }
    assert!(support::sgns_gradient_error(10, 6) < 1e-5);
}

#[test]
fn topic_clusters_are_separated() {
    let (intra, inter) = support::topic_cosines(7);
    assert!(intra > inter, "intra {intra} inter {inter}");
}

fn ln_sigmoid(x: f64) -> f64 {
    -(1.0 + (-x).exp()).ln()
}

/// Dense word2vec skip-gram with the trainer's sampling order, returning the
/// mean pair loss of the first epoch.
fn plain_skipgram_first_epoch(corpus: &[Vec<String>], cfg: &SgnsConfig) -> f64 {
    let vocab = Vocabulary::build(corpus, cfg.min_count);
    let (n, dim) = (vocab.len(), cfg.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bound = 0.5 / dim as f64;
    let mut input: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-bound..bound)).collect()).collect();
    let mut output = vec![vec![0.0; dim]; n];
    let total: u64 = vocab.counts.iter().sum();
    let keep: Vec<f64> = vocab.counts.iter().map(|&c| keep_probability(c, total, cfg.subsample)).collect();
    let sampler = NegativeSampler::new(&vocab.counts, 0.75);
    let work = (total * cfg.epochs as u64) as f64;
    let mut processed = 0u64;
    let (mut loss, mut pairs) = (0.0, 0usize);
    for sentence in corpus {
        let lr = cfg.learning_rate * (1.0 - processed as f64 / work).max(1e-4);
        let mut ids = Vec::new();
        for tok in sentence {
            if let Some(i) = vocab.get(tok) {
                processed += 1;
                if keep[i] >= 1.0 || rng.gen::<f64>() < keep[i] {
                    ids.push(i);
                }
            }
        }
        for pos in 0..ids.len() {
            let reach = rng.gen_range(1..=cfg.window);
            for ctx in pos.saturating_sub(reach)..=(pos + reach).min(ids.len() - 1) {
                if ctx == pos {
                    continue;
                }
                let target = ids[ctx];
                let negs: Vec<usize> = (0..cfg.negatives)
                    .map(|_| sampler.sample(&mut rng))
                    .filter(|&x| x != target)
                    .collect();
                let v = input[ids[pos]].clone();
                let mut d_v = vec![0.0; dim];
                let mut updates = Vec::new();
                for (row, label) in std::iter::once((target, 1.0)).chain(negs.iter().map(|&x| (x, 0.0))) {
                    let s = dot(&output[row], &v);
                    loss -= if label == 1.0 { ln_sigmoid(s) } else { ln_sigmoid(-s) };
                    let g = sigmoid(s) - label;
                    for d in 0..dim {
                        d_v[d] += g * output[row][d];
                    }
                    updates.push((row, g));
                }
                for (row, g) in updates {
                    for d in 0..dim {
                        output[row][d] -= lr * g * v[d];
                    }
                }
                for d in 0..dim {
                    input[ids[pos]][d] -= lr * d_v[d];
                }
                pairs += 1;
            }
        }
    }
    loss / pairs as f64
}

#[test]
fn disabled_subwords_reduce_to_plain_skipgram() {
    let (corpus, _) = omner::synthetic::topic_corpus(40, 3);
    let base = SgnsConfig {
        dim: 8,
        window: 2,
        negatives: 3,
        epochs: 2,
        min_count: 1,
        subsample: 0.05,
        seed: 5,
        ..Default::default()
    };
    let expected = plain_skipgram_first_epoch(&corpus, &base);
    for cfg in [
        SgnsConfig { buckets: 0, ..base.clone() },
        SgnsConfig { min_n: 4, max_n: 3, ..base.clone() },
    ] {
        let (wv, report) = train_subword_skipgram_with_report(&corpus, &cfg).unwrap();
        assert!(wv.subwords().is_none());
        let got = report.epoch_losses[0];
        assert!((got - expected).abs() <= 1e-12 * expected.abs(), "{got} vs {expected}");
    }
}
