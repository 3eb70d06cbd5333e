//! Reference implementations and instance generators shared by the
//! integration tests and the acceptance gate. Everything here is written
//! independently of the library code it checks.
#![allow(dead_code)]

use omner::crf::{self, CrfParams, DecodeOptions};
use omner::embed::WordVectors;
use omner::gradcheck::{relative_error, GradCheckReport, DEFAULT_STEP};
use omner::net::NetConfig;
use omner::pipeline::{Architecture, EncodedSentence, NerModel};
use omner::schema::{is_well_formed, iob_to_spans, spans_to_iob, EntityType, Span, Tag, NUM_TAGS};
use omner::tensor::Matrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------- CRF

fn path_score(e: &Matrix, p: &CrfParams, path: &[usize]) -> f64 {
    let mut s = p.start[path[0]] + p.stop[path[path.len() - 1]];
    for (t, &y) in path.iter().enumerate() {
        s += e.get(t, y);
        if t > 0 {
            s += p.transitions.get(path[t - 1], y);
        }
    }
    s
}

/// Every tag sequence of length `len` over `k` tags, in lexicographic order.
fn all_paths(k: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..k).map(move |y| {
                    let mut q = p.clone();
                    q.push(y);
                    q
                })
            })
            .collect();
    }
    out
}

pub struct Enumeration {
    pub log_z: f64,
    pub marginals: Matrix,
    pub best_path: Vec<usize>,
    pub best_score: f64,
}

/// Exhaustive log-partition, marginals and argmax. Among tied best paths the
/// one that is smallest when compared from the last position backwards wins,
/// which is what "smallest index at the final tag and at every back-pointer"
/// selects.
pub fn enumerate(e: &Matrix, p: &CrfParams) -> Enumeration {
    let (len, k) = (e.rows(), p.num_tags());
    let paths = all_paths(k, len);
    let scores: Vec<f64> = paths.iter().map(|q| path_score(e, p, q)).collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    let mut marginals = Matrix::zeros(len, k);
    for (q, s) in paths.iter().zip(&scores) {
        let w = (s - log_z).exp();
        for (t, &y) in q.iter().enumerate() {
            marginals.add_at(t, y, w);
        }
    }
    let best = paths
        .iter()
        .zip(&scores)
        .filter(|(_, &s)| s == max)
        .map(|(q, _)| q)
        .min_by(|a, b| a.iter().rev().cmp(b.iter().rev()))
        .expect("at least one path")
        .clone();
    Enumeration {
        log_z,
        marginals,
        best_path: best,
        best_score: max,
    }
}

/// Random emissions and CRF parameters. Integer instances draw from a small
/// range so exact ties are common.
pub fn random_crf_instance(rng: &mut ChaCha8Rng, k: usize, len: usize, integer: bool) -> (Matrix, CrfParams) {
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| {
                if integer {
                    rng.gen_range(-2..=2) as f64
                } else {
                    rng.gen_range(-3.0..3.0)
                }
            })
            .collect()
    };
    let e = Matrix::from_vec(len, k, draw(len * k));
    let transitions = Matrix::from_vec(k, k, draw(k * k));
    let start = draw(k);
    let stop = draw(k);
    (e, CrfParams { transitions, start, stop })
}

#[derive(Debug, Default)]
pub struct CrfOracleSummary {
    pub instances: usize,
    pub integer_instances: usize,
    pub max_log_z_rel: f64,
    pub max_marginal_err: f64,
    pub max_score_rel: f64,
    pub path_mismatches: usize,
    pub tied_instances: usize,
}

/// Compares the library CRF against enumeration on `n` random instances,
/// cycling K over {2,3,4} and L over 1..=6; every other instance is integral.
pub fn crf_oracle(n: usize, seed: u64) -> CrfOracleSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = CrfOracleSummary::default();
    for i in 0..n {
        let k = 2 + i % 3;
        let len = 1 + (i / 3) % 6;
        let integer = i % 2 == 0;
        let (e, p) = random_crf_instance(&mut rng, k, len, integer);
        let oracle = enumerate(&e, &p);
        let log_z = crf::log_partition(&e, &p);
        out.max_log_z_rel = out.max_log_z_rel.max(relative_error(log_z, oracle.log_z));
        let m = crf::marginals(&e, &p);
        for (a, b) in m.data().iter().zip(oracle.marginals.data()) {
            out.max_marginal_err = out.max_marginal_err.max((a - b).abs());
        }
        let (path, score) = crf::viterbi_decode(&e, &p, DecodeOptions::unconstrained());
        if path != oracle.best_path {
            out.path_mismatches += 1;
        }
        out.max_score_rel = out.max_score_rel.max(relative_error(score, oracle.best_score));
        let ties = all_paths(k, len)
            .iter()
            .filter(|q| path_score(&e, &p, q) == oracle.best_score)
            .count();
        if ties > 1 {
            out.tied_instances += 1;
        }
        out.instances += 1;
        out.integer_instances += integer as usize;
    }
    out
}

// ---------------------------------------------------------------- tagger

pub const WORDS: [&str; 6] = ["the", "film", "of", "polymer", "was", "annealed"];

/// A small model with every block present: char table, conv, both LSTMs,
/// projection, CRF, and a trainable word table.
pub fn small_model(rng: &mut ChaCha8Rng, hidden: usize, filters: usize) -> NerModel {
    let words: Vec<String> = WORDS.iter().map(|s| s.to_string()).collect();
    let dim = 4;
    let m = Matrix::from_vec(words.len(), dim, (0..words.len() * dim).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let wv = WordVectors::new(words, m).expect("vectors");
    let arch = Architecture {
        net: NetConfig {
            char_dim: 3,
            char_window: 3,
            char_filters: filters,
            hidden,
        },
        char_cnn: true,
        fine_tune_words: true,
    };
    NerModel::init(arch, &wv, &["thefilmofpolymerwasannealedxq"], rng)
}

fn random_token(rng: &mut ChaCha8Rng) -> String {
    if rng.gen_bool(0.8) {
        WORDS[rng.gen_range(0..WORDS.len())].to_string()
    } else {
        // out-of-vocabulary, sometimes with characters the model never saw
        (0..rng.gen_range(1..5)).map(|_| ['a', 'x', 'q', 'z', 'é'][rng.gen_range(0..5)]).collect()
    }
}

/// Random well-formed tags for `len` tokens.
pub fn random_tags(rng: &mut ChaCha8Rng, len: usize) -> Vec<Tag> {
    let mut spans = Vec::new();
    let mut pos = 0;
    while pos < len {
        if rng.gen_bool(0.4) {
            let end = rng.gen_range(pos + 1..=len.min(pos + 3));
            spans.push(Span::new(pos, end, EntityType::ALL[rng.gen_range(0..4)]));
            pos = end;
        } else {
            pos += 1;
        }
    }
    spans_to_iob(len, &spans).expect("valid spans")
}

pub fn random_sentence(rng: &mut ChaCha8Rng, model: &NerModel, len: usize) -> (Vec<String>, EncodedSentence) {
    let tokens: Vec<String> = (0..len).map(|_| random_token(rng)).collect();
    let tags = random_tags(rng, len);
    let s = model.encode(&tokens, &tags);
    (tokens, s)
}

fn batch_loss(model: &NerModel, batch: &[&EncodedSentence]) -> f64 {
    model
        .batch_loss_and_gradient::<ChaCha8Rng>(batch, None)
        .expect("loss")
        .0
}

/// Central-difference check of every parameter of the summed batch loss.
pub fn gradient_check(model: &mut NerModel, batch: &[&EncodedSentence]) -> GradCheckReport {
    let (_, grad) = model.batch_loss_and_gradient::<ChaCha8Rng>(batch, None).expect("gradient");
    let analytic: Vec<(String, Vec<f64>)> = grad.blocks().iter().map(|b| (b.name.clone(), b.data.to_vec())).collect();
    let mut report = GradCheckReport::default();
    for (bi, (name, block)) in analytic.iter().enumerate() {
        for (idx, &a) in block.iter().enumerate() {
            let saved = model.params.blocks_mut()[bi][idx];
            model.params.blocks_mut()[bi][idx] = saved + DEFAULT_STEP;
            let plus = batch_loss(model, batch);
            model.params.blocks_mut()[bi][idx] = saved - DEFAULT_STEP;
            let minus = batch_loss(model, batch);
            model.params.blocks_mut()[bi][idx] = saved;
            report.record(name, a, (plus - minus) / (2.0 * DEFAULT_STEP));
        }
    }
    report
}

/// Runs the gradient check on `n` random models, each with a two-sentence
/// batch of at most six tokens per sentence.
pub fn gradient_suite(n: usize, seed: u64) -> (GradCheckReport, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = GradCheckReport::default();
    let mut blocks = Vec::new();
    for _ in 0..n {
        let mut model = small_model(&mut rng, 3, 2);
        let la = rng.gen_range(1..=6);
        let lb = rng.gen_range(1..=6);
        let (_, a) = random_sentence(&mut rng, &model, la);
        let (_, b) = random_sentence(&mut rng, &model, lb);
        if blocks.is_empty() {
            blocks = model.params.blocks().iter().map(|b| b.name.clone()).collect();
        }
        let r = gradient_check(&mut model, &[&a, &b]);
        all.merge(&r);
    }
    (all, blocks)
}

/// Largest |padded − unpadded| over the per-sentence losses and gradients of
/// a batch with lengths 1, 3 and 7.
pub fn masking_gap(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = small_model(&mut rng, 4, 3);
    let batch: Vec<EncodedSentence> = [1, 3, 7].iter().map(|&l| random_sentence(&mut rng, &model, l).1).collect();
    let refs: Vec<&EncodedSentence> = batch.iter().collect();
    let (padded_loss, padded_grad) = model.batch_loss_and_gradient::<ChaCha8Rng>(&refs, None).unwrap();
    let mut loss = 0.0;
    let mut grad = model.params.zeros_like();
    for s in &batch {
        loss += model.forward_backward::<ChaCha8Rng>(s, s.len(), None, Some(&mut grad)).unwrap();
    }
    let mut gap = (padded_loss - loss).abs();
    for (a, b) in padded_grad.blocks().iter().zip(grad.blocks().iter()) {
        for (x, y) in a.data.iter().zip(b.data) {
            gap = gap.max((x - y).abs());
        }
    }
    gap
}

// ---------------------------------------------------------------- IOB


/// Failures of encode→decode over `n` random valid span sets.
pub fn iob_round_trip_failures(n: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .filter(|_| {
            let len = rng.gen_range(0..25);
            let mut spans = Vec::new();
            let mut pos = rng.gen_range(0..3);
            while pos < len {
                let end = rng.gen_range(pos + 1..=len.min(pos + 4));
                spans.push(Span::new(pos, end, EntityType::ALL[rng.gen_range(0..4)]));
                pos = end + rng.gen_range(0..3);
            }
            match spans_to_iob(len, &spans) {
                Ok(tags) => !is_well_formed(&tags) || iob_to_spans(&tags) != spans,
                Err(_) => true,
            }
        })
        .count()
}

/// Failures of decode→re-encode over `n` arbitrary tag sequences: the repair
/// must never fail, must produce a well-formed sequence, and must be the
/// identity on already well-formed input.
pub fn iob_repair_failures(n: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .filter(|_| {
            let len = rng.gen_range(0..25);
            let raw: Vec<Tag> = (0..len)
                .map(|_| Tag::from_index(rng.gen_range(0..NUM_TAGS)).unwrap())
                .collect();
            match spans_to_iob(raw.len(), &iob_to_spans(&raw)) {
                Ok(fixed) => !is_well_formed(&fixed) || (is_well_formed(&raw) && fixed != raw),
                Err(_) => true,
            }
        })
        .count()
}

// ---------------------------------------------------------------- SGNS

use omner::embed::{sgns_step, train_subword_skipgram, InputRow, SgnsConfig, SgnsParams, SubwordTable};
use omner::gradcheck::central_difference;
use omner::tensor::cosine;

/// Loss of one positive and `n` negatives with every vector at zero.
pub fn sgns_zero_loss(n: usize) -> f64 {
    let params = SgnsParams {
        input: Matrix::zeros(n + 2, 5),
        output: Matrix::zeros(n + 2, 5),
        subwords: None,
    };
    let negs: Vec<usize> = (0..n).map(|i| 2 + i).collect();
    sgns_step(&[InputRow::Word(0)], 1, &negs, &params).expect("step").0
}

/// Max relative error of the SGNS pair gradient over `n` random instances
/// mixing word and bucket rows.
pub fn sgns_gradient_error(n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (words, dim, buckets) = (6, 4, 5);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let mut m = || Matrix::from_vec(words, dim, (0..words * dim).map(|_| rng.gen_range(-0.5..0.5)).collect());
        let (input, output) = (m(), m());
        let mut table = SubwordTable::new(3, 4, buckets, dim).expect("table");
        for b in 0..buckets {
            for v in table.row_mut(b) {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
        let params = SgnsParams {
            input,
            output,
            subwords: Some(table),
        };
        let center = [
            InputRow::Word(rng.gen_range(0..words)),
            InputRow::Bucket(rng.gen_range(0..buckets)),
            InputRow::Bucket(rng.gen_range(0..buckets)),
        ];
        let context = rng.gen_range(0..words);
        let negs: Vec<usize> = (0..3).map(|_| rng.gen_range(0..words)).collect();
        let loss = |p: &SgnsParams| sgns_step(&center, context, &negs, p).expect("step").0;
        let (_, grad) = sgns_step(&center, context, &negs, &params).expect("step");
        for (&row, g) in &grad.input {
            for d in 0..dim {
                let mut p = params.clone();
                let mut x = match row {
                    InputRow::Word(i) => p.input.row(i).to_vec(),
                    InputRow::Bucket(b) => p.subwords.as_ref().unwrap().row(b).unwrap().to_vec(),
                };
                let fd = central_difference(&mut x, d, DEFAULT_STEP, |x| {
                    match row {
                        InputRow::Word(i) => p.input.row_mut(i).copy_from_slice(x),
                        InputRow::Bucket(b) => p.subwords.as_mut().unwrap().row_mut(b).copy_from_slice(x),
                    }
                    loss(&p)
                });
                worst = worst.max(relative_error(g[d], fd));
            }
        }
        for (&row, g) in &grad.output {
            for d in 0..dim {
                let mut p = params.clone();
                let mut x = p.output.row(row).to_vec();
                let fd = central_difference(&mut x, d, DEFAULT_STEP, |x| {
                    p.output.row_mut(row).copy_from_slice(x);
                    loss(&p)
                });
                worst = worst.max(relative_error(g[d], fd));
            }
        }
    }
    worst
}

/// Mean cosine of word pairs within a topic and across topics after
/// training on two disjoint topic clusters of 50 sentences each.
pub fn topic_cosines(seed: u64) -> (f64, f64) {
    let (corpus, mut topics) = omner::synthetic::topic_corpus(50 * 3, seed);
    // sentences cycle through the topics; keep the first two
    let corpus: Vec<Vec<String>> = corpus.into_iter().enumerate().filter(|(i, _)| i % 3 != 2).map(|(_, s)| s).collect();
    topics.truncate(2);
    let cfg = SgnsConfig {
        dim: 20,
        window: 3,
        epochs: 10,
        min_count: 1,
        subsample: 1.0,
        buckets: 0,
        seed,
        ..Default::default()
    };
    let wv = train_subword_skipgram(&corpus, &cfg).expect("training");
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0, 0.0, 0);
    let all: Vec<(usize, &String)> = topics.iter().enumerate().flat_map(|(t, ws)| ws.iter().map(move |w| (t, w))).collect();
    for (i, &(ta, a)) in all.iter().enumerate() {
        for &(tb, b) in &all[i + 1..] {
            let c = cosine(&wv.lookup(a), &wv.lookup(b));
            if ta == tb {
                intra += c;
                n_intra += 1;
            } else {
                inter += c;
                n_inter += 1;
            }
        }
    }
    (intra / n_intra as f64, inter / n_inter as f64)
}
