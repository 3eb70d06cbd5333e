//! Acceptance gate: one PASS/FAIL line per primary criterion, non-zero exit
//! if any fails. Run with `cargo test -p omner-app --test acceptance`.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use omner::embed::WordVectors;
use omner::metrics::{entity_f1, Granularity};
use omner::pipeline::{
    evaluate_model, run_ablation, split_dataset, train_ner, Checkpoint, EmbeddingSource, TrainConfig,
};
use omner::schema::{EntityType, Span};
use omner::synthetic::{char_cue_corpus, char_cue_template_words, lexicon_corpus};
use omner::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Gate {
    failed: Vec<&'static str>,
}

impl Gate {
    fn report(&mut self, name: &'static str, pass: bool, elapsed: Duration, detail: String) {
        println!(
            "{} {name:<22} {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
        if !pass {
            self.failed.push(name);
        }
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed())
}

fn crf_oracle(gate: &mut Gate) {
    let (s, dt) = timed(|| support::crf_oracle(1200, 2024));
    let pass = s.instances >= 1000
        && s.max_log_z_rel < 1e-10
        && s.max_marginal_err < 1e-10
        && s.max_score_rel < 1e-10
        && s.path_mismatches == 0
        && dt < Duration::from_secs(30);
    gate.report(
        "crf-oracle",
        pass,
        dt,
        format!(
            "instances={} (integer {}, with ties {}) logZ_rel={:.1e} marg_err={:.1e} score_rel={:.1e} path_mismatches={}",
            s.instances,
            s.integer_instances,
            s.tied_instances,
            s.max_log_z_rel,
            s.max_marginal_err,
            s.max_score_rel,
            s.path_mismatches
        ),
    );
}

fn gradients(gate: &mut Gate) {
    let ((report, blocks), dt) = timed(|| support::gradient_suite(20, 77));
    let covered = blocks.iter().all(|b| report.blocks.contains_key(b));
    let (worst, err) = report.worst().unwrap_or(("-", f64::NAN));
    let pass = covered && report.max_error() < 1e-4 && dt < Duration::from_secs(120);
    gate.report(
        "gradient-suite",
        pass,
        dt,
        format!("instances=20 blocks={} max_rel={err:.1e} (worst {worst})", blocks.len()),
    );
}

fn iob(gate: &mut Gate) {
    let ((rt, rep), dt) = timed(|| (support::iob_round_trip_failures(10_000, 1), support::iob_repair_failures(10_000, 2)));
    gate.report(
        "iob-codec",
        rt == 0 && rep == 0,
        dt,
        format!("round-trip failures={rt}/10000 repair failures={rep}/10000"),
    );
}

fn learnability(gate: &mut Gate, work: &Path) -> Option<(Checkpoint, Vec<omner::schema::LabeledSentence>)> {
    let t = Instant::now();
    let data = lexicon_corpus(600, 11);
    let cfg = TrainConfig {
        max_epochs: 30,
        ..TrainConfig::default()
    };
    let result = split_dataset(&data, cfg.split_policy(), cfg.seed).and_then(|(train, dev, test)| {
        let (ckpt, report) = train_ner(&train, &dev, &cfg)?;
        let test_f1 = evaluate_model(&ckpt.model, &test, Granularity::Entity)?.micro_f1();
        Ok((ckpt, report, test_f1, test, (train.len(), dev.len())))
    });
    let dt = t.elapsed();
    match result {
        Ok((ckpt, report, test_f1, test, (n_train, n_dev))) => {
            let pass = test_f1 >= 0.95 && report.best_epoch <= 30 && dt < Duration::from_secs(600);
            gate.report(
                "learnability",
                pass,
                dt,
                format!(
                    "split={n_train}/{n_dev}/{} test_micro_F1={test_f1:.4} best_dev_F1={:.4} best_epoch={} epochs_run={}",
                    test.len(),
                    report.best_dev_f1,
                    report.best_epoch,
                    report.epochs.len()
                ),
            );
            let _ = ckpt.save(work.join("lexicon.ckpt"));
            Some((ckpt, test))
        }
        Err(e) => {
            gate.report("learnability", false, dt, format!("error: {e}"));
            None
        }
    }
}

fn char_cue(gate: &mut Gate, work: &Path) {
    let t = Instant::now();
    let data = char_cue_corpus(600, 5);
    // Pretrained vectors know only the template words, so entity tokens fall
    // back to the unknown row and carry no identity at the word level.
    let words = char_cue_template_words();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = Matrix::from_vec(words.len(), 50, (0..words.len() * 50).map(|_| rng.gen_range(-0.5..0.5)).collect());
    let vectors_path = work.join("cue.vec");
    let saved = WordVectors::new(words, m)
        .map_err(|e| e.to_string())
        .and_then(|wv| wv.save_text(&vectors_path).map_err(|e| e.to_string()));
    let cfg = TrainConfig {
        max_epochs: 30,
        pretrained_vectors: Some(vectors_path),
        ..TrainConfig::default()
    };
    let result = saved.and_then(|_| run_ablation(&data, &cfg).map_err(|e| e.to_string()));
    let dt = t.elapsed();
    match result {
        Ok(rep) => {
            let f1 = |emb, cnn| rep.row(emb, cnn).map_or(f64::NAN, |r| r.test.micro_f1());
            let (pn, pc) = (
                f1(EmbeddingSource::LoadedPretrained, false),
                f1(EmbeddingSource::LoadedPretrained, true),
            );
            let (sn, sc) = (
                f1(EmbeddingSource::TrainedSubword, false),
                f1(EmbeddingSource::TrainedSubword, true),
            );
            gate.report(
                "char-cue-direction",
                pc > pn && sc > sn,
                dt,
                format!("pretrained: CNN {pc:.4} > no-char {pn:.4}; subword: CNN {sc:.4} > no-char {sn:.4}"),
            );
            for line in rep.to_tsv().lines() {
                println!("     | {line}");
            }
        }
        Err(e) => gate.report("char-cue-direction", false, dt, format!("error: {e}")),
    }
}

fn masking(gate: &mut Gate) {
    let (gap, dt) = timed(|| (0..5).map(support::masking_gap).fold(0.0, f64::max));
    gate.report("masking-equivalence", gap < 1e-10, dt, format!("max |padded - unpadded|={gap:.1e} over 5 batches"));
}

fn checkpoint(gate: &mut Gate, work: &Path, trained: Option<&(Checkpoint, Vec<omner::schema::LabeledSentence>)>) {
    let t = Instant::now();
    let Some((ckpt, test)) = trained else {
        gate.report("checkpoint-round-trip", false, t.elapsed(), "no trained model (learnability failed)".into());
        return;
    };
    let path = work.join("round-trip.ckpt");
    let loaded = ckpt.save(&path).and_then(|_| Checkpoint::load(&path));
    let Ok(loaded) = loaded else {
        gate.report("checkpoint-round-trip", false, t.elapsed(), "save/load failed".into());
        return;
    };
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let vocab: Vec<&String> = test.iter().flat_map(|s| &s.tokens).collect();
    let (mut tag_mismatch, mut max_diff, mut spans) = (0, 0.0f64, 0);
    for i in 0..100 {
        let tokens: Vec<String> = if i < test.len().min(50) {
            test[i].tokens.clone()
        } else {
            (0..rng.gen_range(1..15))
                .map(|_| match rng.gen_range(0..5) {
                    0 => format!("oov{}", rng.gen_range(0..1000)),
                    _ => vocab[rng.gen_range(0..vocab.len())].clone(),
                })
                .collect()
        };
        let (a, sa) = ckpt.model.decode(&tokens);
        let (b, sb) = loaded.model.decode(&tokens);
        tag_mismatch += (a != b) as usize;
        max_diff = max_diff.max((sa - sb).abs());
        let (pa, pb) = (ckpt.model.predict_sentence(&tokens), loaded.model.predict_sentence(&tokens));
        tag_mismatch += (pa != pb) as usize;
        spans += pa.len();
    }
    gate.report(
        "checkpoint-round-trip",
        tag_mismatch == 0 && max_diff <= 1e-12,
        t.elapsed(),
        format!("sentences=100 spans={spans} prediction_mismatches={tag_mismatch} max_score_diff={max_diff:.1e}"),
    );
}

fn metrics(gate: &mut Gate) {
    let (res, dt) = timed(|| {
        use EntityType::*;
        let one = |v: Vec<Span>| vec![("s0".to_string(), v)];
        let gold = one(vec![Span::new(0, 2, Pro), Span::new(3, 4, Cmt)]);
        let pred = one(vec![Span::new(0, 2, Pro), Span::new(3, 4, Mol)]);
        let hand = entity_f1(&gold, &pred).ok()?.micro;
        let perfect = entity_f1(&gold, &gold).ok()?.micro.f1;
        let empty = entity_f1(&gold, &one(vec![])).ok()?.micro.f1;
        Some(((hand.precision, hand.recall, hand.f1), perfect, empty))
    });
    match res {
        Some((hand, perfect, empty)) => gate.report(
            "metric-fixtures",
            hand == (0.5, 0.5, 0.5) && perfect == 1.0 && empty == 0.0,
            dt,
            format!("hand-counted P/R/F1={hand:?} perfect={perfect} empty={empty}"),
        ),
        None => gate.report("metric-fixtures", false, dt, "entity_f1 returned an error".into()),
    }
}

fn sgns(gate: &mut Gate) {
    let ((exact, fd, (intra, inter)), dt) = timed(|| {
        let exact = (0..=10).all(|n| support::sgns_zero_loss(n) == (1 + n) as f64 * std::f64::consts::LN_2);
        (exact, support::sgns_gradient_error(20, 9), support::topic_cosines(7))
    });
    gate.report(
        "sgns",
        exact && fd < 1e-5 && intra > inter,
        dt,
        format!("zero-loss exact for n=0..10: {exact}; fd_rel={fd:.1e}; cosine intra={intra:.3} > inter={inter:.3}"),
    );
}

fn run_cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_omner"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("`omner {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

/// synth → ingest → split → train-embed → train → evaluate → export-kb.
/// Returns the KB export and the evaluation table.
fn pipeline_once(dir: &Path) -> Result<(Vec<u8>, String), String> {
    let f = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let seed = ["--seed", "7"];
    let with_seed = |args: &[&str]| -> Vec<String> { seed.iter().chain(args).map(|s| s.to_string()).collect() };
    let run = |args: Vec<String>| {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        run_cli(&refs)
    };
    run(with_seed(&["synth", "--sentences", "400", "--corpus-out", &f("corpus.jsonl"), "--conll-out", &f("all.conll")]))?;
    run(with_seed(&["ingest", "--input", &f("corpus.jsonl"), "--store", &f("store.jsonl")]))?;
    run(with_seed(&["split", "--data", &f("all.conll"), "--out-dir", &f("split")]))?;
    run(with_seed(&["train-embed", "--input", &f("corpus.jsonl"), "--output", &f("vectors.bin")]))?;
    run(with_seed(&[
        "train",
        "--train",
        &f("split/train.conll"),
        "--dev",
        &f("split/dev.conll"),
        "--subword-vectors",
        &f("vectors.bin"),
        "--max-epochs",
        "8",
        "--output",
        &f("model.ckpt"),
    ]))?;
    let table = run(with_seed(&["evaluate", "--model", &f("model.ckpt"), "--data", &f("split/test.conll")]))?;
    run(with_seed(&["export-kb", "--model", &f("model.ckpt"), "--store", &f("store.jsonl"), "--output", &f("kb.jsonl")]))?;
    let kb = std::fs::read(dir.join("kb.jsonl")).map_err(|e| e.to_string())?;
    Ok((kb, String::from_utf8_lossy(&table).into_owned()))
}

fn end_to_end(gate: &mut Gate, work: &Path) {
    let t = Instant::now();
    let (a, b) = (work.join("e2e-1"), work.join("e2e-2"));
    let result = std::fs::create_dir_all(&a)
        .and_then(|_| std::fs::create_dir_all(&b))
        .map_err(|e| e.to_string())
        .and_then(|_| Ok((pipeline_once(&a)?, pipeline_once(&b)?)));
    let dt = t.elapsed();
    match result {
        Ok(((kb1, table), (kb2, _))) => {
            let micro = table.lines().find(|l| l.starts_with("micro")).unwrap_or("micro ?").to_string();
            let records = kb1.iter().filter(|&&c| c == b'\n').count();
            gate.report(
                "end-to-end-cli",
                !kb1.is_empty() && kb1 == kb2,
                dt,
                format!(
                    "kb records={records} byte-identical={} test {}",
                    kb1 == kb2,
                    micro.replace('\t', " ")
                ),
            );
        }
        Err(e) => gate.report("end-to-end-cli", false, dt, format!("error: {e}")),
    }
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let mut gate = Gate { failed: Vec::new() };
    crf_oracle(&mut gate);
    gradients(&mut gate);
    iob(&mut gate);
    let trained = learnability(&mut gate, work.path());
    char_cue(&mut gate, work.path());
    masking(&mut gate);
    checkpoint(&mut gate, work.path(), trained.as_ref());
    metrics(&mut gate);
    sgns(&mut gate);
    end_to_end(&mut gate, work.path());
    if gate.failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: FAILED {:?}", gate.failed);
        std::process::exit(1);
    }
}
