use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use omner::corpus::{ingest_corpus, read_jsonl, tokenize, CorpusFormat, Document, Sentence, SentenceSplitter};
use omner::embed::train_subword_skipgram;
use omner::metrics::Granularity;
use omner::pipeline::{
    evaluate_model, run_ablation, split_dataset, train_ner_with_progress, Checkpoint, NerModel, TrainConfig,
};
use omner::schema::{load_conll, save_conll, write_conll};
use omner::synthetic;
use omner_app::config::{self, EmbedOverrides, TrainOverrides};
use omner_app::kb::{extract_kb, write_jsonl};
use omner_app::service::{self, AppState};
use omner_app::store::{ensure_unlocked, Store};
use serde_json::json;

#[derive(Parser)]
#[command(name = "omner", version, about = "Named entity recognition for organic-materials literature")]
struct Cli {
    /// Seed for every random choice (overrides config files).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum VectorFormat {
    Container,
    Text,
}

#[derive(Clone, Copy, ValueEnum)]
enum TextFormat {
    Jsonl,
    Conll,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Lexicon,
    CharCue,
}

#[derive(Subcommand)]
enum Command {
    /// Read a JSONL corpus into a new annotation store and print counts.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "jsonl")]
        format: CorpusFormat,
        /// Abbreviations that never end a sentence, one per line.
        #[arg(long)]
        guards: Option<PathBuf>,
    },
    /// Print the tokens of a text, one per line (surface, norm, byte range).
    Tokenize {
        #[arg(long, conflicts_with = "input")]
        text: Option<String>,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Shuffle a CoNLL dataset and write train/dev/test files.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Train subword skip-gram vectors on a corpus.
    TrainEmbed {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "jsonl")]
        input_format: TextFormat,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "container")]
        format: VectorFormat,
        /// Config file; its [embed] table is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: EmbedOverrides,
    },
    /// Train the tagger and write a checkpoint.
    Train {
        #[arg(long, requires = "dev", conflicts_with = "data")]
        train: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Full dataset, split by the configured fractions (test part unused).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        /// Where to write the JSON training report.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Score a checkpoint on a CoNLL dataset; prints a TSV table.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "entity")]
        granularity: Granularity,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train the four embedding × char-feature configurations and report test F1.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Where to write the full JSON report.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Predict spans for a text or every sentence of a corpus (JSONL output).
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, conflicts_with = "input")]
        text: Option<String>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Extract deduplicated entity records from a corpus or store.
    ExportKb {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, conflicts_with = "store")]
        input: Option<PathBuf>,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write annotated sentences of a store as CoNLL.
    ExportConll {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        annotator: Option<String>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print store statistics (types, statuses, pairwise agreement) as JSON.
    StoreStats {
        #[arg(long)]
        store: PathBuf,
    },
    /// Run the annotation HTTP service.
    Serve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Generate a synthetic labeled corpus (JSONL abstracts plus CoNLL).
    Synth {
        #[arg(long, value_enum, default_value = "lexicon")]
        kind: SynthKind,
        #[arg(long, default_value_t = 600)]
        sentences: usize,
        #[arg(long)]
        corpus_out: PathBuf,
        #[arg(long)]
        conll_out: PathBuf,
    },
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn splitter(guards: Option<&Path>) -> Result<SentenceSplitter> {
    match guards {
        Some(p) => SentenceSplitter::from_guard_file(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(SentenceSplitter::default()),
    }
}

fn read_corpus(path: &Path) -> Result<Vec<Sentence>> {
    let docs: Vec<Document> =
        read_jsonl(fs::File::open(path).with_context(|| format!("opening {}", path.display()))?)?;
    Ok(omner::corpus::corpus_sentences(&docs, &SentenceSplitter::default()))
}

fn load_model(path: &Path) -> Result<NerModel> {
    Ok(Checkpoint::load(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?
        .model)
}

fn text_sentences(text: &str) -> Vec<Sentence> {
    let doc = Document {
        doc_id: "text".into(),
        title: None,
        abstract_text: text.to_string(),
    };
    omner::corpus::document_sentences(&doc, &SentenceSplitter::default())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let seed = cli.seed;
    match cli.command {
        Command::Ingest {
            input,
            store,
            format,
            guards,
        } => {
            ensure_unlocked(&store)?;
            let splitter = splitter(guards.as_deref())?;
            let (docs, stats) = ingest_corpus(&input, format, &splitter)?;
            let sentences = omner::corpus::corpus_sentences(&docs, &splitter);
            Store::create(&store, sentences)?;
            println!("{}", serde_json::to_string(&stats)?);
        }
        Command::Tokenize { text, input } => {
            let text = match (text, input) {
                (Some(t), _) => t,
                (None, Some(p)) => fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?,
                (None, None) => io::read_to_string(io::stdin())?,
            };
            let mut out = output(None)?;
            for t in tokenize(&text) {
                writeln!(out, "{}\t{}\t{}\t{}", t.surface, t.norm, t.start, t.end)?;
            }
        }
        Command::Split {
            data,
            out_dir,
            config,
            overrides,
        } => {
            let cfg = config::resolve(config.as_deref(), &overrides, seed)?;
            let dataset = load_conll(&data)?;
            let (train, dev, test) = split_dataset(&dataset, cfg.split_policy(), cfg.seed)?;
            fs::create_dir_all(&out_dir)?;
            for (name, part) in [("train", &train), ("dev", &dev), ("test", &test)] {
                save_conll(out_dir.join(format!("{name}.conll")), part)?;
            }
            println!("{}", json!({"train": train.len(), "dev": dev.len(), "test": test.len()}));
        }
        Command::TrainEmbed {
            input,
            input_format,
            output: out_path,
            format,
            config,
            overrides,
        } => {
            let mut cfg = config::load_config(config.as_deref())?.embed;
            overrides.apply(&mut cfg);
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let corpus: Vec<Vec<String>> = match input_format {
                TextFormat::Jsonl => read_corpus(&input)?.iter().map(Sentence::norms).collect(),
                TextFormat::Conll => load_conll(&input)?.into_iter().map(|s| s.tokens).collect(),
            };
            let vectors = train_subword_skipgram(&corpus, &cfg)?;
            match format {
                VectorFormat::Container => vectors.save(&out_path)?,
                VectorFormat::Text => vectors.save_text(&out_path)?,
            }
            eprintln!("wrote {} vectors of dimension {}", vectors.len(), vectors.dim());
        }
        Command::Train {
            train,
            dev,
            data,
            output: out_path,
            report,
            config,
            overrides,
        } => {
            let cfg = config::resolve(config.as_deref(), &overrides, seed)?;
            let (train, dev) = match (train, dev, data) {
                (Some(t), Some(d), _) => (load_conll(&t)?, load_conll(&d)?),
                (None, None, Some(all)) => {
                    let (t, d, _) = split_dataset(&load_conll(&all)?, cfg.split_policy(), cfg.seed)?;
                    (t, d)
                }
                _ => bail!("pass either --train and --dev, or --data"),
            };
            let (ckpt, rep) = train_ner_with_progress(&train, &dev, &cfg, |e| {
                eprintln!(
                    "epoch {:>3}  train nll {:>9.4}  dev micro-F1 {:.4}",
                    e.epoch,
                    e.train_nll,
                    e.dev.micro_f1()
                );
            })?;
            ckpt.save(&out_path)?;
            eprintln!(
                "best epoch {} (dev micro-F1 {:.4}), {:.1}s",
                rep.best_epoch, rep.best_dev_f1, rep.seconds
            );
            if let Some(p) = report {
                fs::write(&p, serde_json::to_string_pretty(&rep)?)?;
            }
        }
        Command::Evaluate {
            model,
            data,
            granularity,
            output: out_path,
        } => {
            let model = load_model(&model)?;
            let metrics = evaluate_model(&model, &load_conll(&data)?, granularity)?;
            output(out_path.as_deref())?.write_all(metrics.to_tsv().as_bytes())?;
        }
        Command::Ablate {
            data,
            output: out_path,
            report,
            config,
            overrides,
        } => {
            let cfg: TrainConfig = config::resolve(config.as_deref(), &overrides, seed)?;
            let rep = run_ablation(&load_conll(&data)?, &cfg)?;
            output(out_path.as_deref())?.write_all(rep.to_tsv().as_bytes())?;
            if let Some(p) = report {
                fs::write(&p, serde_json::to_string_pretty(&rep)?)?;
            }
        }
        Command::Predict {
            model,
            text,
            input,
            output: out_path,
        } => {
            let model = load_model(&model)?;
            let sentences = match (text, input) {
                (Some(t), _) => text_sentences(&t),
                (None, Some(p)) => read_corpus(&p)?,
                (None, None) => text_sentences(&io::read_to_string(io::stdin())?),
            };
            let mut out = output(out_path.as_deref())?;
            for s in &sentences {
                let tokens: Vec<&str> = s.tokens.iter().map(|t| t.surface.as_str()).collect();
                let spans = model.predict_sentence(&s.norms());
                serde_json::to_writer(&mut out, &json!({"sent_id": s.sent_id, "tokens": tokens, "spans": spans}))?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
        }
        Command::ExportKb {
            model,
            input,
            store,
            output: out_path,
        } => {
            let model = load_model(&model)?;
            let sentences = match (input, store) {
                (Some(p), _) => read_corpus(&p)?,
                (None, Some(s)) => {
                    ensure_unlocked(&s)?;
                    Store::open(&s)?.sentences().to_vec()
                }
                (None, None) => bail!("pass --input or --store"),
            };
            let records = extract_kb(&model, &sentences);
            write_jsonl(output(out_path.as_deref())?, &records)?;
        }
        Command::ExportConll {
            store,
            annotator,
            output: out_path,
        } => {
            ensure_unlocked(&store)?;
            let data = Store::open(&store)?.export(annotator.as_deref())?;
            let mut out = output(out_path.as_deref())?;
            write_conll(&mut out, &data)?;
            out.flush()?;
        }
        Command::StoreStats { store } => {
            let stats = Store::open(&store)?.stats()?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Serve { store, model, addr } => {
            let store = Store::open(&store)?;
            let _lock = store.lock()?;
            let model = model.as_deref().map(load_model).transpose()?;
            let state = AppState::new(store, model);
            tokio::runtime::Runtime::new()?.block_on(service::serve(state, &addr))?;
        }
        Command::Synth {
            kind,
            sentences,
            corpus_out,
            conll_out,
        } => {
            let seed = seed.unwrap_or(1);
            let data = match kind {
                SynthKind::Lexicon => synthetic::lexicon_corpus(sentences, seed),
                SynthKind::CharCue => synthetic::char_cue_corpus(sentences, seed),
            };
            let mut out = BufWriter::new(fs::File::create(&corpus_out)?);
            for doc in synthetic::to_documents(&data) {
                serde_json::to_writer(&mut out, &json!({"id": doc.doc_id, "abstract": doc.abstract_text}))?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
            save_conll(&conll_out, &data)?;
        }
    }
    Ok(())
}
