//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on a usage error, 2 on a data or model error.

use std::collections::HashSet;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::builder::TypedValueParser;
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::compare::{compare_moe, format_table, train_kind};
use crate::config::Config;
use crate::corpus::{parse_paragraphs, Vocabulary};
use crate::dataset::{prepare, Dataset};
use crate::error::{Error, Result};
use crate::eval::{model_topic_words, perplexity, topic_coherence, CooccurrenceStats, COHERENCE_SIZES, DEFAULT_WINDOW};
use crate::generator::{format_generation, topic_mixture, Decoding};
use crate::model::Model;
use crate::ntm::format_topic_report;
use crate::synthetic::{generate as synth_corpus, SyntheticConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "tcnlm", version, about = "Topic-compositional neural language model")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct ConfigArgs {
    /// Config file, or a preset name (toy, small, large).
    #[arg(long, default_value = "toy")]
    config: String,
    /// Overrides one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Builds vocabularies and train/dev instance files from a text corpus.
    Preprocess {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Trains a model and writes a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Prints the perplexity of a checkpoint on a data split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "dev", value_parser = ["dev", "train"])]
        split: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Prints the top words of every topic.
    Topics {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
        top_k: u64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Scores topic coherence against a reference corpus.
    Coherence {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value_t = DEFAULT_WINDOW, value_parser = clap::value_parser!(u64).range(2..).map(|v| v as usize))]
        window: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generates sentences conditioned on a topic mixture.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        /// Comma-separated topic ids.
        #[arg(long, value_delimiter = ',')]
        topics: Vec<usize>,
        /// Comma-separated mixture weights, one per topic id.
        #[arg(long, value_delimiter = ',')]
        weights: Vec<f64>,
        #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..).map(|v| v as usize))]
        max_len: usize,
        /// Samples at this temperature instead of greedy decoding.
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..).map(|v| v as usize))]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Trains basic LSTM, naive MoE and TCNLM and prints their perplexities.
    CompareMoe {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Writes a synthetic multi-topic corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = SyntheticConfig::default().paragraphs)]
        paragraphs: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Runs with the process's stdout and stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// `argv[0]` is the program name.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_DATA
        }
    }
}

fn load_config(args: &ConfigArgs, seed: Option<u64>) -> Result<Config> {
    let mut cfg = Config::load(&args.config)?;
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{kv}' is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_checkpoint(path: &Path) -> Result<(Model, Vocabulary)> {
    let (model, vocab) = Model::load(path)?;
    let vocab = vocab.ok_or_else(|| Error::format("checkpoint", "no embedded vocabulary"))?;
    Ok((model, vocab))
}

fn same_vocab(a: &Vocabulary, b: &Vocabulary) -> Result<()> {
    if a.lm_tokens() != b.lm_tokens() || a.tm_tokens() != b.tm_tokens() {
        return Err(Error::Invalid("data vocabulary differs from the checkpoint's".into()));
    }
    Ok(())
}

fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match command {
        Command::Preprocess {
            input,
            out: dir,
            config,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            let data = prepare(&fs::read_to_string(&input)?, &cfg.prep)?;
            data.write_dir(&dir)?;
            writeln!(
                out,
                "lm_vocab {} tm_vocab {} train {} dev {}",
                data.vocab.lm_size(),
                data.vocab.tm_size(),
                data.train.len(),
                data.dev.len()
            )?;
        }
        Command::Train {
            data,
            config,
            out: ckpt,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            let data = Dataset::read_dir(&data)?;
            let mut failed = None;
            let (model, _) = train_kind(&data, &cfg, cfg.model.kind, |r| {
                if let Err(e) = writeln!(out, "{r}").and_then(|_| out.flush()) {
                    failed.get_or_insert(e);
                }
            })?;
            if let Some(e) = failed {
                return Err(e.into());
            }
            model.save(&ckpt, Some(&data.vocab))?;
        }
        Command::Eval { ckpt, data, split, .. } => {
            let (model, vocab) = load_checkpoint(&ckpt)?;
            let data = Dataset::read_dir(&data)?;
            same_vocab(&vocab, &data.vocab)?;
            let set = if split == "dev" { &data.dev } else { &data.train };
            writeln!(out, "ppl {}", perplexity(&model, set)?)?;
        }
        Command::Topics { ckpt, top_k, .. } => {
            let (model, vocab) = load_checkpoint(&ckpt)?;
            let topics = model_topic_words(&model, &vocab, top_k as usize)?;
            write!(out, "{}", format_topic_report(&topics))?;
        }
        Command::Coherence {
            ckpt,
            reference,
            window,
            ..
        } => {
            let (model, vocab) = load_checkpoint(&ckpt)?;
            let topics = model_topic_words(&model, &vocab, COHERENCE_SIZES[COHERENCE_SIZES.len() - 1])?;
            let docs: Vec<Vec<String>> = parse_paragraphs(&fs::read_to_string(&reference)?)
                .into_iter()
                .map(|p| p.concat())
                .collect();
            let keep: HashSet<String> = vocab.tm_tokens().iter().cloned().collect();
            let stats = CooccurrenceStats::build(&docs, window, Some(&keep))?;
            write!(out, "{}", topic_coherence(&topics, &stats)?.to_text())?;
        }
        Command::Generate {
            ckpt,
            topics,
            weights,
            max_len,
            temperature,
            count,
            seed,
        } => {
            let (model, vocab) = load_checkpoint(&ckpt)?;
            let t = if model.kind().has_topics() {
                if topics.is_empty() {
                    return Err(Error::Invalid(format!("{} model needs --topics", model.kind())));
                }
                let w = (!weights.is_empty()).then_some(weights.as_slice());
                Some(topic_mixture(&topics, w, model.spec.topics)?)
            } else if !topics.is_empty() {
                return Err(Error::Invalid(format!("{} model has no topics", model.kind())));
            } else {
                None
            };
            let base = seed.unwrap_or(0);
            for i in 0..count {
                let decoding = match temperature {
                    None => Decoding::Greedy,
                    Some(temperature) => Decoding::Sample {
                        temperature,
                        seed: base.wrapping_add(i as u64),
                    },
                };
                let s = model.generate(t.as_ref(), max_len, decoding)?;
                writeln!(out, "{}", format_generation(&topics, &s, &vocab))?;
            }
        }
        Command::CompareMoe { data, config, seed } => {
            let cfg = load_config(&config, seed)?;
            let data = Dataset::read_dir(&data)?;
            let rows = compare_moe(&data, &cfg, |kind, r| {
                let _ = writeln!(err, "{kind} {r}");
            })?;
            write!(out, "{}", format_table(&rows))?;
        }
        Command::Synth {
            out: path,
            paragraphs,
            seed,
        } => {
            let c = synth_corpus(&SyntheticConfig {
                paragraphs,
                seed: seed.unwrap_or(0),
                ..Default::default()
            })?;
            fs::write(path, c.text)?;
        }
    }
    Ok(())
}
